//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num::{BigInt, BigRational, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use loomsoc::host::{self, ingest, receive, report, write_run};
use loomsoc::signal_chain::{EdgeKind, SensorConfig};
use loomsoc::sim::{expected_rotations, pulse_train, run, Action, Scenario, ScenarioEvent, Segment};
use loomsoc::soc::{
    bcd_to_binary, MachineRating, MonitorEvent, MonitorState, PickValue, ShiftConfig, ShiftId,
    ShiftRecord, ThumbwheelState,
};
use loomsoc::uart::{frame_record, parse_frame, rx_bytes, tx_bytes, FrameError, UartConfig};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("{what} took {elapsed:?}, limit {limit:?}"),
    )
}

fn rational(s: &str) -> BigRational {
    // decimal literal -> exact rational
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits: BigInt = format!("{int}{frac}").parse().unwrap();
    BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32))
}

fn int(v: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

fn floor_u64(r: BigRational) -> u64 {
    r.floor().to_integer().to_u64().unwrap()
}

fn base_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let n_shifts = rng.gen_range(1..=3);
    Scenario {
        rated_rpm: MachineRating(rng.gen_range(1..=999)),
        shifts: ShiftId::ALL[..n_shifts]
            .iter()
            .map(|&s| ShiftConfig::new(s, rng.gen_range(8..=12)).unwrap())
            .collect(),
        thumbwheel: ThumbwheelState::from_value(rng.gen_range(1..=999)),
        uart: UartConfig::new([300, 1200, 9600, 57_600, 115_200][rng.gen_range(0..5)]).unwrap(),
        sensor: SensorConfig::default(),
        segments: Vec::new(),
        events: Vec::new(),
        seed: rng.gen(),
    }
}

/// Noise-free scenario with random segments, shift changes and button presses.
fn fuzzed_scenario(rng: &mut ChaCha8Rng, max_segment_s: f64) -> Scenario {
    let mut s = base_scenario(rng);
    let n = rng.gen_range(1..=5);
    for _ in 0..n {
        let duration_s = (rng.gen_range(0.001..max_segment_s) * 1000.0).round() / 1000.0;
        let actual_rpm = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(1..=999) };
        s.segments.push(Segment {
            duration_s: duration_s.max(0.001),
            actual_rpm,
            noise_amp_mt: 0.0,
        });
    }
    let total = s.total_duration_us().unwrap() as f64 / 1e6;
    let mut times: Vec<f64> = (0..rng.gen_range(0..8))
        .map(|_| (rng.gen_range(0.0..total) * 1000.0).floor() / 1000.0)
        .collect();
    times.sort_by(f64::total_cmp);
    for t_s in times {
        let action = match rng.gen_range(0..4) {
            0 => Action::SelectShift(s.shifts[rng.gen_range(0..s.shifts.len())].shift_id),
            1 => Action::SetThumbwheel(ThumbwheelState::from_value(rng.gen_range(1..=999))),
            _ => Action::EfficiencyButton,
        };
        s.events.push(ScenarioEvent { t_s, action });
    }
    s.events.push(ScenarioEvent {
        t_s: total,
        action: Action::EfficiencyButton,
    });
    s
}

// 1
fn buffer_capacity() -> Outcome {
    let start = Instant::now();
    let twelve = ShiftConfig::new(ShiftId::A, 12).unwrap();
    let mut m = MonitorState::new(
        MachineRating(999),
        &[
            twelve,
            ShiftConfig::new(ShiftId::B, 12).unwrap(),
            ShiftConfig::new(ShiftId::C, 12).unwrap(),
        ],
        ThumbwheelState::from_value(40),
    )
    .unwrap();
    check(m.buffers.iter().all(|b| b.capacity == 719_280), "capacity at 12 h is not 719280")?;

    let mut t = 0;
    let mut max_seen = 0;
    // saturate the active buffer first, then keep hammering with random
    // shift changes so every buffer sees edges past the cap
    for _ in 0..750_000u32 {
        t += 1;
        m.apply(MonitorEvent::RotationEdge(t)).map_err(|e| e.to_string())?;
    }
    max_seen = max_seen.max(m.buffers.iter().map(|b| b.count).max().unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..200_000u32 {
        t += 1;
        let ev = if i % 10_000 == 9_999 {
            MonitorEvent::SelectShift(ShiftId::ALL[rng.gen_range(0..3)], t)
        } else {
            MonitorEvent::RotationEdge(t)
        };
        m.apply(ev).map_err(|e| e.to_string())?;
        max_seen = max_seen.max(m.buffers.iter().map(|b| b.count).max().unwrap());
    }
    m.apply(MonitorEvent::SelectShift(ShiftId::A, t + 1)).map_err(|e| e.to_string())?;
    let active = m.buffer(m.active_shift).unwrap();
    check(max_seen <= 719_280, format!("a buffer reached {max_seen}"))?;
    check(active.count == 719_280, format!("flooded buffer holds {}", active.count))?;
    within(start.elapsed(), Duration::from_secs(1), "capacity check")?;
    Ok(format!(
        "capacity 719280, max count under 950k-event flood {max_seen}, {:?}",
        start.elapsed()
    ))
}

// 2
fn worked_formula() -> Outcome {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/worked_shift.json"))
        .map_err(|e| e.to_string())?;
    let scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;

    let running_s = rational("23040");
    let count_oracle = floor_u64(running_s * int(200) / int(60));
    let eff_oracle = floor_u64(int(count_oracle) / (int(200) * int(60) * int(8)) * int(100) * int(100));
    let len_oracle = floor_u64(int(count_oracle) / (int(50) * rational("39.37")) * int(100));
    check(
        (count_oracle, eff_oracle, len_oracle) == (76_800, 8000, 3901),
        format!("oracle gave {count_oracle}, {eff_oracle}, {len_oracle}"),
    )?;

    let start = Instant::now();
    let out = run(&scenario).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let [r] = out.records[..] else {
        return Err(format!("expected one record, got {}", out.records.len()));
    };
    check(
        (u64::from(r.count), u64::from(r.efficiency.0), u64::from(r.length.0))
            == (count_oracle, eff_oracle, len_oracle),
        format!("run gave {r:?}"),
    )?;
    within(elapsed, Duration::from_secs(5), "8 h run")?;
    Ok(format!(
        "count {} eff {} bp len {} cm (oracle exact), run {elapsed:?}",
        r.count, r.efficiency.0, r.length.0
    ))
}

// 3
fn numeral_one_and_zero() -> Outcome {
    let cfg = UartConfig::new(9600).unwrap();
    let out = rx_bytes(&tx_bytes(b"10", cfg, 0), cfg);
    check(out.errors.is_empty(), format!("framing errors {:?}", out.errors))?;
    check(out.bytes == [0x31, 0x30], format!("decoded {:02X?}", out.bytes))?;
    Ok("decoded 0x31 0x30".to_string())
}

// 4
fn uart_loopback() -> Outcome {
    let start = Instant::now();
    let cfg = UartConfig::new(9600).unwrap();
    for b in 0..=255u8 {
        let out = rx_bytes(&tx_bytes(&[b], cfg, 0), cfg);
        check(out.bytes == [b] && out.errors.is_empty(), format!("byte {b:#04x} at 9600"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut frames = 0;
    for baud in [300, 9600, 115_200] {
        let cfg = UartConfig::new(baud).unwrap();
        for _ in 0..1000 {
            let len = rng.gen_range(2..=16);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let t0 = rng.gen_range(0..10_000_000);
            let out = rx_bytes(&tx_bytes(&bytes, cfg, t0), cfg);
            check(
                out.bytes == bytes && out.errors.is_empty(),
                format!("multi-byte frame at {baud} baud: sent {bytes:02X?} got {:02X?}", out.bytes),
            )?;
            frames += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10), "loopback")?;
    Ok(format!("256 bytes + {frames} multi-byte frames, 0 failures, {:?}", start.elapsed()))
}

// 5
fn counter_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0u64;
    for i in 0..200 {
        let s = fuzzed_scenario(&mut rng, 600.0);
        let out = run(&s).map_err(|e| e.to_string())?;
        let expected = expected_rotations(&s.segments);
        let total = out.total_count();
        let diff = total.abs_diff(expected);
        worst = worst.max(diff);
        check(
            diff <= s.segments.len() as u64,
            format!("scenario {i}: count {total} vs oracle {expected} over {} segments", s.segments.len()),
        )?;
    }
    within(start.elapsed(), Duration::from_secs(30), "counter fidelity")?;
    Ok(format!("200 scenarios, worst |count - oracle| = {worst}, {:?}", start.elapsed()))
}

// 6
fn hysteresis_immunity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total_edges = 0;
    for i in 0..100 {
        let release = rng.gen_range(0.5..3.0);
        let operate = release + rng.gen_range(0.2..3.0);
        let mut quiet = base_scenario(&mut rng);
        quiet.sensor = SensorConfig::new(operate, release).unwrap();
        for _ in 0..rng.gen_range(1..=3) {
            quiet.segments.push(Segment {
                duration_s: rng.gen_range(0.5..20.0),
                actual_rpm: rng.gen_range(0..=999),
                noise_amp_mt: 0.0,
            });
        }
        let margin = quiet.sensor.hysteresis_mt() / 2.0;
        let mut noisy = quiet.clone();
        for seg in &mut noisy.segments {
            seg.noise_amp_mt = margin * rng.gen_range(0.01..0.999);
        }
        noisy.validate().map_err(|e| e.to_string())?;
        let a: Vec<_> = pulse_train(&quiet).map_err(|e| e.to_string())?.collect();
        let b: Vec<_> = pulse_train(&noisy).map_err(|e| e.to_string())?.collect();
        let rising = |v: &[loomsoc::signal_chain::Edge]| v.iter().filter(|e| e.kind == EdgeKind::Rising).count();
        check(
            a == b,
            format!(
                "scenario {i}: {} edges quiet vs {} noisy; first difference {:?}",
                rising(&a),
                rising(&b),
                a.iter().zip(&b).find(|(x, y)| x != y).map_or(format!("lengths {} vs {}", a.len(), b.len()), |(x, y)| format!("{x:?} vs {y:?}"))
            ),
        )?;
        total_edges += rising(&a);
    }
    Ok(format!("100 noisy scenarios, {total_edges} rising edges, all identical to noise-free"))
}

// 7
fn wire_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut emitted = 0;
    let mut fuzzed_frames = Vec::new();
    for i in 0..60 {
        let s = fuzzed_scenario(&mut rng, 120.0);
        let out = run(&s).map_err(|e| e.to_string())?;
        let log = receive(&out, &s);
        check(log.rejects.is_empty(), format!("scenario {i}: rejects {:?}", log.rejects))?;
        check(log.records() == out.records, format!("scenario {i}: records differ"))?;
        check(
            report(&log.records()) == report(&out.records),
            format!("scenario {i}: report differs"),
        )?;
        emitted += out.records.len();
        fuzzed_frames.extend(out.records.iter().map(frame_record));
    }

    let representative = frame_record(
        &ShiftRecord::compute(ShiftId::A, 76_800, PickValue(50), MachineRating(200), 8).unwrap(),
    );
    let star = representative.iter().position(|&b| b == b'*').unwrap();
    let mut exhaustive = 0;
    for i in 0..representative.len() {
        for bit in 0..8 {
            let mut bad = representative.clone();
            bad[i] ^= 1 << bit;
            let res = parse_frame(&bad);
            check(res.is_err(), format!("flip byte {i} bit {bit} accepted"))?;
            if i < star && (0x20..0x7F).contains(&bad[i]) && bad[i] != b'*' {
                check(
                    matches!(res, Err(FrameError::ChecksumMismatch { .. })),
                    format!("flip byte {i} bit {bit} not caught by checksum: {res:?}"),
                )?;
            }
            let mut log = ingest(&bad);
            log.finish();
            check(log.entries.is_empty() && !log.rejects.is_empty(), format!("ingest kept flip {i}/{bit}"))?;
            exhaustive += 1;
        }
    }

    check(!fuzzed_frames.is_empty(), "no fuzzed frames")?;
    let mut random = 0;
    for _ in 0..500 {
        let mut frame = fuzzed_frames[rng.gen_range(0..fuzzed_frames.len())].clone();
        let i = rng.gen_range(0..frame.len());
        frame[i] ^= 1 << rng.gen_range(0..8);
        check(parse_frame(&frame).is_err(), format!("random flip at byte {i} accepted"))?;
        random += 1;
    }
    Ok(format!(
        "60 runs, {emitted} records round-tripped; {exhaustive} exhaustive + {random} random flips rejected"
    ))
}

// 8
fn exhaustive_bcd() -> Outcome {
    for n in 0..=999u16 {
        let got = bcd_to_binary(ThumbwheelState::from_value(n)).map_err(|e| e.to_string())?;
        check(got == PickValue(n), format!("{n} -> {got:?}"))?;
    }
    let mut rejected = 0;
    for pos in 0..3 {
        for bad in 10..=15u8 {
            let mut w = ThumbwheelState::new(5, 5, 5);
            w.wheels[pos] = bad;
            check(bcd_to_binary(w).is_err(), format!("nibble {bad:#x} at {pos} accepted"))?;
            rejected += 1;
        }
    }
    Ok(format!("1000 values round-trip, {rejected} invalid nibbles rejected"))
}

// 9
fn determinism() -> Outcome {
    let text = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/three_shifts_noisy.json"))
        .map_err(|e| e.to_string())?;
    let scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut digests = Vec::new();
    for dir in &dirs {
        let out = run(&scenario).map_err(|e| e.to_string())?;
        let mut files = write_run(&out, &scenario, dir.path()).map_err(|e| e.to_string())?;
        files.sort();
        let mut per_run = Vec::new();
        for f in files {
            let bytes = fs::read(&f).map_err(|e| e.to_string())?;
            per_run.push((f.file_name().unwrap().to_owned(), Sha256::digest(&bytes)));
        }
        digests.push(per_run);
    }
    check(digests[0].len() == 4, "expected four output files")?;
    check(digests[0] == digests[1], "output hashes differ between runs")?;
    let checks = host::verify(&scenario).map_err(|e| e.to_string())?;
    check(checks.iter().all(|c| c.passed), format!("{checks:?}"))?;
    Ok(format!(
        "4 files, identical SHA-256 across runs (records.jsonl {:x})",
        digests[0].iter().find(|(n, _)| n == "records.jsonl").unwrap().1
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("1 buffer capacity 719280", buffer_capacity),
        ("2 worked formula 76800/8000/3901", worked_formula),
        ("3 numeral 1 and 0 over UART", numeral_one_and_zero),
        ("4 UART loopback", uart_loopback),
        ("5 counter fidelity", counter_fidelity),
        ("6 hysteresis immunity", hysteresis_immunity),
        ("7 end-to-end wire fidelity", wire_fidelity),
        ("8 exhaustive BCD", exhaustive_bcd),
        ("9 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 9 criteria failed");
        ExitCode::FAILURE
    }
}
