//! 8N1 asynchronous serial link at microsecond resolution, and the ASCII
//! record framing carried over it.
//!
//! Bit `i` of a frame starting at `t0` occupies
//! `[t0 + floor(i * 1e6 / baud), t0 + floor((i + 1) * 1e6 / baud))`, so bit
//! boundaries are recomputed from the frame origin and rounding never
//! accumulates across a frame. The receiver samples at the middle of each bit
//! measured from the falling edge of the start bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_chain::LogicLevel;
use crate::soc::{
    buffer_capacity, efficiency_bp, length_cm, MachineRating, PickValue, ShiftId, ShiftRecord,
    MAX_RPM, MAX_SHIFT_HOURS,
};
use crate::Micros;

pub const MIN_BAUD: u32 = 300;
pub const MAX_BAUD: u32 = 115_200;
pub const DEFAULT_BAUD: u32 = 9_600;
/// Start + 8 data + stop.
pub const BITS_PER_FRAME: u32 = 10;

const US_PER_S: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("baud rate {0} outside {MIN_BAUD}..={MAX_BAUD}")]
pub struct BaudOutOfRange(pub u32);

/// Line settings. The format is fixed at 8 data bits, no parity, 1 stop bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UartConfig {
    pub baud: u32,
}

impl Default for UartConfig {
    fn default() -> Self {
        UartConfig { baud: DEFAULT_BAUD }
    }
}

impl UartConfig {
    pub fn new(baud: u32) -> Result<Self, BaudOutOfRange> {
        let cfg = UartConfig { baud };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BaudOutOfRange> {
        if (MIN_BAUD..=MAX_BAUD).contains(&self.baud) {
            Ok(())
        } else {
            Err(BaudOutOfRange(self.baud))
        }
    }

    /// Offset of the start of bit `i` from the frame origin.
    pub fn bit_boundary(&self, i: u32) -> Micros {
        u64::from(i) * US_PER_S / u64::from(self.baud)
    }

    pub fn frame_duration(&self) -> Micros {
        self.bit_boundary(BITS_PER_FRAME)
    }

    /// Offset of the mid-bit sample of bit `i` from the start edge:
    /// `floor((i + 0.5) * 1e6 / baud)`.
    pub fn sample_offset(&self, i: u32) -> Micros {
        (2 * u64::from(i) + 1) * US_PER_S / (2 * u64::from(self.baud))
    }
}

/// Line levels of one 8N1 frame: start, 8 data bits LSB first, stop.
pub fn byte_to_bits(b: u8) -> [LogicLevel; BITS_PER_FRAME as usize] {
    let mut bits = [LogicLevel::High; BITS_PER_FRAME as usize];
    bits[0] = LogicLevel::Low;
    for i in 0..8 {
        bits[i + 1] = LogicLevel::from_bit(b >> i & 1 == 1);
    }
    bits
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitstreamError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("transition at {at} us is not after {previous} us")]
    NonMonotonic { previous: Micros, at: Micros },
    #[error("transition at {at} us does not change the line level")]
    NotAlternating { at: Micros },
}

/// Level changes of the serial line. The line idles High from time 0, so
/// only changes are stored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UartBitstream {
    pub transitions: Vec<(Micros, LogicLevel)>,
}

impl UartBitstream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_transitions(transitions: Vec<(Micros, LogicLevel)>) -> Result<Self, BitstreamError> {
        let stream = UartBitstream { transitions };
        stream.validate()?;
        Ok(stream)
    }

    pub fn validate(&self) -> Result<(), BitstreamError> {
        let mut level = LogicLevel::High;
        let mut previous: Option<Micros> = None;
        for &(at, next) in &self.transitions {
            if let Some(previous) = previous {
                if at <= previous {
                    return Err(BitstreamError::NonMonotonic { previous, at });
                }
            }
            if next == level {
                return Err(BitstreamError::NotAlternating { at });
            }
            level = next;
            previous = Some(at);
        }
        Ok(())
    }

    pub fn is_idle_at_end(&self) -> bool {
        self.final_level() == LogicLevel::High
    }

    pub fn final_level(&self) -> LogicLevel {
        self.transitions.last().map_or(LogicLevel::High, |&(_, l)| l)
    }

    pub fn level_at(&self, t: Micros) -> LogicLevel {
        let n = self.transitions.partition_point(|&(at, _)| at <= t);
        if n == 0 {
            LogicLevel::High
        } else {
            self.transitions[n - 1].1
        }
    }

    /// Drives the line to `level` from time `at` onwards. Callers keep `at`
    /// increasing.
    fn drive(&mut self, at: Micros, level: LogicLevel) {
        if self.final_level() != level {
            debug_assert!(self.transitions.last().is_none_or(|&(t, _)| t < at));
            self.transitions.push((at, level));
        }
    }

    /// One `<time_us> <0|1>` line per transition.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(at, level) in &self.transitions {
            out.push_str(&format!("{} {}\n", at, u8::from(level.is_high())));
        }
        out
    }
}

impl FromStr for UartBitstream {
    type Err = BitstreamError;

    fn from_str(text: &str) -> Result<Self, BitstreamError> {
        let mut transitions = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: &str| BitstreamError::Parse {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let mut parts = line.split_whitespace();
            let (Some(t), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err("expected `<time_us> <0|1>`"));
            };
            let at: Micros = t.parse().map_err(|_| parse_err("bad time"))?;
            let level = match v {
                "0" => LogicLevel::Low,
                "1" => LogicLevel::High,
                _ => return Err(parse_err("level must be 0 or 1")),
            };
            transitions.push((at, level));
        }
        UartBitstream::from_transitions(transitions)
    }
}

/// Transmitter that appends frames to a line, queueing behind any frame
/// still on the wire.
#[derive(Debug, Clone)]
pub struct UartTx {
    cfg: UartConfig,
    stream: UartBitstream,
    busy_until: Micros,
}

impl UartTx {
    pub fn new(cfg: UartConfig) -> Self {
        UartTx {
            cfg,
            stream: UartBitstream::new(),
            busy_until: 0,
        }
    }

    /// Sends `bytes` back to back starting no earlier than `at`. Returns the
    /// time the first start bit went out.
    pub fn send(&mut self, bytes: &[u8], at: Micros) -> Micros {
        let start = at.max(self.busy_until);
        let mut frame_t = start;
        for &b in bytes {
            for (i, level) in byte_to_bits(b).into_iter().enumerate() {
                self.stream.drive(frame_t + self.cfg.bit_boundary(i as u32), level);
            }
            frame_t += self.cfg.frame_duration();
        }
        self.busy_until = frame_t;
        start
    }

    pub fn busy_until(&self) -> Micros {
        self.busy_until
    }

    pub fn stream(&self) -> &UartBitstream {
        &self.stream
    }

    pub fn into_stream(self) -> UartBitstream {
        self.stream
    }
}

pub fn tx_bytes(bytes: &[u8], cfg: UartConfig, start_t: Micros) -> UartBitstream {
    let mut tx = UartTx::new(cfg);
    tx.send(bytes, start_t);
    tx.into_stream()
}

/// Stop bit sampled low.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramingError {
    /// Falling edge of the offending start bit.
    pub at: Micros,
}

impl fmt::Display for FramingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "framing error at {} us", self.at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RxOutput {
    pub bytes: Vec<u8>,
    /// Start-edge time of each entry in `bytes`.
    pub byte_times: Vec<Micros>,
    pub errors: Vec<FramingError>,
}

/// Decodes every frame on the line.
///
/// A start bit that is no longer low at its mid-bit sample is treated as a
/// glitch and skipped. A low stop bit is reported as a framing error and the
/// receiver waits for the line to return high before hunting again.
pub fn rx_bytes(stream: &UartBitstream, cfg: UartConfig) -> RxOutput {
    let mut out = RxOutput::default();
    let transitions = &stream.transitions;
    let mut cursor = 0;
    while let Some(offset) = transitions[cursor..]
        .iter()
        .position(|&(_, l)| l == LogicLevel::Low)
    {
        let idx = cursor + offset;
        let start = transitions[idx].0;
        cursor = idx + 1;
        if stream.level_at(start + cfg.sample_offset(0)).is_high() {
            continue;
        }
        let mut byte = 0u8;
        for bit in 0..8 {
            if stream.level_at(start + cfg.sample_offset(bit + 1)).is_high() {
                byte |= 1 << bit;
            }
        }
        let stop_sample = start + cfg.sample_offset(BITS_PER_FRAME - 1);
        let after_stop = transitions.partition_point(|&(at, _)| at <= stop_sample);
        if stream.level_at(stop_sample).is_high() {
            out.bytes.push(byte);
            out.byte_times.push(start);
            cursor = cursor.max(after_stop);
        } else {
            out.errors.push(FramingError { at: start });
            // wait for idle: the next High transition after the stop sample
            match transitions[after_stop.max(cursor)..]
                .iter()
                .position(|&(_, l)| l == LogicLevel::High)
            {
                Some(p) => cursor = after_stop.max(cursor) + p + 1,
                None => break,
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ChecksumMismatch,
    MalformedFrame,
    FieldOutOfRange,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::ChecksumMismatch => "checksum mismatch",
            RejectReason::MalformedFrame => "malformed frame",
            RejectReason::FieldOutOfRange => "field out of range",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("checksum mismatch (computed {computed:02X}, frame says {claimed:02X}): {line:?}")]
    ChecksumMismatch {
        line: String,
        computed: u8,
        claimed: u8,
    },
    #[error("malformed frame ({reason}): {line:?}")]
    MalformedFrame { line: String, reason: &'static str },
    #[error("field `{field}` out of range: {line:?}")]
    FieldOutOfRange { line: String, field: &'static str },
}

impl FrameError {
    pub fn reason(&self) -> RejectReason {
        match self {
            FrameError::ChecksumMismatch { .. } => RejectReason::ChecksumMismatch,
            FrameError::MalformedFrame { .. } => RejectReason::MalformedFrame,
            FrameError::FieldOutOfRange { .. } => RejectReason::FieldOutOfRange,
        }
    }

    pub fn line(&self) -> &str {
        match self {
            FrameError::ChecksumMismatch { line, .. }
            | FrameError::MalformedFrame { line, .. }
            | FrameError::FieldOutOfRange { line, .. } => line,
        }
    }
}

pub const FRAME_TAG: &str = "LOOM";

pub fn xor_checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

/// `LOOM,<shift>,<count>,<eff_bp>,<len_cm>,<pick>,<rpm>,<hours>*<XX>\n`
pub fn frame_record(r: &ShiftRecord) -> Vec<u8> {
    let payload = format!(
        "{FRAME_TAG},{},{},{},{},{},{},{}",
        r.shift_id, r.count, r.efficiency.0, r.length.0, r.pick.0, r.rated_rpm.0, r.hours
    );
    let cs = xor_checksum(payload.as_bytes());
    format!("{payload}*{cs:02X}\n").into_bytes()
}

fn hex_nibble(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

/// Canonical unsigned decimal: digits only, no leading zeros.
fn parse_decimal(field: &str) -> Option<u64> {
    let canonical = !field.is_empty()
        && field.len() <= 12
        && field.bytes().all(|b| b.is_ascii_digit())
        && (field == "0" || !field.starts_with('0'));
    if canonical {
        field.parse().ok()
    } else {
        None
    }
}

/// Parses one frame, with or without its trailing newline.
pub fn parse_frame(bytes: &[u8]) -> Result<ShiftRecord, FrameError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let line = || String::from_utf8_lossy(body).into_owned();
    let malformed = |reason| FrameError::MalformedFrame {
        line: line(),
        reason,
    };

    let star = body
        .iter()
        .position(|&b| b == b'*')
        .ok_or_else(|| malformed("missing `*`"))?;
    let (payload, tail) = (&body[..star], &body[star + 1..]);
    if payload.iter().any(|&b| !(0x20..0x7F).contains(&b)) {
        return Err(malformed("non-printable payload byte"));
    }
    let claimed = match tail {
        [hi, lo] => match (hex_nibble(*hi), hex_nibble(*lo)) {
            (Some(h), Some(l)) => h << 4 | l,
            _ => return Err(malformed("checksum is not two uppercase hex digits")),
        },
        _ => return Err(malformed("checksum is not two uppercase hex digits")),
    };
    let computed = xor_checksum(payload);
    if computed != claimed {
        return Err(FrameError::ChecksumMismatch {
            line: line(),
            computed,
            claimed,
        });
    }

    // printable ASCII was checked above
    let payload = std::str::from_utf8(payload).expect("ascii payload");
    let fields: Vec<&str> = payload.split(',').collect();
    let [tag, shift, count, eff, len, pick, rpm, hours] = fields[..] else {
        return Err(malformed("expected 8 comma-separated fields"));
    };
    if tag != FRAME_TAG {
        return Err(malformed("unknown frame tag"));
    }
    let shift_id: ShiftId = shift.parse().map_err(|_| malformed("shift must be A, B or C"))?;
    let num = |s| parse_decimal(s).ok_or_else(|| malformed("field is not a canonical decimal"));
    let (count, eff, len, pick, rpm, hours) =
        (num(count)?, num(eff)?, num(len)?, num(pick)?, num(rpm)?, num(hours)?);

    let out_of_range = |field| FrameError::FieldOutOfRange {
        line: line(),
        field,
    };
    if !(1..=u64::from(MAX_SHIFT_HOURS)).contains(&hours) {
        return Err(out_of_range("hours"));
    }
    if !(1..=u64::from(MAX_RPM)).contains(&rpm) {
        return Err(out_of_range("rpm"));
    }
    if !(1..=999).contains(&pick) {
        return Err(out_of_range("pick"));
    }
    if count > u64::from(buffer_capacity(hours as u8)) {
        return Err(out_of_range("count"));
    }
    let (count, pick, rpm, hours) = (count as u32, PickValue(pick as u16), rpm as u32, hours as u8);
    let expected_eff = efficiency_bp(count, rpm, u32::from(hours)).expect("rpm and hours checked");
    if eff != u64::from(expected_eff.0) {
        return Err(out_of_range("eff_bp"));
    }
    let expected_len = length_cm(count, pick).expect("pick checked");
    if len != u64::from(expected_len.0) {
        return Err(out_of_range("len_cm"));
    }
    Ok(ShiftRecord {
        shift_id,
        count,
        efficiency: expected_eff,
        length: expected_len,
        pick,
        rated_rpm: MachineRating(rpm as u16),
        hours,
    })
}
