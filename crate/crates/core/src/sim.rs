//! Event-driven virtual-time run of the whole chip.
//!
//! Time jumps from one interesting instant to the next (field changes, noise
//! updates, operator events, display timeouts); nothing ever sleeps. Runs are
//! deterministic: the only randomness is sensor noise drawn from a ChaCha
//! stream seeded by the scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sevenseg::{render, SegmentFrame};
use crate::signal_chain::{
    condition, sensor_step, Edge, EdgeDetector, EdgeKind, SensorConfig, SensorState, SignalError,
};
use crate::soc::{
    bcd_to_binary, ConfigError, DisplayMode, MachineRating, MonitorEvent, MonitorState,
    RotationBuffer, ShiftConfig, ShiftId, ShiftRecord, ThumbwheelState, MAX_RPM,
};
use crate::uart::{BaudOutOfRange, UartBitstream, UartConfig, UartTx};
use crate::Micros;

const US_PER_MINUTE: u64 = 60_000_000;
/// Interval between noise updates while a segment is noisy.
pub const NOISE_STEP_US: Micros = 1_000;
/// Longest scenario accepted, about 11.5 days.
const MAX_SCENARIO_US: Micros = 1_000_000_000_000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sensor: {0}")]
    Sensor(#[from] SignalError),
    #[error("uart: {0}")]
    Uart(#[from] BaudOutOfRange),
    #[error("segment {index}: {reason}")]
    Segment { index: usize, reason: String },
    #[error("event {index}: {reason}")]
    Event { index: usize, reason: String },
}

/// One stretch of constant shaft speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub duration_s: f64,
    /// 0 = machine stopped.
    pub actual_rpm: u32,
    #[serde(rename = "noise_amp_mT", default)]
    pub noise_amp_mt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    SelectShift(ShiftId),
    EfficiencyButton,
    SetThumbwheel(ThumbwheelState),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioEvent {
    pub t_s: f64,
    pub action: Action,
}

/// Declarative input of a run, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub rated_rpm: MachineRating,
    pub shifts: Vec<ShiftConfig>,
    pub thumbwheel: ThumbwheelState,
    #[serde(default)]
    pub uart: UartConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    pub segments: Vec<Segment>,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
    #[serde(default)]
    pub seed: u64,
}

/// A segment placed on the time line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpan {
    pub start: Micros,
    pub end: Micros,
    pub rpm: u32,
    pub noise_amp_mt: f64,
}

fn seconds_to_us(s: f64) -> Option<Micros> {
    if !s.is_finite() || s < 0.0 {
        return None;
    }
    let us = (s * 1e6).round();
    (us <= MAX_SCENARIO_US as f64).then_some(us as Micros)
}

/// Lays segments end to end from time 0. Durations are rounded to the
/// nearest microsecond.
pub fn segment_spans(segments: &[Segment]) -> Result<Vec<SegmentSpan>, ScenarioError> {
    let mut spans = Vec::with_capacity(segments.len());
    let mut t = 0;
    for (index, seg) in segments.iter().enumerate() {
        let bad = |reason: &str| ScenarioError::Segment {
            index,
            reason: reason.to_string(),
        };
        let duration = seconds_to_us(seg.duration_s).ok_or_else(|| bad("duration is not a valid time"))?;
        if duration == 0 {
            return Err(bad("duration must be positive"));
        }
        let end = t + duration;
        if end > MAX_SCENARIO_US {
            return Err(bad("scenario too long"));
        }
        spans.push(SegmentSpan {
            start: t,
            end,
            rpm: seg.actual_rpm,
            noise_amp_mt: seg.noise_amp_mt,
        });
        t = end;
    }
    Ok(spans)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario = serde_json::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn total_duration_us(&self) -> Result<Micros, ScenarioError> {
        Ok(segment_spans(&self.segments)?.last().map_or(0, |s| s.end))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        MachineRating::new(u32::from(self.rated_rpm.0))?;
        self.sensor.validate()?;
        self.uart.validate()?;
        bcd_to_binary(self.thumbwheel).map_err(ConfigError::from)?;
        MonitorState::new(self.rated_rpm, &self.shifts, self.thumbwheel)?;

        let margin = self.sensor.hysteresis_mt() / 2.0;
        for (index, seg) in self.segments.iter().enumerate() {
            let bad = |reason: String| ScenarioError::Segment { index, reason };
            if seg.actual_rpm > MAX_RPM {
                return Err(bad(format!("actual_rpm {} above {MAX_RPM}", seg.actual_rpm)));
            }
            if !(seg.noise_amp_mt.is_finite() && seg.noise_amp_mt >= 0.0 && seg.noise_amp_mt < margin) {
                return Err(bad(format!(
                    "noise_amp_mT {} must be in [0, {margin})",
                    seg.noise_amp_mt
                )));
            }
        }
        let total = self.total_duration_us()?;

        let mut previous = 0;
        for (index, ev) in self.events.iter().enumerate() {
            let bad = |reason: String| ScenarioError::Event { index, reason };
            let t = seconds_to_us(ev.t_s).ok_or_else(|| bad(format!("t_s {} is not a valid time", ev.t_s)))?;
            if t > total {
                return Err(bad(format!("t_s {} is past the end of the scenario", ev.t_s)));
            }
            if t < previous {
                return Err(bad("events must be in time order".to_string()));
            }
            previous = t;
            if let Action::SelectShift(shift) = ev.action {
                if !self.shifts.iter().any(|s| s.shift_id == shift) {
                    return Err(bad(format!("shift {shift} is not configured")));
                }
            }
        }
        Ok(())
    }
}

/// `sum floor(duration_s * rpm / 60)` over segments.
pub fn expected_rotations(segments: &[Segment]) -> u64 {
    segments
        .iter()
        .filter_map(|s| seconds_to_us(s.duration_s).map(|d| d * u64::from(s.actual_rpm) / US_PER_MINUTE))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub at: Micros,
    pub field_mt: f64,
}

/// Field seen by the Hall switch, sampled only where it can change.
///
/// Revolution `k` of a segment begins at `start + floor(k * 60e6 / rpm)`; the
/// magnet sits over the sensor for the first tenth of the revolution. Idle
/// field sits half a hysteresis window below the release point and the magnet
/// peak half a window above the operate point, so noise below half the window
/// never keeps the switch from operating or releasing on time.
#[derive(Debug, Clone)]
pub struct PulseTrain {
    spans: Vec<SegmentSpan>,
    baseline_mt: f64,
    peak_mt: f64,
    rng: ChaCha8Rng,
    seg: usize,
    /// Next revolution index in the current segment.
    rev: u64,
    /// Pending end of the current dwell.
    dwell_end: Option<Micros>,
    next_noise: Option<Micros>,
    magnet: bool,
    noise_mt: f64,
    started_segment: bool,
}

impl PulseTrain {
    pub fn new(spans: Vec<SegmentSpan>, sensor: SensorConfig, seed: u64) -> Self {
        let half = sensor.hysteresis_mt() / 2.0;
        PulseTrain {
            spans,
            baseline_mt: sensor.release_mt - half,
            peak_mt: sensor.operate_mt + half,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seg: 0,
            rev: 0,
            dwell_end: None,
            next_noise: None,
            magnet: false,
            noise_mt: 0.0,
            started_segment: false,
        }
    }

    fn revolution_start(span: &SegmentSpan, k: u64) -> Option<Micros> {
        if span.rpm == 0 {
            return None;
        }
        let t = span.start + k * US_PER_MINUTE / u64::from(span.rpm);
        (t < span.end).then_some(t)
    }

    fn dwell(span: &SegmentSpan) -> Micros {
        (US_PER_MINUTE / u64::from(span.rpm) / 10).max(1)
    }

    fn sample(&self, at: Micros) -> FieldSample {
        let ideal = if self.magnet { self.peak_mt } else { self.baseline_mt };
        FieldSample {
            at,
            field_mt: ideal + self.noise_mt,
        }
    }
}

impl Iterator for PulseTrain {
    type Item = FieldSample;

    fn next(&mut self) -> Option<FieldSample> {
        loop {
            let span = *self.spans.get(self.seg)?;
            if !self.started_segment {
                self.started_segment = true;
                self.rev = 0;
                self.dwell_end = None;
                self.magnet = false;
                self.noise_mt = 0.0;
                self.next_noise = (span.noise_amp_mt > 0.0).then_some(span.start);
                if Self::revolution_start(&span, 0).is_none() && self.next_noise.is_none() {
                    return Some(self.sample(span.start));
                }
            }

            let rise = if self.dwell_end.is_none() {
                Self::revolution_start(&span, self.rev)
            } else {
                None
            };
            let fall = self.dwell_end;
            let noise = self.next_noise;
            let Some(at) = [rise, fall, noise].into_iter().flatten().min() else {
                self.seg += 1;
                self.started_segment = false;
                continue;
            };
            if rise == Some(at) {
                self.magnet = true;
                self.rev += 1;
                let next_rev = Self::revolution_start(&span, self.rev).unwrap_or(span.end);
                let end = (at + Self::dwell(&span)).min(next_rev);
                self.dwell_end = (end < span.end).then_some(end);
            }
            if fall == Some(at) {
                self.magnet = false;
                self.dwell_end = None;
            }
            if noise == Some(at) {
                self.noise_mt = self.rng.gen_range(-span.noise_amp_mt..=span.noise_amp_mt);
                let next = at + NOISE_STEP_US;
                self.next_noise = (next < span.end).then_some(next);
            }
            return Some(self.sample(at));
        }
    }
}

/// Conditioned-line edges produced by a pulse train.
pub struct EdgeStream {
    train: PulseTrain,
    sensor: SensorConfig,
    state: SensorState,
    detector: EdgeDetector,
}

impl EdgeStream {
    pub fn new(train: PulseTrain, sensor: SensorConfig) -> Self {
        EdgeStream {
            train,
            sensor,
            state: SensorState::default(),
            detector: EdgeDetector::with_level(condition(SensorState::default().output)),
        }
    }
}

impl Iterator for EdgeStream {
    type Item = Edge;

    fn next(&mut self) -> Option<Edge> {
        for sample in self.train.by_ref() {
            let (state, raw) = sensor_step(&self.sensor, self.state, sample.field_mt);
            self.state = state;
            let edge = self
                .detector
                .push(sample.at, condition(raw))
                .expect("pulse train times are strictly increasing");
            if edge.is_some() {
                return edge;
            }
        }
        None
    }
}

/// Edges on the conditioned sensor line for a scenario's segments.
pub fn pulse_train(scenario: &Scenario) -> Result<EdgeStream, ScenarioError> {
    let spans = segment_spans(&scenario.segments)?;
    Ok(EdgeStream::new(
        PulseTrain::new(spans, scenario.sensor, scenario.seed),
        scenario.sensor,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimError {
    pub at: Micros,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutput {
    pub records: Vec<ShiftRecord>,
    pub display_trace: Vec<(Micros, SegmentFrame)>,
    pub bitstream: UartBitstream,
    /// Rising edges delivered to the counter, per segment.
    pub edge_count_per_segment: Vec<u64>,
    pub final_buffers: Vec<RotationBuffer>,
    pub errors: Vec<SimError>,
}

impl SimOutput {
    pub fn delivered_edges(&self) -> u64 {
        self.edge_count_per_segment.iter().sum()
    }

    pub fn total_count(&self) -> u64 {
        self.final_buffers.iter().map(|b| u64::from(b.count)).sum()
    }

    pub fn display_trace_text(&self) -> String {
        let mut out = String::new();
        for (at, frame) in &self.display_trace {
            out.push_str(&frame.trace_line(*at));
            out.push('\n');
        }
        out
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("sim output serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    // tie order: display timeout, operator, sensor
    Timeout,
    Operator,
    Sensor,
}

pub fn run(scenario: &Scenario) -> Result<SimOutput, ScenarioError> {
    scenario.validate()?;
    let spans = segment_spans(&scenario.segments)?;
    let mut monitor = MonitorState::new(scenario.rated_rpm, &scenario.shifts, scenario.thumbwheel)?;
    let mut tx = UartTx::new(scenario.uart);

    let operator: Vec<MonitorEvent> = scenario
        .events
        .iter()
        .map(|ev| {
            let t = seconds_to_us(ev.t_s).expect("validated event time");
            match ev.action {
                Action::SelectShift(s) => MonitorEvent::SelectShift(s, t),
                Action::EfficiencyButton => MonitorEvent::EfficiencyButton(t),
                Action::SetThumbwheel(w) => MonitorEvent::SetThumbwheel(w, t),
            }
        })
        .collect();
    let mut operator = operator.into_iter().peekable();
    let mut edges = EdgeStream::new(
        PulseTrain::new(spans.clone(), scenario.sensor, scenario.seed),
        scenario.sensor,
    )
    .filter(|e| e.kind == EdgeKind::Rising)
    .peekable();
    let mut timeout: Option<Micros> = None;

    let mut out = SimOutput {
        records: Vec::new(),
        display_trace: vec![(0, render(monitor.display()))],
        bitstream: UartBitstream::new(),
        edge_count_per_segment: vec![0; spans.len()],
        final_buffers: Vec::new(),
        errors: Vec::new(),
    };
    let mut seg = 0;

    loop {
        let candidates = [
            timeout.map(|t| (t, Source::Timeout)),
            operator.peek().map(|e| (e.at(), Source::Operator)),
            edges.peek().map(|e| (e.at, Source::Sensor)),
        ];
        let Some((at, source)) = candidates.into_iter().flatten().min() else {
            break;
        };
        let event = match source {
            Source::Timeout => {
                timeout = None;
                MonitorEvent::Tick(at)
            }
            Source::Operator => operator.next().expect("peeked"),
            Source::Sensor => {
                edges.next();
                while spans[seg].end <= at {
                    seg += 1;
                }
                out.edge_count_per_segment[seg] += 1;
                MonitorEvent::RotationEdge(at)
            }
        };

        match monitor.apply(event) {
            Ok(fx) => {
                if let Some(record) = fx.record {
                    out.records.push(record);
                }
                if let Some(code) = fx.fault {
                    out.errors.push(SimError {
                        at,
                        message: format!("record not computed: {code}"),
                    });
                }
                if !fx.tx.is_empty() {
                    tx.send(&monitor.take_pending_tx(), at);
                }
            }
            Err(e) => out.errors.push(SimError {
                at,
                message: e.to_string(),
            }),
        }
        if let DisplayMode::Efficiency { until, .. } | DisplayMode::Fault { until, .. } =
            monitor.display_mode
        {
            timeout = Some(until);
        }
        let frame = render(monitor.display());
        if out.display_trace.last().map(|(_, f)| f) != Some(&frame) {
            out.display_trace.push((at, frame));
        }
    }

    out.bitstream = tx.into_stream();
    out.final_buffers = monitor.buffers;
    Ok(out)
}
