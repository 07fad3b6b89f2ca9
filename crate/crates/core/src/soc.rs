//! On-chip logic of the loom monitor.
//!
//! All arithmetic is exact integer arithmetic. Efficiency is held in basis
//! points and cloth length in centimeters, so the two calculators are the
//! percentage and meter formulas scaled by 100 and truncated.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::uart::frame_record;
use crate::Micros;

/// Fastest shaft the buffers are sized for, in rpm.
pub const MAX_RPM: u32 = 999;
pub const MAX_SHIFT_HOURS: u32 = 12;
/// Largest rotation buffer: 999 rpm for a 12 hour shift.
pub const MAX_BUFFER_CAPACITY: u32 = MAX_RPM * 60 * MAX_SHIFT_HOURS;
/// Inches per meter, as the exact ratio 3937/100.
pub const INCHES_PER_METER_X100: u64 = 3937;
/// How long the efficiency readout stays up after the button is pressed.
pub const EFFICIENCY_HOLD_US: Micros = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BcdError {
    #[error("thumbwheel {position} reads {value:#x}, not a decimal digit")]
    InvalidDigit { position: usize, value: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum CalcError {
    #[error("rated rpm is zero")]
    ZeroRpm,
    #[error("shift length is zero hours")]
    ZeroHours,
    #[error("pick value is zero")]
    ZeroPick,
}

impl CalcError {
    /// Code shown on the display when a calculation fails.
    pub fn display_code(self) -> u8 {
        match self {
            CalcError::ZeroPick => 1,
            CalcError::ZeroRpm => 2,
            CalcError::ZeroHours => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("rated rpm {0} outside 1..=999")]
    RatedRpm(u32),
    #[error("shift {shift} has {hours} hours, expected 1..=12")]
    ShiftHours { shift: ShiftId, hours: u32 },
    #[error("no shifts configured")]
    NoShifts,
    #[error("shift {0} configured more than once")]
    DuplicateShift(ShiftId),
    #[error(transparent)]
    Bcd(#[from] BcdError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("event at {at} us precedes current time {now} us")]
    TimeWentBackwards { now: Micros, at: Micros },
    #[error("shift {0} is not configured")]
    UnknownShift(ShiftId),
    #[error(transparent)]
    Bcd(#[from] BcdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShiftId {
    A,
    B,
    C,
}

impl ShiftId {
    pub const ALL: [ShiftId; 3] = [ShiftId::A, ShiftId::B, ShiftId::C];

    pub fn as_char(self) -> char {
        match self {
            ShiftId::A => 'A',
            ShiftId::B => 'B',
            ShiftId::C => 'C',
        }
    }
}

impl fmt::Display for ShiftId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for ShiftId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "A" => Ok(ShiftId::A),
            "B" => Ok(ShiftId::B),
            "C" => Ok(ShiftId::C),
            _ => Err(()),
        }
    }
}

/// Raw BCD lines of the three-wheel switch: hundreds, tens, units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThumbwheelState {
    pub wheels: [u8; 3],
}

impl ThumbwheelState {
    pub fn new(hundreds: u8, tens: u8, units: u8) -> Self {
        ThumbwheelState {
            wheels: [hundreds, tens, units],
        }
    }

    /// Wheel positions that dial `n`. Panics above 999.
    pub fn from_value(n: u16) -> Self {
        assert!(n <= 999, "thumbwheel holds three digits");
        Self::new((n / 100) as u8, (n / 10 % 10) as u8, (n % 10) as u8)
    }
}

/// Horizontal threads per inch. Zero is representable (all wheels at 0) and
/// is rejected by the meter calculator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PickValue(pub u16);

pub fn bcd_to_binary(wheels: ThumbwheelState) -> Result<PickValue, BcdError> {
    let mut value = 0u16;
    for (position, &digit) in wheels.wheels.iter().enumerate() {
        if digit > 9 {
            return Err(BcdError::InvalidDigit {
                position,
                value: digit,
            });
        }
        value = value * 10 + u16::from(digit);
    }
    Ok(PickValue(value))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MachineRating(pub u16);

impl MachineRating {
    pub fn new(rpm: u32) -> Result<Self, ConfigError> {
        if (1..=MAX_RPM).contains(&rpm) {
            Ok(MachineRating(rpm as u16))
        } else {
            Err(ConfigError::RatedRpm(rpm))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftConfig {
    pub shift_id: ShiftId,
    pub hours: u8,
}

impl ShiftConfig {
    pub fn new(shift_id: ShiftId, hours: u32) -> Result<Self, ConfigError> {
        if (1..=MAX_SHIFT_HOURS).contains(&hours) {
            Ok(ShiftConfig {
                shift_id,
                hours: hours as u8,
            })
        } else {
            Err(ConfigError::ShiftHours {
                shift: shift_id,
                hours,
            })
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        Self::new(self.shift_id, u32::from(self.hours)).map(|_| ())
    }
}

/// Rotations needed to fill a shift of `hours` at full rated speed.
pub fn buffer_capacity(hours: u8) -> u32 {
    MAX_RPM * 60 * u32::from(hours)
}

/// Saturating per-shift rotation counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationBuffer {
    pub shift_id: ShiftId,
    pub count: u32,
    pub capacity: u32,
}

impl RotationBuffer {
    pub fn new(shift: ShiftConfig) -> Self {
        RotationBuffer {
            shift_id: shift.shift_id,
            count: 0,
            capacity: buffer_capacity(shift.hours),
        }
    }

    pub fn is_saturated(&self) -> bool {
        self.count >= self.capacity
    }
}

pub fn count_rotation(buffer: RotationBuffer) -> RotationBuffer {
    RotationBuffer {
        count: buffer.count.saturating_add(1).min(buffer.capacity),
        ..buffer
    }
}

/// Efficiency in hundredths of a percent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EfficiencyBp(pub u32);

/// Woven length in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LengthCm(pub u32);

/// `count / (rpm * 60 * hours) * 100` percent, as truncated basis points.
///
/// Not clamped: a shaft running faster than its rating reports above 10000.
pub fn efficiency_bp(count: u32, rated_rpm: u32, hours: u32) -> Result<EfficiencyBp, CalcError> {
    if rated_rpm == 0 {
        return Err(CalcError::ZeroRpm);
    }
    if hours == 0 {
        return Err(CalcError::ZeroHours);
    }
    let rated = u64::from(rated_rpm) * 60 * u64::from(hours);
    let bp = u64::from(count) * 10_000 / rated;
    Ok(EfficiencyBp(bp.min(u64::from(u32::MAX)) as u32))
}

/// `count / (pick * 39.37)` meters, as truncated centimeters.
pub fn length_cm(count: u32, pick: PickValue) -> Result<LengthCm, CalcError> {
    if pick.0 == 0 {
        return Err(CalcError::ZeroPick);
    }
    let cm = u64::from(count) * 10_000 / (u64::from(pick.0) * INCHES_PER_METER_X100);
    Ok(LengthCm(cm as u32))
}

/// Results latched for one shift when the efficiency button is pressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftRecord {
    pub shift_id: ShiftId,
    pub count: u32,
    pub efficiency: EfficiencyBp,
    pub length: LengthCm,
    pub pick: PickValue,
    pub rated_rpm: MachineRating,
    pub hours: u8,
}

impl ShiftRecord {
    pub fn compute(
        shift_id: ShiftId,
        count: u32,
        pick: PickValue,
        rated_rpm: MachineRating,
        hours: u8,
    ) -> Result<Self, CalcError> {
        Ok(ShiftRecord {
            shift_id,
            count,
            efficiency: efficiency_bp(count, u32::from(rated_rpm.0), u32::from(hours))?,
            length: length_cm(count, pick)?,
            pick,
            rated_rpm,
            hours,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisplayMode {
    LiveMeters,
    Efficiency { shown: EfficiencyBp, until: Micros },
    Fault { code: u8, until: Micros },
}

/// What the display should show after a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DisplayContent {
    Meters(LengthCm),
    Efficiency(EfficiencyBp),
    Error(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MonitorEvent {
    RotationEdge(Micros),
    SelectShift(ShiftId, Micros),
    EfficiencyButton(Micros),
    SetThumbwheel(ThumbwheelState, Micros),
    Tick(Micros),
}

impl MonitorEvent {
    pub fn at(&self) -> Micros {
        match *self {
            MonitorEvent::RotationEdge(t)
            | MonitorEvent::SelectShift(_, t)
            | MonitorEvent::EfficiencyButton(t)
            | MonitorEvent::SetThumbwheel(_, t)
            | MonitorEvent::Tick(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effects {
    pub display: DisplayContent,
    pub record: Option<ShiftRecord>,
    pub tx: Vec<u8>,
    pub fault: Option<CalcError>,
}

/// Complete state of the monitor. Steps are deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorState {
    pub rated_rpm: MachineRating,
    pub shifts: Vec<ShiftConfig>,
    pub active_shift: ShiftId,
    pub buffers: Vec<RotationBuffer>,
    pub thumbwheel: ThumbwheelState,
    pub display_mode: DisplayMode,
    pub pending_tx: VecDeque<u8>,
    pub now: Micros,
}

impl MonitorState {
    /// The first configured shift starts out active.
    pub fn new(
        rated_rpm: MachineRating,
        shifts: &[ShiftConfig],
        thumbwheel: ThumbwheelState,
    ) -> Result<Self, ConfigError> {
        MachineRating::new(u32::from(rated_rpm.0))?;
        bcd_to_binary(thumbwheel)?;
        let first = shifts.first().ok_or(ConfigError::NoShifts)?;
        for (i, s) in shifts.iter().enumerate() {
            s.validate()?;
            if shifts[..i].iter().any(|o| o.shift_id == s.shift_id) {
                return Err(ConfigError::DuplicateShift(s.shift_id));
            }
        }
        Ok(MonitorState {
            rated_rpm,
            shifts: shifts.to_vec(),
            active_shift: first.shift_id,
            buffers: shifts.iter().map(|s| RotationBuffer::new(*s)).collect(),
            thumbwheel,
            display_mode: DisplayMode::LiveMeters,
            pending_tx: VecDeque::new(),
            now: 0,
        })
    }

    pub fn buffer(&self, shift: ShiftId) -> Option<&RotationBuffer> {
        self.buffers.iter().find(|b| b.shift_id == shift)
    }

    fn active_index(&self) -> usize {
        self.buffers
            .iter()
            .position(|b| b.shift_id == self.active_shift)
            .expect("active shift always has a buffer")
    }

    fn active_hours(&self) -> u8 {
        self.shifts[self.active_index()].hours
    }

    pub fn pick(&self) -> PickValue {
        bcd_to_binary(self.thumbwheel).expect("stored thumbwheel is validated")
    }

    pub fn display(&self) -> DisplayContent {
        match self.display_mode {
            DisplayMode::Efficiency { shown, .. } => DisplayContent::Efficiency(shown),
            DisplayMode::Fault { code, .. } => DisplayContent::Error(code),
            DisplayMode::LiveMeters => {
                let count = self.buffers[self.active_index()].count;
                match length_cm(count, self.pick()) {
                    Ok(len) => DisplayContent::Meters(len),
                    Err(e) => DisplayContent::Error(e.display_code()),
                }
            }
        }
    }

    pub fn take_pending_tx(&mut self) -> Vec<u8> {
        self.pending_tx.drain(..).collect()
    }

    /// In-place step. On error the state is left untouched.
    pub fn apply(&mut self, event: MonitorEvent) -> Result<Effects, MonitorError> {
        let at = event.at();
        if at < self.now {
            return Err(MonitorError::TimeWentBackwards { now: self.now, at });
        }
        let mut record = None;
        let mut tx = Vec::new();
        let mut fault = None;
        match event {
            MonitorEvent::RotationEdge(_) => {
                let i = self.active_index();
                self.buffers[i] = count_rotation(self.buffers[i]);
            }
            MonitorEvent::SelectShift(shift, _) => {
                if self.buffer(shift).is_none() {
                    return Err(MonitorError::UnknownShift(shift));
                }
                self.active_shift = shift;
            }
            MonitorEvent::SetThumbwheel(wheels, _) => {
                bcd_to_binary(wheels)?;
                self.thumbwheel = wheels;
            }
            MonitorEvent::EfficiencyButton(_) => {
                let until = at + EFFICIENCY_HOLD_US;
                let count = self.buffers[self.active_index()].count;
                match ShiftRecord::compute(
                    self.active_shift,
                    count,
                    self.pick(),
                    self.rated_rpm,
                    self.active_hours(),
                ) {
                    Ok(r) => {
                        self.display_mode = DisplayMode::Efficiency {
                            shown: r.efficiency,
                            until,
                        };
                        tx = frame_record(&r);
                        self.pending_tx.extend(tx.iter().copied());
                        record = Some(r);
                    }
                    Err(e) => {
                        self.display_mode = DisplayMode::Fault {
                            code: e.display_code(),
                            until,
                        };
                        fault = Some(e);
                    }
                }
            }
            MonitorEvent::Tick(_) => match self.display_mode {
                DisplayMode::Efficiency { until, .. } | DisplayMode::Fault { until, .. }
                    if at >= until =>
                {
                    self.display_mode = DisplayMode::LiveMeters;
                }
                _ => {}
            },
        }
        self.now = at;
        Ok(Effects {
            display: self.display(),
            record,
            tx,
            fault,
        })
    }
}

/// Pure form of [`MonitorState::apply`].
pub fn monitor_step(
    state: &MonitorState,
    event: MonitorEvent,
) -> Result<(MonitorState, Effects), MonitorError> {
    let mut next = state.clone();
    let effects = next.apply(event)?;
    Ok((next, effects))
}
