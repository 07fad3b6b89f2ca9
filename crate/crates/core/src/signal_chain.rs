//! Hall-effect proximity switch and signal conditioner.
//!
//! The switch is modelled as a comparator with two thresholds. A field at or
//! above the operate point pulls the output low (magnet present); a field at
//! or below the release point lets it return high. Anything in between holds
//! the previous output. The conditioner inverts the active-low switch output
//! so every magnet pass shows up as a high pulse on the conditioned line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Micros;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("operate point {operate_mt} mT must be above release point {release_mt} mT")]
    EmptyHysteresis { operate_mt: f64, release_mt: f64 },
    #[error("thresholds must be finite and positive (operate {operate_mt} mT, release {release_mt} mT)")]
    NonPositiveThreshold { operate_mt: f64, release_mt: f64 },
    #[error("sample at {at} us does not follow previous sample at {previous} us")]
    NonMonotonicTime { previous: Micros, at: Micros },
}

/// Logic level of a digital line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicLevel {
    Low,
    High,
}

impl LogicLevel {
    pub fn inverted(self) -> Self {
        match self {
            LogicLevel::Low => LogicLevel::High,
            LogicLevel::High => LogicLevel::Low,
        }
    }

    pub fn is_high(self) -> bool {
        self == LogicLevel::High
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            LogicLevel::High
        } else {
            LogicLevel::Low
        }
    }
}

/// Operate/release thresholds of the switch, in milliTesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(rename = "operate_mT")]
    pub operate_mt: f64,
    #[serde(rename = "release_mT")]
    pub release_mt: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            operate_mt: 3.0,
            release_mt: 1.5,
        }
    }
}

impl SensorConfig {
    pub fn new(operate_mt: f64, release_mt: f64) -> Result<Self, SignalError> {
        let cfg = SensorConfig {
            operate_mt,
            release_mt,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        let (operate_mt, release_mt) = (self.operate_mt, self.release_mt);
        if !(operate_mt.is_finite() && release_mt.is_finite() && operate_mt > 0.0 && release_mt > 0.0)
        {
            return Err(SignalError::NonPositiveThreshold {
                operate_mt,
                release_mt,
            });
        }
        if operate_mt <= release_mt {
            return Err(SignalError::EmptyHysteresis {
                operate_mt,
                release_mt,
            });
        }
        Ok(())
    }

    /// Width of the hysteresis window.
    pub fn hysteresis_mt(&self) -> f64 {
        self.operate_mt - self.release_mt
    }

    pub fn step(&self, state: SensorState, field_mt: f64) -> (SensorState, LogicLevel) {
        sensor_step(self, state, field_mt)
    }
}

/// Internal memory of the switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorState {
    pub output: LogicLevel,
    pub last_field_mt: f64,
}

impl Default for SensorState {
    /// Released, no field.
    fn default() -> Self {
        SensorState {
            output: LogicLevel::High,
            last_field_mt: 0.0,
        }
    }
}

/// One comparator step with hysteresis.
pub fn sensor_step(cfg: &SensorConfig, state: SensorState, field_mt: f64) -> (SensorState, LogicLevel) {
    let output = if field_mt >= cfg.operate_mt {
        LogicLevel::Low
    } else if field_mt <= cfg.release_mt {
        LogicLevel::High
    } else {
        state.output
    };
    (
        SensorState {
            output,
            last_field_mt: field_mt,
        },
        output,
    )
}

/// Signal conditioner transfer: the active-low switch output becomes an
/// active-high pulse.
pub fn condition(raw: LogicLevel) -> LogicLevel {
    raw.inverted()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub kind: EdgeKind,
    pub at: Micros,
}

/// Incremental edge detector over a level-sampled line.
///
/// Without a known starting level the first sample only establishes the
/// level; edges are reported on subsequent changes.
#[derive(Debug, Clone, Default)]
pub struct EdgeDetector {
    last_at: Option<Micros>,
    level: Option<LogicLevel>,
}

impl EdgeDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Detector for a line known to sit at `level` before the first sample.
    pub fn with_level(level: LogicLevel) -> Self {
        EdgeDetector {
            last_at: None,
            level: Some(level),
        }
    }

    pub fn push(&mut self, at: Micros, level: LogicLevel) -> Result<Option<Edge>, SignalError> {
        if let Some(previous) = self.last_at {
            if at <= previous {
                return Err(SignalError::NonMonotonicTime { previous, at });
            }
        }
        let edge = match self.level {
            Some(prev_level) if prev_level != level => Some(Edge {
                kind: if level.is_high() {
                    EdgeKind::Rising
                } else {
                    EdgeKind::Falling
                },
                at,
            }),
            _ => None,
        };
        self.last_at = Some(at);
        self.level = Some(level);
        Ok(edge)
    }
}

/// Edges of a sampled line. Sample times must be strictly increasing.
pub fn detect_edges(samples: &[(Micros, LogicLevel)]) -> Result<Vec<Edge>, SignalError> {
    let mut detector = EdgeDetector::new();
    let mut edges = Vec::new();
    for &(at, level) in samples {
        if let Some(edge) = detector.push(at, level)? {
            edges.push(edge);
        }
    }
    Ok(edges)
}
