//! Virtual-time emulator of a loom performance monitor.
//!
//! A Hall-effect switch on the loom shaft feeds a rotation counter with one
//! buffer per shift. Pressing the efficiency button latches a [`ShiftRecord`]
//! (efficiency and woven length, computed in exact integer arithmetic), shows
//! it on a six-digit seven-segment display and sends it to the PC over an 8N1
//! serial line. The host side decodes the line, keeps a log of records and
//! writes reports.
//!
//! [`ShiftRecord`]: soc::ShiftRecord

pub mod host;
pub mod sevenseg;
pub mod signal_chain;
pub mod sim;
pub mod soc;
pub mod uart;

/// Simulation time in microseconds.
pub type Micros = u64;

pub use sim::{run, Scenario, SimOutput};
pub use soc::{efficiency_bp, length_cm, ShiftRecord};
