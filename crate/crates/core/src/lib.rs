//! Simulator and two-node harness for a single-basis polarization-encoding
//! QKD link over fiber.
//!
//! The physical models ([`optics`], [`devices`]) are generic over the float
//! type through [`Real`]; `f64` aliases for the common types live at the crate
//! root. Timing is exact integer picoseconds ([`Picos`]).

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod devices;
mod error;
pub mod link;
pub mod optics;
pub mod protocol;
pub mod report;
mod scalar;
pub mod scenario;
pub mod tagfile;
pub mod timing;

pub use error::{Error, Result};
pub use scalar::{Picos, Real};

pub type PolarizationPhase = optics::PolarizationPhase<f64>;
pub type PolarizationPhaseF32 = optics::PolarizationPhase<f32>;
pub type StateAmplitudes = optics::StateAmplitudes<f64>;
pub type StateAmplitudesF32 = optics::StateAmplitudes<f32>;
pub type PowerLevel = optics::PowerLevel<f64>;
pub type PowerLevelF32 = optics::PowerLevel<f32>;
pub type AlignmentError = optics::AlignmentError<f64>;
pub type AlignmentErrorF32 = optics::AlignmentError<f32>;
pub type DetectorSpec = devices::DetectorSpec<f64>;
pub type ChannelSpec = devices::ChannelSpec<f64>;
pub type DriftSpec = devices::DriftSpec<f64>;
pub type ModulatorSpec = devices::ModulatorSpec<f64>;
pub type SourceSpec = devices::SourceSpec<f64>;
pub type OpticalPulse = devices::OpticalPulse<f64>;
pub type ClockSpec = timing::ClockSpec<f64>;
pub type SessionConfig = protocol::SessionConfig<f64>;
pub type SessionConfigF32 = protocol::SessionConfig<f32>;
pub type SessionReport = protocol::SessionReport<f64>;
