//! Closed-loop QKD workbench: analytic key-rate models, a block-level fiber
//! simulator, a temporal-convolution forecaster and a PPO controller that
//! tunes the source from telemetry.

pub mod channel;
pub mod closed_loop;
pub mod config;
pub mod controller;
pub mod error;
pub mod io;
pub mod nn;
pub mod rates;
pub mod rng;
pub mod stats;
pub mod tcn;

pub use channel::{ChannelSim, ControlState, NoiseSchedule, SimConfig, Telemetry};
pub use closed_loop::{ControllerKind, EpisodeLog, LoopEnv};
pub use config::WorkbenchConfig;
pub use error::{Error, Result};
pub use rates::{KeyRateReport, LinkParams, ProtocolConfig, ProtocolKind};
