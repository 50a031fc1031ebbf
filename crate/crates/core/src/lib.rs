//! Simulation and optimization of resilient RIS-aided cell-free MIMO downlinks.

pub mod channel;
pub mod config;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod resilience;
pub mod sca;
pub mod subproblem;

pub use channel::{ChannelState, CMat, CVec, C64};
pub use config::{RisChannelModel, SystemConfig};
pub use error::{Error, Result};
pub use geometry::Geometry;
pub use metrics::BeamformingMatrix;
pub use resilience::{ResilienceComponents, ResilienceReport, ResilienceWeights};
