//! Feasibility-guided adversarial scenario generation on a small 2D
//! kinematic traffic simulator.

pub mod config;
pub mod error;
pub mod feasibility;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod microsim;
pub mod nn;
pub mod oracle;
pub mod policy;
pub mod risk;
pub mod schedule;
pub mod train;

pub use config::{Config, Variant};
pub use error::{Error, Result};
pub use feasibility::{FeasibilityParams, FeasibilityReport, Mode};
pub use geometry::{KinematicState, RelativeFrame};
pub use microsim::{EpisodeLog, Frame, WorldConfig};
pub use policy::{PpoConfig, ScenarioPolicy};
pub use risk::{RiskCritic, RiskFeatures};
pub use schedule::EpsSchedule;
pub use train::{RunDir, Trainer};
