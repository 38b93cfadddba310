//! Desk-scale simulator, task scenarios, closed-loop episodes and
//! random-motion data collection.

pub mod arm;
pub mod collect;
pub mod env;
pub mod episode;
pub mod rollout;
pub mod tasks;

pub use arm::{ArmModel, PointMass};
pub use env::{is_fallen, PlantCommand, SimConfig, SimState, Simulator, FALL_HEIGHT, FALL_TILT};
pub use episode::{Environment, LowLevelObserver, StepOutcome};
pub use tasks::{PulseConfig, TaskFrame, TaskKind, TaskRunner, TaskSpec};
