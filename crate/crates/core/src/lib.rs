pub mod acer;
pub mod dqn;
pub mod env;
pub mod expert;
pub mod exploration;
pub mod guidance;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod replay;

pub use acer::{AcerConfig, AcerLearner};
pub use dqn::{DqnConfig, DqnLearner};
pub use env::{BeliefState, DialogueEnv, DomainSpec, MachineAct};
pub use expert::{expert_act, ExpertThresholds};
pub use exploration::{ExplorationSchedule, ExploreMode};
pub use guidance::{GuidanceKind, GuidanceMode};
pub use harness::{Algorithm, ExperimentConfig, MetricsRow, RunError};
pub use learner::{Learner, TrainError};
pub use nn::{HeadKind, NetworkSpec, ParameterSet};
pub use replay::{Episode, ReplayBuffer, Transition};
