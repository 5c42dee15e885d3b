//! Learning from uncertain human feedback.
//!
//! A trainer judges each action of a learner with `+`, `-` or nothing. The
//! feedback model ties the probability of each reply to the distance between
//! the action and the trainer's preferred one through a Gaussian kernel of
//! width `sigma`, scaled by the trainer's unknown positive and negative
//! response rates `mu+` and `mu-`.
//!
//! [`learners::LearnerSession`] covers the adaptive learner (EM over the
//! response rates plus gradient steps on `sigma`) and its baselines;
//! [`environments`] holds the simulated scenarios and trainers;
//! [`harness`] runs seeded episodes and experiment grids; [`session`]
//! exposes an interactive session for an external trainer.

pub mod em;
pub mod environments;
pub mod error;
pub mod harness;
pub mod history;
pub mod learners;
pub mod model;
pub mod rng;
pub mod session;
pub mod sigma;
pub mod stats;

pub use em::{em_fixpoint, em_update, FixpointOutcome, ModelShape, Policy, QuadratureGrid};
pub use environments::{Environment, ScenarioConfig, ScenarioKind, TraceStep, TrainerConfig, TrainerSpec, World};
pub use error::{Error, Result};
pub use harness::{
    replay, run_episode, run_grid, EpisodeConfig, EpisodeLogMeta, EpisodeResult, ExperimentGrid, GridCell,
    GridOutput, Metrics,
};
pub use history::{InteractionHistory, InteractionRecord};
pub use learners::{LearnerKind, LearnerSession, LearnerSettings};
pub use model::{
    feedback_probs, kernel, ActionIndex, FeedbackKind, FeedbackModelParams, KernelKind, ProbTriple, StateId,
};
pub use session::{Phase, SessionDescriptor, TrainingSession};
pub use sigma::SigmaState;
