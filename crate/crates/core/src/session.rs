//! Interactive training sessions in which an external party plays the trainer.
//!
//! Phase graph:
//!
//! ```text
//! awaiting_feedback --feedback--> awaiting_feedback | state_done
//! awaiting_selection --selection--> awaiting_selection
//! any but finished --done--> next state's first phase | finished
//! ```
//!
//! QUERY sessions sit in `awaiting_selection`; every other learner in
//! `awaiting_feedback`. A state ends after `steps_per_state` feedbacks or
//! whenever the trainer says done.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::Policy;
use crate::environments::{
    brightness_percent, catch_outcome, random_or_pinned_policy, sample_rat, shuffled_order, ScenarioConfig,
    ScenarioKind,
};
use crate::error::{Error, Result};
use crate::harness::{write_episode_log, EpisodeLogMeta};
use crate::learners::{LearnerKind, LearnerSession, LearnerSettings};
use crate::model::{ActionIndex, FeedbackKind, StateId};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingFeedback,
    AwaitingSelection,
    StateDone,
    Finished,
}

/// What the trainer is shown for the current action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Display {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rat: Option<ActionIndex>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caught: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub brightness_percent: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub policy: Policy,
    pub sigma: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub session_id: String,
    pub scenario: ScenarioConfig,
    pub learner: LearnerKind,
    pub seed: u64,
    pub phase: Phase,
    pub current_state: Option<StateId>,
    /// Position of `current_state` in the visiting order.
    pub state_index: usize,
    pub steps_in_state: usize,
    pub last_action: Option<ActionIndex>,
    pub display: Display,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone)]
pub struct TrainingSession {
    id: String,
    scenario: ScenarioConfig,
    seed: u64,
    learner: LearnerSession,
    rat_centres: Policy,
    order: Vec<StateId>,
    env_rng: ChaCha8Rng,
    phase: Phase,
    state_index: usize,
    steps_in_state: usize,
    current_action: Option<ActionIndex>,
    display: Display,
}

impl TrainingSession {
    pub fn create(
        id: impl Into<String>,
        scenario: ScenarioConfig,
        learner: LearnerKind,
        settings: LearnerSettings,
        seed: u64,
    ) -> Result<Self> {
        scenario.validate()?;
        let mut world_rng = stream_rng(seed, Stream::World);
        let rat_centres = random_or_pinned_policy(&scenario, &mut world_rng);
        let order = shuffled_order(scenario.n_states, &mut world_rng);
        let session = LearnerSession::new(
            learner,
            scenario.n_states,
            scenario.n_actions,
            settings,
            &mut stream_rng(seed, Stream::Learner),
        )?;
        let mut s = Self {
            id: id.into(),
            scenario,
            seed,
            learner: session,
            rat_centres,
            order,
            env_rng: stream_rng(seed, Stream::Environment),
            phase: Phase::AwaitingFeedback,
            state_index: 0,
            steps_in_state: 0,
            current_action: None,
            display: Display::default(),
        };
        s.enter_state()?;
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn learner(&self) -> &LearnerSession {
        &self.learner
    }

    fn is_query(&self) -> bool {
        matches!(self.learner.kind(), LearnerKind::Query)
    }

    fn current_state(&self) -> Option<StateId> {
        (self.phase != Phase::Finished).then(|| self.order[self.state_index])
    }

    fn enter_state(&mut self) -> Result<()> {
        self.steps_in_state = 0;
        self.current_action = None;
        self.display = Display::default();
        if self.is_query() {
            self.phase = Phase::AwaitingSelection;
            Ok(())
        } else {
            self.phase = Phase::AwaitingFeedback;
            self.present()
        }
    }

    /// Takes the learner's next action in the current state and prepares its display.
    fn present(&mut self) -> Result<()> {
        let s = self.order[self.state_index];
        let k = self.scenario.n_actions;
        match self.scenario.kind {
            ScenarioKind::Dog => {
                let rat = sample_rat(s, &self.rat_centres, k, &mut self.env_rng);
                let a = self.learner.act(s)?;
                let caught = catch_outcome(rat, a, &mut self.env_rng);
                self.current_action = Some(a);
                self.display = Display {
                    rat: Some(rat),
                    caught: Some(caught),
                    brightness_percent: None,
                };
            }
            ScenarioKind::Lighting => {
                let a = self.learner.act(s)?;
                self.current_action = Some(a);
                self.display = Display {
                    brightness_percent: Some(brightness_percent(a)),
                    ..Display::default()
                };
            }
        }
        Ok(())
    }

    fn wrong_phase(&self, what: &str) -> Error {
        Error::Protocol(format!("{what} not accepted in phase {:?}", self.phase))
    }

    pub fn post_feedback(&mut self, f: FeedbackKind) -> Result<SessionDescriptor> {
        if self.phase != Phase::AwaitingFeedback {
            return Err(self.wrong_phase("feedback"));
        }
        let s = self.order[self.state_index];
        let a = self.current_action.expect("an action is presented while awaiting feedback");
        self.learner.observe_feedback(s, a, f)?;
        self.steps_in_state += 1;
        if self.steps_in_state >= self.scenario.steps_per_state {
            self.phase = Phase::StateDone;
        } else {
            self.present()?;
        }
        Ok(self.descriptor())
    }

    /// Applies a QUERY selection; recorded in the history as an interaction without feedback.
    pub fn post_selection(&mut self, a: usize) -> Result<SessionDescriptor> {
        if !self.is_query() {
            return Err(Error::Unsupported(format!(
                "{} does not accept direct selections",
                self.learner.kind().label()
            )));
        }
        if self.phase != Phase::AwaitingSelection {
            return Err(self.wrong_phase("selection"));
        }
        let a = ActionIndex::checked(a, self.scenario.n_actions)?;
        let s = self.order[self.state_index];
        self.learner.query_select(a)?;
        let a = self.learner.act(s)?;
        self.learner.observe_feedback(s, a, FeedbackKind::None)?;
        self.steps_in_state += 1;
        self.current_action = Some(a);
        self.display = match self.scenario.kind {
            ScenarioKind::Lighting => Display {
                brightness_percent: Some(brightness_percent(a)),
                ..Display::default()
            },
            ScenarioKind::Dog => {
                let rat = sample_rat(s, &self.rat_centres, self.scenario.n_actions, &mut self.env_rng);
                let caught = catch_outcome(rat, a, &mut self.env_rng);
                Display {
                    rat: Some(rat),
                    caught: Some(caught),
                    brightness_percent: None,
                }
            }
        };
        Ok(self.descriptor())
    }

    /// Ends the current state. Returns `true` when this finished the session.
    pub fn post_done(&mut self) -> Result<bool> {
        if self.phase == Phase::Finished {
            return Err(self.wrong_phase("done"));
        }
        self.state_index += 1;
        if self.state_index >= self.order.len() {
            self.state_index = self.order.len() - 1;
            self.phase = Phase::Finished;
            self.current_action = None;
            self.display = Display::default();
            return Ok(true);
        }
        self.enter_state()?;
        Ok(false)
    }

    pub fn descriptor(&self) -> SessionDescriptor {
        SessionDescriptor {
            session_id: self.id.clone(),
            scenario: self.scenario.clone(),
            learner: *self.learner.kind(),
            seed: self.seed,
            phase: self.phase,
            current_state: self.current_state(),
            state_index: self.state_index,
            steps_in_state: self.steps_in_state,
            last_action: self.current_action,
            display: self.display,
            diagnostics: Diagnostics {
                policy: self.learner.policy().clone(),
                sigma: self.learner.sigma(),
                steps: self.learner.history().len(),
            },
        }
    }

    pub fn log_meta(&self) -> EpisodeLogMeta {
        EpisodeLogMeta {
            scenario: self.scenario.clone(),
            learner: *self.learner.kind(),
            settings: *self.learner.settings(),
            seed: self.seed,
            optimal_policy: None,
        }
    }

    /// Writes the record log and its metadata file.
    pub fn write_log(&self, path: &std::path::Path) -> Result<()> {
        write_episode_log(path, self.learner.history().records(), &self.log_meta())
    }
}
