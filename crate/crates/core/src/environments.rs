//! Scenario simulators and simulated trainers.
//!
//! Two scenarios share one schedule: states are visited in blocks of
//! `steps_per_state` interactions, in an order shuffled once per world.
//!
//! * **dog**: a rat appears at one of `K` points of the current edge with
//!   probability proportional to `exp(-(k - lam*(s))^2 / 2)`; the dog (the
//!   learner) picks a point and catches the rat with probability
//!   `exp(-(a_rat - a_dog)^2 / 2)`.
//! * **lighting**: the learner picks one of `K` light levels, displayed as
//!   `11 * level` percent.
//!
//! Simulated trainers judge the chosen action only against `lam*(s)`.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::em::Policy;
use crate::error::{Error, Result};
use crate::history::InteractionRecord;
use crate::learners::LearnerSession;
use crate::model::{
    feedback_probs, validate_params, ActionIndex, FeedbackKind, FeedbackModelParams, KernelKind,
    StateId,
};

/// Rejection budget per state row for random-table trainers.
pub const MAX_TABLE_TRIES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Dog,
    Lighting,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Dog => "dog",
            ScenarioKind::Lighting => "lighting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub n_states: usize,
    pub n_actions: usize,
    pub steps_per_state: usize,
    /// Generated uniformly at random per world when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_policy: Option<Vec<usize>>,
}

impl ScenarioConfig {
    /// Four edges, six points, fifteen steps per edge.
    pub fn dog() -> Self {
        Self {
            kind: ScenarioKind::Dog,
            n_states: 4,
            n_actions: 6,
            steps_per_state: 15,
            optimal_policy: None,
        }
    }

    /// Three activities, ten light levels.
    pub fn lighting() -> Self {
        Self {
            kind: ScenarioKind::Lighting,
            n_states: 3,
            n_actions: 10,
            steps_per_state: 15,
            optimal_policy: None,
        }
    }

    pub fn with_dims(mut self, n_states: usize, n_actions: usize) -> Self {
        self.n_states = n_states;
        self.n_actions = n_actions;
        self
    }

    pub fn total_steps(&self) -> usize {
        self.n_states * self.steps_per_state
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_states < 1 {
            v.push("n_states must be >= 1".to_string());
        }
        if self.n_actions < 2 {
            v.push(format!("n_actions must be >= 2, got {}", self.n_actions));
        }
        if self.steps_per_state < 1 {
            v.push("steps_per_state must be >= 1".to_string());
        }
        if let Some(p) = &self.optimal_policy {
            if p.len() != self.n_states {
                v.push(format!(
                    "optimal_policy has {} entries for {} states",
                    p.len(),
                    self.n_states
                ));
            }
            if p.iter().any(|&a| a >= self.n_actions) {
                v.push("optimal_policy entries must be < n_actions".to_string());
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Brightness shown for light level `a`.
pub fn brightness_percent(a: ActionIndex) -> u32 {
    11 * a.0 as u32
}

/// A fully specified simulated trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerSpec {
    ModelFollowing { params: FeedbackModelParams },
    /// `table[s][a] = [p_plus, p_minus]`.
    RandomTable { table: Vec<Vec<[f64; 2]>> },
}

impl TrainerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TrainerSpec::ModelFollowing { .. } => "model_following",
            TrainerSpec::RandomTable { .. } => "random_table",
        }
    }

    pub fn validate(&self, optimal: &Policy, n_actions: usize) -> Result<()> {
        match self {
            TrainerSpec::ModelFollowing { params } => {
                let v = validate_params(params);
                if v.is_empty() {
                    Ok(())
                } else {
                    Err(Error::Constraint(v))
                }
            }
            TrainerSpec::RandomTable { table } => {
                let mut errs = Vec::new();
                if table.len() != optimal.len() {
                    errs.push(format!("table has {} rows for {} states", table.len(), optimal.len()));
                }
                for (s, row) in table.iter().enumerate().take(optimal.len()) {
                    if row.len() != n_actions {
                        errs.push(format!("row {s} has {} cells, expected {n_actions}", row.len()));
                        continue;
                    }
                    if row.iter().any(|&[p, m]| !(p >= 0.0 && m >= 0.0 && p + m <= 1.0)) {
                        errs.push(format!("row {s} has a cell outside the simplex"));
                    }
                    if !row_respects_optimum(row, optimal.get(StateId(s))) {
                        errs.push(format!(
                            "row {s}: action {} must strictly maximize p_plus and strictly minimize p_minus",
                            optimal.get(StateId(s))
                        ));
                    }
                }
                if errs.is_empty() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(errs))
                }
            }
        }
    }
}

fn row_respects_optimum(row: &[[f64; 2]], best: ActionIndex) -> bool {
    let [bp, bm] = row[best.0];
    row.iter()
        .enumerate()
        .filter(|&(a, _)| a != best.0)
        .all(|(_, &[p, m])| p < bp && m > bm)
}

/// Trainer as written in a config document; unspecified parts are drawn per world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainerConfig {
    ModelFollowing {
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_plus: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mu_minus: Option<f64>,
    },
    RandomTable {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<Vec<Vec<[f64; 2]>>>,
    },
}

fn one() -> f64 {
    1.0
}

impl TrainerConfig {
    /// Model-following trainer with `sigma = 1` and random magnitudes.
    pub fn model_following() -> Self {
        TrainerConfig::ModelFollowing {
            sigma: 1.0,
            mu_plus: None,
            mu_minus: None,
        }
    }

    pub fn random_table() -> Self {
        TrainerConfig::RandomTable { table: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainerConfig::ModelFollowing { .. } => "model_following",
            TrainerConfig::RandomTable { .. } => "random_table",
        }
    }

    pub fn resolve<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        optimal: &Policy,
        n_actions: usize,
        epsilon: f64,
    ) -> Result<TrainerSpec> {
        let spec = match self {
            TrainerConfig::ModelFollowing {
                sigma,
                mu_plus,
                mu_minus,
            } => {
                let TrainerSpec::ModelFollowing { mut params } = gen_model_trainer(rng, epsilon)
                else {
                    unreachable!()
                };
                params.sigma = *sigma;
                if let Some(m) = mu_plus {
                    params.mu_plus = *m;
                }
                if let Some(m) = mu_minus {
                    params.mu_minus = *m;
                }
                TrainerSpec::ModelFollowing { params }
            }
            TrainerConfig::RandomTable { table: Some(t) } => {
                TrainerSpec::RandomTable { table: t.clone() }
            }
            TrainerConfig::RandomTable { table: None } => {
                gen_random_table_trainer(rng, optimal.len(), n_actions, optimal)?
            }
        };
        spec.validate(optimal, n_actions)?;
        Ok(spec)
    }
}

/// Normalized rat-position distribution around `lam_s`.
pub fn rat_distribution(lam_s: ActionIndex, n_actions: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n_actions)
        .map(|k| {
            let d = k as f64 - lam_s.0 as f64;
            (-d * d / 2.0).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

pub fn sample_rat<R: Rng + ?Sized>(
    s: StateId,
    optimal: &Policy,
    n_actions: usize,
    rng: &mut R,
) -> ActionIndex {
    ActionIndex(sample_index(&rat_distribution(optimal.get(s), n_actions), rng))
}

pub fn catch_probability(a_rat: ActionIndex, a_dog: ActionIndex) -> f64 {
    let d = a_rat.distance(a_dog) as f64;
    (-d * d / 2.0).exp()
}

pub fn catch_outcome<R: Rng + ?Sized>(a_rat: ActionIndex, a_dog: ActionIndex, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    u < catch_probability(a_rat, a_dog)
}

/// Response distribution of `spec` to action `a` in state `s`.
pub fn trainer_probs(spec: &TrainerSpec, s: StateId, a: ActionIndex, optimal: &Policy) -> Result<[f64; 3]> {
    match spec {
        TrainerSpec::ModelFollowing { params } => {
            let t = feedback_probs(a, optimal.get(s), params, &KernelKind::Gaussian)?;
            Ok([t.p_plus, t.p_minus, t.p_none])
        }
        TrainerSpec::RandomTable { table } => {
            let [p, m] = table[s.0][a.0];
            Ok([p, m, (1.0 - p - m).max(0.0)])
        }
    }
}

pub fn trainer_feedback<R: Rng + ?Sized>(
    spec: &TrainerSpec,
    s: StateId,
    a: ActionIndex,
    optimal: &Policy,
    rng: &mut R,
) -> Result<FeedbackKind> {
    let [p_plus, p_minus, _] = trainer_probs(spec, s, a, optimal)?;
    let u: f64 = rng.random();
    Ok(if u < p_plus {
        FeedbackKind::Positive
    } else if u < p_plus + p_minus {
        FeedbackKind::Negative
    } else {
        FeedbackKind::None
    })
}

/// `sigma = 1`, `mu_plus ~ U(0, 1 - eps]`, `mu_minus ~ U(0, 1]`.
pub fn gen_model_trainer<R: Rng + ?Sized>(rng: &mut R, epsilon: f64) -> TrainerSpec {
    // 1 - U[0, 1) lies in (0, 1].
    let mu_plus = (1.0 - rng.random::<f64>()) * (1.0 - epsilon);
    let mu_minus = 1.0 - rng.random::<f64>();
    TrainerSpec::ModelFollowing {
        params: FeedbackModelParams::new(mu_plus, mu_minus, 1.0, epsilon),
    }
}

/// Random feedback table in which `optimal(s)` strictly receives the most
/// positive and the least negative feedback. Rows are redrawn whole until
/// they satisfy that constraint.
pub fn gen_random_table_trainer<R: Rng + ?Sized>(
    rng: &mut R,
    n_states: usize,
    n_actions: usize,
    optimal: &Policy,
) -> Result<TrainerSpec> {
    let mut table = Vec::with_capacity(n_states);
    for s in 0..n_states {
        let best = optimal.get(StateId(s));
        let mut row = vec![[0.0; 2]; n_actions];
        let mut ok = false;
        for _ in 0..MAX_TABLE_TRIES {
            for cell in row.iter_mut() {
                let p: f64 = rng.random();
                let m = rng.random::<f64>() * (1.0 - p);
                *cell = [p, m];
            }
            if row_respects_optimum(&row, best) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::Generation(format!(
                "state {s}: no valid row within {MAX_TABLE_TRIES} draws"
            )));
        }
        table.push(row);
    }
    Ok(TrainerSpec::RandomTable { table })
}

/// Everything about an episode that is fixed before the first step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub optimal_policy: Policy,
    pub trainer: TrainerSpec,
    pub state_order: Vec<StateId>,
}

impl World {
    pub fn generate<R: Rng + ?Sized>(
        scenario: &ScenarioConfig,
        trainer: &TrainerConfig,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        scenario.validate()?;
        let optimal_policy = random_or_pinned_policy(scenario, rng);
        let trainer = trainer.resolve(rng, &optimal_policy, scenario.n_actions, epsilon)?;
        let state_order = shuffled_order(scenario.n_states, rng);
        Ok(Self {
            optimal_policy,
            trainer,
            state_order,
        })
    }
}

pub(crate) fn random_or_pinned_policy<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Policy {
    match &scenario.optimal_policy {
        Some(p) => Policy::from_indices(p),
        None => Policy::from_indices(
            &(0..scenario.n_states)
                .map(|_| rng.random_range(0..scenario.n_actions))
                .collect::<Vec<_>>(),
        ),
    }
}

pub(crate) fn shuffled_order<R: Rng + ?Sized>(n_states: usize, rng: &mut R) -> Vec<StateId> {
    let mut order: Vec<StateId> = (0..n_states).map(StateId).collect();
    order.shuffle(rng);
    order
}

/// One simulated interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: u64,
    pub s: StateId,
    pub a: ActionIndex,
    pub f: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rat: Option<ActionIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caught: Option<bool>,
}

impl TraceStep {
    pub fn record(&self) -> InteractionRecord {
        InteractionRecord {
            t: self.t,
            s: self.s,
            a: self.a,
            f: self.f,
        }
    }
}

/// A running simulated episode: scenario, world, schedule position and random streams.
#[derive(Debug, Clone)]
pub struct Environment {
    scenario: ScenarioConfig,
    world: World,
    step: usize,
    env_rng: ChaCha8Rng,
    trainer_rng: ChaCha8Rng,
    query_script: Option<Vec<Vec<usize>>>,
}

impl Environment {
    pub fn new(
        scenario: ScenarioConfig,
        world: World,
        env_rng: ChaCha8Rng,
        trainer_rng: ChaCha8Rng,
    ) -> Result<Self> {
        scenario.validate()?;
        if world.state_order.len() != scenario.n_states {
            return Err(Error::InvalidConfig(vec!["state order does not cover every state".into()]));
        }
        Ok(Self {
            scenario,
            world,
            step: 0,
            env_rng,
            trainer_rng,
            query_script: None,
        })
    }

    /// Scripted selections for a simulated QUERY user: `script[s][i]` is
    /// selected before the `i`-th step of state `s`.
    pub fn with_query_script(mut self, script: Vec<Vec<usize>>) -> Self {
        self.query_script = Some(script);
        self
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.scenario
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.scenario.total_steps()
    }

    pub fn current_state(&self) -> Option<StateId> {
        (!self.is_finished()).then(|| self.world.state_order[self.step / self.scenario.steps_per_state])
    }

    /// Act, judge, learn.
    pub fn step(&mut self, learner: &mut LearnerSession) -> Result<TraceStep> {
        let s = self
            .current_state()
            .ok_or_else(|| Error::Protocol("episode already finished".into()))?;
        let in_block = self.step % self.scenario.steps_per_state;
        if let Some(sel) = self
            .query_script
            .as_ref()
            .and_then(|script| script.get(s.0))
            .and_then(|row| row.get(in_block))
        {
            learner.query_select(ActionIndex(*sel))?;
        }

        let (rat, caught, a) = match self.scenario.kind {
            ScenarioKind::Dog => {
                let rat = sample_rat(s, &self.world.optimal_policy, self.scenario.n_actions, &mut self.env_rng);
                let a = learner.act(s)?;
                let caught = catch_outcome(rat, a, &mut self.env_rng);
                (Some(rat), Some(caught), a)
            }
            ScenarioKind::Lighting => (None, None, learner.act(s)?),
        };
        let f = trainer_feedback(&self.world.trainer, s, a, &self.world.optimal_policy, &mut self.trainer_rng)?;
        learner.observe_feedback(s, a, f)?;
        let t = self.step as u64;
        self.step += 1;
        Ok(TraceStep {
            t,
            s,
            a,
            f,
            rat,
            caught,
        })
    }
}
