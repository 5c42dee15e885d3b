//! Interactive learners sharing one act / observe contract.
//!
//! * ABLUF alternates the EM policy fixpoint with one gradient step on the
//!   kernel width after every feedback.
//! * BLUF is the same learner with the width held at a given value.
//! * ISABL runs the same EM over `(mu+, mu-)` with the indicator kernel:
//!   feedback is assumed to be positive only at the preferred action, up to a
//!   fixed error rate.
//! * UCB treats feedback as a reward `[+, -, 0] -> [1, -1, 0]` and runs UCB1
//!   independently in every state.
//! * QUERY performs no inference; the trainer selects actions directly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::{em_fixpoint, ModelShape, Policy, QuadratureGrid, DEFAULT_GRID_NODES, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::history::InteractionHistory;
use crate::model::{ActionIndex, FeedbackKind, KernelKind, StateId, DEFAULT_EPSILON};
use crate::sigma::{SigmaState, DEFAULT_SIGMA0, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN};

pub const DEFAULT_ISABL_ERROR_RATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Abluf {
        #[serde(default = "default_sigma0")]
        sigma0: f64,
    },
    Bluf {
        sigma: f64,
    },
    Isabl {
        #[serde(default = "default_error_rate")]
        error_rate: f64,
    },
    Ucb,
    Query,
}

fn default_sigma0() -> f64 {
    DEFAULT_SIGMA0
}

fn default_error_rate() -> f64 {
    DEFAULT_ISABL_ERROR_RATE
}

impl LearnerKind {
    pub fn abluf() -> Self {
        LearnerKind::Abluf {
            sigma0: DEFAULT_SIGMA0,
        }
    }

    pub fn isabl() -> Self {
        LearnerKind::Isabl {
            error_rate: DEFAULT_ISABL_ERROR_RATE,
        }
    }

    /// Short name used in result tables, e.g. `BLUF(sigma=0.1)`.
    pub fn label(&self) -> String {
        match self {
            LearnerKind::Abluf { .. } => "ABLUF".into(),
            LearnerKind::Bluf { sigma } => format!("BLUF(sigma={sigma})"),
            LearnerKind::Isabl { .. } => "ISABL".into(),
            LearnerKind::Ucb => "UCB".into(),
            LearnerKind::Query => "QUERY".into(),
        }
    }

    pub fn uses_feedback(&self) -> bool {
        !matches!(self, LearnerKind::Query)
    }

    pub fn validate(&self, settings: &LearnerSettings) -> Result<()> {
        let mut errs = Vec::new();
        match *self {
            LearnerKind::Abluf { sigma0 } => {
                if !(sigma0 >= settings.sigma_min && sigma0 <= settings.sigma_max) {
                    errs.push(format!(
                        "ABLUF sigma0 {sigma0} outside [{}, {}]",
                        settings.sigma_min, settings.sigma_max
                    ));
                }
            }
            LearnerKind::Bluf { sigma } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    errs.push(format!("BLUF sigma must be positive, got {sigma}"));
                }
            }
            LearnerKind::Isabl { error_rate } => {
                if !(error_rate > 0.0 && error_rate < 0.5) {
                    errs.push(format!("ISABL error_rate must lie in (0, 0.5), got {error_rate}"));
                }
            }
            LearnerKind::Ucb | LearnerKind::Query => {}
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

/// Numerical settings shared by the EM-based learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    pub epsilon: f64,
    pub grid_nodes: usize,
    pub max_em_iters: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

impl Default for LearnerSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            grid_nodes: DEFAULT_GRID_NODES,
            max_em_iters: DEFAULT_MAX_ITERS,
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

/// Per-cell reward tallies for UCB1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbStats {
    n_actions: usize,
    reward_sum: Vec<f64>,
    visits: Vec<u32>,
}

impl UcbStats {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_actions,
            reward_sum: vec![0.0; n_states * n_actions],
            visits: vec![0; n_states * n_actions],
        }
    }

    pub fn update(&mut self, s: StateId, a: ActionIndex, reward: f64) {
        let i = s.0 * self.n_actions + a.0;
        self.reward_sum[i] += reward;
        self.visits[i] += 1;
    }

    pub fn visits(&self, s: StateId, a: ActionIndex) -> u32 {
        self.visits[s.0 * self.n_actions + a.0]
    }

    pub fn state_visits(&self, s: StateId) -> u32 {
        self.visits[s.0 * self.n_actions..(s.0 + 1) * self.n_actions]
            .iter()
            .sum()
    }

    pub fn mean(&self, s: StateId, a: ActionIndex) -> Option<f64> {
        let i = s.0 * self.n_actions + a.0;
        (self.visits[i] > 0).then(|| self.reward_sum[i] / f64::from(self.visits[i]))
    }

    /// `mean + sqrt(2 ln t_s / t_sa)`, infinite for an untried action.
    pub fn ucb_value(&self, s: StateId, a: ActionIndex) -> f64 {
        let t_sa = self.visits(s, a);
        if t_sa == 0 {
            return f64::INFINITY;
        }
        let t_s = f64::from(self.state_visits(s));
        self.mean(s, a).unwrap() + (2.0 * t_s.ln() / f64::from(t_sa)).sqrt()
    }

    /// Highest UCB value, lowest index on ties (so untried actions go first, in order).
    pub fn select(&self, s: StateId) -> ActionIndex {
        argmax((0..self.n_actions).map(|a| self.ucb_value(s, ActionIndex(a))))
    }

    /// The reported policy entry: best empirical mean among tried actions.
    fn greedy(&self, s: StateId) -> Option<ActionIndex> {
        let means: Vec<f64> = (0..self.n_actions)
            .map(|a| self.mean(s, ActionIndex(a)).unwrap_or(f64::NEG_INFINITY))
            .collect();
        means
            .iter()
            .any(|m| m.is_finite())
            .then(|| argmax(means.iter().copied()))
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> ActionIndex {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    ActionIndex(best)
}

#[derive(Debug, Clone)]
enum Engine {
    Em {
        grid: QuadratureGrid,
        kernel: KernelKind,
        sigma: SigmaState,
        adapt_sigma: bool,
    },
    Ucb(UcbStats),
    Query {
        pending: Option<ActionIndex>,
    },
}

/// Learner state for one training run.
#[derive(Debug, Clone)]
pub struct LearnerSession {
    kind: LearnerKind,
    settings: LearnerSettings,
    history: InteractionHistory,
    policy: Policy,
    engine: Engine,
    awaiting: Option<(StateId, ActionIndex)>,
    last_action: Option<ActionIndex>,
    em_iterations: usize,
    em_converged: bool,
}

impl LearnerSession {
    /// The EM learners start from a uniformly random policy drawn from `rng`;
    /// UCB and QUERY start from the zero policy and leave `rng` untouched.
    pub fn new<R: Rng + ?Sized>(
        kind: LearnerKind,
        n_states: usize,
        n_actions: usize,
        settings: LearnerSettings,
        rng: &mut R,
    ) -> Result<Self> {
        let mut errs = Vec::new();
        if n_states < 1 {
            errs.push("n_states must be >= 1".to_string());
        }
        if n_actions < 2 {
            errs.push(format!("n_actions must be >= 2, got {n_actions}"));
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        kind.validate(&settings)?;

        let em = |kernel: KernelKind, sigma: SigmaState, adapt_sigma: bool| -> Result<Engine> {
            Ok(Engine::Em {
                grid: QuadratureGrid::square(settings.grid_nodes, settings.epsilon)?,
                kernel,
                sigma,
                adapt_sigma,
            })
        };
        let engine = match kind {
            LearnerKind::Abluf { sigma0 } => em(
                KernelKind::Gaussian,
                SigmaState::new(sigma0, settings.sigma_min, settings.sigma_max)?,
                true,
            )?,
            LearnerKind::Bluf { sigma } => {
                em(KernelKind::Gaussian, SigmaState::new(sigma, sigma, sigma)?, false)?
            }
            LearnerKind::Isabl { error_rate } => em(
                KernelKind::IsablIndicator { error_rate },
                SigmaState::new(1.0, 1.0, 1.0)?,
                false,
            )?,
            LearnerKind::Ucb => Engine::Ucb(UcbStats::new(n_states, n_actions)),
            LearnerKind::Query => Engine::Query { pending: None },
        };
        let policy = match engine {
            Engine::Em { .. } => Policy::from_indices(
                &(0..n_states)
                    .map(|_| rng.random_range(0..n_actions))
                    .collect::<Vec<_>>(),
            ),
            _ => Policy::zeros(n_states),
        };
        Ok(Self {
            kind,
            settings,
            history: InteractionHistory::new(n_states, n_actions),
            policy,
            engine,
            awaiting: None,
            last_action: None,
            em_iterations: 0,
            em_converged: true,
        })
    }

    pub fn kind(&self) -> &LearnerKind {
        &self.kind
    }

    pub fn settings(&self) -> &LearnerSettings {
        &self.settings
    }

    pub fn n_states(&self) -> usize {
        self.history.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.history.n_actions()
    }

    pub fn history(&self) -> &InteractionHistory {
        &self.history
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn last_action(&self) -> Option<ActionIndex> {
        self.last_action
    }

    /// Current kernel width for the Gaussian learners.
    pub fn sigma(&self) -> Option<f64> {
        match (&self.engine, &self.kind) {
            (Engine::Em { sigma, .. }, LearnerKind::Abluf { .. } | LearnerKind::Bluf { .. }) => {
                Some(sigma.sigma())
            }
            _ => None,
        }
    }

    /// Width after every update, starting with the initial value (ABLUF and BLUF only).
    pub fn sigma_trace(&self) -> Option<&[f64]> {
        match (&self.engine, &self.kind) {
            (Engine::Em { sigma, .. }, LearnerKind::Abluf { .. } | LearnerKind::Bluf { .. }) => {
                Some(sigma.trace())
            }
            _ => None,
        }
    }

    /// Iteration count and convergence flag of the most recent EM fixpoint.
    pub fn em_diagnostics(&self) -> (usize, bool) {
        (self.em_iterations, self.em_converged)
    }

    pub fn ucb_stats(&self) -> Option<&UcbStats> {
        match &self.engine {
            Engine::Ucb(stats) => Some(stats),
            _ => None,
        }
    }

    pub fn ucb_value(&self, s: StateId, a: ActionIndex) -> Result<f64> {
        match &self.engine {
            Engine::Ucb(stats) => Ok(stats.ucb_value(s, a)),
            _ => Err(Error::Unsupported(format!("{} has no UCB values", self.kind.label()))),
        }
    }

    /// Chooses the action for state `s`.
    pub fn act(&mut self, s: StateId) -> Result<ActionIndex> {
        StateId::checked(s.0, self.n_states())?;
        let a = match &mut self.engine {
            Engine::Em { .. } => self.policy.get(s),
            Engine::Ucb(stats) => stats.select(s),
            Engine::Query { pending } => {
                let a = pending
                    .take()
                    .or(self.last_action)
                    .ok_or(Error::SelectionRequired)?;
                self.policy.set(s, a);
                a
            }
        };
        self.awaiting = Some((s, a));
        self.last_action = Some(a);
        Ok(a)
    }

    /// Direct action choice; only meaningful for QUERY. The last selection before `act` wins.
    pub fn query_select(&mut self, a: ActionIndex) -> Result<()> {
        let n_actions = self.n_actions();
        match &mut self.engine {
            Engine::Query { pending } => {
                *pending = Some(ActionIndex::checked(a.0, n_actions)?);
                Ok(())
            }
            _ => Err(Error::Unsupported(format!(
                "{} does not accept direct selections",
                self.kind.label()
            ))),
        }
    }

    /// Feedback `f` on the action returned by the preceding `act(s)`.
    pub fn observe_feedback(&mut self, s: StateId, a: ActionIndex, f: FeedbackKind) -> Result<()> {
        match self.awaiting {
            Some(expected) if expected == (s, a) => {}
            Some((es, ea)) => {
                return Err(Error::Protocol(format!(
                    "feedback for (s={s}, a={a}) but the last action was (s={es}, a={ea})"
                )))
            }
            None => {
                return Err(Error::Protocol(
                    "feedback received before any action was taken".into(),
                ))
            }
        }
        self.history.record(s, a, f)?;
        self.awaiting = None;

        match &mut self.engine {
            Engine::Em {
                grid,
                kernel,
                sigma,
                adapt_sigma,
            } => {
                let shape = ModelShape {
                    kind: *kernel,
                    sigma: sigma.sigma(),
                    epsilon: self.settings.epsilon,
                };
                let out = em_fixpoint(
                    &self.history,
                    &self.policy,
                    &shape,
                    grid,
                    self.settings.max_em_iters,
                );
                self.policy = out.policy;
                self.em_iterations = out.iterations;
                self.em_converged = out.converged;
                if *adapt_sigma {
                    sigma.step(&self.history, &self.policy, self.settings.epsilon);
                } else if matches!(kernel, KernelKind::Gaussian) {
                    sigma.apply_gradient(0.0);
                }
            }
            Engine::Ucb(stats) => {
                stats.update(s, a, f.reward());
                if let Some(best) = stats.greedy(s) {
                    self.policy.set(s, best);
                }
            }
            Engine::Query { .. } => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use FeedbackKind::*;

    fn session(kind: LearnerKind, n_states: usize, n_actions: usize) -> LearnerSession {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        LearnerSession::new(kind, n_states, n_actions, LearnerSettings::default(), &mut rng).unwrap()
    }

    fn step(l: &mut LearnerSession, s: usize, f: FeedbackKind) -> ActionIndex {
        let a = l.act(StateId(s)).unwrap();
        l.observe_feedback(StateId(s), a, f).unwrap();
        a
    }

    #[test]
    fn fresh_em_learner_acts_on_its_random_policy() {
        let mut l = session(LearnerKind::abluf(), 3, 6);
        for s in 0..3 {
            let lam = l.policy().get(StateId(s));
            assert_eq!(l.act(StateId(s)).unwrap(), lam);
        }
    }

    #[test]
    fn fresh_ucb_starts_at_action_zero() {
        let mut l = session(LearnerKind::Ucb, 1, 3);
        assert_eq!(l.act(StateId(0)).unwrap(), ActionIndex(0));
    }

    #[test]
    fn ucb_values_by_hand() {
        let mut stats = UcbStats::new(1, 3);
        let s = StateId(0);
        stats.update(s, ActionIndex(0), 1.0);
        stats.update(s, ActionIndex(0), -1.0);
        stats.update(s, ActionIndex(1), 1.0);
        stats.update(s, ActionIndex(2), -1.0);
        assert_abs_diff_eq!(stats.ucb_value(s, ActionIndex(0)), 1.177_410_022_515_474_7, epsilon = 1e-14);
        assert_abs_diff_eq!(stats.ucb_value(s, ActionIndex(1)), 2.665_109_222_315_395_5, epsilon = 1e-14);
        assert_abs_diff_eq!(stats.ucb_value(s, ActionIndex(2)), 0.665_109_222_315_395_5, epsilon = 1e-14);
        assert_eq!(stats.select(s), ActionIndex(1));
        assert_eq!(UcbStats::new(1, 3).ucb_value(s, ActionIndex(0)), f64::INFINITY);
    }

    #[test]
    fn ucb_bonus_shrinks_when_one_action_is_tried_alone() {
        let mut prev = f64::INFINITY;
        for t in 3..50u32 {
            let mut stats = UcbStats::new(1, 2);
            for _ in 0..t {
                stats.update(StateId(0), ActionIndex(0), 0.0);
            }
            let b = stats.ucb_value(StateId(0), ActionIndex(0));
            assert!(b < prev);
            prev = b;
        }
    }

    #[test]
    fn ucb_learner_follows_session_protocol() {
        let mut l = session(LearnerKind::Ucb, 1, 3);
        // [1, -1] at a0, [1] at a1, [-1] at a2 -> a1 next
        assert_eq!(step(&mut l, 0, Positive), ActionIndex(0));
        assert_eq!(step(&mut l, 0, Positive), ActionIndex(1));
        assert_eq!(step(&mut l, 0, Negative), ActionIndex(2));
        // a0 and a1 tie at 1 + sqrt(2 ln 3); the lower index wins
        assert_eq!(step(&mut l, 0, Negative), ActionIndex(0));
        // now a0: [1, -1], a1: [1], a2: [-1] with t_s = 4
        assert_eq!(l.act(StateId(0)).unwrap(), ActionIndex(1));
        assert_eq!(l.ucb_stats().unwrap().mean(StateId(0), ActionIndex(0)), Some(0.0));
    }

    #[test]
    fn ucb_no_feedback_pulls_mean_toward_zero() {
        let mut l = session(LearnerKind::Ucb, 1, 2);
        step(&mut l, 0, Positive);
        assert_eq!(l.ucb_stats().unwrap().mean(StateId(0), ActionIndex(0)), Some(1.0));
        l.act(StateId(0)).unwrap(); // a1, untried
        l.observe_feedback(StateId(0), ActionIndex(1), None).unwrap();
        let a = l.act(StateId(0)).unwrap();
        assert_eq!(a, ActionIndex(0));
        l.observe_feedback(StateId(0), a, None).unwrap();
        let stats = l.ucb_stats().unwrap();
        assert_eq!(stats.mean(StateId(0), ActionIndex(0)), Some(0.5));
        assert_eq!(stats.visits(StateId(0), ActionIndex(0)), 2);
    }

    #[test]
    fn ucb_visits_track_history() {
        let mut l = session(LearnerKind::Ucb, 2, 4);
        for i in 0..20 {
            step(&mut l, i % 2, if i % 3 == 0 { Positive } else { Negative });
        }
        let stats = l.ucb_stats().unwrap();
        for s in 0..2 {
            for a in 0..4 {
                assert_eq!(stats.visits(StateId(s), ActionIndex(a)), l.history().visits(StateId(s), ActionIndex(a)));
            }
        }
    }

    #[test]
    fn query_selection_semantics() {
        let mut l = session(LearnerKind::Query, 2, 10);
        assert!(matches!(l.act(StateId(0)), Err(Error::SelectionRequired)));
        l.query_select(ActionIndex(7)).unwrap();
        assert_eq!(l.act(StateId(0)).unwrap(), ActionIndex(7));
        l.query_select(ActionIndex(7)).unwrap();
        l.query_select(ActionIndex(3)).unwrap();
        assert_eq!(l.act(StateId(0)).unwrap(), ActionIndex(3));
        // nothing pending: the light stays where it was
        assert_eq!(l.act(StateId(1)).unwrap(), ActionIndex(3));
        assert!(l.query_select(ActionIndex(10)).is_err());
        assert_eq!(l.policy().indices(), vec![3, 3]);
    }

    #[test]
    fn selection_is_rejected_by_feedback_learners() {
        let mut l = session(LearnerKind::abluf(), 1, 3);
        assert!(matches!(l.query_select(ActionIndex(1)), Err(Error::Unsupported(_))));
    }

    #[test]
    fn feedback_must_match_last_action() {
        let mut l = session(LearnerKind::Ucb, 2, 3);
        assert!(matches!(
            l.observe_feedback(StateId(0), ActionIndex(0), Positive),
            Err(Error::Protocol(_))
        ));
        let a = l.act(StateId(1)).unwrap();
        assert!(l.observe_feedback(StateId(0), a, Positive).is_err());
        assert!(l.observe_feedback(StateId(1), ActionIndex(2), Positive).is_err());
        l.observe_feedback(StateId(1), a, Positive).unwrap();
        // a second feedback without a new action
        assert!(l.observe_feedback(StateId(1), a, Positive).is_err());
    }

    #[test]
    fn abluf_updates_policy_and_sigma() {
        let mut l = session(LearnerKind::abluf(), 1, 6);
        let a = step(&mut l, 0, Positive);
        assert_eq!(l.policy().get(StateId(0)), a);
        assert_eq!(l.sigma_trace().unwrap().len(), 2);
        let (iters, converged) = l.em_diagnostics();
        assert!(converged && iters >= 1);
    }

    #[test]
    fn abluf_negative_feedback_moves_away() {
        let mut l = session(LearnerKind::abluf(), 1, 6);
        let a = step(&mut l, 0, Negative);
        assert_ne!(l.policy().get(StateId(0)), a);
    }

    #[test]
    fn bluf_keeps_sigma_fixed() {
        let mut l = session(LearnerKind::Bluf { sigma: 3.0 }, 2, 4);
        for i in 0..6 {
            step(&mut l, i % 2, Negative);
        }
        assert!(l.sigma_trace().unwrap().iter().all(|&s| s == 3.0));
        assert_eq!(l.sigma_trace().unwrap().len(), 7);
    }

    #[test]
    fn isabl_has_no_sigma() {
        let l = session(LearnerKind::isabl(), 1, 3);
        assert!(l.sigma().is_none());
        assert!(l.sigma_trace().is_none());
    }

    #[test]
    fn invalid_kinds_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = LearnerSettings::default();
        for kind in [
            LearnerKind::Bluf { sigma: 0.0 },
            LearnerKind::Isabl { error_rate: 0.6 },
            LearnerKind::Abluf { sigma0: 100.0 },
        ] {
            assert!(LearnerSession::new(kind, 1, 3, st, &mut rng).is_err());
        }
        assert!(LearnerSession::new(LearnerKind::Ucb, 1, 1, st, &mut rng).is_err());
    }

    #[test]
    fn learner_kind_json() {
        let k: LearnerKind = serde_json::from_str(r#"{"kind":"abluf"}"#).unwrap();
        assert_eq!(k, LearnerKind::abluf());
        let k: LearnerKind = serde_json::from_str(r#"{"kind":"bluf","sigma":0.1}"#).unwrap();
        assert_eq!(k.label(), "BLUF(sigma=0.1)");
        let k: LearnerKind = serde_json::from_str(r#"{"kind":"isabl"}"#).unwrap();
        assert_eq!(k, LearnerKind::isabl());
    }
}
