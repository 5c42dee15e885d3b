//! Policy inference by EM over the latent feedback magnitudes.
//!
//! With the kernel width held fixed, the preferred action of each state is
//! re-estimated as
//!
//! ```text
//! lam'(s) = argmax_c  ∫∫ P(h | mu+, mu-, lam) * ln P(h^s | mu+, mu-, lam(s) = c)  dmu+ dmu-
//! ```
//!
//! over the rectangle `[0, 1 - eps] x [0, 1]` with a flat prior. The integral
//! is evaluated with a tensor-product trapezoid rule. Posterior weights are
//! kept in the log domain and shifted by their maximum before exponentiation;
//! any positive rescaling leaves the argmax unchanged.
//!
//! Inside the logarithm the `ln mu` parts of the positive and negative terms
//! are dropped because they do not depend on the candidate action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::InteractionHistory;
use crate::model::{floored_ln, probs_from_kernel, ActionIndex, KernelKind, StateId};

pub const DEFAULT_GRID_NODES: usize = 51;
pub const DEFAULT_MAX_ITERS: usize = 50;

/// Preferred action per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Policy(Vec<ActionIndex>);

impl Policy {
    pub fn new(actions: Vec<ActionIndex>, n_actions: usize) -> Result<Self> {
        for a in &actions {
            ActionIndex::checked(a.0, n_actions)?;
        }
        Ok(Policy(actions))
    }

    /// Unchecked constructor for literals.
    pub fn from_indices(idx: &[usize]) -> Self {
        Policy(idx.iter().copied().map(ActionIndex).collect())
    }

    pub fn zeros(n_states: usize) -> Self {
        Policy(vec![ActionIndex(0); n_states])
    }

    #[inline]
    pub fn get(&self, s: StateId) -> ActionIndex {
        self.0[s.0]
    }

    pub fn set(&mut self, s: StateId, a: ActionIndex) {
        self.0[s.0] = a;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[ActionIndex] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|a| a.0).collect()
    }
}

/// Kernel family plus the parameters the E-step holds fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub kind: KernelKind,
    pub sigma: f64,
    pub epsilon: f64,
}

impl ModelShape {
    pub fn gaussian(sigma: f64, epsilon: f64) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            sigma,
            epsilon,
        }
    }

    pub fn isabl(error_rate: f64, epsilon: f64) -> Self {
        Self {
            kind: KernelKind::IsablIndicator { error_rate },
            // unused by the indicator kernel
            sigma: 1.0,
            epsilon,
        }
    }

    #[inline]
    fn kernel(&self, distance: usize) -> f64 {
        self.kind.value_at_distance(distance, self.sigma)
    }
}

/// Tensor-product trapezoid rule on `[0, 1 - eps] x [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes_mu_plus: Vec<f64>,
    nodes_mu_minus: Vec<f64>,
    weights_mu_plus: Vec<f64>,
    weights_mu_minus: Vec<f64>,
}

impl QuadratureGrid {
    pub fn trapezoid(n_mu_plus: usize, n_mu_minus: usize, epsilon: f64) -> Result<Self> {
        let mut errs = Vec::new();
        for (name, n) in [("mu_plus", n_mu_plus), ("mu_minus", n_mu_minus)] {
            if n < 3 || n % 2 == 0 {
                errs.push(format!("{name} node count must be odd and >= 3, got {n}"));
            }
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            errs.push(format!("epsilon must lie in (0, 1), got {epsilon}"));
        }
        if !errs.is_empty() {
            return Err(Error::InvalidConfig(errs));
        }
        let (nodes_mu_plus, weights_mu_plus) = trapezoid_axis(n_mu_plus, 1.0 - epsilon);
        let (nodes_mu_minus, weights_mu_minus) = trapezoid_axis(n_mu_minus, 1.0);
        Ok(Self {
            nodes_mu_plus,
            nodes_mu_minus,
            weights_mu_plus,
            weights_mu_minus,
        })
    }

    pub fn square(nodes: usize, epsilon: f64) -> Result<Self> {
        Self::trapezoid(nodes, nodes, epsilon)
    }

    pub fn nodes_mu_plus(&self) -> &[f64] {
        &self.nodes_mu_plus
    }

    pub fn nodes_mu_minus(&self) -> &[f64] {
        &self.nodes_mu_minus
    }

    pub fn len(&self) -> usize {
        self.nodes_mu_plus.len() * self.nodes_mu_minus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(mu_plus, mu_minus, weight)` in a fixed order: `mu_plus` outer, `mu_minus` inner.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.nodes_mu_plus
            .iter()
            .zip(&self.weights_mu_plus)
            .flat_map(move |(&mp, &wp)| {
                self.nodes_mu_minus
                    .iter()
                    .zip(&self.weights_mu_minus)
                    .map(move |(&mm, &wm)| (mp, mm, wp * wm))
            })
    }

    pub fn total_weight(&self) -> f64 {
        self.weights_mu_plus.iter().sum::<f64>() * self.weights_mu_minus.iter().sum::<f64>()
    }
}

fn trapezoid_axis(n: usize, upper: f64) -> (Vec<f64>, Vec<f64>) {
    let h = upper / (n - 1) as f64;
    let nodes = (0..n).map(|i| i as f64 * h).collect();
    let weights = (0..n)
        .map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h })
        .collect();
    (nodes, weights)
}

/// `ln P(h | mu+, mu-, lam)` with every probability floored before the log.
pub fn log_weight(
    history: &InteractionHistory,
    mu_plus: f64,
    mu_minus: f64,
    lam: &Policy,
    shape: &ModelShape,
) -> f64 {
    let mut total = 0.0;
    for s in 0..history.n_states() {
        let s = StateId(s);
        let lam_s = lam.get(s);
        for (a, c) in history.state_counts(s).iter().enumerate() {
            if c.total() == 0 {
                continue;
            }
            let e = shape.kernel(lam_s.distance(ActionIndex(a)));
            let p = probs_from_kernel(e, mu_plus, mu_minus, shape.epsilon, &shape.kind);
            total += f64::from(c.n_plus) * floored_ln(p.p_plus)
                + f64::from(c.n_minus) * floored_ln(p.p_minus)
                + f64::from(c.n_none) * floored_ln(p.p_none);
        }
    }
    total
}

/// `ln P(h^s | mu+, mu-, lam(s) = candidate)` without the `ln mu+` / `ln mu-`
/// constants. Depends on the magnitudes only through the no-feedback terms.
pub fn state_log_term(
    history: &InteractionHistory,
    s: StateId,
    candidate: ActionIndex,
    mu_plus: f64,
    mu_minus: f64,
    shape: &ModelShape,
) -> f64 {
    let mut total = 0.0;
    for (a, c) in history.state_counts(s).iter().enumerate() {
        if c.total() == 0 {
            continue;
        }
        let e = shape.kernel(candidate.distance(ActionIndex(a)));
        let neg = shape.kind.negative_factor(e, shape.epsilon);
        let p = probs_from_kernel(e, mu_plus, mu_minus, shape.epsilon, &shape.kind);
        total += f64::from(c.n_plus) * floored_ln(e)
            + f64::from(c.n_minus) * floored_ln(neg)
            + f64::from(c.n_none) * floored_ln(p.p_none);
    }
    total
}

/// Quadrature estimate of the E-step objective for one `(s, candidate)`.
///
/// Reference implementation: evaluates the weight and the log term at every
/// node directly. [`em_update`] computes the same sum in factored form.
pub fn e_step_objective(
    history: &InteractionHistory,
    s: StateId,
    candidate: ActionIndex,
    lam_prev: &Policy,
    shape: &ModelShape,
    grid: &QuadratureGrid,
) -> f64 {
    let log_w: Vec<f64> = grid
        .points()
        .map(|(mp, mm, _)| log_weight(history, mp, mm, lam_prev, shape))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    grid.points()
        .zip(&log_w)
        .map(|((mp, mm, q), &lw)| {
            q * (lw - max).exp() * state_log_term(history, s, candidate, mp, mm, shape)
        })
        .sum()
}

/// Posterior-weighted quantities shared by every `(s, candidate)` within one EM update.
///
/// Because both kernels depend only on `|a - lam(s)|`, the history collapses
/// to counts per distance and the per-node no-feedback log terms form a
/// `nodes x K` table. The E-step objective of a candidate then needs only
/// `K` sums over that table.
pub struct EStep<'h> {
    history: &'h InteractionHistory,
    shape: ModelShape,
    /// `ln ê(d)`, floored.
    ln_kernel: Vec<f64>,
    /// `ln` of the negative-feedback shape at distance `d`, floored.
    ln_negative: Vec<f64>,
    /// `sum_nodes w(node)` with the max-shifted posterior weight.
    weight_sum: f64,
    /// `sum_nodes w(node) * ln p0(node, d)` for each distance `d`.
    weighted_ln_none: Vec<f64>,
}

impl<'h> EStep<'h> {
    pub fn new(
        history: &'h InteractionHistory,
        lam_prev: &Policy,
        shape: &ModelShape,
        grid: &QuadratureGrid,
    ) -> Self {
        let k = history.n_actions();
        let kernel: Vec<f64> = (0..k).map(|d| shape.kernel(d)).collect();
        let negative: Vec<f64> = kernel
            .iter()
            .map(|&e| shape.kind.negative_factor(e, shape.epsilon))
            .collect();
        let ln_kernel: Vec<f64> = kernel.iter().map(|&e| floored_ln(e)).collect();
        let ln_negative: Vec<f64> = negative.iter().map(|&g| floored_ln(g)).collect();

        // History counts grouped by distance to the previous policy.
        let mut by_dist = vec![[0.0f64; 3]; k];
        for s in 0..history.n_states() {
            let s = StateId(s);
            let lam_s = lam_prev.get(s);
            for (a, c) in history.state_counts(s).iter().enumerate() {
                let d = lam_s.distance(ActionIndex(a));
                by_dist[d][0] += f64::from(c.n_plus);
                by_dist[d][1] += f64::from(c.n_minus);
                by_dist[d][2] += f64::from(c.n_none);
            }
        }

        let n_nodes = grid.len();
        let mut ln_none = Vec::with_capacity(n_nodes * k);
        let mut log_w = Vec::with_capacity(n_nodes);
        let mut quad = Vec::with_capacity(n_nodes);
        for (mp, mm, q) in grid.points() {
            let mut lw = 0.0;
            for d in 0..k {
                let p0 = (1.0 - mp * kernel[d] - mm * negative[d]).clamp(0.0, 1.0);
                let l0 = floored_ln(p0);
                ln_none.push(l0);
                let [np, nm, nn] = by_dist[d];
                if np > 0.0 {
                    lw += np * floored_ln(mp * kernel[d]);
                }
                if nm > 0.0 {
                    lw += nm * floored_ln(mm * negative[d]);
                }
                if nn > 0.0 {
                    lw += nn * l0;
                }
            }
            log_w.push(lw);
            quad.push(q);
        }
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut weight_sum = 0.0;
        let mut weighted_ln_none = vec![0.0; k];
        for (node, (&lw, &q)) in log_w.iter().zip(&quad).enumerate() {
            let w = q * (lw - max).exp();
            weight_sum += w;
            let row = &ln_none[node * k..(node + 1) * k];
            for (acc, &l0) in weighted_ln_none.iter_mut().zip(row) {
                *acc += w * l0;
            }
        }

        Self {
            history,
            shape: *shape,
            ln_kernel,
            ln_negative,
            weight_sum,
            weighted_ln_none,
        }
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    /// E-step objective of `candidate` in state `s`.
    pub fn objective(&self, s: StateId, candidate: ActionIndex) -> f64 {
        let mut fixed = 0.0;
        let mut none = 0.0;
        for (a, c) in self.history.state_counts(s).iter().enumerate() {
            if c.total() == 0 {
                continue;
            }
            let d = candidate.distance(ActionIndex(a));
            fixed += f64::from(c.n_plus) * self.ln_kernel[d]
                + f64::from(c.n_minus) * self.ln_negative[d];
            none += f64::from(c.n_none) * self.weighted_ln_none[d];
        }
        fixed * self.weight_sum + none
    }

    /// Candidate maximizing the objective; the lowest index wins ties.
    pub fn best(&self, s: StateId) -> ActionIndex {
        let mut best = ActionIndex(0);
        let mut best_val = f64::NEG_INFINITY;
        for c in 0..self.history.n_actions() {
            let v = self.objective(s, ActionIndex(c));
            if v > best_val {
                best_val = v;
                best = ActionIndex(c);
            }
        }
        best
    }
}

/// One EM update: per-state argmax of the E-step objective under `lam_prev`.
pub fn em_update(
    history: &InteractionHistory,
    lam_prev: &Policy,
    shape: &ModelShape,
    grid: &QuadratureGrid,
) -> Policy {
    let estep = EStep::new(history, lam_prev, shape, grid);
    Policy(
        (0..history.n_states())
            .map(|s| estep.best(StateId(s)))
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixpointOutcome {
    pub policy: Policy,
    pub iterations: usize,
    /// False when `max_iters` was reached without two equal consecutive policies.
    pub converged: bool,
}

/// Iterates [`em_update`] until the policy repeats or `max_iters` updates have run.
pub fn em_fixpoint(
    history: &InteractionHistory,
    lam_init: &Policy,
    shape: &ModelShape,
    grid: &QuadratureGrid,
    max_iters: usize,
) -> FixpointOutcome {
    let max_iters = max_iters.max(1);
    let mut lam = lam_init.clone();
    for i in 1..=max_iters {
        let next = em_update(history, &lam, shape, grid);
        if next == lam {
            return FixpointOutcome {
                policy: next,
                iterations: i,
                converged: true,
            };
        }
        lam = next;
    }
    FixpointOutcome {
        policy: lam,
        iterations: max_iters,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeedbackKind::{self, *};
    use approx::assert_abs_diff_eq;

    const EPS: f64 = 0.01;

    fn grid() -> QuadratureGrid {
        QuadratureGrid::square(DEFAULT_GRID_NODES, EPS).unwrap()
    }

    fn hist(n_states: usize, n_actions: usize, recs: &[(usize, usize, FeedbackKind)]) -> InteractionHistory {
        let mut h = InteractionHistory::new(n_states, n_actions);
        for &(s, a, f) in recs {
            h.record(StateId(s), ActionIndex(a), f).unwrap();
        }
        h
    }

    #[test]
    fn grid_weights_cover_the_rectangle() {
        let g = grid();
        assert_abs_diff_eq!(g.total_weight(), 1.0 - EPS, epsilon = 1e-9);
        let sum: f64 = g.points().map(|p| p.2).sum();
        assert_abs_diff_eq!(sum, 1.0 - EPS, epsilon = 1e-9);
        assert_eq!(g.len(), 51 * 51);
        assert_abs_diff_eq!(*g.nodes_mu_plus().last().unwrap(), 1.0 - EPS, epsilon = 1e-15);
        assert_eq!(*g.nodes_mu_minus().last().unwrap(), 1.0);
    }

    #[test]
    fn grid_rejects_even_or_tiny_node_counts() {
        assert!(QuadratureGrid::trapezoid(50, 51, EPS).is_err());
        assert!(QuadratureGrid::trapezoid(51, 1, EPS).is_err());
        assert!(QuadratureGrid::trapezoid(3, 3, EPS).is_ok());
    }

    #[test]
    fn log_weight_examples() {
        let shape = ModelShape::gaussian(1.0, EPS);
        let lam = Policy::from_indices(&[1]);
        let empty = InteractionHistory::new(1, 3);
        assert_eq!(log_weight(&empty, 0.5, 0.5, &lam, &shape), 0.0);

        let h = hist(1, 3, &[(0, 1, Positive)]);
        assert_abs_diff_eq!(log_weight(&h, 0.8, 0.3, &lam, &shape), 0.8f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn log_weight_is_additive_over_histories() {
        let shape = ModelShape::gaussian(1.3, EPS);
        let lam = Policy::from_indices(&[2, 0]);
        let r1 = [(0, 1, Positive), (1, 2, Negative), (0, 0, None)];
        let r2 = [(1, 0, Positive), (0, 3, Negative)];
        let all: Vec<_> = r1.iter().chain(&r2).copied().collect();
        let (h1, h2, h12) = (hist(2, 4, &r1), hist(2, 4, &r2), hist(2, 4, &all));
        let lhs = log_weight(&h12, 0.6, 0.7, &lam, &shape);
        let rhs = log_weight(&h1, 0.6, 0.7, &lam, &shape) + log_weight(&h2, 0.6, 0.7, &lam, &shape);
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn state_log_term_examples() {
        let shape = ModelShape::gaussian(1.0, EPS);
        let h = hist(1, 3, &[(0, 1, Positive)]);
        assert_eq!(state_log_term(&h, StateId(0), ActionIndex(1), 0.5, 0.5, &shape), 0.0);
        assert_abs_diff_eq!(
            state_log_term(&h, StateId(0), ActionIndex(2), 0.5, 0.5, &shape),
            -0.5,
            epsilon = 1e-14
        );
        let h = hist(1, 3, &[(0, 1, Negative)]);
        assert_abs_diff_eq!(
            state_log_term(&h, StateId(0), ActionIndex(1), 0.5, 0.5, &shape),
            0.01f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn state_log_term_depends_on_magnitudes_only_through_silence() {
        let shape = ModelShape::gaussian(0.8, EPS);
        let h = hist(1, 4, &[(0, 0, Positive), (0, 3, Negative), (0, 2, Positive)]);
        let a = state_log_term(&h, StateId(0), ActionIndex(1), 0.1, 0.9, &shape);
        let b = state_log_term(&h, StateId(0), ActionIndex(1), 0.7, 0.2, &shape);
        assert_eq!(a, b);
    }

    #[test]
    fn factored_objective_matches_reference() {
        let g = QuadratureGrid::square(21, EPS).unwrap();
        let h = hist(
            2,
            4,
            &[(0, 0, Positive), (0, 1, None), (0, 3, Negative), (1, 2, Positive), (1, 2, None), (1, 0, Negative)],
        );
        let lam = Policy::from_indices(&[1, 3]);
        for shape in [ModelShape::gaussian(0.7, EPS), ModelShape::isabl(0.1, EPS)] {
            let estep = EStep::new(&h, &lam, &shape, &g);
            for s in 0..2 {
                for c in 0..4 {
                    let fast = estep.objective(StateId(s), ActionIndex(c));
                    let slow = e_step_objective(&h, StateId(s), ActionIndex(c), &lam, &shape, &g);
                    assert_abs_diff_eq!(fast, slow, epsilon = 1e-9 * slow.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn empty_state_objective_is_zero() {
        let h = hist(2, 3, &[(1, 0, Positive)]);
        let shape = ModelShape::gaussian(1.0, EPS);
        let lam = Policy::zeros(2);
        for c in 0..3 {
            assert_eq!(e_step_objective(&h, StateId(0), ActionIndex(c), &lam, &shape, &grid()), 0.0);
        }
    }

    #[test]
    fn positive_at_zero_beats_negative_at_one() {
        let h = hist(
            1,
            2,
            &[(0, 0, Positive), (0, 0, Positive), (0, 0, Positive), (0, 1, Negative), (0, 1, Negative)],
        );
        let shape = ModelShape::gaussian(1.0, EPS);
        let g = grid();
        let lam = Policy::from_indices(&[1]);
        let o0 = e_step_objective(&h, StateId(0), ActionIndex(0), &lam, &shape, &g);
        let o1 = e_step_objective(&h, StateId(0), ActionIndex(1), &lam, &shape, &g);
        assert!(o0 > o1, "{o0} vs {o1}");
        assert_eq!(em_update(&h, &lam, &shape, &g), Policy::from_indices(&[0]));
        let out = em_fixpoint(&h, &lam, &shape, &g, DEFAULT_MAX_ITERS);
        assert_eq!(out.policy, Policy::from_indices(&[0]));
        assert!(out.converged && out.iterations <= 2);
    }

    #[test]
    fn empty_history_yields_zero_policy_in_one_iteration() {
        let h = InteractionHistory::new(3, 4);
        let shape = ModelShape::gaussian(1.0, EPS);
        let zero = Policy::zeros(3);
        assert_eq!(em_update(&h, &zero, &shape, &grid()), zero);
        let out = em_fixpoint(&h, &zero, &shape, &grid(), 10);
        assert_eq!((out.iterations, out.converged), (1, true));
    }

    #[test]
    fn single_positive_pins_the_state() {
        let shape = ModelShape::gaussian(1.0, EPS);
        for a in 0..5 {
            let h = hist(1, 5, &[(0, a, Positive)]);
            let lam = Policy::from_indices(&[4 - a]);
            assert_eq!(em_update(&h, &lam, &shape, &grid()).get(StateId(0)), ActionIndex(a));
        }
    }

    #[test]
    fn symmetric_history_is_deterministic() {
        let h = hist(1, 3, &[(0, 0, Positive), (0, 2, Positive)]);
        let shape = ModelShape::gaussian(1.0, EPS);
        let lam = Policy::from_indices(&[1]);
        let a = em_update(&h, &lam, &shape, &grid());
        let b = em_update(&h, &lam, &shape, &grid());
        assert_eq!(a, b);
        assert_eq!(a.get(StateId(0)), ActionIndex(1));
    }

    #[test]
    fn fixpoint_reports_non_convergence_at_cap() {
        let h = hist(1, 3, &[(0, 2, Positive)]);
        let shape = ModelShape::gaussian(1.0, EPS);
        let out = em_fixpoint(&h, &Policy::from_indices(&[0]), &shape, &grid(), 1);
        assert_eq!(out.iterations, 1);
        assert!(!out.converged);
        assert_eq!(out.policy, Policy::from_indices(&[2]));
    }

    #[test]
    fn objective_is_finite_at_extreme_widths() {
        let h = hist(1, 6, &[(0, 0, Positive), (0, 5, Positive), (0, 2, Negative), (0, 3, None)]);
        let g = QuadratureGrid::square(11, EPS).unwrap();
        for sigma in [0.05, 50.0] {
            let shape = ModelShape::gaussian(sigma, EPS);
            let estep = EStep::new(&h, &Policy::from_indices(&[1]), &shape, &g);
            for c in 0..6 {
                assert!(estep.objective(StateId(0), ActionIndex(c)).is_finite());
            }
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::model::FeedbackKind;
    use proptest::prelude::*;

    /// `(n_states, n_actions, records as (s, a, feedback index), lam_prev, sigma)`
    type Instance = (usize, usize, Vec<(usize, usize, usize)>, Vec<usize>, f64);

    fn instance() -> impl Strategy<Value = Instance> {
        (1usize..=3, 2usize..=5).prop_flat_map(|(n_s, k)| {
            (
                Just(n_s),
                Just(k),
                prop::collection::vec((0..n_s, 0..k, 0usize..3), 0..12),
                prop::collection::vec(0..k, n_s),
                0.1..5.0f64,
            )
        })
    }

    fn build(n_s: usize, k: usize, recs: &[(usize, usize, usize)], mirror: bool) -> InteractionHistory {
        let mut h = InteractionHistory::new(n_s, k);
        for &(s, a, f) in recs {
            let a = if mirror { k - 1 - a } else { a };
            h.record(StateId(s), ActionIndex(a), FeedbackKind::ALL[f]).unwrap();
        }
        h
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn update_picks_a_maximizer((n_s, k, recs, lam, sigma) in instance()) {
            let h = build(n_s, k, &recs, false);
            let lam = Policy::from_indices(&lam);
            let shape = ModelShape::gaussian(sigma, 0.01);
            let grid = QuadratureGrid::square(11, 0.01).unwrap();
            let next = em_update(&h, &lam, &shape, &grid);
            for s in 0..n_s {
                let objs: Vec<f64> = (0..k)
                    .map(|c| e_step_objective(&h, StateId(s), ActionIndex(c), &lam, &shape, &grid))
                    .collect();
                let best = objs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let chosen = objs[next.get(StateId(s)).0];
                prop_assert!(chosen >= best - 1e-9 * best.abs().max(1.0));
            }
        }

        #[test]
        fn objective_is_mirror_invariant((n_s, k, recs, lam, sigma) in instance()) {
            let h = build(n_s, k, &recs, false);
            let hm = build(n_s, k, &recs, true);
            let lam_m = Policy::from_indices(&lam.iter().map(|a| k - 1 - a).collect::<Vec<_>>());
            let lam = Policy::from_indices(&lam);
            let shape = ModelShape::gaussian(sigma, 0.01);
            let grid = QuadratureGrid::square(11, 0.01).unwrap();
            let e = EStep::new(&h, &lam, &shape, &grid);
            let em = EStep::new(&hm, &lam_m, &shape, &grid);
            for s in 0..n_s {
                for c in 0..k {
                    let x = e.objective(StateId(s), ActionIndex(c));
                    let y = em.objective(StateId(s), ActionIndex(k - 1 - c));
                    prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
                }
            }
        }
    }
}
