//! Fixtures shared by the benchmarks.

use abluf_core::environments::{trainer_feedback, TrainerSpec};
use abluf_core::rng::{stream_rng, Stream};
use abluf_core::{ActionIndex, FeedbackModelParams, InteractionHistory, Policy, StateId};
use rand::Rng;

/// A history of `steps` interactions per state, judged by a model-following
/// trainer with `sigma = 1`.
pub fn simulated_history(n_states: usize, n_actions: usize, steps: usize, seed: u64) -> (InteractionHistory, Policy) {
    let mut rng = stream_rng(seed, Stream::World);
    let optimal = Policy::from_indices(&(0..n_states).map(|_| rng.random_range(0..n_actions)).collect::<Vec<_>>());
    let trainer = TrainerSpec::ModelFollowing {
        params: FeedbackModelParams::new(0.7, 0.6, 1.0, 0.01),
    };
    let mut h = InteractionHistory::new(n_states, n_actions);
    for s in 0..n_states {
        for _ in 0..steps {
            let a = ActionIndex(rng.random_range(0..n_actions));
            let f = trainer_feedback(&trainer, StateId(s), a, &optimal, &mut rng).unwrap();
            h.record(StateId(s), a, f).unwrap();
        }
    }
    (h, optimal)
}
