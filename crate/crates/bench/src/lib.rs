//! Fixtures shared by the benchmarks.

use sparse_attack::approx::{Mixer, MixerSpec, Mlp, MlpSpec, MonotonicMixer, ParamStore, Tensor};
use sparse_attack::env::{GoalGather, GridTeamSpec};
use sparse_attack::learners::{Algo, QTeamPolicy};
use sparse_attack::seeding::rng_from;

/// Deterministic pseudo-random matrix with entries in [-1, 1).
pub fn matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut x = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    let data = (0..rows * cols)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape matches")
}

/// Agent network plus QMIX-style mixer sized like the gridworld learners.
pub fn qmix_parts(batch: usize) -> (ParamStore, Mlp, Mixer, Tensor, Tensor) {
    let mut store = ParamStore::new();
    let mut rng = rng_from(1);
    let mlp = Mlp::init(MlpSpec { widths: vec![19, 64, 5] }, "agent", &mut store, &mut rng).expect("valid spec");
    let spec = MixerSpec { n_inputs: 2, state_dim: 9, embed_dim: 32, hyper_hidden: 32 };
    let mixer = Mixer::Monotonic(MonotonicMixer::init(spec, "mixer", &mut store, &mut rng).expect("valid spec"));
    (store, mlp, mixer, matrix(batch * 2, 19, 2), matrix(batch, 9, 3))
}

pub fn gridworld() -> GoalGather {
    GoalGather::new(GridTeamSpec::default()).expect("default spec is valid")
}

/// Untrained network team policy for the default gridworld.
pub fn grid_policy(env: &GoalGather) -> QTeamPolicy {
    use sparse_attack::Environment;
    let mut rng = rng_from(4);
    QTeamPolicy::new_network(Algo::Vdn, env.spec(), &[64], None, &mut rng).expect("valid policy")
}
