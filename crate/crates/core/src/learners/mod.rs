//! Base-policy learners: exact tree policies, tabular Q-learning and the
//! VDN / QMIX-style network learners. Attackers reuse the same machinery.

pub mod config;
pub mod eval;
pub mod network;
pub mod policy;
pub mod replay;
pub mod tabular;

pub use config::TrainConfig;
pub use eval::{evaluate_policy, greedy_episode, EvalStats};
pub use network::{train_network, NetworkTrainer};
pub use policy::{Algo, NetworkQ, QRepr, QTable, QTeamPolicy};
pub use replay::ReplayBuffer;
pub use tabular::train_tabular_q;

use crate::env::TreeGame;
use crate::error::{Error, Result};
use crate::mmdp::Environment;
use crate::baselines::oracle::value_iteration;

/// Trains a base policy on any environment. Tabular value iteration needs
/// the tree structure; use [`train_base_tree`] for it.
pub fn train_base<E: Environment>(env: &E, algo: Algo, config: &TrainConfig) -> Result<QTeamPolicy> {
    let mut policy = match algo {
        Algo::TabularVi => {
            return Err(Error::ConfigMismatch("tabular-vi needs a tree game".into()));
        }
        Algo::TabularQ => train_tabular_q(env, config)?,
        Algo::Vdn | Algo::Qmix => train_network(env, algo, config)?,
    };
    policy.meta.insert("seed".into(), config.seed.to_string());
    Ok(policy)
}

/// Base policy for a tree game; value iteration gives the exact optimum.
pub fn train_base_tree(env: &TreeGame, algo: Algo, config: &TrainConfig) -> Result<QTeamPolicy> {
    match algo {
        Algo::TabularVi => Ok(value_iteration(&env.tree)?.to_policy(&env.tree)),
        Algo::TabularQ => train_base(env, algo, config),
        Algo::Vdn | Algo::Qmix => Err(Error::ConfigMismatch("tree games use tabular learners".into())),
    }
}
