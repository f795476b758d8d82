use serde::{Deserialize, Serialize};

use super::policy::QTeamPolicy;
use crate::error::{Error, Result};
use crate::mmdp::{rollout, Environment, Trajectory};
use crate::seeding::derive_seed;

pub const EVAL_STREAM: u64 = 0x6576_616c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub episodes: usize,
    /// `None` for environments that only report returns.
    pub win_rate: Option<f64>,
    pub mean_return: f64,
    pub mean_length: f64,
}

/// One fully greedy episode, tracking each agent's previous action.
pub fn greedy_episode<E: Environment>(env: &E, policy: &QTeamPolicy, seed: u64) -> Result<Trajectory> {
    let mut prevs = vec![None; env.spec().n_agents];
    rollout(env, seed, |s| {
        let (a, _) = policy.act_greedy(s.as_ref(), &prevs)?;
        prevs = a.actions.iter().map(|&x| Some(x)).collect();
        Ok(a)
    })
}

/// Greedy evaluation over `n_episodes` seeded episodes.
pub fn evaluate_policy<E: Environment>(env: &E, policy: &QTeamPolicy, n_episodes: usize, seed: u64) -> Result<EvalStats> {
    if n_episodes == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let (mut wins, mut ret, mut len) = (0usize, 0.0, 0usize);
    for ep in 0..n_episodes {
        let traj = greedy_episode(env, policy, derive_seed(seed, EVAL_STREAM, ep as u64))?;
        wins += traj.last.won as usize;
        ret += traj.episode_return();
        len += traj.len();
    }
    let n = n_episodes as f64;
    Ok(EvalStats {
        episodes: n_episodes,
        win_rate: env.reports_wins().then(|| wins as f64 / n),
        mean_return: ret / n,
        mean_length: len as f64 / n,
    })
}
