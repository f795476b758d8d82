use serde::{Deserialize, Serialize};

use super::{wrap_adversarial, AdvState, AdversarialEnv};
use crate::error::{Error, Result};
use crate::learners::QTeamPolicy;
use crate::mmdp::{EnvState, Environment, JointAction};
use crate::seeding::derive_seed;

/// Same stream as unattacked evaluation, so episode `i` starts from the
/// same initial state with or without an attack.
const EVAL_STREAM: u64 = crate::learners::eval::EVAL_STREAM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    /// Attacked steps of each target agent.
    pub attacked_steps: Vec<usize>,
    pub total_steps: usize,
    pub team_return: f64,
    pub won: bool,
    /// Sum of the attacker's rewards over the episode.
    pub regularized_return: f64,
}

/// One step of an attacked episode, as seen by the full team.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedStep {
    pub base_view: EnvState,
    pub prevs: Vec<Option<usize>>,
    pub executed: Vec<usize>,
    pub base_actions: Vec<usize>,
    pub deviations: Vec<bool>,
    pub team_reward: f64,
    pub attacker_reward: f64,
}

/// Runs one episode of `adv`, asking `decide` for the target agents' actions.
pub fn attacked_episode<E, F>(adv: &AdversarialEnv<'_, E>, seed: u64, mut decide: F) -> Result<(AttackStats, Vec<LoggedStep>)>
where
    E: Environment,
    F: FnMut(&AdvState<E::State>) -> Result<JointAction>,
{
    let mut state = adv.reset(seed);
    let mut stats = AttackStats {
        attacked_steps: vec![0; adv.targets.len()],
        total_steps: 0,
        team_return: 0.0,
        won: false,
        regularized_return: 0.0,
    };
    let mut log = Vec::new();
    while !state.view.terminal {
        let attack = decide(&state)?;
        let (executed, _) = adv.joint_action(&state, &attack)?;
        let (r_adv, next) = adv.step(&state, &attack)?;
        for (count, &d) in stats.attacked_steps.iter_mut().zip(&next.last_deviations) {
            *count += d as usize;
        }
        stats.total_steps += 1;
        stats.team_return += next.last_team_reward;
        stats.regularized_return += r_adv;
        log.push(LoggedStep {
            base_view: state.base.as_ref().clone(),
            prevs: state.prevs.clone(),
            executed: executed.actions,
            base_actions: state.base_actions.clone(),
            deviations: next.last_deviations.clone(),
            team_reward: next.last_team_reward,
            attacker_reward: r_adv,
        });
        state = next;
    }
    stats.won = state.view.won;
    Ok((stats, log))
}

/// Seed of evaluation episode `episode`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive_seed(seed, EVAL_STREAM, episode as u64)
}

/// Greedy attacker against greedy base agents for `n_episodes` episodes.
pub fn rollout_attacked<E: Environment>(
    env: &E,
    base_policy: &QTeamPolicy,
    attacker: &QTeamPolicy,
    targets: &[usize],
    lambda: f64,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<AttackStats>> {
    let adv = wrap_adversarial(env, base_policy, targets, lambda)?;
    (0..n_episodes)
        .map(|ep| {
            attacked_episode(&adv, episode_seed(seed, ep), |s| {
                let prevs: Vec<Option<usize>> = targets.iter().map(|&k| s.prevs[k]).collect();
                Ok(attacker.act_greedy(&s.view, &prevs)?.0)
            })
            .map(|(stats, _)| stats)
        })
        .collect()
}

/// Episode averages of a batch of attacked episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub episodes: usize,
    pub win_rate: Option<f64>,
    pub mean_return: f64,
    pub mean_regularized: f64,
    /// Mean attacked steps per episode, per target agent.
    pub mean_attacked: Vec<f64>,
    pub mean_total: f64,
    /// Attacked steps over total steps, per target agent.
    pub attacked_fraction: Vec<f64>,
}

pub fn summarize(stats: &[AttackStats], reports_wins: bool) -> Result<AttackSummary> {
    let Some(first) = stats.first() else {
        return Err(Error::EmptyEvaluation);
    };
    let n = stats.len() as f64;
    let m = first.attacked_steps.len();
    let total: usize = stats.iter().map(|s| s.total_steps).sum();
    let attacked: Vec<usize> = (0..m).map(|i| stats.iter().map(|s| s.attacked_steps[i]).sum()).collect();
    Ok(AttackSummary {
        episodes: stats.len(),
        win_rate: reports_wins.then(|| stats.iter().filter(|s| s.won).count() as f64 / n),
        mean_return: stats.iter().map(|s| s.team_return).sum::<f64>() / n,
        mean_regularized: stats.iter().map(|s| s.regularized_return).sum::<f64>() / n,
        mean_attacked: attacked.iter().map(|&a| a as f64 / n).collect(),
        mean_total: total as f64 / n,
        attacked_fraction: attacked.iter().map(|&a| if total == 0 { 0.0 } else { a as f64 / total as f64 }).collect(),
    })
}
