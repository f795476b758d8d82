use std::collections::HashMap;

use rand::Rng as _;

use super::config::TrainConfig;
use super::policy::{obs_key, Algo, QTable, QTeamPolicy};
use crate::error::Result;
use crate::mmdp::{argmax_masked, Environment, JointAction};
use crate::seeding::{derive_seed, rng_from, Rng};

/// Episode seed stream used by every trainer.
pub(crate) const TRAIN_STREAM: u64 = 0x7261_696e;
/// Exploration randomness stream.
pub(crate) const EXPLORE_STREAM: u64 = 0x6578_706c;

struct Entry {
    q: Vec<f64>,
    visits: Vec<u32>,
}

struct Step {
    obs: Vec<f64>,
    action: usize,
    reward: f64,
    next_obs: Vec<f64>,
    next_mask: Vec<bool>,
    terminal: bool,
}

/// Uniformly random legal action.
pub(crate) fn random_legal(mask: &[bool], rng: &mut Rng) -> usize {
    let legal: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    legal[rng.gen_range(0..legal.len())]
}

/// Independent tabular Q-learning with step size `1 / visits(o, a)` and
/// epsilon-greedy exploration. Each finished episode is replayed backwards so
/// leaf values propagate to the root within one pass.
pub fn train_tabular_q<E: Environment>(env: &E, config: &TrainConfig) -> Result<QTeamPolicy> {
    config.validate()?;
    let spec = env.spec();
    let n = spec.n_agents;
    let mut tables: Vec<HashMap<Vec<u8>, Entry>> = (0..n).map(|_| HashMap::new()).collect();
    let mut rng = rng_from(derive_seed(config.seed, EXPLORE_STREAM, 0));
    let mut episode_steps: Vec<Vec<Step>> = (0..n).map(|_| Vec::new()).collect();

    for ep in 0..config.episodes {
        let eps = config.epsilon(ep);
        let mut state = env.reset(derive_seed(config.seed, TRAIN_STREAM, ep as u64));
        episode_steps.iter_mut().for_each(Vec::clear);
        while !state.as_ref().terminal {
            let view = state.as_ref();
            let mut actions = Vec::with_capacity(n);
            for i in 0..n {
                let mask = &view.action_masks[i];
                let a = if rng.gen::<f64>() < eps {
                    random_legal(mask, &mut rng)
                } else {
                    let key = obs_key(&view.observations[i]);
                    match tables[i].get(&key) {
                        Some(e) => argmax_masked(&e.q, mask).unwrap_or(0),
                        None => argmax_masked(&vec![0.0; spec.action_counts[i]], mask).unwrap_or(0),
                    }
                };
                actions.push(a);
            }
            let (reward, next) = env.step(&state, &JointAction::new(actions.clone()))?;
            let nv = next.as_ref();
            for i in 0..n {
                episode_steps[i].push(Step {
                    obs: view.observations[i].clone(),
                    action: actions[i],
                    reward,
                    next_obs: nv.observations[i].clone(),
                    next_mask: nv.action_masks[i].clone(),
                    terminal: nv.terminal,
                });
            }
            state = next;
        }
        for (i, steps) in episode_steps.iter().enumerate() {
            let table = &mut tables[i];
            for s in steps.iter().rev() {
                let bootstrap = if s.terminal {
                    0.0
                } else {
                    table
                        .get(&obs_key(&s.next_obs))
                        .and_then(|e| argmax_masked(&e.q, &s.next_mask).map(|a| e.q[a]))
                        .unwrap_or(0.0)
                };
                let target = s.reward + config.discount * bootstrap;
                let entry = table.entry(obs_key(&s.obs)).or_insert_with(|| Entry {
                    q: vec![0.0; spec.action_counts[i]],
                    visits: vec![0; spec.action_counts[i]],
                });
                entry.visits[s.action] += 1;
                let alpha = 1.0 / entry.visits[s.action] as f64;
                entry.q[s.action] += alpha * (target - entry.q[s.action]);
            }
        }
    }

    let tables = tables
        .into_iter()
        .enumerate()
        .map(|(i, t)| QTable { n_actions: spec.action_counts[i], rows: t.into_iter().map(|(k, e)| (k, e.q)).collect() })
        .collect();
    Ok(QTeamPolicy::tabular(Algo::TabularQ, tables))
}
