//! The attacker's MDP: a base environment plus a frozen base team policy,
//! where only the target agents are controlled and the reward is the
//! negated team reward minus a per-deviation penalty.

mod rollout;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::{train_tabular_q, Algo, NetworkTrainer, QTeamPolicy, TrainConfig};
use crate::mmdp::{EnvState, Environment, JointAction, MmdpSpec};

pub use rollout::{attacked_episode, episode_seed, rollout_attacked, summarize, AttackStats, AttackSummary, LoggedStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackerAlgo {
    TabularQ,
    SingleAgentQmix,
    MultiAgentQmix,
}

impl fmt::Display for AttackerAlgo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackerAlgo::TabularQ => "tabular-q",
            AttackerAlgo::SingleAgentQmix => "single-agent-qmix",
            AttackerAlgo::MultiAgentQmix => "multi-agent-qmix",
        })
    }
}

impl FromStr for AttackerAlgo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tabular-q" => Ok(AttackerAlgo::TabularQ),
            "single-agent-qmix" => Ok(AttackerAlgo::SingleAgentQmix),
            "multi-agent-qmix" => Ok(AttackerAlgo::MultiAgentQmix),
            _ => Err(Error::Config(format!("unknown attacker algorithm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub targets: Vec<usize>,
    pub lambda: f64,
    pub train: TrainConfig,
    pub algo: AttackerAlgo,
}

/// Checks that `targets` are distinct, in range and non-empty.
pub fn validate_targets(targets: &[usize], n_agents: usize) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::BadTargets("no target agents".into()));
    }
    let mut seen = BTreeSet::new();
    for &k in targets {
        if k >= n_agents {
            return Err(Error::BadTargets(format!("agent {k} out of range for {n_agents} agents")));
        }
        if !seen.insert(k) {
            return Err(Error::BadTargets(format!("agent {k} listed twice")));
        }
    }
    Ok(())
}

/// State of the wrapped environment.
#[derive(Debug, Clone)]
pub struct AdvState<S> {
    /// Attacker-facing view: the target agents' observations and masks.
    pub view: EnvState,
    pub base: S,
    /// Executed action of every agent at the previous step.
    pub prevs: Vec<Option<usize>>,
    /// Greedy base action of every agent in this state (empty when terminal).
    pub base_actions: Vec<usize>,
    /// Base Q rows of every agent in this state (empty when terminal).
    pub base_q: Vec<Vec<f64>>,
    /// Team reward of the step that led here.
    pub last_team_reward: f64,
    /// Per-target deviation flags of the step that led here.
    pub last_deviations: Vec<bool>,
}

impl<S> AsRef<EnvState> for AdvState<S> {
    fn as_ref(&self) -> &EnvState {
        &self.view
    }
}

/// Environment seen by the attacker.
#[derive(Debug, Clone)]
pub struct AdversarialEnv<'a, E> {
    pub env: &'a E,
    pub base_policy: &'a QTeamPolicy,
    pub targets: Vec<usize>,
    pub lambda: f64,
    spec: MmdpSpec,
}

pub fn wrap_adversarial<'a, E: Environment>(
    env: &'a E,
    base_policy: &'a QTeamPolicy,
    targets: &[usize],
    lambda: f64,
) -> Result<AdversarialEnv<'a, E>> {
    let base_spec = env.spec();
    validate_targets(targets, base_spec.n_agents)?;
    if base_policy.n_agents != base_spec.n_agents {
        return Err(Error::ConfigMismatch(format!(
            "base policy has {} agents, environment has {}",
            base_policy.n_agents, base_spec.n_agents
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::ConfigMismatch(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    let spec = MmdpSpec {
        n_agents: targets.len(),
        action_counts: targets.iter().map(|&k| base_spec.action_counts[k]).collect(),
        obs_dims: targets.iter().map(|&k| base_spec.obs_dims[k]).collect(),
        ..base_spec.clone()
    };
    Ok(AdversarialEnv { env, base_policy, targets: targets.to_vec(), lambda, spec })
}

impl<'a, E: Environment> AdversarialEnv<'a, E> {
    fn wrap_state(&self, base: E::State, prevs: Vec<Option<usize>>, team_reward: f64, devs: Vec<bool>) -> Result<AdvState<E::State>> {
        let full = base.as_ref();
        let (base_actions, base_q) = if full.terminal {
            (Vec::new(), Vec::new())
        } else {
            let (a, q) = self.base_policy.act_greedy(full, &prevs)?;
            (a.actions, q)
        };
        let view = EnvState {
            global_state: full.global_state.clone(),
            observations: self.targets.iter().map(|&k| full.observations[k].clone()).collect(),
            step_index: full.step_index,
            terminal: full.terminal,
            won: full.won,
            action_masks: self.targets.iter().map(|&k| full.action_masks[k].clone()).collect(),
        };
        Ok(AdvState { view, base, prevs, base_actions, base_q, last_team_reward: team_reward, last_deviations: devs })
    }

    /// Full joint action: target agents take `attack`, everyone else the
    /// greedy base action. Also returns the per-target deviation flags.
    pub fn joint_action(&self, state: &AdvState<E::State>, attack: &JointAction) -> Result<(JointAction, Vec<bool>)> {
        if attack.actions.len() != self.targets.len() {
            return Err(Error::WrongArity { expected: self.targets.len(), got: attack.actions.len() });
        }
        let mut actions = state.base_actions.clone();
        let mut devs = Vec::with_capacity(self.targets.len());
        for (&k, &a) in self.targets.iter().zip(&attack.actions) {
            actions[k] = a;
            devs.push(a != state.base_actions[k]);
        }
        Ok((JointAction::new(actions), devs))
    }
}

impl<'a, E: Environment> Environment for AdversarialEnv<'a, E> {
    type State = AdvState<E::State>;

    fn spec(&self) -> &MmdpSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> Self::State {
        let base = self.env.reset(seed);
        let prevs = vec![None; self.env.spec().n_agents];
        self.wrap_state(base, prevs, 0.0, vec![false; self.targets.len()])
            .expect("base policy is compatible with the environment")
    }

    fn step(&self, state: &Self::State, action: &JointAction) -> Result<(f64, Self::State)> {
        if state.view.terminal {
            return Err(Error::SteppedTerminal);
        }
        let (full, devs) = self.joint_action(state, action)?;
        let (r, next) = self.env.step(&state.base, &full)?;
        let n_dev = devs.iter().filter(|&&d| d).count();
        let prevs = full.actions.iter().map(|&a| Some(a)).collect();
        let next = self.wrap_state(next, prevs, r, devs)?;
        Ok((-r - self.lambda * n_dev as f64, next))
    }

    fn reports_wins(&self) -> bool {
        self.env.reports_wins()
    }
}

/// Learns an attacker for `adv_env` (Algorithm 1 for the network variants).
pub fn train_attack<E: Environment>(adv_env: &AdversarialEnv<'_, E>, config: &AttackConfig) -> Result<QTeamPolicy> {
    if config.targets != adv_env.targets || config.lambda.to_bits() != adv_env.lambda.to_bits() {
        return Err(Error::ConfigMismatch("attack config does not match the wrapped environment".into()));
    }
    let m = adv_env.targets.len();
    let mut policy = match config.algo {
        AttackerAlgo::TabularQ => train_tabular_q(adv_env, &config.train)?,
        AttackerAlgo::SingleAgentQmix | AttackerAlgo::MultiAgentQmix => {
            if config.algo == AttackerAlgo::SingleAgentQmix && m != 1 {
                return Err(Error::ConfigMismatch(format!("single-agent-qmix attacks one agent, got {m}")));
            }
            if config.algo == AttackerAlgo::MultiAgentQmix && m < 2 {
                return Err(Error::ConfigMismatch("multi-agent-qmix needs at least two targets".into()));
            }
            NetworkTrainer::new(adv_env, Algo::Qmix, config.train.clone())?.train()?
        }
    };
    annotate_attacker(&mut policy, adv_env, config)?;
    Ok(policy)
}

pub(crate) fn annotate_attacker<E: Environment>(
    policy: &mut QTeamPolicy,
    adv_env: &AdversarialEnv<'_, E>,
    config: &AttackConfig,
) -> Result<()> {
    let targets: Vec<String> = config.targets.iter().map(usize::to_string).collect();
    policy.meta.insert("attack.targets".into(), targets.join(","));
    policy.meta.insert("attack.lambda".into(), format!("{:?}", config.lambda));
    policy.meta.insert("attack.algo".into(), config.algo.to_string());
    policy.meta.insert("attack.base_hash".into(), adv_env.base_policy.fingerprint()?);
    policy.meta.insert("seed".into(), config.train.seed.to_string());
    Ok(())
}

pub(crate) fn annotate_timing(
    policy: &mut QTeamPolicy,
    base: &QTeamPolicy,
    targets: &[usize],
    c_adv: f64,
    seed: u64,
) -> Result<()> {
    let targets: Vec<String> = targets.iter().map(usize::to_string).collect();
    policy.meta.insert("attack.targets".into(), targets.join(","));
    policy.meta.insert("attack.c_adv".into(), format!("{c_adv:?}"));
    policy.meta.insert("attack.base_hash".into(), base.fingerprint()?);
    policy.meta.insert("seed".into(), seed.to_string());
    Ok(())
}
