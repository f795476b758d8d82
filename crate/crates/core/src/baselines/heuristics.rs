//! Heuristic attacks: random timing, delta-threshold timing, dense
//! lowest-Q replacement and learned timing with a fixed replacement action.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{delta_score, lowest_q_action, DeltaRule};
use crate::attack::{
    annotate_timing, attacked_episode, episode_seed, wrap_adversarial, AdvState, AdversarialEnv, AttackStats,
    AttackerAlgo,
};
use crate::error::{Error, Result};
use crate::learners::{train_tabular_q, Algo, NetworkTrainer, QTeamPolicy, TrainConfig};
use crate::mmdp::{Environment, JointAction, MmdpSpec};
use crate::seeding::{derive_seed, rng_from, Rng};

const RANDOM_ATTACK_STREAM: u64 = 0x7261_6e64;

/// Replacement action of the random-timing attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomMode {
    /// Uniform over non-greedy legal actions (Ra-R).
    Random,
    /// Lowest-Q non-greedy legal action (Ra-L).
    LowestQ,
}

impl fmt::Display for RandomMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RandomMode::Random => "random",
            RandomMode::LowestQ => "lowest-q",
        })
    }
}

impl FromStr for RandomMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(RandomMode::Random),
            "lowest-q" => Ok(RandomMode::LowestQ),
            _ => Err(Error::Config(format!("unknown random attack mode {s:?}"))),
        }
    }
}

/// Runs `n_episodes` episodes where `choose(state, slot, agent, rng)` picks the
/// action of each target agent.
fn run_heuristic<E, F>(
    env: &E,
    base: &QTeamPolicy,
    targets: &[usize],
    n_episodes: usize,
    seed: u64,
    mut choose: F,
) -> Result<Vec<AttackStats>>
where
    E: Environment,
    F: FnMut(&AdvState<E::State>, usize, usize, &mut Rng) -> usize,
{
    let adv = wrap_adversarial(env, base, targets, 0.0)?;
    (0..n_episodes)
        .map(|ep| {
            let mut rng = rng_from(derive_seed(seed, RANDOM_ATTACK_STREAM, ep as u64));
            attacked_episode(&adv, episode_seed(seed, ep), |s| {
                Ok(JointAction::new(targets.iter().enumerate().map(|(slot, &k)| choose(s, slot, k, &mut rng)).collect()))
            })
            .map(|(stats, _)| stats)
        })
        .collect()
}

fn lowest<S>(s: &AdvState<S>, slot: usize, k: usize) -> usize {
    lowest_q_action(&s.base_q[k], &s.view.action_masks[slot], s.base_actions[k])
}

/// Each target agent deviates independently with probability `prob` per step.
pub fn attack_random<E: Environment>(
    mode: RandomMode,
    prob: f64,
    base: &QTeamPolicy,
    env: &E,
    targets: &[usize],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<AttackStats>> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::ConfigMismatch(format!("attack probability {prob} outside [0, 1]")));
    }
    run_heuristic(env, base, targets, n_episodes, seed, |s, slot, k, rng| {
        let greedy = s.base_actions[k];
        if rng.gen::<f64>() >= prob {
            return greedy;
        }
        match mode {
            RandomMode::LowestQ => lowest(s, slot, k),
            RandomMode::Random => {
                let others: Vec<usize> = s.view.action_masks[slot]
                    .iter()
                    .enumerate()
                    .filter(|&(a, &ok)| ok && a != greedy)
                    .map(|(a, _)| a)
                    .collect();
                if others.is_empty() {
                    greedy
                } else {
                    others[rng.gen_range(0..others.len())]
                }
            }
        }
    })
}

/// Replaces a target agent's action by its lowest-Q action whenever the
/// delta score of its Q row reaches `threshold`.
pub fn attack_rule_based<E: Environment>(
    rule: DeltaRule,
    threshold: f64,
    base: &QTeamPolicy,
    env: &E,
    targets: &[usize],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<AttackStats>> {
    if threshold.is_nan() {
        return Err(Error::ConfigMismatch("threshold is NaN".into()));
    }
    run_heuristic(env, base, targets, n_episodes, seed, |s, slot, k, _| {
        if delta_score(rule, &s.base_q[k]) >= threshold {
            lowest(s, slot, k)
        } else {
            s.base_actions[k]
        }
    })
}

/// Lowest-Q replacement at every step.
pub fn attack_dense<E: Environment>(
    base: &QTeamPolicy,
    env: &E,
    targets: &[usize],
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<AttackStats>> {
    run_heuristic(env, base, targets, n_episodes, seed, |s, slot, k, _| lowest(s, slot, k))
}

/// `points` evenly spaced thresholds over the rule's range plus `observed`.
pub fn threshold_grid(rule: DeltaRule, points: usize, observed: &[f64]) -> Vec<f64> {
    let (lo, hi) = rule.range();
    let mut grid: Vec<f64> = match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    };
    grid.extend(observed.iter().copied().filter(|v| v.is_finite()));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Attacker environment whose actions are per-target attack flags
/// (0 = pass, 1 = force the lowest-Q action).
pub struct TimingEnv<'a, E> {
    pub adv: AdversarialEnv<'a, E>,
    pub c_adv: f64,
    spec: MmdpSpec,
}

impl<'a, E: Environment> TimingEnv<'a, E> {
    pub fn new(env: &'a E, base: &'a QTeamPolicy, targets: &[usize], c_adv: f64) -> Result<Self> {
        if !c_adv.is_finite() || c_adv < 0.0 {
            return Err(Error::ConfigMismatch(format!("c_adv must be finite and non-negative, got {c_adv}")));
        }
        let adv = wrap_adversarial(env, base, targets, 0.0)?;
        let spec = MmdpSpec { action_counts: vec![2; targets.len()], ..adv.spec().clone() };
        Ok(Self { adv, c_adv, spec })
    }

    /// Target actions implied by attack flags.
    pub fn forced(&self, state: &AdvState<E::State>, flags: &JointAction) -> Result<JointAction> {
        if flags.actions.len() != self.adv.targets.len() {
            return Err(Error::WrongArity { expected: self.adv.targets.len(), got: flags.actions.len() });
        }
        let actions = self
            .adv
            .targets
            .iter()
            .enumerate()
            .map(|(slot, &k)| if flags.actions[slot] == 1 { lowest(state, slot, k) } else { state.base_actions[k] })
            .collect();
        Ok(JointAction::new(actions))
    }
}

impl<'a, E: Environment> Environment for TimingEnv<'a, E> {
    type State = AdvState<E::State>;

    fn spec(&self) -> &MmdpSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> Self::State {
        let mut s = self.adv.reset(seed);
        s.view.action_masks = vec![vec![true; 2]; self.adv.targets.len()];
        s
    }

    fn step(&self, state: &Self::State, flags: &JointAction) -> Result<(f64, Self::State)> {
        for &f in &flags.actions {
            if f > 1 {
                return Err(Error::IllegalAction { agent: 0, action: f });
            }
        }
        let mut inner = state.clone();
        inner.view.action_masks = self.adv.targets.iter().map(|&k| state.base.as_ref().action_masks[k].clone()).collect();
        let attack = self.forced(&inner, flags)?;
        let (r, mut next) = self.adv.step(&inner, &attack)?;
        let attacks = next.last_deviations.iter().filter(|&&d| d).count();
        next.view.action_masks = vec![vec![true; 2]; self.adv.targets.len()];
        Ok((r - self.c_adv * attacks as f64, next))
    }

    fn reports_wins(&self) -> bool {
        self.adv.reports_wins()
    }
}

/// A learned attack-timing policy.
#[derive(Debug, Clone)]
pub struct TimingPolicy {
    pub policy: QTeamPolicy,
    pub targets: Vec<usize>,
    pub c_adv: f64,
}

/// Learns when to force the lowest-Q action, paying `c_adv` per attack.
pub fn train_rlf<E: Environment>(
    env: &E,
    base: &QTeamPolicy,
    targets: &[usize],
    c_adv: f64,
    train: &TrainConfig,
    algo: AttackerAlgo,
) -> Result<TimingPolicy> {
    let timing = TimingEnv::new(env, base, targets, c_adv)?;
    let mut policy = match algo {
        AttackerAlgo::TabularQ => train_tabular_q(&timing, train)?,
        AttackerAlgo::SingleAgentQmix if targets.len() == 1 => NetworkTrainer::new(&timing, Algo::Qmix, train.clone())?.train()?,
        AttackerAlgo::MultiAgentQmix if targets.len() >= 2 => NetworkTrainer::new(&timing, Algo::Qmix, train.clone())?.train()?,
        _ => return Err(Error::ConfigMismatch(format!("{algo} cannot attack {} agents", targets.len()))),
    };
    annotate_timing(&mut policy, base, targets, c_adv, train.seed)?;
    Ok(TimingPolicy { policy, targets: targets.to_vec(), c_adv })
}

/// Greedy evaluation of a learned timing policy.
pub fn attack_rlf<E: Environment>(
    env: &E,
    base: &QTeamPolicy,
    timing: &TimingPolicy,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<AttackStats>> {
    let tenv = TimingEnv::new(env, base, &timing.targets, timing.c_adv)?;
    let adv = &tenv.adv;
    (0..n_episodes)
        .map(|ep| {
            let mut prev_flags = vec![None; timing.targets.len()];
            attacked_episode(adv, episode_seed(seed, ep), |s| {
                let mut view = s.view.clone();
                view.action_masks = vec![vec![true; 2]; timing.targets.len()];
                let flags = timing.policy.act_greedy(&view, &prev_flags)?.0;
                prev_flags = flags.actions.iter().map(|&f| Some(f)).collect();
                tenv.forced(s, &flags)
            })
            .map(|(stats, _)| stats)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::summarize;
    use crate::baselines::{budget_dp, value_iteration, ActionSet};
    use crate::env::{build_example1, TreeGame};
    use crate::learners::evaluate_policy;

    fn example1(seed: u64) -> (TreeGame, QTeamPolicy) {
        let tree = build_example1(6, 3, 1, seed).unwrap();
        let policy = value_iteration(&tree).unwrap().to_policy(&tree);
        (TreeGame::new(tree), policy)
    }

    #[test]
    fn zero_probability_is_unattacked() {
        let (env, base) = example1(0);
        let s = summarize(&attack_random(RandomMode::Random, 0.0, &base, &env, &[0], 20, 5).unwrap(), false).unwrap();
        assert_eq!(s.mean_attacked, vec![0.0]);
        assert_eq!(s.mean_return, evaluate_policy(&env, &base, 20, 5).unwrap().mean_return);
        assert!(attack_random(RandomMode::Random, 1.5, &base, &env, &[0], 1, 0).is_err());
    }

    #[test]
    fn certain_lowest_q_equals_dense() {
        let (env, base) = example1(1);
        let a = attack_random(RandomMode::LowestQ, 1.0, &base, &env, &[0], 10, 2).unwrap();
        let b = attack_dense(&base, &env, &[0], 10, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(summarize(&b, false).unwrap().attacked_fraction, vec![1.0]);
        let forced = budget_dp(&env.tree, 6, ActionSet::ForcedArgmin).unwrap();
        assert!(b[0].team_return >= forced.value);
    }

    #[test]
    fn random_attack_rate_concentrates() {
        let (env, base) = example1(2);
        let s = summarize(&attack_random(RandomMode::Random, 0.2, &base, &env, &[0], 10_000, 3).unwrap(), false).unwrap();
        assert!((s.attacked_fraction[0] - 0.2).abs() <= 0.02, "{:?}", s.attacked_fraction);
    }

    #[test]
    fn infinite_thresholds() {
        let (env, base) = example1(3);
        for rule in [DeltaRule::MaxDiff, DeltaRule::Entropy] {
            let none = attack_rule_based(rule, f64::INFINITY, &base, &env, &[0], 3, 0).unwrap();
            assert!(none.iter().all(|s| s.attacked_steps == vec![0]));
            let all = attack_rule_based(rule, f64::NEG_INFINITY, &base, &env, &[0], 3, 0).unwrap();
            assert_eq!(all, attack_dense(&base, &env, &[0], 3, 0).unwrap());
        }
    }

    #[test]
    fn grid_includes_observed_values() {
        let g = threshold_grid(DeltaRule::MaxDiff, 1000, &[0.123456, f64::NAN]);
        assert_eq!(g.len(), 1001);
        assert_eq!((g[0], g[g.len() - 1]), (0.0, 1.0));
        assert!(g.contains(&0.123456));
        assert_eq!(threshold_grid(DeltaRule::Entropy, 3, &[]), vec![-1.0, -0.5, 0.0]);
    }

    #[test]
    fn rlf_reaches_forced_optimum_and_respects_cost() {
        let (env, base) = example1(4);
        let mut train = TrainConfig::with_episodes(5_000);
        train.discount = 1.0;
        let free = train_rlf(&env, &base, &[0], 0.0, &train, AttackerAlgo::TabularQ).unwrap();
        let stats = attack_rlf(&env, &base, &free, 1, 0).unwrap();
        let forced = budget_dp(&env.tree, 6, ActionSet::ForcedArgmin).unwrap();
        assert_eq!(stats[0].team_return, forced.value);
        // With two actions the lowest-Q replacement is the only alternative,
        // so forced timing loses nothing against the free attacker here.
        assert_eq!(forced.value, -100.0);
        let costly = train_rlf(&env, &base, &[0], 1e6, &train, AttackerAlgo::TabularQ).unwrap();
        let stats = attack_rlf(&env, &base, &costly, 1, 0).unwrap();
        assert_eq!(stats[0].attacked_steps, vec![0]);
        assert!(train_rlf(&env, &base, &[0], -1.0, &train, AttackerAlgo::TabularQ).is_err());
    }
}
