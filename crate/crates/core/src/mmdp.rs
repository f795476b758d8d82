//! The multi-agent MDP contract shared by every environment, learner and
//! attack in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static description of a cooperative multi-agent environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdpSpec {
    pub n_agents: usize,
    pub action_counts: Vec<usize>,
    pub obs_dims: Vec<usize>,
    pub state_dim: usize,
    pub horizon: usize,
    pub discount: f64,
    /// Human-readable note on how the initial state is drawn from the reset seed.
    pub initial_dist: String,
}

impl MmdpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return Err(Error::ConfigMismatch("n_agents must be >= 1".into()));
        }
        if self.action_counts.len() != self.n_agents || self.obs_dims.len() != self.n_agents {
            return Err(Error::WrongArity {
                expected: self.n_agents,
                got: self.action_counts.len().min(self.obs_dims.len()),
            });
        }
        if self.action_counts.iter().any(|&a| a < 2) {
            return Err(Error::ConfigMismatch("every agent needs >= 2 actions".into()));
        }
        if self.horizon == 0 {
            return Err(Error::ConfigMismatch("horizon must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::ConfigMismatch(format!("discount {} outside [0,1]", self.discount)));
        }
        Ok(())
    }

    /// True when every agent shares one action count and one observation
    /// width, which is what parameter-shared agent networks require.
    pub fn is_homogeneous(&self) -> bool {
        self.action_counts.windows(2).all(|w| w[0] == w[1]) && self.obs_dims.windows(2).all(|w| w[0] == w[1])
    }
}

/// The part of an environment state every consumer can see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub global_state: Vec<f64>,
    pub observations: Vec<Vec<f64>>,
    pub step_index: usize,
    pub terminal: bool,
    /// Set on the terminal state of a won episode. Always false for
    /// environments that only report returns.
    pub won: bool,
    pub action_masks: Vec<Vec<bool>>,
}

impl EnvState {
    pub fn n_agents(&self) -> usize {
        self.observations.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub actions: Vec<usize>,
}

impl JointAction {
    pub fn new(actions: Vec<usize>) -> Self {
        Self { actions }
    }
}

/// One replay record, restricted to the agents being trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub obs_k: Vec<Vec<f64>>,
    pub prev_actions_k: Vec<Option<usize>>,
    pub actions_k: Vec<usize>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_obs_k: Vec<Vec<f64>>,
    pub next_masks_k: Vec<Vec<bool>>,
    pub terminal: bool,
}

/// An episode: the states visited, the joint action taken in each and the
/// team reward received, followed by the terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<(EnvState, JointAction, f64)>,
    pub last: EnvState,
}

impl Trajectory {
    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|(_, _, r)| r).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// A discrete-action cooperative environment.
///
/// Environments are immutable state machines: `step` never mutates `self`,
/// so one instance can drive any number of independent rollouts.
pub trait Environment {
    /// Full state, including anything private to the environment.
    type State: Clone + std::fmt::Debug + AsRef<EnvState>;

    fn spec(&self) -> &MmdpSpec;

    /// Draws an initial state. Equal seeds give bit-identical states.
    fn reset(&self, seed: u64) -> Self::State;

    /// Applies a joint action and returns the team reward and the successor.
    fn step(&self, state: &Self::State, action: &JointAction) -> Result<(f64, Self::State)>;

    /// Whether episodes end in a win/loss outcome (otherwise only returns are reported).
    fn reports_wins(&self) -> bool {
        true
    }
}

/// Rejects terminal states, wrong arity and masked-out actions.
pub fn check_action(state: &EnvState, action: &JointAction) -> Result<()> {
    if state.terminal {
        return Err(Error::SteppedTerminal);
    }
    if action.actions.len() != state.action_masks.len() {
        return Err(Error::WrongArity { expected: state.action_masks.len(), got: action.actions.len() });
    }
    for (agent, (&a, mask)) in action.actions.iter().zip(&state.action_masks).enumerate() {
        if !mask.get(a).copied().unwrap_or(false) {
            return Err(Error::IllegalAction { agent, action: a });
        }
    }
    Ok(())
}

/// Argmax over legal entries; ties go to the lowest index.
pub fn argmax_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &legal)) in values.iter().zip(mask).enumerate() {
        if legal && best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Argmin over legal entries; ties go to the lowest index.
pub fn argmin_masked(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &legal)) in values.iter().zip(mask).enumerate() {
        if legal && best.map_or(true, |b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Runs one episode with `policy` choosing the joint action from the current state.
pub fn rollout<E, F>(env: &E, seed: u64, mut policy: F) -> Result<Trajectory>
where
    E: Environment,
    F: FnMut(&E::State) -> Result<JointAction>,
{
    let mut state = env.reset(seed);
    let mut steps = Vec::new();
    while !state.as_ref().terminal {
        let action = policy(&state)?;
        let (reward, next) = env.step(&state, &action)?;
        steps.push((state.as_ref().clone(), action, reward));
        state = next;
    }
    Ok(Trajectory { steps, last: state.as_ref().clone() })
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> EnvState {
        EnvState {
            global_state: vec![0.0],
            observations: vec![vec![0.0], vec![0.0]],
            step_index: 0,
            terminal: false,
            won: false,
            action_masks: vec![vec![true, false, true], vec![true, true, true]],
        }
    }

    #[test]
    fn masked_action_is_rejected() {
        let err = check_action(&state(), &JointAction::new(vec![1, 0])).unwrap_err();
        assert_eq!(err, Error::IllegalAction { agent: 0, action: 1 });
        assert!(check_action(&state(), &JointAction::new(vec![2, 1])).is_ok());
    }

    #[test]
    fn terminal_and_arity_checks() {
        let mut s = state();
        assert!(matches!(check_action(&s, &JointAction::new(vec![0])), Err(Error::WrongArity { .. })));
        s.terminal = true;
        assert_eq!(check_action(&s, &JointAction::new(vec![0, 0])), Err(Error::SteppedTerminal));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        assert_eq!(argmax_masked(&[1.0, 3.0, 3.0], &[true; 3]), Some(1));
        assert_eq!(argmax_masked(&[1.0, 3.0, 2.0], &[true, false, true]), Some(2));
        assert_eq!(argmin_masked(&[2.0, 1.0, 1.0], &[true; 3]), Some(1));
        assert_eq!(argmax_masked(&[1.0], &[false]), None);
    }

    #[test]
    fn spec_validation() {
        let mut spec = MmdpSpec {
            n_agents: 1,
            action_counts: vec![2],
            obs_dims: vec![1],
            state_dim: 1,
            horizon: 3,
            discount: 1.0,
            initial_dist: String::new(),
        };
        assert!(spec.validate().is_ok());
        spec.action_counts = vec![1];
        assert!(spec.validate().is_err());
        spec.action_counts = vec![2];
        spec.horizon = 0;
        assert!(spec.validate().is_err());
    }
}
