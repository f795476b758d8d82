//! GoalGather: a small cooperative gridworld. The team wins when every goal
//! cell holds exactly one agent; covering goals earns a shaping bonus on the
//! way. Agents see other agents and goals only within a small radius.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdp::{check_action, EnvState, Environment, JointAction, MmdpSpec};
use crate::seeding::rng_from;

pub const N_MOVES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl Move {
    pub fn from_index(i: usize) -> Move {
        [Move::Up, Move::Down, Move::Left, Move::Right, Move::Stay][i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTeamSpec {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    pub n_goals: usize,
    pub horizon: usize,
    /// Observation radius in Chebyshev distance; 0 means full observability.
    pub obs_radius: usize,
    pub reward_win: f64,
    pub reward_step: f64,
    pub reward_progress: f64,
}

impl Default for GridTeamSpec {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            n_agents: 2,
            n_goals: 2,
            horizon: 40,
            obs_radius: 1,
            reward_win: 10.0,
            reward_step: -0.1,
            reward_progress: 0.5,
        }
    }
}

impl GridTeamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 || self.n_goals != self.n_agents {
            return Err(Error::ConfigMismatch("GoalGather needs n_goals == n_agents >= 1".into()));
        }
        if self.width * self.height < self.n_agents + self.n_goals {
            return Err(Error::ConfigMismatch("grid too small for distinct agent and goal cells".into()));
        }
        if self.horizon == 0 {
            return Err(Error::ConfigMismatch("horizon must be >= 1".into()));
        }
        Ok(())
    }

    /// Upper bound on the absolute episode return.
    pub fn return_bound(&self) -> f64 {
        self.reward_win + self.horizon as f64 * self.reward_step.abs() + self.n_goals as f64 * self.reward_progress
    }

    pub fn obs_dim(&self) -> usize {
        2 + 3 * self.n_goals + 3 * (self.n_agents - 1)
    }

    pub fn state_dim(&self) -> usize {
        2 * (self.n_agents + self.n_goals) + 1
    }
}

pub type Cell = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    pub view: EnvState,
    pub agents: Vec<Cell>,
    pub goals: Vec<Cell>,
    /// Highest goal coverage reached so far this episode.
    pub best_coverage: usize,
}

impl AsRef<EnvState> for GridState {
    fn as_ref(&self) -> &EnvState {
        &self.view
    }
}

#[derive(Debug, Clone)]
pub struct GoalGather {
    pub grid: GridTeamSpec,
    spec: MmdpSpec,
}

impl GoalGather {
    pub fn new(grid: GridTeamSpec) -> Result<Self> {
        grid.validate()?;
        let spec = MmdpSpec {
            n_agents: grid.n_agents,
            action_counts: vec![N_MOVES; grid.n_agents],
            obs_dims: vec![grid.obs_dim(); grid.n_agents],
            state_dim: grid.state_dim(),
            horizon: grid.horizon,
            discount: 0.99,
            initial_dist: "goals then agents on distinct uniformly drawn cells".into(),
        };
        Ok(Self { grid, spec })
    }

    /// Number of goals occupied by exactly one agent.
    pub fn coverage(&self, agents: &[Cell], goals: &[Cell]) -> usize {
        goals.iter().filter(|g| agents.iter().filter(|a| a == g).count() == 1).count()
    }

    fn moved(&self, (x, y): Cell, m: Move) -> Cell {
        match m {
            Move::Up if y + 1 < self.grid.height => (x, y + 1),
            Move::Down if y > 0 => (x, y - 1),
            Move::Left if x > 0 => (x - 1, y),
            Move::Right if x + 1 < self.grid.width => (x + 1, y),
            _ => (x, y),
        }
    }

    fn visible(&self, from: Cell, to: Cell) -> bool {
        self.grid.obs_radius == 0
            || from.0.abs_diff(to.0).max(from.1.abs_diff(to.1)) <= self.grid.obs_radius
    }

    fn observe(&self, i: usize, agents: &[Cell], goals: &[Cell]) -> Vec<f64> {
        let sx = (self.grid.width - 1).max(1) as f64;
        let sy = (self.grid.height - 1).max(1) as f64;
        let me = agents[i];
        let mut obs = Vec::with_capacity(self.grid.obs_dim());
        obs.push(me.0 as f64 / sx);
        obs.push(me.1 as f64 / sy);
        let others = agents.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, c)| c);
        for &c in goals.iter().chain(others) {
            if self.visible(me, c) {
                obs.push(1.0);
                obs.push((c.0 as f64 - me.0 as f64) / sx);
                obs.push((c.1 as f64 - me.1 as f64) / sy);
            } else {
                obs.extend([0.0; 3]);
            }
        }
        obs
    }

    /// Builds a state directly from positions. Used for scripted scenarios;
    /// `reset` never places two entities on one cell.
    pub fn state_from(&self, agents: Vec<Cell>, goals: Vec<Cell>, step_index: usize) -> GridState {
        let best = self.coverage(&agents, &goals);
        self.make_state(agents, goals, step_index, best, false, false)
    }

    fn make_state(
        &self,
        agents: Vec<Cell>,
        goals: Vec<Cell>,
        step_index: usize,
        best_coverage: usize,
        terminal: bool,
        won: bool,
    ) -> GridState {
        let sx = (self.grid.width - 1).max(1) as f64;
        let sy = (self.grid.height - 1).max(1) as f64;
        let mut global = Vec::with_capacity(self.grid.state_dim());
        for c in agents.iter().chain(&goals) {
            global.push(c.0 as f64 / sx);
            global.push(c.1 as f64 / sy);
        }
        global.push(step_index as f64 / self.grid.horizon as f64);
        let observations = (0..agents.len()).map(|i| self.observe(i, &agents, &goals)).collect();
        GridState {
            view: EnvState {
                global_state: global,
                observations,
                step_index,
                terminal,
                won,
                action_masks: vec![vec![!terminal; N_MOVES]; agents.len()],
            },
            agents,
            goals,
            best_coverage,
        }
    }
}

impl Environment for GoalGather {
    type State = GridState;

    fn spec(&self) -> &MmdpSpec {
        &self.spec
    }

    fn reset(&self, seed: u64) -> GridState {
        let mut rng = rng_from(seed);
        let w = self.grid.width;
        let cells = sample(&mut rng, w * self.grid.height, self.grid.n_goals + self.grid.n_agents);
        let mut cells = cells.into_iter().map(|c| (c % w, c / w));
        let goals: Vec<Cell> = cells.by_ref().take(self.grid.n_goals).collect();
        let agents: Vec<Cell> = cells.collect();
        self.make_state(agents, goals, 0, 0, false, false)
    }

    fn step(&self, state: &GridState, action: &JointAction) -> Result<(f64, GridState)> {
        check_action(&state.view, action)?;
        let agents: Vec<Cell> = state
            .agents
            .iter()
            .zip(&action.actions)
            .map(|(&c, &a)| self.moved(c, Move::from_index(a)))
            .collect();
        let coverage = self.coverage(&agents, &state.goals);
        let mut reward = self.grid.reward_step;
        if coverage > state.best_coverage {
            reward += self.grid.reward_progress * (coverage - state.best_coverage) as f64;
        }
        let won = coverage == self.grid.n_goals;
        if won {
            reward += self.grid.reward_win;
        }
        let step_index = state.view.step_index + 1;
        let terminal = won || step_index >= self.grid.horizon;
        let best = coverage.max(state.best_coverage);
        Ok((reward, self.make_state(agents, state.goals.clone(), step_index, best, terminal, won)))
    }
}
