//! Deterministic single-agent decision trees with a reward only at the leaves.
//!
//! A node is identified by the action prefix that reaches it. Node ids are
//! assigned in level order: depth `d` occupies ids
//! `(b^d - 1)/(b - 1) .. (b^(d+1) - 1)/(b - 1)`, and within a level the
//! prefix is read as a base-`b` number with the first action most
//! significant. Leaves use the same base-`b` code as an index into
//! `leaf_rewards`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmdp::{check_action, EnvState, Environment, JointAction, MmdpSpec};
use crate::seeding::{mix64, rng_from};

/// Largest supported leaf count (2^20).
pub const MAX_LEAVES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreeKind {
    Example1,
    Example2,
    Random,
}

/// How a constructed counterexample tree was built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeConstruction {
    pub kind: TreeKind,
    /// The unattacked optimal action sequence (reward 50).
    pub optimal: Vec<usize>,
    /// Step at which leaving the optimal path opens the 49 / -100 pair
    /// (binary trees only).
    pub t: Option<usize>,
    /// Step at which leaving the optimal path leads to the 48 leaf.
    pub p: usize,
    /// Continuation after the 49-branch deviation, excluding the final action.
    pub detour: Vec<usize>,
    /// Continuation after the 48-branch deviation, through the last step.
    pub fallback: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeGameSpec {
    pub branching: usize,
    pub depth: usize,
    /// Indexed by the base-`branching` code of the full action sequence.
    pub leaf_rewards: Vec<f64>,
    pub construction: Option<TreeConstruction>,
}

fn checked_leaves(branching: usize, depth: usize) -> Result<usize> {
    let mut n: usize = 1;
    for _ in 0..depth {
        n = n
            .checked_mul(branching)
            .filter(|&n| n <= MAX_LEAVES)
            .ok_or_else(|| Error::TooLarge(format!("{branching}^{depth} leaves exceeds {MAX_LEAVES}")))?;
    }
    Ok(n)
}

/// Filler reward in `[0, 47]` for a leaf, a pure function of seed and leaf code.
fn filler(seed: u64, code: usize) -> f64 {
    (mix64(seed ^ mix64(code as u64 ^ 0xF111_E5)) % 48) as f64
}

impl TreeGameSpec {
    pub fn new(branching: usize, depth: usize, leaf_rewards: Vec<f64>) -> Result<Self> {
        if !(2..=3).contains(&branching) {
            return Err(Error::ConfigMismatch(format!("branching {branching} not in {{2,3}}")));
        }
        if depth == 0 {
            return Err(Error::ConfigMismatch("tree depth must be >= 1".into()));
        }
        let n = checked_leaves(branching, depth)?;
        if leaf_rewards.len() != n {
            return Err(Error::WrongArity { expected: n, got: leaf_rewards.len() });
        }
        Ok(Self { branching, depth, leaf_rewards, construction: None })
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_rewards.len()
    }

    /// Number of internal (decision) nodes.
    pub fn n_internal(&self) -> usize {
        (self.n_leaves() - 1) / (self.branching - 1)
    }

    /// First node id at `depth`.
    pub fn level_offset(&self, depth: usize) -> usize {
        (self.branching.pow(depth as u32) - 1) / (self.branching - 1)
    }

    pub fn node_id(&self, depth: usize, code: usize) -> usize {
        self.level_offset(depth) + code
    }

    /// Inverse of `node_id`.
    pub fn locate(&self, node: usize) -> (usize, usize) {
        let mut depth = 0;
        while self.level_offset(depth + 1) <= node {
            depth += 1;
        }
        (depth, node - self.level_offset(depth))
    }

    pub fn code_of(&self, prefix: &[usize]) -> usize {
        prefix.iter().fold(0, |acc, &a| acc * self.branching + a)
    }

    pub fn node_of_prefix(&self, prefix: &[usize]) -> usize {
        self.node_id(prefix.len(), self.code_of(prefix))
    }

    pub fn leaf_reward(&self, sequence: &[usize]) -> f64 {
        debug_assert_eq!(sequence.len(), self.depth);
        self.leaf_rewards[self.code_of(sequence)]
    }

    pub fn sequence_of_code(&self, mut code: usize, len: usize) -> Vec<usize> {
        let mut seq = vec![0; len];
        for slot in seq.iter_mut().rev() {
            *slot = code % self.branching;
            code /= self.branching;
        }
        seq
    }

    /// Node A: the optimal-path node at the step where deviating leads to the 48 leaf.
    pub fn node_a(&self) -> Option<usize> {
        let c = self.construction.as_ref()?;
        Some(self.node_of_prefix(&c.optimal[..c.p]))
    }

    /// Node B (binary counterexample): the optimal-path node at step `t`.
    pub fn node_b(&self) -> Option<usize> {
        let c = self.construction.as_ref()?;
        Some(self.node_of_prefix(&c.optimal[..c.t?]))
    }

    /// Action sequence reaching the unique -100 leaf of a constructed tree.
    pub fn worst_sequence(&self) -> Option<Vec<usize>> {
        let c = self.construction.as_ref()?;
        let split = match c.kind {
            TreeKind::Example1 => c.t?,
            TreeKind::Example2 => c.p,
            TreeKind::Random => return None,
        };
        let mut seq = c.optimal[..split].to_vec();
        seq.push(self.first_branch(c, split));
        seq.extend(&c.detour);
        seq.push(0);
        Some(seq)
    }

    fn first_branch(&self, c: &TreeConstruction, step: usize) -> usize {
        match c.kind {
            TreeKind::Example2 => (c.optimal[step] + 1) % 3,
            _ => 1 - c.optimal[step],
        }
    }
}

/// Binary counterexample: the reward-50 optimal path, a 49 / -100 pair hanging
/// off step `t`, and a 48 leaf off step `p`, with `p < t < T-1`.
pub fn build_example1(depth: usize, t: usize, p: usize, filler_seed: u64) -> Result<TreeGameSpec> {
    if depth < 4 || !(p < t && t + 1 < depth) {
        return Err(Error::InvalidIndices(format!("need T >= 4 and p < t < T-1, got T={depth} t={t} p={p}")));
    }
    let mut rng = rng_from(filler_seed);
    let optimal: Vec<usize> = (0..depth).map(|_| rng.gen_range(0..2)).collect();
    let detour: Vec<usize> = (t + 1..depth - 1).map(|_| rng.gen_range(0..2)).collect();
    let fallback: Vec<usize> = (p + 1..depth).map(|_| rng.gen_range(0..2)).collect();

    let mut spec = TreeGameSpec::new(2, depth, vec![0.0; 1 << depth])?;
    for (code, r) in spec.leaf_rewards.iter_mut().enumerate() {
        *r = filler(filler_seed, code);
    }
    let construction = TreeConstruction { kind: TreeKind::Example1, optimal, t: Some(t), p, detour, fallback };
    place_special_leaves(&mut spec, &construction, t, 1 - construction.optimal[t], 1 - construction.optimal[p]);
    spec.construction = Some(construction);
    Ok(spec)
}

/// Ternary counterexample: at step `p` the branch `(a*_p + 1) mod 3` hides the
/// 49 / -100 pair while `(a*_p + 2) mod 3` leads to 48.
pub fn build_example2(depth: usize, p: usize, filler_seed: u64) -> Result<TreeGameSpec> {
    if depth < 3 || p + 1 >= depth {
        return Err(Error::InvalidIndices(format!("need T >= 3 and p < T-1, got T={depth} p={p}")));
    }
    let mut rng = rng_from(filler_seed);
    let optimal: Vec<usize> = (0..depth).map(|_| rng.gen_range(0..3)).collect();
    let detour: Vec<usize> = (p + 1..depth - 1).map(|_| rng.gen_range(0..3)).collect();
    let fallback: Vec<usize> = (p + 1..depth).map(|_| rng.gen_range(0..3)).collect();

    let mut spec = TreeGameSpec::new(3, depth, vec![0.0; 3usize.pow(depth as u32)])?;
    for (code, r) in spec.leaf_rewards.iter_mut().enumerate() {
        *r = filler(filler_seed, code);
    }
    let construction = TreeConstruction { kind: TreeKind::Example2, optimal, t: None, p, detour, fallback };
    let a_p = construction.optimal[p];
    place_special_leaves(&mut spec, &construction, p, (a_p + 1) % 3, (a_p + 2) % 3);
    spec.construction = Some(construction);
    Ok(spec)
}

fn place_special_leaves(
    spec: &mut TreeGameSpec,
    c: &TreeConstruction,
    split: usize,
    detour_branch: usize,
    fallback_branch: usize,
) {
    let set = |spec: &mut TreeGameSpec, seq: &[usize], r: f64| {
        let code = spec.code_of(seq);
        spec.leaf_rewards[code] = r;
    };
    set(spec, &c.optimal, 50.0);

    let mut detour = c.optimal[..split].to_vec();
    detour.push(detour_branch);
    detour.extend(&c.detour);
    let mut good = detour.clone();
    good.push(1);
    detour.push(0);
    set(spec, &good, 49.0);
    set(spec, &detour, -100.0);

    let mut fallback = c.optimal[..c.p].to_vec();
    fallback.push(fallback_branch);
    fallback.extend(&c.fallback);
    set(spec, &fallback, 48.0);
}

/// Tree with i.i.d. uniform integer leaves in `[-100, 50]`.
pub fn build_random_tree(depth: usize, branching: usize, seed: u64) -> Result<TreeGameSpec> {
    let n = checked_leaves(branching, depth)?;
    let mut rng = rng_from(seed);
    let leaves = (0..n).map(|_| rng.gen_range(-100i32..=50) as f64).collect();
    TreeGameSpec::new(branching, depth, leaves)
}

/// State of a tree game: the EnvState view plus the current prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeState {
    pub view: EnvState,
    pub depth: usize,
    pub code: usize,
}

impl AsRef<EnvState> for TreeState {
    fn as_ref(&self) -> &EnvState {
        &self.view
    }
}

/// A tree game as a one-agent environment. The observation (and global
/// state) is the current node id.
#[derive(Debug, Clone)]
pub struct TreeGame {
    pub tree: TreeGameSpec,
    spec: MmdpSpec,
}

impl TreeGame {
    pub fn new(tree: TreeGameSpec) -> Self {
        let spec = MmdpSpec {
            n_agents: 1,
            action_counts: vec![tree.branching],
            obs_dims: vec![1],
            state_dim: 1,
            horizon: tree.depth,
            discount: 1.0,
            initial_dist: "single deterministic root".into(),
        };
        Self { tree, spec }
    }

    fn make_state(&self, depth: usize, code: usize) -> TreeState {
        let terminal = depth == self.tree.depth;
        let id = self.tree.node_id(depth, code) as f64;
        TreeState {
            view: EnvState {
                global_state: vec![id],
                observations: vec![vec![id]],
                step_index: depth,
                terminal,
                won: false,
                action_masks: vec![vec![!terminal; self.tree.branching]],
            },
            depth,
            code,
        }
    }

    /// State reached by following `prefix` from the root.
    pub fn state_at(&self, prefix: &[usize]) -> TreeState {
        self.make_state(prefix.len(), self.tree.code_of(prefix))
    }
}

impl Environment for TreeGame {
    type State = TreeState;

    fn spec(&self) -> &MmdpSpec {
        &self.spec
    }

    fn reset(&self, _seed: u64) -> TreeState {
        self.make_state(0, 0)
    }

    fn step(&self, state: &TreeState, action: &JointAction) -> Result<(f64, TreeState)> {
        check_action(&state.view, action)?;
        let code = state.code * self.tree.branching + action.actions[0];
        let next = self.make_state(state.depth + 1, code);
        let reward = if next.depth == self.tree.depth { self.tree.leaf_rewards[code] } else { 0.0 };
        Ok((reward, next))
    }

    fn reports_wins(&self) -> bool {
        false
    }
}
