//! Exact solvers on tree games: Q* by backward induction and the optimal
//! attack under a deviation budget or a per-deviation penalty.

use serde::{Deserialize, Serialize};

use crate::env::{TreeGame, TreeGameSpec};
use crate::error::{Error, Result};
use crate::learners::{Algo, QTable, QTeamPolicy};
use crate::mmdp::{Environment, JointAction};

/// Largest tree (in nodes) the oracles accept.
pub const MAX_NODES: usize = 1 << 21;

/// Exact optimal action values of a tree game.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeQ {
    pub branching: usize,
    pub depth: usize,
    /// Q row of every internal node, indexed by node id.
    pub q: Vec<Vec<f64>>,
}

impl TreeQ {
    pub fn q_row(&self, node: usize) -> &[f64] {
        &self.q[node]
    }

    /// Greedy action with lowest-index tie-breaking.
    pub fn greedy(&self, node: usize) -> usize {
        let row = &self.q[node];
        let mut best = 0;
        for (a, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    /// Tabular policy keyed by the node-id observation.
    pub fn to_policy(&self, tree: &TreeGameSpec) -> QTeamPolicy {
        let mut table = QTable::new(tree.branching);
        for (node, row) in self.q.iter().enumerate() {
            table.set_row(&[node as f64], row.clone());
        }
        QTeamPolicy::tabular(Algo::TabularVi, vec![table])
    }
}

fn check_size(tree: &TreeGameSpec) -> Result<()> {
    let nodes = tree.n_internal() + tree.n_leaves();
    if nodes > MAX_NODES {
        return Err(Error::TooLarge(format!("{nodes} nodes exceeds {MAX_NODES}")));
    }
    Ok(())
}

/// Backward induction (no intermediate rewards, no discounting).
pub fn value_iteration(tree: &TreeGameSpec) -> Result<TreeQ> {
    check_size(tree)?;
    let b = tree.branching;
    let mut q = vec![Vec::new(); tree.n_internal()];
    let mut below: Vec<f64> = tree.leaf_rewards.clone();
    for depth in (0..tree.depth).rev() {
        let width = b.pow(depth as u32);
        let mut values = Vec::with_capacity(width);
        for code in 0..width {
            let row: Vec<f64> = below[code * b..(code + 1) * b].to_vec();
            values.push(row.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            q[tree.node_id(depth, code)] = row;
        }
        below = values;
    }
    Ok(TreeQ { branching: b, depth: tree.depth, q })
}

/// One forced action in an attack plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step: usize,
    pub agent: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Team return for budget queries, regularized attacker objective otherwise.
    pub value: f64,
    pub team_return: f64,
    pub plan: Vec<PlanStep>,
    pub count: usize,
}

impl OracleResult {
    /// Witness as `step:action` pairs, e.g. `3:1 5:0`.
    pub fn witness_string(&self) -> String {
        self.plan.iter().map(|p| format!("{}:{}", p.step, p.action)).collect::<Vec<_>>().join(" ")
    }
}

/// Actions the attacker may force at a node, given the greedy action there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSet {
    /// Any action.
    All,
    /// Pass through, or force the lowest-Q non-greedy action.
    ForcedArgmin,
}

impl ActionSet {
    fn candidates(self, q: &TreeQ, node: usize) -> Vec<usize> {
        let greedy = q.greedy(node);
        match self {
            ActionSet::All => {
                let mut c = vec![greedy];
                c.extend((0..q.branching).filter(|&a| a != greedy));
                c
            }
            ActionSet::ForcedArgmin => {
                let mask = vec![true; q.branching];
                vec![greedy, super::lowest_q_action(q.q_row(node), &mask, greedy)]
            }
        }
    }
}

/// Best (reward, deviation count, action) at every internal node.
#[derive(Clone, Copy)]
struct Cell {
    reward: f64,
    count: u32,
    choice: u8,
}

fn leaf_cells(tree: &TreeGameSpec, slots: usize) -> Vec<Cell> {
    tree.leaf_rewards
        .iter()
        .flat_map(|&r| std::iter::repeat(Cell { reward: r, count: 0, choice: 0 }).take(slots))
        .collect()
}

/// Minimum team return with at most `budget` deviations from the greedy path.
pub fn oracle_budget_dp(tree: &TreeGameSpec, budget: usize) -> Result<OracleResult> {
    budget_dp(tree, budget, ActionSet::All)
}

/// Budget-constrained minimization restricted to `actions`.
pub fn budget_dp(tree: &TreeGameSpec, budget: usize, actions: ActionSet) -> Result<OracleResult> {
    let q = value_iteration(tree)?;
    let b = tree.branching;
    let slots = budget.min(tree.depth) + 1;
    let mut levels: Vec<Vec<Cell>> = vec![Vec::new(); tree.depth + 1];
    levels[tree.depth] = leaf_cells(tree, slots);
    for depth in (0..tree.depth).rev() {
        let width = b.pow(depth as u32);
        let mut cells = Vec::with_capacity(width * slots);
        for code in 0..width {
            let node = tree.node_id(depth, code);
            let greedy = q.greedy(node);
            let candidates = actions.candidates(&q, node);
            for left in 0..slots {
                let mut best: Option<Cell> = None;
                for &a in &candidates {
                    let deviates = a != greedy;
                    if deviates && left == 0 {
                        continue;
                    }
                    let child = levels[depth + 1][(code * b + a) * slots + left - deviates as usize];
                    let cand = Cell { reward: child.reward, count: child.count + deviates as u32, choice: a as u8 };
                    let better = match best {
                        None => true,
                        Some(cur) => cand.reward < cur.reward || (cand.reward == cur.reward && cand.count < cur.count),
                    };
                    if better {
                        best = Some(cand);
                    }
                }
                cells.push(best.expect("greedy action is always a candidate"));
            }
        }
        levels[depth] = cells;
    }
    let (plan, team_return) = extract_plan(tree, &q, &levels, slots, slots - 1, true);
    Ok(OracleResult { value: team_return, team_return, count: plan.len(), plan })
}

fn extract_plan(
    tree: &TreeGameSpec,
    q: &TreeQ,
    levels: &[Vec<Cell>],
    slots: usize,
    mut left: usize,
    spend: bool,
) -> (Vec<PlanStep>, f64) {
    let mut code = 0;
    let mut plan = Vec::new();
    for (depth, level) in levels.iter().enumerate().take(tree.depth) {
        let cell = level[code * slots + left];
        let a = cell.choice as usize;
        if a != q.greedy(tree.node_id(depth, code)) {
            plan.push(PlanStep { step: depth, agent: 0, action: a });
            if spend {
                left -= 1;
            }
        }
        code = code * tree.branching + a;
    }
    (plan, tree.leaf_rewards[code])
}

fn regularized_score(reward: f64, count: u32, lambda: f64) -> f64 {
    -reward - lambda * count as f64
}

/// Maximum of `-return - lambda * deviations`. Ties prefer fewer deviations.
pub fn oracle_reg_dp(tree: &TreeGameSpec, lambda: f64) -> Result<OracleResult> {
    reg_dp(tree, lambda, ActionSet::All)
}

/// Regularized maximization restricted to `actions`.
pub fn reg_dp(tree: &TreeGameSpec, lambda: f64, actions: ActionSet) -> Result<OracleResult> {
    if !lambda.is_finite() {
        return Err(Error::ConfigMismatch(format!("lambda must be finite, got {lambda}")));
    }
    let q = value_iteration(tree)?;
    let b = tree.branching;
    let mut levels: Vec<Vec<Cell>> = vec![Vec::new(); tree.depth + 1];
    levels[tree.depth] = leaf_cells(tree, 1);
    for depth in (0..tree.depth).rev() {
        let width = b.pow(depth as u32);
        let mut cells = Vec::with_capacity(width);
        for code in 0..width {
            let node = tree.node_id(depth, code);
            let greedy = q.greedy(node);
            let mut best: Option<Cell> = None;
            for a in actions.candidates(&q, node) {
                let child = levels[depth + 1][code * b + a];
                let cand = Cell { reward: child.reward, count: child.count + (a != greedy) as u32, choice: a as u8 };
                let better = match best {
                    None => true,
                    Some(cur) => {
                        let (s_new, s_cur) =
                            (regularized_score(cand.reward, cand.count, lambda), regularized_score(cur.reward, cur.count, lambda));
                        let tol = 1e-9 * s_new.abs().max(s_cur.abs()).max(1.0);
                        s_new > s_cur + tol || ((s_new - s_cur).abs() <= tol && cand.count < cur.count)
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
            cells.push(best.expect("at least one candidate"));
        }
        levels[depth] = cells;
    }
    let (plan, team_return) = extract_plan(tree, &q, &levels, 1, 0, false);
    let count = plan.len();
    Ok(OracleResult { value: regularized_score(team_return, count as u32, lambda), team_return, plan, count })
}

/// Result of replaying a plan through the environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replay {
    pub team_return: f64,
    pub deviations: usize,
    pub regularized: f64,
}

/// Replays `plan` through `env_step`: planned steps take the forced action,
/// all others follow the greedy base policy.
pub fn replay_plan(tree: &TreeGameSpec, plan: &[PlanStep], lambda: f64) -> Result<Replay> {
    let q = value_iteration(tree)?;
    let env = TreeGame::new(tree.clone());
    let mut state = env.reset(0);
    let (mut ret, mut deviations) = (0.0, 0);
    while !state.view.terminal {
        let node = tree.node_id(state.depth, state.code);
        let greedy = q.greedy(node);
        let action = plan.iter().find(|p| p.step == state.depth).map_or(greedy, |p| p.action);
        deviations += (action != greedy) as usize;
        let (r, next) = env.step(&state, &JointAction::new(vec![action]))?;
        ret += r;
        state = next;
    }
    Ok(Replay { team_return: ret, deviations, regularized: regularized_score(ret, deviations as u32, lambda) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_example1, build_example2, build_random_tree};

    #[test]
    fn zero_tree_has_zero_q() {
        let tree = TreeGameSpec::new(2, 3, vec![0.0; 8]).unwrap();
        let q = value_iteration(&tree).unwrap();
        assert!(q.q.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(q.q.len(), 7);
    }

    #[test]
    fn example1_paper_q_values() {
        let tree = build_example1(6, 3, 1, 0).unwrap();
        let c = tree.construction.clone().unwrap();
        let q = value_iteration(&tree).unwrap();
        let a = q.q_row(tree.node_a().unwrap());
        let b = q.q_row(tree.node_b().unwrap());
        assert_eq!((a[c.optimal[1]], a[1 - c.optimal[1]]), (50.0, 48.0));
        assert_eq!((b[c.optimal[3]], b[1 - c.optimal[3]]), (50.0, 49.0));
    }

    #[test]
    fn budget_oracle_examples() {
        let tree = build_example1(6, 3, 1, 0).unwrap();
        let r0 = oracle_budget_dp(&tree, 0).unwrap();
        assert_eq!((r0.value, r0.count), (50.0, 0));
        let r2 = oracle_budget_dp(&tree, 2).unwrap();
        assert_eq!(r2.value, -100.0);
        assert_eq!(r2.plan.iter().map(|p| p.step).collect::<Vec<_>>(), vec![3, 5]);
        let r1 = oracle_budget_dp(&tree, 1).unwrap();
        assert!(r1.value >= 0.0);
    }

    #[test]
    fn regularized_oracle_examples() {
        let tree = build_example1(6, 3, 1, 0).unwrap();
        let r = oracle_reg_dp(&tree, 1.0).unwrap();
        assert_eq!((r.value, r.count, r.team_return), (98.0, 2, -100.0));
        let r = oracle_reg_dp(&tree, 0.0).unwrap();
        assert_eq!(r.value, 100.0);
        let r = oracle_reg_dp(&tree, 1e6).unwrap();
        assert_eq!((r.value, r.count), (-50.0, 0));
        assert!(oracle_reg_dp(&tree, f64::INFINITY).is_err());
    }

    #[test]
    fn example2_forced_argmin_cannot_reach_worst_leaf() {
        let tree = build_example2(5, 2, 0).unwrap();
        let forced = budget_dp(&tree, tree.depth, ActionSet::ForcedArgmin).unwrap();
        assert!(forced.value >= 0.0);
        let free = oracle_budget_dp(&tree, 2).unwrap();
        assert_eq!(free.value, -100.0);
    }

    #[test]
    fn replay_reproduces_oracle_values() {
        for seed in 0..10 {
            let tree = build_random_tree(5, 2, seed).unwrap();
            for lambda in [0.0, 0.5, 3.0] {
                let r = oracle_reg_dp(&tree, lambda).unwrap();
                let rep = replay_plan(&tree, &r.plan, lambda).unwrap();
                assert_eq!(rep.regularized.to_bits(), r.value.to_bits());
                assert_eq!(rep.deviations, r.count);
            }
            for n in 0..4 {
                let r = oracle_budget_dp(&tree, n).unwrap();
                assert_eq!(replay_plan(&tree, &r.plan, 0.0).unwrap().team_return, r.value);
                assert!(r.count <= n);
            }
        }
    }
}
