//! Exact oracles and heuristic attack baselines.

pub mod heuristics;
pub mod oracle;

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub use heuristics::{
    attack_dense, attack_random, attack_rlf, attack_rule_based, threshold_grid, train_rlf, RandomMode, TimingEnv,
    TimingPolicy,
};
pub use oracle::{
    budget_dp, oracle_budget_dp, oracle_reg_dp, reg_dp, replay_plan, value_iteration, ActionSet, OracleResult, PlanStep,
    Replay, TreeQ,
};

/// Vulnerability score used by the rule-based timing baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeltaRule {
    /// Largest minus smallest softmax probability.
    MaxDiff,
    /// Normalized negative entropy of the softmax.
    Entropy,
}

impl fmt::Display for DeltaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeltaRule::MaxDiff => "maxdiff",
            DeltaRule::Entropy => "entropy",
        })
    }
}

impl FromStr for DeltaRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "maxdiff" => Ok(DeltaRule::MaxDiff),
            "entropy" => Ok(DeltaRule::Entropy),
            _ => Err(Error::Config(format!("unknown delta rule {s:?}"))),
        }
    }
}

impl DeltaRule {
    /// Range swept when searching thresholds.
    pub fn range(self) -> (f64, f64) {
        match self {
            DeltaRule::MaxDiff => (0.0, 1.0),
            DeltaRule::Entropy => (-1.0, 0.0),
        }
    }
}

pub fn softmax(q: &[f64]) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = q.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

pub fn delta_score(rule: DeltaRule, q: &[f64]) -> f64 {
    let p = softmax(q);
    match rule {
        DeltaRule::MaxDiff => {
            let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        }
        DeltaRule::Entropy => {
            if p.len() < 2 {
                return 0.0;
            }
            let s: f64 = p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum();
            s / (p.len() as f64).ln()
        }
    }
}

/// Lowest-valued legal action other than `greedy`; `greedy` if none exists.
pub fn lowest_q_action(q: &[f64], mask: &[bool], greedy: usize) -> usize {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && a != greedy && best.map_or(true, |b| v < q[b]) {
            best = Some(a);
        }
    }
    best.unwrap_or(greedy)
}
