use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Method};
use crate::attack::{rollout_attacked, summarize, train_attack, wrap_adversarial, AttackConfig, AttackStats};
use crate::baselines::{
    attack_dense, attack_random, attack_rlf, attack_rule_based, oracle_budget_dp, oracle_reg_dp, train_rlf,
    value_iteration, OracleResult,
};
use crate::env::TreeGameSpec;
use crate::error::{Error, Result};
use crate::learners::{evaluate_policy, train_base, Algo, QTeamPolicy};
use crate::mmdp::Environment;
use crate::seeding::derive_seed;

const SEED_STREAM: u64 = 0x7365_6564;
const BASE_STREAM: u64 = 0x6261_7365;
const ATTACK_STREAM: u64 = 0x6174_6b72;
const EVAL_SEED_STREAM: u64 = 0x6576_736d;

/// Outcome of one seed of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed_index: usize,
    pub seed: u64,
    /// Win rate under the attack; `None` on return-only environments.
    pub win_rate: Option<f64>,
    pub mean_return: f64,
    pub mean_regularized: f64,
    /// Mean attacked steps per episode, per target agent.
    pub mean_attacked: Vec<f64>,
    pub mean_total: f64,
    pub base_win_rate: Option<f64>,
    pub base_mean_return: f64,
    pub oracle: Option<OracleResult>,
    pub error: Option<String>,
}

impl SeedResult {
    /// Sort key of the median-of-three protocol.
    pub fn score(&self) -> f64 {
        self.win_rate.unwrap_or(self.mean_return)
    }

    /// Placeholder for a seed that errored; only `error` is meaningful.
    fn failed(seed_index: usize, seed: u64, error: &Error) -> Self {
        SeedResult {
            seed_index,
            seed,
            win_rate: None,
            mean_return: 0.0,
            mean_regularized: 0.0,
            mean_attacked: Vec::new(),
            mean_total: 0.0,
            base_win_rate: None,
            base_mean_return: 0.0,
            oracle: None,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Seed indices kept, in ascending score order.
    pub retained: Vec<usize>,
    pub win_rate: Option<f64>,
    pub mean_return: f64,
    pub mean_attacked: Vec<f64>,
    pub mean_total: f64,
}

impl Aggregate {
    pub fn attacked_fraction(&self) -> Vec<f64> {
        self.mean_attacked.iter().map(|a| if self.mean_total > 0.0 { a / self.mean_total } else { 0.0 }).collect()
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn aggregate_of(results: &[&SeedResult]) -> Aggregate {
    let m = results[0].mean_attacked.len();
    Aggregate {
        retained: results.iter().map(|r| r.seed_index).collect(),
        win_rate: results
            .iter()
            .map(|r| r.win_rate)
            .collect::<Option<Vec<f64>>>()
            .map(|w| mean(w.into_iter())),
        mean_return: mean(results.iter().map(|r| r.mean_return)),
        mean_attacked: (0..m).map(|i| mean(results.iter().map(|r| r.mean_attacked[i]))).collect(),
        mean_total: mean(results.iter().map(|r| r.mean_total)),
    }
}

/// Sorts five seed results by score (ties by seed index), drops the best
/// and the worst, and averages the remaining three.
pub fn aggregate_median3(results: &[SeedResult]) -> Result<Aggregate> {
    if results.len() != 5 {
        return Err(Error::WrongArity { expected: 5, got: results.len() });
    }
    let mut sorted: Vec<&SeedResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.score().total_cmp(&b.score()).then(a.seed_index.cmp(&b.seed_index)));
    Ok(aggregate_of(&sorted[1..4]))
}

/// Average over every seed, for runs that do not use five seeds.
pub fn aggregate_all(results: &[SeedResult]) -> Result<Aggregate> {
    if results.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut sorted: Vec<&SeedResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.score().total_cmp(&b.score()).then(a.seed_index.cmp(&b.seed_index)));
    Ok(aggregate_of(&sorted))
}

/// Everything a run produced. Stored as pretty-printed JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_text: String,
    pub config_hash: String,
    pub method: String,
    pub parameter: String,
    pub seeds: Vec<SeedResult>,
    /// Absent when the run is degraded.
    pub aggregate: Option<Aggregate>,
    pub degraded: bool,
    pub artifacts: Vec<String>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let record: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        let hash = crate::learners::policy::hex(&<sha2::Sha256 as sha2::Digest>::digest(record.config_text.as_bytes()));
        if hash != record.config_hash {
            return Err(Error::Format(format!("{}: config hash does not match the stored config", path.display())));
        }
        Ok(record)
    }
}

/// Base policies shared between the configurations of a sweep. Entries are
/// keyed by everything that determines the base: environment, learner,
/// training settings and seed.
#[derive(Debug, Default)]
pub struct BaseCache {
    policies: HashMap<String, QTeamPolicy>,
}

impl BaseCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    fn key(config: &ExperimentConfig, seed: u64) -> String {
        format!("{:?}|{}|{:?}|{seed}", config.env, config.base_algo, config.base_train)
    }
}

struct SeedContext<'c> {
    config: &'c ExperimentConfig,
    cache: &'c mut BaseCache,
    index: usize,
    seed: u64,
    dir: Option<PathBuf>,
    artifacts: Vec<String>,
}

impl SeedContext<'_> {
    fn save(&mut self, policy: &QTeamPolicy, name: &str) -> Result<()> {
        if let Some(dir) = &self.dir {
            fs::create_dir_all(dir)?;
            let base = dir.join(name);
            policy.save(&base)?;
            self.artifacts.push(base.display().to_string());
        }
        Ok(())
    }

    fn base_policy<E: Environment>(&mut self, env: &E, tree: Option<&TreeGameSpec>) -> Result<QTeamPolicy> {
        let key = BaseCache::key(self.config, self.seed);
        if let Some(policy) = self.cache.policies.get(&key) {
            let policy = policy.clone();
            self.save(&policy, "base")?;
            return Ok(policy);
        }
        let policy = match (tree, self.config.base_algo) {
            (Some(tree), Algo::TabularVi) => value_iteration(tree)?.to_policy(tree),
            (None, Algo::TabularVi) => return Err(Error::ConfigMismatch("tabular-vi needs a tree game".into())),
            (Some(_), Algo::Vdn | Algo::Qmix) => {
                return Err(Error::ConfigMismatch("tree games use tabular learners".into()));
            }
            (_, algo) => {
                let mut train = self.config.base_train.clone();
                train.seed = derive_seed(self.seed, BASE_STREAM, 0);
                train_base(env, algo, &train)?
            }
        };
        self.save(&policy, "base")?;
        self.cache.policies.insert(key, policy.clone());
        Ok(policy)
    }

    fn run<E: Environment>(&mut self, env: &E, tree: Option<&TreeGameSpec>) -> Result<SeedResult> {
        let cfg = self.config;
        let base = self.base_policy(env, tree)?;
        let eval_seed = derive_seed(self.seed, EVAL_SEED_STREAM, 0);
        let unattacked = evaluate_policy(env, &base, cfg.n_eval_episodes, eval_seed)?;
        let mut result = SeedResult {
            seed_index: self.index,
            seed: self.seed,
            win_rate: unattacked.win_rate,
            mean_return: unattacked.mean_return,
            mean_regularized: -unattacked.mean_return,
            mean_attacked: vec![0.0; cfg.targets.len()],
            mean_total: unattacked.mean_length,
            base_win_rate: unattacked.win_rate,
            base_mean_return: unattacked.mean_return,
            oracle: None,
            error: None,
        };
        let mut attack_train = cfg.attack_train.clone();
        attack_train.seed = derive_seed(self.seed, ATTACK_STREAM, 0);
        let (n, targets) = (cfg.n_eval_episodes, &cfg.targets[..]);
        let stats: Vec<AttackStats> = match cfg.method {
            Method::None => return Ok(result),
            Method::Opt { lambda } => {
                let adv = wrap_adversarial(env, &base, targets, lambda)?;
                let config =
                    AttackConfig { targets: targets.to_vec(), lambda, train: attack_train, algo: cfg.attacker_algo };
                let attacker = train_attack(&adv, &config)?;
                self.save(&attacker, "attacker")?;
                rollout_attacked(env, &base, &attacker, targets, lambda, n, eval_seed)?
            }
            Method::Random { mode, prob } => attack_random(mode, prob, &base, env, targets, n, eval_seed)?,
            Method::RuleBased { rule, threshold } => attack_rule_based(rule, threshold, &base, env, targets, n, eval_seed)?,
            Method::Dense => attack_dense(&base, env, targets, n, eval_seed)?,
            Method::Rlf { c_adv } => {
                let timing = train_rlf(env, &base, targets, c_adv, &attack_train, cfg.attacker_algo)?;
                self.save(&timing.policy, "timing")?;
                attack_rlf(env, &base, &timing, n, eval_seed)?
            }
            Method::OracleBudget { .. } | Method::OracleReg { .. } => {
                let tree = tree.ok_or_else(|| Error::ConfigMismatch("oracle methods need a tree game".into()))?;
                let oracle = match cfg.method {
                    Method::OracleBudget { budget } => oracle_budget_dp(tree, budget)?,
                    Method::OracleReg { lambda } => oracle_reg_dp(tree, lambda)?,
                    _ => unreachable!(),
                };
                result.mean_return = oracle.team_return;
                result.mean_regularized = match cfg.method {
                    Method::OracleReg { .. } => oracle.value,
                    _ => -oracle.team_return,
                };
                result.mean_attacked = vec![oracle.count as f64];
                result.mean_total = tree.depth as f64;
                result.oracle = Some(oracle);
                return Ok(result);
            }
        };
        let summary = summarize(&stats, env.reports_wins())?;
        result.win_rate = summary.win_rate;
        result.mean_return = summary.mean_return;
        result.mean_regularized = summary.mean_regularized;
        result.mean_attacked = summary.mean_attacked;
        result.mean_total = summary.mean_total;
        Ok(result)
    }
}

/// Seed of run `index` of an experiment.
pub fn seed_for(master_seed: u64, index: usize) -> u64 {
    derive_seed(master_seed, SEED_STREAM, index as u64)
}

/// Runs every seed of `config`. Seed failures mark the record degraded;
/// only configuration problems are returned as errors.
pub fn run_experiment(config: &ExperimentConfig, out: Option<&Path>) -> Result<RunRecord> {
    run_experiment_cached(config, out, &mut BaseCache::new())
}

/// Like `run_experiment`, reusing (and filling) `cache` for base policies.
pub fn run_experiment_cached(config: &ExperimentConfig, out: Option<&Path>, cache: &mut BaseCache) -> Result<RunRecord> {
    let start = Instant::now();
    let mut seeds = Vec::with_capacity(config.n_seeds);
    let mut artifacts = Vec::new();
    let hash = config.hash();
    for index in 0..config.n_seeds {
        let seed = seed_for(config.master_seed, index);
        let dir = out.map(|o| o.join(&hash[..12]).join(format!("seed{index}")));
        let mut ctx = SeedContext { config, cache: &mut *cache, index, seed, dir, artifacts: Vec::new() };
        let outcome = if config.env.is_tree() {
            let game = config.env.tree_game()?;
            ctx.run(&game, Some(&game.tree))
        } else {
            let grid = config.env.goalgather()?;
            ctx.run(&grid, None)
        };
        artifacts.append(&mut ctx.artifacts);
        seeds.push(outcome.unwrap_or_else(|e| SeedResult::failed(index, seed, &e)));
    }
    let degraded = seeds.iter().any(|s| s.error.is_some());
    let aggregate = if degraded {
        None
    } else if seeds.len() == 5 {
        Some(aggregate_median3(&seeds)?)
    } else {
        Some(aggregate_all(&seeds)?)
    };
    let record = RunRecord {
        config_text: config.text.clone(),
        config_hash: hash,
        method: config.method.label().into(),
        parameter: config.method.parameter(),
        seeds,
        aggregate,
        degraded,
        artifacts,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        record.save(&out.join(format!("{}.json", &record.config_hash[..12])))?;
    }
    Ok(record)
}
