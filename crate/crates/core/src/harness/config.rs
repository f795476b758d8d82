//! Line-oriented experiment configuration: `key = value` with dotted
//! section prefixes. Comma-separated values on sweepable keys expand into
//! one configuration per value.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::attack::{validate_targets, AttackerAlgo};
use crate::baselines::{DeltaRule, RandomMode};
use crate::env::{build_example1, build_example2, build_random_tree, GoalGather, GridTeamSpec, TreeGame, TreeGameSpec};
use crate::error::{Error, Result};
use crate::learners::{Algo, TrainConfig};

/// Keys that may hold a comma-separated sweep.
pub const SWEEP_KEYS: [&str; 5] = ["attack.lambda", "attack.prob", "attack.threshold", "attack.c_adv", "attack.budget"];

const TRAIN_KEYS: [&str; 14] = [
    "episodes",
    "eps_start",
    "eps_end",
    "eps_anneal",
    "lr",
    "batch_size",
    "target_period",
    "discount",
    "hidden",
    "mixer_embed",
    "hyper_hidden",
    "buffer_capacity",
    "train_every",
    "grad_clip",
];

#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    TreeExample1 { depth: usize, t: usize, p: usize, filler_seed: u64 },
    TreeExample2 { depth: usize, p: usize, filler_seed: u64 },
    TreeRandom { depth: usize, branching: usize, seed: u64 },
    GoalGather(GridTeamSpec),
}

impl EnvConfig {
    pub fn is_tree(&self) -> bool {
        !matches!(self, EnvConfig::GoalGather(_))
    }

    pub fn tree(&self) -> Result<TreeGameSpec> {
        match *self {
            EnvConfig::TreeExample1 { depth, t, p, filler_seed } => build_example1(depth, t, p, filler_seed),
            EnvConfig::TreeExample2 { depth, p, filler_seed } => build_example2(depth, p, filler_seed),
            EnvConfig::TreeRandom { depth, branching, seed } => build_random_tree(depth, branching, seed),
            EnvConfig::GoalGather(_) => Err(Error::ConfigMismatch("not a tree game".into())),
        }
    }

    pub fn tree_game(&self) -> Result<TreeGame> {
        self.tree().map(TreeGame::new)
    }

    pub fn goalgather(&self) -> Result<GoalGather> {
        match self {
            EnvConfig::GoalGather(spec) => GoalGather::new(spec.clone()),
            _ => Err(Error::ConfigMismatch("not a gridworld".into())),
        }
    }
}

/// The single attack (or non-attack) a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    None,
    Opt { lambda: f64 },
    Random { mode: RandomMode, prob: f64 },
    RuleBased { rule: DeltaRule, threshold: f64 },
    Dense,
    Rlf { c_adv: f64 },
    OracleBudget { budget: usize },
    OracleReg { lambda: f64 },
}

impl Method {
    /// Short name used in reports.
    pub fn label(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Opt { .. } => "OPT",
            Method::Random { mode: RandomMode::Random, .. } => "Ra-R",
            Method::Random { mode: RandomMode::LowestQ, .. } => "Ra-L",
            Method::RuleBased { .. } => "Ru-B",
            Method::Dense => "Ru-D",
            Method::Rlf { .. } => "RL-F",
            Method::OracleBudget { .. } => "oracle-budget",
            Method::OracleReg { .. } => "oracle-reg",
        }
    }

    /// Parameter column of reports.
    pub fn parameter(&self) -> String {
        match self {
            Method::None | Method::Dense => "-".into(),
            Method::Opt { lambda } | Method::OracleReg { lambda } => format!("lambda={lambda}"),
            Method::Random { prob, .. } => format!("p={prob}"),
            Method::RuleBased { rule, threshold } => format!("{rule}>={threshold}"),
            Method::Rlf { c_adv } => format!("c_adv={c_adv}"),
            Method::OracleBudget { budget } => format!("N={budget}"),
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, Method::OracleBudget { .. } | Method::OracleReg { .. })
    }

    pub fn learns(&self) -> bool {
        matches!(self, Method::Opt { .. } | Method::Rlf { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub base_algo: Algo,
    pub base_train: TrainConfig,
    pub method: Method,
    pub targets: Vec<usize>,
    pub attacker_algo: AttackerAlgo,
    pub attack_train: TrainConfig,
    pub n_eval_episodes: usize,
    pub n_seeds: usize,
    pub master_seed: u64,
    /// Canonical `key = value` text of this configuration.
    pub text: String,
}

impl ExperimentConfig {
    pub fn hash(&self) -> String {
        crate::learners::policy::hex(&Sha256::digest(self.text.as_bytes()))
    }
}

/// Parses `key = value` lines. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Config(format!("line {}: empty key or value", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

fn known_key(key: &str) -> bool {
    const FIXED: [&str; 28] = [
        "env.kind",
        "env.depth",
        "env.t",
        "env.p",
        "env.filler_seed",
        "env.branching",
        "env.tree_seed",
        "env.width",
        "env.height",
        "env.n_agents",
        "env.horizon",
        "env.obs_radius",
        "env.reward_win",
        "env.reward_step",
        "env.reward_progress",
        "base.algo",
        "attack.method",
        "attack.lambda",
        "attack.prob",
        "attack.threshold",
        "attack.rule",
        "attack.c_adv",
        "attack.budget",
        "attack.targets",
        "attack.algo",
        "eval.episodes",
        "run.seeds",
        "run.master_seed",
    ];
    if FIXED.contains(&key) {
        return true;
    }
    ["base.train.", "attack.train."]
        .iter()
        .any(|p| key.strip_prefix(p).is_some_and(|rest| TRAIN_KEYS.contains(&rest)))
}

/// Expands sweeps and resolves every configuration in `text`.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>> {
    let pairs = parse_pairs(text)?;
    if let Some(bad) = pairs.keys().find(|k| !known_key(k)) {
        return Err(Error::Config(format!("unknown key {bad}")));
    }
    let mut variants: Vec<BTreeMap<String, String>> = vec![pairs.clone()];
    for key in SWEEP_KEYS {
        let Some(value) = pairs.get(key) else { continue };
        let items: Vec<&str> = value.split(',').map(str::trim).collect();
        if items.iter().any(|s| s.is_empty()) {
            return Err(Error::Config(format!("{key}: empty sweep item")));
        }
        variants = variants
            .into_iter()
            .flat_map(|v| {
                items.iter().map(move |item| {
                    let mut v = v.clone();
                    v.insert(key.to_string(), item.to_string());
                    v
                })
            })
            .collect();
    }
    variants.iter().map(resolve).collect()
}

/// Parses a single configuration; sweeps are an error here.
pub fn parse_single(text: &str) -> Result<ExperimentConfig> {
    let mut all = parse_config(text)?;
    if all.len() != 1 {
        return Err(Error::Config(format!("expected one configuration, sweep expands to {}", all.len())));
    }
    Ok(all.remove(0))
}

struct Reader<'a> {
    pairs: &'a BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.pairs.get(key)?.clone();
        self.used.insert(key.to_string(), v.clone());
        Some(v)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: ToString,
    {
        let value = match self.raw(key) {
            Some(v) => v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))?,
            None => default,
        };
        self.used.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn required<T: FromStr + ToString>(&mut self, key: &str) -> Result<T> {
        let v = self.raw(key).ok_or_else(|| Error::Config(format!("missing key {key}")))?;
        v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
    }

    fn list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        let out = match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))))
                .collect::<Result<Vec<usize>>>()?,
            None => default.to_vec(),
        };
        self.used.insert(key.to_string(), join(&out));
        Ok(out)
    }

    fn train(&mut self, prefix: &str, mut cfg: TrainConfig) -> Result<TrainConfig> {
        let episodes = self.get(&format!("{prefix}episodes"), cfg.episodes)?;
        if episodes != cfg.episodes {
            let fresh = TrainConfig::with_episodes(episodes);
            cfg.episodes = episodes;
            cfg.eps_anneal = fresh.eps_anneal;
        }
        cfg.eps_start = self.get(&format!("{prefix}eps_start"), cfg.eps_start)?;
        cfg.eps_end = self.get(&format!("{prefix}eps_end"), cfg.eps_end)?;
        cfg.eps_anneal = self.get(&format!("{prefix}eps_anneal"), cfg.eps_anneal)?;
        cfg.lr = self.get(&format!("{prefix}lr"), cfg.lr)?;
        cfg.batch_size = self.get(&format!("{prefix}batch_size"), cfg.batch_size)?;
        cfg.target_period = self.get(&format!("{prefix}target_period"), cfg.target_period)?;
        cfg.discount = self.get(&format!("{prefix}discount"), cfg.discount)?;
        cfg.hidden = self.list(&format!("{prefix}hidden"), &cfg.hidden)?;
        cfg.mixer_embed = self.get(&format!("{prefix}mixer_embed"), cfg.mixer_embed)?;
        cfg.hyper_hidden = self.get(&format!("{prefix}hyper_hidden"), cfg.hyper_hidden)?;
        cfg.buffer_capacity = self.get(&format!("{prefix}buffer_capacity"), cfg.buffer_capacity)?;
        cfg.train_every = self.get(&format!("{prefix}train_every"), cfg.train_every)?;
        cfg.grad_clip = self.get(&format!("{prefix}grad_clip"), cfg.grad_clip)?;
        cfg.validate().map_err(|e| Error::Config(format!("{prefix}: {e}")))?;
        Ok(cfg)
    }
}

fn join(items: &[usize]) -> String {
    items.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Default training budgets per environment family.
fn default_train(tree: bool, attacker: bool) -> TrainConfig {
    if tree {
        let mut cfg = TrainConfig::with_episodes(if attacker { 200_000 } else { 50_000 });
        cfg.discount = 1.0;
        cfg
    } else {
        TrainConfig::with_episodes(if attacker { 20_000 } else { 30_000 })
    }
}

fn resolve(pairs: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
    let mut r = Reader { pairs, used: BTreeMap::new() };
    let kind: String = r.required("env.kind")?;
    let env = match kind.as_str() {
        "tree_example1" => EnvConfig::TreeExample1 {
            depth: r.get("env.depth", 6)?,
            t: r.get("env.t", 3)?,
            p: r.get("env.p", 1)?,
            filler_seed: r.get("env.filler_seed", 0)?,
        },
        "tree_example2" => EnvConfig::TreeExample2 {
            depth: r.get("env.depth", 5)?,
            p: r.get("env.p", 2)?,
            filler_seed: r.get("env.filler_seed", 0)?,
        },
        "tree_random" => EnvConfig::TreeRandom {
            depth: r.get("env.depth", 5)?,
            branching: r.get("env.branching", 2)?,
            seed: r.get("env.tree_seed", 0)?,
        },
        "goalgather" => {
            let d = GridTeamSpec::default();
            let n_agents = r.get("env.n_agents", d.n_agents)?;
            let spec = GridTeamSpec {
                width: r.get("env.width", d.width)?,
                height: r.get("env.height", d.height)?,
                n_agents,
                n_goals: n_agents,
                horizon: r.get("env.horizon", d.horizon)?,
                obs_radius: r.get("env.obs_radius", d.obs_radius)?,
                reward_win: r.get("env.reward_win", d.reward_win)?,
                reward_step: r.get("env.reward_step", d.reward_step)?,
                reward_progress: r.get("env.reward_progress", d.reward_progress)?,
            };
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            EnvConfig::GoalGather(spec)
        }
        other => return Err(Error::Config(format!("unknown env.kind {other:?}"))),
    };
    let tree = env.is_tree();
    // Build once so invalid indices surface as configuration errors.
    if tree {
        env.tree().map_err(|e| Error::Config(e.to_string()))?;
    }
    let n_agents = match &env {
        EnvConfig::GoalGather(g) => g.n_agents,
        _ => 1,
    };

    let base_algo: Algo = r.get("base.algo", if tree { Algo::TabularVi } else { Algo::Qmix })?;
    let base_train = r.train("base.train.", default_train(tree, false))?;

    let method_name: String = r.required("attack.method")?;
    let method = match method_name.as_str() {
        "none" => Method::None,
        "opt" => Method::Opt { lambda: r.required("attack.lambda")? },
        "ra-r" => Method::Random { mode: RandomMode::Random, prob: r.required("attack.prob")? },
        "ra-l" => Method::Random { mode: RandomMode::LowestQ, prob: r.required("attack.prob")? },
        "ru-b" => Method::RuleBased {
            rule: r.get("attack.rule", DeltaRule::MaxDiff)?,
            threshold: r.required("attack.threshold")?,
        },
        "ru-d" => Method::Dense,
        "rl-f" => Method::Rlf { c_adv: r.required("attack.c_adv")? },
        "oracle-budget" => Method::OracleBudget { budget: r.required("attack.budget")? },
        "oracle-reg" => Method::OracleReg { lambda: r.required("attack.lambda")? },
        other => return Err(Error::Config(format!("unknown attack.method {other:?}"))),
    };
    match method {
        Method::Opt { lambda } | Method::OracleReg { lambda } if !lambda.is_finite() || lambda < 0.0 => {
            return Err(Error::Config(format!("attack.lambda must be finite and non-negative, got {lambda}")));
        }
        Method::Random { prob, .. } if !(0.0..=1.0).contains(&prob) => {
            return Err(Error::Config(format!("attack.prob must lie in [0, 1], got {prob}")));
        }
        Method::Rlf { c_adv } if !c_adv.is_finite() || c_adv < 0.0 => {
            return Err(Error::Config(format!("attack.c_adv must be finite and non-negative, got {c_adv}")));
        }
        Method::RuleBased { threshold, .. } if threshold.is_nan() => {
            return Err(Error::Config("attack.threshold is NaN".into()));
        }
        _ => {}
    }
    if method.is_oracle() && !tree {
        return Err(Error::Config("oracle methods need a tree game".into()));
    }
    let targets = r.list("attack.targets", &[n_agents - 1])?;
    validate_targets(&targets, n_agents).map_err(|e| Error::Config(e.to_string()))?;
    let default_attacker = if tree {
        AttackerAlgo::TabularQ
    } else if targets.len() == 1 {
        AttackerAlgo::SingleAgentQmix
    } else {
        AttackerAlgo::MultiAgentQmix
    };
    let attacker_algo = r.get("attack.algo", default_attacker)?;
    let attack_train = r.train("attack.train.", default_train(tree, true))?;
    let n_eval_episodes = r.get("eval.episodes", 1000usize)?;
    let n_seeds = r.get("run.seeds", 5usize)?;
    let master_seed = r.get("run.master_seed", 0u64)?;
    if n_eval_episodes == 0 || n_seeds == 0 {
        return Err(Error::Config("eval.episodes and run.seeds must be positive".into()));
    }
    if let Some(extra) = pairs.keys().find(|k| !r.used.contains_key(*k)) {
        return Err(Error::Config(format!("{extra} does not apply to this environment or method")));
    }
    let mut text = String::new();
    for (k, v) in &r.used {
        let _ = writeln!(text, "{k} = {v}");
    }
    Ok(ExperimentConfig {
        env,
        base_algo,
        base_train,
        method,
        targets,
        attacker_algo,
        attack_train,
        n_eval_episodes,
        n_seeds,
        master_seed,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tree_opt_with_defaults() {
        let c = parse_single("env.kind = tree_example1\nattack.method = opt\nattack.lambda = 1\n").unwrap();
        assert_eq!(c.env, EnvConfig::TreeExample1 { depth: 6, t: 3, p: 1, filler_seed: 0 });
        assert_eq!(c.method, Method::Opt { lambda: 1.0 });
        assert_eq!((c.n_eval_episodes, c.n_seeds), (1000, 5));
        assert_eq!(c.targets, vec![0]);
        assert_eq!(c.attack_train.discount, 1.0);
        assert!(c.text.contains("eval.episodes = 1000"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        assert!(matches!(parse_config("env.kind = goalgather\nattack.method = none\nenv.colour = red\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("env.kind = goalgather\nattack.method = ra-r\nattack.prob = 2\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("env.kind = tree_example1\nenv.t = 9\nattack.method = none\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("env.kind = goalgather\nattack.method = oracle-reg\nattack.lambda = 1\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("env.kind = goalgather\nattack.method = none\nattack.targets = 1,1\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("oops\n"), Err(Error::Config(_))));
        assert!(matches!(parse_config("env.kind = goalgather\nattack.method = ru-d\nattack.lambda = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn sweeps_expand() {
        let all = parse_config("env.kind = tree_example1\nattack.method = opt\nattack.lambda = 0, 0.5, 1\n").unwrap();
        assert_eq!(all.len(), 3);
        assert_eq!(all[1].method, Method::Opt { lambda: 0.5 });
        assert_ne!(all[0].hash(), all[1].hash());
        assert!(parse_single("env.kind = tree_example1\nattack.method = opt\nattack.lambda = 0, 1\n").is_err());
    }

    #[test]
    fn canonical_text_is_order_independent() {
        let a = parse_single("env.kind = goalgather\nattack.method = ru-d\n# note\n").unwrap();
        let b = parse_single("attack.method = ru-d\n\nenv.kind   =  goalgather\n").unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.hash(), b.hash());
        let again = parse_single(&a.text).unwrap();
        assert_eq!(again.text, a.text);
    }

    #[test]
    fn train_overrides() {
        let c = parse_single(
            "env.kind = goalgather\nattack.method = opt\nattack.lambda = 1\nbase.train.episodes = 100\nbase.train.hidden = 8,8\n",
        )
        .unwrap();
        assert_eq!(c.base_train.episodes, 100);
        assert_eq!(c.base_train.eps_anneal, 20);
        assert_eq!(c.base_train.hidden, vec![8, 8]);
        assert_eq!(c.attacker_algo, AttackerAlgo::SingleAgentQmix);
    }
}
