//! Acceptance suite: one PASS/FAIL line per criterion on stdout, progress on
//! stderr. Exits non-zero when any criterion fails.
//!
//! The GoalGather criteria (5b and 7) train 5 base policies and 25 attackers
//! and take the better part of an hour on one core; pass `quick` to skip them.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng as _;
use sparse_attack::approx::{Mlp, MlpSpec, MixerSpec, MonotonicMixer, ParamId, ParamStore, Tape, Tensor};
use sparse_attack::attack::{
    attacked_episode, rollout_attacked, train_attack, wrap_adversarial, AttackConfig, AttackerAlgo,
};
use sparse_attack::baselines::{
    attack_rule_based, budget_dp, delta_score, oracle_budget_dp, oracle_reg_dp, threshold_grid, value_iteration,
    ActionSet, DeltaRule, PlanStep,
};
use sparse_attack::env::{build_example1, build_example2, build_random_tree, GoalGather, GridTeamSpec, TreeGame, TreeGameSpec};
use sparse_attack::harness::{
    aggregate_median3, parse_config, parse_pairs, parse_single, run_experiment_cached, Aggregate, BaseCache,
    ExperimentConfig, SeedResult,
};
use sparse_attack::learners::{Algo, NetworkTrainer, QTeamPolicy, TrainConfig};
use sparse_attack::seeding::{derive_seed, rng_from};
use sparse_attack::{Environment, JointAction};

const MASTER: u64 = 20_240_607;

type Check = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------------------
// Independent tree oracles: plain recursion over action sequences.

/// Best leaf reachable below `prefix`.
fn best_below(tree: &TreeGameSpec, prefix: &mut Vec<usize>) -> f64 {
    if prefix.len() == tree.depth {
        return tree.leaf_reward(prefix);
    }
    let mut best = f64::NEG_INFINITY;
    for a in 0..tree.branching {
        prefix.push(a);
        best = best.max(best_below(tree, prefix));
        prefix.pop();
    }
    best
}

fn q_row(tree: &TreeGameSpec, prefix: &[usize]) -> Vec<f64> {
    let mut p = prefix.to_vec();
    (0..tree.branching)
        .map(|a| {
            p.push(a);
            let v = best_below(tree, &mut p);
            p.pop();
            v
        })
        .collect()
}

fn greedy_of(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// Every full action sequence with its leaf reward and deviation count
/// against the greedy path of the exact Q function.
fn enumerate_paths(tree: &TreeGameSpec) -> Vec<(Vec<usize>, f64, usize)> {
    let n = tree.n_leaves();
    (0..n)
        .map(|code| {
            let seq = tree.sequence_of_code(code, tree.depth);
            let devs = (0..tree.depth).filter(|&d| greedy_of(&q_row(tree, &seq[..d])) != seq[d]).count();
            (seq.clone(), tree.leaf_reward(&seq), devs)
        })
        .collect()
}

/// Worst team return reachable when every attack forces the lowest-valued
/// non-greedy action, over all 2^T timings.
fn brute_forced_argmin(tree: &TreeGameSpec) -> f64 {
    let mut worst = f64::INFINITY;
    for mask in 0u32..(1 << tree.depth) {
        let mut seq = Vec::new();
        for d in 0..tree.depth {
            let row = q_row(tree, &seq);
            let g = greedy_of(&row);
            let a = if mask >> d & 1 == 1 {
                let mut low = None;
                for (a, &v) in row.iter().enumerate() {
                    if a != g && low.map_or(true, |l: usize| v < row[l]) {
                        low = Some(a);
                    }
                }
                low.unwrap_or(g)
            } else {
                g
            };
            seq.push(a);
        }
        worst = worst.min(tree.leaf_reward(&seq));
    }
    worst
}

// ---------------------------------------------------------------------------

fn c1_q_star() -> Check {
    let mut bad = Vec::new();
    for s in 0..10u64 {
        let tree = build_example1(6, 3, 1, s).map_err(err)?;
        let q = value_iteration(&tree).map_err(err)?;
        let c = tree.construction.clone().expect("constructed");
        let ordered = |node: usize, a_star: usize| -> Vec<f64> {
            let row = q.q_row(node);
            (0..row.len()).map(|k| row[(a_star + k) % row.len()]).collect()
        };
        let b = ordered(tree.node_b().expect("binary"), c.optimal[3]);
        let a = ordered(tree.node_a().expect("binary"), c.optimal[1]);
        if b != [50.0, 49.0] || a != [50.0, 48.0] {
            bad.push(format!("example1 seed {s}: B {b:?} A {a:?}"));
        }
        let tree = build_example2(5, 2, s).map_err(err)?;
        let q = value_iteration(&tree).map_err(err)?;
        let c = tree.construction.clone().expect("constructed");
        let row = q.q_row(tree.node_a().expect("ternary"));
        let a: Vec<f64> = (0..3).map(|k| row[(c.optimal[2] + k) % 3]).collect();
        if a != [50.0, 49.0, 48.0] {
            bad.push(format!("example2 seed {s}: A {a:?}"));
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "10 seeds x 2 examples exact".into() } else { bad.join("; ") }))
}

fn example1_instance(s: u64) -> (usize, usize, usize) {
    let depth = 5 + (s % 3) as usize;
    let t = 1 + (s as usize / 3) % (depth - 2);
    (depth, t, s as usize % t)
}

fn example2_instance(s: u64) -> (usize, usize) {
    let depth = 4 + (s % 3) as usize;
    (depth, (s as usize / 3) % (depth - 1))
}

fn c2_budget_oracle() -> Check {
    let mut bad = Vec::new();
    for s in 0..20u64 {
        let (depth, t, p) = example1_instance(s);
        let tree = build_example1(depth, t, p, s).map_err(err)?;
        let a_t = tree.construction.as_ref().expect("constructed").optimal[t];
        let want = vec![
            PlanStep { step: t, agent: 0, action: 1 - a_t },
            PlanStep { step: depth - 1, agent: 0, action: 0 },
        ];
        let got = oracle_budget_dp(&tree, 2).map_err(err)?;
        if got.team_return != -100.0 || got.plan != want {
            bad.push(format!("example1 T={depth} t={t} p={p} s={s}: {} [{}]", got.team_return, got.witness_string()));
        }
        let (depth, p) = example2_instance(s);
        let tree = build_example2(depth, p, s).map_err(err)?;
        let a_p = tree.construction.as_ref().expect("constructed").optimal[p];
        let want = vec![
            PlanStep { step: p, agent: 0, action: (a_p + 1) % 3 },
            PlanStep { step: depth - 1, agent: 0, action: 0 },
        ];
        let got = oracle_budget_dp(&tree, 2).map_err(err)?;
        if got.team_return != -100.0 || got.plan != want {
            bad.push(format!("example2 T={depth} p={p} s={s}: {} [{}]", got.team_return, got.witness_string()));
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "20 instances x 2 examples, -100 with witness".into() } else { bad.join("; ") }))
}

fn c3_rule_suboptimality() -> Check {
    let mut worst_rule = f64::INFINITY;
    let mut sweeps = 0usize;
    let mut bad = Vec::new();
    for s in 0..20u64 {
        let (depth, t, p) = example1_instance(s);
        let tree = build_example1(depth, t, p, s).map_err(err)?;
        let q = value_iteration(&tree).map_err(err)?;
        let base = q.to_policy(&tree);
        let game = TreeGame::new(tree.clone());
        for rule in [DeltaRule::MaxDiff, DeltaRule::Entropy] {
            let observed: Vec<f64> = (0..tree.n_internal()).map(|n| delta_score(rule, q.q_row(n))).collect();
            for th in threshold_grid(rule, 1000, &observed) {
                let stats = attack_rule_based(rule, th, &base, &game, &[0], 1, s).map_err(err)?;
                worst_rule = worst_rule.min(stats[0].team_return);
                sweeps += 1;
            }
        }
        let (depth, p) = example2_instance(s);
        let tree = build_example2(depth, p, s).map_err(err)?;
        let dp = budget_dp(&tree, depth, ActionSet::ForcedArgmin).map_err(err)?;
        let brute = brute_forced_argmin(&tree);
        if dp.team_return != brute || dp.team_return < 0.0 {
            bad.push(format!("example2 s={s}: dp {} brute {brute}", dp.team_return));
        }
    }
    if worst_rule < 0.0 {
        bad.push(format!("rule attack reached {worst_rule}"));
    }
    let pass = bad.is_empty();
    let detail = format!("{sweeps} rule episodes, worst return {worst_rule}; forced-argmin DP = brute force >= 0 on 20 trees");
    Ok((pass, if pass { detail } else { format!("{detail}; {}", bad.join("; ")) }))
}

fn c4_learner_matches_oracle() -> Check {
    let trees = [
        ("example1", build_example1(6, 3, 1, 0).map_err(err)?),
        ("example2", build_example2(5, 2, 0).map_err(err)?),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, tree) in &trees {
        let base = value_iteration(tree).map_err(err)?.to_policy(tree);
        let game = TreeGame::new(tree.clone());
        for lambda in [0.0, 0.5, 1.0, 5.0] {
            let oracle = oracle_reg_dp(tree, lambda).map_err(err)?;
            let adv = wrap_adversarial(&game, &base, &[0], lambda).map_err(err)?;
            let mut hits = 0;
            let mut counts_ok = true;
            for i in 0..5u64 {
                let mut train = TrainConfig::with_episodes(200_000);
                train.discount = 1.0;
                train.seed = derive_seed(MASTER, 4, i);
                let cfg = AttackConfig { targets: vec![0], lambda, train, algo: AttackerAlgo::TabularQ };
                let attacker = train_attack(&adv, &cfg).map_err(err)?;
                let stats = rollout_attacked(&game, &base, &attacker, &[0], lambda, 1, 0).map_err(err)?;
                if stats[0].regularized_return == oracle.value {
                    hits += 1;
                    if *name == "example1" && lambda == 1.0 && stats[0].attacked_steps[0] != 2 {
                        counts_ok = false;
                    }
                }
            }
            let ok = hits >= 4;
            pass &= ok;
            parts.push(format!("{name} l={lambda}: {hits}/5"));
            if *name == "example1" && lambda == 1.0 {
                let paper = oracle.value == 98.0 && oracle.count == 2 && counts_ok;
                pass &= paper;
                parts.push(format!("(value {} count {})", oracle.value, oracle.count));
            }
        }
    }
    Ok((pass, parts.join(", ")))
}

const LAMBDAS: [f64; 7] = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

fn c5_tree_monotonicity() -> Check {
    let mut bad = Vec::new();
    for s in 0..50u64 {
        let depth = 2 + (s % 5) as usize;
        let branching = 2 + (s / 5 % 2) as usize;
        let tree = build_random_tree(depth, branching, derive_seed(MASTER, 5, s)).map_err(err)?;
        let paths = enumerate_paths(&tree);
        let mut last = usize::MAX;
        for lambda in LAMBDAS {
            let dp = oracle_reg_dp(&tree, lambda).map_err(err)?;
            // Best objective, then fewest deviations.
            let best = paths.iter().map(|(_, r, c)| -r - lambda * *c as f64).fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-9 * best.abs().max(1.0);
            let fewest = paths
                .iter()
                .filter(|(_, r, c)| (-r - lambda * *c as f64) >= best - tol)
                .map(|(_, _, c)| *c)
                .min()
                .expect("non-empty");
            if (dp.value - best).abs() > tol || dp.count != fewest {
                bad.push(format!("tree {s} l={lambda}: dp ({}, {}) brute ({best}, {fewest})", dp.value, dp.count));
            }
            if dp.count > last {
                bad.push(format!("tree {s}: count rises to {} at l={lambda}", dp.count));
            }
            last = dp.count;
        }
    }
    Ok((bad.is_empty(), if bad.is_empty() { "50 trees, DP = enumeration, counts non-increasing".into() } else { bad.join("; ") }))
}

// ---------------------------------------------------------------------------
// Numerics

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn randomize(store: &mut ParamStore, rng: &mut sparse_attack::seeding::Rng, scale: f64) {
    for t in store.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Largest relative error between taped gradients and central differences
/// of `loss`, over every scalar in `store`.
fn gradient_error(
    store: &mut ParamStore,
    taped: impl Fn(&mut Tape, &ParamStore) -> sparse_attack::Result<sparse_attack::approx::Var>,
    plain: impl Fn(&ParamStore) -> sparse_attack::Result<f64>,
) -> sparse_attack::Result<f64> {
    let mut tape = Tape::new();
    let loss = taped(&mut tape, store)?;
    let grads = tape.backward(loss, store)?;
    // Large enough that roundoff stays small next to tiny gradients, small
    // enough that truncation error is negligible.
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for p in 0..store.len() {
        let id = ParamId(p);
        for k in 0..store.get(id).len() {
            let orig = store.get(id).data()[k];
            store.get_mut(id).data_mut()[k] = orig + h;
            let up = plain(store)?;
            store.get_mut(id).data_mut()[k] = orig - h;
            let down = plain(store)?;
            store.get_mut(id).data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads.get(id).data()[k], fd));
        }
    }
    Ok(worst)
}

fn weighted_sum(out: &Tensor, w: &[f64]) -> f64 {
    out.data().iter().zip(w).map(|(a, b)| a * b).sum()
}

fn c6_numerics() -> Check {
    let mut rng = rng_from(derive_seed(MASTER, 6, 0));
    let (batch, n, s) = (3usize, 3usize, 4usize);
    let mut mlp_worst: f64 = 0.0;
    let mut mixer_worst: f64 = 0.0;
    for _ in 0..100 {
        let mut store = ParamStore::new();
        let spec = MlpSpec::new(vec![5, 7, 6, 3]).map_err(err)?;
        let mlp = Mlp::init(spec, "m", &mut store, &mut rng).map_err(err)?;
        let x = store.add("x", Tensor::zeros(&[batch, 5])).map_err(err)?;
        randomize(&mut store, &mut rng, 1.0);
        let w: Vec<f64> = (0..batch * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = gradient_error(
            &mut store,
            |tape, st| {
                let xv = tape.param(st, x)?;
                let out = mlp.forward(tape, st, xv)?;
                let c = tape.constant(Tensor::matrix(batch, 3, w.clone())?)?;
                let prod = tape.mul(out, c)?;
                tape.sum(prod)
            },
            |st| Ok(weighted_sum(&mlp.forward_plain(st, st.get(x))?, &w)),
        )
        .map_err(err)?;
        mlp_worst = mlp_worst.max(e);

        let mut store = ParamStore::new();
        let spec = MixerSpec { n_inputs: n, state_dim: s, embed_dim: 5, hyper_hidden: 6 };
        let mixer = MonotonicMixer::init(spec, "mix", &mut store, &mut rng).map_err(err)?;
        let qs = store.add("qs", Tensor::zeros(&[batch, n])).map_err(err)?;
        let st_id = store.add("state", Tensor::zeros(&[batch, s])).map_err(err)?;
        randomize(&mut store, &mut rng, 1.0);
        let w: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e = gradient_error(
            &mut store,
            |tape, st| {
                let q = tape.param(st, qs)?;
                let sv = tape.param(st, st_id)?;
                let out = mixer.forward(tape, st, q, sv)?;
                let c = tape.constant(Tensor::matrix(batch, 1, w.clone())?)?;
                let prod = tape.mul(out, c)?;
                tape.sum(prod)
            },
            |st| {
                let mut tape = Tape::new();
                let q = tape.constant(st.get(qs).clone())?;
                let sv = tape.constant(st.get(st_id).clone())?;
                let out = mixer.forward(&mut tape, st, q, sv)?;
                Ok(weighted_sum(tape.value(out), &w))
            },
        )
        .map_err(err)?;
        mixer_worst = mixer_worst.max(e);
    }

    let mut min_partial = f64::INFINITY;
    for probe in 0..1000 {
        let n = 2 + probe % 4;
        let mut store = ParamStore::new();
        let spec = MixerSpec { n_inputs: n, state_dim: 9, embed_dim: 8, hyper_hidden: 8 };
        let mixer = MonotonicMixer::init(spec, "mix", &mut store, &mut rng).map_err(err)?;
        let qs = store.add("qs", Tensor::zeros(&[4, n])).map_err(err)?;
        let st_id = store.add("state", Tensor::zeros(&[4, 9])).map_err(err)?;
        randomize(&mut store, &mut rng, 3.0);
        let mut tape = Tape::new();
        let q = tape.param(&store, qs).map_err(err)?;
        let sv = tape.param(&store, st_id).map_err(err)?;
        let out = mixer.forward(&mut tape, &store, q, sv).map_err(err)?;
        let total = tape.sum(out).map_err(err)?;
        let grads = tape.backward(total, &store).map_err(err)?;
        min_partial = grads.get(qs).data().iter().copied().fold(min_partial, f64::min);
    }
    let pass = mlp_worst < 1e-4 && mixer_worst < 1e-4 && min_partial >= -1e-9;
    Ok((
        pass,
        format!("max rel err mlp {mlp_worst:.2e}, mixer {mixer_worst:.2e}; min dQtot/dq over 1000 probes {min_partial:.3e}"),
    ))
}

// ---------------------------------------------------------------------------

fn synthetic_seeds(rates: &[f64]) -> Vec<SeedResult> {
    rates
        .iter()
        .enumerate()
        .map(|(i, &w)| SeedResult {
            seed_index: i,
            seed: i as u64,
            win_rate: Some(w),
            mean_return: 0.0,
            mean_regularized: 0.0,
            mean_attacked: vec![w * 10.0],
            mean_total: 10.0,
            base_win_rate: None,
            base_mean_return: 0.0,
            oracle: None,
            error: None,
        })
        .collect()
}

fn c8_protocol() -> Check {
    let mut rng = rng_from(derive_seed(MASTER, 8, 0));
    let mut bad = 0;
    for trial in 0..10_000 {
        // Coarse rates force ties in a good share of trials.
        let levels = if trial % 2 == 0 { 4 } else { 1000 };
        let rates: Vec<f64> = (0..5).map(|_| rng.gen_range(0..=levels) as f64 / levels as f64).collect();
        let agg = aggregate_median3(&synthetic_seeds(&rates)).map_err(err)?;
        let mut sorted = rates.clone();
        sorted.sort_by(f64::total_cmp);
        let mut kept: Vec<f64> = agg.retained.iter().map(|&i| rates[i]).collect();
        kept.sort_by(f64::total_cmp);
        let mean = (sorted[1] + sorted[2] + sorted[3]) / 3.0;
        let distinct = {
            let mut r = agg.retained.clone();
            r.sort();
            r.dedup();
            r.len()
        };
        if agg.retained.len() != 3 || distinct != 3 || kept != sorted[1..4] || (agg.win_rate.unwrap_or(f64::NAN) - mean).abs() > 1e-12 {
            bad += 1;
        }
    }
    let tree = parse_single("env.kind = tree_example1\nattack.method = none\n").map_err(err)?;
    let grid = parse_single("env.kind = goalgather\nattack.method = ra-l\nattack.prob = 0.1\n").map_err(err)?;
    let wrong_arity = aggregate_median3(&synthetic_seeds(&[0.1; 4])).is_err();
    let pass = bad == 0 && tree.n_eval_episodes == 1000 && grid.n_eval_episodes == 1000 && grid.n_seeds == 5 && wrong_arity;
    Ok((
        pass,
        format!(
            "10000 synthetic sets, {bad} wrong; default eval episodes {} / {}, seeds {}",
            tree.n_eval_episodes, grid.n_eval_episodes, grid.n_seeds
        ),
    ))
}

// ---------------------------------------------------------------------------

struct TransformTally {
    transitions: usize,
    worst_identity: f64,
    mismatches: usize,
}

fn log_transform<E: Environment>(
    env: &E,
    base: &QTeamPolicy,
    targets: &[usize],
    lambda: f64,
    episodes: usize,
    seed: u64,
    tally: &mut TransformTally,
) -> sparse_attack::Result<()> {
    let adv = wrap_adversarial(env, base, targets, lambda)?;
    let mut rng = rng_from(seed);
    for ep in 0..episodes {
        let (_, log) = attacked_episode(&adv, derive_seed(seed, 9, ep as u64), |s| {
            let actions = targets
                .iter()
                .enumerate()
                .map(|(slot, &k)| {
                    let mask = &s.view.action_masks[slot];
                    if rng.gen::<f64>() < 0.4 {
                        let legal: Vec<usize> = (0..mask.len()).filter(|&a| mask[a]).collect();
                        legal[rng.gen_range(0..legal.len())]
                    } else {
                        s.base_actions[k]
                    }
                })
                .collect();
            Ok(JointAction::new(actions))
        })?;
        for step in &log {
            let devs = step.deviations.iter().filter(|&&d| d).count() as f64;
            let identity = (step.attacker_reward + step.team_reward + lambda * devs).abs();
            tally.worst_identity = tally.worst_identity.max(identity);
            let (fresh, _) = base.act_greedy(&step.base_view, &step.prevs)?;
            let mut ok = fresh.actions == step.base_actions;
            for k in 0..step.executed.len() {
                let attacked_agent = targets.contains(&k);
                let deviated = targets.iter().position(|&t| t == k).is_some_and(|slot| step.deviations[slot]);
                if (!attacked_agent || !deviated) && step.executed[k] != fresh.actions[k] {
                    ok = false;
                }
                if deviated && step.executed[k] == fresh.actions[k] {
                    ok = false;
                }
            }
            tally.mismatches += !ok as usize;
            tally.transitions += 1;
        }
    }
    Ok(())
}

fn c9_transform() -> Check {
    let mut tally = TransformTally { transitions: 0, worst_identity: 0.0, mismatches: 0 };
    let t1 = build_example1(6, 3, 1, 3).map_err(err)?;
    let t2 = build_example2(5, 2, 3).map_err(err)?;
    let t3 = build_random_tree(6, 3, 77).map_err(err)?;
    for (i, tree) in [t1, t2, t3].into_iter().enumerate() {
        let base = value_iteration(&tree).map_err(err)?.to_policy(&tree);
        let game = TreeGame::new(tree);
        for (j, lambda) in [0.0, 0.5, 1.0, 5.0].into_iter().enumerate() {
            log_transform(&game, &base, &[0], lambda, 150, (i * 10 + j) as u64, &mut tally).map_err(err)?;
        }
    }
    let grid = GoalGather::new(GridTeamSpec::default()).map_err(err)?;
    let mut cfg = TrainConfig::with_episodes(1);
    cfg.seed = derive_seed(MASTER, 9, 1);
    let base = NetworkTrainer::new(&grid, Algo::Qmix, cfg).map_err(err)?.into_policy();
    for (j, (targets, lambda)) in [(vec![1], 0.0), (vec![0], 0.7), (vec![0, 1], 1.3), (vec![1, 0], 5.0)].into_iter().enumerate() {
        log_transform(&grid, &base, &targets, lambda, 60, 100 + j as u64, &mut tally).map_err(err)?;
    }
    let pass = tally.transitions >= 10_000 && tally.worst_identity <= 1e-12 && tally.mismatches == 0;
    Ok((
        pass,
        format!(
            "{} transitions, max |r'+r+l*dev| {:.1e}, {} action mismatches",
            tally.transitions, tally.worst_identity, tally.mismatches
        ),
    ))
}

// ---------------------------------------------------------------------------
// GoalGather

fn config_root() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

fn with_overrides(text: &str, drop: &[&str], set: &[(&str, String)]) -> Result<ExperimentConfig, String> {
    let mut pairs: BTreeMap<String, String> = parse_pairs(text).map_err(err)?;
    for k in drop {
        pairs.remove(*k);
    }
    for (k, v) in set {
        pairs.insert((*k).to_string(), v.clone());
    }
    let text: String = pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    parse_single(&text).map_err(err)
}

struct GridRuns {
    base: Aggregate,
    opt: Vec<(f64, Aggregate)>,
    cache: BaseCache,
    text: String,
}

fn run(config: &ExperimentConfig, cache: &mut BaseCache) -> Result<Aggregate, String> {
    let record = run_experiment_cached(config, None, cache).map_err(err)?;
    let seeds: Vec<String> = record
        .seeds
        .iter()
        .map(|s| format!("{:.3}/{:.2}", s.score(), s.mean_attacked.first().copied().unwrap_or(0.0)))
        .collect();
    eprintln!("  {} {} seeds [{}] ({:.0}s)", record.method, record.parameter, seeds.join(" "), record.wall_clock_secs);
    record.aggregate.ok_or_else(|| format!("{} {} degraded", record.method, record.parameter))
}

fn grid_runs() -> Result<GridRuns, String> {
    let text = std::fs::read_to_string(config_root().join("goalgather_opt.conf")).map_err(err)?;
    let mut cache = BaseCache::new();
    let base_cfg = with_overrides(
        &text,
        &["attack.lambda"],
        &[("attack.method", "none".into())],
    )?;
    let base = run(&base_cfg, &mut cache)?;
    let mut opt = Vec::new();
    for config in parse_config(&text).map_err(err)? {
        let lambda = match config.method {
            sparse_attack::harness::Method::Opt { lambda } => lambda,
            _ => return Err("goalgather_opt.conf must sweep OPT".into()),
        };
        opt.push((lambda, run(&config, &mut cache)?));
    }
    Ok(GridRuns { base, opt, cache, text })
}

fn c5_grid(runs: &GridRuns) -> Check {
    let at = |l: f64| runs.opt.iter().find(|(x, _)| *x == l).map(|(_, a)| a.mean_attacked[0]);
    match (at(0.1), at(5.0)) {
        (Some(lo), Some(hi)) => Ok((hi < lo, format!("median OPT attacks per episode: l=0.1 {lo:.2}, l=5 {hi:.2}"))),
        _ => Err("config grid lacks lambda 0.1 or 5".into()),
    }
}

fn c7_headline(runs: &mut GridRuns) -> Check {
    let base_win = runs.base.win_rate.unwrap_or(0.0);
    let mut parts = vec![format!("base win {base_win:.3}")];
    for (l, a) in &runs.opt {
        parts.push(format!("OPT l={l}: win {:.3} frac {:.3}", a.win_rate.unwrap_or(1.0), a.attacked_fraction()[0]));
    }
    // Tuning: among grid points that attack at most a quarter of the steps,
    // the one with the lowest median win rate.
    let chosen = runs
        .opt
        .iter()
        .filter(|(_, a)| a.attacked_fraction()[0] <= 0.25)
        .min_by(|x, y| x.1.win_rate.unwrap_or(1.0).total_cmp(&y.1.win_rate.unwrap_or(1.0)))
        .cloned();
    let Some((lambda, opt)) = chosen else {
        parts.push("no lambda attacks <= 25% of steps".into());
        return Ok((false, parts.join("; ")));
    };
    let opt_win = opt.win_rate.unwrap_or(1.0);
    let frac = opt.attacked_fraction()[0];
    let count = opt.mean_attacked[0];
    parts.push(format!("chosen l={lambda}"));

    let strip = ["attack.lambda"];
    let ral = with_overrides(&runs.text, &strip, &[("attack.method", "ra-l".into()), ("attack.prob", format!("{frac}"))])?;
    let ral_win = run(&ral, &mut runs.cache)?.win_rate.unwrap_or(0.0);
    parts.push(format!("Ra-L p={frac:.3} win {ral_win:.3}"));

    let mut rub_win = f64::INFINITY;
    for rule in [DeltaRule::MaxDiff, DeltaRule::Entropy] {
        let grid = threshold_grid(rule, 1000, &[]);
        let mut memo: BTreeMap<usize, Aggregate> = BTreeMap::new();
        let mut eval = |i: usize, cache: &mut BaseCache| -> Result<Aggregate, String> {
            if let Some(a) = memo.get(&i) {
                return Ok(a.clone());
            }
            let cfg = with_overrides(
                &runs.text,
                &strip,
                &[
                    ("attack.method", "ru-b".into()),
                    ("attack.rule", rule.to_string()),
                    ("attack.threshold", format!("{}", grid[i])),
                ],
            )?;
            let a = run(&cfg, cache)?;
            memo.insert(i, a.clone());
            Ok(a)
        };
        // Attack counts fall as the threshold rises; bisect for the count,
        // then take the closest of the bracketing points.
        let (mut lo, mut hi) = (0usize, grid.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if eval(mid, &mut runs.cache)?.mean_attacked[0] >= count {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a_lo = eval(lo, &mut runs.cache)?;
        let a_hi = eval(hi, &mut runs.cache)?;
        let best = if (a_lo.mean_attacked[0] - count).abs() <= (a_hi.mean_attacked[0] - count).abs() { a_lo } else { a_hi };
        let w = best.win_rate.unwrap_or(0.0);
        parts.push(format!("Ru-B {rule} count {:.2} win {w:.3}", best.mean_attacked[0]));
        rub_win = rub_win.min(w);
    }
    let pass = base_win >= 0.8 && opt_win < 0.3 && frac <= 0.25 && ral_win - opt_win >= 0.15 && rub_win - opt_win >= 0.10;
    Ok((pass, parts.join("; ")))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let mut lines: Vec<(String, bool)> = Vec::new();
    let mut record = |name: &str, limit: Duration, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok((pass, detail)) => (pass && took < limit, detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let limit = if limit == Duration::MAX { "no limit".to_string() } else { format!("limit {:.0}s", limit.as_secs_f64()) };
        let line = format!("{} {name}: {detail} [{:.1}s, {limit}]", if pass { "PASS" } else { "FAIL" }, took.as_secs_f64());
        eprintln!("{line}");
        lines.push((line, pass));
    };
    let secs = Duration::from_secs_f64;
    record("criterion 1 (exact Q*)", secs(1.0), &mut c1_q_star);
    record("criterion 2 (budget oracle)", secs(5.0), &mut c2_budget_oracle);
    record("criterion 3 (rule attacks fall short)", secs(60.0), &mut c3_rule_suboptimality);
    record("criterion 4 (learner matches oracle)", secs(600.0), &mut c4_learner_matches_oracle);
    record("criterion 5a (lambda monotonicity, trees)", secs(60.0), &mut c5_tree_monotonicity);
    record("criterion 6 (numerics)", secs(120.0), &mut c6_numerics);
    record("criterion 8 (median-of-three protocol)", secs(10.0), &mut c8_protocol);
    record("criterion 9 (transform identity)", secs(120.0), &mut c9_transform);

    // `cargo test --test acceptance -- quick` skips the GoalGather training runs.
    let quick = std::env::args().any(|a| a == "quick");
    let start = Instant::now();
    match if quick { Err("skipped (quick)".to_string()) } else { grid_runs() } {
        Ok(mut runs) => {
            record("criterion 5b (lambda monotonicity, GoalGather)", Duration::MAX, &mut || c5_grid(&runs));
            let sweep = start.elapsed();
            let limit = secs(7200.0).saturating_sub(sweep);
            record("criterion 7 (GoalGather headline)", limit, &mut || c7_headline(&mut runs));
        }
        Err(e) => {
            record("criterion 5b (lambda monotonicity, GoalGather)", Duration::MAX, &mut || Err(e.clone()));
            record("criterion 7 (GoalGather headline)", Duration::MAX, &mut || Err(e.clone()));
        }
    }

    println!("acceptance summary");
    let mut ordered = lines;
    ordered.sort_by_key(|(l, _)| {
        let n = l.split("criterion ").nth(1).and_then(|r| r.chars().next()).and_then(|c| c.to_digit(10));
        n.unwrap_or(99)
    });
    for (line, _) in &ordered {
        println!("{line}");
    }
    if ordered.iter().all(|(_, p)| *p) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
