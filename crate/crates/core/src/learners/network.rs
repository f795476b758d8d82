//! Deep value-decomposition training (VDN and QMIX-style) with replay,
//! epsilon-greedy rollouts and a periodically copied target network.

use rand::Rng as _;

use super::config::TrainConfig;
use super::policy::{Algo, NetworkQ, QRepr, QTeamPolicy};
use super::replay::ReplayBuffer;
use super::tabular::{random_legal, EXPLORE_STREAM, TRAIN_STREAM};
use crate::approx::{MixerSpec, OptimizerState, ParamStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::mmdp::{argmax_masked, Environment, JointAction, Transition};
use crate::seeding::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub episode_return: f64,
    pub length: usize,
    pub won: bool,
}

/// Everything needed to keep training a network policy on one environment.
pub struct NetworkTrainer<'e, E: Environment> {
    env: &'e E,
    pub config: TrainConfig,
    policy: QTeamPolicy,
    target: ParamStore,
    last_good: ParamStore,
    opt: OptimizerState,
    buffer: ReplayBuffer,
    rng: Rng,
    env_steps: u64,
    updates: usize,
    /// Mean loss of each block of `target_period` updates.
    pub loss_history: Vec<f64>,
    loss_acc: (f64, usize),
}

/// Mixer layout used by `algo` for `env`, if any.
pub fn mixer_for(algo: Algo, n_inputs: usize, state_dim: usize, config: &TrainConfig) -> Option<MixerSpec> {
    (algo == Algo::Qmix).then(|| MixerSpec {
        n_inputs,
        state_dim,
        embed_dim: config.mixer_embed,
        hyper_hidden: config.hyper_hidden,
    })
}

impl<'e, E: Environment> NetworkTrainer<'e, E> {
    pub fn new(env: &'e E, algo: Algo, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if algo.is_tabular() {
            return Err(Error::ConfigMismatch(format!("{algo} is not a network algorithm")));
        }
        let spec = env.spec();
        let mut init_rng = rng_from(derive_seed(config.seed, 0x696e_6974, 0));
        let mixer = mixer_for(algo, spec.n_agents, spec.state_dim, &config);
        let policy = QTeamPolicy::new_network(algo, spec, &config.hidden, mixer, &mut init_rng)?;
        let params = net(&policy).params.clone();
        Ok(Self {
            env,
            opt: OptimizerState::new(&params, config.lr),
            target: params.clone(),
            last_good: params,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng: rng_from(derive_seed(config.seed, EXPLORE_STREAM, 0)),
            env_steps: 0,
            updates: 0,
            loss_history: Vec::new(),
            loss_acc: (0.0, 0),
            policy,
            config,
        })
    }

    pub fn policy(&self) -> &QTeamPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> QTeamPolicy {
        self.policy
    }

    /// Parameters as of the most recent target copy.
    pub fn last_good(&self) -> &ParamStore {
        &self.last_good
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Runs one epsilon-greedy episode, storing transitions and training
    /// every `train_every` environment steps.
    pub fn run_episode(&mut self, episode: usize) -> Result<EpisodeSummary> {
        let eps = self.config.epsilon(episode);
        let n = self.env.spec().n_agents;
        let mut state = self.env.reset(derive_seed(self.config.seed, TRAIN_STREAM, episode as u64));
        let mut prevs: Vec<Option<usize>> = vec![None; n];
        let mut summary = EpisodeSummary { episode_return: 0.0, length: 0, won: false };
        while !state.as_ref().terminal {
            let view = state.as_ref();
            let greedy = self.policy.act_greedy(view, &prevs)?.0;
            let actions: Vec<usize> = (0..n)
                .map(|i| {
                    if self.rng.gen::<f64>() < eps {
                        random_legal(&view.action_masks[i], &mut self.rng)
                    } else {
                        greedy.actions[i]
                    }
                })
                .collect();
            let (reward, next) = self.env.step(&state, &JointAction::new(actions.clone()))?;
            let nv = next.as_ref();
            self.buffer.push(Transition {
                state: view.global_state.clone(),
                obs_k: view.observations.clone(),
                prev_actions_k: prevs.clone(),
                actions_k: actions.clone(),
                reward,
                next_state: nv.global_state.clone(),
                next_obs_k: nv.observations.clone(),
                next_masks_k: nv.action_masks.clone(),
                terminal: nv.terminal,
            });
            summary.episode_return += reward;
            summary.length += 1;
            summary.won = nv.won;
            prevs = actions.into_iter().map(Some).collect();
            state = next;
            self.env_steps += 1;
            if self.env_steps % self.config.train_every as u64 == 0 && self.buffer.len() >= self.config.batch_size {
                self.update()?;
            }
        }
        Ok(summary)
    }

    /// One gradient step on a uniformly sampled minibatch.
    pub fn update(&mut self) -> Result<f64> {
        let Some(batch) = self.buffer.sample(self.config.batch_size, &mut self.rng) else {
            return Ok(0.0);
        };
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        let update = self.updates;
        let diverged = |loss: f64| Error::DivergedTraining { update, loss };
        let result = td_loss_and_grads(net(&self.policy), &self.target, &batch, self.config.discount);
        let (loss, mut grads) = match result {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => {
                self.restore_last_good();
                return Err(diverged(f64::NAN));
            }
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            self.restore_last_good();
            return Err(diverged(loss));
        }
        grads.clip_norm(self.config.grad_clip);
        self.opt.apply(&mut net_mut(&mut self.policy).params, &grads)?;
        self.updates += 1;
        self.loss_acc.0 += loss;
        self.loss_acc.1 += 1;
        if self.updates % self.config.target_period == 0 {
            let params = &net(&self.policy).params;
            self.target.copy_from(params)?;
            self.last_good.copy_from(params)?;
            self.loss_history.push(self.loss_acc.0 / self.loss_acc.1 as f64);
            self.loss_acc = (0.0, 0);
        }
        Ok(loss)
    }

    fn restore_last_good(&mut self) {
        let good = self.last_good.clone();
        net_mut(&mut self.policy).params = good;
    }

    pub fn train(mut self) -> Result<QTeamPolicy> {
        for ep in 0..self.config.episodes {
            self.run_episode(ep)?;
        }
        Ok(self.policy)
    }
}

fn net(policy: &QTeamPolicy) -> &NetworkQ {
    match &policy.repr {
        QRepr::Network(n) => n,
        QRepr::Tabular(_) => unreachable!("trainer only holds network policies"),
    }
}

fn net_mut(policy: &mut QTeamPolicy) -> &mut NetworkQ {
    match &mut policy.repr {
        QRepr::Network(n) => n,
        QRepr::Tabular(_) => unreachable!("trainer only holds network policies"),
    }
}

/// TD targets `r + discount * (1 - done) * Q_tot^target(s', argmax per agent)`.
pub fn td_targets(net: &NetworkQ, target: &ParamStore, batch: &[Transition], discount: f64) -> Result<Vec<f64>> {
    let n = net.n_agents;
    let in_dim = net.agent.spec.input_dim();
    let mut x_next = Vec::with_capacity(batch.len() * n * in_dim);
    for t in batch {
        for i in 0..n {
            net.write_input(&mut x_next, i, &t.next_obs_k[i], Some(t.actions_k[i]));
        }
    }
    let q_next = net.agent.forward_plain(target, &Tensor::matrix(batch.len() * n, in_dim, x_next)?)?;
    let mut best = Vec::with_capacity(batch.len() * n);
    for (b, t) in batch.iter().enumerate() {
        for i in 0..n {
            let row = q_next.row(b * n + i);
            best.push(argmax_masked(row, &t.next_masks_k[i]).map_or(0.0, |a| row[a]));
        }
    }
    let state_dim = batch[0].next_state.len();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.next_state.iter().copied()).collect();
    let mixed = net.mixer.forward_plain(
        target,
        &Tensor::matrix(batch.len(), n, best)?,
        &Tensor::matrix(batch.len(), state_dim, states)?,
    )?;
    Ok(batch
        .iter()
        .zip(mixed.data())
        .map(|(t, q)| t.reward + if t.terminal { 0.0 } else { discount * q })
        .collect())
}

/// Mean squared TD error of the online network and its gradient.
pub fn td_loss_and_grads(
    net: &NetworkQ,
    target: &ParamStore,
    batch: &[Transition],
    discount: f64,
) -> Result<(f64, crate::approx::Gradients)> {
    let n = net.n_agents;
    let bsz = batch.len();
    let in_dim = net.agent.spec.input_dim();
    let y = td_targets(net, target, batch, discount)?;

    let mut x = Vec::with_capacity(bsz * n * in_dim);
    let mut actions = Vec::with_capacity(bsz * n);
    for t in batch {
        for i in 0..n {
            net.write_input(&mut x, i, &t.obs_k[i], t.prev_actions_k[i]);
            actions.push(t.actions_k[i]);
        }
    }
    let state_dim = batch[0].state.len();
    let states: Vec<f64> = batch.iter().flat_map(|t| t.state.iter().copied()).collect();

    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::matrix(bsz * n, in_dim, x)?)?;
    let q = net.agent.forward(&mut tape, &net.params, xv)?;
    let chosen = tape.gather(q, &actions)?;
    let chosen = tape.reshape(chosen, vec![bsz, n])?;
    let s = tape.constant(Tensor::matrix(bsz, state_dim, states)?)?;
    let q_tot = net.mixer.forward(&mut tape, &net.params, chosen, s)?;
    let yv = tape.constant(Tensor::matrix(bsz, 1, y)?)?;
    let diff = tape.sub(q_tot, yv)?;
    let sq = tape.square(diff)?;
    let loss = tape.mean(sq)?;
    let grads = tape.backward(loss, &net.params)?;
    Ok((tape.value(loss).data()[0], grads))
}

/// Mean squared TD error without computing gradients.
pub fn td_mse(net: &NetworkQ, target: &ParamStore, batch: &[Transition], discount: f64) -> Result<f64> {
    td_loss_and_grads(net, target, batch, discount).map(|(l, _)| l)
}

/// Trains a VDN or QMIX-style team policy.
pub fn train_network<E: Environment>(env: &E, algo: Algo, config: &TrainConfig) -> Result<QTeamPolicy> {
    NetworkTrainer::new(env, algo, config.clone())?.train()
}
