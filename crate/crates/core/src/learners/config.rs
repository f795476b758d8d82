use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Training hyperparameters shared by every learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Episodes over which epsilon decays linearly from start to end.
    pub eps_anneal: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient updates between target-network copies.
    pub target_period: usize,
    pub discount: f64,
    pub seed: u64,
    /// Hidden widths of the agent network.
    pub hidden: Vec<usize>,
    pub mixer_embed: usize,
    pub hyper_hidden: usize,
    pub buffer_capacity: usize,
    /// Environment steps between gradient updates.
    pub train_every: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_episodes(20_000)
    }
}

impl TrainConfig {
    /// Defaults with epsilon annealed 1.0 -> 0.05 over the first 20% of episodes.
    pub fn with_episodes(episodes: usize) -> Self {
        Self {
            episodes,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_anneal: (episodes / 5).max(1),
            lr: 5e-4,
            batch_size: 32,
            target_period: 200,
            discount: 0.99,
            seed: 0,
            hidden: vec![64],
            mixer_embed: 32,
            hyper_hidden: 32,
            buffer_capacity: 50_000,
            train_every: 4,
            grad_clip: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.eps_start) || !in_unit(self.eps_end) {
            return Err(Error::Config("epsilon must lie in [0,1]".into()));
        }
        if self.target_period == 0 || self.train_every == 0 || self.eps_anneal == 0 || self.batch_size == 0 {
            return Err(Error::Config("periods and batch size must be >= 1".into()));
        }
        if !in_unit(self.discount) {
            return Err(Error::Config("discount must lie in [0,1]".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        let frac = (episode as f64 / self.eps_anneal as f64).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}
