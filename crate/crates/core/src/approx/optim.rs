use super::params::ParamStore;
use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adaptive-moment optimizer state (Adam).
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, first: zeros.clone(), second: zeros }
    }

    pub fn first_moment(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moment(&self) -> &[Tensor] {
        &self.second
    }

    /// One bias-corrected update of every parameter in `store`.
    pub fn apply(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients / {} moment slots for {} parameters",
                grads.grads.len(),
                self.first.len(),
                store.len()
            )));
        }
        for (p, g) in store.tensors().iter().zip(&grads.grads) {
            if !p.same_shape(g) {
                return Err(Error::ShapeMismatch(format!("param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in
            store.tensors_mut().iter_mut().zip(&grads.grads).zip(&mut self.first).zip(&mut self.second)
        {
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*mv / c1) / ((*vv / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
