//! Multilayer perceptrons and the monotonic mixing network.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{matmul_into, Tensor};
use crate::error::{Error, Result};
use crate::seeding::Rng;

/// Layer widths from input to output. Hidden layers use rectified-linear
/// activations; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::ConfigMismatch(format!("bad layer widths {widths:?}")));
        }
        Ok(Self { widths })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }
}

/// An MLP bound to parameters `<prefix>.w<l>` / `<prefix>.b<l>` in a store.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

impl Mlp {
    /// Registers freshly initialized parameters in `store`.
    pub fn init(spec: MlpSpec, prefix: &str, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (i, o) = (pair[0], pair[1]);
            weights.push(store.add_uniform(format!("{prefix}.w{l}"), &[i, o], i, rng)?);
            biases.push(store.add_uniform(format!("{prefix}.b{l}"), &[1, o], i, rng)?);
        }
        Ok(Self { spec, weights, biases })
    }

    /// Looks up existing parameters, e.g. after loading a store from disk.
    pub fn bind(spec: MlpSpec, prefix: &str, store: &ParamStore) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let lookup = |name: String, shape: [usize; 2]| -> Result<ParamId> {
                let id = store.id(&name).ok_or_else(|| Error::Format(format!("missing parameter {name}")))?;
                if store.get(id).shape() != shape {
                    return Err(Error::ShapeMismatch(format!("{name}: {:?} vs {shape:?}", store.get(id).shape())));
                }
                Ok(id)
            };
            weights.push(lookup(format!("{prefix}.w{l}"), [pair[0], pair[1]])?);
            biases.push(lookup(format!("{prefix}.b{l}"), [1, pair[1]])?);
        }
        Ok(Self { spec, weights, biases })
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: Var) -> Result<Var> {
        if tape.value(input).cols() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "mlp input has {} columns, expected {}",
                tape.value(input).cols(),
                self.spec.input_dim()
            )));
        }
        let mut h = input;
        let last = self.weights.len() - 1;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let w = tape.param(store, w)?;
            let b = tape.param(store, b)?;
            let z = tape.matmul(h, w)?;
            h = tape.add_row(z, b)?;
            if l < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Untaped forward pass for inference.
    pub fn forward_plain(&self, store: &ParamStore, input: &Tensor) -> Result<Tensor> {
        if input.cols() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "mlp input has {} columns, expected {}",
                input.cols(),
                self.spec.input_dim()
            )));
        }
        let rows = input.rows();
        let mut h = input.data().to_vec();
        let last = self.weights.len() - 1;
        for (l, (&w, &b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (wt, bt) = (store.get(w), store.get(b));
            let (k, n) = (wt.rows(), wt.cols());
            let mut out: Vec<f64> = (0..rows).flat_map(|_| bt.data().iter().copied()).collect();
            matmul_into(&h, wt.data(), &mut out, rows, k, n);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        let out = Tensor::matrix(rows, self.spec.output_dim(), h)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("mlp forward".into()));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixerSpec {
    pub n_inputs: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    pub hyper_hidden: usize,
}

/// State-conditioned mixing network. Hypernetworks map the global state to
/// the mixing weights, which pass through an absolute value so the joint
/// value is non-decreasing in every per-agent input.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicMixer {
    pub spec: MixerSpec,
    hyper_w1: Mlp,
    hyper_w2: Mlp,
    hyper_b1: Mlp,
    hyper_b2: Mlp,
}

impl MonotonicMixer {
    fn layouts(spec: &MixerSpec) -> Result<[MlpSpec; 4]> {
        let (s, h, e, n) = (spec.state_dim, spec.hyper_hidden, spec.embed_dim, spec.n_inputs);
        Ok([
            MlpSpec::new(vec![s, h, n * e])?,
            MlpSpec::new(vec![s, h, e])?,
            MlpSpec::new(vec![s, e])?,
            MlpSpec::new(vec![s, e, 1])?,
        ])
    }

    const NAMES: [&'static str; 4] = ["hyper_w1", "hyper_w2", "hyper_b1", "hyper_b2"];

    pub fn init(spec: MixerSpec, prefix: &str, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        let [a, b, c, d] = Self::layouts(&spec)?;
        let n = Self::NAMES;
        Ok(Self {
            hyper_w1: Mlp::init(a, &format!("{prefix}.{}", n[0]), store, rng)?,
            hyper_w2: Mlp::init(b, &format!("{prefix}.{}", n[1]), store, rng)?,
            hyper_b1: Mlp::init(c, &format!("{prefix}.{}", n[2]), store, rng)?,
            hyper_b2: Mlp::init(d, &format!("{prefix}.{}", n[3]), store, rng)?,
            spec,
        })
    }

    pub fn bind(spec: MixerSpec, prefix: &str, store: &ParamStore) -> Result<Self> {
        let [a, b, c, d] = Self::layouts(&spec)?;
        let n = Self::NAMES;
        Ok(Self {
            hyper_w1: Mlp::bind(a, &format!("{prefix}.{}", n[0]), store)?,
            hyper_w2: Mlp::bind(b, &format!("{prefix}.{}", n[1]), store)?,
            hyper_b1: Mlp::bind(c, &format!("{prefix}.{}", n[2]), store)?,
            hyper_b2: Mlp::bind(d, &format!("{prefix}.{}", n[3]), store)?,
            spec,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, agent_qs: Var, state: Var) -> Result<Var> {
        let (n, e) = (self.spec.n_inputs, self.spec.embed_dim);
        let (qv, sv) = (tape.value(agent_qs), tape.value(state));
        if qv.cols() != n || sv.cols() != self.spec.state_dim || qv.rows() != sv.rows() {
            return Err(Error::ShapeMismatch(format!(
                "mixer got agent_qs {:?} and state {:?} for {n} inputs / state dim {}",
                qv.shape(),
                sv.shape(),
                self.spec.state_dim
            )));
        }
        let w1 = self.hyper_w1.forward(tape, store, state)?;
        let w1 = tape.abs(w1)?;
        let b1 = self.hyper_b1.forward(tape, store, state)?;
        let hidden = tape.row_vec_mat(agent_qs, w1, n, e)?;
        let hidden = tape.add(hidden, b1)?;
        let hidden = tape.elu(hidden)?;
        let w2 = self.hyper_w2.forward(tape, store, state)?;
        let w2 = tape.abs(w2)?;
        let weighted = tape.mul(hidden, w2)?;
        let mixed = tape.row_sum(weighted)?;
        let b2 = self.hyper_b2.forward(tape, store, state)?;
        tape.add(mixed, b2)
    }
}

/// How per-agent values are combined into the joint value.
#[derive(Debug, Clone, PartialEq)]
pub enum Mixer {
    /// Value decomposition by plain summation.
    Sum { n_inputs: usize },
    Monotonic(MonotonicMixer),
}

impl Mixer {
    pub fn n_inputs(&self) -> usize {
        match self {
            Mixer::Sum { n_inputs } => *n_inputs,
            Mixer::Monotonic(m) => m.spec.n_inputs,
        }
    }

    /// `agent_qs: [B, n]`, `state: [B, state_dim]` -> `[B, 1]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, agent_qs: Var, state: Var) -> Result<Var> {
        match self {
            Mixer::Sum { n_inputs } => {
                let cols = tape.value(agent_qs).cols();
                if cols != *n_inputs {
                    return Err(Error::ShapeMismatch(format!("sum mixer got {cols} inputs, expected {n_inputs}")));
                }
                tape.row_sum(agent_qs)
            }
            Mixer::Monotonic(m) => m.forward(tape, store, agent_qs, state),
        }
    }

    /// Forward pass whose result is not differentiated.
    pub fn forward_plain(&self, store: &ParamStore, agent_qs: &Tensor, state: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let q = tape.constant(agent_qs.clone())?;
        let s = tape.constant(state.clone())?;
        let out = self.forward(&mut tape, store, q, s)?;
        Ok(tape.value(out).clone())
    }
}
