//! A small dense-tensor engine with reverse-mode differentiation, MLPs, the
//! monotonic mixer and an adaptive-moment optimizer.

pub mod nn;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use nn::{Mixer, MixerSpec, Mlp, MlpSpec, MonotonicMixer};
pub use optim::OptimizerState;
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
