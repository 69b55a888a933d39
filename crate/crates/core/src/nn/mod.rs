//! Minimal reverse-mode autodiff and the network building blocks on top of it.

pub mod adam;
pub mod encoder;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use encoder::{EncoderConfig, SetEncoder, TokenSequence};
pub use graph::{log_sum_exp, Graph, Var};
pub use layers::{Activation, Dense, LayerNorm, Mlp};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
