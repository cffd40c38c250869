//! Core library: tensor/autodiff substrate, video tokenization, the
//! noise-conditioned score transformer, training, scoring, and evaluation.

pub mod ablation;
pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod eval;
pub mod mixture;
pub mod error;
pub mod model;
pub mod optim;
pub mod rng;
pub mod score;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod video;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
