//! CFPFormer: a cross-feature-pyramid transformer decoder with
//! axially-decomposed Gaussian-decay attention, built on a minimal
//! reverse-mode autodiff engine. Includes a tiny CNN encoder backbone,
//! segmentation metrics, a synthetic corpus generator, and binary tensor /
//! checkpoint formats.

pub mod attention;
pub mod backbone;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, SoftmaxBase, Tensor};
