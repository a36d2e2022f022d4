//! Dense-matrix recurrent and feedforward networks with orthogonality
//! pre-training and penalties, plus the synthetic tasks, MNIST loader and
//! diagnostics used to study them.
// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod diagnostics;
pub mod error;
pub mod ffnet;
pub mod init;
pub mod matrix;
pub mod mnist;
pub mod ortho;
pub mod rng;
pub mod spectral;
pub mod srnn;
pub mod tasks;

pub use activation::{Activation, LossKind};
pub use error::{Error, Result};
pub use init::InitScheme;
pub use matrix::{Matrix, Op};
pub use ortho::{ortho_grad, ortho_loss, pretrain, PretrainConfig, PretrainReport};
pub use rng::RngStream;
pub use spectral::spectral_norm;
