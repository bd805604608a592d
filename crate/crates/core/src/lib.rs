//! Pyramid pose-regression network with a from-scratch reverse-mode tape.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: NHWC tensors, GEMM-backed convolutions and
//!   the gradient tape with finite-difference checks.
//! * [`heads`]: soft-argmax, depth attention and confidence.
//! * [`arch`]: configuration, parameters, the pyramid forward pass, FLOP
//!   counting and checkpoints.
//! * [`data`], [`train`]: synthetic stick-figure data and the training loop.
//! * [`eval`]: camera geometry, metrics and the ablation studies.

pub mod arch;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod heads;
pub mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
