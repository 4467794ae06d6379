//! Frequency-aware self-supervised pretraining for MRI-like images.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`fft`], [`ops`], [`autodiff`]: dense `f64` numerics, a
//!   radix-2 FFT and a reverse-mode tape every learnable layer is built on.
//! * [`augment`]: edge-energy driven hierarchical masking and k-space noise.
//! * [`model`]: conv heads, ICN/FG-FFN transformer encoder, task-token
//!   decoder and pixel-shuffle tails, with a freezable parameter store.
//! * [`train`]: losses, Adam, warm-up + cosine schedule, pretrain and
//!   asymmetric fine-tune steps.
//! * [`metrics`]: PSNR, SSIM, Dice and 95th-percentile Hausdorff distance.
//! * [`data`]: synthetic phantoms, degradations, NIfTI-1 ingestion.
//! * [`pipeline`]: run directories, config capture and sweeps driven by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod autodiff;
pub mod config;
pub mod data;
pub mod error;
pub mod fft;
pub mod fts;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, ParamStore, Sspformer, TaskKind};
pub use num_complex::Complex64;
pub use rng::Rng;
pub use tensor::{ComplexTensor, Shape, Tensor};
