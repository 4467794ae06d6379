//! The restoration transformer and its parameter bookkeeping.

pub mod checkpoint;
mod config;
mod network;
mod params;
mod task;

pub use config::ModelConfig;
pub use network::{Forward, InitMode, Sspformer, TokenContext, TokenSequence};
pub use params::{path_matches, Binder, Param, ParamFilter, ParamStore};
pub use task::TaskKind;

/// Paths frozen during asymmetric fine-tuning.
pub const ENCODER_PREFIX: &str = "encoder";
