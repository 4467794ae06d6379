//! Pretraining and asymmetric fine-tuning: losses, schedule, optimiser and steps.

mod config;
mod loss;
mod optim;
mod step;

pub use config::{lr_at, LossConfig, ReconNorm, Toggles, TrainConfig, LAMBDA_GRID};
pub use loss::{consistency_loss, recon_loss, recon_loss_var, total_loss};
pub use optim::{Adam, BETA1, BETA2, EPS};
pub use step::{
    check_frozen_encoder, evaluate_loss, finetune_step, isolate_channel, pretrain_input,
    pretrain_step, sample_rng, thread_count, Sample, StepReport, Target, PRETRAIN_TASK,
};
