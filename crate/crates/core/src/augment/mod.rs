//! Self-supervision signals: edge-driven masking and k-space noise.

pub mod edge;
pub mod mask;
pub mod noise;

pub use edge::{edge_energy, edge_energy_mean, EdgeMap};
pub use mask::{apply_mask, plan_mask, plan_uniform, MaskPlan, Tier};
pub use noise::{
    hermitian_noise, kspace_noise, kspace_noise_with, noise_patches, radial_weight,
    ring_noise_power, NoiseSpec, WeightKind,
};
