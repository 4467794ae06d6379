//! Synthetic phantoms, degradation operators and file ingestion.

pub mod degrade;
pub mod nifti;
pub mod phantom;
pub mod split;
pub mod transforms;

pub use degrade::{add_gaussian_noise, degrade_sr, upsample_nearest, DegradationSpec, NOISE_GRID};
pub use nifti::{read_nifti1, write_nifti1, NiftiDtype, NiftiError, NiftiVolume};
pub use phantom::{phantom_generate, phantom_section, phantom_sections, Phantom, Plane};
pub use split::{split_dataset, Manifest, ManifestEntry, Split};
pub use transforms::Jitter;
