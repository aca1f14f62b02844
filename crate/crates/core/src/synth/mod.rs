//! Sand-pattern rendering, augmentation, SSIM and dataset materialisation.

mod augment;
mod dataset;
mod image;
mod ssim;

use thiserror::Error;

use crate::physics::PhysicsError;

pub use self::augment::{
    apply_color_gains, augment_color, augment_color_in, augment_filter, augment_sand, sample_poisson, AugmentFamily,
    KernelId, DEFAULT_COLOR_OFFSET,
};
pub use self::dataset::{
    build_dataset, entry_seed, render_mode, split_counts, DatasetConfig, DatasetManifest, ManifestEntry, Split,
};
pub use self::image::{render_pattern, render_pattern_styled, RenderStyle, SandImage};
pub use self::ssim::{luma, ssim, SSIM_C1, SSIM_C2, SSIM_STRIDE, SSIM_WINDOW};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("nodal mask has no true cells")]
    EmptyMask,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("image dimensions differ: {0}x{0} vs {1}x{1}")]
    DimensionMismatch(usize, usize),
    #[error("unknown filter kernel {0:?}")]
    UnknownKernel(String),
    #[error("image codec: {0}")]
    Image(#[from] ::image::ImageError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest line {line}: {source}")]
    Manifest { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.display().to_string(), source }
}
