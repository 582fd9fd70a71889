//! Ground-truthed synthetic packed scans.
//!
//! A scene is a box of stacked divider grids with one perturbed ellipsoid
//! per occupied cell, drawn in the aligned frame and then turned by a global
//! rotation to give the raw slices. The generator records exactly what it
//! drew so the pipeline's output can be scored.

mod generate;
mod scene;
mod score;
mod spec;
mod truth;

use std::path::PathBuf;

use thiserror::Error;

use crate::volume_io::VolumeError;

pub use generate::{generate, load_truth, Renderer, LAYOUT_FILE, SLICE_DIR};
pub use scene::{Material, Scene};
pub use score::{score_boxes, BoxScore, ScoreReport};
pub use spec::{asymmetric_occupancy, BlobSpec, IntensityClass, SceneSpec, TierSpec};
pub use truth::{GroundTruth, ObjectTruth, TierTruth};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    SpecInvalid(String),
    #[error("unknown identifier {0:?}")]
    UnknownIdentifier(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

impl SynthError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| SynthError::Io { path, source }
    }
}
