//! Bounding-box mathematics on the subsampled proxy volume.
//!
//! Everything here is a pure function of in-memory arrays. The order of use
//! is thresholds → [`detect_tier_boundaries`] → [`divider_image`] →
//! [`auto_rotate`] → [`grid_segment`] → [`boxes_to_fullres`];
//! [`segment_tier`] strings the per-tier part together.

mod boxes;
mod divider;
mod grid;
mod histogram;
mod peaks;
mod pipeline;
mod rotation;
mod thresholds;
mod tiers;

use serde::{Deserialize, Serialize};

pub use boxes::{boxes_to_fullres, BoxProvenance, ObjectBox};
pub use divider::{divider_image, DividerImage};
pub use grid::{
    axis_profile, cell_occupancy, grid_from_cuts, grid_segment, match_orientation, CutMode,
    GridCuts, OCCUPANCY_THRESHOLD,
};
pub use histogram::{histogram, z_profile, Histogram};
pub use peaks::{find_peaks, local_maxima, strongest, Peak, PeakParams};
pub use pipeline::{segment_tier, GridOverride, TierGrid};
pub use rotation::{
    auto_rotate, rotation_objective, RotationFit, ANGLE_LIMIT_DEG, ANGLE_STEP_DEG,
    FIT_HALF_WIDTH_DEG, PRESMOOTH_SIGMA, SMOOTH_WINDOW,
};
pub use thresholds::ThresholdSet;
pub use tiers::{detect_tier_boundaries, slabs_from_cuts, TierDetection, TierSlab, Z_MIN_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Horizontal divider lines, positions along y.
    Rows,
    /// Vertical divider lines, positions along x.
    Cols,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::Rows => "rows",
            Axis::Cols => "cols",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SegError {
    #[error("volume is empty")]
    EmptyVolume,
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("found {found} tier boundaries, need {needed}; cut points must be ratified")]
    InsufficientPeaks { found: usize, needed: usize },
    #[error("invalid override: {0}")]
    InvalidOverride(String),
    #[error("no divider signal in tier (max I <= 0)")]
    DegenerateMask,
    #[error("rotation objective is flat")]
    FlatObjective,
    #[error("{axis}: found {found} peaks, expected {expected}; grid cuts must be ratified")]
    PeakCountMismatch {
        axis: Axis,
        found: usize,
        expected: usize,
    },
    #[error("box for {0} is empty after clamping")]
    OutOfBoundsAfterClamp(String),
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
}
