//! Streaming access to z-slice stacks under a memory budget.
//!
//! Nothing in here holds more than a bounded number of full-resolution
//! slices. The only whole-scan objects are the subsampled proxy volume and,
//! one at a time, individual object sub-volumes loaded from the on-disk
//! [`SubvolumeStore`].

mod align;
mod extract;
mod image;
mod memory;
mod stack;
mod store;
mod subsample;

use std::path::PathBuf;

pub use align::{
    rotate_crop, rotate_image, rotate_point, rotate_region, rotate_row_into, AlignmentParams,
};
pub use extract::{extract_subvolumes, ExtractTarget};
pub use image::{Image2D, Volume3D};
pub use memory::{Charge, MemoryTracker};
pub use stack::{write_slice, ResidentSlice, ScanMetadata, SliceStack, DEFAULT_RESIDENT_SLICES};
pub use store::{Box3, SubvolumeHeader, SubvolumeStore, SubvolumeTransform, ZChunk};
pub use subsample::{
    load_subsampled, resize_area, save_subsampled, subsample, subsample_with, Subsampler,
    SubsampledVolume, SUBSAMPLE_XY, Z_FACTOR,
};

#[derive(Debug, thiserror::Error)]
pub enum VolumeError {
    #[error("no slice images found in {0}")]
    NoSlices(PathBuf),
    #[error("{file}: dimensions {found:?} differ from {expected:?}")]
    InconsistentDimensions {
        file: PathBuf,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{file}: unsupported sample type {found}; 16-bit grayscale required")]
    UnsupportedSampleType { file: PathBuf, found: String },
    #[error("slice {k} outside 1..={h}")]
    OutOfRange { k: usize, h: usize },
    #[error("{file}: {source}")]
    Decode {
        file: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
    #[error("{0}")]
    InvalidAlignment(String),
    #[error("crop {what} {range:?} outside 0..{limit}")]
    RangeOutOfBounds {
        what: &'static str,
        range: (usize, usize),
        limit: usize,
    },
    #[error("chunk for {id} is {found:?} but the box is {expected:?}")]
    DimsMismatch {
        id: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("no sub-volume registered for {0}")]
    NotRegistered(String),
    #[error("append to {id} starts at z={found}, expected z={expected}")]
    NonContiguousAppend {
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("sub-volume {0} is not finalized")]
    NotFinalized(String),
    #[error("loading needs {needed} bytes, budget is {budget}")]
    ExceedsMemoryBudget { needed: u64, budget: u64 },
    #[error("corrupt file {file}: {reason}")]
    Corrupt { file: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl VolumeError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| VolumeError::Io { path, source }
    }
}
