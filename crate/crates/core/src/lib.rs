//! Segmentation and surfacing of packed micro-CT scans.
//!
//! A packed scan is a stack of z-slice images of a box holding many small
//! objects, one per cell of stacked divider grids ("tiers"). A layout CSV
//! names the object in each cell. The workflow turns one scan into one
//! surface mesh per object without ever holding the full scan in memory:
//!
//! 1. **Alignment** – rotate and crop each slice so the overhead view matches
//!    the layout ([`volume_io::AlignmentParams`]).
//! 2. **Subsampling** – stream the aligned slices into a 225×225×⌈h/10⌉
//!    proxy volume ([`volume_io::subsample`]).
//! 3. **Bounding boxes** – thresholds, tier splitting, divider imaging,
//!    automatic tier rotation and grid segmentation on the proxy
//!    ([`segmentation`]).
//! 4. **Extraction** – one more pass over the full-resolution slices, appending
//!    each object's sub-volume to disk ([`volume_io::SubvolumeStore`]).
//! 5. **Surfacing** – marching cubes, component cleaning and PLY output per
//!    object ([`surfacing`]).
//!
//! [`synth`] generates ground-truthed packed scans for verification.

// `!(x > 0.0)` is used on purpose so NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod layout;
pub mod segmentation;
pub mod surfacing;
pub mod synth;
pub mod volume_io;

pub use layout::{CellEntry, ScanLayout, TierLayout};
pub use segmentation::{ObjectBox, ThresholdSet, TierSlab};
pub use surfacing::Mesh;
pub use volume_io::{AlignmentParams, Image2D, SliceStack, SubsampledVolume, Volume3D};
