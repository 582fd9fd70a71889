use serde::{Deserialize, Serialize};

use super::peaks::{find_peaks, strongest, PeakParams};
use super::{Axis, SegError};
use crate::layout::{Orientation, TierLayout};
use crate::volume_io::Image2D;

/// Minimum fraction of object-dominated pixels for a cell to count as occupied.
pub const OCCUPANCY_THRESHOLD: f64 = 0.02;

/// How the outer cuts of an axis were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutMode {
    /// `n + 1` lines found, package walls included.
    Walls,
    /// Only the `n − 1` internal lines found; image bounds close the grid.
    Internal,
    /// Supplied by the user.
    Override,
}

/// Divider-line positions of one tier in the rotated proxy image.
///
/// Cuts are continuous pixel-edge coordinates; cell `(r, c)` spans
/// `row_cuts[r]..row_cuts[r+1]` along y and `col_cuts[c]..col_cuts[c+1]` along x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCuts {
    pub row_cuts: Vec<f64>,
    pub col_cuts: Vec<f64>,
    pub rotation_deg: f64,
    pub row_mode: CutMode,
    pub col_mode: CutMode,
}

impl GridCuts {
    pub fn n_rows(&self) -> usize {
        self.row_cuts.len().saturating_sub(1)
    }

    pub fn n_cols(&self) -> usize {
        self.col_cuts.len().saturating_sub(1)
    }

    /// `((x0, x1), (y0, y1))` of 0-based cell `(r, c)`.
    pub fn cell(&self, r: usize, c: usize) -> ((f64, f64), (f64, f64)) {
        (
            (self.col_cuts[c], self.col_cuts[c + 1]),
            (self.row_cuts[r], self.row_cuts[r + 1]),
        )
    }
}

/// Sum of the image across the other axis: one value per y for
/// [`Axis::Rows`], per x for [`Axis::Cols`].
pub fn axis_profile(img: &Image2D<f64>, axis: Axis) -> Vec<f64> {
    match axis {
        Axis::Rows => (0..img.height).map(|y| img.row(y).iter().sum()).collect(),
        Axis::Cols => {
            let mut out = vec![0.0; img.width];
            for y in 0..img.height {
                for (o, v) in out.iter_mut().zip(img.row(y)) {
                    *o += v;
                }
            }
            out
        }
    }
}

pub(super) fn axis_cuts(profile: &[f64], n: usize, axis: Axis) -> Result<(Vec<f64>, CutMode), SegError> {
    let peaks = find_peaks(profile, PeakParams { min_width: 1.0, rel_prominence: 0.1 });
    let edge = |p: &super::Peak| p.center() + 0.5;
    if peaks.len() > n {
        Ok((strongest(&peaks, n + 1).iter().map(edge).collect(), CutMode::Walls))
    } else if peaks.len() + 1 == n {
        let mut cuts = vec![0.0];
        cuts.extend(peaks.iter().map(edge));
        cuts.push(profile.len() as f64);
        Ok((cuts, CutMode::Internal))
    } else {
        Err(SegError::PeakCountMismatch { axis, found: peaks.len(), expected: n + 1 })
    }
}

/// Finds the `n_rows × n_cols` cell grid in a rotation-corrected divider mask.
pub fn grid_segment(
    b_rot: &Image2D<f64>,
    n_rows: usize,
    n_cols: usize,
    rotation_deg: f64,
) -> Result<GridCuts, SegError> {
    if n_rows == 0 || n_cols == 0 {
        return Err(SegError::LayoutMismatch("tier has no cells".into()));
    }
    let (row_cuts, row_mode) = axis_cuts(&axis_profile(b_rot, Axis::Rows), n_rows, Axis::Rows)?;
    let (col_cuts, col_mode) = axis_cuts(&axis_profile(b_rot, Axis::Cols), n_cols, Axis::Cols)?;
    Ok(GridCuts { row_cuts, col_cuts, rotation_deg, row_mode, col_mode })
}

/// Builds a grid from user-supplied cuts after checking them against the
/// layout and the image size.
pub fn grid_from_cuts(
    row_cuts: Vec<f64>,
    col_cuts: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    (width, height): (usize, usize),
    rotation_deg: f64,
) -> Result<GridCuts, SegError> {
    check_cuts(Axis::Rows, &row_cuts, n_rows, height)?;
    check_cuts(Axis::Cols, &col_cuts, n_cols, width)?;
    Ok(GridCuts {
        row_cuts,
        col_cuts,
        rotation_deg,
        row_mode: CutMode::Override,
        col_mode: CutMode::Override,
    })
}

pub(super) fn check_cuts(axis: Axis, cuts: &[f64], n: usize, len: usize) -> Result<(), SegError> {
    if cuts.len() != n + 1 {
        return Err(SegError::InvalidOverride(format!(
            "{axis}: {} cuts given, {} needed",
            cuts.len(),
            n + 1
        )));
    }
    let ordered = cuts.windows(2).all(|w| w[0] < w[1]);
    let inside = cuts.iter().all(|&c| c.is_finite() && (0.0..=len as f64).contains(&c));
    if !ordered || !inside {
        return Err(SegError::InvalidOverride(format!(
            "{axis}: cuts {cuts:?} must increase strictly within [0, {len}]"
        )));
    }
    Ok(())
}

/// Per-cell fraction of pixels whose divider score is negative (object
/// voxels outnumber divider voxels), ignoring a one-pixel rim.
pub fn cell_occupancy(i_rot: &Image2D<f64>, cuts: &GridCuts) -> Vec<Vec<f64>> {
    (0..cuts.n_rows())
        .map(|r| {
            (0..cuts.n_cols())
                .map(|c| {
                    let ((x0, x1), (y0, y1)) = cuts.cell(r, c);
                    let (mut hit, mut total) = (0usize, 0usize);
                    for y in 0..i_rot.height {
                        let yc = y as f64 + 0.5;
                        if yc < y0 + 1.0 || yc > y1 - 1.0 {
                            continue;
                        }
                        for x in 0..i_rot.width {
                            let xc = x as f64 + 0.5;
                            if xc < x0 + 1.0 || xc > x1 - 1.0 {
                                continue;
                            }
                            total += 1;
                            hit += (i_rot.get(x, y) < -0.5) as usize;
                        }
                    }
                    if total == 0 {
                        0.0
                    } else {
                        hit as f64 / total as f64
                    }
                })
                .collect()
        })
        .collect()
}

/// The re-orientation under which the layout's occupancy equals the observed
/// one, preferring the identity.
pub fn match_orientation(observed: &[Vec<bool>], tier: &TierLayout) -> Option<Orientation> {
    let expected = tier.occupancy();
    Orientation::ALL
        .into_iter()
        .find(|o| o.apply(&expected).as_slice() == observed)
}
