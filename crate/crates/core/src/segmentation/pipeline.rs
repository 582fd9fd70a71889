use serde::{Deserialize, Serialize};

use super::grid::{axis_cuts, check_cuts};
use super::{
    auto_rotate, axis_profile, cell_occupancy, divider_image, match_orientation, Axis, CutMode,
    GridCuts, RotationFit, SegError, ThresholdSet, TierSlab, OCCUPANCY_THRESHOLD,
};
use crate::layout::{Orientation, TierLayout};
use crate::volume_io::{rotate_image, Volume3D};

/// User corrections for one tier; any field left `None` is detected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridOverride {
    pub rotation_deg: Option<f64>,
    pub row_cuts: Option<Vec<f64>>,
    pub col_cuts: Option<Vec<f64>>,
}

/// Result of divider imaging, rotation and grid finding for one tier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierGrid {
    pub tier: usize,
    pub slab: TierSlab,
    pub max_score: i32,
    /// Absent when the angle was overridden.
    pub rotation: Option<RotationFit>,
    pub cuts: GridCuts,
    /// Fraction of object pixels per cell.
    pub occupancy: Vec<Vec<f64>>,
    /// How the layout must be re-oriented to match what was seen; `None` if
    /// no rigid re-orientation fits.
    pub orientation: Option<Orientation>,
    pub warnings: Vec<String>,
}

pub fn segment_tier(
    vol: &Volume3D<f64>,
    slab: TierSlab,
    tier: &TierLayout,
    thresholds: &ThresholdSet,
    ov: &GridOverride,
) -> Result<TierGrid, SegError> {
    let (n_rows, n_cols) = (tier.n_rows(), tier.n_cols());
    let div = divider_image(vol, slab, thresholds)?;
    let (rotation, angle) = match ov.rotation_deg {
        Some(a) => (None, a),
        None => {
            let fit = auto_rotate(&div.b)?;
            let a = fit.angle_deg;
            (Some(fit), a)
        }
    };
    let b_rot = rotate_image(&div.b, angle);
    let (w, h) = (b_rot.width, b_rot.height);
    let pick = |axis: Axis, given: &Option<Vec<f64>>, n: usize, len: usize| match given {
        Some(c) => check_cuts(axis, c, n, len).map(|_| (c.clone(), CutMode::Override)),
        None => axis_cuts(&axis_profile(&b_rot, axis), n, axis),
    };
    let (row_cuts, row_mode) = pick(Axis::Rows, &ov.row_cuts, n_rows, h)?;
    let (col_cuts, col_mode) = pick(Axis::Cols, &ov.col_cuts, n_cols, w)?;
    let cuts = GridCuts { row_cuts, col_cuts, rotation_deg: angle, row_mode, col_mode };

    let i_rot = rotate_image(&div.i.map(|v| v as f64), angle);
    let occupancy = cell_occupancy(&i_rot, &cuts);
    let observed: Vec<Vec<bool>> = occupancy
        .iter()
        .map(|r| r.iter().map(|&f| f > OCCUPANCY_THRESHOLD).collect())
        .collect();
    let orientation = match_orientation(&observed, tier);
    let mut warnings = Vec::new();
    match orientation {
        Some(Orientation::Identity) => {}
        Some(o) => warnings.push(format!(
            "tier {}: occupancy matches the layout only after {o:?}; check the alignment",
            tier.tier_index
        )),
        None => warnings.push(format!(
            "tier {}: occupancy {observed:?} does not match the layout",
            tier.tier_index
        )),
    }
    Ok(TierGrid {
        tier: tier.tier_index,
        slab,
        max_score: div.max_score(),
        rotation,
        cuts,
        occupancy,
        orientation,
        warnings,
    })
}
