use serde::{Deserialize, Serialize};

use super::{GridCuts, SegError, TierSlab};
use crate::layout::TierLayout;
use crate::volume_io::{rotate_point, AlignmentParams, Box3};

/// The chain of transforms a box was derived through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxProvenance {
    pub alignment: AlignmentParams,
    pub tier_rotation_deg: f64,
    pub xy_scale: (f64, f64),
    pub z_factor: usize,
    /// Padding in proxy units.
    pub pad: usize,
    /// Cell rectangle in the rotated proxy image, `((x0, x1), (y0, y1))`.
    pub cell: ((f64, f64), (f64, f64)),
    pub slab: TierSlab,
}

/// Full-resolution extraction box of one object.
///
/// Coordinates are voxel indices of the aligned frame: raw slices rotated by
/// the alignment angle but not cropped, so `x < W`, `y < H`, `z < h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBox {
    pub id: String,
    /// 1-based tier, row and column in the layout.
    pub tier: usize,
    pub row: usize,
    pub col: usize,
    pub bounds: Box3,
    pub unpadded: Box3,
    pub provenance: BoxProvenance,
}

/// Maps every occupied cell of one tier back to full resolution.
///
/// `proxy_size` is the rotated proxy image size `(width, height)`; rotation
/// is undone about its center, then proxy coordinates are scaled and offset
/// by the crop. The axis-aligned envelope of the back-rotated cell is padded
/// by `pad` proxy units and clamped to `full_dims = [W, H, h]`.
#[allow(clippy::too_many_arguments)]
pub fn boxes_to_fullres(
    cuts: &GridCuts,
    slab: TierSlab,
    tier: &TierLayout,
    proxy_size: (usize, usize),
    alignment: &AlignmentParams,
    xy_scale: (f64, f64),
    z_factor: usize,
    pad: usize,
    full_dims: [usize; 3],
) -> Result<Vec<ObjectBox>, SegError> {
    if cuts.n_rows() != tier.n_rows() || cuts.n_cols() != tier.n_cols() {
        return Err(SegError::LayoutMismatch(format!(
            "grid is {}×{}, tier {} layout is {}×{}",
            cuts.n_rows(),
            cuts.n_cols(),
            tier.tier_index,
            tier.n_rows(),
            tier.n_cols()
        )));
    }
    let center = (proxy_size.0 as f64 / 2.0, proxy_size.1 as f64 / 2.0);
    let offset = (alignment.col_range.0 as f64, alignment.row_range.0 as f64);
    let [fw, fh, fd] = full_dims;
    let z_lo = slab.z_start * z_factor;
    let z_hi = slab.z_stop * z_factor;
    let pad_x = pad as f64 * xy_scale.0;
    let pad_y = pad as f64 * xy_scale.1;
    let pad_z = pad * z_factor;

    let mut out = Vec::new();
    for (row, col, entry) in tier.cells() {
        let Some(id) = entry.identifier() else { continue };
        let cell = cuts.cell(row - 1, col - 1);
        let ((x0, x1), (y0, y1)) = cell;
        let corners = [(x0, y0), (x1, y0), (x0, y1), (x1, y1)].map(|p| {
            let q = rotate_point(p, center, -cuts.rotation_deg);
            (q.0 * xy_scale.0 + offset.0, q.1 * xy_scale.1 + offset.1)
        });
        let (mut lx, mut hx, mut ly, mut hy) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in corners {
            lx = lx.min(x);
            hx = hx.max(x);
            ly = ly.min(y);
            hy = hy.max(y);
        }
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let unpadded = Box3::new(
            (clamp(lx.floor(), fw), clamp(hx.ceil(), fw)),
            (clamp(ly.floor(), fh), clamp(hy.ceil(), fh)),
            (z_lo.min(fd), z_hi.min(fd)),
        );
        let bounds = Box3::new(
            (clamp((lx - pad_x).floor(), fw), clamp((hx + pad_x).ceil(), fw)),
            (clamp((ly - pad_y).floor(), fh), clamp((hy + pad_y).ceil(), fh)),
            (z_lo.saturating_sub(pad_z).min(fd), (z_hi + pad_z).min(fd)),
        );
        if bounds.is_empty() {
            return Err(SegError::OutOfBoundsAfterClamp(id.to_string()));
        }
        out.push(ObjectBox {
            id: id.to_string(),
            tier: tier.tier_index,
            row,
            col,
            bounds,
            unpadded,
            provenance: BoxProvenance {
                alignment: *alignment,
                tier_rotation_deg: cuts.rotation_deg,
                xy_scale,
                z_factor,
                pad,
                cell,
                slab,
            },
        });
    }
    Ok(out)
}
