use serde::{Deserialize, Serialize};

use super::scene::Scene;
use super::spec::SceneSpec;
use super::SynthError;
use crate::segmentation::ThresholdSet;
use crate::volume_io::{rotate_point, AlignmentParams, Box3, Image2D};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierTruth {
    /// 1-based, bottom first.
    pub tier_index: usize,
    pub z_range: (usize, usize),
    pub twist_deg: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub occupied: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub id: String,
    /// 1-based tier, row and column.
    pub tier: usize,
    pub row: usize,
    pub col: usize,
    /// Number of raw voxels rendered as this object.
    pub voxels: u64,
    /// Envelope of those voxels in the raw scan.
    pub raw_extent: Box3,
    /// Aligned-frame voxels containing the sampled points.
    pub extent: Box3,
    /// Mean sampled position in the aligned frame (pixel-edge coordinates).
    pub centroid: [f64; 3],
    /// Cell corners in the aligned frame, on the divider centerlines.
    pub cell_polygon: [(f64, f64); 4],
    pub z_range: (usize, usize),
}

impl ObjectTruth {
    /// True when `p` (aligned frame, pixel-edge coordinates) lies within
    /// this object's cell column and tier.
    pub fn cell_contains(&self, p: [f64; 3]) -> bool {
        if p[2] < self.z_range.0 as f64 || p[2] > self.z_range.1 as f64 {
            return false;
        }
        let poly = &self.cell_polygon;
        let mut sign = 0.0f64;
        for i in 0..4 {
            let (a, b) = (poly[i], poly[(i + 1) % 4]);
            let cross = (b.0 - a.0) * (p[1] - a.1) - (b.1 - a.1) * (p[0] - a.0);
            if cross != 0.0 {
                if sign != 0.0 && cross.signum() != sign {
                    return false;
                }
                sign = cross.signum();
            }
        }
        true
    }
}

/// Everything the generator knows about the scene it rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scan_id: String,
    pub dims: [usize; 3],
    pub voxel_pitch_um: f64,
    pub global_rotation_deg: f64,
    /// Rotation undoing the global rotation plus a crop around the package.
    pub alignment: AlignmentParams,
    /// Class boundaries halfway between the class means, offset included.
    pub thresholds: ThresholdSet,
    pub intensity_offset: u16,
    /// Air, divider and object means, offset included.
    pub class_means: [f64; 3],
    pub tiers: Vec<TierTruth>,
    /// z centers (full resolution, slice-edge coordinates) of the gaps
    /// between consecutive tiers.
    pub gap_centers: Vec<f64>,
    pub objects: Vec<ObjectTruth>,
    pub spec: SceneSpec,
}

impl GroundTruth {
    pub const FILE_NAME: &'static str = "truth.json";

    pub fn object(&self, id: &str) -> Result<&ObjectTruth, SynthError> {
        self.objects
            .iter()
            .find(|o| o.id == id)
            .ok_or_else(|| SynthError::UnknownIdentifier(id.to_string()))
    }

    /// Gap centers in subsampled slices for a z factor.
    pub fn gap_centers_subsampled(&self, z_factor: usize) -> Vec<f64> {
        self.gap_centers.iter().map(|g| g / z_factor as f64).collect()
    }

    /// Aligned-frame point of a proxy pixel center.
    fn proxy_to_aligned(&self, u: usize, v: usize, xy_scale: (f64, f64)) -> (f64, f64) {
        (
            self.alignment.col_range.0 as f64 + (u as f64 + 0.5) * xy_scale.0,
            self.alignment.row_range.0 as f64 + (v as f64 + 0.5) * xy_scale.1,
        )
    }

    /// Proxy pixels whose center lies within `half_width` aligned voxels of a
    /// divider centerline of `tier` (0-based).
    pub fn divider_line_mask(
        &self,
        tier: usize,
        proxy: (usize, usize),
        xy_scale: (f64, f64),
        half_width: f64,
    ) -> Image2D<bool> {
        let scene = Scene::new(&self.spec);
        Image2D::from_fn(proxy.0, proxy.1, |u, v| {
            scene.divider_distance(tier, self.proxy_to_aligned(u, v, xy_scale)) <= half_width
        })
    }

    /// Proxy pixels inside a cell of `tier` and at least `inset` aligned
    /// voxels away from every divider centerline.
    pub fn cell_interior_mask(
        &self,
        tier: usize,
        proxy: (usize, usize),
        xy_scale: (f64, f64),
        inset: f64,
    ) -> Image2D<bool> {
        let scene = Scene::new(&self.spec);
        Image2D::from_fn(proxy.0, proxy.1, |u, v| {
            scene
                .cell_depth(tier, self.proxy_to_aligned(u, v, xy_scale))
                .is_some_and(|d| d >= inset)
        })
    }

    /// Expected grid line positions `(rows, cols)` of `tier` (0-based) in a
    /// proxy image of `proxy` size rotated by `rotation_deg` about its
    /// center, measured where each line crosses the package center.
    pub fn expected_grid_lines(
        &self,
        tier: usize,
        proxy: (usize, usize),
        xy_scale: (f64, f64),
        rotation_deg: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let scene = Scene::new(&self.spec);
        let t = &self.tiers[tier];
        let (rows, cols) = scene.line_offsets(tier);
        let c = self.spec.package_center;
        let proxy_center = (proxy.0 as f64 / 2.0, proxy.1 as f64 / 2.0);
        let to_proxy = |local: (f64, f64)| {
            let q = rotate_point((c.0 + local.0, c.1 + local.1), c, t.twist_deg);
            let p = (
                (q.0 - self.alignment.col_range.0 as f64) / xy_scale.0,
                (q.1 - self.alignment.row_range.0 as f64) / xy_scale.1,
            );
            rotate_point(p, proxy_center, rotation_deg)
        };
        (
            rows.iter().map(|&y| to_proxy((0.0, y)).1).collect(),
            cols.iter().map(|&x| to_proxy((x, 0.0)).0).collect(),
        )
    }

    /// Whether `p` (aligned frame, voxel-edge coordinates) lies in the
    /// ground-truth cell of `id`.
    pub fn centroid_in_cell(&self, id: &str, p: [f64; 3]) -> Result<bool, SynthError> {
        Ok(self.object(id)?.cell_contains(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_object() -> ObjectTruth {
        ObjectTruth {
            id: "A".into(),
            tier: 1,
            row: 1,
            col: 1,
            voxels: 1,
            raw_extent: Box3::new((0, 1), (0, 1), (0, 1)),
            extent: Box3::new((0, 1), (0, 1), (0, 1)),
            centroid: [0.5; 3],
            cell_polygon: [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)],
            z_range: (5, 15),
        }
    }

    #[test]
    fn cell_contains_checks_polygon_and_tier() {
        let o = square_object();
        assert!(o.cell_contains([5.0, 5.0, 10.0]));
        assert!(o.cell_contains([0.0, 5.0, 5.0]));
        assert!(!o.cell_contains([11.0, 5.0, 10.0]));
        assert!(!o.cell_contains([5.0, -0.1, 10.0]));
        assert!(!o.cell_contains([5.0, 5.0, 16.0]));
    }
}
