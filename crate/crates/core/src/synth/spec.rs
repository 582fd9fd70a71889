use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::layout::{Orientation, TierLayout};

/// Mean and spread of one material, before the global offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityClass {
    pub mean: f64,
    pub sigma: f64,
}

/// One tier: a grid of dividers between `z_range.0` and `z_range.1`
/// (full-resolution slices, half-open), turned by `twist_deg` about the
/// package center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierSpec {
    pub z_range: (usize, usize),
    pub n_rows: usize,
    pub n_cols: usize,
    /// `occupied[r][c]`, row 0 at the top of the overhead view.
    pub occupied: Vec<Vec<bool>>,
    pub twist_deg: f64,
}

impl TierSpec {
    pub fn object_count(&self) -> usize {
        self.occupied.iter().flatten().filter(|&&o| o).count()
    }
}

/// Perturbed ellipsoid, in the tier's own (untwisted) frame.
///
/// A direction `n` (unit vector of the axis-normalized offset) is inside
/// while the normalized radius is below `1 + k0·nx·ny + k1·ny·nz + k2·nz·nx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    /// Semi-axes along x, y, z in voxels.
    pub semi_axes: [f64; 3],
    /// Offset of the blob center from the cell center (x, y) and the tier
    /// mid-height (z), in voxels.
    pub offset: [f64; 3],
    pub shape: [f64; 3],
}

impl BlobSpec {
    /// Largest radius factor the perturbation can reach.
    pub fn max_radius_factor(&self) -> f64 {
        1.0 + 0.5 * self.shape.iter().map(|k| k.abs()).sum::<f64>()
    }

    /// Inside test for an offset `d` from the blob center.
    pub fn contains(&self, d: [f64; 3]) -> bool {
        let n = [
            d[0] / self.semi_axes[0],
            d[1] / self.semi_axes[1],
            d[2] / self.semi_axes[2],
        ];
        let s2 = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
        let r_max = self.max_radius_factor();
        if s2 > r_max * r_max {
            return false;
        }
        if s2 == 0.0 {
            return true;
        }
        let k = &self.shape;
        let p = 1.0 + (k[0] * n[0] * n[1] + k[1] * n[1] * n[2] + k[2] * n[2] * n[0]) / s2;
        s2 <= p * p
    }
}

/// Everything needed to render one synthetic packed scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scan_id: String,
    /// `[W, H, h]`.
    pub dims: [usize; 3],
    /// Package center in the aligned frame.
    pub package_center: (f64, f64),
    /// Package footprint `(width, height)` measured between wall centerlines.
    pub package_size: (f64, f64),
    pub divider_thickness: f64,
    /// Thickness in slices of the sheet at the middle of every gap; 0 for none.
    pub sheet_thickness: usize,
    /// Bottom tier first.
    pub tiers: Vec<TierSpec>,
    /// The raw scan shows the aligned scene turned by this angle.
    pub global_rotation_deg: f64,
    pub air: IntensityClass,
    pub divider: IntensityClass,
    pub object: IntensityClass,
    pub intensity_offset: u16,
    /// Extra noise added to every class.
    pub noise_sigma: f64,
    pub voxel_pitch_um: f64,
    pub seed: u64,
    /// One per occupied cell in tier, row, column order; drawn from the seed
    /// when absent.
    pub blobs: Option<Vec<BlobSpec>>,
}

impl Default for SceneSpec {
    /// 600×600×800, three 3×4 tiers with two empty cells each (30 objects),
    /// twists in [−8°, 8°], global rotation 3.7°.
    fn default() -> Self {
        Self::stacked([600, 600, 800], 3, (3, 4), 1)
    }
}

impl SceneSpec {
    /// `n_tiers` evenly stacked tiers of `grid` cells with twists drawn in
    /// [−8°, 8°] and two empty cells per tier placed asymmetrically.
    pub fn stacked(dims: [usize; 3], n_tiers: usize, grid: (usize, usize), seed: u64) -> Self {
        let [w, h, depth] = dims;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_71e5);
        let margin = depth / 40;
        let gap = (depth / 20).max(4);
        let usable = depth.saturating_sub(2 * margin + gap * n_tiers.saturating_sub(1));
        let tier_h = usable / n_tiers.max(1);
        let tiers = (0..n_tiers)
            .map(|t| {
                let z0 = margin + t * (tier_h + gap);
                TierSpec {
                    z_range: (z0, z0 + tier_h),
                    n_rows: grid.0,
                    n_cols: grid.1,
                    occupied: asymmetric_occupancy(grid.0, grid.1, t),
                    twist_deg: (rng.random_range(-80..=80) as f64) / 10.0,
                }
            })
            .collect();
        let side = w.min(h) as f64 * 0.733;
        Self {
            scan_id: "SYN1".into(),
            dims,
            package_center: (w as f64 / 2.0, h as f64 / 2.0),
            package_size: (side, side),
            divider_thickness: 6.0,
            sheet_thickness: 1,
            tiers,
            global_rotation_deg: 3.7,
            air: IntensityClass { mean: 4000.0, sigma: 500.0 },
            divider: IntensityClass { mean: 12000.0, sigma: 600.0 },
            object: IntensityClass { mean: 32000.0, sigma: 800.0 },
            intensity_offset: 0,
            noise_sigma: 0.0,
            voxel_pitch_um: 50.0,
            seed,
            blobs: None,
        }
    }

    pub fn object_count(&self) -> usize {
        self.tiers.iter().map(TierSpec::object_count).sum()
    }

    /// Cell size `(width, height)` of a tier.
    pub fn cell_size(&self, tier: &TierSpec) -> (f64, f64) {
        (
            self.package_size.0 / tier.n_cols as f64,
            self.package_size.1 / tier.n_rows as f64,
        )
    }

    /// Effective spread of a class including the extra noise.
    pub fn class_sigma(&self, class: IntensityClass) -> f64 {
        class.sigma.hypot(self.noise_sigma)
    }

    /// Blob per occupied cell: the configured ones, or drawn from the seed.
    pub fn resolved_blobs(&self) -> Vec<BlobSpec> {
        if let Some(b) = &self.blobs {
            return b.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0xb10b_5eed);
        let mut out = Vec::with_capacity(self.object_count());
        for tier in &self.tiers {
            let (cw, ch) = self.cell_size(tier);
            let tz = (tier.z_range.1 - tier.z_range.0) as f64;
            for _ in 0..tier.object_count() {
                let shape = [
                    rng.random_range(-0.06..0.06),
                    rng.random_range(-0.06..0.06),
                    rng.random_range(-0.06..0.06),
                ];
                let semi_axes = [
                    cw * rng.random_range(0.26..0.36),
                    ch * rng.random_range(0.26..0.36),
                    tz * rng.random_range(0.24..0.30),
                ];
                let mut blob = BlobSpec { semi_axes, offset: [0.0; 3], shape };
                let room = self.blob_room(tier, &blob);
                for a in 0..3 {
                    let slack = (room[a] - 2.0).max(0.0) * 0.5;
                    blob.offset[a] = if slack > 0.0 { rng.random_range(-slack..slack) } else { 0.0 };
                }
                out.push(blob);
            }
        }
        out
    }

    /// Free distance between the centered, fully grown blob and its cell
    /// walls (or tier ends), per axis.
    fn blob_room(&self, tier: &TierSpec, blob: &BlobSpec) -> [f64; 3] {
        let (cw, ch) = self.cell_size(tier);
        let half_t = self.divider_thickness / 2.0;
        let tz = (tier.z_range.1 - tier.z_range.0) as f64;
        let r = blob.max_radius_factor();
        [
            cw / 2.0 - half_t - blob.semi_axes[0] * r,
            ch / 2.0 - half_t - blob.semi_axes[1] * r,
            tz / 2.0 - blob.semi_axes[2] * r,
        ]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |s: String| Err(SynthError::SpecInvalid(s));
        let [w, h, depth] = self.dims;
        if w == 0 || h == 0 || depth == 0 {
            return bad("dimensions must be positive".into());
        }
        if crate::layout::validate_identifier(&self.scan_id).is_err() {
            return bad(format!("scan id {:?} is not usable", self.scan_id));
        }
        let classes = [("air", self.air), ("divider", self.divider), ("object", self.object)];
        for (name, c) in classes {
            if !(c.mean.is_finite() && c.sigma.is_finite() && c.sigma >= 0.0) {
                return bad(format!("{name} class is not finite"));
            }
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative".into());
        }
        for pair in classes.windows(2) {
            let (lo, hi) = (pair[0].1, pair[1].1);
            let need = 3.0 * (self.class_sigma(lo) + self.class_sigma(hi));
            if hi.mean - lo.mean < need {
                return bad(format!(
                    "{} and {} means must be at least 6σ apart",
                    pair[0].0, pair[1].0
                ));
            }
        }
        let top = self.object.mean + 6.0 * self.class_sigma(self.object) + self.intensity_offset as f64;
        if self.air.mean - 6.0 * self.class_sigma(self.air) < 0.0 || top > u16::MAX as f64 {
            return bad("intensity classes do not fit 16 bits".into());
        }
        if !(self.global_rotation_deg.is_finite() && self.global_rotation_deg.abs() <= 45.0) {
            return bad("global rotation must lie in [−45°, 45°]".into());
        }
        if !(self.voxel_pitch_um > 0.0) {
            return bad("voxel pitch must be positive".into());
        }
        if self.tiers.is_empty() {
            return bad("at least one tier is required".into());
        }
        let (pw, ph) = self.package_size;
        if !(pw > 0.0 && ph > 0.0 && self.divider_thickness > 0.0) {
            return bad("package size and divider thickness must be positive".into());
        }
        let mut prev_stop = 0;
        for (i, t) in self.tiers.iter().enumerate() {
            let tier = i + 1;
            if t.z_range.0 >= t.z_range.1 || t.z_range.1 > depth || t.z_range.0 < prev_stop {
                return bad(format!("tier {tier} z range {:?} is invalid", t.z_range));
            }
            if i > 0 && t.z_range.0 < prev_stop + self.sheet_thickness + 2 {
                return bad(format!("gap below tier {tier} is too thin for its sheet"));
            }
            prev_stop = t.z_range.1;
            if t.n_rows == 0 || t.n_cols == 0 {
                return bad(format!("tier {tier} grid is empty"));
            }
            if t.occupied.len() != t.n_rows || t.occupied.iter().any(|r| r.len() != t.n_cols) {
                return bad(format!("tier {tier} occupancy is not {}×{}", t.n_rows, t.n_cols));
            }
            if !(t.twist_deg.is_finite() && t.twist_deg.abs() <= 10.0) {
                return bad(format!("tier {tier} twist must lie in [−10°, 10°]"));
            }
            let (cw, ch) = self.cell_size(t);
            if cw <= 2.0 * self.divider_thickness || ch <= 2.0 * self.divider_thickness {
                return bad(format!("tier {tier} cells are thinner than the dividers"));
            }
        }
        self.check_package_in_frame()?;
        let blobs = self.resolved_blobs();
        if blobs.len() != self.object_count() {
            return bad(format!(
                "{} blobs given for {} occupied cells",
                blobs.len(),
                self.object_count()
            ));
        }
        let mut k = 0;
        for (i, t) in self.tiers.iter().enumerate() {
            for _ in 0..t.object_count() {
                let b = &blobs[k];
                k += 1;
                if b.semi_axes.iter().any(|&a| !(a > 0.0)) || b.max_radius_factor() >= 1.5 {
                    return bad(format!("blob {k} shape is invalid"));
                }
                let room = self.blob_room(t, b);
                if (0..3).any(|a| room[a] - b.offset[a].abs() < 1.0) {
                    return bad(format!("blob {k} in tier {} leaves less than 1 voxel margin", i + 1));
                }
            }
        }
        Ok(())
    }

    /// Every twisted package corner must land inside the raw frame.
    fn check_package_in_frame(&self) -> Result<(), SynthError> {
        let [w, h, _] = self.dims;
        let half = (
            self.package_size.0 / 2.0 + self.divider_thickness,
            self.package_size.1 / 2.0 + self.divider_thickness,
        );
        let frame_center = (w as f64 / 2.0, h as f64 / 2.0);
        for t in &self.tiers {
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let corner = (self.package_center.0 + sx * half.0, self.package_center.1 + sy * half.1);
                let aligned = crate::volume_io::rotate_point(corner, self.package_center, t.twist_deg);
                let raw = crate::volume_io::rotate_point(aligned, frame_center, self.global_rotation_deg);
                if raw.0 < 0.0 || raw.1 < 0.0 || raw.0 > w as f64 || raw.1 > h as f64 {
                    return Err(SynthError::SpecInvalid(
                        "package does not fit the scan frame".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Occupancy with two empty cells whose pattern no flip or half-turn maps
/// onto itself (falls back to a single empty cell for tiny grids).
pub fn asymmetric_occupancy(n_rows: usize, n_cols: usize, variant: usize) -> Vec<Vec<bool>> {
    let cells = n_rows * n_cols;
    let mut pairs = Vec::new();
    for a in 0..cells {
        for b in a + 1..cells {
            pairs.push((a, b));
        }
    }
    let start = if pairs.is_empty() { 0 } else { (variant * 7) % pairs.len() };
    for i in 0..pairs.len() {
        let (a, b) = pairs[(start + i) % pairs.len()];
        let mut occ = vec![vec![true; n_cols]; n_rows];
        occ[a / n_cols][a % n_cols] = false;
        occ[b / n_cols][b % n_cols] = false;
        if is_asymmetric(&occ) {
            return occ;
        }
    }
    let mut occ = vec![vec![true; n_cols]; n_rows];
    if cells > 1 {
        occ[0][0] = false;
    }
    occ
}

fn is_asymmetric(occ: &[Vec<bool>]) -> bool {
    Orientation::ALL[1..].iter().all(|o| o.apply(occ) != occ)
}

/// Layout for one tier with generated identifiers.
pub(super) fn tier_layout(tier_index: usize, tier: &TierSpec, next_id: &mut impl FnMut() -> String) -> TierLayout {
    use crate::layout::CellEntry;
    TierLayout {
        tier_index,
        rows: tier
            .occupied
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&o| if o { CellEntry::Object(next_id()) } else { CellEntry::Empty })
                    .collect()
            })
            .collect(),
    }
}
