//! Point classification of a [`SceneSpec`] in the aligned frame.

use super::spec::{BlobSpec, SceneSpec};
use crate::volume_io::rotate_point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Material {
    Air,
    Divider,
    /// Index into the scene's object list.
    Object(usize),
}

/// What occupies a range of slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Empty,
    Sheet,
    Tier(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct TierGeom {
    z_range: (usize, usize),
    n_rows: usize,
    n_cols: usize,
    cell: (f64, f64),
    sin: f64,
    cos: f64,
    /// `objects[r * n_cols + c]`: object index and blob, if occupied.
    objects: Vec<Option<(usize, BlobSpec)>>,
}

/// Precomputed scene geometry.
#[derive(Debug, Clone)]
pub struct Scene {
    pub(crate) center: (f64, f64),
    pub(crate) size: (f64, f64),
    pub(crate) half_thickness: f64,
    pub(crate) tiers: Vec<TierGeom>,
    sheets: Vec<(usize, usize)>,
}

impl Scene {
    pub fn new(spec: &SceneSpec) -> Self {
        let blobs = spec.resolved_blobs();
        let mut next = 0;
        let tiers = spec
            .tiers
            .iter()
            .map(|t| {
                let (s, c) = t.twist_deg.to_radians().sin_cos();
                let objects = t
                    .occupied
                    .iter()
                    .flatten()
                    .map(|&o| {
                        o.then(|| {
                            next += 1;
                            (next - 1, blobs[next - 1])
                        })
                    })
                    .collect();
                TierGeom {
                    z_range: t.z_range,
                    n_rows: t.n_rows,
                    n_cols: t.n_cols,
                    cell: spec.cell_size(t),
                    sin: s,
                    cos: c,
                    objects,
                }
            })
            .collect();
        let sheets = spec
            .tiers
            .windows(2)
            .filter(|_| spec.sheet_thickness > 0)
            .map(|w| {
                let mid = (w[0].z_range.1 + w[1].z_range.0) / 2;
                let start = mid - spec.sheet_thickness / 2;
                (start, start + spec.sheet_thickness)
            })
            .collect();
        Self {
            center: spec.package_center,
            size: spec.package_size,
            half_thickness: spec.divider_thickness / 2.0,
            tiers,
            sheets,
        }
    }

    pub(crate) fn layer(&self, z: usize) -> Layer {
        if let Some(i) = self.tiers.iter().position(|t| z >= t.z_range.0 && z < t.z_range.1) {
            Layer::Tier(i)
        } else if self.sheets.iter().any(|&(a, b)| z >= a && z < b) {
            Layer::Sheet
        } else {
            Layer::Empty
        }
    }

    /// Offset from the package's top-left wall corner in the tier's own frame.
    fn tier_local(&self, tier: &TierGeom, q: (f64, f64)) -> (f64, f64) {
        // inverse of rotate_point by the twist
        let (dx, dy) = (q.0 - self.center.0, q.1 - self.center.1);
        (
            dx * tier.cos - dy * tier.sin + self.size.0 / 2.0,
            dx * tier.sin + dy * tier.cos + self.size.1 / 2.0,
        )
    }

    /// Material at aligned-frame point `q` (pixel-edge coordinates) and slice
    /// center `zc`.
    pub(crate) fn classify(&self, layer: Layer, q: (f64, f64), zc: f64) -> Material {
        let ht = self.half_thickness;
        match layer {
            Layer::Empty => Material::Air,
            Layer::Sheet => {
                let (u, v) = (q.0 - self.center.0, q.1 - self.center.1);
                if u.abs() <= self.size.0 / 2.0 + ht && v.abs() <= self.size.1 / 2.0 + ht {
                    Material::Divider
                } else {
                    Material::Air
                }
            }
            Layer::Tier(i) => {
                let t = &self.tiers[i];
                let (u, v) = self.tier_local(t, q);
                if u < -ht || v < -ht || u > self.size.0 + ht || v > self.size.1 + ht {
                    return Material::Air;
                }
                if line_distance(u, t.cell.0, t.n_cols) <= ht || line_distance(v, t.cell.1, t.n_rows) <= ht {
                    return Material::Divider;
                }
                let c = (u / t.cell.0).floor();
                let r = (v / t.cell.1).floor();
                if c < 0.0 || r < 0.0 || c as usize >= t.n_cols || r as usize >= t.n_rows {
                    return Material::Air;
                }
                let (r, c) = (r as usize, c as usize);
                let Some((obj, blob)) = t.objects[r * t.n_cols + c] else {
                    return Material::Air;
                };
                let cu = (c as f64 + 0.5) * t.cell.0 + blob.offset[0];
                let cv = (r as f64 + 0.5) * t.cell.1 + blob.offset[1];
                let cz = (t.z_range.0 + t.z_range.1) as f64 / 2.0 + blob.offset[2];
                if blob.contains([u - cu, v - cv, zc - cz]) {
                    Material::Object(obj)
                } else {
                    Material::Air
                }
            }
        }
    }

    /// Aligned-frame corners of a tier cell `(r, c)` (0-based), clockwise
    /// from the top-left, on the divider centerlines.
    pub fn cell_polygon(&self, tier: usize, r: usize, c: usize) -> [(f64, f64); 4] {
        let t = &self.tiers[tier];
        let x0 = self.center.0 - self.size.0 / 2.0 + c as f64 * t.cell.0;
        let y0 = self.center.1 - self.size.1 / 2.0 + r as f64 * t.cell.1;
        let (x1, y1) = (x0 + t.cell.0, y0 + t.cell.1);
        let twist = t.sin.atan2(t.cos).to_degrees();
        [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].map(|p| rotate_point(p, self.center, twist))
    }

    /// Distance from aligned point `q` to the nearest divider centerline of a
    /// tier, and whether `q` lies within the package span along that line.
    pub(crate) fn divider_distance(&self, tier: usize, q: (f64, f64)) -> f64 {
        let t = &self.tiers[tier];
        let (u, v) = self.tier_local(t, q);
        let ht = self.half_thickness;
        let within_u = u >= -ht && u <= self.size.0 + ht;
        let within_v = v >= -ht && v <= self.size.1 + ht;
        let du = if within_v { line_distance(u, t.cell.0, t.n_cols) } else { f64::INFINITY };
        let dv = if within_u { line_distance(v, t.cell.1, t.n_rows) } else { f64::INFINITY };
        du.min(dv)
    }

    /// Distance from `q` to the nearest divider centerline when `q` is
    /// inside a cell, or `None` outside every cell.
    pub(crate) fn cell_depth(&self, tier: usize, q: (f64, f64)) -> Option<f64> {
        let t = &self.tiers[tier];
        let (u, v) = self.tier_local(t, q);
        if u < 0.0 || v < 0.0 || u > self.size.0 || v > self.size.1 {
            return None;
        }
        Some(line_distance(u, t.cell.0, t.n_cols).min(line_distance(v, t.cell.1, t.n_rows)))
    }

    /// Centerline positions of the row and column dividers of a tier, in
    /// the tier's own frame measured from the package center.
    pub(crate) fn line_offsets(&self, tier: usize) -> (Vec<f64>, Vec<f64>) {
        let t = &self.tiers[tier];
        let rows = (0..=t.n_rows).map(|k| k as f64 * t.cell.1 - self.size.1 / 2.0).collect();
        let cols = (0..=t.n_cols).map(|k| k as f64 * t.cell.0 - self.size.0 / 2.0).collect();
        (rows, cols)
    }
}

/// Distance from `x` to the nearest of the lines `0, cell, …, n·cell`.
fn line_distance(x: f64, cell: f64, n: usize) -> f64 {
    let k = (x / cell).round().clamp(0.0, n as f64);
    (x - k * cell).abs()
}
