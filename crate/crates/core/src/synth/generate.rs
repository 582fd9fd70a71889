use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::scene::{Material, Scene};
use super::spec::{tier_layout, SceneSpec};
use super::truth::{GroundTruth, ObjectTruth, TierTruth};
use super::SynthError;
use crate::layout::ScanLayout;
use crate::segmentation::ThresholdSet;
use crate::volume_io::{rotate_point, write_slice, AlignmentParams, Box3, Image2D, ScanMetadata};

/// Sub-directory of the output holding the slices and `scan.json`.
pub const SLICE_DIR: &str = "slices";
pub const LAYOUT_FILE: &str = "layout.csv";

/// Per-object accumulation over rendered voxels.
#[derive(Debug, Clone, Copy)]
struct Acc {
    count: u64,
    raw_min: [usize; 3],
    raw_max: [usize; 3],
    al_min: [i64; 2],
    al_max: [i64; 2],
    sum: [f64; 3],
}

impl Acc {
    fn new() -> Self {
        Self {
            count: 0,
            raw_min: [usize::MAX; 3],
            raw_max: [0; 3],
            al_min: [i64::MAX; 2],
            al_max: [i64::MIN; 2],
            sum: [0.0; 3],
        }
    }

    fn add(&mut self, raw: [usize; 3], q: (f64, f64), zc: f64) {
        self.count += 1;
        for a in 0..3 {
            self.raw_min[a] = self.raw_min[a].min(raw[a]);
            self.raw_max[a] = self.raw_max[a].max(raw[a]);
        }
        let al = [q.0.floor() as i64, q.1.floor() as i64];
        for a in 0..2 {
            self.al_min[a] = self.al_min[a].min(al[a]);
            self.al_max[a] = self.al_max[a].max(al[a]);
        }
        self.sum[0] += q.0;
        self.sum[1] += q.1;
        self.sum[2] += zc;
    }

    fn merge(&mut self, o: &Acc) {
        self.count += o.count;
        for a in 0..3 {
            self.raw_min[a] = self.raw_min[a].min(o.raw_min[a]);
            self.raw_max[a] = self.raw_max[a].max(o.raw_max[a]);
            self.sum[a] += o.sum[a];
        }
        for a in 0..2 {
            self.al_min[a] = self.al_min[a].min(o.al_min[a]);
            self.al_max[a] = self.al_max[a].max(o.al_max[a]);
        }
    }
}

/// Renders slices of a validated spec; every slice draws its noise from its
/// own seeded stream, so slices can be produced in any order.
#[derive(Debug, Clone)]
pub struct Renderer {
    spec: SceneSpec,
    scene: Scene,
    n_objects: usize,
}

impl Renderer {
    pub fn new(spec: &SceneSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            scene: Scene::new(spec),
            n_objects: spec.object_count(),
        })
    }

    /// Slice `z` (0-based) of the raw scan.
    pub fn slice(&self, z: usize) -> Image2D<u16> {
        self.render(z, false).0
    }

    fn render(&self, z: usize, track: bool) -> (Image2D<u16>, Vec<Option<Acc>>) {
        let spec = &self.spec;
        let [w, h, _] = spec.dims;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(z as u64);
        let layer = self.scene.layer(z);
        let zc = z as f64 + 0.5;
        let offset = spec.intensity_offset as f64;
        let ceiling = u16::MAX as f64 - offset;
        let classes = [
            (spec.air.mean, spec.class_sigma(spec.air)),
            (spec.divider.mean, spec.class_sigma(spec.divider)),
            (spec.object.mean, spec.class_sigma(spec.object)),
        ];
        let frame_center = (w as f64 / 2.0, h as f64 / 2.0);
        let mut accs: Vec<Option<Acc>> = vec![None; if track { self.n_objects } else { 0 }];
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                // raw pixel shows the aligned scene turned by the global rotation
                let q = rotate_point(
                    (x as f64 + 0.5, y as f64 + 0.5),
                    frame_center,
                    -spec.global_rotation_deg,
                );
                let material = self.scene.classify(layer, q, zc);
                let class = match material {
                    Material::Air => 0,
                    Material::Divider => 1,
                    Material::Object(i) => {
                        if track {
                            accs[i].get_or_insert_with(Acc::new).add([x, y, z], q, zc);
                        }
                        2
                    }
                };
                let (mean, sigma) = classes[class];
                let n: f64 = rng.sample(StandardNormal);
                let v = (mean + sigma * n).round().clamp(0.0, ceiling) + offset;
                data.push(v as u16);
            }
        }
        (Image2D::from_vec(w, h, data), accs)
    }

    /// Alignment that undoes the global rotation and crops to the package
    /// with a small margin.
    pub fn alignment(&self) -> AlignmentParams {
        let spec = &self.spec;
        let [w, h, _] = spec.dims;
        let c = spec.package_center;
        let reach = spec.divider_thickness + 4.0;
        let half = (spec.package_size.0 / 2.0, spec.package_size.1 / 2.0);
        let (mut rx, mut ry) = (0.0f64, 0.0f64);
        for t in &spec.tiers {
            for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                let p = rotate_point((c.0 + sx * half.0, c.1 + sy * half.1), c, t.twist_deg);
                rx = rx.max((p.0 - c.0).abs());
                ry = ry.max((p.1 - c.1).abs());
            }
        }
        let range = |center: f64, r: f64, limit: usize| {
            let lo = (center - r - reach).floor().max(0.0) as usize;
            let hi = ((center + r + reach).ceil() as usize).min(limit);
            (lo, hi)
        };
        AlignmentParams {
            angle_deg: -spec.global_rotation_deg,
            row_range: range(c.1, ry, h),
            col_range: range(c.0, rx, w),
        }
    }

    pub fn layout(&self) -> ScanLayout {
        let mut n = 0;
        let mut next_id = || {
            n += 1;
            format!("{}-{n:04}", self.spec.scan_id)
        };
        ScanLayout {
            scan_id: self.spec.scan_id.clone(),
            tiers: self
                .spec
                .tiers
                .iter()
                .enumerate()
                .map(|(i, t)| tier_layout(i + 1, t, &mut next_id))
                .collect(),
        }
    }

    fn thresholds(&self) -> ThresholdSet {
        let s = &self.spec;
        let off = s.intensity_offset as f64;
        ThresholdSet::from_divider_range(
            (s.air.mean + s.divider.mean) / 2.0 + off,
            (s.divider.mean + s.object.mean) / 2.0 + off,
        )
        .expect("ordered class means give ordered thresholds")
    }

    fn truth(&self, accs: &[Option<Acc>]) -> Result<GroundTruth, SynthError> {
        let spec = &self.spec;
        let layout = self.layout();
        let mut objects = Vec::with_capacity(self.n_objects);
        for (ti, tier) in layout.tiers.iter().enumerate() {
            let z_range = spec.tiers[ti].z_range;
            for (row, col, cell) in tier.cells() {
                let Some(id) = cell.identifier() else { continue };
                let idx = objects.len();
                let acc = accs[idx].ok_or_else(|| {
                    SynthError::SpecInvalid(format!("object {id} rendered no voxels"))
                })?;
                let n = acc.count as f64;
                let al_lo = |a: usize| acc.al_min[a].max(0) as usize;
                let al_hi = |a: usize| (acc.al_max[a] + 1).max(0) as usize;
                objects.push(ObjectTruth {
                    id: id.to_string(),
                    tier: ti + 1,
                    row,
                    col,
                    voxels: acc.count,
                    raw_extent: Box3::new(
                        (acc.raw_min[0], acc.raw_max[0] + 1),
                        (acc.raw_min[1], acc.raw_max[1] + 1),
                        (acc.raw_min[2], acc.raw_max[2] + 1),
                    ),
                    extent: Box3::new(
                        (al_lo(0), al_hi(0)),
                        (al_lo(1), al_hi(1)),
                        (acc.raw_min[2], acc.raw_max[2] + 1),
                    ),
                    centroid: [acc.sum[0] / n, acc.sum[1] / n, acc.sum[2] / n],
                    cell_polygon: self.scene.cell_polygon(ti, row - 1, col - 1),
                    z_range,
                });
            }
        }
        let off = spec.intensity_offset as f64;
        Ok(GroundTruth {
            scan_id: spec.scan_id.clone(),
            dims: spec.dims,
            voxel_pitch_um: spec.voxel_pitch_um,
            global_rotation_deg: spec.global_rotation_deg,
            alignment: self.alignment(),
            thresholds: self.thresholds(),
            intensity_offset: spec.intensity_offset,
            class_means: [spec.air.mean + off, spec.divider.mean + off, spec.object.mean + off],
            tiers: spec
                .tiers
                .iter()
                .enumerate()
                .map(|(i, t)| TierTruth {
                    tier_index: i + 1,
                    z_range: t.z_range,
                    twist_deg: t.twist_deg,
                    n_rows: t.n_rows,
                    n_cols: t.n_cols,
                    occupied: t.occupied.clone(),
                })
                .collect(),
            gap_centers: spec
                .tiers
                .windows(2)
                .map(|w| (w[0].z_range.1 + w[1].z_range.0) as f64 / 2.0)
                .collect(),
            objects,
            spec: spec.clone(),
        })
    }
}

/// Renders the scan into `out_dir`: `slices/slice_NNNNN.tif` plus
/// `slices/scan.json`, `layout.csv` and `truth.json`.
pub fn generate(spec: &SceneSpec, out_dir: &Path) -> Result<GroundTruth, SynthError> {
    let renderer = Renderer::new(spec)?;
    let slice_dir = out_dir.join(SLICE_DIR);
    fs::create_dir_all(&slice_dir).map_err(SynthError::io(&slice_dir))?;
    let depth = spec.dims[2];
    let width = depth.to_string().len().max(5);
    let accs = (0..depth)
        .into_par_iter()
        .map(|z| {
            let (img, accs) = renderer.render(z, true);
            let path = slice_dir.join(format!("slice_{:0width$}.tif", z + 1));
            write_slice(&path, &img)?;
            Ok(accs)
        })
        .try_reduce(
            || vec![None; renderer.n_objects],
            |mut a: Vec<Option<Acc>>, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    match (x.as_mut(), y) {
                        (Some(x), Some(y)) => x.merge(y),
                        (None, Some(y)) => *x = Some(*y),
                        _ => {}
                    }
                }
                Ok::<_, SynthError>(a)
            },
        )?;
    let truth = renderer.truth(&accs)?;
    let meta = ScanMetadata { voxel_pitch_um: Some(spec.voxel_pitch_um) };
    write_json(&slice_dir.join(ScanMetadata::FILE_NAME), &meta)?;
    let layout_path = out_dir.join(LAYOUT_FILE);
    fs::write(&layout_path, renderer.layout().to_csv()).map_err(SynthError::io(&layout_path))?;
    write_json(&out_dir.join(GroundTruth::FILE_NAME), &truth)?;
    tracing::info!(objects = truth.objects.len(), dir = %out_dir.display(), "synthetic scan written");
    Ok(truth)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text).map_err(SynthError::io(path))
}

/// Reads `truth.json` written by [`generate`].
pub fn load_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let text = fs::read_to_string(path).map_err(SynthError::io(path))?;
    serde_json::from_str(&text).map_err(|e| SynthError::Parse {
        path: PathBuf::from(path),
        reason: e.to_string(),
    })
}
