use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clean_mesh, marching_cubes, write_ply, SurfError};
use crate::volume_io::{MemoryTracker, SubvolumeStore, Volume3D};

/// One object to surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceJob {
    pub id: String,
    pub isolevel: f64,
    pub voxel_pitch_um: f64,
    /// Position of the sub-volume's first voxel in the full-resolution frame.
    pub origin: [usize; 3],
    pub out_dir: PathBuf,
}

/// Per-object outcome; also written as `<stem>.json` next to the mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub id: String,
    pub isolevel: f64,
    /// Mesh file name, absent when nothing crossed the isolevel.
    pub file: Option<String>,
    pub watertight: bool,
    pub vertices: usize,
    pub faces: usize,
    pub components: usize,
    pub bounds_mm: Option<[[f32; 3]; 2]>,
    /// Centroid of the enclosed solid in millimeters.
    pub centroid_mm: Option<[f64; 3]>,
    pub warning: Option<String>,
}

/// Integral levels print without a decimal point.
pub fn isolevel_label(level: f64) -> String {
    if level.is_finite() && level.fract() == 0.0 && level.abs() < 1e15 {
        format!("{}", level as i64)
    } else {
        format!("{level}")
    }
}

pub fn mesh_file_name(id: &str, level: f64) -> String {
    format!("{id}_iso{}.ply", isolevel_label(level))
}

/// Surfaces, cleans, scales to millimeters and writes one object.
pub fn surface_subvolume<T: Copy + Into<f64>>(
    vol: &Volume3D<T>,
    job: &SurfaceJob,
) -> Result<SurfaceReport, SurfError> {
    let name = mesh_file_name(&job.id, job.isolevel);
    let stem = name.trim_end_matches(".ply").to_string();
    let mut report = SurfaceReport {
        id: job.id.clone(),
        isolevel: job.isolevel,
        file: None,
        watertight: false,
        vertices: 0,
        faces: 0,
        components: 0,
        bounds_mm: None,
        centroid_mm: None,
        warning: None,
    };
    match marching_cubes(vol, job.isolevel) {
        Ok(raw) => {
            let (clean, rep) = clean_mesh(&raw)?;
            let scale = job.voxel_pitch_um / 1000.0;
            let origin = job.origin.map(|v| v as f64);
            let mm = clean.transformed(origin, scale);
            let path = job.out_dir.join(&name);
            write_ply(&path, &mm)?;
            let (lo, hi) = mm.bounds();
            report.file = Some(name);
            report.watertight = rep.watertight;
            report.vertices = mm.vertices.len();
            report.faces = mm.faces.len();
            report.components = rep.components;
            report.bounds_mm = Some([lo, hi]);
            let c = clean.centroid();
            report.centroid_mm = Some([0, 1, 2].map(|i| (c[i] + origin[i]) * scale));
            if !rep.watertight {
                report.warning = Some("no closed component; kept the largest open one".into());
            }
        }
        Err(SurfError::EmptyMesh(_)) => {
            report.warning = Some(format!("no voxel reaches isolevel {}", job.isolevel));
        }
        Err(e) => return Err(e),
    }
    write_report(&job.out_dir.join(format!("{stem}.json")), &report)?;
    Ok(report)
}

fn write_report(path: &Path, report: &SurfaceReport) -> Result<(), SurfError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, text).map_err(|source| SurfError::Io { path: path.to_path_buf(), source })
}

/// Workers such that `workers × largest sub-volume` stays within `budget`; at least one.
pub fn worker_count(requested: usize, budget: u64, largest_bytes: u64) -> usize {
    let fit = budget.checked_div(largest_bytes).unwrap_or(requested as u64);
    (requested as u64).min(fit).max(1) as usize
}

/// Surfaces every job from `store` on a bounded worker pool. Results come
/// back in job order; a sub-volume larger than the per-worker budget fails
/// with `VolumeError::ExceedsMemoryBudget`.
pub fn run_surface_jobs(
    store: &SubvolumeStore,
    jobs: &[SurfaceJob],
    budget: u64,
    workers: usize,
) -> Vec<Result<SurfaceReport, SurfError>> {
    run_surface_jobs_tracked(store, jobs, budget, workers, &MemoryTracker::new())
}

/// [`run_surface_jobs`] charging every loaded sub-volume to `tracker`.
pub fn run_surface_jobs_tracked(
    store: &SubvolumeStore,
    jobs: &[SurfaceJob],
    budget: u64,
    workers: usize,
    tracker: &MemoryTracker,
) -> Vec<Result<SurfaceReport, SurfError>> {
    let largest = jobs
        .iter()
        .filter_map(|j| store.header(&j.id).ok())
        .map(|h| h.bytes())
        .max()
        .unwrap_or(0);
    let n = worker_count(workers, budget, largest);
    let per_worker = budget / n as u64;
    let run = |job: &SurfaceJob| -> Result<SurfaceReport, SurfError> {
        let (header, vol) = store.load(&job.id, per_worker)?;
        let _charge = tracker.charge(header.bytes());
        surface_subvolume(&vol, job)
    };
    if n == 1 {
        return jobs.iter().map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(|| jobs.par_iter().map(run).collect()),
        Err(_) => jobs.iter().map(run).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surfacing::read_ply;
    use crate::volume_io::{Box3, SubvolumeTransform, VolumeError, ZChunk};

    #[test]
    fn naming_rule() {
        assert_eq!(mesh_file_name("CT4_B07", 21000.0), "CT4_B07_iso21000.ply");
        assert_eq!(mesh_file_name("A", 1500.5), "A_iso1500.5.ply");
        assert_eq!(isolevel_label(-3.0), "-3");
    }

    #[test]
    fn worker_pool_respects_budget() {
        assert_eq!(worker_count(8, 1000, 300), 3);
        assert_eq!(worker_count(2, 1000, 300), 2);
        assert_eq!(worker_count(4, 100, 300), 1);
    }

    fn cube_volume() -> Volume3D<u16> {
        Volume3D::from_fn([12, 10, 8], |x, y, z| {
            if (3..9).contains(&x) && (2..8).contains(&y) && (2..6).contains(&z) { 30000 } else { 2000 }
        })
    }

    #[test]
    fn job_writes_scaled_mesh_and_report() {
        let dir = tempfile::tempdir().unwrap();
        let job = SurfaceJob {
            id: "SYN-0001".into(),
            isolevel: 16000.0,
            voxel_pitch_um: 50.0,
            origin: [100, 0, 20],
            out_dir: dir.path().to_path_buf(),
        };
        let rep = surface_subvolume(&cube_volume(), &job).unwrap();
        assert_eq!(rep.file.as_deref(), Some("SYN-0001_iso16000.ply"));
        assert!(rep.watertight);
        let mesh = read_ply(&dir.path().join("SYN-0001_iso16000.ply")).unwrap();
        let (lo, hi) = mesh.bounds();
        // object voxels x 3..=8 sit between 2.5 and 8.5 after interpolation; +100, ×0.05 mm
        assert!((lo[0] - 5.125).abs() < 0.01 && (hi[0] - 5.425).abs() < 0.01, "{lo:?} {hi:?}");
        assert!((lo[2] - 1.075).abs() < 0.01 && (hi[2] - 1.275).abs() < 0.01, "{lo:?} {hi:?}");
        let json = fs::read_to_string(dir.path().join("SYN-0001_iso16000.json")).unwrap();
        let back: SurfaceReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn empty_mesh_is_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let job = SurfaceJob {
            id: "E".into(),
            isolevel: 60000.0,
            voxel_pitch_um: 10.0,
            origin: [0; 3],
            out_dir: dir.path().to_path_buf(),
        };
        let rep = surface_subvolume(&cube_volume(), &job).unwrap();
        assert!(rep.file.is_none() && rep.warning.is_some());
    }

    #[test]
    fn store_jobs_respect_budget() {
        let dir = tempfile::tempdir().unwrap();
        let store = SubvolumeStore::open(dir.path().join("sub")).unwrap();
        let vol = cube_volume();
        let b = Box3::new((0, 12), (0, 10), (0, 8));
        store.register("A", b, SubvolumeTransform { angle_deg: 0.0, voxel_pitch_um: None }).unwrap();
        store.append("A", &ZChunk { z_start: 0, nx: 12, ny: 10, data: vol.data.clone() }).unwrap();
        store.finalize("A").unwrap();
        let job = SurfaceJob {
            id: "A".into(),
            isolevel: 16000.0,
            voxel_pitch_um: 20.0,
            origin: [0; 3],
            out_dir: dir.path().to_path_buf(),
        };
        let ok = run_surface_jobs(&store, std::slice::from_ref(&job), 1 << 20, 2);
        assert!(ok[0].as_ref().unwrap().watertight);
        let refused = run_surface_jobs(&store, &[job], 100, 1);
        assert!(matches!(
            refused[0],
            Err(SurfError::Volume(VolumeError::ExceedsMemoryBudget { needed: 1920, budget: 100 }))
        ));
    }
}
