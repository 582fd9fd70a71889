//! Isosurfaces of stored sub-volumes: marching cubes, component cleaning,
//! physical scaling and PLY output.

mod clean;
mod job;
mod mc;
mod mesh;
mod ply;
mod tables;

use std::path::PathBuf;

pub use clean::{clean_mesh, CleanReport};
pub use job::{
    isolevel_label, mesh_file_name, run_surface_jobs, run_surface_jobs_tracked, surface_subvolume, worker_count, SurfaceJob,
    SurfaceReport,
};
pub use mc::marching_cubes;
pub use mesh::Mesh;
pub use ply::{read_ply, write_ply};

#[derive(Debug, thiserror::Error)]
pub enum SurfError {
    #[error("no voxel crosses isolevel {0}")]
    EmptyMesh(f64),
    #[error("mesh has no faces to clean")]
    EmptyAfterClean,
    #[error("volume {0:?} is too small; every axis needs at least 2 samples")]
    TooSmall([usize; 3]),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Volume(#[from] crate::volume_io::VolumeError),
}
