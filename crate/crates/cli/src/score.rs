//! Scoring a finished session against a generated scan's ground truth.

use std::path::Path;

use ctpack_core::surfacing::{mesh_file_name, read_ply};
use ctpack_core::synth::{score_boxes, GroundTruth, ScoreReport};
use serde::{Deserialize, Serialize};

use crate::session::{GridSidecar, Session, Step, SurfaceSidecar};
use crate::SessionError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshScore {
    pub id: String,
    /// Mesh written under the expected name and readable.
    pub file_ok: bool,
    pub watertight: bool,
    /// Centroid in aligned-frame voxel-edge coordinates.
    pub centroid: Option<[f64; 3]>,
    pub centroid_in_cell: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScore {
    pub boxes: ScoreReport,
    pub meshes: Vec<MeshScore>,
    /// Ground-truth objects without a mesh.
    pub missing_meshes: Vec<String>,
}

impl SessionScore {
    pub fn passed(&self) -> bool {
        self.boxes.recall == 1.0
            && self.boxes.failures().is_empty()
            && self.missing_meshes.is_empty()
            && self.meshes.iter().all(|m| m.file_ok && m.centroid_in_cell)
    }
}

/// Needs the grid step; meshes are scored once surfacing is done.
pub fn score_session(session: &Session, truth: &GroundTruth) -> Result<SessionScore, SessionError> {
    let grid: GridSidecar = session.sidecar(Step::Grid)?;
    let boxes = score_boxes(truth, &grid.boxes)?;
    let mut meshes = Vec::new();
    if session.status(Step::Surface) == crate::StepStatus::Done {
        let surf: SurfaceSidecar = session.sidecar(Step::Surface)?;
        let pitch = truth.voxel_pitch_um;
        for r in &surf.reports {
            let expected = mesh_file_name(&r.id, surf.isolevel);
            let path = session.out().join(&surf.dir).join(&expected);
            let file_ok = r.file.as_deref() == Some(expected.as_str()) && readable(&path);
            let centroid = r.centroid_mm.map(|c| c.map(|v| v * 1000.0 / pitch + 0.5));
            let centroid_in_cell = match centroid {
                Some(c) => truth.centroid_in_cell(&r.id, c)?,
                None => false,
            };
            meshes.push(MeshScore { id: r.id.clone(), file_ok, watertight: r.watertight, centroid, centroid_in_cell });
        }
    }
    let missing_meshes = truth
        .objects
        .iter()
        .filter(|o| !meshes.iter().any(|m| m.id == o.id && m.file_ok))
        .map(|o| o.id.clone())
        .collect();
    Ok(SessionScore { boxes, meshes, missing_meshes })
}

fn readable(path: &Path) -> bool {
    read_ply(path).map(|m| !m.is_empty()).unwrap_or(false)
}
