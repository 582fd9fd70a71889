use serde::{Deserialize, Serialize};

use super::truth::GroundTruth;
use super::SynthError;
use crate::segmentation::ObjectBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxScore {
    pub id: String,
    /// Ground-truth extent lies inside the padded box.
    pub contained: bool,
    /// Box center lies in the object's ground-truth cell.
    pub center_in_cell: bool,
    /// Box voxels over ground-truth extent voxels.
    pub volume_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub boxes: Vec<BoxScore>,
    /// Ground-truth objects without a box.
    pub missing: Vec<String>,
    /// Fraction of ground-truth objects whose box contains them.
    pub recall: f64,
}

impl ScoreReport {
    pub fn failures(&self) -> Vec<&BoxScore> {
        self.boxes.iter().filter(|b| !b.contained || !b.center_in_cell).collect()
    }
}

/// Checks boxes against the generator's ground truth.
pub fn score_boxes(truth: &GroundTruth, boxes: &[ObjectBox]) -> Result<ScoreReport, SynthError> {
    let mut scores = Vec::with_capacity(boxes.len());
    for b in boxes {
        let t = truth.object(&b.id)?;
        let bb = &b.bounds;
        let center = [
            (bb.x.0 + bb.x.1) as f64 / 2.0,
            (bb.y.0 + bb.y.1) as f64 / 2.0,
            (bb.z.0 + bb.z.1) as f64 / 2.0,
        ];
        scores.push(BoxScore {
            id: b.id.clone(),
            contained: bb.encloses(&t.extent),
            center_in_cell: t.cell_contains(center),
            volume_ratio: bb.voxels() as f64 / t.extent.voxels().max(1) as f64,
        });
    }
    let missing: Vec<String> = truth
        .objects
        .iter()
        .filter(|o| !boxes.iter().any(|b| b.id == o.id))
        .map(|o| o.id.clone())
        .collect();
    let found = truth
        .objects
        .iter()
        .filter(|o| scores.iter().any(|s| s.id == o.id && s.contained))
        .count();
    Ok(ScoreReport {
        boxes: scores,
        missing,
        recall: found as f64 / truth.objects.len().max(1) as f64,
    })
}
