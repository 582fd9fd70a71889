//! Human decisions persisted under `<out>/decisions/`.
//!
//! Both the config file and the session API write decisions through this
//! module, and the pipeline only ever reads them from here.

use std::fs;
use std::path::{Path, PathBuf};

use ctpack_core::segmentation::{GridOverride, ThresholdSet};
use ctpack_core::volume_io::AlignmentParams;
use serde::{Deserialize, Serialize};

use crate::SessionError;

/// Manual grid settings for one tier (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDecision {
    pub tier: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_cuts: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub col_cuts: Option<Vec<f64>>,
}

impl GridDecision {
    pub fn to_override(&self) -> GridOverride {
        GridOverride {
            rotation_deg: self.rotation_deg,
            row_cuts: self.row_cuts.clone(),
            col_cuts: self.col_cuts.clone(),
        }
    }

    fn is_empty(&self) -> bool {
        self.rotation_deg.is_none() && self.row_cuts.is_none() && self.col_cuts.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TierCuts {
    cuts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DecisionStore {
    dir: PathBuf,
}

impl DecisionStore {
    pub const DIR: &'static str = "decisions";
    const ALIGNMENT: &'static str = "alignment.txt";
    const THRESHOLDS: &'static str = "thresholds.json";
    const TIERS: &'static str = "tiers.json";
    const GRID: &'static str = "grid.json";

    pub fn open(out: &Path) -> Result<Self, SessionError> {
        let dir = out.join(Self::DIR);
        fs::create_dir_all(&dir).map_err(SessionError::io(&dir))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn alignment(&self) -> Result<Option<AlignmentParams>, SessionError> {
        self.read_text(Self::ALIGNMENT)?
            .map(|t| AlignmentParams::parse(&t).map_err(SessionError::from))
            .transpose()
    }

    pub fn set_alignment(&self, params: &AlignmentParams) -> Result<(), SessionError> {
        self.write(Self::ALIGNMENT, &params.to_text())
    }

    pub fn thresholds(&self) -> Result<Option<ThresholdSet>, SessionError> {
        let Some(t) = self.read_json::<ThresholdSet>(Self::THRESHOLDS)? else {
            return Ok(None);
        };
        t.validate()?;
        Ok(Some(t))
    }

    pub fn set_thresholds(&self, t: &ThresholdSet) -> Result<(), SessionError> {
        t.validate()?;
        self.write(Self::THRESHOLDS, &to_json(t))
    }

    pub fn tier_cuts(&self) -> Result<Option<Vec<usize>>, SessionError> {
        Ok(self.read_json::<TierCuts>(Self::TIERS)?.map(|t| t.cuts))
    }

    /// `None` removes the override.
    pub fn set_tier_cuts(&self, cuts: Option<&[usize]>) -> Result<(), SessionError> {
        match cuts {
            Some(c) => self.write(Self::TIERS, &to_json(&TierCuts { cuts: c.to_vec() })),
            None => self.remove(Self::TIERS),
        }
    }

    /// Overrides sorted by tier.
    pub fn grid(&self) -> Result<Vec<GridDecision>, SessionError> {
        Ok(self.read_json(Self::GRID)?.unwrap_or_default())
    }

    /// Replaces the override of `decision.tier`; an all-empty decision
    /// removes it.
    pub fn set_grid(&self, decision: &GridDecision) -> Result<(), SessionError> {
        if decision.tier == 0 {
            return Err(SessionError::Invalid("tier numbers start at 1".into()));
        }
        let mut all: Vec<GridDecision> =
            self.grid()?.into_iter().filter(|d| d.tier != decision.tier).collect();
        if !decision.is_empty() {
            all.push(decision.clone());
        }
        all.sort_by_key(|d| d.tier);
        if all.is_empty() {
            self.remove(Self::GRID)
        } else {
            self.write(Self::GRID, &to_json(&all))
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn read_text(&self, name: &str) -> Result<Option<String>, SessionError> {
        let p = self.path(name);
        match fs::read_to_string(&p) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(SessionError::io(&p)(e)),
        }
    }

    fn read_json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>, SessionError> {
        let Some(text) = self.read_text(name)? else {
            return Ok(None);
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| SessionError::Corrupt(format!("{}: {e}", self.path(name).display())))
    }

    fn write(&self, name: &str, text: &str) -> Result<(), SessionError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(SessionError::io(&p))
    }

    fn remove(&self, name: &str) -> Result<(), SessionError> {
        let p = self.path(name);
        match fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(SessionError::io(&p)(e)),
            _ => Ok(()),
        }
    }
}

/// Pretty JSON with a trailing newline; the one serializer for every file
/// the session writes.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}
