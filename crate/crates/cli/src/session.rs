//! Step state machine over one scan.
//!
//! Layout of the output directory:
//!
//! - `session.json`: settings and step states
//! - `decisions/`: alignment text file and JSON overrides
//! - `meta/<step>.json`: deterministic per-step sidecars
//! - `work/subsampled.bin`: the proxy volume
//! - `subvolumes/`, `meshes/`: extraction and surfacing outputs
//! - `report.json`: timings and memory of the last run

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use ctpack_core::layout::{parse_layout, ScanLayout};
use ctpack_core::segmentation::{
    boxes_to_fullres, detect_tier_boundaries, histogram, segment_tier, z_profile, GridOverride, Histogram,
    ObjectBox, ThresholdSet, TierDetection, TierGrid, Z_MIN_WIDTH,
};
use ctpack_core::surfacing::{run_surface_jobs_tracked, SurfaceJob, SurfaceReport};
use ctpack_core::volume_io::{
    extract_subvolumes, load_subsampled, save_subsampled, subsample_with, AlignmentParams, Charge, ExtractTarget,
    MemoryTracker, SliceStack, SubsampledVolume, SubvolumeHeader, SubvolumeStore,
};
use serde::{Deserialize, Serialize};

use crate::config::{Config, DEFAULT_MAX_MEMORY, DEFAULT_PAD};
use crate::decisions::{to_json, DecisionStore, GridDecision};
use crate::SessionError;

/// Bins of the threshold histogram.
pub const HISTOGRAM_BINS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Align,
    Subsample,
    Thresholds,
    Tiers,
    Grid,
    Extract,
    Surface,
}

impl Step {
    pub const ALL: [Step; 7] = [
        Step::Align,
        Step::Subsample,
        Step::Thresholds,
        Step::Tiers,
        Step::Grid,
        Step::Extract,
        Step::Surface,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Step::Align => "align",
            Step::Subsample => "subsample",
            Step::Thresholds => "thresholds",
            Step::Tiers => "tiers",
            Step::Grid => "grid",
            Step::Extract => "extract",
            Step::Surface => "surface",
        }
    }

    fn previous(self) -> Option<Step> {
        let i = Step::ALL.iter().position(|&s| s == self).unwrap();
        i.checked_sub(1).map(|j| Step::ALL[j])
    }

    /// Relative path of the step's sidecar.
    pub fn sidecar(self) -> String {
        format!("meta/{}.json", self.name())
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Step {
    type Err = SessionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Step::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| SessionError::Invalid(format!("unknown step {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Pending,
    /// A human decision is recorded but the step has not run since.
    Ratified,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepState {
    pub status: StepStatus,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Run-wide settings; changing one invalidates the steps it feeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub scan_dir: PathBuf,
    pub layout: PathBuf,
    pub max_memory: u64,
    /// Surfacing workers; `None` means one per CPU, capped by memory.
    pub workers: Option<usize>,
    pub resident_slices: usize,
    /// Surfacing isolevel; `None` means the object threshold.
    pub isolevel: Option<f64>,
    pub pad: usize,
}

impl Settings {
    pub fn new(scan_dir: impl Into<PathBuf>, layout: impl Into<PathBuf>) -> Self {
        Self {
            scan_dir: scan_dir.into(),
            layout: layout.into(),
            max_memory: DEFAULT_MAX_MEMORY,
            workers: None,
            resident_slices: ctpack_core::volume_io::DEFAULT_RESIDENT_SLICES,
            isolevel: None,
            pad: DEFAULT_PAD,
        }
    }

    /// Settings taken from a config, which must name the scan and layout.
    pub fn from_config(cfg: &Config) -> Result<Self, SessionError> {
        let (Some(scan), Some(layout)) = (&cfg.scan_dir, &cfg.layout) else {
            return Err(SessionError::Config("scan_dir and layout are required".into()));
        };
        Ok(Self {
            scan_dir: scan.clone(),
            layout: layout.clone(),
            max_memory: cfg.max_memory,
            workers: cfg.workers,
            resident_slices: cfg.resident_slices,
            isolevel: cfg.isolevel,
            pad: cfg.pad,
        })
    }

    /// First step whose output depends on a setting that differs.
    fn first_affected(&self, other: &Settings) -> Option<Step> {
        if self.scan_dir != other.scan_dir || self.layout != other.layout {
            Some(Step::Align)
        } else if self.resident_slices != other.resident_slices {
            // outputs do not change, only the memory profile
            None
        } else if self.pad != other.pad {
            Some(Step::Grid)
        } else if self.isolevel != other.isolevel {
            Some(Step::Surface)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub settings: Settings,
    pub steps: BTreeMap<Step, StepState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRun {
    pub step: Step,
    pub seconds: f64,
    /// Peak tracked bytes while the step ran.
    pub peak_bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub steps: Vec<StepRun>,
    pub objects: usize,
    pub meshes: Vec<String>,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
    pub peak_tracked_bytes: u64,
}

// ---- sidecars -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignSidecar {
    pub alignment: AlignmentParams,
    pub scan_dims: [usize; 3],
    pub voxel_pitch_um: Option<f64>,
    pub cropped_dims: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleSidecar {
    pub file: String,
    pub dims: [usize; 3],
    pub xy_scale: (f64, f64),
    pub z_factor: usize,
    pub source_depth: usize,
    pub alignment: AlignmentParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsSidecar {
    pub thresholds: ThresholdSet,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiersSidecar {
    pub n_tiers: usize,
    pub min_width: f64,
    pub profile: Vec<f64>,
    pub detection: TierDetection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub pad: usize,
    pub tiers: Vec<TierGrid>,
    pub boxes: Vec<ObjectBox>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractSidecar {
    pub dir: String,
    pub subvolumes: Vec<SubvolumeHeader>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSidecar {
    pub isolevel: f64,
    pub dir: String,
    pub workers: usize,
    pub reports: Vec<SurfaceReport>,
    pub failures: Vec<SurfaceFailure>,
}

const SESSION_FILE: &str = "session.json";
const REPORT_FILE: &str = "report.json";
const SUBSAMPLED_FILE: &str = "work/subsampled.bin";
const SUBVOLUME_DIR: &str = "subvolumes";
const MESH_DIR: &str = "meshes";

/// One scan's pipeline state, rooted at an output directory.
pub struct Session {
    out: PathBuf,
    state: SessionState,
    decisions: DecisionStore,
    layout: ScanLayout,
    tracker: MemoryTracker,
    proxy: Option<(Arc<SubsampledVolume>, Charge)>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session").field("out", &self.out).field("state", &self.state).finish()
    }
}

impl Session {
    /// Opens the session in `out`. With `settings`, starts or updates it
    /// (invalidating whatever the changed settings feed); without, the
    /// stored settings are used.
    pub fn open(out: &Path, settings: Option<Settings>) -> Result<Self, SessionError> {
        Self::open_tracked(out, settings, MemoryTracker::new())
    }

    pub fn open_tracked(
        out: &Path,
        settings: Option<Settings>,
        tracker: MemoryTracker,
    ) -> Result<Self, SessionError> {
        fs::create_dir_all(out).map_err(SessionError::io(out))?;
        let out = out.to_path_buf();
        let state_path = out.join(SESSION_FILE);
        let stored: Option<SessionState> = match fs::read_to_string(&state_path) {
            Ok(text) => Some(
                serde_json::from_str(&text)
                    .map_err(|e| SessionError::Corrupt(format!("{}: {e}", state_path.display())))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(SessionError::io(&state_path)(e)),
        };
        let (state, affected) = match (stored, settings) {
            (None, None) => return Err(SessionError::NotInitialized(out)),
            (Some(s), None) => (s, None),
            (Some(mut s), Some(new)) => {
                let affected = s.settings.first_affected(&new);
                s.settings = new;
                (s, affected)
            }
            (None, Some(new)) => {
                let steps = Step::ALL
                    .into_iter()
                    .map(|st| (st, StepState { status: StepStatus::Pending, artifacts: Vec::new() }))
                    .collect();
                (SessionState { settings: new, steps }, Some(Step::Align))
            }
        };
        let layout_path = &state.settings.layout;
        let text = fs::read_to_string(layout_path).map_err(SessionError::io(layout_path))?;
        let layout = parse_layout(&text)?;
        let decisions = DecisionStore::open(&out)?;
        let mut session = Self { out, state, decisions, layout, tracker, proxy: None };
        if let Some(step) = affected {
            session.invalidate_from(step)?;
        }
        session.save_state()?;
        Ok(session)
    }

    /// Settings recorded in `out`, if a session exists there.
    pub fn stored_settings(out: &Path) -> Result<Option<Settings>, SessionError> {
        let p = out.join(SESSION_FILE);
        match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str::<SessionState>(&text)
                .map(|s| Some(s.settings))
                .map_err(|e| SessionError::Corrupt(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(SessionError::io(&p)(e)),
        }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn settings(&self) -> &Settings {
        &self.state.settings
    }

    pub fn layout(&self) -> &ScanLayout {
        &self.layout
    }

    pub fn decisions(&self) -> &DecisionStore {
        &self.decisions
    }

    pub fn tracker(&self) -> &MemoryTracker {
        &self.tracker
    }

    pub fn status(&self, step: Step) -> StepStatus {
        self.state.steps[&step].status
    }

    fn save_state(&self) -> Result<(), SessionError> {
        let p = self.out.join(SESSION_FILE);
        fs::write(&p, to_json(&self.state)).map_err(SessionError::io(&p))
    }

    fn has_decision(&self, step: Step) -> Result<bool, SessionError> {
        Ok(match step {
            Step::Align => self.decisions.alignment()?.is_some(),
            Step::Thresholds => self.decisions.thresholds()?.is_some(),
            Step::Tiers => self.decisions.tier_cuts()?.is_some(),
            Step::Grid => !self.decisions.grid()?.is_empty(),
            _ => false,
        })
    }

    /// Resets `step` and everything after it, deleting their outputs.
    fn invalidate_from(&mut self, step: Step) -> Result<(), SessionError> {
        for s in Step::ALL.into_iter().filter(|&s| s >= step) {
            let status = if self.has_decision(s)? { StepStatus::Ratified } else { StepStatus::Pending };
            let entry = self.state.steps.get_mut(&s).expect("every step has a state");
            for a in entry.artifacts.drain(..) {
                remove_path(&self.out.join(a))?;
            }
            entry.status = status;
            if s == Step::Subsample {
                self.proxy = None;
            }
        }
        self.save_state()
    }

    // ---- decisions --------------------------------------------------------

    /// Records every decision the config carries. Unchanged decisions keep
    /// downstream results.
    pub fn apply_config(&mut self, cfg: &Config) -> Result<(), SessionError> {
        if let Some(a) = &cfg.alignment {
            self.set_alignment(a)?;
        }
        if let Some(t) = &cfg.thresholds {
            self.set_thresholds(t)?;
        }
        if let Some(c) = &cfg.tier_cuts {
            self.set_tier_cuts(Some(c.clone()))?;
        }
        for g in &cfg.grid {
            self.set_grid(g)?;
        }
        Ok(())
    }

    pub fn set_alignment(&mut self, params: &AlignmentParams) -> Result<(), SessionError> {
        let stack = self.open_stack()?;
        params.validate(stack.width, stack.height)?;
        if self.decisions.alignment()?.as_ref() == Some(params) {
            return Ok(());
        }
        self.decisions.set_alignment(params)?;
        self.invalidate_from(Step::Align)
    }

    pub fn set_thresholds(&mut self, t: &ThresholdSet) -> Result<(), SessionError> {
        t.validate()?;
        if self.decisions.thresholds()?.as_ref() == Some(t) {
            return Ok(());
        }
        self.decisions.set_thresholds(t)?;
        self.invalidate_from(Step::Thresholds)
    }

    pub fn set_tier_cuts(&mut self, cuts: Option<Vec<usize>>) -> Result<(), SessionError> {
        if let Some(c) = &cuts {
            if c.len() + 1 != self.layout.tiers.len() {
                return Err(SessionError::Invalid(format!(
                    "expected {} cuts, have {}",
                    self.layout.tiers.len() - 1,
                    c.len()
                )));
            }
            if c.windows(2).any(|w| w[0] >= w[1]) || c.first() == Some(&0) {
                return Err(SessionError::Invalid(format!("cuts {c:?} must increase from above 0")));
            }
        }
        if self.decisions.tier_cuts()? == cuts {
            return Ok(());
        }
        self.decisions.set_tier_cuts(cuts.as_deref())?;
        self.invalidate_from(Step::Tiers)
    }

    pub fn set_grid(&mut self, g: &GridDecision) -> Result<(), SessionError> {
        let tier = self.layout.tiers.get(g.tier.wrapping_sub(1)).ok_or_else(|| {
            SessionError::Invalid(format!("tier {} is not in the layout", g.tier))
        })?;
        for (cuts, n, what) in [(&g.row_cuts, tier.n_rows(), "row"), (&g.col_cuts, tier.n_cols(), "column")] {
            if let Some(c) = cuts {
                if c.len() != n + 1 {
                    return Err(SessionError::Invalid(format!(
                        "tier {}: expected {} {what} cuts, have {}",
                        g.tier,
                        n + 1,
                        c.len()
                    )));
                }
            }
        }
        if let Some(a) = g.rotation_deg {
            if !a.is_finite() {
                return Err(SessionError::Invalid("rotation must be finite".into()));
            }
        }
        let current = self.decisions.grid()?;
        let before = current.iter().find(|d| d.tier == g.tier);
        let empty = g.rotation_deg.is_none() && g.row_cuts.is_none() && g.col_cuts.is_none();
        if before == Some(g) || (before.is_none() && empty) {
            return Ok(());
        }
        self.decisions.set_grid(g)?;
        self.invalidate_from(Step::Grid)
    }

    // ---- running ----------------------------------------------------------

    /// Runs every step up to `through` that is not done yet.
    pub fn run(&mut self, through: Step) -> Result<SessionReport, SessionError> {
        let mut report = SessionReport::default();
        for step in Step::ALL.into_iter().filter(|&s| s <= through) {
            if self.status(step) == StepStatus::Done {
                continue;
            }
            self.tracker.reset_peak();
            let t0 = Instant::now();
            let artifacts = self
                .execute(step, &mut report)
                .map_err(|e| SessionError::InStep { step, source: Box::new(e) })?;
            report.steps.push(StepRun {
                step,
                seconds: t0.elapsed().as_secs_f64(),
                peak_bytes: self.tracker.peak(),
            });
            let entry = self.state.steps.get_mut(&step).expect("every step has a state");
            entry.status = StepStatus::Done;
            entry.artifacts = artifacts;
            self.save_state()?;
            tracing::info!(%step, seconds = t0.elapsed().as_secs_f64(), "step done");
        }
        report.peak_tracked_bytes = report.steps.iter().map(|s| s.peak_bytes).max().unwrap_or(0);
        let p = self.out.join(REPORT_FILE);
        fs::write(&p, to_json(&report)).map_err(SessionError::io(&p))?;
        Ok(report)
    }

    /// Re-runs `step` (and whatever it needs) even if done, invalidating
    /// everything after it.
    pub fn rerun(&mut self, step: Step) -> Result<SessionReport, SessionError> {
        self.invalidate_from(step)?;
        self.run(step)
    }

    fn execute(&mut self, step: Step, report: &mut SessionReport) -> Result<Vec<String>, SessionError> {
        if let Some(prev) = step.previous() {
            if self.status(prev) != StepStatus::Done {
                return Err(SessionError::NotReady { step, needs: prev });
            }
        }
        let mut artifacts = vec![step.sidecar()];
        let sidecar = match step {
            Step::Align => to_json(&self.step_align()?),
            Step::Subsample => {
                artifacts.push(SUBSAMPLED_FILE.into());
                to_json(&self.step_subsample()?)
            }
            Step::Thresholds => to_json(&self.step_thresholds()?),
            Step::Tiers => to_json(&self.step_tiers()?),
            Step::Grid => {
                let g = self.step_grid()?;
                report.objects = g.boxes.len();
                report.warnings.extend(g.warnings.iter().cloned());
                to_json(&g)
            }
            Step::Extract => {
                artifacts.push(SUBVOLUME_DIR.into());
                to_json(&self.step_extract()?)
            }
            Step::Surface => {
                artifacts.push(MESH_DIR.into());
                let s = self.step_surface()?;
                report.meshes = s.reports.iter().filter_map(|r| r.file.clone()).collect();
                report.failures.extend(s.failures.iter().map(|f| format!("{}: {}", f.id, f.error)));
                report
                    .warnings
                    .extend(s.reports.iter().filter_map(|r| r.warning.as_ref().map(|w| format!("{}: {w}", r.id))));
                to_json(&s)
            }
        };
        let p = self.out.join(step.sidecar());
        fs::create_dir_all(p.parent().unwrap()).map_err(SessionError::io(&p))?;
        fs::write(&p, sidecar).map_err(SessionError::io(&p))?;
        Ok(artifacts)
    }

    pub fn open_stack(&self) -> Result<SliceStack, SessionError> {
        Ok(SliceStack::open_with(
            &self.state.settings.scan_dir,
            self.state.settings.resident_slices,
            self.tracker.clone(),
        )?)
    }

    /// Reads a step's sidecar; the step must be done.
    pub fn sidecar<T: serde::de::DeserializeOwned>(&self, step: Step) -> Result<T, SessionError> {
        if self.status(step) != StepStatus::Done {
            return Err(SessionError::NotReady { step, needs: step });
        }
        let p = self.out.join(step.sidecar());
        let text = fs::read_to_string(&p).map_err(SessionError::io(&p))?;
        serde_json::from_str(&text).map_err(|e| SessionError::Corrupt(format!("{}: {e}", p.display())))
    }

    fn step_align(&mut self) -> Result<AlignSidecar, SessionError> {
        let alignment = self.decisions.alignment()?.ok_or(SessionError::MissingDecision(Step::Align))?;
        let stack = self.open_stack()?;
        alignment.validate(stack.width, stack.height)?;
        Ok(AlignSidecar {
            alignment,
            scan_dims: [stack.width, stack.height, stack.depth()],
            voxel_pitch_um: stack.voxel_pitch_um,
            cropped_dims: alignment.cropped_dims(),
        })
    }

    fn step_subsample(&mut self) -> Result<SubsampleSidecar, SessionError> {
        let align: AlignSidecar = self.sidecar(Step::Align)?;
        let stack = self.open_stack()?;
        let sub = subsample_with(&stack, &align.alignment, |k, h| {
            if k % 100 == 0 || k == h {
                tracing::debug!(k, h, "subsampling");
            }
        })?;
        let p = self.out.join(SUBSAMPLED_FILE);
        fs::create_dir_all(p.parent().unwrap()).map_err(SessionError::io(&p))?;
        save_subsampled(&p, &sub)?;
        let side = SubsampleSidecar {
            file: SUBSAMPLED_FILE.into(),
            dims: sub.dims(),
            xy_scale: sub.xy_scale,
            z_factor: sub.z_factor,
            source_depth: sub.source_depth,
            alignment: sub.alignment,
        };
        self.hold_proxy(sub);
        Ok(side)
    }

    fn hold_proxy(&mut self, sub: SubsampledVolume) {
        let charge = self.tracker.charge((sub.volume.len() * 8) as u64);
        self.proxy = Some((Arc::new(sub), charge));
    }

    /// The proxy volume; needs the subsample step.
    pub fn proxy(&mut self) -> Result<Arc<SubsampledVolume>, SessionError> {
        if self.status(Step::Subsample) != StepStatus::Done {
            return Err(SessionError::NotReady { step: Step::Thresholds, needs: Step::Subsample });
        }
        if self.proxy.is_none() {
            let sub = load_subsampled(&self.out.join(SUBSAMPLED_FILE))?;
            self.hold_proxy(sub);
        }
        Ok(Arc::clone(&self.proxy.as_ref().unwrap().0))
    }

    /// Drops the cached proxy volume.
    pub fn release_proxy(&mut self) {
        self.proxy = None;
    }

    pub fn histogram(&mut self, bins: usize) -> Result<Histogram, SessionError> {
        if bins == 0 {
            return Err(SessionError::Invalid("bins must be positive".into()));
        }
        Ok(histogram(&self.proxy()?.volume.data, bins))
    }

    fn step_thresholds(&mut self) -> Result<ThresholdsSidecar, SessionError> {
        let thresholds =
            self.decisions.thresholds()?.ok_or(SessionError::MissingDecision(Step::Thresholds))?;
        Ok(ThresholdsSidecar { thresholds, histogram: self.histogram(HISTOGRAM_BINS)? })
    }

    /// z-profile and tier detection with the current override; the same
    /// computation the tiers step records.
    pub fn tier_view(&mut self) -> Result<TiersSidecar, SessionError> {
        let sub = self.proxy()?;
        let profile = z_profile(&sub.volume);
        let n_tiers = self.layout.tiers.len();
        let cuts = self.decisions.tier_cuts()?;
        let detection = detect_tier_boundaries(&profile, n_tiers, Z_MIN_WIDTH, cuts.as_deref())?;
        Ok(TiersSidecar { n_tiers, min_width: Z_MIN_WIDTH, profile, detection })
    }

    fn step_tiers(&mut self) -> Result<TiersSidecar, SessionError> {
        self.tier_view()
    }

    /// Grid segmentation of one tier (1-based) with its current override.
    pub fn grid_view(&mut self, tier: usize) -> Result<TierGrid, SessionError> {
        let tiers: TiersSidecar = self.sidecar(Step::Tiers)?;
        let th: ThresholdsSidecar = self.sidecar(Step::Thresholds)?;
        let slab = *tiers
            .detection
            .slabs
            .get(tier.wrapping_sub(1))
            .ok_or_else(|| SessionError::Invalid(format!("tier {tier} is not in the layout")))?;
        let ov = self.grid_override(tier)?;
        let sub = self.proxy()?;
        Ok(segment_tier(&sub.volume, slab, &self.layout.tiers[tier - 1], &th.thresholds, &ov)?)
    }

    fn grid_override(&self, tier: usize) -> Result<GridOverride, SessionError> {
        Ok(self
            .decisions
            .grid()?
            .iter()
            .find(|d| d.tier == tier)
            .map(GridDecision::to_override)
            .unwrap_or_default())
    }

    fn step_grid(&mut self) -> Result<GridSidecar, SessionError> {
        let align: AlignSidecar = self.sidecar(Step::Align)?;
        let tiers: TiersSidecar = self.sidecar(Step::Tiers)?;
        let pad = self.state.settings.pad;
        let mut grids = Vec::new();
        let mut boxes = Vec::new();
        let mut warnings = Vec::new();
        for t in 1..=self.layout.tiers.len() {
            let g = self.grid_view(t)?;
            let sub = self.proxy()?;
            let [pw, ph, _] = sub.dims();
            boxes.extend(boxes_to_fullres(
                &g.cuts,
                tiers.detection.slabs[t - 1],
                &self.layout.tiers[t - 1],
                (pw, ph),
                &align.alignment,
                sub.xy_scale,
                sub.z_factor,
                pad,
                align.scan_dims,
            )?);
            warnings.extend(g.warnings.iter().cloned());
            grids.push(g);
        }
        Ok(GridSidecar { pad, tiers: grids, boxes, warnings })
    }

    fn step_extract(&mut self) -> Result<ExtractSidecar, SessionError> {
        // the proxy is not needed past this point
        self.release_proxy();
        let align: AlignSidecar = self.sidecar(Step::Align)?;
        let grid: GridSidecar = self.sidecar(Step::Grid)?;
        let dir = self.out.join(SUBVOLUME_DIR);
        remove_path(&dir)?;
        let store = SubvolumeStore::open(&dir)?;
        let stack = self.open_stack()?;
        let targets: Vec<ExtractTarget> =
            grid.boxes.iter().map(|b| ExtractTarget { id: b.id.clone(), bbox: b.bounds }).collect();
        let subvolumes = extract_subvolumes(&stack, align.alignment.angle_deg, &targets, &store, |_, _| {})?;
        Ok(ExtractSidecar { dir: SUBVOLUME_DIR.into(), subvolumes })
    }

    fn step_surface(&mut self) -> Result<SurfaceSidecar, SessionError> {
        let ext: ExtractSidecar = self.sidecar(Step::Extract)?;
        let th: ThresholdsSidecar = self.sidecar(Step::Thresholds)?;
        let isolevel = self.state.settings.isolevel.unwrap_or(th.thresholds.a_object);
        let dir = self.out.join(MESH_DIR);
        remove_path(&dir)?;
        fs::create_dir_all(&dir).map_err(SessionError::io(&dir))?;
        let store = SubvolumeStore::open(self.out.join(&ext.dir))?;
        let jobs: Vec<SurfaceJob> = ext
            .subvolumes
            .iter()
            .map(|h| SurfaceJob {
                id: h.id.clone(),
                isolevel,
                // without a pitch, meshes stay in voxel units
                voxel_pitch_um: h.transform.voxel_pitch_um.unwrap_or(1000.0),
                origin: [h.bbox.x.0, h.bbox.y.0, h.bbox.z.0],
                out_dir: dir.clone(),
            })
            .collect();
        let requested = self
            .state
            .settings
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        let largest = ext.subvolumes.iter().map(|h| h.bytes()).max().unwrap_or(0);
        let workers = ctpack_core::surfacing::worker_count(requested, self.state.settings.max_memory, largest);
        let results =
            run_surface_jobs_tracked(&store, &jobs, self.state.settings.max_memory, workers, &self.tracker);
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for (job, r) in jobs.iter().zip(results) {
            match r {
                Ok(rep) => reports.push(rep),
                Err(e) => failures.push(SurfaceFailure { id: job.id.clone(), error: e.to_string() }),
            }
        }
        Ok(SurfaceSidecar { isolevel, dir: MESH_DIR.into(), workers, reports, failures })
    }
}

fn remove_path(p: &Path) -> Result<(), SessionError> {
    let r = if p.is_dir() { fs::remove_dir_all(p) } else { fs::remove_file(p) };
    match r {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(SessionError::io(p)(e)),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_parse_and_order() {
        for s in Step::ALL {
            assert_eq!(s.name().parse::<Step>().unwrap(), s);
        }
        assert!("nope".parse::<Step>().is_err());
        assert!(Step::Align < Step::Surface);
        assert_eq!(Step::Align.previous(), None);
        assert_eq!(Step::Grid.previous(), Some(Step::Tiers));
        assert_eq!(Step::Tiers.sidecar(), "meta/tiers.json");
    }

    #[test]
    fn setting_changes_map_to_steps() {
        let a = Settings::new("s", "l.csv");
        let mut b = a.clone();
        assert_eq!(a.first_affected(&b), None);
        b.pad = 5;
        assert_eq!(a.first_affected(&b), Some(Step::Grid));
        b.isolevel = Some(1.0);
        assert_eq!(a.first_affected(&b), Some(Step::Grid));
        let mut c = a.clone();
        c.isolevel = Some(1.0);
        assert_eq!(a.first_affected(&c), Some(Step::Surface));
        c.layout = "other.csv".into();
        assert_eq!(a.first_affected(&c), Some(Step::Align));
        let mut d = a.clone();
        d.max_memory = 1;
        d.workers = Some(3);
        assert_eq!(a.first_affected(&d), None);
    }
}
