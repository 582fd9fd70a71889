//! Orchestration of the packed-scan pipeline: per-scan sessions that run
//! the steps in order, persist every decision and step output as JSON
//! under the output directory, and expose the same operations over HTTP.

pub mod config;
pub mod decisions;
pub mod score;
pub mod server;
pub mod session;

use std::path::PathBuf;

use ctpack_core::layout::LayoutError;
use ctpack_core::segmentation::SegError;
use ctpack_core::surfacing::SurfError;
use ctpack_core::synth::SynthError;
use ctpack_core::volume_io::VolumeError;

pub use config::Config;
pub use decisions::{DecisionStore, GridDecision};
pub use session::{Session, SessionReport, Settings, Step, StepStatus};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("the {0} step needs a decision; give it in the config file or through the session API")]
    MissingDecision(Step),
    #[error("the {step} step needs the {needs} step to be done first")]
    NotReady { step: Step, needs: Step },
    #[error("no session in {0}; start one with --scan-dir and --layout")]
    NotInitialized(PathBuf),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Invalid(String),
    #[error("corrupt session data: {0}")]
    Corrupt(String),
    #[error("another request is modifying this session")]
    Busy,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Surf(#[from] SurfError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{step} step: {source}")]
    InStep {
        step: Step,
        #[source]
        source: Box<SessionError>,
    },
}

impl SessionError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| SessionError::Io { path, source }
    }

    /// The error without step context.
    pub fn root(&self) -> &SessionError {
        match self {
            SessionError::InStep { source, .. } => source.root(),
            other => other,
        }
    }
}
