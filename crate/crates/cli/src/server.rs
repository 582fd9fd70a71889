//! HTTP API over one session.
//!
//! Every mutating request goes through the same [`Session`] setters the
//! config file uses, so decisions made here land in `<out>/decisions/` in
//! the same form. Mutations never queue: a request arriving while another
//! holds the session gets `409 Conflict`.

use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use ctpack_core::layout::ScanLayout;
use ctpack_core::segmentation::{divider_image, ThresholdSet, TierGrid};
use ctpack_core::volume_io::{resize_area, rotate_crop, rotate_image, AlignmentParams, Image2D};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedMutexGuard};

use crate::config::ThresholdConfig;
use crate::decisions::GridDecision;
use crate::session::{Session, SessionState, Step, ThresholdsSidecar, TiersSidecar, HISTOGRAM_BINS};
use crate::SessionError;

/// Longest side of a slice preview.
pub const PREVIEW_MAX: usize = 1024;

#[derive(Clone)]
pub struct AppState {
    session: Arc<Mutex<Session>>,
}

pub fn router(session: Session) -> Router {
    let state = AppState { session: Arc::new(Mutex::new(session)) };
    Router::new()
        .route("/api/session", get(get_session))
        .route("/api/histogram", get(get_histogram))
        .route("/api/slice", get(get_slice))
        .route("/api/z-profile", get(get_z_profile))
        .route("/api/divider", get(get_divider))
        .route("/api/alignment", post(post_alignment))
        .route("/api/thresholds", post(post_thresholds))
        .route("/api/tiers", post(post_tiers))
        .route("/api/grid", post(post_grid))
        .route("/api/run", post(post_run))
        .with_state(state)
}

pub async fn serve(session: Session, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self.0.root() {
            SessionError::Busy | SessionError::MissingDecision(_) | SessionError::NotReady { .. } => {
                StatusCode::CONFLICT
            }
            SessionError::Io { .. } | SessionError::Corrupt(_) | SessionError::NotInitialized(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status();
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` on a blocking thread with the session held. Mutations fail
/// fast when the session is taken; reads wait their turn.
async fn with_session<T, F>(state: &AppState, mutating: bool, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Session) -> Result<T, SessionError> + Send + 'static,
{
    let guard: OwnedMutexGuard<Session> = if mutating {
        Arc::clone(&state.session).try_lock_owned().map_err(|_| ApiError(SessionError::Busy))?
    } else {
        Arc::clone(&state.session).lock_owned().await
    };
    let mut guard = guard;
    let out = tokio::task::spawn_blocking(move || f(&mut guard))
        .await
        .map_err(|e| ApiError(SessionError::Invalid(format!("request aborted: {e}"))))?;
    out.map(Json).map_err(ApiError)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub state: SessionState,
    pub layout: ScanLayout,
    pub alignment: Option<AlignmentParams>,
    pub thresholds: Option<ThresholdSet>,
    pub tier_cuts: Option<Vec<usize>>,
    pub grid: Vec<GridDecision>,
}

fn view(s: &Session) -> Result<SessionView, SessionError> {
    let d = s.decisions();
    Ok(SessionView {
        state: s.state().clone(),
        layout: s.layout().clone(),
        alignment: d.alignment()?,
        thresholds: d.thresholds()?,
        tier_cuts: d.tier_cuts()?,
        grid: d.grid()?,
    })
}

async fn get_session(State(st): State<AppState>) -> ApiResult<SessionView> {
    with_session(&st, false, |s| view(s)).await
}

#[derive(Debug, Deserialize)]
struct BinsQuery {
    bins: Option<usize>,
}

async fn get_histogram(
    State(st): State<AppState>,
    Query(q): Query<BinsQuery>,
) -> ApiResult<ctpack_core::segmentation::Histogram> {
    let bins = q.bins.unwrap_or(HISTOGRAM_BINS);
    with_session(&st, false, move |s| s.histogram(bins)).await
}

/// `z` is 1-based. Giving all of `angle`, `row0`, `row1`, `col0`, `col1`
/// previews a trial alignment; otherwise the recorded one (or none) is used.
#[derive(Debug, Deserialize)]
struct SliceQuery {
    z: usize,
    angle: Option<f64>,
    row0: Option<usize>,
    row1: Option<usize>,
    col0: Option<usize>,
    col1: Option<usize>,
    max: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageView {
    pub width: usize,
    pub height: usize,
    /// Full-resolution pixels per preview pixel.
    pub scale: f64,
    pub png_base64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceView {
    pub z: usize,
    pub alignment: AlignmentParams,
    pub image: ImageView,
}

async fn get_slice(State(st): State<AppState>, Query(q): Query<SliceQuery>) -> ApiResult<SliceView> {
    with_session(&st, false, move |s| {
        let stack = s.open_stack()?;
        if q.z == 0 || q.z > stack.depth() {
            return Err(SessionError::Invalid(format!("z must be in 1..={}", stack.depth())));
        }
        let alignment = match (q.angle, q.row0, q.row1, q.col0, q.col1) {
            (Some(angle_deg), Some(r0), Some(r1), Some(c0), Some(c1)) => {
                AlignmentParams { angle_deg, row_range: (r0, r1), col_range: (c0, c1) }
            }
            (None, None, None, None, None) => s
                .decisions()
                .alignment()?
                .unwrap_or_else(|| AlignmentParams::identity(stack.width, stack.height)),
            _ => return Err(SessionError::Invalid("give all of angle, row0, row1, col0, col1 or none".into())),
        };
        let slice = stack.read_slice(q.z)?;
        let img = rotate_crop(slice.image(), &alignment)?;
        drop(slice);
        let image = encode_preview(&img, q.max.unwrap_or(PREVIEW_MAX).clamp(16, PREVIEW_MAX))?;
        Ok(SliceView { z: q.z, alignment, image })
    })
    .await
}

async fn get_z_profile(State(st): State<AppState>) -> ApiResult<TiersSidecar> {
    with_session(&st, false, |s| s.tier_view()).await
}

#[derive(Debug, Deserialize)]
struct TierQuery {
    tier: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DividerView {
    pub grid: TierGrid,
    /// The divider mask `B` rotated by the grid angle.
    pub mask: ImageView,
}

async fn get_divider(State(st): State<AppState>, Query(q): Query<TierQuery>) -> ApiResult<DividerView> {
    with_session(&st, false, move |s| {
        let grid = s.grid_view(q.tier)?;
        let th: ThresholdsSidecar = s.sidecar(Step::Thresholds)?;
        let sub = s.proxy()?;
        let div = divider_image(&sub.volume, grid.slab, &th.thresholds)?;
        let rotated = rotate_image(&div.b, grid.cuts.rotation_deg);
        Ok(DividerView { mask: encode_preview(&rotated, PREVIEW_MAX)?, grid })
    })
    .await
}

async fn post_alignment(State(st): State<AppState>, Json(p): Json<AlignmentParams>) -> ApiResult<SessionView> {
    with_session(&st, true, move |s| {
        s.set_alignment(&p)?;
        view(s)
    })
    .await
}

async fn post_thresholds(State(st): State<AppState>, Json(t): Json<ThresholdConfig>) -> ApiResult<SessionView> {
    with_session(&st, true, move |s| {
        s.set_thresholds(&t.to_set()?)?;
        view(s)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct TiersBody {
    cuts: Option<Vec<usize>>,
}

async fn post_tiers(State(st): State<AppState>, Json(b): Json<TiersBody>) -> ApiResult<SessionView> {
    with_session(&st, true, move |s| {
        s.set_tier_cuts(b.cuts)?;
        view(s)
    })
    .await
}

async fn post_grid(State(st): State<AppState>, Json(g): Json<GridDecision>) -> ApiResult<SessionView> {
    with_session(&st, true, move |s| {
        s.set_grid(&g)?;
        view(s)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct RunBody {
    through: Option<Step>,
    /// Re-run this step even if done.
    rerun: Option<Step>,
}

async fn post_run(
    State(st): State<AppState>,
    Json(b): Json<RunBody>,
) -> ApiResult<crate::session::SessionReport> {
    with_session(&st, true, move |s| {
        if let Some(step) = b.rerun {
            s.rerun(step)?;
        }
        s.run(b.through.unwrap_or(Step::Surface))
    })
    .await
}

/// Downscales to at most `max` pixels a side and stretches to 8 bits.
pub fn encode_preview(img: &Image2D<f64>, max: usize) -> Result<ImageView, SessionError> {
    let longest = img.width.max(img.height).max(1);
    let scale = (longest as f64 / max as f64).max(1.0);
    let small = if scale > 1.0 {
        let w = ((img.width as f64 / scale).round() as usize).max(1);
        let h = ((img.height as f64 / scale).round() as usize).max(1);
        resize_area(img, w, h)
    } else {
        img.clone()
    };
    let (lo, hi) = small
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let bytes: Vec<u8> = small.data.iter().map(|&v| ((v - lo) / span * 255.0).round() as u8).collect();
    let gray = image::GrayImage::from_raw(small.width as u32, small.height as u32, bytes)
        .ok_or_else(|| SessionError::Invalid("empty image".into()))?;
    let mut png = Vec::new();
    gray.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .map_err(|e| SessionError::Invalid(format!("png encoding: {e}")))?;
    Ok(ImageView {
        width: small.width,
        height: small.height,
        scale,
        png_base64: base64::engine::general_purpose::STANDARD.encode(png),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_statuses() {
        let status = |e: SessionError| ApiError(e).status();
        assert_eq!(status(SessionError::Busy), StatusCode::CONFLICT);
        assert_eq!(status(SessionError::MissingDecision(Step::Thresholds)), StatusCode::CONFLICT);
        let wrapped = SessionError::InStep { step: Step::Grid, source: Box::new(SessionError::Busy) };
        assert_eq!(status(wrapped), StatusCode::CONFLICT);
        assert_eq!(status(SessionError::Invalid("x".into())), StatusCode::BAD_REQUEST);
        assert_eq!(status(SessionError::Corrupt("x".into())), StatusCode::INTERNAL_SERVER_ERROR);
    }

    #[tokio::test]
    async fn mutation_while_held_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let state = AppState { session: Arc::new(Mutex::new(held_session(dir.path()))) };
        let _held = state.session.lock().await;
        let r = with_session(&state, true, |_| Ok(())).await;
        assert!(matches!(r, Err(ApiError(SessionError::Busy))));
    }

    fn held_session(dir: &std::path::Path) -> Session {
        let slices = dir.join("slices");
        std::fs::create_dir_all(&slices).unwrap();
        ctpack_core::volume_io::write_slice(&slices.join("s_00001.tif"), &Image2D::new(4, 4)).unwrap();
        std::fs::write(dir.join("layout.csv"), "S,1,1,A,EMPTY\n").unwrap();
        Session::open(&dir.join("out"), Some(crate::Settings::new(slices, dir.join("layout.csv")))).unwrap()
    }

    #[test]
    fn preview_is_bounded_and_decodes() {
        let img = Image2D::from_fn(3000, 1500, |x, y| (x + y) as f64);
        let v = encode_preview(&img, 1024).unwrap();
        assert_eq!((v.width, v.height), (1024, 512));
        let png = base64::engine::general_purpose::STANDARD.decode(&v.png_base64).unwrap();
        let back = image::load_from_memory(&png).unwrap().to_luma8();
        assert_eq!(back.dimensions(), (1024, 512));
        assert_eq!(back.get_pixel(0, 0)[0], 0);
        assert_eq!(back.get_pixel(1023, 511)[0], 255);

        let tiny = encode_preview(&Image2D::from_fn(10, 4, |_, _| 7.0), 1024).unwrap();
        assert_eq!((tiny.width, tiny.height, tiny.scale), (10, 4, 1.0));
    }
}
