//! Stateless what-if service over HTTP/JSON.
//!
//! Routes, all under `/api/v1`:
//!
//! - `POST /simulate`: run a scenario through each requested policy (carbon-agnostic
//!   is always included) and report metrics, executed schedules and savings.
//! - `POST /sweep`: the same scenario body plus `axis`, `values` (or `stride` for
//!   `start_time`) and `runs`.
//! - `GET /regions`: traces in the configured directory, lowest mean first.
//! - `GET /presets`: names of the built-in curves.
//!
//! Traces are loaded once at startup. Requests share nothing but that read-only
//! library, so identical bodies get identical responses.

mod api;
mod library;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use carbonscale::fixture::PRESET_NAMES;

pub use api::{
    ApiError, ExecutedSchedule, FieldError, Metrics, PolicyResult, SimulateRequest, SimulateResponse, SweepAxis,
    SweepResponse, SweepSpec, TraceExcerpt,
};
pub use library::{LibraryError, LoadFailure, RegionSummary, TraceLibrary};

pub const ENV_TRACES: &str = "CARBONSCHED_TRACES";
pub const ENV_ADDR: &str = "CARBONSCHED_ADDR";
pub const ENV_CELL_BUDGET: &str = "CARBONSCHED_SWEEP_BUDGET";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";
pub const DEFAULT_CELL_BUDGET: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorConfig {
    /// No directory means an empty library; inline traces still work.
    pub traces: Option<PathBuf>,
    pub addr: String,
    pub sweep_cell_budget: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigFlags {
    pub traces: Option<PathBuf>,
    pub addr: Option<String>,
    pub sweep_cell_budget: Option<usize>,
}

impl AdvisorConfig {
    /// Flags first, then `lookup` (normally the process environment), then
    /// defaults.
    pub fn resolve(flags: ConfigFlags, lookup: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let budget = match flags.sweep_cell_budget {
            Some(b) => b,
            None => match lookup(ENV_CELL_BUDGET) {
                Some(v) => v
                    .parse()
                    .map_err(|_| format!("{ENV_CELL_BUDGET}={v} is not a positive integer"))?,
                None => DEFAULT_CELL_BUDGET,
            },
        };
        Ok(Self {
            traces: flags.traces.or_else(|| lookup(ENV_TRACES).map(PathBuf::from)),
            addr: flags
                .addr
                .or_else(|| lookup(ENV_ADDR))
                .unwrap_or_else(|| DEFAULT_ADDR.to_string()),
            sweep_cell_budget: budget,
        })
    }

    pub fn from_env(flags: ConfigFlags) -> Result<Self, String> {
        Self::resolve(flags, |k| std::env::var(k).ok())
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, String> {
        self.addr
            .parse()
            .map_err(|_| format!("listen address `{}` is not HOST:PORT", self.addr))
    }

    pub fn load_library(&self) -> Result<TraceLibrary, LibraryError> {
        match &self.traces {
            Some(dir) => TraceLibrary::load_dir(dir),
            None => Ok(TraceLibrary::default()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AppState {
    library: Arc<TraceLibrary>,
    sweep_cell_budget: usize,
}

impl AppState {
    pub fn new(library: TraceLibrary, sweep_cell_budget: usize) -> Self {
        Self {
            library: Arc::new(library),
            sweep_cell_budget,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/simulate", post(simulate))
        .route("/api/v1/sweep", post(sweep))
        .route("/api/v1/regions", get(regions))
        .route("/api/v1/presets", get(presets))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn respond<T: serde::Serialize>(result: Result<T, ApiError>) -> Response {
    use axum::response::IntoResponse;
    match result {
        Ok(body) => api::json_response(StatusCode::OK, &body),
        Err(e) => e.into_response(),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::Internal(format!("worker failed: {e}"))))
}

async fn simulate(State(state): State<AppState>, body: Bytes) -> Response {
    respond(
        blocking(move || {
            let req: SimulateRequest = api::parse_body(&body)?;
            api::simulate(&req, &state.library)
        })
        .await,
    )
}

async fn sweep(State(state): State<AppState>, body: Bytes) -> Response {
    respond(
        blocking(move || {
            let (req, spec) = api::parse_sweep(&body)?;
            api::sweep(&req, &spec, &state.library, state.sweep_cell_budget)
        })
        .await,
    )
}

async fn regions(State(state): State<AppState>) -> Response {
    match state.library.regions() {
        Ok(list) => api::json_response(StatusCode::OK, &list),
        Err(failure) => api::json_response(
            StatusCode::INTERNAL_SERVER_ERROR,
            &serde_json::json!({
                "error": "unreadable trace",
                "file": failure.file,
                "message": failure.message,
            }),
        ),
    }
}

async fn presets() -> Response {
    api::json_response(StatusCode::OK, &PRESET_NAMES)
}
