//! HTTP front end for a [`Retriever`].
//!
//! Endpoints:
//!
//! - `GET /aggregate?minLat&minLon&maxLat&maxLon&zoom[&tmin&tmax]`
//! - `POST /events` with an NDJSON body
//! - `GET /stats`

mod remote;
pub mod wire;

pub use remote::HttpRetriever;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use geoagg_core::grid::separation;
use geoagg_core::ingest::{load_reader, IngestError, DEFAULT_BATCH_SIZE};
use geoagg_core::{AggregateQuery, BoundingBox, Retriever, StoreError, TimeRange, ZoomLevel};
use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use wire::{AggregateResponse, ClusterJson, ErrorJson, ExtentJson, IngestResponse, StatsResponse, TimeJson};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub timeout: Duration,
    pub max_cells: usize,
    /// Largest accepted `POST /events` body.
    pub max_body_bytes: usize,
    /// Origins allowed by CORS. Empty disables CORS; `*` allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            timeout: Duration::from_secs(10),
            max_cells: 50_000,
            max_body_bytes: 256 << 20,
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("request timeout must be positive")]
    ZeroTimeout,
    #[error("max result cells must be positive")]
    ZeroMaxCells,
    #[error("invalid CORS origin {0:?}")]
    BadOrigin(String),
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.max_cells == 0 {
            return Err(ConfigError::ZeroMaxCells);
        }
        Ok(())
    }

    fn cors(&self) -> Result<Option<CorsLayer>, ConfigError> {
        if self.cors_origins.is_empty() {
            return Ok(None);
        }
        let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
        if self.cors_origins.iter().any(|o| o == "*") {
            return Ok(Some(layer.allow_origin(Any)));
        }
        let origins = self
            .cors_origins
            .iter()
            .map(|o| HeaderValue::from_str(o).map_err(|_| ConfigError::BadOrigin(o.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(layer.allow_origin(AllowOrigin::list(origins))))
    }
}

#[derive(Clone)]
struct AppState {
    retriever: Arc<dyn Retriever>,
    timeout: Duration,
    max_cells: usize,
}

/// Builds the service. Fails only on an invalid configuration.
pub fn router(retriever: Arc<dyn Retriever>, config: &ServerConfig) -> Result<Router, ConfigError> {
    config.validate()?;
    let state = AppState {
        retriever,
        timeout: config.timeout,
        max_cells: config.max_cells,
    };
    let mut app = Router::new()
        .route("/aggregate", get(handle_aggregate))
        .route("/events", post(handle_ingest))
        .route("/stats", get(handle_stats))
        .layer(DefaultBodyLimit::max(config.max_body_bytes))
        .with_state(state);
    if let Some(cors) = config.cors()? {
        app = app.layer(cors);
    }
    Ok(app)
}

/// Serves until ctrl-c.
pub async fn serve(retriever: Arc<dyn Retriever>, config: ServerConfig) -> std::io::Result<()> {
    let app = router(retriever, &config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl Into<String>) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorJson { error: self.1 })).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::InvalidQuery(_) => StatusCode::BAD_REQUEST,
            StoreError::CapacityExhausted { .. } => StatusCode::INSUFFICIENT_STORAGE,
            StoreError::Remote(_) => StatusCode::BAD_GATEWAY,
            StoreError::Unsupported(_) => StatusCode::NOT_IMPLEMENTED,
        };
        Self(status, e.to_string())
    }
}

/// Runs blocking store work off the async executor, bounded by `timeout`.
async fn blocking<T: Send + 'static>(
    timeout: Duration,
    work: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::time::timeout(timeout, tokio::task::spawn_blocking(work)).await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(ApiError(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("worker failed: {e}"),
        )),
        Err(_) => {
            tracing::warn!(?timeout, "request timed out");
            Err(ApiError(
                StatusCode::GATEWAY_TIMEOUT,
                format!("query exceeded the {} s timeout", timeout.as_secs_f64()),
            ))
        }
    }
}

fn required<'a>(params: &'a HashMap<String, String>, key: &str) -> Result<&'a str, ApiError> {
    params
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| ApiError::bad_request(format!("missing parameter {key}")))
}

fn number<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, ApiError> {
    raw.trim()
        .parse()
        .map_err(|_| ApiError::bad_request(format!("parameter {key} is not a valid number: {raw:?}")))
}

fn parse_aggregate(params: &HashMap<String, String>) -> Result<AggregateQuery, ApiError> {
    let coord = |key: &str| -> Result<f64, ApiError> {
        let v: f64 = number(key, required(params, key)?)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ApiError::bad_request(format!("parameter {key} must be finite")))
        }
    };
    let bbox = BoundingBox::from_bounds(coord("minLat")?, coord("minLon")?, coord("maxLat")?, coord("maxLon")?)
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let zoom =
        ZoomLevel::new(number("zoom", required(params, "zoom")?)?).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let bound =
        |key: &str, open: i64| -> Result<i64, ApiError> { params.get(key).map_or(Ok(open), |raw| number(key, raw)) };
    let mut query = AggregateQuery::new(bbox, zoom);
    if params.contains_key("tmin") || params.contains_key("tmax") {
        let time = TimeRange::new(bound("tmin", i64::MIN)?, bound("tmax", i64::MAX)?)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        query = query.with_time(time);
    }
    Ok(query)
}

async fn handle_aggregate(
    State(state): State<AppState>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<AggregateResponse>, ApiError> {
    let query = parse_aggregate(&params)?;
    let retriever = state.retriever.clone();
    let mut clusters = blocking(state.timeout, move || retriever.aggregate(&query)).await??;
    if clusters.len() > state.max_cells {
        return Err(ApiError(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!(
                "query matches {} cells, above the limit of {}; zoom in or shrink the box",
                clusters.len(),
                state.max_cells
            ),
        ));
    }
    clusters.sort_by_key(|c| (c.cell.i, c.cell.j));
    Ok(Json(AggregateResponse {
        zoom: query.zoom.value(),
        separation: separation(query.zoom),
        total: clusters.iter().map(|c| c.count).sum(),
        clusters: clusters
            .iter()
            .map(|c| ClusterJson {
                lat: c.pos.lat,
                lon: c.pos.lon,
                count: c.count,
            })
            .collect(),
    }))
}

async fn handle_ingest(State(state): State<AppState>, body: Bytes) -> Result<Json<IngestResponse>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(ApiError::bad_request("empty body; expected NDJSON events"));
    }
    let retriever = state.retriever.clone();
    let loaded = blocking(state.timeout, move || {
        load_reader(body.as_ref(), &*retriever, DEFAULT_BATCH_SIZE)
    })
    .await?;
    let report = match loaded {
        Ok(r) => r,
        Err(IngestError::Store { source, report }) => {
            let ApiError(status, msg) = source.into();
            let msg = format!("{msg}; accepted {} events before failing", report.accepted);
            return Err(ApiError(status, msg));
        }
        Err(e) => return Err(ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    };
    if report.accepted + report.rejected == 0 {
        return Err(ApiError::bad_request(format!(
            "body is not NDJSON: none of {} lines is an event",
            report.parse_errors
        )));
    }
    Ok(Json(IngestResponse {
        accepted: report.accepted,
        rejected: report.rejected,
        parse_errors: report.parse_errors,
    }))
}

async fn handle_stats(State(state): State<AppState>) -> Result<Json<StatsResponse>, ApiError> {
    let retriever = state.retriever.clone();
    let stats = blocking(state.timeout, move || retriever.stats()).await??;
    Ok(Json(StatsResponse {
        events: stats.events,
        extent: stats.extent.map(|b| ExtentJson {
            min_lat: b.min().lat,
            min_lon: b.min().lon,
            max_lat: b.max().lat,
            max_lon: b.max().lon,
        }),
        time: stats.time.map(|t| TimeJson {
            tmin: t.tmin(),
            tmax: t.tmax(),
        }),
    }))
}
