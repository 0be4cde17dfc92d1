//! A [`Retriever`] backed by another running server.

use crate::wire::{AggregateResponse, ErrorJson, IngestResponse, StatsResponse};
use geoagg_core::grid::separation;
use geoagg_core::ingest::to_line;
use geoagg_core::store::{IngestReport, StoreStats};
use geoagg_core::{
    AggregateQuery, BoundingBox, ClusterResult, Event, GeoPoint, GridCell, Retriever, StoreError, TimeRange,
};
use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use std::time::Duration;

/// Talks to the HTTP API with a blocking client. Must not be used from
/// inside an async runtime.
pub struct HttpRetriever {
    base: String,
    client: Client,
}

impl HttpRetriever {
    /// `base` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>, timeout: Duration) -> Result<Self, StoreError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| StoreError::Remote(e.to_string()))?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            client,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

fn remote(e: reqwest::Error) -> StoreError {
    StoreError::Remote(e.to_string())
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, StoreError> {
    let status = resp.status();
    if status.is_success() {
        return resp.json().map_err(remote);
    }
    let detail = resp
        .json::<ErrorJson>()
        .map(|e| e.error)
        .unwrap_or_else(|_| status.to_string());
    Err(match status {
        StatusCode::BAD_REQUEST => StoreError::InvalidQuery(detail),
        _ => StoreError::Remote(format!("{status}: {detail}")),
    })
}

impl Retriever for HttpRetriever {
    fn ingest_batch(&self, events: Vec<Event>) -> Result<IngestReport, StoreError> {
        if events.is_empty() {
            return Ok(IngestReport::default());
        }
        let mut body = String::new();
        for e in &events {
            body.push_str(&to_line(e));
            body.push('\n');
        }
        let resp = self
            .client
            .post(self.url("/events"))
            .header("content-type", "application/x-ndjson")
            .body(body)
            .send()
            .map_err(remote)?;
        let r: IngestResponse = decode(resp)?;
        Ok(IngestReport {
            accepted: r.accepted,
            rejected: r.rejected,
        })
    }

    fn aggregate(&self, query: &AggregateQuery) -> Result<Vec<ClusterResult>, StoreError> {
        let (lo, hi) = (query.bbox.min(), query.bbox.max());
        let mut params = vec![
            ("minLat", lo.lat.to_string()),
            ("minLon", lo.lon.to_string()),
            ("maxLat", hi.lat.to_string()),
            ("maxLon", hi.lon.to_string()),
            ("zoom", query.zoom.value().to_string()),
        ];
        if let Some(t) = query.time {
            params.push(("tmin", t.tmin().to_string()));
            params.push(("tmax", t.tmax().to_string()));
        }
        let resp = self
            .client
            .get(self.url("/aggregate"))
            .query(&params)
            .send()
            .map_err(remote)?;
        let body: AggregateResponse = decode(resp)?;
        let sep = separation(query.zoom);
        Ok(body
            .clusters
            .into_iter()
            .map(|c| ClusterResult {
                // Centers are exact multiples of the separation.
                cell: GridCell {
                    zoom: query.zoom,
                    i: (c.lat / sep).round() as i32,
                    j: (c.lon / sep).round() as i32,
                },
                pos: GeoPoint::new(c.lat, c.lon),
                count: c.count,
            })
            .collect())
    }

    fn scan_count(&self, _bbox: &BoundingBox, _time: Option<&TimeRange>) -> Result<u64, StoreError> {
        Err(StoreError::Unsupported("raw-coordinate counts over HTTP"))
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        let resp = self.client.get(self.url("/stats")).send().map_err(remote)?;
        let s: StatsResponse = decode(resp)?;
        let bad = |e: geoagg_core::ValidationError| StoreError::Remote(format!("server sent invalid stats: {e}"));
        Ok(StoreStats {
            events: s.events,
            extent: s
                .extent
                .map(|e| BoundingBox::from_bounds(e.min_lat, e.min_lon, e.max_lat, e.max_lon))
                .transpose()
                .map_err(bad)?,
            time: s
                .time
                .map(|t| TimeRange::new(t.tmin, t.tmax))
                .transpose()
                .map_err(bad)?,
        })
    }
}
