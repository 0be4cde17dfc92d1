//! Event storage behind the [`Retriever`] interface.
//!
//! A retriever ingests validated events and answers viewport aggregation
//! queries: group the events whose zoom-`z` cell center falls inside the
//! bounding box (and whose timestamp falls inside the optional time range)
//! by cell, and count them.

mod columnar;
mod snapshot;

pub use columnar::{ColumnarStore, EventColumns, PARTITION_ZOOM};
pub use snapshot::{SnapshotError, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use crate::geomodel::{BoundingBox, ClusterResult, Event, TimeRange, ZoomLevel};
use crate::grid::separation;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateQuery {
    pub bbox: BoundingBox,
    pub zoom: ZoomLevel,
    pub time: Option<TimeRange>,
}

impl AggregateQuery {
    pub fn new(bbox: BoundingBox, zoom: ZoomLevel) -> Self {
        Self { bbox, zoom, time: None }
    }

    pub fn with_time(mut self, time: TimeRange) -> Self {
        self.time = Some(time);
        self
    }

    /// Upper bound on the number of clusters any correct retriever may return
    /// for this query.
    pub fn result_size_bound(&self) -> u64 {
        result_size_bound(&self.bbox, self.zoom)
    }
}

/// `(floor(lat_extent / sep) + 2) * (floor(lon_extent / sep) + 2)`.
pub fn result_size_bound(bbox: &BoundingBox, zoom: ZoomLevel) -> u64 {
    let sep = separation(zoom);
    let rows = (bbox.lat_extent() / sep).floor() as u64 + 2;
    let cols = (bbox.lon_extent() / sep).floor() as u64 + 2;
    rows * cols
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub rejected: u64,
}

impl IngestReport {
    pub fn merge(&mut self, other: IngestReport) {
        self.accepted += other.accepted;
        self.rejected += other.rejected;
    }
}

/// Totals and raw-coordinate extent of the stored events.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StoreStats {
    pub events: u64,
    pub extent: Option<BoundingBox>,
    pub time: Option<TimeRange>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    /// The store filled up mid-batch. Events before the failure point were
    /// stored and are counted in `report`; `dropped` valid events were not.
    #[error("store capacity of {capacity} events exhausted ({dropped} events dropped)")]
    CapacityExhausted {
        capacity: u64,
        report: IngestReport,
        dropped: u64,
    },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("operation not supported by this retriever: {0}")]
    Unsupported(&'static str),
    #[error("remote retriever failed: {0}")]
    Remote(String),
}

/// Storage access contract shared by every storage backend.
///
/// Implementations must be safe to share between threads: ingestion takes
/// exclusive access, queries shared access, and queries only ever observe
/// whole batches.
pub trait Retriever: Send + Sync {
    /// Validates and appends `events`. Invalid events are counted as
    /// rejected and skipped; they never abort the batch.
    fn ingest_batch(&self, events: Vec<Event>) -> Result<IngestReport, StoreError>;

    /// One cluster per distinct participating cell. Order is unspecified.
    fn aggregate(&self, query: &AggregateQuery) -> Result<Vec<ClusterResult>, StoreError>;

    /// Number of events whose raw position is inside `bbox` and whose
    /// timestamp is inside `time` when given.
    fn scan_count(&self, bbox: &BoundingBox, time: Option<&TimeRange>) -> Result<u64, StoreError>;

    fn stats(&self) -> Result<StoreStats, StoreError>;
}

impl<R: Retriever + ?Sized> Retriever for std::sync::Arc<R> {
    fn ingest_batch(&self, events: Vec<Event>) -> Result<IngestReport, StoreError> {
        (**self).ingest_batch(events)
    }

    fn aggregate(&self, query: &AggregateQuery) -> Result<Vec<ClusterResult>, StoreError> {
        (**self).aggregate(query)
    }

    fn scan_count(&self, bbox: &BoundingBox, time: Option<&TimeRange>) -> Result<u64, StoreError> {
        (**self).scan_count(bbox, time)
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        (**self).stats()
    }
}
