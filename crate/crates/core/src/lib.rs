//! Spatial event aggregation for web map viewers.
//!
//! Every event position is snapped, at ingest time, onto one square grid per
//! zoom level (separation `90 / 2^zoom` degrees). A viewport query then
//! reduces to a scan of one precomputed cell column and a count per cell.

pub mod bench;
pub mod geomodel;
pub mod grid;
pub mod ingest;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod simulator;
pub mod store;

pub use geomodel::{
    BoundingBox, ClusterResult, Event, GeoPoint, GridCell, Payload, TimeRange, ValidationError, ZoomLevel,
};
pub use store::{AggregateQuery, ColumnarStore, Retriever, StoreError};
