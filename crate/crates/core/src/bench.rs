//! Viewport latency benchmark.
//!
//! For every zoom level of a plan, a fixed number of random viewports are
//! queried exactly once against a [`Retriever`] and timed at the retriever
//! boundary.
//!
//! Query centers are drawn once per plan and reused at every zoom, so the
//! levels differ only in viewport size. This keeps level-to-level
//! comparisons paired.

use crate::geomodel::{BoundingBox, GeoPoint, ZoomLevel};
use crate::store::{AggregateQuery, Retriever, StoreError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{Read, Write};
use std::time::Instant;
use thiserror::Error;

/// Pixel size of a world tile in the slippy-map convention.
pub const TILE_SIZE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench plan has no data extent to draw query centers from")]
    EmptyExtent,
    #[error("bench plan needs at least one zoom level")]
    NoZoomLevels,
    #[error("queries per zoom level must be at least 1")]
    NoQueries,
    #[error("viewport must be at least 1x1 pixels, got {width}x{height}")]
    BadViewport { width: u32, height: u32 },
    #[error("query {index} at zoom {zoom} failed: {source}")]
    Query {
        zoom: ZoomLevel,
        index: usize,
        #[source]
        source: StoreError,
    },
    #[error("query {index} at zoom {zoom} returned {clusters} clusters, above the bound of {bound}")]
    ResultTooLarge {
        zoom: ZoomLevel,
        index: usize,
        clusters: u64,
        bound: u64,
    },
    #[error("per-query csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Default for Viewport {
    fn default() -> Self {
        Self {
            width: 600,
            height: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub zooms: Vec<ZoomLevel>,
    pub queries_per_zoom: usize,
    pub viewport: Viewport,
    pub seed: u64,
    /// Region query centers are drawn from, usually the store's extent.
    pub extent: Option<BoundingBox>,
}

impl BenchPlan {
    /// Zooms 10 to 15, 100 queries each, 600x400 px.
    pub fn with_extent(extent: Option<BoundingBox>, seed: u64) -> Self {
        Self {
            zooms: (10..=15).map(|z| ZoomLevel::new(z).expect("valid zoom")).collect(),
            queries_per_zoom: 100,
            viewport: Viewport::default(),
            seed,
            extent,
        }
    }

    pub fn validate(&self) -> Result<BoundingBox, BenchError> {
        if self.zooms.is_empty() {
            return Err(BenchError::NoZoomLevels);
        }
        if self.queries_per_zoom == 0 {
            return Err(BenchError::NoQueries);
        }
        let Viewport { width, height } = self.viewport;
        if width == 0 || height == 0 {
            return Err(BenchError::BadViewport { width, height });
        }
        self.extent.ok_or(BenchError::EmptyExtent)
    }

    pub fn total_queries(&self) -> usize {
        self.zooms.len() * self.queries_per_zoom
    }
}

/// Map degrees covered by one pixel at `zoom`.
pub fn degrees_per_pixel(zoom: ZoomLevel) -> f64 {
    360.0 / (TILE_SIZE * (1u32 << zoom.value()) as f64)
}

/// The map area a `viewport`-sized viewer centered on `center` shows at
/// `zoom`, clamped to valid coordinates.
pub fn viewport_bbox(center: GeoPoint, zoom: ZoomLevel, viewport: Viewport) -> BoundingBox {
    let dpp = degrees_per_pixel(zoom);
    let half_lat = viewport.height as f64 * dpp / 2.0;
    let half_lon = viewport.width as f64 * dpp / 2.0;
    BoundingBox::from_bounds(
        (center.lat - half_lat).max(-90.0),
        (center.lon - half_lon).max(-180.0),
        (center.lat + half_lat).min(90.0),
        (center.lon + half_lon).min(180.0),
    )
    .expect("clamped viewport is a valid box")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchQuery {
    pub index: usize,
    pub query: AggregateQuery,
}

/// The plan's workload, grouped by zoom in plan order. Deterministic in the
/// plan's seed.
pub fn generate_queries(plan: &BenchPlan) -> Result<Vec<BenchQuery>, BenchError> {
    let extent = plan.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let (lo, hi) = (extent.min(), extent.max());
    let centers: Vec<GeoPoint> = (0..plan.queries_per_zoom)
        .map(|_| {
            let lat = rng.random_range(lo.lat..=hi.lat);
            let lon = rng.random_range(lo.lon..=hi.lon);
            GeoPoint::new(lat, lon)
        })
        .collect();
    let mut out = Vec::with_capacity(plan.total_queries());
    for &zoom in &plan.zooms {
        for (index, &c) in centers.iter().enumerate() {
            out.push(BenchQuery {
                index,
                query: AggregateQuery::new(viewport_bbox(c, zoom, plan.viewport), zoom),
            });
        }
    }
    Ok(out)
}

/// One row of the per-query CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub zoom: u8,
    pub query_index: usize,
    pub seconds: f64,
    pub clusters: u64,
    pub total_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelStats {
    pub zoom: u8,
    pub queries: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
    pub mean_clusters: f64,
    pub mean_total_count: f64,
}

impl LevelStats {
    /// Statistics over a non-empty set of records of one zoom level.
    pub fn from_records(zoom: u8, records: &[QueryRecord]) -> Self {
        assert!(!records.is_empty(), "no records for zoom {zoom}");
        let n = records.len();
        let mut secs: Vec<f64> = records.iter().map(|r| r.seconds).collect();
        secs.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            secs[n / 2]
        } else {
            (secs[n / 2 - 1] + secs[n / 2]) / 2.0
        };
        Self {
            zoom,
            queries: n,
            mean: secs.iter().sum::<f64>() / n as f64,
            median,
            p95: nearest_rank(&secs, 95),
            min: secs[0],
            max: secs[n - 1],
            mean_clusters: records.iter().map(|r| r.clusters as f64).sum::<f64>() / n as f64,
            mean_total_count: records.iter().map(|r| r.total_count as f64).sum::<f64>() / n as f64,
        }
    }
}

/// Nearest-rank percentile of sorted data.
fn nearest_rank(sorted: &[f64], percent: usize) -> f64 {
    let rank = (percent * sorted.len()).div_ceil(100).max(1);
    sorted[rank.min(sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub records: Vec<QueryRecord>,
    /// In order of first appearance in `records`.
    pub levels: Vec<LevelStats>,
}

impl BenchReport {
    pub fn from_records(records: Vec<QueryRecord>) -> Self {
        let mut zooms: Vec<u8> = Vec::new();
        for r in &records {
            if !zooms.contains(&r.zoom) {
                zooms.push(r.zoom);
            }
        }
        let levels = zooms
            .into_iter()
            .map(|z| {
                let of_level: Vec<QueryRecord> = records.iter().filter(|r| r.zoom == z).copied().collect();
                LevelStats::from_records(z, &of_level)
            })
            .collect();
        Self { records, levels }
    }

    pub fn level(&self, zoom: u8) -> Option<&LevelStats> {
        self.levels.iter().find(|l| l.zoom == zoom)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r)?;
        }
        out.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, BenchError> {
        let records = csv::Reader::from_reader(r)
            .deserialize()
            .collect::<Result<Vec<QueryRecord>, _>>()?;
        Ok(Self::from_records(records))
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>14}",
            "zoom", "queries", "mean s", "median s", "p95 s", "min s", "max s", "clusters", "events"
        )?;
        for l in &self.levels {
            writeln!(
                f,
                "{:>4} {:>7} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>12.1} {:>14.1}",
                l.zoom, l.queries, l.mean, l.median, l.p95, l.min, l.max, l.mean_clusters, l.mean_total_count
            )?;
        }
        Ok(())
    }
}

fn execute<R: Retriever + ?Sized>(q: &BenchQuery, retriever: &R) -> Result<QueryRecord, BenchError> {
    let zoom = q.query.zoom;
    let started = Instant::now();
    let result = retriever.aggregate(&q.query);
    let seconds = started.elapsed().as_secs_f64();
    let clusters = result.map_err(|source| BenchError::Query {
        zoom,
        index: q.index,
        source,
    })?;
    let bound = q.query.result_size_bound();
    if clusters.len() as u64 > bound {
        return Err(BenchError::ResultTooLarge {
            zoom,
            index: q.index,
            clusters: clusters.len() as u64,
            bound,
        });
    }
    Ok(QueryRecord {
        zoom: zoom.value(),
        query_index: q.index,
        seconds,
        clusters: clusters.len() as u64,
        total_count: clusters.iter().map(|c| c.count).sum(),
    })
}

/// Executes every planned query once, sequentially.
pub fn run<R: Retriever + ?Sized>(plan: &BenchPlan, retriever: &R) -> Result<BenchReport, BenchError> {
    let queries = generate_queries(plan)?;
    let records = queries
        .iter()
        .map(|q| execute(q, retriever))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BenchReport::from_records(records))
}

/// Like [`run`], but spreads the queries over `threads` workers. Each query
/// is still issued exactly once; latencies include contention.
pub fn run_concurrent<R: Retriever + ?Sized>(
    plan: &BenchPlan,
    retriever: &R,
    threads: usize,
) -> Result<BenchReport, BenchError> {
    let queries = generate_queries(plan)?;
    let threads = threads.clamp(1, queries.len());
    let chunk = queries.len().div_ceil(threads);
    let results: Vec<Result<Vec<QueryRecord>, BenchError>> = std::thread::scope(|s| {
        let handles: Vec<_> = queries
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|q| execute(q, retriever)).collect()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench worker panicked"))
            .collect()
    });
    let mut records = Vec::with_capacity(queries.len());
    for part in results {
        records.extend(part?);
    }
    Ok(BenchReport::from_records(records))
}
