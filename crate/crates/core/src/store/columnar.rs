use super::{AggregateQuery, IngestReport, Retriever, StoreError, StoreStats};
use crate::geomodel::{
    validate_event, BoundingBox, ClusterResult, Event, GeoPoint, GridCell, Payload, TimeRange, ZoomLevel,
};
use crate::grid::{
    cell_center, first_multiple_at_or_above, last_multiple_at_or_below, precompute, separation, MultiResPoint,
};
use parking_lot::RwLock;
use std::collections::{BTreeMap, HashMap};

/// Rows are physically grouped by their cell at this zoom level. A query
/// visits only the groups that can hold matching rows.
pub const PARTITION_ZOOM: u8 = 12;

/// Largest candidate cell range counted with a flat array instead of a hash map.
const DENSE_COUNTER_LIMIT: u64 = 1 << 16;

#[inline]
fn pack(i: i32, j: i32) -> u64 {
    ((i as u32 as u64) << 32) | (j as u32 as u64)
}

#[inline]
fn unpack(key: u64) -> (i32, i32) {
    ((key >> 32) as u32 as i32, key as u32 as i32)
}

/// Inclusive index rectangle. `imin > imax` means empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct CellRange {
    imin: i32,
    imax: i32,
    jmin: i32,
    jmax: i32,
}

impl CellRange {
    const EMPTY: CellRange = CellRange {
        imin: i32::MAX,
        imax: i32::MIN,
        jmin: i32::MAX,
        jmax: i32::MIN,
    };

    /// Cells whose centers lie inside `bbox` (closed).
    fn covering(bbox: &BoundingBox, sep: f64) -> Option<CellRange> {
        let imin = first_multiple_at_or_above(bbox.min().lat, sep);
        let imax = last_multiple_at_or_below(bbox.max().lat, sep);
        let jmin = first_multiple_at_or_above(bbox.min().lon, sep);
        let jmax = last_multiple_at_or_below(bbox.max().lon, sep);
        (imin <= imax && jmin <= jmax).then_some(CellRange {
            imin: imin as i32,
            imax: imax as i32,
            jmin: jmin as i32,
            jmax: jmax as i32,
        })
    }

    #[inline]
    fn contains(&self, i: i32, j: i32) -> bool {
        i >= self.imin && i <= self.imax && j >= self.jmin && j <= self.jmax
    }

    fn include(&mut self, i: i32, j: i32) {
        self.imin = self.imin.min(i);
        self.imax = self.imax.max(i);
        self.jmin = self.jmin.min(j);
        self.jmax = self.jmax.max(j);
    }

    fn intersects(&self, other: &CellRange) -> bool {
        self.imin <= other.imax && other.imin <= self.imax && self.jmin <= other.jmax && other.jmin <= self.jmax
    }

    fn cell_count(&self) -> u64 {
        (self.imax as i64 - self.imin as i64 + 1) as u64 * (self.jmax as i64 - self.jmin as i64 + 1) as u64
    }
}

enum CellCounter {
    Dense {
        range: CellRange,
        width: usize,
        counts: Vec<u64>,
    },
    Hashed(HashMap<u64, u64>),
}

impl CellCounter {
    fn for_range(range: CellRange) -> Self {
        if range.cell_count() <= DENSE_COUNTER_LIMIT {
            let width = (range.jmax as i64 - range.jmin as i64 + 1) as usize;
            CellCounter::Dense {
                range,
                width,
                counts: vec![0; range.cell_count() as usize],
            }
        } else {
            CellCounter::Hashed(HashMap::new())
        }
    }

    #[inline]
    fn add(&mut self, i: i32, j: i32) {
        match self {
            CellCounter::Dense { range, width, counts } => {
                let slot = (i - range.imin) as usize * *width + (j - range.jmin) as usize;
                counts[slot] += 1;
            }
            CellCounter::Hashed(map) => *map.entry(pack(i, j)).or_insert(0) += 1,
        }
    }

    /// Clusters sorted by `(i, j)`.
    fn into_clusters(self, zoom: ZoomLevel) -> Vec<ClusterResult> {
        let make = |i: i32, j: i32, count: u64| {
            let cell = GridCell { zoom, i, j };
            ClusterResult {
                cell,
                pos: cell_center(cell),
                count,
            }
        };
        match self {
            CellCounter::Dense { range, width, counts } => counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(slot, &c)| {
                    let i = range.imin + (slot / width) as i32;
                    let j = range.jmin + (slot % width) as i32;
                    make(i, j, c)
                })
                .collect(),
            CellCounter::Hashed(map) => {
                let mut out: Vec<_> = map
                    .into_iter()
                    .map(|(k, c)| {
                        let (i, j) = unpack(k);
                        make(i, j, c)
                    })
                    .collect();
                out.sort_by_key(|c| (c.cell.i, c.cell.j));
                out
            }
        }
    }
}

/// Column-per-field storage for one partition, plus one packed `(i, j)`
/// column per zoom level and per-zoom index bounds used for pruning.
#[derive(Debug, Clone)]
pub struct EventColumns {
    driver: Vec<u32>,
    ts: Vec<i64>,
    lat: Vec<f64>,
    lon: Vec<f64>,
    /// NaN marks a missing altitude.
    alt: Vec<f64>,
    speed: Vec<f64>,
    bearing: Vec<f64>,
    accuracy: Vec<f64>,
    /// Sparse: only rows with a non-empty payload, in row order.
    payloads: Vec<(u32, Payload)>,
    cells: [Vec<u64>; ZoomLevel::COUNT],
    zones: [CellRange; ZoomLevel::COUNT],
    ts_min: i64,
    ts_max: i64,
}

impl EventColumns {
    fn new() -> Self {
        Self {
            driver: Vec::new(),
            ts: Vec::new(),
            lat: Vec::new(),
            lon: Vec::new(),
            alt: Vec::new(),
            speed: Vec::new(),
            bearing: Vec::new(),
            accuracy: Vec::new(),
            payloads: Vec::new(),
            cells: std::array::from_fn(|_| Vec::new()),
            zones: [CellRange::EMPTY; ZoomLevel::COUNT],
            ts_min: i64::MAX,
            ts_max: i64::MIN,
        }
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    fn push(&mut self, driver: u32, event: Event, cells: &MultiResPoint) {
        let row = self.ts.len() as u32;
        self.driver.push(driver);
        self.ts.push(event.ts);
        self.lat.push(event.pos.lat);
        self.lon.push(event.pos.lon);
        self.alt.push(event.alt.unwrap_or(f64::NAN));
        self.speed.push(event.speed);
        self.bearing.push(event.bearing);
        self.accuracy.push(event.accuracy);
        if !event.payload.is_empty() {
            self.payloads.push((row, event.payload));
        }
        for cell in cells.cells() {
            let z = cell.zoom.index();
            self.cells[z].push(pack(cell.i, cell.j));
            self.zones[z].include(cell.i, cell.j);
        }
        self.ts_min = self.ts_min.min(event.ts);
        self.ts_max = self.ts_max.max(event.ts);
    }

    /// Snapped cells of every row at `zoom`.
    pub fn cells_at(&self, zoom: ZoomLevel) -> impl Iterator<Item = GridCell> + '_ {
        self.cells[zoom.index()].iter().map(move |&k| {
            let (i, j) = unpack(k);
            GridCell { zoom, i, j }
        })
    }

    fn event(&self, row: usize, drivers: &[String]) -> Event {
        let alt = self.alt[row];
        let payload = self
            .payloads
            .binary_search_by_key(&(row as u32), |(r, _)| *r)
            .map(|idx| self.payloads[idx].1.clone())
            .unwrap_or_default();
        Event {
            driver_id: drivers[self.driver[row] as usize].clone(),
            pos: GeoPoint::new(self.lat[row], self.lon[row]),
            alt: (!alt.is_nan()).then_some(alt),
            ts: self.ts[row],
            speed: self.speed[row],
            bearing: self.bearing[row],
            accuracy: self.accuracy[row],
            payload,
        }
    }

    /// Verifies that every column has one entry per row and that the stored
    /// cells are the snaps of the stored coordinates.
    pub fn check_consistency(&self) -> Result<(), String> {
        let n = self.len();
        let lens = [
            self.driver.len(),
            self.lat.len(),
            self.lon.len(),
            self.alt.len(),
            self.speed.len(),
            self.bearing.len(),
            self.accuracy.len(),
        ];
        if lens.iter().any(|&l| l != n) || self.cells.iter().any(|c| c.len() != n) {
            return Err(format!("column length mismatch, expected {n}"));
        }
        for row in 0..n {
            let m = precompute(GeoPoint::new(self.lat[row], self.lon[row]));
            for cell in m.cells() {
                if self.cells[cell.zoom.index()][row] != pack(cell.i, cell.j) {
                    return Err(format!("row {row}: stale cell at zoom {}", cell.zoom));
                }
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Inner {
    partitions: BTreeMap<(i32, i32), EventColumns>,
    drivers: Vec<String>,
    driver_ids: HashMap<String, u32>,
    rows: u64,
    extent: Option<BoundingBox>,
    time: Option<TimeRange>,
}

impl Inner {
    fn append(&mut self, mut event: Event, cells: MultiResPoint) {
        let driver = match self.driver_ids.get(&event.driver_id) {
            Some(&id) => id,
            None => {
                let id = self.drivers.len() as u32;
                let name = std::mem::take(&mut event.driver_id);
                self.driver_ids.insert(name.clone(), id);
                self.drivers.push(name);
                id
            }
        };
        let point = BoundingBox::point(event.pos).expect("validated position");
        self.extent = Some(self.extent.map_or(point, |e| e.union(&point)));
        let at = TimeRange::new(event.ts, event.ts).expect("single instant");
        self.time = Some(self.time.map_or(at, |t| t.union(&at)));

        let key = cells.cells()[PARTITION_ZOOM as usize];
        self.partitions
            .entry((key.i, key.j))
            .or_insert_with(EventColumns::new)
            .push(driver, event, &cells);
        self.rows += 1;
    }

    /// Calls `f` for every partition that may hold rows whose zoom-`zoom`
    /// cell center lies in `bbox`.
    fn for_each_candidate<'a>(&'a self, bbox: &BoundingBox, zoom: ZoomLevel, mut f: impl FnMut(&'a EventColumns)) {
        let psep = separation(ZoomLevel::new(PARTITION_ZOOM as i64).expect("partition zoom"));
        // A row sits within psep/2 of its partition center and its query
        // cell center sits within sep/2 of the row. One extra partition of
        // slack on each side absorbs rounding.
        let margin = psep / 2.0 + separation(zoom) / 2.0;
        let span = |lo: f64, hi: f64| {
            let a = ((lo - margin) / psep).floor() as i64 - 1;
            let b = ((hi + margin) / psep).ceil() as i64 + 1;
            (a.max(i32::MIN as i64) as i32, b.min(i32::MAX as i64) as i32)
        };
        let (pi_lo, pi_hi) = span(bbox.min().lat, bbox.max().lat);
        let (pj_lo, pj_hi) = span(bbox.min().lon, bbox.max().lon);
        let candidates = (pi_hi as i64 - pi_lo as i64 + 1) * (pj_hi as i64 - pj_lo as i64 + 1);
        if candidates as u64 >= self.partitions.len() as u64 {
            self.partitions.values().for_each(f);
        } else {
            for pi in pi_lo..=pi_hi {
                for (_, cols) in self.partitions.range((pi, pj_lo)..=(pi, pj_hi)) {
                    f(cols);
                }
            }
        }
    }

    fn aggregate(&self, q: &AggregateQuery) -> Vec<ClusterResult> {
        let Some(range) = CellRange::covering(&q.bbox, separation(q.zoom)) else {
            return Vec::new();
        };
        let z = q.zoom.index();
        let mut counter = CellCounter::for_range(range);
        self.for_each_candidate(&q.bbox, q.zoom, |cols| {
            if !cols.zones[z].intersects(&range) {
                return;
            }
            let column = &cols.cells[z];
            match q.time {
                None => {
                    for &key in column {
                        let (i, j) = unpack(key);
                        if range.contains(i, j) {
                            counter.add(i, j);
                        }
                    }
                }
                Some(t) => {
                    if cols.ts_max < t.tmin() || cols.ts_min > t.tmax() {
                        return;
                    }
                    for (&key, &ts) in column.iter().zip(&cols.ts) {
                        let (i, j) = unpack(key);
                        if range.contains(i, j) && t.contains(ts) {
                            counter.add(i, j);
                        }
                    }
                }
            }
        });
        counter.into_clusters(q.zoom)
    }
}

/// Append-only in-memory columnar [`Retriever`].
pub struct ColumnarStore {
    inner: RwLock<Inner>,
    capacity: u64,
}

impl Default for ColumnarStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ColumnarStore {
    pub fn new() -> Self {
        Self::with_capacity_limit(u64::MAX)
    }

    /// A store that refuses to grow beyond `capacity` events.
    pub fn with_capacity_limit(capacity: u64) -> Self {
        Self {
            inner: RwLock::new(Inner::default()),
            capacity,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn len(&self) -> u64 {
        self.inner.read().rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn partition_count(&self) -> usize {
        self.inner.read().partitions.len()
    }

    /// Every stored event, grouped by partition; within a partition in
    /// ingestion order.
    pub fn events(&self) -> Vec<Event> {
        let inner = self.inner.read();
        let mut out = Vec::with_capacity(inner.rows as usize);
        for cols in inner.partitions.values() {
            out.extend((0..cols.len()).map(|row| cols.event(row, &inner.drivers)));
        }
        out
    }

    /// Runs [`EventColumns::check_consistency`] on every partition and checks
    /// that each row sits in the partition its cell names.
    pub fn check_consistency(&self) -> Result<(), String> {
        let inner = self.inner.read();
        let pz = ZoomLevel::new(PARTITION_ZOOM as i64).expect("partition zoom");
        let mut rows = 0u64;
        for (&(pi, pj), cols) in &inner.partitions {
            cols.check_consistency()?;
            if cols.cells_at(pz).any(|c| (c.i, c.j) != (pi, pj)) {
                return Err(format!("row outside its partition ({pi}, {pj})"));
            }
            rows += cols.len() as u64;
        }
        if rows != inner.rows {
            return Err(format!("row count {} disagrees with partitions {rows}", inner.rows));
        }
        Ok(())
    }

    /// Streams every stored event in the same order as [`ColumnarStore::events`].
    pub fn for_each_event(&self, mut f: impl FnMut(Event)) {
        let inner = self.inner.read();
        for cols in inner.partitions.values() {
            for row in 0..cols.len() {
                f(cols.event(row, &inner.drivers));
            }
        }
    }
}

impl Retriever for ColumnarStore {
    fn ingest_batch(&self, events: Vec<Event>) -> Result<IngestReport, StoreError> {
        let mut rejected = 0u64;
        let mut prepared = Vec::with_capacity(events.len());
        for event in events {
            match validate_event(event) {
                Ok(event) => {
                    let cells = precompute(event.pos);
                    prepared.push((event, cells));
                }
                Err(_) => rejected += 1,
            }
        }

        let mut inner = self.inner.write();
        let room = self.capacity.saturating_sub(inner.rows);
        let valid = prepared.len() as u64;
        let take = valid.min(room);
        for (event, cells) in prepared.into_iter().take(take as usize) {
            inner.append(event, cells);
        }
        let report = IngestReport {
            accepted: take,
            rejected,
        };
        if take < valid {
            return Err(StoreError::CapacityExhausted {
                capacity: self.capacity,
                report,
                dropped: valid - take,
            });
        }
        Ok(report)
    }

    fn aggregate(&self, query: &AggregateQuery) -> Result<Vec<ClusterResult>, StoreError> {
        Ok(self.inner.read().aggregate(query))
    }

    fn scan_count(&self, bbox: &BoundingBox, time: Option<&TimeRange>) -> Result<u64, StoreError> {
        let inner = self.inner.read();
        let mut count = 0u64;
        for cols in inner.partitions.values() {
            for row in 0..cols.len() {
                let p = GeoPoint::new(cols.lat[row], cols.lon[row]);
                if bbox.contains(&p) && time.is_none_or(|t| t.contains(cols.ts[row])) {
                    count += 1;
                }
            }
        }
        Ok(count)
    }

    fn stats(&self) -> Result<StoreStats, StoreError> {
        let inner = self.inner.read();
        Ok(StoreStats {
            events: inner.rows,
            extent: inner.extent,
            time: inner.time,
        })
    }
}
