//! Brute-force reference implementations for tests.
//!
//! Nothing here shares code with the grid or the store: snapping is done in
//! exact integer arithmetic on the bit pattern of the coordinate, and
//! aggregation is a plain loop over events with a `BTreeMap`.

use crate::geomodel::{Event, ZoomLevel};
use crate::store::AggregateQuery;
use std::cmp::Ordering;
use std::collections::BTreeMap;

/// `x = m * 2^e` exactly.
fn decompose(x: f64) -> (i128, i32) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as i128;
    let (m, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1i128 << 52), exp - 1075)
    };
    if bits >> 63 == 1 {
        (-m, e)
    } else {
        (m, e)
    }
}

/// Compares `x * 2^zoom` with `45 * odd`, exactly. Since the separation is
/// `90 / 2^zoom`, `45 * (2k + 1) / 2^zoom` is the midpoint between multiples
/// `k` and `k + 1`.
fn cmp_with_midpoint(x: f64, zoom: u8, odd: i64) -> Ordering {
    let (m, e) = decompose(x);
    let rhs = 45 * odd as i128;
    let s = e + zoom as i32;
    if s >= 0 {
        (m << s).cmp(&rhs)
    } else if -s > 80 {
        // |lhs| < 2^53 * 2^-80, far below any nonzero midpoint.
        0.cmp(&rhs)
    } else {
        m.cmp(&(rhs << -s))
    }
}

/// Index of the multiple of `90 / 2^zoom` nearest to `x`, ties toward +inf.
pub fn snap_index(x: f64, zoom: ZoomLevel) -> i64 {
    let z = zoom.value();
    let sep = 90.0 / (1u64 << z) as f64;
    let mut k = (x / sep).round() as i64;
    // Want 45(2k - 1) <= x·2^z < 45(2k + 1).
    while cmp_with_midpoint(x, z, 2 * k - 1) == Ordering::Less {
        k -= 1;
    }
    while cmp_with_midpoint(x, z, 2 * k + 1) != Ordering::Less {
        k += 1;
    }
    k
}

/// Snapped coordinate, `k * 90 / 2^zoom`.
pub fn snap_value(x: f64, zoom: ZoomLevel) -> f64 {
    snap_index(x, zoom) as f64 * 90.0 / (1u64 << zoom.value()) as f64
}

fn keeps(e: &Event, q: &AggregateQuery, lat: f64, lon: f64) -> bool {
    let (lo, hi) = (q.bbox.min(), q.bbox.max());
    let in_box = lo.lat <= lat && lat <= hi.lat && lo.lon <= lon && lon <= hi.lon;
    let in_time = q.time.is_none_or(|t| t.tmin() <= e.ts && e.ts <= t.tmax());
    in_box && in_time
}

/// Count per `(lat index, lon index)` cell of the events whose snapped
/// position lies inside the query box and whose timestamp lies inside the
/// query time range. Sorted by cell.
pub fn aggregate(events: &[Event], q: &AggregateQuery) -> Vec<((i64, i64), u64)> {
    let mut counts = BTreeMap::new();
    for e in events {
        let lat = snap_value(e.pos.lat, q.zoom);
        let lon = snap_value(e.pos.lon, q.zoom);
        if keeps(e, q, lat, lon) {
            let key = (snap_index(e.pos.lat, q.zoom), snap_index(e.pos.lon, q.zoom));
            *counts.entry(key).or_insert(0u64) += 1;
        }
    }
    counts.into_iter().collect()
}

/// Number of events the query should count in total.
pub fn filtered_count(events: &[Event], q: &AggregateQuery) -> u64 {
    events
        .iter()
        .filter(|e| keeps(e, q, snap_value(e.pos.lat, q.zoom), snap_value(e.pos.lon, q.zoom)))
        .count() as u64
}

/// Number of events whose raw position and timestamp match the query.
pub fn raw_count(events: &[Event], q: &AggregateQuery) -> u64 {
    events.iter().filter(|e| keeps(e, q, e.pos.lat, e.pos.lon)).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(v: i64) -> ZoomLevel {
        ZoomLevel::new(v).unwrap()
    }

    #[test]
    fn decompose_is_exact() {
        for x in [0.0, -0.0, 1.0, -2.5, 43.37, 1e-300, f64::MIN_POSITIVE / 4.0, 180.0] {
            let (m, e) = decompose(x);
            assert_eq!(m as f64 * 2f64.powi(e), x, "{x}");
        }
    }

    #[test]
    fn hand_checked_snaps() {
        assert_eq!(snap_index(0.0, z(0)), 0);
        assert_eq!(snap_index(45.0, z(0)), 1);
        assert_eq!(snap_index(-45.0, z(0)), 0);
        assert_eq!(snap_index(44.999999, z(0)), 0);
        assert_eq!(snap_index(-45.000001, z(0)), -1);
        assert_eq!(snap_index(180.0, z(0)), 2);
        assert_eq!(snap_index(-180.0, z(1)), -4);
        assert_eq!(snap_index(1e-310, z(17)), 0);
        assert_eq!(snap_index(-1e-310, z(17)), 0);
        // 43.37 / 0.0439453125 = 986.9...
        assert_eq!(snap_index(43.37, z(11)), 987);
    }
}
