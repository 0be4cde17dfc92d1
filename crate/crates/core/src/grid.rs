//! Zoom-aligned grid discretization.
//!
//! At zoom `z` the grid spacing is `90° / 2^z` on both axes, so each level
//! halves the spacing of the previous one and the on-screen distance between
//! neighbouring markers stays constant across zoom levels. A point is snapped
//! to the nearest multiple of the spacing on each axis and identified by the
//! integer multiple indices `(i, j)`. Every event stores its cell at all 18
//! levels so that clustering becomes a plain group-by-count on one column.
//!
//! The spacing is a power-of-two fraction of 90, so `i * separation` is
//! exact in binary floating point and cell centers round-trip without error.
//!
//! [`decimal_snap`] implements the older truncate-to-`d`-decimals scheme,
//! kept for comparing level-to-level granularity.

use crate::geomodel::{GeoPoint, GridCell, ZoomLevel};
use std::fmt;

/// Grid spacing in degrees at `zoom`: 90 at level 0, halved at every level.
pub fn separation(zoom: ZoomLevel) -> f64 {
    90.0 / (1u32 << zoom.value()) as f64
}

/// Index of the multiple of `sep` closest to `x`; exact ties go to the
/// larger multiple (round half toward +inf).
///
/// The quotient `x / sep` is only used as a first guess. The final choice
/// compares the two bracketing multiples directly; those subtractions are
/// exact (the operands are within a factor of two of each other) so the
/// result does not depend on quotient rounding.
pub(crate) fn nearest_multiple(x: f64, sep: f64) -> i32 {
    let mut k = (x / sep).floor() as i64;
    while (k as f64) * sep > x {
        k -= 1;
    }
    while ((k + 1) as f64) * sep <= x {
        k += 1;
    }
    let below = x - (k as f64) * sep;
    let above = ((k + 1) as f64) * sep - x;
    if above <= below {
        (k + 1) as i32
    } else {
        k as i32
    }
}

/// Smallest `k` with `k * sep >= x`.
pub(crate) fn first_multiple_at_or_above(x: f64, sep: f64) -> i64 {
    let mut k = (x / sep).ceil() as i64;
    while ((k - 1) as f64) * sep >= x {
        k -= 1;
    }
    while (k as f64) * sep < x {
        k += 1;
    }
    k
}

/// Largest `k` with `k * sep <= x`.
pub(crate) fn last_multiple_at_or_below(x: f64, sep: f64) -> i64 {
    let mut k = (x / sep).floor() as i64;
    while ((k + 1) as f64) * sep <= x {
        k += 1;
    }
    while (k as f64) * sep > x {
        k -= 1;
    }
    k
}

/// Snaps `p` to its cell at `zoom`.
pub fn snap(p: GeoPoint, zoom: ZoomLevel) -> GridCell {
    let sep = separation(zoom);
    GridCell {
        zoom,
        i: nearest_multiple(p.lat, sep),
        j: nearest_multiple(p.lon, sep),
    }
}

/// The coordinate every point snapped into `c` is displayed at.
pub fn cell_center(c: GridCell) -> GeoPoint {
    let sep = separation(c.zoom);
    GeoPoint::new(c.i as f64 * sep, c.j as f64 * sep)
}

/// An event position's cells at every zoom level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiResPoint {
    cells: [GridCell; ZoomLevel::COUNT],
}

impl MultiResPoint {
    pub fn cells(&self) -> &[GridCell; ZoomLevel::COUNT] {
        &self.cells
    }

    pub fn at(&self, zoom: ZoomLevel) -> GridCell {
        self.cells[zoom.index()]
    }
}

pub fn precompute(p: GeoPoint) -> MultiResPoint {
    let mut cells = [GridCell {
        zoom: ZoomLevel::new(0).expect("level 0"),
        i: 0,
        j: 0,
    }; ZoomLevel::COUNT];
    for zoom in ZoomLevel::all() {
        cells[zoom.index()] = snap(p, zoom);
    }
    MultiResPoint { cells }
}

/// Number of kept decimals for [`decimal_snap`], 2 through 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DecimalPrecision(u8);

impl DecimalPrecision {
    pub const MIN: u8 = 2;
    pub const MAX: u8 = 8;

    pub fn new(d: u8) -> Result<Self, DecimalPrecisionError> {
        if (Self::MIN..=Self::MAX).contains(&d) {
            Ok(Self(d))
        } else {
            Err(DecimalPrecisionError(d))
        }
    }

    pub fn decimals(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = DecimalPrecision> {
        (Self::MIN..=Self::MAX).map(DecimalPrecision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("decimal precision {0} outside 2..=8")]
pub struct DecimalPrecisionError(pub u8);

impl fmt::Display for DecimalPrecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Truncates both coordinates toward zero to `d` decimals.
///
/// Truncation works on the shortest decimal representation of the value, so
/// `43.37` stays `43.37` at any precision even though its binary value is
/// slightly below the decimal one.
pub fn decimal_snap(p: GeoPoint, d: DecimalPrecision) -> GeoPoint {
    GeoPoint::new(truncate_decimal(p.lat, d.0), truncate_decimal(p.lon, d.0))
}

fn truncate_decimal(x: f64, decimals: u8) -> f64 {
    let text = format!("{x}");
    let truncated = match text.split_once('.') {
        Some((whole, frac)) if frac.len() > decimals as usize => {
            format!("{whole}.{}", &frac[..decimals as usize])
        }
        _ => return x,
    };
    let v: f64 = truncated.parse().expect("truncated decimal text parses");
    // -0.001 truncated to 2 decimals is "-0.00"; normalize the sign.
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn z(v: i64) -> ZoomLevel {
        ZoomLevel::new(v).unwrap()
    }

    #[test]
    fn separation_values() {
        assert_eq!(separation(z(0)), 90.0);
        assert_eq!(separation(z(1)), 45.0);
        assert_eq!(separation(z(11)), 0.0439453125);
        // The commonly quoted 0.043945312 is this value truncated to 9 decimals.
        assert_eq!((separation(z(11)) * 1e9).trunc(), 43_945_312.0);
    }

    #[test]
    fn separation_matches_repeated_halving_bit_exactly() {
        let mut s = 90.0f64;
        for zoom in ZoomLevel::all() {
            assert_eq!(separation(zoom).to_bits(), s.to_bits(), "zoom {zoom}");
            s /= 2.0;
        }
    }

    #[test]
    fn snap_examples() {
        for zoom in ZoomLevel::all() {
            let c = snap(GeoPoint::new(0.0, 0.0), zoom);
            assert_eq!((c.i, c.j), (0, 0));
        }
        let c = snap(GeoPoint::new(43.37, -8.40), z(11));
        assert_eq!((c.i, c.j), (987, -191));
        assert_eq!(cell_center(c), GeoPoint::new(43.3740234375, -8.3935546875));

        let c = snap(GeoPoint::new(0.02197265625, 0.0), z(11));
        assert_eq!((c.i, c.j), (1, 0));
    }

    #[test]
    fn ties_round_toward_positive_infinity() {
        let sep = separation(z(11));
        assert_eq!(nearest_multiple(sep / 2.0, sep), 1);
        assert_eq!(nearest_multiple(-sep / 2.0, sep), 0);
        assert_eq!(nearest_multiple(-1.5 * sep, sep), -1);
        assert_eq!(nearest_multiple(2.5 * sep, sep), 3);
        // Neighbouring floats on either side of a tie.
        let tie = 2.5 * sep;
        assert_eq!(nearest_multiple(f64::from_bits(tie.to_bits() - 1), sep), 2);
        assert_eq!(nearest_multiple(f64::from_bits(tie.to_bits() + 1), sep), 3);
    }

    #[test]
    fn domain_edges_snap_to_valid_centers() {
        for zoom in ZoomLevel::all() {
            for p in [
                GeoPoint::new(90.0, 180.0),
                GeoPoint::new(-90.0, -180.0),
                GeoPoint::new(89.999, 179.999),
            ] {
                let center = cell_center(snap(p, zoom));
                assert!(center.is_valid(), "{center} at zoom {zoom}");
            }
        }
    }

    #[test]
    fn cell_center_examples() {
        let c = GridCell { zoom: z(0), i: 0, j: 0 };
        assert_eq!(cell_center(c), GeoPoint::new(0.0, 0.0));
        let c = GridCell {
            zoom: z(11),
            i: 987,
            j: -191,
        };
        assert_eq!(cell_center(c), GeoPoint::new(43.3740234375, -8.3935546875));
        let c = GridCell { zoom: z(5), i: 4, j: 4 };
        assert_eq!(cell_center(c), GeoPoint::new(11.25, 11.25));
    }

    #[test]
    fn precompute_examples() {
        let m = precompute(GeoPoint::new(0.0, 0.0));
        assert!(m.cells().iter().all(|c| c.i == 0 && c.j == 0));

        let m = precompute(GeoPoint::new(43.37, -8.40));
        let c11 = m.at(z(11));
        assert_eq!((c11.i, c11.j), (987, -191));
        assert_eq!((m.at(z(0)).i, m.at(z(0)).j), (0, 0));
        // Frozen from an exact rational nearest-multiple computation.
        let lat_idx = [
            0, 1, 2, 4, 8, 15, 31, 62, 123, 247, 493, 987, 1974, 3948, 7895, 15791, 31581, 63162,
        ];
        let lon_idx = [
            0, 0, 0, -1, -1, -3, -6, -12, -24, -48, -96, -191, -382, -765, -1529, -3058, -6117, -12233,
        ];
        for (zoom, cell) in m.cells().iter().enumerate() {
            assert_eq!(cell.zoom.index(), zoom);
            assert_eq!((cell.i, cell.j), (lat_idx[zoom], lon_idx[zoom]), "zoom {zoom}");
        }
    }

    #[test]
    fn decimal_snap_examples() {
        let d = |v| DecimalPrecision::new(v).unwrap();
        assert_eq!(
            decimal_snap(GeoPoint::new(43.376912, -8.401234), d(2)),
            GeoPoint::new(43.37, -8.40)
        );
        assert_eq!(
            decimal_snap(GeoPoint::new(43.37, -8.40), d(8)),
            GeoPoint::new(43.37, -8.40)
        );
        assert_eq!(
            decimal_snap(GeoPoint::new(-0.019, 0.019), d(2)),
            GeoPoint::new(-0.01, 0.01)
        );
        let zero = decimal_snap(GeoPoint::new(-0.001, 0.0), d(2));
        assert_eq!(zero.lat.to_bits(), 0.0f64.to_bits());
        assert!(DecimalPrecision::new(1).is_err());
        assert!(DecimalPrecision::new(9).is_err());
        assert_eq!(DecimalPrecision::all().count(), 7);
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| GeoPoint::new(lat, lon))
    }

    fn zoom() -> impl Strategy<Value = ZoomLevel> {
        (0i64..=17).prop_map(|v| ZoomLevel::new(v).unwrap())
    }

    proptest! {
        #[test]
        fn snapped_center_is_within_half_separation(p in point(), zoom in zoom()) {
            let half = separation(zoom) / 2.0;
            let c = cell_center(snap(p, zoom));
            prop_assert!((p.lat - c.lat).abs() <= half);
            prop_assert!((p.lon - c.lon).abs() <= half);
        }

        #[test]
        fn snap_is_idempotent_through_cell_center(p in point(), zoom in zoom()) {
            let c = snap(p, zoom);
            prop_assert_eq!(snap(cell_center(c), zoom), c);
        }

        #[test]
        fn finer_cell_pins_coarser_cell_within_one(p in point(), q_off in (-1.0f64..1.0, -1.0f64..1.0), zl in 0i64..17) {
            // Build a second point guaranteed to share p's cell at zl + 1.
            let fine = ZoomLevel::new(zl + 1).unwrap();
            let coarse = ZoomLevel::new(zl).unwrap();
            let half = separation(fine) / 2.0;
            let center = cell_center(snap(p, fine));
            let q = GeoPoint::new(
                (center.lat + q_off.0 * half).clamp(-90.0, 90.0),
                (center.lon + q_off.1 * half).clamp(-180.0, 180.0),
            );
            prop_assume!(snap(q, fine) == snap(p, fine));
            let (a, b) = (snap(p, coarse), snap(q, coarse));
            prop_assert!((a.i - b.i).abs() <= 1);
            prop_assert!((a.j - b.j).abs() <= 1);
        }

        #[test]
        fn decimal_snap_never_moves_away_from_zero(p in point(), d in 2u8..=8) {
            let s = decimal_snap(p, DecimalPrecision::new(d).unwrap());
            prop_assert!(s.lat.abs() <= p.lat.abs());
            prop_assert!(s.lon.abs() <= p.lon.abs());
            prop_assert!((p.lat - s.lat).abs() < 10f64.powi(-(d as i32)) + 1e-12);
        }
    }
}
