use geoagg_core::grid::{cell_center, precompute, separation, snap};
use geoagg_core::oracle;
use geoagg_core::{
    AggregateQuery, BoundingBox, ColumnarStore, Event, GeoPoint, Payload, Retriever, TimeRange, ZoomLevel,
};
use proptest::prelude::*;

fn event(lat: f64, lon: f64, ts: i64) -> Event {
    Event {
        driver_id: "d".into(),
        pos: GeoPoint::new(lat, lon),
        alt: None,
        ts,
        speed: 1.0,
        bearing: 0.0,
        accuracy: 1.0,
        payload: Payload::new(),
    }
}

fn zoom() -> impl Strategy<Value = ZoomLevel> {
    (0i64..=17).prop_map(|z| ZoomLevel::new(z).unwrap())
}

/// Coordinates that often land exactly on multiples and half-multiples of
/// some separation, where snapping ties live.
fn coord(limit: f64) -> impl Strategy<Value = f64> {
    prop_oneof![
        3 => -limit..=limit,
        1 => (0u8..=17, -1000i64..=1000).prop_map(move |(z, k)| {
            let sep = 90.0 / (1u64 << z) as f64;
            (k as f64 * sep / 2.0).clamp(-limit, limit)
        }),
        1 => (0u32..=1000).prop_map(move |k| (43.0 + k as f64 * 1e-3).min(limit)),
    ]
}

fn events(max: usize) -> impl Strategy<Value = Vec<Event>> {
    // A local cluster plus global scatter.
    let local = (42.9f64..43.6, -8.9f64..-8.1, 1i64..=100).prop_map(|(a, b, t)| event(a, b, t));
    let global = (coord(90.0), coord(180.0), 1i64..=100).prop_map(|(a, b, t)| event(a, b, t));
    prop::collection::vec(prop_oneof![3 => local, 1 => global], 0..max)
}

fn query() -> impl Strategy<Value = AggregateQuery> {
    let local = (42.8f64..43.7, 0.0f64..0.8, -9.0f64..-8.0, 0.0f64..0.8)
        .prop_map(|(lat, h, lon, w)| BoundingBox::from_bounds(lat, lon, (lat + h).min(90.0), lon + w).unwrap());
    let global = (coord(90.0), coord(90.0), coord(180.0), coord(180.0))
        .prop_map(|(a, b, c, d)| BoundingBox::from_bounds(a.min(b), c.min(d), a.max(b), c.max(d)).unwrap());
    let time = prop::option::of((1i64..=100, 0i64..=100).prop_map(|(t, w)| TimeRange::new(t, t + w).unwrap()));
    (prop_oneof![3 => local, 1 => global], zoom(), time).prop_map(|(bbox, zoom, time)| AggregateQuery {
        bbox,
        zoom,
        time,
    })
}

fn store_of(events: &[Event]) -> ColumnarStore {
    let store = ColumnarStore::new();
    store.ingest_batch(events.to_vec()).unwrap();
    store
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aggregate_matches_brute_force(events in events(600), queries in prop::collection::vec(query(), 1..6)) {
        let store = store_of(&events);
        for q in &queries {
            let got: Vec<((i64, i64), u64)> = store
                .aggregate(q)
                .unwrap()
                .into_iter()
                .map(|c| ((c.cell.i as i64, c.cell.j as i64), c.count))
                .collect();
            let want = oracle::aggregate(&events, q);
            prop_assert_eq!(&got, &want);
            let total: u64 = got.iter().map(|(_, n)| n).sum();
            prop_assert_eq!(total, oracle::filtered_count(&events, q));
            prop_assert_eq!(store.scan_count(&q.bbox, q.time.as_ref()).unwrap(), oracle::raw_count(&events, q));
        }
    }

    #[test]
    fn clusters_sit_on_the_grid_inside_the_box(events in events(300), q in query()) {
        let sep = separation(q.zoom);
        for c in store_of(&events).aggregate(&q).unwrap() {
            prop_assert!(c.count >= 1);
            prop_assert!(q.bbox.contains(&c.pos));
            prop_assert_eq!(c.pos.lat, c.cell.i as f64 * sep);
            prop_assert_eq!(c.pos.lon, c.cell.j as f64 * sep);
            prop_assert_eq!(c.cell.zoom, q.zoom);
        }
    }

    #[test]
    fn world_query_counts_every_event_at_every_zoom(events in events(300)) {
        let store = store_of(&events);
        for zoom in ZoomLevel::all() {
            let q = AggregateQuery::new(BoundingBox::world(), zoom);
            let total: u64 = store.aggregate(&q).unwrap().iter().map(|c| c.count).sum();
            prop_assert_eq!(total, events.len() as u64);
        }
    }

    #[test]
    fn snap_matches_brute_force(lat in coord(90.0), lon in coord(180.0), z in zoom()) {
        let cell = snap(GeoPoint::new(lat, lon), z);
        prop_assert_eq!(cell.i as i64, oracle::snap_index(lat, z));
        prop_assert_eq!(cell.j as i64, oracle::snap_index(lon, z));
        let c = cell_center(cell);
        prop_assert_eq!(c.lat, oracle::snap_value(lat, z));
        prop_assert_eq!(c.lon, oracle::snap_value(lon, z));
        prop_assert_eq!(precompute(GeoPoint::new(lat, lon)).at(z), cell);
    }

    #[test]
    fn ingest_order_does_not_matter(events in events(300), q in query(), split in 0usize..300) {
        let forward = store_of(&events);
        let split = split.min(events.len());
        let chunked = ColumnarStore::new();
        chunked.ingest_batch(events[split..].to_vec()).unwrap();
        chunked.ingest_batch(events[..split].to_vec()).unwrap();
        prop_assert_eq!(forward.aggregate(&q).unwrap(), chunked.aggregate(&q).unwrap());
    }
}

#[test]
fn three_event_fixture() {
    let events = [event(10.0, 10.0, 1), event(12.0, 12.0, 2), event(20.0, 20.0, 3)];
    let store = store_of(&events);
    let q = AggregateQuery::new(
        BoundingBox::from_bounds(0.0, 0.0, 30.0, 30.0).unwrap(),
        ZoomLevel::new(5).unwrap(),
    );
    let got: Vec<(f64, f64, u64)> = store
        .aggregate(&q)
        .unwrap()
        .iter()
        .map(|c| (c.pos.lat, c.pos.lon, c.count))
        .collect();
    assert_eq!(got, vec![(11.25, 11.25, 2), (19.6875, 19.6875, 1)]);
}

#[test]
fn cell_center_edge_effect() {
    // Raw point inside the box, but its zoom-5 cell center (11.25) is not.
    let store = store_of(&[event(11.0, 11.0, 1)]);
    let q = AggregateQuery::new(
        BoundingBox::from_bounds(10.5, 10.5, 11.2, 11.2).unwrap(),
        ZoomLevel::new(5).unwrap(),
    );
    assert!(store.aggregate(&q).unwrap().is_empty());
    assert_eq!(store.scan_count(&q.bbox, None).unwrap(), 1);
}
