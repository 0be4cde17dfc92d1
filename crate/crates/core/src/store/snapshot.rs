//! Binary dump/load of a [`ColumnarStore`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "GEOAGGSN"
//! version  u32      currently 1
//! rows     u64
//! rows × { driver_len u32, driver bytes,
//!          ts i64, lat f64, lon f64, alt f64 (NaN = absent),
//!          speed f64, bearing f64, accuracy f64,
//!          payload_len u32, payload JSON bytes (0 = empty) }
//! ```
//!
//! Cell columns are not stored; they are recomputed on load.

use super::{ColumnarStore, Retriever, StoreError};
use crate::geomodel::{Event, GeoPoint, Payload};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"GEOAGGSN";
pub const SNAPSHOT_VERSION: u32 = 1;

const LOAD_BATCH: usize = 10_000;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ColumnarStore {
    /// Writes every stored event to `w`.
    pub fn save_snapshot<W: Write>(&self, w: W) -> Result<u64, SnapshotError> {
        let mut w = io::BufWriter::new(w);
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.len().to_le_bytes())?;
        let mut written = 0u64;
        let mut result = Ok(());
        self.for_each_event(|e| {
            if result.is_ok() {
                result = write_row(&mut w, &e);
                written += 1;
            }
        });
        result?;
        w.flush()?;
        Ok(written)
    }

    /// Reads a snapshot into a fresh unbounded store.
    pub fn load_snapshot<R: Read>(r: R) -> Result<ColumnarStore, SnapshotError> {
        let store = ColumnarStore::new();
        let mut r = io::BufReader::new(r);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::UnsupportedVersion(version));
        }
        let rows = read_u64(&mut r)?;
        let mut batch = Vec::with_capacity(LOAD_BATCH);
        for _ in 0..rows {
            batch.push(read_row(&mut r)?);
            if batch.len() == LOAD_BATCH {
                ingest_all(&store, std::mem::take(&mut batch))?;
            }
        }
        ingest_all(&store, batch)?;
        Ok(store)
    }
}

fn ingest_all(store: &ColumnarStore, batch: Vec<Event>) -> Result<(), SnapshotError> {
    let n = batch.len() as u64;
    let report = store.ingest_batch(batch)?;
    if report.accepted != n {
        return Err(SnapshotError::Corrupt(format!(
            "{} rows failed validation",
            n - report.accepted
        )));
    }
    Ok(())
}

fn write_row<W: Write>(w: &mut W, e: &Event) -> Result<(), SnapshotError> {
    write_bytes(w, e.driver_id.as_bytes())?;
    w.write_all(&e.ts.to_le_bytes())?;
    for v in [
        e.pos.lat,
        e.pos.lon,
        e.alt.unwrap_or(f64::NAN),
        e.speed,
        e.bearing,
        e.accuracy,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    if e.payload.is_empty() {
        w.write_all(&0u32.to_le_bytes())?;
    } else {
        let json = serde_json::to_vec(&e.payload).map_err(io::Error::other)?;
        write_bytes(w, &json)?;
    }
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    let len = u32::try_from(bytes.len()).map_err(io::Error::other)?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(bytes)
}

fn read_row<R: Read>(r: &mut R) -> Result<Event, SnapshotError> {
    let driver_id = String::from_utf8(read_bytes(r)?).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    let ts = read_i64(r)?;
    let mut f = [0f64; 6];
    for v in &mut f {
        *v = f64::from_le_bytes(read_array(r)?);
    }
    let payload_bytes = read_bytes(r)?;
    let payload = if payload_bytes.is_empty() {
        Payload::new()
    } else {
        serde_json::from_slice(&payload_bytes).map_err(|e| SnapshotError::Corrupt(e.to_string()))?
    };
    Ok(Event {
        driver_id,
        pos: GeoPoint::new(f[0], f[1]),
        alt: (!f[2].is_nan()).then_some(f[2]),
        ts,
        speed: f[3],
        bearing: f[4],
        accuracy: f[5],
        payload,
    })
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    read_array(r).map(u32::from_le_bytes)
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    read_array(r).map(u64::from_le_bytes)
}

fn read_i64<R: Read>(r: &mut R) -> io::Result<i64> {
    read_array(r).map(i64::from_le_bytes)
}

fn read_bytes<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomodel::{BoundingBox, ZoomLevel};
    use crate::store::AggregateQuery;

    fn sample() -> ColumnarStore {
        let store = ColumnarStore::new();
        let mut events = Vec::new();
        for k in 0..50 {
            let mut payload = Payload::new();
            if k % 7 == 0 {
                payload.insert("route".into(), format!("R{k}").into());
            }
            events.push(Event {
                driver_id: format!("driver-{}", k % 5),
                pos: GeoPoint::new(43.0 + k as f64 * 0.01, -8.5 + k as f64 * 0.013),
                alt: (k % 3 == 0).then_some(k as f64),
                ts: 1_514_764_800_000 + k * 1000,
                speed: k as f64 * 0.5,
                bearing: (k * 17 % 360) as f64,
                accuracy: 4.0,
                payload,
            });
        }
        store.ingest_batch(events).unwrap();
        store
    }

    #[test]
    fn snapshot_round_trip_preserves_events_and_answers() {
        let store = sample();
        let mut buf = Vec::new();
        assert_eq!(store.save_snapshot(&mut buf).unwrap(), 50);
        assert_eq!(&buf[..8], SNAPSHOT_MAGIC);

        let loaded = ColumnarStore::load_snapshot(buf.as_slice()).unwrap();
        assert_eq!(loaded.events(), store.events());
        loaded.check_consistency().unwrap();
        let q = AggregateQuery::new(
            BoundingBox::from_bounds(42.0, -10.0, 45.0, -7.0).unwrap(),
            ZoomLevel::new(9).unwrap(),
        );
        assert_eq!(loaded.aggregate(&q).unwrap(), store.aggregate(&q).unwrap());
    }

    #[test]
    fn rejects_foreign_and_future_files() {
        let err = ColumnarStore::load_snapshot(&b"NOTASNAPxxxxxxxxxxxx"[..])
            .err()
            .unwrap();
        assert!(matches!(err, SnapshotError::BadMagic));

        let mut buf = SNAPSHOT_MAGIC.to_vec();
        buf.extend_from_slice(&99u32.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        let err = ColumnarStore::load_snapshot(buf.as_slice()).err().unwrap();
        assert!(matches!(err, SnapshotError::UnsupportedVersion(99)));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut buf = Vec::new();
        sample().save_snapshot(&mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(ColumnarStore::load_snapshot(buf.as_slice()).is_err());
    }
}
