//! Newline-delimited JSON event wire format and batched loading.
//!
//! One event per line:
//!
//! ```json
//! {"driverId":"d1","lat":43.37,"lon":-8.4,"timestamp":1514764800000,"speed":13.9,"bearing":90,"accuracy":5}
//! ```
//!
//! `alt` and `payload` are optional. Any other top-level key is folded into
//! the payload.

use crate::geomodel::{validate_event, Event, GeoPoint, Payload, ValidationError};
use crate::store::{Retriever, StoreError};
use serde::Serialize;
use serde_json::Value;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_BATCH_SIZE: usize = 10_000;

const KNOWN_KEYS: [&str; 9] = [
    "driverId",
    "lat",
    "lon",
    "alt",
    "timestamp",
    "speed",
    "bearing",
    "accuracy",
    "payload",
];

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed JSON: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("malformed JSON: line is not valid UTF-8")]
    NotUtf8,
    #[error("event must be a JSON object")]
    NotAnObject,
    #[error("missing required key: {0}")]
    MissingKey(&'static str),
    #[error("key {key} must be {expected}")]
    WrongType { key: &'static str, expected: &'static str },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// Decodes one line without range validation.
pub fn decode_line(text: &str) -> Result<Event, ParseError> {
    let value: Value = serde_json::from_str(text)?;
    let Value::Object(mut obj) = value else {
        return Err(ParseError::NotAnObject);
    };

    fn number(obj: &serde_json::Map<String, Value>, key: &'static str) -> Result<f64, ParseError> {
        match obj.get(key) {
            None => Err(ParseError::MissingKey(key)),
            Some(v) => v.as_f64().ok_or(ParseError::WrongType {
                key,
                expected: "a number",
            }),
        }
    }

    let driver_id = match obj.get("driverId") {
        None => return Err(ParseError::MissingKey("driverId")),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(ParseError::WrongType {
                key: "driverId",
                expected: "a string",
            })
        }
    };
    let lat = number(&obj, "lat")?;
    let lon = number(&obj, "lon")?;
    let ts = match obj.get("timestamp") {
        None => return Err(ParseError::MissingKey("timestamp")),
        Some(v) => v.as_i64().ok_or(ParseError::WrongType {
            key: "timestamp",
            expected: "an integer",
        })?,
    };
    let speed = number(&obj, "speed")?;
    let bearing = number(&obj, "bearing")?;
    let accuracy = number(&obj, "accuracy")?;
    let alt = match obj.get("alt") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_f64().ok_or(ParseError::WrongType {
            key: "alt",
            expected: "a number",
        })?),
    };
    let mut payload = match obj.remove("payload") {
        None | Some(Value::Null) => Payload::new(),
        Some(Value::Object(map)) => map,
        Some(_) => {
            return Err(ParseError::WrongType {
                key: "payload",
                expected: "an object",
            })
        }
    };
    for (key, value) in obj {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            payload.entry(key).or_insert(value);
        }
    }

    Ok(Event {
        driver_id,
        pos: GeoPoint::new(lat, lon),
        alt,
        ts,
        speed,
        bearing,
        accuracy,
        payload,
    })
}

/// Decodes and validates one line.
pub fn parse_line(text: &str) -> Result<Event, ParseError> {
    Ok(validate_event(decode_line(text)?)?)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct WireEvent<'a> {
    driver_id: &'a str,
    lat: f64,
    lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alt: Option<f64>,
    timestamp: i64,
    speed: f64,
    bearing: f64,
    accuracy: f64,
    #[serde(skip_serializing_if = "Payload::is_empty")]
    payload: &'a Payload,
}

/// Serializes `event` as one line (without the trailing newline).
pub fn to_line(event: &Event) -> String {
    serde_json::to_string(&WireEvent {
        driver_id: &event.driver_id,
        lat: event.pos.lat,
        lon: event.pos.lon,
        alt: event.alt,
        timestamp: event.ts,
        speed: event.speed,
        bearing: event.bearing,
        accuracy: event.accuracy,
        payload: &event.payload,
    })
    .expect("event serialization is infallible")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub accepted: u64,
    pub rejected: u64,
    pub parse_errors: u64,
    #[serde(skip)]
    pub batches: u64,
}

impl LoadReport {
    pub fn lines(&self) -> u64 {
        self.accepted + self.rejected + self.parse_errors
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: String, source: io::Error },
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("batch size must be positive")]
    ZeroBatchSize,
    #[error("{source} (loaded so far: {report:?})")]
    Store { source: StoreError, report: LoadReport },
}

/// Streams NDJSON from `reader` into `retriever` in batches of `batch_size`.
/// Lines that fail to decode (including blank lines) are counted and skipped.
pub fn load_reader<R, T>(mut reader: R, retriever: &T, batch_size: usize) -> Result<LoadReport, IngestError>
where
    R: BufRead,
    T: Retriever + ?Sized,
{
    if batch_size == 0 {
        return Err(IngestError::ZeroBatchSize);
    }
    let mut report = LoadReport::default();
    let mut batch = Vec::with_capacity(batch_size.min(DEFAULT_BATCH_SIZE));
    let mut line = Vec::new();
    loop {
        line.clear();
        if reader.read_until(b'\n', &mut line)? == 0 {
            break;
        }
        if line.last() == Some(&b'\n') {
            line.pop();
            if line.last() == Some(&b'\r') {
                line.pop();
            }
        }
        let decoded = std::str::from_utf8(&line)
            .map_err(|_| ParseError::NotUtf8)
            .and_then(decode_line);
        match decoded {
            Ok(event) => batch.push(event),
            Err(_) => report.parse_errors += 1,
        }
        if batch.len() == batch_size {
            flush(retriever, &mut batch, &mut report)?;
        }
    }
    if !batch.is_empty() {
        flush(retriever, &mut batch, &mut report)?;
    }
    Ok(report)
}

fn flush<T: Retriever + ?Sized>(
    retriever: &T,
    batch: &mut Vec<Event>,
    report: &mut LoadReport,
) -> Result<(), IngestError> {
    report.batches += 1;
    match retriever.ingest_batch(std::mem::take(batch)) {
        Ok(r) => {
            report.accepted += r.accepted;
            report.rejected += r.rejected;
            Ok(())
        }
        Err(source) => {
            if let StoreError::CapacityExhausted { report: partial, .. } = &source {
                report.accepted += partial.accepted;
                report.rejected += partial.rejected;
            }
            Err(IngestError::Store {
                source,
                report: *report,
            })
        }
    }
}

pub fn load_file<T: Retriever + ?Sized>(
    path: impl AsRef<Path>,
    retriever: &T,
    batch_size: usize,
) -> Result<LoadReport, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    load_reader(BufReader::with_capacity(1 << 20, file), retriever, batch_size)
}
