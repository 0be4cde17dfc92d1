//! Route simulator: drivers traverse a road network and report their
//! position once per simulated second.
//!
//! Every driver owns an independent random stream ([`driver_rng`]). Draws
//! happen in a fixed order:
//!
//! 1. origin: uniform over nodes that have at least one neighbour in their component;
//! 2. destination: uniform over the origin's component (may equal the origin,
//!    in which case the driver never moves and emits nothing);
//! 3. one speed factor, uniform over the configured range, for each route
//!    segment as it is entered, starting with the first.
//!
//! All drivers start together at `start_ts`; the `k`-th step of a driver is
//! reported at `start_ts + k * 1000`. A driver that reaches its destination
//! reports that final position and stops for good.

mod network;
mod route;

pub use network::{
    bearing, segment_length, GridSpec, NetworkError, Node, NodeId, RoadNetwork, Segment, EARTH_RADIUS_M,
};
pub use route::{plan_route, Route, RouteError};

use crate::geomodel::{Event, GeoPoint, Payload};
use crate::ingest::to_line;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::io::{self, Write};
use thiserror::Error;

/// Reported GPS accuracy of simulated fixes, meters.
pub const SIMULATED_ACCURACY_M: f64 = 5.0;

/// Remaining distances below this many meters count as arrived.
const ARRIVAL_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("driver count must be at least 1")]
    NoDrivers,
    #[error("speed factor range [{min}, {max}] must be non-empty and within (0, 2]")]
    BadSpeedRange { min: f64, max: f64 },
    #[error("start timestamp must be positive")]
    BadStart,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("writing dataset: {0}")]
    Io(#[from] io::Error),
}

/// Fraction of a segment's speed limit a driver travels at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedRange {
    pub min: f64,
    pub max: f64,
}

impl Default for SpeedRange {
    fn default() -> Self {
        Self { min: 0.8, max: 1.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub drivers: u32,
    pub seed: u64,
    pub speed: SpeedRange,
    /// Epoch milliseconds.
    pub start_ts: i64,
}

impl SimConfig {
    pub fn new(drivers: u32, seed: u64, start_ts: i64) -> Self {
        Self {
            drivers,
            seed,
            speed: SpeedRange::default(),
            start_ts,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.drivers == 0 {
            return Err(SimError::NoDrivers);
        }
        let SpeedRange { min, max } = self.speed;
        if !(min > 0.0 && min <= max && max <= 2.0) {
            return Err(SimError::BadSpeedRange { min, max });
        }
        if self.start_ts <= 0 {
            return Err(SimError::BadStart);
        }
        Ok(())
    }

    /// Zero-padded so lexicographic order matches driver index order.
    pub fn driver_id(&self, index: u32) -> String {
        let width = (self.drivers.saturating_sub(1)).to_string().len().max(4);
        format!("driver-{index:0width$}")
    }
}

/// The random stream of driver `index` under `seed`.
pub fn driver_rng(seed: u64, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub(crate) fn draw_factor(rng: &mut ChaCha8Rng, range: SpeedRange) -> f64 {
    rng.random_range(range.min..=range.max)
}

/// One driver's progress along its route.
#[derive(Debug, Clone)]
pub struct DriverState {
    pub driver_id: String,
    pub route: Route,
    /// Index into `route.segments` of the segment being driven.
    leg: usize,
    /// Meters travelled along the current leg, in route direction.
    offset: f64,
    factor: f64,
    steps: u64,
    finished: bool,
    rng: ChaCha8Rng,
    speed: SpeedRange,
}

impl DriverState {
    /// Places driver `index` at its random origin with its random destination.
    pub fn spawn(net: &RoadNetwork, cfg: &SimConfig, index: u32) -> Result<Self, SimError> {
        let mut rng = driver_rng(cfg.seed, index);
        let routable = net.routable_nodes();
        let origin = routable[rng.random_range(0..routable.len())];
        let members = net.component_members(origin);
        let dest = members[rng.random_range(0..members.len())];
        let route = plan_route(net, net.node_at(origin).id, net.node_at(dest).id)?;
        Ok(Self::on_route(cfg.driver_id(index), route, rng, cfg.speed))
    }

    /// Starts a driver at the beginning of `route`, drawing the first
    /// segment's speed factor from `rng`.
    pub fn on_route(driver_id: String, route: Route, mut rng: ChaCha8Rng, speed: SpeedRange) -> Self {
        let finished = route.segments.is_empty();
        let factor = if finished { 0.0 } else { draw_factor(&mut rng, speed) };
        Self {
            driver_id,
            route,
            leg: 0,
            offset: 0.0,
            factor,
            steps: 0,
            finished,
            rng,
            speed,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Meters along the current segment.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    /// Advances by `dt` seconds and reports the new position, or `None` once
    /// the destination has been reached. Time left over after finishing a
    /// segment is spent on the next one at that segment's freshly drawn speed.
    pub fn step(&mut self, net: &RoadNetwork, dt: f64, start_ts: i64) -> Option<Event> {
        if self.finished {
            return None;
        }
        let mut time_left = dt;
        loop {
            let seg = &net.segments()[self.route.segments[self.leg]];
            let speed = self.factor * seg.max_speed;
            let to_end = seg.length - self.offset;
            let reach = speed * time_left;
            if reach < to_end - ARRIVAL_TOLERANCE_M {
                self.offset += reach;
                break;
            }
            time_left = (time_left - to_end / speed).max(0.0);
            if self.leg + 1 == self.route.segments.len() {
                self.offset = seg.length;
                self.finished = true;
                break;
            }
            self.leg += 1;
            self.offset = 0.0;
            self.factor = draw_factor(&mut self.rng, self.speed);
            if time_left == 0.0 {
                break;
            }
        }
        self.steps += 1;
        Some(self.report(net, start_ts))
    }

    fn report(&self, net: &RoadNetwork, start_ts: i64) -> Event {
        let seg = &net.segments()[self.route.segments[self.leg]];
        let a = net.node(self.route.nodes[self.leg]).expect("route node").pos;
        let b = net.node(self.route.nodes[self.leg + 1]).expect("route node").pos;
        let t = (self.offset / seg.length).clamp(0.0, 1.0);
        Event {
            driver_id: self.driver_id.clone(),
            pos: GeoPoint::new(a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t),
            alt: None,
            ts: start_ts + self.steps as i64 * 1000,
            speed: self.factor * seg.max_speed,
            bearing: bearing(a, b),
            accuracy: SIMULATED_ACCURACY_M,
            payload: Payload::new(),
        }
    }
}

/// Lazily generated event stream ordered by timestamp, then driver id.
pub struct Simulation<'a> {
    net: &'a RoadNetwork,
    start_ts: i64,
    drivers: Vec<DriverState>,
    pending: VecDeque<Event>,
}

impl<'a> Simulation<'a> {
    pub fn new(net: &'a RoadNetwork, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let drivers = (0..cfg.drivers)
            .map(|k| DriverState::spawn(net, cfg, k))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            net,
            start_ts: cfg.start_ts,
            drivers,
            pending: VecDeque::new(),
        })
    }

    pub fn drivers(&self) -> &[DriverState] {
        &self.drivers
    }

    /// Advances every active driver one second; returns false once all are done.
    fn tick(&mut self) -> bool {
        let mut any = false;
        for d in &mut self.drivers {
            if let Some(e) = d.step(self.net, 1.0, self.start_ts) {
                self.pending.push_back(e);
                any = true;
            }
        }
        any
    }
}

impl Iterator for Simulation<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        while self.pending.is_empty() {
            if !self.tick() {
                return None;
            }
        }
        self.pending.pop_front()
    }
}

/// Runs the whole simulation and writes it as NDJSON. Returns the number of
/// events written.
pub fn simulate<W: Write>(net: &RoadNetwork, cfg: &SimConfig, out: W) -> Result<u64, SimError> {
    let mut out = io::BufWriter::new(out);
    let mut count = 0u64;
    for event in Simulation::new(net, cfg)? {
        out.write_all(to_line(&event).as_bytes())?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}
