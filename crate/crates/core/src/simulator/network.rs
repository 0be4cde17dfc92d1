use crate::geomodel::GeoPoint;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

pub type NodeId = u64;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("cannot read network file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("network JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("node {0} has an invalid position")]
    InvalidPosition(NodeId),
    #[error("segment references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("segment {from}->{to} must have a positive max speed, got {speed}")]
    NonPositiveSpeed { from: NodeId, to: NodeId, speed: f64 },
    #[error("segment {from}->{to} has zero length")]
    ZeroLength { from: NodeId, to: NodeId },
    #[error("network has no connected pair of nodes")]
    NoConnectedPair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub pos: GeoPoint,
}

/// Two-way road segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: NodeId,
    pub to: NodeId,
    /// Meters per second.
    pub max_speed: f64,
    /// Meters, derived from the endpoints.
    pub length: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeRecord {
    id: NodeId,
    lat: f64,
    lon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    from: NodeId,
    to: NodeId,
    max_speed_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkFile {
    nodes: Vec<NodeRecord>,
    segments: Vec<SegmentRecord>,
}

/// Equirectangular distance in meters, scaled by the cosine of the mean latitude.
pub fn segment_length(a: GeoPoint, b: GeoPoint) -> f64 {
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let dx = (b.lon - a.lon).to_radians() * mean_lat.cos() * EARTH_RADIUS_M;
    let dy = (b.lat - a.lat).to_radians() * EARTH_RADIUS_M;
    dx.hypot(dy)
}

/// Initial bearing from `a` to `b` in degrees `[0, 360)`, on the same
/// equirectangular approximation as [`segment_length`].
pub fn bearing(a: GeoPoint, b: GeoPoint) -> f64 {
    let mean_lat = ((a.lat + b.lat) / 2.0).to_radians();
    let east = (b.lon - a.lon) * mean_lat.cos();
    let north = b.lat - a.lat;
    let deg = east.atan2(north).to_degrees().rem_euclid(360.0);
    if deg >= 360.0 {
        0.0
    } else {
        deg
    }
}

/// An undirected road graph. Nodes are kept sorted by id.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    index: HashMap<NodeId, usize>,
    segments: Vec<Segment>,
    /// Per node: `(neighbour node index, segment index)`, sorted by neighbour id.
    adjacency: Vec<Vec<(usize, usize)>>,
    component_of: Vec<usize>,
    /// Node indices of each connected component, ascending.
    components: Vec<Vec<usize>>,
}

impl RoadNetwork {
    /// Builds a network from nodes and `(from, to, max_speed)` triples.
    pub fn new(mut nodes: Vec<Node>, links: &[(NodeId, NodeId, f64)]) -> Result<Self, NetworkError> {
        nodes.sort_by_key(|n| n.id);
        let mut index = HashMap::with_capacity(nodes.len());
        for (k, n) in nodes.iter().enumerate() {
            if !n.pos.is_valid() {
                return Err(NetworkError::InvalidPosition(n.id));
            }
            if index.insert(n.id, k).is_some() {
                return Err(NetworkError::DuplicateNode(n.id));
            }
        }

        let mut segments = Vec::with_capacity(links.len());
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(from, to, max_speed) in links {
            let a = *index.get(&from).ok_or(NetworkError::UnknownNode(from))?;
            let b = *index.get(&to).ok_or(NetworkError::UnknownNode(to))?;
            if !(max_speed > 0.0 && max_speed.is_finite()) {
                return Err(NetworkError::NonPositiveSpeed {
                    from,
                    to,
                    speed: max_speed,
                });
            }
            let length = segment_length(nodes[a].pos, nodes[b].pos);
            if length.is_nan() || length <= 0.0 {
                return Err(NetworkError::ZeroLength { from, to });
            }
            let s = segments.len();
            segments.push(Segment {
                from,
                to,
                max_speed,
                length,
            });
            adjacency[a].push((b, s));
            adjacency[b].push((a, s));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }

        let (component_of, components) = connected_components(&adjacency);
        if components.iter().all(|c| c.len() < 2) {
            return Err(NetworkError::NoConnectedPair);
        }
        Ok(Self {
            nodes,
            index,
            segments,
            adjacency,
            component_of,
            components,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        let nodes = file
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id,
                pos: GeoPoint::new(n.lat, n.lon),
            })
            .collect();
        let links: Vec<_> = file.segments.iter().map(|s| (s.from, s.to, s.max_speed_ms)).collect();
        Self::new(nodes, &links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| NetworkError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeRecord {
                    id: n.id,
                    lat: n.pos.lat,
                    lon: n.pos.lon,
                })
                .collect(),
            segments: self
                .segments
                .iter()
                .map(|s| SegmentRecord {
                    from: s.from,
                    to: s.to,
                    max_speed_ms: s.max_speed,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization is infallible")
    }

    /// Rectangular street grid. Node ids are `row * cols + col`, row 0 at
    /// `south_west`. Every `arterial_every`-th row and column is an
    /// arterial road with the faster speed limit.
    pub fn grid(spec: &GridSpec) -> Result<Self, NetworkError> {
        let mut nodes = Vec::with_capacity(spec.rows * spec.cols);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                nodes.push(Node {
                    id: (r * spec.cols + c) as NodeId,
                    pos: GeoPoint::new(
                        spec.south_west.lat + r as f64 * spec.spacing_deg,
                        spec.south_west.lon + c as f64 * spec.spacing_deg,
                    ),
                });
            }
        }
        let speed = |line: usize| {
            if spec.arterial_every > 0 && line.is_multiple_of(spec.arterial_every) {
                spec.arterial_speed
            } else {
                spec.street_speed
            }
        };
        let id = |r: usize, c: usize| (r * spec.cols + c) as NodeId;
        let mut links = Vec::new();
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                if c + 1 < spec.cols {
                    links.push((id(r, c), id(r, c + 1), speed(r)));
                }
                if r + 1 < spec.rows {
                    links.push((id(r, c), id(r + 1, c), speed(c)));
                }
            }
        }
        Self::new(nodes, &links)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.node_index(id).map(|k| &self.nodes[k])
    }

    pub(crate) fn node_at(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub(crate) fn neighbours(&self, idx: usize) -> &[(usize, usize)] {
        &self.adjacency[idx]
    }

    /// Node indices that belong to a component with at least two nodes.
    pub(crate) fn routable_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&k| self.components[self.component_of[k]].len() >= 2)
            .collect()
    }

    pub(crate) fn component_members(&self, idx: usize) -> &[usize] {
        &self.components[self.component_of[idx]]
    }

    pub fn same_component(&self, a: NodeId, b: NodeId) -> bool {
        match (self.node_index(a), self.node_index(b)) {
            (Some(x), Some(y)) => self.component_of[x] == self.component_of[y],
            _ => false,
        }
    }
}

fn connected_components(adjacency: &[Vec<(usize, usize)>]) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut component_of = vec![usize::MAX; adjacency.len()];
    let mut components = Vec::new();
    for start in 0..adjacency.len() {
        if component_of[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![start];
        component_of[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(v, _) in &adjacency[u] {
                if component_of[v] == usize::MAX {
                    component_of[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    (component_of, components)
}

/// Parameters for [`RoadNetwork::grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub south_west: GeoPoint,
    pub rows: usize,
    pub cols: usize,
    pub spacing_deg: f64,
    pub arterial_every: usize,
    pub arterial_speed: f64,
    pub street_speed: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            south_west: GeoPoint::new(43.0, -8.8),
            rows: 20,
            cols: 20,
            spacing_deg: 0.01,
            arterial_every: 5,
            arterial_speed: 25.0,
            street_speed: 13.9,
        }
    }
}
