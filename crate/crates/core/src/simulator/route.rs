use super::network::{NodeId, RoadNetwork};
use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RouteError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {to} is unreachable from {from}")]
    Unreachable { from: NodeId, to: NodeId },
}

/// A path through the network. `segments[k]` joins `nodes[k]` and `nodes[k + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub segments: Vec<usize>,
    /// Meters.
    pub length: f64,
}

#[derive(PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Shortest path by segment length. Among equally short paths the one whose
/// predecessor at each node has the lowest node id wins.
pub fn plan_route(net: &RoadNetwork, origin: NodeId, dest: NodeId) -> Result<Route, RouteError> {
    let src = net.node_index(origin).ok_or(RouteError::UnknownNode(origin))?;
    let dst = net.node_index(dest).ok_or(RouteError::UnknownNode(dest))?;
    if src == dst {
        return Ok(Route {
            nodes: vec![origin],
            segments: Vec::new(),
            length: 0.0,
        });
    }

    let n = net.nodes().len();
    let mut dist = vec![f64::INFINITY; n];
    // (predecessor node index, segment index)
    let mut pred: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Reverse((Dist(0.0), net.node_at(src).id, src)));

    while let Some(Reverse((Dist(d), _, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        if u == dst {
            break;
        }
        let uid = net.node_at(u).id;
        for &(v, s) in net.neighbours(u) {
            if done[v] {
                continue;
            }
            let nd = d + net.segments()[s].length;
            let better = match pred[v] {
                _ if nd < dist[v] => true,
                Some((p, _)) if nd == dist[v] => uid < net.node_at(p).id,
                _ => false,
            };
            if better {
                let improved = nd < dist[v];
                dist[v] = nd;
                pred[v] = Some((u, s));
                if improved {
                    heap.push(Reverse((Dist(nd), net.node_at(v).id, v)));
                }
            }
        }
    }

    if !done[dst] {
        return Err(RouteError::Unreachable { from: origin, to: dest });
    }
    let mut nodes = vec![dest];
    let mut segments = Vec::new();
    let mut at = dst;
    while let Some((p, s)) = pred[at] {
        nodes.push(net.node_at(p).id);
        segments.push(s);
        at = p;
    }
    nodes.reverse();
    segments.reverse();
    Ok(Route {
        nodes,
        segments,
        length: dist[dst],
    })
}
