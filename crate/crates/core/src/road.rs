//! Static undirected road graph between charging-station locations.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{BusId, Coord};

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadNode {
    pub id: NodeId,
    pub bus_id: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
}

impl RoadNode {
    pub fn coord(&self) -> Option<Coord> {
        Some(Coord {
            lat: self.lat?,
            lon: self.lon?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub a: NodeId,
    pub b: NodeId,
    pub miles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadFile {
    pub nodes: Vec<RoadNode>,
    pub edges: Vec<RoadEdge>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RoadError {
    #[error("duplicate road node {0}")]
    DuplicateNode(NodeId),
    #[error("unknown road node {0}")]
    UnknownNode(NodeId),
    #[error("self-loop on road node {0}")]
    SelfLoop(NodeId),
    #[error("edge {0}-{1} must have positive finite miles, got {2}")]
    BadLength(NodeId, NodeId, f64),
    #[error("nodes {0} and {1} are not adjacent")]
    NotAdjacent(NodeId, NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub miles: f64,
}

/// Validated graph with symmetric adjacency. Parallel edges collapse to the
/// shortest one.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadGraph {
    nodes: BTreeMap<NodeId, RoadNode>,
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, f64>>,
}

impl TryFrom<RoadFile> for RoadGraph {
    type Error = RoadError;

    fn try_from(file: RoadFile) -> Result<Self, RoadError> {
        RoadGraph::new(file.nodes, file.edges)
    }
}

impl RoadGraph {
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self, RoadError> {
        let mut by_id = BTreeMap::new();
        let mut adjacency: BTreeMap<NodeId, BTreeMap<NodeId, f64>> = BTreeMap::new();
        for node in nodes {
            let id = node.id;
            if by_id.insert(id, node).is_some() {
                return Err(RoadError::DuplicateNode(id));
            }
            adjacency.insert(id, BTreeMap::new());
        }
        for e in edges {
            for end in [e.a, e.b] {
                if !by_id.contains_key(&end) {
                    return Err(RoadError::UnknownNode(end));
                }
            }
            if e.a == e.b {
                return Err(RoadError::SelfLoop(e.a));
            }
            if !(e.miles > 0.0 && e.miles.is_finite()) {
                return Err(RoadError::BadLength(e.a, e.b, e.miles));
            }
            for (u, v) in [(e.a, e.b), (e.b, e.a)] {
                let slot = adjacency.get_mut(&u).unwrap().entry(v).or_insert(e.miles);
                *slot = slot.min(e.miles);
            }
        }
        Ok(RoadGraph {
            nodes: by_id,
            adjacency,
        })
    }

    pub fn to_file(&self) -> RoadFile {
        let edges = self
            .adjacency
            .iter()
            .flat_map(|(&a, nbrs)| {
                nbrs.iter()
                    .filter(move |(&b, _)| a < b)
                    .map(move |(&b, &miles)| RoadEdge { a, b, miles })
            })
            .collect();
        RoadFile {
            nodes: self.nodes.values().cloned().collect(),
            edges,
        }
    }

    pub fn node(&self, id: NodeId) -> Option<&RoadNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &RoadNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub fn neighbours(&self, id: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.adjacency
            .get(&id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&n, &w)| (n, w)))
    }

    pub fn edge_miles(&self, a: NodeId, b: NodeId) -> Option<f64> {
        self.adjacency.get(&a)?.get(&b).copied()
    }

    pub fn max_edge_miles(&self) -> f64 {
        self.adjacency
            .values()
            .flat_map(|m| m.values())
            .copied()
            .fold(0.0, f64::max)
    }

    /// Minimum-mileage route; among equal-mileage routes the lexicographically
    /// smallest node sequence wins. `Ok(None)` when `dest` is unreachable.
    pub fn shortest_path(&self, origin: NodeId, dest: NodeId) -> Result<Option<Route>, RoadError> {
        for id in [origin, dest] {
            if !self.contains(id) {
                return Err(RoadError::UnknownNode(id));
            }
        }
        let mut dist: BTreeMap<NodeId, f64> = BTreeMap::from([(origin, 0.0)]);
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut settled: BTreeMap<NodeId, ()> = BTreeMap::new();
        let mut heap = BinaryHeap::from([Frontier {
            miles: 0.0,
            node: origin,
        }]);

        while let Some(Frontier { miles, node }) = heap.pop() {
            if settled.insert(node, ()).is_some() {
                continue;
            }
            if node == dest {
                break;
            }
            for (next, w) in self.neighbours(node) {
                if settled.contains_key(&next) {
                    continue;
                }
                let candidate = miles + w;
                let better = match dist.get(&next) {
                    None => true,
                    Some(&d) if candidate < d => true,
                    Some(&d) if candidate == d => {
                        let mut via_node = path_to(&prev, origin, node);
                        via_node.push(next);
                        via_node < path_to(&prev, origin, next)
                    }
                    Some(_) => false,
                };
                if better {
                    dist.insert(next, candidate);
                    prev.insert(next, node);
                    heap.push(Frontier {
                        miles: candidate,
                        node: next,
                    });
                }
            }
        }

        Ok(dist.get(&dest).map(|&miles| Route {
            nodes: path_to(&prev, origin, dest),
            miles,
        }))
    }

    /// Per-edge miles along `path`.
    pub fn leg_distances(&self, path: &[NodeId]) -> Result<Vec<f64>, RoadError> {
        if let Some(&first) = path.first() {
            if !self.contains(first) {
                return Err(RoadError::UnknownNode(first));
            }
        }
        path.windows(2)
            .map(|w| self.edge_miles(w[0], w[1]).ok_or(RoadError::NotAdjacent(w[0], w[1])))
            .collect()
    }
}

fn path_to(prev: &BTreeMap<NodeId, NodeId>, origin: NodeId, node: NodeId) -> Vec<NodeId> {
    let mut path = vec![node];
    let mut cur = node;
    while cur != origin {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

#[derive(Debug, PartialEq)]
struct Frontier {
    miles: f64,
    node: NodeId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // min-heap on miles, then node id
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .miles
            .total_cmp(&self.miles)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
