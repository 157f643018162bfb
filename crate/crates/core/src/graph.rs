//! Undirected connected topologies, deterministic generators, BFS oracles and the
//! edge-list text format.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type NodeId = usize;

/// Attempts allowed for `gnp_connected` before giving up.
pub const GNP_MAX_TRIES: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate edge {0}-{1}")]
    DuplicateEdge(NodeId, NodeId),
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("node {node} out of range for n = {n}")]
    OutOfRange { node: NodeId, n: usize },
    #[error("graph is disconnected: node {0} unreachable from node 0")]
    Disconnected(NodeId),
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("no connected G(n, p) sample after {0} tries")]
    RetriesExhausted(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<NodeId>>,
}

impl Graph {
    /// Builds a graph from an edge list, enforcing every invariant: no self-loops,
    /// no duplicates, ids in range, connected.
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::InvalidParams("n must be at least 1".into()));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for &(u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(GraphError::OutOfRange { node: x, n });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !sets[u].insert(v) {
                return Err(GraphError::DuplicateEdge(u.min(v), u.max(v)));
            }
            sets[v].insert(u);
        }
        let g = Graph { adj: sets.into_iter().map(|s| s.into_iter().collect()).collect() };
        if let Some(unreached) = g.first_unreachable() {
            return Err(GraphError::Disconnected(unreached));
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        &self.adj[u]
    }

    pub fn degree(&self, u: NodeId) -> usize {
        self.adj[u].len()
    }

    pub fn has_edge(&self, u: NodeId, v: NodeId) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Edges with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// ⌈log₂ n⌉, floored at 1 so that phase lengths are never zero.
    pub fn log_n(&self) -> usize {
        ceil_log2(self.node_count())
    }

    fn first_unreachable(&self) -> Option<NodeId> {
        let levels = bfs_levels(&self.adj, 0);
        levels.iter().position(|l| l.is_none())
    }
}

/// ⌈log₂ n⌉ with a floor of 1.
pub fn ceil_log2(n: usize) -> usize {
    if n <= 2 {
        1
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

fn bfs_levels(adj: &[Vec<NodeId>], source: NodeId) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    let mut queue = VecDeque::new();
    level[source] = Some(0);
    queue.push_back(source);
    while let Some(u) = queue.pop_front() {
        let next = level[u].unwrap() + 1;
        for &v in &adj[u] {
            if level[v].is_none() {
                level[v] = Some(next);
                queue.push_back(v);
            }
        }
    }
    level
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GraphFamily {
    Path { n: usize },
    Cycle { n: usize },
    Star { n: usize },
    Grid { rows: usize, cols: usize },
    RandomTree { n: usize },
    GnpConnected { n: usize, p: f64 },
    /// A spine path with `legs` pendant leaves hanging off every spine node.
    Caterpillar { spine: usize, legs: usize },
}

impl GraphFamily {
    pub fn node_count(&self) -> usize {
        match *self {
            GraphFamily::Path { n }
            | GraphFamily::Cycle { n }
            | GraphFamily::Star { n }
            | GraphFamily::RandomTree { n }
            | GraphFamily::GnpConnected { n, .. } => n,
            GraphFamily::Grid { rows, cols } => rows * cols,
            GraphFamily::Caterpillar { spine, legs } => spine * (legs + 1),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            GraphFamily::Path { n } => format!("path{n}"),
            GraphFamily::Cycle { n } => format!("cycle{n}"),
            GraphFamily::Star { n } => format!("star{n}"),
            GraphFamily::Grid { rows, cols } => format!("grid{rows}x{cols}"),
            GraphFamily::RandomTree { n } => format!("rtree{n}"),
            GraphFamily::GnpConnected { n, p } => format!("gnp{n}p{p}"),
            GraphFamily::Caterpillar { spine, legs } => format!("cat{spine}x{legs}"),
        }
    }
}

/// Deterministic generator: identical `(family, seed)` always yields the same graph.
pub fn generate_graph(family: &GraphFamily, seed: u64) -> Result<Graph, GraphError> {
    let n = family.node_count();
    if n == 0 {
        return Err(GraphError::InvalidParams("family yields zero nodes".into()));
    }
    let mut rng = SmallRng::seed_from_u64(seed);
    let edges: Vec<(NodeId, NodeId)> = match *family {
        GraphFamily::Path { n } => (1..n).map(|v| (v - 1, v)).collect(),
        GraphFamily::Cycle { n } => {
            if n < 3 {
                return Err(GraphError::InvalidParams("cycle needs n >= 3".into()));
            }
            let mut e: Vec<_> = (1..n).map(|v| (v - 1, v)).collect();
            e.push((0, n - 1));
            e
        }
        GraphFamily::Star { n } => (1..n).map(|v| (0, v)).collect(),
        GraphFamily::Grid { rows, cols } => {
            let mut e = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let u = r * cols + c;
                    if c + 1 < cols {
                        e.push((u, u + 1));
                    }
                    if r + 1 < rows {
                        e.push((u, u + cols));
                    }
                }
            }
            e
        }
        GraphFamily::RandomTree { n } => (1..n).map(|v| (rng.gen_range(0..v), v)).collect(),
        GraphFamily::Caterpillar { spine, legs } => {
            let mut e: Vec<_> = (1..spine).map(|v| (v - 1, v)).collect();
            for s in 0..spine {
                for j in 0..legs {
                    e.push((s, spine + s * legs + j));
                }
            }
            e
        }
        GraphFamily::GnpConnected { n, p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GraphError::InvalidParams(format!("edge probability {p} not in (0, 1]")));
            }
            for _ in 0..GNP_MAX_TRIES {
                let mut e = Vec::new();
                for u in 0..n {
                    for v in (u + 1)..n {
                        if rng.gen_bool(p) {
                            e.push((u, v));
                        }
                    }
                }
                match Graph::from_edges(n, &e) {
                    Ok(g) => return Ok(g),
                    Err(GraphError::Disconnected(_)) => continue,
                    Err(other) => return Err(other),
                }
            }
            return Err(GraphError::RetriesExhausted(GNP_MAX_TRIES));
        }
    };
    Graph::from_edges(n, &edges)
}

/// Edge-list text: first line `n`, then one `u v` line per edge with `u < v`.
pub fn serialize_graph(g: &Graph) -> String {
    let mut out = format!("{}\n", g.node_count());
    for (u, v) in g.edges() {
        writeln!(out, "{u} {v}").unwrap();
    }
    out
}

pub fn parse_graph(text: &str) -> Result<Graph, GraphError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (first_no, first) = lines
        .next()
        .ok_or(GraphError::Malformed { line: 1, reason: "missing node count".into() })?;
    let n: usize = first.trim().parse().map_err(|_| GraphError::Malformed {
        line: first_no + 1,
        reason: format!("bad node count {first:?}"),
    })?;
    let mut edges = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed.as_deref() {
            Some([u, v]) => edges.push((*u, *v)),
            _ => {
                return Err(GraphError::Malformed {
                    line: no + 1,
                    reason: format!("expected two node ids, got {line:?}"),
                })
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Graph distances from a source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BfsLayering {
    pub source: NodeId,
    pub level: Vec<usize>,
    pub diameter_bound: usize,
}

pub fn bfs_layering(g: &Graph, source: NodeId) -> BfsLayering {
    let level: Vec<usize> = bfs_levels(&g.adj, source)
        .into_iter()
        .map(|l| l.expect("graph invariant: connected"))
        .collect();
    let diameter_bound = level.iter().copied().max().unwrap_or(0);
    BfsLayering { source, level, diameter_bound }
}

/// Canonical BFS tree: every non-source node's parent is its lowest-id neighbor one
/// level closer to the source.
pub fn bfs_tree(g: &Graph, source: NodeId) -> Vec<Option<NodeId>> {
    let layering = bfs_layering(g, source);
    (0..g.node_count())
        .map(|v| {
            if v == source {
                None
            } else {
                g.neighbors(v).iter().copied().find(|&u| layering.level[u] + 1 == layering.level[v])
            }
        })
        .collect()
}
