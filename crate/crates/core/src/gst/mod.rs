//! Gathering spanning trees: ranking, a centralized reference construction, the
//! validator, and virtual distances.

pub mod assign;
pub mod build;
pub mod vdist;

pub use assign::{bipartite_assignment, AssignmentReport, NodeState};
pub use build::{assign_bands, build_gst_distributed, labels_from_state, Band, DistributedGst, ForestBuild, GstBuildError};
pub use vdist::{run_vdist, virtual_distances_distributed, VdistRun};

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{bfs_layering, ceil_log2, Graph, NodeId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub level: usize,
    pub rank: u32,
    pub parent: Option<NodeId>,
    pub parent_rank: Option<u32>,
    pub stretch_start: bool,
    pub vdist: Option<u32>,
}

/// GST labels for every node. Nodes on level 0 are roots; a single root gives a tree
/// on the whole graph, several roots a forest (as used inside a ring).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GstLabels {
    pub nodes: Vec<NodeLabel>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GstError {
    #[error("parent map has a cycle through node {0}")]
    Cycle(NodeId),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

impl GstLabels {
    /// Assembles labels from levels and parents, deriving ranks and stretch flags.
    pub fn from_tree(level: Vec<usize>, parent: Vec<Option<NodeId>>) -> Result<Self, GstError> {
        let rank = compute_ranks(&parent)?;
        Ok(Self::from_parts(level, parent, rank))
    }

    pub fn from_parts(level: Vec<usize>, parent: Vec<Option<NodeId>>, rank: Vec<u32>) -> Self {
        let nodes = (0..level.len())
            .map(|v| {
                let parent_rank = parent[v].map(|p| rank[p]);
                NodeLabel {
                    level: level[v],
                    rank: rank[v],
                    parent: parent[v],
                    parent_rank,
                    stretch_start: parent_rank != Some(rank[v]),
                    vdist: None,
                }
            })
            .collect();
        GstLabels { nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> Vec<NodeId> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].parent.is_none()).collect()
    }

    pub fn parents(&self) -> Vec<Option<NodeId>> {
        self.nodes.iter().map(|x| x.parent).collect()
    }

    pub fn levels(&self) -> Vec<usize> {
        self.nodes.iter().map(|x| x.level).collect()
    }

    pub fn ranks(&self) -> Vec<u32> {
        self.nodes.iter().map(|x| x.rank).collect()
    }

    pub fn max_rank(&self) -> u32 {
        self.nodes.iter().map(|x| x.rank).max().unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|x| x.level).max().unwrap_or(0)
    }

    pub fn with_virtual_distances(mut self, d: &[u32]) -> Self {
        for (x, &dv) in self.nodes.iter_mut().zip(d) {
            x.vdist = Some(dv);
        }
        self
    }

    /// One line per node: `node level rank parent parent_rank stretch_start vdist`,
    /// absent values written as `-`.
    pub fn export(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_else(|| "-".into());
        let mut out = String::new();
        for (v, x) in self.nodes.iter().enumerate() {
            out.push_str(&format!(
                "{v} {} {} {} {} {} {}\n",
                x.level,
                x.rank,
                opt(x.parent.map(|p| p.to_string())),
                opt(x.parent_rank.map(|p| p.to_string())),
                u8::from(x.stretch_start),
                opt(x.vdist.map(|d| d.to_string())),
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, GstError> {
        let mut nodes: Vec<NodeLabel> = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#')) {
            let bad = |reason: &str| GstError::Parse { line: i + 1, reason: reason.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad(&format!("bad number `{s}`")));
            let opt = |s: &str| if s == "-" { Ok(None) } else { num(s).map(Some) };
            if num(f[0])? as usize != nodes.len() {
                return Err(bad("nodes must be listed in order"));
            }
            nodes.push(NodeLabel {
                level: num(f[1])? as usize,
                rank: num(f[2])? as u32,
                parent: opt(f[3])?.map(|p| p as usize),
                parent_rank: opt(f[4])?.map(|p| p as u32),
                stretch_start: match f[5] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("stretch_start must be 0 or 1")),
                },
                vdist: opt(f[6])?.map(|d| d as u32),
            });
        }
        Ok(GstLabels { nodes })
    }
}

/// Ranks from the leaf-up rule: leaves get 1; a node whose maximum child rank `r` is
/// attained by exactly one child gets `r`, otherwise `r + 1`.
pub fn compute_ranks(parent: &[Option<NodeId>]) -> Result<Vec<u32>, GstError> {
    let n = parent.len();
    let mut pending = vec![0usize; n];
    for p in parent.iter().flatten() {
        pending[*p] += 1;
    }
    let mut best = vec![(0u32, 0u32); n];
    let mut rank = vec![0u32; n];
    let mut queue: VecDeque<NodeId> = (0..n).filter(|&v| pending[v] == 0).collect();
    let mut done = 0;
    while let Some(v) = queue.pop_front() {
        done += 1;
        rank[v] = match best[v] {
            (0, _) => 1,
            (r, 1) => r,
            (r, _) => r + 1,
        };
        if let Some(p) = parent[v] {
            let b = &mut best[p];
            if rank[v] > b.0 {
                *b = (rank[v], 1);
            } else if rank[v] == b.0 {
                b.1 += 1;
            }
            pending[p] -= 1;
            if pending[p] == 0 {
                queue.push_back(p);
            }
        }
    }
    if done < n {
        let v = (0..n).find(|&v| pending[v] > 0).expect("some node is stuck");
        return Err(GstError::Cycle(v));
    }
    Ok(rank)
}

/// Centralized reference construction on the BFS layering from `source`.
///
/// Per level pair and per blue rank `i` (descending): reds adjacent to two or more
/// unassigned rank-`i` blues take all of them; every remaining blue then goes to its
/// lowest-id red neighbor. At that point each red has at most one unassigned rank-`i`
/// neighbor, so no rank-`i` pair can cross-connect.
pub fn build_gst_oracle(g: &Graph, source: NodeId) -> GstLabels {
    let level = bfs_layering(g, source).level;
    oracle_on_levels(g, &level)
}

/// [`build_gst_oracle`] on given levels (roots are the level-0 nodes).
pub fn oracle_on_levels(g: &Graph, level: &[usize]) -> GstLabels {
    let n = g.node_count();
    let depth = level.iter().copied().max().unwrap_or(0);
    let mut by_level = vec![Vec::new(); depth + 1];
    for v in 0..n {
        by_level[level[v]].push(v);
    }
    let mut parent = vec![None; n];
    let mut rank = vec![0u32; n];
    let mut top = vec![(0u32, 0u32); n];
    for l in (1..=depth).rev() {
        for &u in &by_level[l] {
            rank[u] = rank_from(top[u]);
        }
        let max_rank = by_level[l].iter().map(|&u| rank[u]).max().unwrap_or(1);
        for i in (1..=max_rank).rev() {
            let mut open: Vec<NodeId> = by_level[l].iter().copied().filter(|&u| rank[u] == i).collect();
            let red_neighbors = |u: NodeId| g.neighbors(u).iter().copied().filter(move |&w| level[w] + 1 == l);
            loop {
                let mut count = std::collections::BTreeMap::new();
                for &u in &open {
                    for w in red_neighbors(u) {
                        *count.entry(w).or_insert(0) += 1;
                    }
                }
                let Some((&red, _)) = count.iter().find(|(_, &c)| c >= 2) else { break };
                open.retain(|&u| {
                    if g.has_edge(u, red) {
                        parent[u] = Some(red);
                        false
                    } else {
                        true
                    }
                });
            }
            for &u in &open {
                parent[u] = red_neighbors(u).min();
            }
            for &u in by_level[l].iter().filter(|&&u| rank[u] == i) {
                let p = parent[u].expect("BFS levels give every blue a red neighbor");
                let b = &mut top[p];
                if i > b.0 {
                    *b = (i, 1);
                } else if i == b.0 {
                    b.1 += 1;
                }
            }
        }
    }
    for &v in &by_level[0] {
        rank[v] = rank_from(top[v]);
    }
    GstLabels::from_parts(level.to_vec(), parent, rank)
}

fn rank_from((r, count): (u32, u32)) -> u32 {
    match (r, count) {
        (0, _) => 1,
        (r, 1) => r,
        (r, _) => r + 1,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    /// A level-0 node has a parent, or a deeper node has none.
    Root { node: NodeId },
    /// Parent is not an adjacent node one level up.
    ParentEdge { node: NodeId, parent: NodeId },
    ParentRank { node: NodeId, recorded: Option<u32>, actual: Option<u32> },
    StretchFlag { node: NodeId },
    RankingRule { node: NodeId, recorded: u32, expected: u32 },
    RankBound { node: NodeId, rank: u32, bound: u32 },
    /// Two equal-rank child/parent pairs `(u1, v1)`, `(u2, v2)` with an edge `v1–u2`.
    CollisionFreeness { u1: NodeId, v1: NodeId, u2: NodeId, v2: NodeId },
    Cycle { node: NodeId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Root { node } => write!(f, "node {node}: roots must be exactly the level-0 nodes"),
            Violation::ParentEdge { node, parent } => write!(f, "node {node}: parent {parent} is not an adjacent node one level up"),
            Violation::ParentRank { node, recorded, actual } => {
                write!(f, "node {node}: recorded parent rank {recorded:?}, parent has {actual:?}")
            }
            Violation::StretchFlag { node } => write!(f, "node {node}: stretch-start flag disagrees with ranks"),
            Violation::RankingRule { node, recorded, expected } => {
                write!(f, "node {node}: rank {recorded} violates the ranking rule (expected {expected})")
            }
            Violation::RankBound { node, rank, bound } => write!(f, "node {node}: rank {rank} exceeds {bound}"),
            Violation::CollisionFreeness { u1, v1, u2, v2 } => {
                write!(f, "collision-freeness: {u2} (parent {v2}) is adjacent to {v1}, parent of {u1}, all of equal rank")
            }
            Violation::Cycle { node } => write!(f, "parent map has a cycle through {node}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GstReport {
    pub violations: Vec<Violation>,
}

impl GstReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every GST invariant except virtual distances. Rank bound is `⌈log₂ n⌉`
/// (at least 1).
pub fn validate_gst(g: &Graph, labels: &GstLabels) -> GstReport {
    let bound = ceil_log2(g.node_count()).max(1) as u32;
    validate_gst_with_bound(g, labels, bound)
}

pub fn validate_gst_with_bound(g: &Graph, labels: &GstLabels, bound: u32) -> GstReport {
    let n = g.node_count();
    assert_eq!(labels.len(), n, "one label per node");
    let x = &labels.nodes;
    let mut violations = Vec::new();
    let mut structural = true;
    for v in 0..n {
        match x[v].parent {
            None if x[v].level == 0 => {}
            Some(p) if x[v].level > 0 => {
                if p >= n || !g.has_edge(v, p) || x[p].level + 1 != x[v].level {
                    violations.push(Violation::ParentEdge { node: v, parent: p });
                    structural = false;
                    continue;
                }
                if x[v].parent_rank != Some(x[p].rank) {
                    violations.push(Violation::ParentRank { node: v, recorded: x[v].parent_rank, actual: Some(x[p].rank) });
                }
            }
            _ => {
                violations.push(Violation::Root { node: v });
                structural = false;
            }
        }
        if x[v].parent.is_none() && x[v].parent_rank.is_some() {
            violations.push(Violation::ParentRank { node: v, recorded: x[v].parent_rank, actual: None });
        }
        if x[v].stretch_start != (x[v].parent_rank != Some(x[v].rank)) {
            violations.push(Violation::StretchFlag { node: v });
        }
        if x[v].rank < 1 || x[v].rank > bound {
            violations.push(Violation::RankBound { node: v, rank: x[v].rank, bound });
        }
    }
    if structural {
        match compute_ranks(&labels.parents()) {
            Ok(expected) => {
                for v in 0..n {
                    if expected[v] != x[v].rank {
                        violations.push(Violation::RankingRule { node: v, recorded: x[v].rank, expected: expected[v] });
                    }
                }
            }
            Err(GstError::Cycle(v)) => violations.push(Violation::Cycle { node: v }),
            Err(_) => unreachable!(),
        }
        violations.extend(collision_violations(g, labels));
    }
    GstReport { violations }
}

/// Equal-rank child/parent pairs whose cross edges break the induced matching.
pub fn collision_violations(g: &Graph, labels: &GstLabels) -> Vec<Violation> {
    let x = &labels.nodes;
    let mut out = Vec::new();
    for u2 in 0..x.len() {
        let Some(v2) = x[u2].parent else { continue };
        let r = x[u2].rank;
        if x[v2].rank != r {
            continue;
        }
        for &v1 in g.neighbors(u2) {
            if v1 == v2 || x[v1].level + 1 != x[u2].level || x[v1].rank != r {
                continue;
            }
            // v1 must itself be the equal-rank parent of some rank-r child u1.
            if let Some(&u1) = g.neighbors(v1).iter().find(|&&u1| u1 != u2 && x[u1].parent == Some(v1) && x[u1].rank == r) {
                out.push(Violation::CollisionFreeness { u1, v1, u2, v2 });
            }
        }
    }
    out
}

/// Directed distances from the roots in `G ∪ {stretch start → same-rank descendant}`.
pub fn virtual_distances(g: &Graph, labels: &GstLabels) -> Vec<u32> {
    let n = g.node_count();
    let x = &labels.nodes;
    // Children lists give each stretch start's same-rank descendants.
    let mut children = vec![Vec::new(); n];
    for v in 0..n {
        if let Some(p) = x[v].parent {
            children[p].push(v);
        }
    }
    let mut dist = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for v in labels.roots() {
        dist[v] = 0;
        queue.push_back(v);
    }
    let mut stack = Vec::new();
    while let Some(u) = queue.pop_front() {
        let next = dist[u] + 1;
        let relax = |w: NodeId, dist: &mut Vec<u32>, queue: &mut VecDeque<NodeId>| {
            if dist[w] == u32::MAX {
                dist[w] = next;
                queue.push_back(w);
            }
        };
        for &w in g.neighbors(u) {
            relax(w, &mut dist, &mut queue);
        }
        if x[u].stretch_start {
            stack.clear();
            stack.extend(children[u].iter().copied().filter(|&c| x[c].rank == x[u].rank));
            while let Some(w) = stack.pop() {
                relax(w, &mut dist, &mut queue);
                stack.extend(children[w].iter().copied().filter(|&c| x[c].rank == x[u].rank));
            }
        }
    }
    dist
}
