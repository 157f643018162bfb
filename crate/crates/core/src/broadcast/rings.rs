//! Ring decomposition of a BFS layering and per-ring GST construction.

use crate::constants::Constants;
use crate::engine::{Round, Session};
use crate::graph::NodeId;
use crate::gst::{assign_bands, labels_from_state, run_vdist, Band, GstLabels};

use super::{Failure, Halt};

/// Consecutive bands of `width` BFS levels. Ring `j` holds levels
/// `j·width .. (j+1)·width`; its inner boundary is its top level and its outer
/// boundary its bottom level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingDecomposition {
    pub width: usize,
    pub level: Vec<usize>,
    pub ring: Vec<usize>,
    by_level: Vec<Vec<NodeId>>,
}

impl RingDecomposition {
    pub fn new(level: Vec<usize>, width: usize) -> Self {
        let width = width.max(1);
        let depth = level.iter().copied().max().unwrap_or(0);
        let mut by_level = vec![Vec::new(); depth + 1];
        for (v, &l) in level.iter().enumerate() {
            by_level[l].push(v);
        }
        let ring = level.iter().map(|&l| l / width).collect();
        RingDecomposition { width, level, ring, by_level }
    }

    pub fn depth(&self) -> usize {
        self.by_level.len() - 1
    }

    pub fn count(&self) -> usize {
        self.depth() / self.width + 1
    }

    pub fn band(&self, j: usize) -> Band {
        let top = j * self.width;
        Band { top, bottom: (top + self.width - 1).min(self.depth()) }
    }

    pub fn bands(&self) -> Vec<Band> {
        (0..self.count()).map(|j| self.band(j)).collect()
    }

    pub fn members(&self, j: usize) -> Vec<NodeId> {
        let b = self.band(j);
        self.by_level[b.top..=b.bottom].concat()
    }

    pub fn inner(&self, j: usize) -> &[NodeId] {
        &self.by_level[self.band(j).top]
    }

    pub fn outer(&self, j: usize) -> &[NodeId] {
        &self.by_level[self.band(j).bottom]
    }

    /// Level within the node's own ring.
    pub fn relative_levels(&self) -> Vec<usize> {
        self.level.iter().map(|&l| l % self.width).collect()
    }
}

/// GST labels of every ring, with virtual distances, and what building them cost.
#[derive(Debug)]
pub struct RingGst {
    pub labels: GstLabels,
    pub gst_rounds: Round,
    pub vdist_rounds: Round,
}

/// Builds the GSTs of all rings in parallel, then their virtual distances.
pub fn build_ring_gsts(session: &mut Session, rings: &RingDecomposition, constants: &Constants) -> Result<RingGst, Failure> {
    build(session, rings, constants).map_err(|h| h.into_failure("gst"))
}

fn build(session: &mut Session, rings: &RingDecomposition, constants: &Constants) -> Result<RingGst, Halt> {
    let level: Vec<Option<usize>> = rings.level.iter().map(|&l| Some(l)).collect();
    let built = assign_bands(session, &level, &rings.bands(), constants)?;
    if let Some(&v) = built.failed.first() {
        return Err(Failure::new("gst", format!("{} node(s) without a parent, first {v}", built.failed.len())).into());
    }
    let labels = labels_from_state(&rings.relative_levels(), &built.state);
    let run = run_vdist(session, &labels, &rings.ring, constants).map_err(|e| Failure::new("vdist", e.to_string()))?;
    let missing = run.unlabeled();
    if let Some(&v) = missing.first() {
        return Err(Failure::new("vdist", format!("{} node(s) without a virtual distance, first {v}", missing.len())).into());
    }
    let d: Vec<u32> = run.vdist.iter().map(|d| d.unwrap()).collect();
    Ok(RingGst { labels: labels.with_virtual_distances(&d), gst_rounds: built.rounds, vdist_rounds: run.rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EngineConfig;
    use crate::graph::{bfs_layering, generate_graph, Graph, GraphFamily};
    use crate::gst::{validate_gst, virtual_distances};

    #[test]
    fn rings_partition_levels() {
        let r = RingDecomposition::new((0..10).collect(), 4);
        assert_eq!(r.count(), 3);
        assert_eq!(r.band(2), Band { top: 8, bottom: 9 });
        assert_eq!(r.inner(1), &[4]);
        assert_eq!(r.outer(1), &[7]);
        assert_eq!(r.members(2), vec![8, 9]);
        assert_eq!(r.relative_levels()[9], 1);
    }

    /// The subgraph induced by ring `j` and its labels, with node ids renumbered.
    fn ring_view(g: &Graph, rings: &RingDecomposition, labels: &GstLabels, j: usize) -> (Graph, GstLabels) {
        let members = rings.members(j);
        let mut index = vec![usize::MAX; g.node_count()];
        for (i, &v) in members.iter().enumerate() {
            index[v] = i;
        }
        let edges: Vec<_> = g
            .edges()
            .into_iter()
            .filter(|&(a, b)| index[a] != usize::MAX && index[b] != usize::MAX)
            .map(|(a, b)| (index[a], index[b]))
            .collect();
        let nodes = members
            .iter()
            .map(|&v| {
                let mut x = labels.nodes[v].clone();
                x.parent = x.parent.map(|p| index[p]);
                x
            })
            .collect();
        (Graph::from_edges(members.len(), &edges).unwrap(), GstLabels { nodes })
    }

    #[test]
    fn ring_gsts_are_valid_per_ring() {
        let c = Constants::default();
        for seed in 0..3 {
            let g = generate_graph(&GraphFamily::Grid { rows: 4, cols: 14 }, seed).unwrap();
            let rings = RingDecomposition::new(bfs_layering(&g, 0).level, 4);
            assert!(rings.count() >= 4);
            let mut session = Session::new(&g, EngineConfig::with_seed(seed));
            let built = build_ring_gsts(&mut session, &rings, &c).unwrap();
            for j in 0..rings.count() {
                let (sub, local) = ring_view(&g, &rings, &built.labels, j);
                let report = validate_gst(&sub, &local);
                assert!(report.ok(), "seed {seed} ring {j}: {:?}", report.violations);
                let got: Vec<u32> = local.nodes.iter().map(|x| x.vdist.unwrap()).collect();
                assert_eq!(got, virtual_distances(&sub, &local), "seed {seed} ring {j}");
            }
        }
    }
}
