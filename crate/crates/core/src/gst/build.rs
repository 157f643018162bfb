//! Distributed GST construction: Decay-epoch BFS layering followed by pipelined
//! bipartite assignments.
//!
//! The assignment for blue level `l` and rank `i` of a band with bottom level `b`
//! runs in slot `2(b − l) + (L − i)`. Tasks sharing a slot are interleaved on the
//! global round residue `l mod 3`, so two tasks running in the same round are at
//! least three levels apart and cannot hear each other.

use thiserror::Error;

use crate::constants::Constants;
use crate::engine::{Action, Ctx, EngineConfig, EngineError, Group, Multiplex, NodeRng, Outcome, Packet, Protocol, Round, Session};
use crate::graph::{bfs_layering, Graph, NodeId};
use crate::gst::assign::{AssignTask, NodeState, TaskLayout};
use crate::gst::{GstLabels, NodeLabel};
use crate::primitives::decay::{coin_pow2, standard_exponent};

const LAYER: &str = "ly";

/// BFS layering by Decay: in epoch `e` the nodes of level `e` run a Decay stage and
/// every still unlabeled node that hears one of them takes level `e + 1`.
pub struct DecayLayering {
    pub level: Vec<Option<usize>>,
    by_level: Vec<Vec<NodeId>>,
    phase_len: usize,
    epoch_len: u64,
    epochs: usize,
}

impl DecayLayering {
    pub fn new(n: usize, source: NodeId, epochs: usize, phase_len: usize, phases: u64) -> Self {
        let mut level = vec![None; n];
        level[source] = Some(0);
        DecayLayering {
            level,
            by_level: vec![vec![source]],
            phase_len,
            epoch_len: phases * phase_len as u64,
            epochs,
        }
    }

    pub fn rounds(&self) -> u64 {
        self.epochs as u64 * self.epoch_len
    }
}

impl Protocol for DecayLayering {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        if let Some(f) = self.by_level.get((step / self.epoch_len) as usize) {
            out.extend_from_slice(f);
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let local = ctx.step % self.epoch_len;
        if coin_pow2(standard_exponent(local + 1, self.phase_len), rng) {
            let l = self.level[node].expect("transmitters are labeled") as u64;
            Action::Transmit(Packet::control(node, ctx.round, LAYER, &[("l", l)]))
        } else {
            Action::Listen
        }
    }

    fn observe(&mut self, _ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if self.level[node].is_some() || p.tag() != Some(LAYER) {
            return;
        }
        let l = p.field("l").expect("layer packets carry a level") as usize + 1;
        self.level[node] = Some(l);
        if self.by_level.len() <= l {
            self.by_level.resize(l + 1, Vec::new());
        }
        self.by_level[l].push(node);
    }

    fn next_busy(&self, step: u64) -> u64 {
        let e = (step / self.epoch_len) as usize;
        match self.by_level.get(e) {
            Some(f) if e < self.epochs && !f.is_empty() => step,
            _ => u64::MAX,
        }
    }
}

/// Runs the Decay layering from `source` for `depth` epochs.
pub fn decay_layering(
    session: &mut Session,
    source: NodeId,
    depth: usize,
    constants: &Constants,
) -> Result<Vec<Option<usize>>, EngineError> {
    let g = session.graph();
    let log_n = constants.log_n(g);
    let mut p = DecayLayering::new(g.node_count(), source, depth, log_n, constants.whp_phases(log_n));
    session.execute(p.rounds(), &mut p)?;
    Ok(p.level)
}

/// Consecutive levels `top..=bottom` whose GST is built as a forest rooted at `top`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Band {
    pub top: usize,
    pub bottom: usize,
}

impl Band {
    fn slot_of(&self, blue_level: usize, rank: u32, max_rank: u32) -> u64 {
        2 * (self.bottom - blue_level) as u64 + u64::from(max_rank - rank)
    }

    fn slots(&self, max_rank: u32) -> u64 {
        if self.bottom <= self.top {
            0
        } else {
            self.slot_of(self.top + 1, 1, max_rank) + 1
        }
    }
}

#[derive(Debug)]
pub struct ForestBuild {
    pub state: Vec<NodeState>,
    /// Blues that ended their task without a parent.
    pub failed: Vec<NodeId>,
    pub rounds: Round,
}

/// Rounds the pipelined assignment takes for `bands`.
pub fn assignment_rounds(bands: &[Band], log_n: usize, constants: &Constants) -> u64 {
    let layout = TaskLayout::new(log_n, constants);
    let slots = bands.iter().map(|b| b.slots(log_n as u32)).max().unwrap_or(0);
    slots * 3 * layout.rounds()
}

/// Pipelined bipartite assignments on every band in parallel, given the levels every
/// node learned (`None` for nodes outside all bands).
pub fn assign_bands(
    session: &mut Session,
    level: &[Option<usize>],
    bands: &[Band],
    constants: &Constants,
) -> Result<ForestBuild, EngineError> {
    let g = session.graph();
    let n = g.node_count();
    let log_n = constants.log_n(g);
    let max_rank = log_n as u32;
    let layout = TaskLayout::new(log_n, constants);
    let depth = level.iter().flatten().copied().max().unwrap_or(0);
    let mut by_level = vec![Vec::new(); depth + 1];
    for v in 0..n {
        if let Some(l) = level[v] {
            by_level[l].push(v);
        }
    }
    let mut state = vec![NodeState::default(); n];
    for b in bands {
        for &v in &by_level[b.bottom] {
            state[v].rank = Some(1);
        }
    }
    let slots = bands.iter().map(|b| b.slots(max_rank)).max().unwrap_or(0);
    let start = session.now();
    let mut failed = Vec::new();
    for slot in 0..slots {
        let mut groups: [Vec<(AssignTask, Vec<NodeId>)>; 3] = Default::default();
        for b in bands {
            for l in b.top + 1..=b.bottom {
                let Some(i) = (1..=max_rank).find(|&i| b.slot_of(l, i, max_rank) == slot) else { continue };
                let (reds, blues) = (&by_level[l - 1], &by_level[l]);
                if !blues.iter().any(|&v| state[v].parent.is_none() && state[v].rank == Some(i)) {
                    // Nothing to assign; only the unranked-red rule at the last rank applies.
                    if i == 1 {
                        for &r in reds {
                            state[r].rank.get_or_insert(1);
                        }
                    }
                    continue;
                }
                let task = AssignTask::new(layout, n, l, i, reds, blues, &state);
                let nodes = task.nodes();
                groups[l % 3].push((task, nodes));
            }
        }
        let mut proto = Multiplex::new(groups.map(|parts| Group::new(n, parts)).into_iter().collect());
        session.execute(3 * layout.rounds(), &mut proto)?;
        for group in proto.parts {
            for task in group.into_parts() {
                let (l, i) = (task.blue_level, task.rank);
                failed.extend(task.commit(&mut state));
                if i == 1 {
                    for &r in &by_level[l - 1] {
                        state[r].rank.get_or_insert(1);
                    }
                }
            }
        }
    }
    Ok(ForestBuild { state, failed, rounds: session.now() - start })
}

/// Labels from what the nodes learned; `level` is taken relative to each node's band
/// top so that band roots sit on level 0.
pub fn labels_from_state(level: &[usize], state: &[NodeState]) -> GstLabels {
    let nodes = level
        .iter()
        .zip(state)
        .map(|(&l, s)| {
            let rank = s.rank.unwrap_or(0);
            NodeLabel {
                level: l,
                rank,
                parent: s.parent,
                parent_rank: s.parent_rank,
                stretch_start: s.parent_rank != Some(rank),
                vdist: None,
            }
        })
        .collect();
    GstLabels { nodes }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GstBuildError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{} node(s) never learned a level, first {}", .0.len(), .0[0])]
    Unreached(Vec<NodeId>),
    #[error("{} node(s) left without a parent, first {}", .0.len(), .0[0])]
    Unassigned(Vec<NodeId>),
}

#[derive(Debug)]
pub struct DistributedGst {
    pub labels: GstLabels,
    pub rounds: Round,
    pub layering_rounds: Round,
}

/// Builds a GST without collision detection: Decay layering for `D` epochs (`D` the
/// eccentricity of `source`, supplied by the simulator) then the pipelined assignment.
pub fn build_gst_distributed(
    g: &Graph,
    source: NodeId,
    constants: &Constants,
    cfg: &EngineConfig,
) -> Result<DistributedGst, GstBuildError> {
    let depth = bfs_layering(g, source).diameter_bound;
    let mut session = Session::new(g, cfg.clone());
    let learned = decay_layering(&mut session, source, depth, constants)?;
    let layering_rounds = session.now();
    let unreached: Vec<NodeId> = (0..g.node_count()).filter(|&v| learned[v].is_none()).collect();
    if !unreached.is_empty() {
        return Err(GstBuildError::Unreached(unreached));
    }
    let bands = [Band { top: 0, bottom: learned.iter().flatten().copied().max().unwrap_or(0) }];
    let built = assign_bands(&mut session, &learned, &bands, constants)?;
    if !built.failed.is_empty() {
        return Err(GstBuildError::Unassigned(built.failed));
    }
    let level: Vec<usize> = learned.into_iter().map(|l| l.unwrap()).collect();
    Ok(DistributedGst { labels: labels_from_state(&level, &built.state), rounds: session.now(), layering_rounds })
}
