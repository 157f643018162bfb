//! Distributed virtual-distance labeling on top of known GST labels.
//!
//! Labels are found one distance at a time. For distance `d`:
//! 1. per rank `r`, two sweeps of `D` rounds each. In the first, stretch starts with
//!    label `d` on level `ℓ` transmit in round `ℓ`; in the second, nodes labeled
//!    `d + 1` on level `ℓ` transmit in round `ℓ`. An unlabeled rank-`r` node hearing
//!    its same-rank parent takes `d + 1`;
//! 2. a Decay stage by all nodes labeled `d`; unlabeled nodes hearing one take `d + 1`.
//!
//! Only nodes with a same-rank child transmit in the sweeps. They are exactly the
//! same-rank parents, which form an induced matching with their children, so every
//! sweep reception is collision-free.
//!
//! With several bands (rings), even and odd bands take alternate rounds so adjacent
//! bands never transmit together.

use crate::constants::Constants;
use crate::engine::{Action, Ctx, EngineConfig, EngineError, Multiplex, NodeRng, Outcome, Packet, Protocol, Round, Session};
use crate::graph::{Graph, NodeId};
use crate::gst::GstLabels;
use crate::primitives::decay::{coin_pow2, standard_exponent};

const SWEEP: &str = "vs";
const SPREAD: &str = "vd";

pub struct VdistProtocol {
    rank: Vec<u32>,
    level: Vec<usize>,
    parent: Vec<Option<NodeId>>,
    band: Vec<usize>,
    fast_parent: Vec<bool>,
    /// `[rank][level]`: nodes with a same-rank child.
    fast_heads: Vec<Vec<Vec<NodeId>>>,
    member: Vec<bool>,
    pub label: Vec<Option<u32>>,
    with_label: Vec<Vec<NodeId>>,
    unlabeled: usize,
    depth: u64,
    ranks: u64,
    phase_len: usize,
    decay_rounds: u64,
    distances: u64,
}

impl VdistProtocol {
    /// `band[v]` names the forest `v` belongs to; packets from other bands are ignored.
    /// Roots (level 0) start with label 0.
    pub fn new(labels: &GstLabels, band: &[usize], log_n: usize, constants: &Constants) -> Self {
        Self::for_members(labels, band, &vec![true; labels.len()], log_n, constants)
    }

    /// Only nodes with `member[v]` take part; the others never transmit or learn.
    pub fn for_members(labels: &GstLabels, band: &[usize], member: &[bool], log_n: usize, constants: &Constants) -> Self {
        let n = labels.len();
        let x = &labels.nodes;
        let max_rank = labels.max_rank().max(1) as usize;
        let depth = labels.depth();
        let mut fast_heads = vec![vec![Vec::new(); depth + 1]; max_rank + 1];
        let mut has_fast_child = vec![false; n];
        for v in (0..n).filter(|&v| member[v]) {
            if let Some(p) = x[v].parent {
                if x[p].rank == x[v].rank {
                    has_fast_child[p] = true;
                }
            }
        }
        for v in 0..n {
            if has_fast_child[v] {
                fast_heads[x[v].rank as usize][x[v].level].push(v);
            }
        }
        let mut label = vec![None; n];
        let mut roots = Vec::new();
        for v in 0..n {
            if member[v] && x[v].level == 0 {
                label[v] = Some(0);
                roots.push(v);
            }
        }
        let members = member.iter().filter(|&&m| m).count();
        VdistProtocol {
            rank: x.iter().map(|y| y.rank).collect(),
            level: x.iter().map(|y| y.level).collect(),
            parent: x.iter().map(|y| y.parent).collect(),
            band: band.to_vec(),
            fast_parent: x.iter().map(|y| y.parent.is_some() && !y.stretch_start).collect(),
            fast_heads,
            member: member.to_vec(),
            unlabeled: members - roots.len(),
            label,
            with_label: vec![roots],
            depth: depth.max(1) as u64,
            ranks: max_rank as u64,
            phase_len: log_n,
            decay_rounds: constants.whp_phases(log_n) * log_n as u64,
            distances: 2 * log_n as u64,
        }
    }

    fn sweep_len(&self) -> u64 {
        2 * self.ranks * self.depth
    }

    fn distance_len(&self) -> u64 {
        self.sweep_len() + self.decay_rounds
    }

    pub fn rounds(&self) -> u64 {
        self.distances * self.distance_len()
    }

    fn labeled(&self, d: u64) -> &[NodeId] {
        self.with_label.get(d as usize).map_or(&[], |v| v.as_slice())
    }

    fn set_label(&mut self, v: NodeId, d: u32) {
        self.label[v] = Some(d);
        if self.with_label.len() <= d as usize {
            self.with_label.resize(d as usize + 1, Vec::new());
        }
        self.with_label[d as usize].push(v);
        self.unlabeled -= 1;
    }

    /// Sweep transmitters for `step`, if it is a sweep round: distance `d`, rank `r`,
    /// second sweep flag, level `ℓ`.
    fn sweep_at(&self, step: u64) -> Option<(u64, u32, bool, usize)> {
        let d = step / self.distance_len();
        let w = step % self.distance_len();
        if w >= self.sweep_len() {
            return None;
        }
        let r = (w / (2 * self.depth)) as u32 + 1;
        let second = (w / self.depth) % 2 == 1;
        Some((d, r, second, (w % self.depth) as usize))
    }

    fn sweep_senders(&self, d: u64, r: u32, second: bool, l: usize) -> impl Iterator<Item = NodeId> + '_ {
        let want = if second { d + 1 } else { d } as u32;
        self.fast_heads
            .get(r as usize)
            .and_then(|x| x.get(l))
            .map_or(&[][..], |v| v.as_slice())
            .iter()
            .copied()
            .filter(move |&v| self.label[v] == Some(want) && self.fast_parent[v] == second)
    }
}

impl Protocol for VdistProtocol {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        match self.sweep_at(step) {
            Some((d, r, second, l)) => out.extend(self.sweep_senders(d, r, second, l)),
            None => out.extend_from_slice(self.labeled(step / self.distance_len())),
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let d = ctx.step / self.distance_len();
        let band = self.band[node] as u64;
        if self.sweep_at(ctx.step).is_some() {
            return Action::Transmit(Packet::control(node, ctx.round, SWEEP, &[("d", d), ("b", band)]));
        }
        let j = ctx.step % self.distance_len() - self.sweep_len();
        if coin_pow2(standard_exponent(j + 1, self.phase_len), rng) {
            Action::Transmit(Packet::control(node, ctx.round, SPREAD, &[("d", d), ("b", band)]))
        } else {
            Action::Listen
        }
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if !self.member[node] || self.label[node].is_some() || p.field("b") != Some(self.band[node] as u64) {
            return;
        }
        let d = ctx.step / self.distance_len();
        match (self.sweep_at(ctx.step), p.tag()) {
            (Some((_, r, _, l)), Some(SWEEP)) => {
                if self.rank[node] == r && self.fast_parent[node] && self.parent[node] == Some(p.src) && self.level[node] == l + 1 {
                    self.set_label(node, d as u32 + 1);
                }
            }
            (None, Some(SPREAD)) => self.set_label(node, d as u32 + 1),
            _ => {}
        }
    }

    fn next_busy(&self, mut step: u64) -> u64 {
        if self.unlabeled == 0 {
            return u64::MAX;
        }
        while step < self.rounds() {
            match self.sweep_at(step) {
                Some((d, r, second, l)) => {
                    if self.sweep_senders(d, r, second, l).next().is_some() {
                        return step;
                    }
                    step += 1;
                }
                None => {
                    let d = step / self.distance_len();
                    if !self.labeled(d).is_empty() {
                        return step;
                    }
                    // Nobody holds label `d`, so no later distance can be reached either.
                    return u64::MAX;
                }
            }
        }
        u64::MAX
    }
}

#[derive(Debug)]
pub struct VdistRun {
    pub vdist: Vec<Option<u32>>,
    pub rounds: Round,
}

impl VdistRun {
    pub fn unlabeled(&self) -> Vec<NodeId> {
        (0..self.vdist.len()).filter(|&v| self.vdist[v].is_none()).collect()
    }
}

/// Runs the labeling on `session` for the forests described by `labels` and `band`.
pub fn run_vdist(
    session: &mut Session,
    labels: &GstLabels,
    band: &[usize],
    constants: &Constants,
) -> Result<VdistRun, EngineError> {
    let log_n = constants.log_n(session.graph());
    let start = session.now();
    if band.iter().all(|&b| b == 0) {
        let mut p = VdistProtocol::new(labels, band, log_n, constants);
        session.execute(p.rounds(), &mut p)?;
        return Ok(VdistRun { vdist: p.label, rounds: session.now() - start });
    }
    let parity = |odd: usize| band.iter().map(|&b| b % 2 == odd).collect::<Vec<_>>();
    let parts = (0..2).map(|odd| VdistProtocol::for_members(labels, band, &parity(odd), log_n, constants)).collect();
    let mut p = Multiplex::new(parts);
    let len = p.parts.iter().map(|x| x.rounds()).max().unwrap_or(0);
    session.execute(2 * len, &mut p)?;
    let [even, odd]: [VdistProtocol; 2] = p.parts.try_into().ok().expect("two parts");
    let vdist = (0..band.len()).map(|v| if band[v] % 2 == 0 { even.label[v] } else { odd.label[v] }).collect();
    Ok(VdistRun { vdist, rounds: session.now() - start })
}

/// Virtual distances learned in the engine from GST labels on the whole graph.
pub fn virtual_distances_distributed(
    g: &Graph,
    labels: &GstLabels,
    constants: &Constants,
    cfg: &EngineConfig,
) -> Result<VdistRun, EngineError> {
    let mut session = Session::new(g, cfg.clone());
    run_vdist(&mut session, labels, &vec![0; g.node_count()], constants)
}
