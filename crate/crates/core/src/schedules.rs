//! The multi-message viable GST schedule and its trace checkers.
//!
//! In schedule round `t` a node on level `l` with rank `r` and virtual distance `d`
//! (a) transmits if `t ≡ 2(l + 3r) (mod 6L)` (fast), and
//! (b) transmits with probability `2^-(((t − 1 − 2d)/6) mod L)` if `t ≡ 1 + 2d (mod 6)`
//! (slow). Stretch starts and slow transmitters send a fresh RLNC packet; a node inside
//! a fast stretch relays what its parent sent in the previous fast round.
//!
//! Only nodes with a same-rank child use the fast rule. Same-rank parents and their
//! children form an induced matching, so those are the transmissions that cannot
//! collide; a same-rank node without such a child would still hit its neighbors'
//! stretch children.

use std::collections::HashMap;

use crate::engine::{Action, Ctx, Event, NodeRng, Outcome, Packet, PacketKind, Protocol, Round, Trace};
use crate::graph::NodeId;
use crate::gst::GstLabels;
use crate::primitives::decay::{coin_pow2, NoisePolicy};
use crate::rlnc::{Generation, KnowledgeSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prompt {
    Fast,
    /// Slow transmission with probability `2^-e`.
    Slow(u32),
    Idle,
}

pub fn fast_gate(level: usize, rank: u32, t: Round, log_n: usize) -> bool {
    let period = 6 * log_n as u64;
    t % period == (2 * (level as u64 + 3 * u64::from(rank))) % period
}

pub fn slow_exponent(vdist: u32, t: Round, log_n: usize) -> Option<u32> {
    let off = t as i128 - 1 - 2 * i128::from(vdist);
    (off.rem_euclid(6) == 0).then(|| off.div_euclid(6).rem_euclid(log_n as i128) as u32)
}

/// Which rule, if any, prompts a node in schedule round `t` (starting at 1).
pub fn prompt(level: usize, rank: u32, vdist: u32, t: Round, log_n: usize) -> Prompt {
    if t % 2 == 0 {
        if fast_gate(level, rank, t, log_n) {
            return Prompt::Fast;
        }
    } else if let Some(e) = slow_exponent(vdist, t, log_n) {
        return Prompt::Slow(e);
    }
    Prompt::Idle
}

/// `out[v]` is true iff some child of `v` has the rank of `v`.
pub fn same_rank_parents(labels: &GstLabels) -> Vec<bool> {
    let mut out = vec![false; labels.len()];
    for x in &labels.nodes {
        if let Some(p) = x.parent {
            if labels.nodes[p].rank == x.rank {
                out[p] = true;
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct MmvNodeState {
    pub level: usize,
    pub rank: u32,
    pub vdist: u32,
    pub stretch_start: bool,
    pub parent: Option<NodeId>,
    pub has_fast_child: bool,
    /// Packet the parent sent in its latest fast transmission, until relayed.
    pub last_fast: Option<Packet>,
    pub knowledge: KnowledgeSpace,
    pub policy: NoisePolicy,
}

impl MmvNodeState {
    pub fn from_label(
        labels: &GstLabels,
        v: NodeId,
        has_fast_child: bool,
        knowledge: KnowledgeSpace,
        policy: NoisePolicy,
    ) -> Self {
        let x = &labels.nodes[v];
        MmvNodeState {
            level: x.level,
            rank: x.rank,
            vdist: x.vdist.expect("schedule needs virtual distances"),
            stretch_start: x.stretch_start,
            parent: x.parent,
            has_fast_child,
            last_fast: None,
            knowledge,
            policy,
        }
    }

    pub fn prompt(&self, t: Round, log_n: usize) -> Prompt {
        prompt(self.level, self.rank, self.vdist, t, log_n)
    }
}

fn fresh_or_noise(state: &MmvNodeState, node: NodeId, round: Round, rng: &mut NodeRng) -> Action {
    match state.knowledge.encode_packet(node, round, rng) {
        Ok(p) => Action::Transmit(p),
        Err(_) => noise(state.policy, node, round),
    }
}

fn noise(policy: NoisePolicy, node: NodeId, round: Round) -> Action {
    match policy {
        NoisePolicy::Noise => Action::Transmit(Packet::noise(node, round)),
        NoisePolicy::Silent => Action::Listen,
    }
}

/// One node's move in schedule round `t` (global round `round`).
pub fn mmv_action(state: &mut MmvNodeState, node: NodeId, t: Round, round: Round, log_n: usize, rng: &mut NodeRng) -> Action {
    match state.prompt(t, log_n) {
        Prompt::Fast if !state.has_fast_child => Action::Listen,
        Prompt::Fast if state.stretch_start => fresh_or_noise(state, node, round, rng),
        Prompt::Fast => match state.last_fast.take() {
            Some(p) => Action::Transmit(p.relayed_by(node)),
            None => noise(state.policy, node, round),
        },
        Prompt::Slow(e) if coin_pow2(e, rng) => fresh_or_noise(state, node, round, rng),
        _ => Action::Listen,
    }
}

/// Feeds a reception into the node state. Returns true if it was innovative.
pub fn mmv_observe(state: &mut MmvNodeState, t: Round, packet: &Packet) -> bool {
    if !matches!(packet.kind, PacketKind::Coded { .. }) {
        return false;
    }
    if t % 2 == 0 && state.parent == Some(packet.src) {
        state.last_fast = Some(packet.clone());
    }
    state.knowledge.insert_packet(packet).unwrap_or(false)
}

/// The schedule with RLNC on one generation, over a set of member nodes whose GST
/// labels (with virtual distances) are given. Packets from non-members are ignored.
pub struct MmvBroadcast {
    log_n: usize,
    nodes: Vec<Option<MmvNodeState>>,
    fast: Vec<Vec<NodeId>>,
    slow: [Vec<NodeId>; 3],
    missing: usize,
    /// Schedule round of each member's completion (0 for initial holders).
    pub completed_at: Vec<Option<Round>>,
    stop_when_done: bool,
}

impl MmvBroadcast {
    /// `holders` start with the whole generation, every other member with nothing.
    pub fn new(
        labels: &GstLabels,
        members: &[NodeId],
        holders: &[NodeId],
        generation: &Generation,
        policy: NoisePolicy,
        log_n: usize,
    ) -> Self {
        let n = labels.len();
        let mut nodes: Vec<Option<MmvNodeState>> = vec![None; n];
        let mut completed_at = vec![None; n];
        let empty = KnowledgeSpace::new(generation.id, generation.size(), generation.body_len());
        let heads = same_rank_parents(labels);
        for &v in members {
            nodes[v] = Some(MmvNodeState::from_label(labels, v, heads[v], empty.clone(), policy));
        }
        for &v in holders {
            let s = nodes[v].as_mut().expect("holders must be members");
            s.knowledge = KnowledgeSpace::full(generation);
            completed_at[v] = Some(0);
        }
        let period = 6 * log_n;
        let mut fast = vec![Vec::new(); period];
        let mut slow: [Vec<NodeId>; 3] = Default::default();
        for &v in members {
            let s = nodes[v].as_ref().unwrap();
            if s.has_fast_child {
                fast[(2 * (s.level + 3 * s.rank as usize)) % period].push(v);
            }
            slow[s.vdist as usize % 3].push(v);
        }
        let missing = members.iter().filter(|&&v| completed_at[v].is_none()).count();
        MmvBroadcast { log_n, nodes, fast, slow, missing, completed_at, stop_when_done: true }
    }

    /// Keep running after every member has decoded (for fixed-length stages).
    pub fn run_to_end(mut self) -> Self {
        self.stop_when_done = false;
        self
    }

    pub fn missing(&self) -> usize {
        self.missing
    }

    pub fn state(&self, v: NodeId) -> Option<&MmvNodeState> {
        self.nodes[v].as_ref()
    }

    pub fn decoded(&self, v: NodeId) -> Option<Vec<crate::bits::Bits>> {
        self.nodes[v].as_ref().and_then(|s| s.knowledge.decode())
    }

    /// Schedule round of `step` (stages start at `t = 1`).
    fn t(step: u64) -> Round {
        step + 1
    }
}

impl Protocol for MmvBroadcast {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        let t = Self::t(step);
        if t % 2 == 0 {
            out.extend_from_slice(&self.fast[(t % self.fast.len() as u64) as usize]);
        } else {
            out.extend_from_slice(&self.slow[((t - 1) / 2 % 3) as usize]);
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let state = self.nodes[node].as_mut().expect("actors are members");
        mmv_action(state, node, Self::t(ctx.step), ctx.round, self.log_n, rng)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if self.nodes.get(p.src).is_none_or(|s| s.is_none()) {
            return;
        }
        let Some(state) = self.nodes[node].as_mut() else { return };
        let t = Self::t(ctx.step);
        if mmv_observe(state, t, &p) && state.knowledge.is_full() {
            self.completed_at[node] = Some(t);
            self.missing -= 1;
        }
    }

    fn finished(&self) -> bool {
        self.stop_when_done && self.missing == 0
    }
}

/// Where an MMV stage sits in a trace: schedule round `t` is global round
/// `offset + t`, for `t` in `1..=len`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MmvWindow {
    pub log_n: usize,
    pub offset: Round,
    pub len: Round,
}

impl MmvWindow {
    fn contains(&self, round: Round) -> bool {
        round > self.offset && round <= self.offset + self.len
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FastCollisionReport {
    /// `(round, child, parent)`: the child missed its same-rank parent's fast packet.
    pub fast_collisions: Vec<(Round, NodeId, NodeId)>,
    /// `(round, node)`: a transmission no rule allows, including a fast one by a node
    /// without a same-rank child.
    pub parity: Vec<(Round, NodeId)>,
}

impl FastCollisionReport {
    pub fn ok(&self) -> bool {
        self.fast_collisions.is_empty() && self.parity.is_empty()
    }
}

struct Replay<'a> {
    sent: HashMap<(Round, NodeId), &'a Packet>,
    heard: HashMap<(Round, NodeId), NodeId>,
    children: Vec<Vec<NodeId>>,
}

impl<'a> Replay<'a> {
    fn new(trace: &'a Trace, labels: &GstLabels, window: &MmvWindow) -> Self {
        let mut sent = HashMap::new();
        let mut heard = HashMap::new();
        for r in trace.records.iter().filter(|r| window.contains(r.round) && r.node < labels.len()) {
            match &r.event {
                Event::Transmit(p) => {
                    sent.insert((r.round, r.node), p);
                }
                Event::Receive { from } => {
                    heard.insert((r.round, r.node), *from);
                }
                _ => {}
            }
        }
        let mut children = vec![Vec::new(); labels.len()];
        for (v, x) in labels.nodes.iter().enumerate() {
            if let Some(p) = x.parent {
                if labels.nodes[p].rank == x.rank {
                    children[p].push(v);
                }
            }
        }
        Replay { sent, heard, children }
    }
}

/// Every fast transmission reaches the sender's same-rank children, and every
/// transmission follows the parity of its rule.
pub fn check_fast_collision_freedom(trace: &Trace, labels: &GstLabels, window: &MmvWindow) -> FastCollisionReport {
    let replay = Replay::new(trace, labels, window);
    let mut report = FastCollisionReport::default();
    let mut sent: Vec<_> = replay.sent.keys().copied().collect();
    sent.sort_unstable();
    for (round, u) in sent {
        let t = round - window.offset;
        let x = &labels.nodes[u];
        let ok = match prompt(x.level, x.rank, x.vdist.unwrap_or(0), t, window.log_n) {
            Prompt::Fast if replay.children[u].is_empty() => false,
            Prompt::Fast => {
                for &c in &replay.children[u] {
                    if !replay.sent.contains_key(&(round, c)) && replay.heard.get(&(round, c)) != Some(&u) {
                        report.fast_collisions.push((round, c, u));
                    }
                }
                true
            }
            Prompt::Slow(_) => true,
            Prompt::Idle => false,
        };
        if !ok {
            report.parity.push((round, u));
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineViolation {
    pub start: NodeId,
    pub round: Round,
    pub member: NodeId,
    pub deadline: Round,
}

/// A coded fast packet sent by a stretch start in round `t` (or a later wave) reaches
/// every stretch member `l′ − l` levels below by `t + 2(l′ − l)`.
pub fn check_fast_pipelining(trace: &Trace, labels: &GstLabels, window: &MmvWindow) -> Vec<PipelineViolation> {
    let replay = Replay::new(trace, labels, window);
    let x = &labels.nodes;
    let mut out = Vec::new();
    let mut starts: Vec<_> = replay
        .sent
        .iter()
        .filter(|((round, u), p)| {
            x[*u].stretch_start
                && !replay.children[*u].is_empty()
                && matches!(p.kind, PacketKind::Coded { .. })
                && prompt(x[*u].level, x[*u].rank, x[*u].vdist.unwrap_or(0), round - window.offset, window.log_n) == Prompt::Fast
        })
        .map(|(&k, _)| k)
        .collect();
    starts.sort_unstable();
    let mut stack = Vec::new();
    for (round, u) in starts {
        stack.clear();
        stack.extend(replay.children[u].iter().copied());
        while let Some(v) = stack.pop() {
            stack.extend(replay.children[v].iter().copied());
            let deadline = round + 2 * (x[v].level - x[u].level) as u64;
            if deadline > window.offset + window.len {
                continue;
            }
            let parent = x[v].parent.unwrap();
            let reached = (round..=deadline).any(|r| {
                replay.heard.get(&(r, v)) == Some(&parent)
                    && replay.sent.get(&(r, parent)).is_some_and(|p| p.origin.0 == u && p.origin.1 >= round)
            });
            if !reached {
                out.push(PipelineViolation { start: u, round, member: v, deadline });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, Session};
    use crate::graph::{generate_graph, GraphFamily};
    use crate::gst::{build_gst_oracle, virtual_distances};
    use rand::SeedableRng;

    #[test]
    fn gates_follow_the_box() {
        let l = 5;
        for r in 1..=3 {
            let t = (2 * 3 * r) % (6 * l as u64);
            let t = if t == 0 { 6 * l as u64 } else { t };
            assert_eq!(prompt(0, r as u32, 0, t, l), Prompt::Fast);
        }
        // d = 1: slow prompts at t ≡ 3 (mod 6) with exponent ((t − 3)/6) mod L.
        for t in 1..200u64 {
            let p = prompt(40, 2, 1, t, l);
            if t % 2 == 1 {
                if t % 6 == 3 {
                    assert_eq!(p, Prompt::Slow((((t - 3) / 6) % l as u64) as u32));
                } else {
                    assert_eq!(p, Prompt::Idle);
                }
            } else {
                assert_eq!(p == Prompt::Fast, t % 30 == (2 * (40 + 6)) % 30);
            }
        }
    }

    fn labeled(g: &crate::graph::Graph) -> GstLabels {
        let labels = build_gst_oracle(g, 0);
        let d = virtual_distances(g, &labels);
        labels.with_virtual_distances(&d)
    }

    fn run(g: &crate::graph::Graph, k: usize, seed: u64) -> (Session<'_>, MmvBroadcast, GstLabels) {
        let labels = labeled(g);
        let mut rng = rand::rngs::SmallRng::seed_from_u64(seed);
        let gen = Generation::random(0, k, 16, &mut rng);
        let log_n = g.log_n();
        let members: Vec<NodeId> = (0..g.node_count()).collect();
        let mut mmv = MmvBroadcast::new(&labels, &members, &[0], &gen, NoisePolicy::Noise, log_n);
        let mut session = Session::new(g, EngineConfig::with_seed(seed));
        session.execute(200_000, &mut mmv).unwrap();
        for v in 0..g.node_count() {
            assert_eq!(mmv.decoded(v).unwrap(), gen.messages, "node {v}");
        }
        (session, mmv, labels)
    }

    #[test]
    fn path_wave_arrives_on_time() {
        let g = generate_graph(&GraphFamily::Path { n: 20 }, 0).unwrap();
        let (session, _, labels) = run(&g, 1, 1);
        let window = MmvWindow { log_n: g.log_n(), offset: 0, len: session.now() };
        assert!(check_fast_collision_freedom(session.trace(), &labels, &window).ok());
        assert!(check_fast_pipelining(session.trace(), &labels, &window).is_empty());
    }

    #[test]
    fn gnp_traces_pass_both_checkers() {
        for seed in 0..10 {
            let g = generate_graph(&GraphFamily::GnpConnected { n: 64, p: 0.08 }, seed).unwrap();
            let (session, _, labels) = run(&g, 4, seed);
            let window = MmvWindow { log_n: g.log_n(), offset: 0, len: session.now() };
            let report = check_fast_collision_freedom(session.trace(), &labels, &window);
            assert!(report.ok(), "seed {seed}: {report:?}");
            assert!(check_fast_pipelining(session.trace(), &labels, &window).is_empty(), "seed {seed}");
        }
    }

    #[test]
    fn tampered_gst_shows_fast_collisions() {
        // Two rank-1 stretches 0→2 and 1→3 whose parents are cross-connected.
        let g = crate::graph::Graph::from_edges(5, &[(4, 0), (4, 1), (0, 2), (1, 3), (0, 3), (1, 2)]).unwrap();
        let labels = GstLabels::from_parts(vec![1, 1, 2, 2, 0], vec![Some(4), Some(4), Some(0), Some(1), None], vec![1, 1, 1, 1, 2]);
        let d = virtual_distances(&g, &labels);
        let labels = labels.with_virtual_distances(&d);
        let gen = Generation::random(0, 1, 8, &mut rand::rngs::SmallRng::seed_from_u64(0));
        let mut mmv = MmvBroadcast::new(&labels, &[0, 1, 2, 3, 4], &[4], &gen, NoisePolicy::Noise, 3).run_to_end();
        let mut session = Session::new(&g, EngineConfig::with_seed(0));
        session.execute(200, &mut mmv).unwrap();
        let window = MmvWindow { log_n: 3, offset: 0, len: 200 };
        assert!(!check_fast_collision_freedom(session.trace(), &labels, &window).fast_collisions.is_empty());
    }

    #[test]
    fn empty_trace_is_fine() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        let labels = labeled(&g);
        let window = MmvWindow { log_n: 2, offset: 0, len: 0 };
        assert!(check_fast_collision_freedom(&Trace::new(3), &labels, &window).ok());
        assert!(check_fast_pipelining(&Trace::new(3), &labels, &window).is_empty());
    }
}
