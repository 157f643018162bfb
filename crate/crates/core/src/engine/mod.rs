//! Synchronous radio-network round executor.
//!
//! A node receives a packet iff it listens and exactly one neighbor transmits. With
//! collision detection enabled, two or more transmitting neighbors produce
//! [`Outcome::Collision`]; without it they are indistinguishable from silence.
//! Transmitters hear nothing in the round they transmit.
//!
//! Protocols are driven through a [`Session`], which owns the global clock and the
//! trace. Each session call executes a stage of some protocol for a fixed number of
//! rounds; consecutive calls continue the same clock, so multi-stage algorithms are
//! written as a sequence of stages whose boundaries every node knows in advance.

pub mod packet;
pub mod trace;

use rand::rngs::SmallRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use packet::{Packet, PacketKind};
pub use trace::{trace_hash, Event, Trace, TraceRecord};

use crate::graph::{Graph, NodeId};

pub type Round = u64;
pub type NodeRng = SmallRng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    Transmit(Packet),
    Listen,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Silence,
    Received(Packet),
    Collision,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceLevel {
    /// Nothing is recorded; only the round counter advances.
    Off,
    /// Transmissions, receptions and collisions.
    #[default]
    Events,
    /// Additionally one silence record per idle listener per round.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub collision_detection: bool,
    pub seed: u64,
    pub max_rounds: Round,
    pub trace_level: TraceLevel,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            collision_detection: true,
            seed: 0,
            max_rounds: Round::MAX,
            trace_level: TraceLevel::Events,
        }
    }
}

impl EngineConfig {
    pub fn with_seed(seed: u64) -> Self {
        EngineConfig { seed, ..Default::default() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("round limit {limit} reached")]
    RoundLimit { limit: Round },
    #[error("collision detection is required but disabled")]
    CollisionDetectionRequired,
}

/// Per-node randomness for one round, keyed by `(seed, node, round)`.
pub fn node_rng(seed: u64, node: NodeId, round: Round) -> NodeRng {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [node as u64, round] {
        x = splitmix(x ^ splitmix(v));
    }
    SmallRng::seed_from_u64(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Outcome for every node given this round's transmitters. Transmitting nodes map to
/// `None`.
pub fn resolve_round(transmitters: &[(NodeId, Packet)], g: &Graph, cd: bool) -> Vec<Option<Outcome>> {
    let n = g.node_count();
    let mut count = vec![0u32; n];
    let mut sender = vec![usize::MAX; n];
    let mut is_tx = vec![false; n];
    for (i, (u, _)) in transmitters.iter().enumerate() {
        is_tx[*u] = true;
        for &v in g.neighbors(*u) {
            count[v] += 1;
            sender[v] = i;
        }
    }
    (0..n)
        .map(|v| {
            if is_tx[v] {
                None
            } else {
                Some(classify(count[v], cd, || transmitters[sender[v]].1.clone()))
            }
        })
        .collect()
}

fn classify(count: u32, cd: bool, packet: impl FnOnce() -> Packet) -> Outcome {
    match count {
        0 => Outcome::Silence,
        1 => Outcome::Received(packet()),
        _ if cd => Outcome::Collision,
        _ => Outcome::Silence,
    }
}

/// Position of a round within a protocol stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ctx {
    /// Global round number, starting at 1.
    pub round: Round,
    /// Round index within the current stage, starting at 0.
    pub step: u64,
}

/// A stage protocol executed by a [`Session`].
///
/// Only the nodes reported by `actors` are asked for an action in a round; every
/// other node listens. Every listening node that hears something (a packet or a
/// collision) is passed to `observe`, whether or not it was an actor, so protocols
/// must ignore observations that do not concern them. A node's action may depend
/// only on its own state, `ctx` and the supplied per-node RNG.
///
/// Observing [`Outcome::Silence`] must never change protocol state unless
/// `wants_silence` is set: this is what lets the session fast-forward over rounds
/// reported silent by `next_busy`.
pub trait Protocol {
    /// Writes the nodes that may transmit in `step` into `out` (which is empty on
    /// entry). Called once per executed round, before any `act`.
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>);
    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action;
    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome);
    /// Also deliver silence to actors that listened and heard nothing.
    fn wants_silence(&self) -> bool {
        false
    }
    /// Ends the stage early (used by whole-run drivers, never by fixed schedules).
    fn finished(&self) -> bool {
        false
    }
    /// First step at or after `step` in which some node may transmit. All earlier
    /// rounds are silent everywhere. `u64::MAX` means never.
    fn next_busy(&self, step: u64) -> u64 {
        step
    }
}

impl<P: Protocol + ?Sized> Protocol for Box<P> {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        (**self).actors(step, out)
    }
    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        (**self).act(ctx, node, rng)
    }
    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        (**self).observe(ctx, node, outcome)
    }
    fn wants_silence(&self) -> bool {
        (**self).wants_silence()
    }
    fn finished(&self) -> bool {
        (**self).finished()
    }
    fn next_busy(&self, step: u64) -> u64 {
        (**self).next_busy(step)
    }
}

/// Runs several protocols on disjoint round classes: step `s` belongs to protocol
/// `s % k`, which sees local step `s / k`.
pub struct Multiplex<P> {
    pub parts: Vec<P>,
}

impl<P: Protocol> Multiplex<P> {
    pub fn new(parts: Vec<P>) -> Self {
        assert!(!parts.is_empty(), "multiplex needs at least one part");
        Multiplex { parts }
    }

    fn split(&self, step: u64) -> (usize, u64) {
        let k = self.parts.len() as u64;
        ((step % k) as usize, step / k)
    }
}

impl<P: Protocol> Protocol for Multiplex<P> {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        let (i, s) = self.split(step);
        self.parts[i].actors(s, out)
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let (i, s) = self.split(ctx.step);
        self.parts[i].act(Ctx { step: s, ..ctx }, node, rng)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let (i, s) = self.split(ctx.step);
        self.parts[i].observe(Ctx { step: s, ..ctx }, node, outcome)
    }

    fn wants_silence(&self) -> bool {
        self.parts.iter().any(|p| p.wants_silence())
    }

    fn finished(&self) -> bool {
        self.parts.iter().all(|p| p.finished())
    }

    fn next_busy(&self, step: u64) -> u64 {
        let k = self.parts.len() as u64;
        let mut best = u64::MAX;
        for (i, p) in self.parts.iter().enumerate() {
            let i = i as u64;
            let local = if step <= i { 0 } else { (step - i).div_ceil(k) };
            let nb = p.next_busy(local);
            if nb != u64::MAX {
                best = best.min(nb.saturating_mul(k).saturating_add(i));
            }
        }
        best
    }
}

/// Runs node-disjoint protocols side by side in the same rounds. Each node belongs
/// to at most one part; observations at unowned nodes are dropped.
pub struct Group<P> {
    parts: Vec<P>,
    owner: Vec<u32>,
}

impl<P: Protocol> Group<P> {
    /// `parts` pairs each protocol with the nodes it owns.
    pub fn new(node_count: usize, parts: Vec<(P, Vec<NodeId>)>) -> Self {
        let mut owner = vec![u32::MAX; node_count];
        let mut protos = Vec::with_capacity(parts.len());
        for (i, (p, nodes)) in parts.into_iter().enumerate() {
            for v in nodes {
                assert_eq!(owner[v], u32::MAX, "group parts overlap at node {v}");
                owner[v] = i as u32;
            }
            protos.push(p);
        }
        Group { parts: protos, owner }
    }

    pub fn parts(&self) -> &[P] {
        &self.parts
    }

    pub fn parts_mut(&mut self) -> &mut [P] {
        &mut self.parts
    }

    pub fn into_parts(self) -> Vec<P> {
        self.parts
    }
}

impl<P: Protocol> Protocol for Group<P> {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        for p in self.parts.iter_mut() {
            p.actors(step, out);
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let i = self.owner[node] as usize;
        self.parts[i].act(ctx, node, rng)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        if let Some(p) = self.parts.get_mut(self.owner[node] as usize) {
            p.observe(ctx, node, outcome);
        }
    }

    fn wants_silence(&self) -> bool {
        self.parts.iter().any(|p| p.wants_silence())
    }

    fn finished(&self) -> bool {
        self.parts.iter().all(|p| p.finished())
    }

    fn next_busy(&self, step: u64) -> u64 {
        self.parts.iter().map(|p| p.next_busy(step)).min().unwrap_or(u64::MAX)
    }
}

/// Global clock, trace and scratch space for one simulated execution.
pub struct Session<'g> {
    graph: &'g Graph,
    cfg: EngineConfig,
    round: Round,
    trace: Trace,
    transmissions: u64,
    count: Vec<u32>,
    sender: Vec<usize>,
    transmitting: Vec<bool>,
    touched: Vec<NodeId>,
}

impl<'g> Session<'g> {
    pub fn new(graph: &'g Graph, cfg: EngineConfig) -> Self {
        let n = graph.node_count();
        Session {
            graph,
            trace: Trace::new(n),
            cfg,
            round: 0,
            transmissions: 0,
            count: vec![0; n],
            sender: vec![0; n],
            transmitting: vec![false; n],
            touched: Vec::new(),
        }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Rounds executed so far; the next round is `now() + 1`.
    pub fn now(&self) -> Round {
        self.round
    }

    pub fn transmissions(&self) -> u64 {
        self.transmissions
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    fn check_limit(&self, rounds: Round) -> Result<(), EngineError> {
        if self.round.saturating_add(rounds) > self.cfg.max_rounds {
            Err(EngineError::RoundLimit { limit: self.cfg.max_rounds })
        } else {
            Ok(())
        }
    }

    /// Advances the clock over rounds in which nobody transmits.
    pub fn idle(&mut self, rounds: Round) -> Result<(), EngineError> {
        self.check_limit(rounds)?;
        if self.cfg.trace_level == TraceLevel::Full {
            for _ in 0..rounds {
                self.round += 1;
                for v in 0..self.graph.node_count() {
                    self.trace.records.push(TraceRecord { round: self.round, node: v, event: Event::Silence });
                }
            }
        } else {
            self.round += rounds;
        }
        self.trace.rounds = self.round;
        Ok(())
    }

    /// Executes `rounds` rounds of `proto` (fewer if it reports `finished`). Returns
    /// the number of rounds executed.
    pub fn execute<P: Protocol + ?Sized>(&mut self, rounds: Round, proto: &mut P) -> Result<Round, EngineError> {
        let mut tx = Vec::new();
        let mut parts = Vec::new();
        let mut step = 0;
        while step < rounds {
            if proto.finished() {
                return Ok(step);
            }
            let busy = proto.next_busy(step).min(rounds);
            if busy > step {
                self.idle(busy - step)?;
                step = busy;
                continue;
            }
            self.check_limit(1)?;
            self.step(step, proto, &mut tx, &mut parts);
            step += 1;
        }
        Ok(rounds)
    }

    fn step<P: Protocol + ?Sized>(
        &mut self,
        step: u64,
        proto: &mut P,
        tx: &mut Vec<(NodeId, Packet)>,
        participants: &mut Vec<NodeId>,
    ) {
        self.round += 1;
        let ctx = Ctx { round: self.round, step };
        let g = self.graph;
        participants.clear();
        proto.actors(step, participants);
        tx.clear();
        for &v in participants.iter() {
            let mut rng = node_rng(self.cfg.seed, v, self.round);
            if let Action::Transmit(p) = proto.act(ctx, v, &mut rng) {
                debug_assert_eq!(p.src, v, "packet src must be the transmitter");
                tx.push((v, p));
            }
        }
        self.transmissions += tx.len() as u64;
        for (i, (u, _)) in tx.iter().enumerate() {
            self.transmitting[*u] = true;
            for &w in g.neighbors(*u) {
                if self.count[w] == 0 {
                    self.touched.push(w);
                }
                self.count[w] += 1;
                self.sender[w] = i;
            }
        }
        self.touched.sort_unstable();
        let level = self.cfg.trace_level;
        let cd = self.cfg.collision_detection;
        if level != TraceLevel::Off {
            for (u, p) in tx.iter() {
                self.trace.records.push(TraceRecord { round: self.round, node: *u, event: Event::Transmit(p.clone()) });
            }
            if level == TraceLevel::Full {
                for w in 0..g.node_count() {
                    if !self.transmitting[w] {
                        let event = self.event_for(w, cd, tx);
                        self.trace.records.push(TraceRecord { round: self.round, node: w, event });
                    }
                }
            } else {
                for i in 0..self.touched.len() {
                    let w = self.touched[i];
                    if !self.transmitting[w] {
                        let event = self.event_for(w, cd, tx);
                        if event != Event::Silence {
                            self.trace.records.push(TraceRecord { round: self.round, node: w, event });
                        }
                    }
                }
            }
        }
        for i in 0..self.touched.len() {
            let w = self.touched[i];
            if !self.transmitting[w] {
                match classify(self.count[w], cd, || tx[self.sender[w]].1.clone()) {
                    Outcome::Silence => {}
                    outcome => proto.observe(ctx, w, outcome),
                }
            }
        }
        if proto.wants_silence() {
            for &v in participants.iter() {
                if !self.transmitting[v] && (self.count[v] == 0 || (self.count[v] > 1 && !cd)) {
                    proto.observe(ctx, v, Outcome::Silence);
                }
            }
        }
        for &w in &self.touched {
            self.count[w] = 0;
        }
        self.touched.clear();
        for (u, _) in tx.iter() {
            self.transmitting[*u] = false;
        }
        self.trace.rounds = self.round;
    }

    fn event_for(&self, w: NodeId, cd: bool, tx: &[(NodeId, Packet)]) -> Event {
        match self.count[w] {
            0 => Event::Silence,
            1 => Event::Receive { from: tx[self.sender[w]].0 },
            _ if cd => Event::Collision,
            _ => Event::Silence,
        }
    }
}

/// A per-node program with purely local state.
pub trait NodeProgram {
    fn on_round(&mut self, round: Round, rng: &mut NodeRng) -> Action;
    fn on_outcome(&mut self, round: Round, outcome: &Outcome);
    fn done(&self) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    RoundLimit,
}

#[derive(Debug)]
pub struct RunReport {
    pub trace: Trace,
    pub rounds: Round,
    pub status: RunStatus,
}

struct Programs {
    programs: Vec<Box<dyn NodeProgram>>,
    all: Vec<NodeId>,
}

impl Protocol for Programs {
    fn actors(&mut self, _step: u64, out: &mut Vec<NodeId>) {
        out.extend_from_slice(&self.all);
    }
    fn wants_silence(&self) -> bool {
        true
    }
    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        if self.programs[node].done() {
            Action::Listen
        } else {
            self.programs[node].on_round(ctx.round, rng)
        }
    }
    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        if !self.programs[node].done() {
            self.programs[node].on_outcome(ctx.round, &outcome);
        }
    }
    fn finished(&self) -> bool {
        self.programs.iter().all(|p| p.done())
    }
}

/// Runs one program per node until all are done or `cfg.max_rounds` is reached.
pub fn run(programs: Vec<Box<dyn NodeProgram>>, g: &Graph, cfg: &EngineConfig) -> RunReport {
    assert_eq!(programs.len(), g.node_count(), "one program per node");
    let mut session = Session::new(g, cfg.clone());
    let mut driver = Programs { programs, all: (0..g.node_count()).collect() };
    let mut status = RunStatus::Completed;
    while !driver.finished() {
        if session.now() >= cfg.max_rounds {
            status = RunStatus::RoundLimit;
            break;
        }
        let chunk = (cfg.max_rounds - session.now()).min(1 << 16);
        session.execute(chunk, &mut driver).expect("chunk fits within the limit");
    }
    let rounds = session.now();
    RunReport { trace: session.into_trace(), rounds, status }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphFamily};

    fn star(n: usize) -> Graph {
        generate_graph(&GraphFamily::Star { n }, 0).unwrap()
    }

    #[test]
    fn two_leaves_collide_at_center() {
        let g = star(4);
        let tx = vec![(1, Packet::noise(1, 1)), (2, Packet::noise(2, 1))];
        assert_eq!(resolve_round(&tx, &g, true)[0], Some(Outcome::Collision));
        assert_eq!(resolve_round(&tx, &g, false)[0], Some(Outcome::Silence));
        assert_eq!(resolve_round(&tx, &g, true)[1], None);
        assert_eq!(resolve_round(&tx, &g, true)[3], Some(Outcome::Silence));
    }

    #[test]
    fn single_transmitter_on_path() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        let p = Packet::noise(0, 1);
        let out = resolve_round(&[(0, p.clone())], &g, true);
        assert_eq!(out[1], Some(Outcome::Received(p)));
        assert_eq!(out[2], Some(Outcome::Silence));
    }

    /// Node 0 transmits every round until it has sent `stop` packets.
    struct Beacon {
        sent: u64,
        stop: u64,
    }
    impl NodeProgram for Beacon {
        fn on_round(&mut self, round: Round, _: &mut NodeRng) -> Action {
            self.sent += 1;
            Action::Transmit(Packet::noise(0, round))
        }
        fn on_outcome(&mut self, _: Round, _: &Outcome) {}
        fn done(&self) -> bool {
            self.sent >= self.stop
        }
    }

    struct Counter {
        heard: usize,
        need: usize,
    }
    impl NodeProgram for Counter {
        fn on_round(&mut self, _: Round, _: &mut NodeRng) -> Action {
            Action::Listen
        }
        fn on_outcome(&mut self, _: Round, o: &Outcome) {
            if matches!(o, Outcome::Received(_)) {
                self.heard += 1;
            }
        }
        fn done(&self) -> bool {
            self.heard >= self.need
        }
    }

    struct Done;
    impl NodeProgram for Done {
        fn on_round(&mut self, _: Round, _: &mut NodeRng) -> Action {
            Action::Listen
        }
        fn on_outcome(&mut self, _: Round, _: &Outcome) {}
        fn done(&self) -> bool {
            true
        }
    }

    #[test]
    fn finished_programs_give_empty_trace() {
        let g = star(3);
        let r = run(vec![Box::new(Done), Box::new(Done), Box::new(Done)], &g, &EngineConfig::default());
        assert_eq!(r.rounds, 0);
        assert_eq!(r.status, RunStatus::Completed);
        assert!(r.trace.is_empty());
    }

    #[test]
    fn listener_receives_every_round_and_limit_is_reported() {
        let g = generate_graph(&GraphFamily::Path { n: 2 }, 0).unwrap();
        let cfg = EngineConfig { max_rounds: 10, ..Default::default() };
        let r = run(vec![Box::new(Beacon { sent: 0, stop: 99 }), Box::new(Counter { heard: 0, need: 100 })], &g, &cfg);
        assert_eq!(r.status, RunStatus::RoundLimit);
        assert_eq!(r.rounds, 10);
        let receptions = r.trace.records.iter().filter(|x| matches!(x.event, Event::Receive { from: 0 })).count();
        assert_eq!(receptions, 10);
        let r = run(vec![Box::new(Beacon { sent: 0, stop: 4 }), Box::new(Counter { heard: 0, need: 4 })], &g, &cfg);
        assert_eq!((r.status, r.rounds), (RunStatus::Completed, 4));
    }

    #[test]
    fn full_level_records_every_node_every_round() {
        let g = star(4);
        let cfg = EngineConfig { max_rounds: 3, trace_level: TraceLevel::Full, ..Default::default() };
        let progs: Vec<Box<dyn NodeProgram>> = vec![
            Box::new(Beacon { sent: 0, stop: 99 }),
            Box::new(Counter { heard: 0, need: 99 }),
            Box::new(Counter { heard: 0, need: 99 }),
            Box::new(Counter { heard: 0, need: 99 }),
        ];
        let r = run(progs, &g, &cfg);
        assert_eq!(r.trace.records.len(), 12);
        for (round, recs) in r.trace.by_round() {
            assert!((1..=3).contains(&round));
            assert_eq!(recs.len(), 4);
        }
    }

    #[test]
    fn node_rng_streams_are_independent_of_node_count() {
        use rand::Rng;
        let a: u64 = node_rng(7, 3, 11).gen();
        let b: u64 = node_rng(7, 3, 11).gen();
        let c: u64 = node_rng(7, 4, 11).gen();
        let d: u64 = node_rng(7, 3, 12).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
