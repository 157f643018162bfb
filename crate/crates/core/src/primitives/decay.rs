//! The Decay protocol, in its classical form and in the level-gated MMV form.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    Action, Ctx, EngineConfig, EngineError, NodeRng, Outcome, Packet, PacketKind, Protocol, Round, Session, Trace,
};
use crate::graph::{bfs_layering, Graph, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    #[default]
    Standard,
    Mmv,
}

/// What a node does when the schedule prompts it but it has nothing to send.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    #[default]
    Noise,
    Silent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecayParams {
    pub phase_len: usize,
    pub phases: u64,
    pub mode: DecayMode,
    pub uninformed: NoisePolicy,
}

impl DecayParams {
    /// Classical Decay: uninformed nodes stay silent.
    pub fn standard(phase_len: usize, phases: u64) -> Self {
        DecayParams { phase_len, phases, mode: DecayMode::Standard, uninformed: NoisePolicy::Silent }
    }

    /// MMV-Decay: prompted nodes without the message send noise.
    pub fn mmv(phase_len: usize, phases: u64) -> Self {
        DecayParams { phase_len, phases, mode: DecayMode::Mmv, uninformed: NoisePolicy::Noise }
    }

    pub fn rounds(&self) -> u64 {
        match self.mode {
            DecayMode::Standard => self.phases * self.phase_len as u64,
            DecayMode::Mmv => 3 * self.phases * self.phase_len as u64,
        }
    }
}

/// True with probability `2^-e`.
pub fn coin_pow2<R: Rng + ?Sized>(e: u32, rng: &mut R) -> bool {
    match e {
        0 => true,
        1..=63 => rng.gen::<u64>() & ((1u64 << e) - 1) == 0,
        _ => false,
    }
}

/// Transmit-probability exponent for round `t` (1-based) of a classical Decay run.
pub fn standard_exponent(t: Round, phase_len: usize) -> u32 {
    ((t - 1) % phase_len as u64) as u32 + 1
}

/// MMV gate: `Some(e)` iff a node on `level` is prompted in round `t`, transmitting
/// with probability `2^-e`.
pub fn mmv_exponent(t: Round, level: usize, phase_len: usize) -> Option<u32> {
    let offset = t as i128 - level as i128 - 1;
    if offset.rem_euclid(3) != 0 {
        return None;
    }
    Some((offset.div_euclid(3)).rem_euclid(phase_len as i128) as u32)
}

/// One node's Decay decision in round `t`.
pub fn decay_action(
    node: NodeId,
    level: usize,
    message: Option<&Packet>,
    t: Round,
    params: &DecayParams,
    rng: &mut NodeRng,
) -> Action {
    let exponent = match params.mode {
        DecayMode::Standard => Some(standard_exponent(t, params.phase_len)),
        DecayMode::Mmv => mmv_exponent(t, level, params.phase_len),
    };
    let Some(e) = exponent else { return Action::Listen };
    match message {
        Some(m) if coin_pow2(e, rng) => Action::Transmit(m.relayed_by(node)),
        None if params.uninformed == NoisePolicy::Noise && coin_pow2(e, rng) => {
            Action::Transmit(Packet::noise(node, t))
        }
        _ => Action::Listen,
    }
}

/// Single-hop Decay: fixed senders each repeat their own packet for `phases` phases;
/// listeners log every packet they receive.
pub struct DecayStage {
    senders: Vec<NodeId>,
    kinds: Vec<PacketKind>,
    listening: Vec<bool>,
    is_sender: Vec<u32>,
    phase_len: usize,
    /// `(listener, round, packet)` for every reception.
    pub heard: Vec<(NodeId, Round, Packet)>,
}

impl DecayStage {
    pub fn new(n: usize, senders: Vec<(NodeId, PacketKind)>, listeners: Vec<NodeId>, phase_len: usize) -> Self {
        let mut is_sender = vec![u32::MAX; n];
        let (ids, kinds): (Vec<_>, Vec<_>) = senders.into_iter().unzip();
        for (i, &v) in ids.iter().enumerate() {
            is_sender[v] = i as u32;
        }
        let mut listening = vec![false; n];
        for v in listeners {
            listening[v] = is_sender[v] == u32::MAX;
        }
        DecayStage { senders: ids, kinds, listening, is_sender, phase_len, heard: Vec::new() }
    }

    /// First packet heard by each listener, in listener order of first reception.
    pub fn first_heard(&self) -> Vec<(NodeId, Packet)> {
        let mut seen = std::collections::HashSet::new();
        self.heard.iter().filter(|(v, _, _)| seen.insert(*v)).map(|(v, _, p)| (*v, p.clone())).collect()
    }
}

impl Protocol for DecayStage {
    fn actors(&mut self, _step: u64, out: &mut Vec<NodeId>) {
        out.extend_from_slice(&self.senders);
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let i = self.is_sender[node];
        if i == u32::MAX {
            return Action::Listen;
        }
        let e = standard_exponent(ctx.step + 1, self.phase_len);
        if coin_pow2(e, rng) {
            Action::Transmit(Packet::new(node, ctx.round, self.kinds[i as usize].clone()))
        } else {
            Action::Listen
        }
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        if let Outcome::Received(p) = outcome {
            if self.listening[node] {
                self.heard.push((node, ctx.round, p));
            }
        }
    }

    fn next_busy(&self, step: u64) -> u64 {
        if self.senders.is_empty() {
            u64::MAX
        } else {
            step
        }
    }
}

/// Multi-hop Decay flooding from `source`.
struct DecayFlood {
    params: DecayParams,
    levels: Vec<usize>,
    message: Vec<Option<Packet>>,
    informed_at: Vec<Option<Round>>,
    missing: usize,
    all: Vec<NodeId>,
}

impl Protocol for DecayFlood {
    fn actors(&mut self, _step: u64, out: &mut Vec<NodeId>) {
        out.extend_from_slice(&self.all);
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        decay_action(node, self.levels[node], self.message[node].as_ref(), ctx.step + 1, &self.params, rng)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        if let Outcome::Received(p) = outcome {
            if !p.is_noise() && self.message[node].is_none() {
                self.message[node] = Some(p);
                self.informed_at[node] = Some(ctx.round);
                self.missing -= 1;
            }
        }
    }

    fn finished(&self) -> bool {
        self.missing == 0
    }
}

#[derive(Debug)]
pub struct DecayBroadcastReport {
    /// First round by which every node holds the message.
    pub completion: Option<Round>,
    pub informed_at: Vec<Option<Round>>,
    pub trace: Trace,
}

/// Floods `msg` from `source` with Decay until every node holds it or `cfg.max_rounds`
/// passes. MMV mode gates nodes by their BFS level.
pub fn decay_broadcast(
    g: &Graph,
    source: NodeId,
    msg: PacketKind,
    cfg: &EngineConfig,
    params: DecayParams,
) -> DecayBroadcastReport {
    let n = g.node_count();
    let levels = bfs_layering(g, source).level;
    let mut message = vec![None; n];
    message[source] = Some(Packet::new(source, 0, msg));
    let mut informed_at = vec![None; n];
    informed_at[source] = Some(0);
    let mut flood = DecayFlood { params, levels, message, informed_at, missing: n - 1, all: (0..n).collect() };
    let mut session = Session::new(g, cfg.clone());
    let limit = cfg.max_rounds;
    match session.execute(limit, &mut flood) {
        Ok(_) | Err(EngineError::RoundLimit { .. }) => {}
        Err(e) => unreachable!("decay flood cannot fail with {e}"),
    }
    let completion = flood.informed_at.iter().map(|r| *r).collect::<Option<Vec<_>>>().map(|v| v.into_iter().max().unwrap_or(0));
    DecayBroadcastReport { completion, informed_at: flood.informed_at, trace: session.into_trace() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::graph::{generate_graph, GraphFamily};
    use rand::SeedableRng;

    #[test]
    fn mmv_gate_matches_level_residue() {
        for level in 0..7 {
            for t in 1..60u64 {
                let prompted = mmv_exponent(t, level, 5).is_some();
                assert_eq!(prompted, t % 3 == (level as u64 + 1) % 3, "t={t} level={level}");
            }
        }
        assert_eq!(mmv_exponent(1, 0, 5), Some(0));
        assert_eq!(mmv_exponent(4, 0, 5), Some(1));
        assert_eq!(mmv_exponent(16, 0, 5), Some(0));
    }

    #[test]
    fn prompted_uninformed_node_sends_noise() {
        let params = DecayParams::mmv(4, 1);
        let mut rng = NodeRng::seed_from_u64(1);
        assert_eq!(decay_action(3, 2, None, 3, &params, &mut rng), Action::Transmit(Packet::noise(3, 3)));
        assert_eq!(decay_action(3, 2, None, 4, &params, &mut rng), Action::Listen);
    }

    #[test]
    fn first_phase_round_probability_is_half() {
        let params = DecayParams::standard(6, 1);
        let msg = Packet::new(0, 0, PacketKind::Data(Bits::zeros(1)));
        let mut hits = 0;
        for s in 0..20_000u64 {
            let mut rng = NodeRng::seed_from_u64(s);
            if matches!(decay_action(0, 0, Some(&msg), 1, &params, &mut rng), Action::Transmit(_)) {
                hits += 1;
            }
        }
        let f = hits as f64 / 20_000.0;
        assert!((f - 0.5).abs() < 0.02, "frequency {f}");
    }

    #[test]
    fn path_of_three_needs_two_hops() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        for seed in 0..20 {
            let cfg = EngineConfig { seed, max_rounds: 10_000, ..Default::default() };
            let r = decay_broadcast(&g, 0, PacketKind::Data(Bits::zeros(4)), &cfg, DecayParams::standard(2, 1));
            assert!(r.completion.unwrap() >= 2);
        }
    }
}
