//! Inter-ring transfer: boundary senders holding a whole batch send random linear
//! combinations of it by Decay until listeners reach full rank.

use crate::engine::{Action, Ctx, EngineConfig, EngineError, NodeRng, Outcome, Protocol, Round, Session};
use crate::graph::{Graph, NodeId};
use crate::primitives::decay::{coin_pow2, standard_exponent};
use crate::rlnc::{Generation, KnowledgeSpace};

use super::BroadcastError;

pub struct FecStage {
    senders: Vec<NodeId>,
    space: Vec<Option<KnowledgeSpace>>,
    sending: Vec<bool>,
    phase_len: usize,
    /// Round at which each listener reached full rank.
    pub completed_at: Vec<Option<Round>>,
    missing: usize,
    stop_when_done: bool,
}

impl FecStage {
    /// `senders` hold full spaces; `listeners` start from the spaces given.
    pub fn new(
        n: usize,
        senders: Vec<(NodeId, KnowledgeSpace)>,
        listeners: Vec<(NodeId, KnowledgeSpace)>,
        phase_len: usize,
    ) -> Self {
        let mut space = vec![None; n];
        let mut sending = vec![false; n];
        let mut ids = Vec::with_capacity(senders.len());
        for (v, s) in senders {
            space[v] = Some(s);
            sending[v] = true;
            ids.push(v);
        }
        let mut completed_at = vec![None; n];
        let mut missing = 0;
        for (v, s) in listeners {
            if s.is_full() {
                completed_at[v] = Some(0);
            } else {
                missing += 1;
            }
            space[v] = Some(s);
        }
        FecStage { senders: ids, space, sending, phase_len, completed_at, missing, stop_when_done: false }
    }

    /// Stop as soon as every listener is complete.
    pub fn until_done(mut self) -> Self {
        self.stop_when_done = true;
        self
    }

    pub fn space(&self, v: NodeId) -> Option<&KnowledgeSpace> {
        self.space[v].as_ref()
    }

    pub fn into_spaces(self) -> Vec<Option<KnowledgeSpace>> {
        self.space
    }
}

impl Protocol for FecStage {
    fn actors(&mut self, _step: u64, out: &mut Vec<NodeId>) {
        out.extend_from_slice(&self.senders);
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        if !coin_pow2(standard_exponent(ctx.step + 1, self.phase_len), rng) {
            return Action::Listen;
        }
        match self.space[node].as_ref().map(|s| s.encode_packet(node, ctx.round, rng)) {
            Some(Ok(p)) => Action::Transmit(p),
            _ => Action::Listen,
        }
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if self.sending[node] {
            return;
        }
        let Some(s) = self.space[node].as_mut() else { return };
        if s.insert_packet(&p).unwrap_or(false) && s.is_full() {
            self.completed_at[node] = Some(ctx.round);
            self.missing -= 1;
        }
    }

    fn finished(&self) -> bool {
        self.stop_when_done && self.missing == 0
    }

    fn next_busy(&self, step: u64) -> u64 {
        if self.senders.is_empty() {
            u64::MAX
        } else {
            step
        }
    }
}

#[derive(Debug)]
pub struct TransferReport {
    /// `(listener, round it decoded the batch)`.
    pub completed_at: Vec<(NodeId, Option<Round>)>,
    /// Listeners whose decoded messages differ from the batch.
    pub corrupt: Vec<NodeId>,
    pub rounds: Round,
}

impl TransferReport {
    pub fn incomplete(&self) -> Vec<NodeId> {
        self.completed_at.iter().filter(|(_, r)| r.is_none()).map(|&(v, _)| v).collect()
    }
}

/// Delivers `batch` from `outer` to `inner` with up to `phases` Decay phases of
/// `phase_len` rounds, stopping once every listener decodes.
pub fn inter_ring_transfer(
    g: &Graph,
    outer: &[NodeId],
    inner: &[NodeId],
    batch: &Generation,
    phases: u64,
    phase_len: usize,
    cfg: &EngineConfig,
) -> Result<TransferReport, BroadcastError> {
    if outer.is_empty() {
        return Err(BroadcastError::NoSenders);
    }
    let empty = KnowledgeSpace::new(batch.id, batch.size(), batch.body_len());
    let senders = outer.iter().map(|&v| (v, KnowledgeSpace::full(batch))).collect();
    let listeners = inner.iter().map(|&v| (v, empty.clone())).collect();
    let mut stage = FecStage::new(g.node_count(), senders, listeners, phase_len).until_done();
    let mut session = Session::new(g, cfg.clone());
    match session.execute(phases * phase_len as u64, &mut stage) {
        Ok(_) | Err(EngineError::RoundLimit { .. }) => {}
        Err(e) => unreachable!("transfer cannot fail with {e}"),
    }
    let corrupt = inner
        .iter()
        .copied()
        .filter(|&v| stage.space(v).and_then(|s| s.decode()).is_some_and(|m| m != batch.messages))
        .collect();
    Ok(TransferReport {
        completed_at: inner.iter().map(|&v| (v, stage.completed_at[v])).collect(),
        corrupt,
        rounds: session.now(),
    })
}
