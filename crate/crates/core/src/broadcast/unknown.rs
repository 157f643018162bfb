//! Multi-message broadcast without topology knowledge: batches pipelined over rings.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::constants::Constants;
use crate::engine::{Action, Ctx, EngineConfig, Group, NodeRng, Outcome, Protocol, Round, Session};
use crate::graph::{bfs_layering, Graph, NodeId};
use crate::gst::GstLabels;
use crate::primitives::wave::run_wave;
use crate::primitives::NoisePolicy;
use crate::rlnc::{Generation, KnowledgeSpace, RlncError};
use crate::schedules::{MmvBroadcast, MmvWindow};

use super::strips::StripMmv;
use super::{all_done, build_ring_gsts, BroadcastError, Failure, FecStage, Halt, PipelineReport, RingDecomposition};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingMode {
    /// One generation per batch.
    #[default]
    FullVector,
    /// Generations of `batch·L` messages with strip restarts inside each ring.
    Generations,
}

/// Batch `b` is handled by ring `j` in epoch `j + spacing·b`. With several rings the
/// spacing is 2, so adjacent rings are never active in the same epoch and each ring
/// works on at most one batch at a time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Range<usize>>,
    pub rings: usize,
    pub spacing: usize,
}

impl BatchPlan {
    pub fn new(k: usize, batch_size: usize, rings: usize) -> Self {
        let batch_size = batch_size.clamp(1, k.max(1));
        let batches = (0..k).step_by(batch_size).map(|a| a..(a + batch_size).min(k)).collect();
        BatchPlan { batch_size, batches, rings, spacing: if rings > 1 { 2 } else { 1 } }
    }

    pub fn epochs(&self) -> usize {
        match self.batches.len() {
            0 => 0,
            b => self.rings + self.spacing * (b - 1),
        }
    }

    /// The batch ring `j` works on in epoch `e`.
    pub fn batch_at(&self, j: usize, e: usize) -> Option<usize> {
        let x = e.checked_sub(j)?;
        (x % self.spacing == 0 && x / self.spacing < self.batches.len()).then_some(x / self.spacing)
    }
}

enum RingStage {
    Full(MmvBroadcast),
    Strips(StripMmv),
}

impl RingStage {
    /// Decoded messages at `v` and the schedule round they were complete.
    fn decoded(&self, v: NodeId) -> Option<(Vec<Bits>, Round)> {
        match self {
            RingStage::Full(m) => m.decoded(v).map(|x| (x, m.completed_at[v].unwrap_or(0))),
            RingStage::Strips(s) => s.decoded(v),
        }
    }
}

impl Protocol for RingStage {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        match self {
            RingStage::Full(p) => p.actors(step, out),
            RingStage::Strips(p) => p.actors(step, out),
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        match self {
            RingStage::Full(p) => p.act(ctx, node, rng),
            RingStage::Strips(p) => p.act(ctx, node, rng),
        }
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        match self {
            RingStage::Full(p) => p.observe(ctx, node, outcome),
            RingStage::Strips(p) => p.observe(ctx, node, outcome),
        }
    }
}

struct Setup<'a> {
    messages: &'a [Bits],
    plan: BatchPlan,
    mode: CodingMode,
    log_n: usize,
    mmv_len: u64,
    fec_len: u64,
    strip_height: usize,
    step_rounds: u64,
    gen_size: usize,
}

impl Setup<'_> {
    /// Generations of batch `b`; ids are unique across the whole run.
    fn generations(&self, b: usize) -> Vec<Generation> {
        let range = self.plan.batches[b].clone();
        let msgs = &self.messages[range.clone()];
        match self.mode {
            CodingMode::FullVector => vec![Generation::new(range.start as u32, msgs.to_vec()).unwrap()],
            CodingMode::Generations => msgs
                .chunks(self.gen_size)
                .enumerate()
                .map(|(i, c)| Generation::new((range.start + i * self.gen_size) as u32, c.to_vec()).unwrap())
                .collect(),
        }
    }
}

/// Collision wave, rings, all ring GSTs in parallel, then epochs. In each epoch every
/// active ring runs an MMV stage on its batch, then the outer boundary of each active
/// ring sends random linear combinations of the batch to the next ring's inner boundary
/// by Decay.
pub fn multi_message_unknown(
    g: &Graph,
    source: NodeId,
    messages: &[Bits],
    mode: CodingMode,
    constants: &Constants,
    cfg: &EngineConfig,
) -> Result<PipelineReport, BroadcastError> {
    if !cfg.collision_detection {
        return Err(BroadcastError::CollisionDetectionRequired);
    }
    if source >= g.node_count() {
        return Err(BroadcastError::BadSource(source));
    }
    Generation::new(0, messages.to_vec()).map_err(|e| match e {
        RlncError::NoMessages => BroadcastError::NoMessages,
        _ => BroadcastError::UnequalMessages,
    })?;
    let n = g.node_count();
    let depth = bfs_layering(g, source).diameter_bound;
    let log_n = constants.log_n(g);
    let k = messages.len();
    let mut report = PipelineReport {
        pipeline: match mode {
            CodingMode::FullVector => "unknown",
            CodingMode::Generations => "unknown_gen",
        },
        n,
        depth,
        k,
        completion: None,
        budget: constants.round_budget(depth, k, log_n),
        stages: Vec::new(),
        failure: None,
        labels: None,
        windows: Vec::new(),
        trace: Default::default(),
    };
    let mut session = Session::new(g, cfg.clone());
    let mut got = vec![None; n];
    if let Err(h) = run(&mut session, source, depth, messages, mode, constants, &mut report, &mut got) {
        report.failure = Some(h.into_failure("engine"));
    }
    report.completion = all_done(&got);
    report.check_budget();
    report.trace = session.into_trace();
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run(
    session: &mut Session,
    source: NodeId,
    depth: usize,
    messages: &[Bits],
    mode: CodingMode,
    constants: &Constants,
    report: &mut PipelineReport,
    got: &mut [Option<Round>],
) -> Result<(), Halt> {
    let g = session.graph();
    let n = g.node_count();
    let log_n = constants.log_n(g);
    let l = log_n as u64;
    let levels = run_wave(session, source, depth)?;
    report.stages.push(("wave".into(), session.now()));
    let Some(levels) = levels.into_iter().collect::<Option<Vec<_>>>() else {
        return Err(Failure::new("wave", "some node heard nothing").into());
    };
    let mut width = constants.ring_width(depth, log_n);
    if width <= depth {
        // Rings two apart must not touch, even through their boundaries.
        width = width.max(2);
    }
    let rings = RingDecomposition::new(levels, width);
    let built = build_ring_gsts(session, &rings, constants)?;
    report.stages.push(("gst".into(), built.gst_rounds));
    report.stages.push(("vdist".into(), built.vdist_rounds));
    let labels = built.labels;
    report.labels = Some(labels.clone());

    let k = messages.len();
    let ring_batch = (constants.ring_batch * l) as usize;
    let plan = BatchPlan::new(k, ring_batch.max(depth.div_ceil(log_n.pow(3))), rings.count());
    let kb = plan.batch_size;
    let gen_size = constants.generation_size(log_n);
    let strip_height = constants.strip_height(log_n);
    let step_rounds = constants.step_rounds(log_n);
    let mmv_len = match mode {
        CodingMode::FullVector => constants.ring_mmv_rounds(rings.width, kb, log_n),
        CodingMode::Generations => {
            let max_height = 2 * log_n * log_n + rings.width - 1;
            let strips = max_height / strip_height + 1;
            (strips + kb.div_ceil(gen_size)) as u64 * step_rounds
        }
    };
    let fec_phases = (constants.decay_phases * l).max(constants.fec_phases * kb as u64);
    let setup = Setup {
        messages,
        plan,
        mode,
        log_n,
        mmv_len,
        fec_len: if rings.count() > 1 { fec_phases * l } else { 0 },
        strip_height,
        step_rounds,
        gen_size,
    };

    // decoded[b][v]: round at which `v` held batch `b`.
    let batches = setup.plan.batches.len();
    let mut decoded = vec![vec![None; n]; batches];
    for row in decoded.iter_mut() {
        row[source] = Some(0);
    }
    let (mut mmv_total, mut fec_total) = (0, 0);
    for e in 0..setup.plan.epochs() {
        let active: Vec<(usize, usize)> =
            (0..rings.count()).filter_map(|j| setup.plan.batch_at(j, e).map(|b| (j, b))).collect();
        mmv_epoch(session, &setup, &rings, &labels, &active, &mut decoded, report)?;
        mmv_total += setup.mmv_len;
        for &(j, b) in &active {
            let missing = rings.members(j).into_iter().filter(|&v| decoded[b][v].is_none()).count();
            if missing > 0 {
                let detail = format!("{missing} node(s) without batch {b}");
                return Err(Failure::new(format!("ring{j}/batch{b}"), detail).into());
            }
        }
        let handoffs: Vec<_> = active.iter().copied().filter(|&(j, _)| j + 1 < rings.count()).collect();
        if !handoffs.is_empty() {
            fec_epoch(session, &setup, &rings, &handoffs, &mut decoded)?;
            fec_total += setup.fec_len;
            for &(j, b) in &handoffs {
                let missing = rings.inner(j + 1).iter().filter(|&&v| decoded[b][v].is_none()).count();
                if missing > 0 {
                    let detail = format!("{missing} inner node(s) without batch {b}");
                    return Err(Failure::new(format!("fec{j}/batch{b}"), detail).into());
                }
            }
        }
    }
    report.stages.push(("mmv".into(), mmv_total));
    report.stages.push(("fec".into(), fec_total));
    for v in 0..n {
        got[v] = decoded.iter().map(|row| row[v]).collect::<Option<Vec<_>>>().map(|r| r.into_iter().max().unwrap_or(0));
    }
    Ok(())
}

fn mmv_epoch(
    session: &mut Session,
    setup: &Setup,
    rings: &RingDecomposition,
    labels: &GstLabels,
    active: &[(usize, usize)],
    decoded: &mut [Vec<Option<Round>>],
    report: &mut PipelineReport,
) -> Result<(), Halt> {
    let n = session.graph().node_count();
    let offset = session.now();
    if active.is_empty() {
        session.idle(setup.mmv_len)?;
        return Ok(());
    }
    let mut parts = Vec::new();
    for &(j, b) in active {
        let members = rings.members(j);
        let holders: Vec<NodeId> = members.iter().copied().filter(|&v| decoded[b][v].is_some()).collect();
        let gens = setup.generations(b);
        let stage = match setup.mode {
            CodingMode::FullVector => RingStage::Full(
                MmvBroadcast::new(labels, &members, &holders, &gens[0], NoisePolicy::Noise, setup.log_n).run_to_end(),
            ),
            CodingMode::Generations => RingStage::Strips(StripMmv::new(
                labels,
                &members,
                &holders,
                &gens,
                setup.strip_height,
                setup.step_rounds,
                NoisePolicy::Noise,
                setup.log_n,
            )),
        };
        parts.push((stage, members));
    }
    let mut group = Group::new(n, parts);
    session.execute(setup.mmv_len, &mut group)?;
    report.windows.push(MmvWindow { log_n: setup.log_n, offset, len: setup.mmv_len });
    for (stage, &(j, b)) in group.into_parts().iter().zip(active) {
        let want = &setup.messages[setup.plan.batches[b].clone()];
        for v in rings.members(j) {
            if decoded[b][v].is_some() {
                continue;
            }
            if let Some((msgs, t)) = stage.decoded(v) {
                if msgs == want {
                    decoded[b][v] = Some(offset + t);
                }
            }
        }
    }
    Ok(())
}

fn fec_epoch(
    session: &mut Session,
    setup: &Setup,
    rings: &RingDecomposition,
    handoffs: &[(usize, usize)],
    decoded: &mut [Vec<Option<Round>>],
) -> Result<(), Halt> {
    let n = session.graph().node_count();
    let mut senders = Vec::new();
    let mut listeners = Vec::new();
    let mut gens = Vec::new();
    for &(j, b) in handoffs {
        let range = setup.plan.batches[b].clone();
        // Ids past every message index keep transfer generations apart from ring ones.
        let gen = Generation::new((setup.messages.len() + b) as u32, setup.messages[range].to_vec()).unwrap();
        for &v in rings.outer(j).iter().filter(|&&v| decoded[b][v].is_some()) {
            senders.push((v, KnowledgeSpace::full(&gen)));
        }
        for &v in rings.inner(j + 1) {
            listeners.push((v, KnowledgeSpace::new(gen.id, gen.size(), gen.body_len())));
        }
        gens.push((j, b, gen));
    }
    let mut stage = FecStage::new(n, senders, listeners, setup.log_n);
    session.execute(setup.fec_len, &mut stage)?;
    for (j, b, gen) in gens {
        for &v in rings.inner(j + 1) {
            if stage.space(v).and_then(|s| s.decode()).is_some_and(|m| m == gen.messages) {
                decoded[b][v] = stage.completed_at[v];
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphFamily};
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn messages(k: usize, seed: u64) -> Vec<Bits> {
        let mut rng = SmallRng::seed_from_u64(seed);
        (0..k).map(|_| Bits::random(24, &mut rng)).collect()
    }

    #[test]
    fn plan_keeps_adjacent_rings_apart() {
        let p = BatchPlan::new(10, 3, 4);
        assert_eq!(p.batches, vec![0..3, 3..6, 6..9, 9..10]);
        assert_eq!(p.epochs(), 4 + 2 * 3);
        for e in 0..p.epochs() {
            let active: Vec<usize> = (0..4).filter(|&j| p.batch_at(j, e).is_some()).collect();
            assert!(active.windows(2).all(|w| w[1] - w[0] >= 2), "epoch {e}: {active:?}");
        }
        for j in 0..4 {
            let seen: Vec<usize> = (0..p.epochs()).filter_map(|e| p.batch_at(j, e)).collect();
            assert_eq!(seen, vec![0, 1, 2, 3]);
        }
        assert_eq!(BatchPlan::new(5, 8, 1).epochs(), 1);
    }

    #[test]
    fn single_ring_reduces_to_one_gst() {
        let g = generate_graph(&GraphFamily::GnpConnected { n: 32, p: 0.15 }, 1).unwrap();
        let r = multi_message_unknown(&g, 0, &messages(6, 1), CodingMode::FullVector, &Constants::default(), &EngineConfig::with_seed(1)).unwrap();
        assert!(r.delivered(), "{:?}", r.failure);
        assert_eq!(r.stage_breakdown().split(';').last(), Some("fec:0"));
    }

    #[test]
    fn forced_rings_on_a_path_both_modes() {
        let mut c = Constants::default();
        c.ring_width = Some(12);
        let g = generate_graph(&GraphFamily::Path { n: 50 }, 0).unwrap();
        for mode in [CodingMode::FullVector, CodingMode::Generations] {
            for seed in 0..3 {
                let r = multi_message_unknown(&g, 0, &messages(9, seed), mode, &c, &EngineConfig::with_seed(seed)).unwrap();
                assert!(r.delivered(), "{mode:?} seed {seed}: {:?}", r.failure);
            }
        }
    }
}
