//! Single-message broadcast without topology knowledge.

use crate::bits::Bits;
use crate::constants::Constants;
use crate::engine::{EngineConfig, PacketKind, Round, Session};
use crate::graph::{bfs_layering, Graph, NodeId};
use crate::primitives::wave::run_wave;
use crate::primitives::{DecayStage, NoisePolicy};
use crate::rlnc::Generation;
use crate::schedules::{MmvBroadcast, MmvWindow};

use super::{all_done, build_ring_gsts, BroadcastError, Failure, Halt, PipelineReport, RingDecomposition};

/// Collision wave for BFS levels, rings of `ring_width` levels, all ring GSTs built in
/// parallel, then ring by ring: an MMV stage spreads `msg` from the ring's inner
/// boundary, and a Decay bridge carries it from the outer boundary to the next ring.
pub fn single_message_broadcast(
    g: &Graph,
    source: NodeId,
    msg: &Bits,
    constants: &Constants,
    cfg: &EngineConfig,
) -> Result<PipelineReport, BroadcastError> {
    if !cfg.collision_detection {
        return Err(BroadcastError::CollisionDetectionRequired);
    }
    if source >= g.node_count() {
        return Err(BroadcastError::BadSource(source));
    }
    let n = g.node_count();
    let depth = bfs_layering(g, source).diameter_bound;
    let log_n = constants.log_n(g);
    let mut report = PipelineReport {
        pipeline: "single",
        n,
        depth,
        k: 1,
        completion: None,
        budget: constants.round_budget(depth, 1, log_n),
        stages: Vec::new(),
        failure: None,
        labels: None,
        windows: Vec::new(),
        trace: Default::default(),
    };
    let mut session = Session::new(g, cfg.clone());
    let mut got = vec![None; n];
    got[source] = Some(0);
    if let Err(h) = run(&mut session, source, depth, msg, constants, &mut report, &mut got) {
        report.failure = Some(h.into_failure("engine"));
    }
    report.completion = all_done(&got);
    report.check_budget();
    report.trace = session.into_trace();
    Ok(report)
}

fn run(
    session: &mut Session,
    source: NodeId,
    depth: usize,
    msg: &Bits,
    constants: &Constants,
    report: &mut PipelineReport,
    got: &mut [Option<Round>],
) -> Result<(), Halt> {
    let g = session.graph();
    let n = g.node_count();
    let log_n = constants.log_n(g);
    let levels = run_wave(session, source, depth)?;
    report.stages.push(("wave".into(), session.now()));
    let Some(levels) = levels.into_iter().collect::<Option<Vec<_>>>() else {
        return Err(Failure::new("wave", "some node heard nothing").into());
    };
    let rings = RingDecomposition::new(levels, constants.ring_width(depth, log_n));
    let start = session.now();
    let built = build_ring_gsts(session, &rings, constants)?;
    report.stages.push(("gst".into(), built.gst_rounds));
    report.stages.push(("vdist".into(), built.vdist_rounds));
    debug_assert_eq!(session.now() - start, built.gst_rounds + built.vdist_rounds);
    let labels = built.labels;
    report.labels = Some(labels.clone());
    let gen = Generation::new(0, vec![msg.clone()]).expect("one message");
    let stage_len = constants.ring_mmv_rounds(rings.width, 1, log_n);
    let bridge_len = constants.bridge_phases * (log_n * log_n) as u64;
    let mut holders = vec![source];
    for j in 0..rings.count() {
        let members = rings.members(j);
        let mut mmv = MmvBroadcast::new(&labels, &members, &holders, &gen, NoisePolicy::Noise, log_n).run_to_end();
        let offset = session.now();
        session.execute(stage_len, &mut mmv)?;
        report.windows.push(MmvWindow { log_n, offset, len: stage_len });
        report.stages.push((format!("ring{j}"), stage_len));
        for &v in &members {
            if got[v].is_none() && mmv.decoded(v).is_some_and(|m| m == gen.messages) {
                got[v] = mmv.completed_at[v].map(|t| offset + t);
            }
        }
        let missing = members.iter().filter(|&&v| got[v].is_none()).count();
        if missing > 0 {
            return Err(Failure::new(format!("ring{j}"), format!("{missing} node(s) without the message")).into());
        }
        if j + 1 == rings.count() {
            break;
        }
        let senders = rings.outer(j).iter().map(|&v| (v, PacketKind::Data(msg.clone()))).collect();
        let mut bridge = DecayStage::new(n, senders, rings.inner(j + 1).to_vec(), log_n);
        session.execute(bridge_len, &mut bridge)?;
        report.stages.push((format!("bridge{j}"), bridge_len));
        holders.clear();
        for (v, p) in bridge.first_heard() {
            if p.kind == PacketKind::Data(msg.clone()) {
                holders.push(v);
                got[v] = bridge.heard.iter().find(|(u, _, _)| *u == v).map(|&(_, r, _)| r);
            }
        }
        if holders.len() < rings.inner(j + 1).len() {
            let missing = rings.inner(j + 1).len() - holders.len();
            return Err(Failure::new(format!("bridge{j}"), format!("{missing} inner node(s) missed the message")).into());
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

    fn msg(seed: u64) -> Bits {
        Bits::random(32, &mut SmallRng::seed_from_u64(seed))
    }

    #[test]
    fn k2_completes_quickly() {
        let g = generate_graph(&GraphFamily::Path { n: 2 }, 0).unwrap();
        let r = single_message_broadcast(&g, 0, &msg(0), &Constants::default(), &EngineConfig::with_seed(3)).unwrap();
        assert!(r.success(), "{:?}", r.failure);
    }

    #[test]
    fn path_single_ring_reaches_everyone() {
        let g = generate_graph(&GraphFamily::Path { n: 64 }, 0).unwrap();
        let r = single_message_broadcast(&g, 0, &msg(1), &Constants::default(), &EngineConfig::with_seed(1)).unwrap();
        // Tree construction alone exceeds the budget on a path this deep.
        assert!(r.delivered(), "{:?}", r.failure);
        assert_eq!(r.depth, 63);
        assert!(!r.stage_breakdown().contains("bridge"));
    }

    #[test]
    fn forced_rings_on_a_path() {
        let mut c = Constants::default();
        c.ring_width = Some(16);
        let g = generate_graph(&GraphFamily::Path { n: 80 }, 0).unwrap();
        let r = single_message_broadcast(&g, 0, &msg(2), &c, &EngineConfig::with_seed(2)).unwrap();
        assert!(r.delivered(), "{:?}", r.failure);
        assert_eq!(r.stage_breakdown().matches("bridge").count(), 4);
    }

    #[test]
    fn refuses_without_collision_detection() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        let cfg = EngineConfig { collision_detection: false, ..Default::default() };
        let err = single_message_broadcast(&g, 0, &msg(0), &Constants::default(), &cfg).unwrap_err();
        assert_eq!(err, BroadcastError::CollisionDetectionRequired);
    }
}
