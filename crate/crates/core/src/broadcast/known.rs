//! Multi-message broadcast when every node knows the topology.

use crate::bits::Bits;
use crate::constants::Constants;
use crate::engine::{EngineConfig, EngineError, Session};
use crate::graph::{Graph, NodeId};
use crate::gst::{build_gst_oracle, virtual_distances};
use crate::primitives::NoisePolicy;
use crate::rlnc::{Generation, RlncError};
use crate::schedules::{MmvBroadcast, MmvWindow};

use super::{all_done, BroadcastError, Failure, PipelineReport};

/// GST and virtual distances from the centralized oracles, then the MMV schedule with
/// RLNC over one generation of all `messages` until every node decodes or the round
/// budget runs out.
pub fn multi_message_known(
    g: &Graph,
    source: NodeId,
    messages: &[Bits],
    policy: NoisePolicy,
    constants: &Constants,
    cfg: &EngineConfig,
) -> Result<PipelineReport, BroadcastError> {
    if source >= g.node_count() {
        return Err(BroadcastError::BadSource(source));
    }
    let gen = Generation::new(0, messages.to_vec()).map_err(|e| match e {
        RlncError::NoMessages => BroadcastError::NoMessages,
        _ => BroadcastError::UnequalMessages,
    })?;
    let n = g.node_count();
    let labels = build_gst_oracle(g, source);
    let depth = labels.depth();
    let d = virtual_distances(g, &labels);
    let labels = labels.with_virtual_distances(&d);
    let log_n = constants.log_n(g);
    let budget = constants.round_budget(depth, messages.len(), log_n);
    let members: Vec<NodeId> = (0..n).collect();
    let mut mmv = MmvBroadcast::new(&labels, &members, &[source], &gen, policy, log_n);
    let mut session = Session::new(g, cfg.clone());
    let mut failure = match session.execute(budget, &mut mmv) {
        Ok(_) => None,
        Err(e @ EngineError::RoundLimit { .. }) => Some(Failure::new("mmv", e.to_string())),
        Err(e) => unreachable!("mmv cannot fail with {e}"),
    };
    let wrong: Vec<NodeId> = (0..n).filter(|&v| mmv.decoded(v).is_some_and(|m| m != gen.messages)).collect();
    let done: Vec<_> = (0..n).map(|v| if wrong.contains(&v) { None } else { mmv.completed_at[v] }).collect();
    let completion = all_done(&done);
    if failure.is_none() && completion.is_none() {
        let ranks: Vec<String> = (0..n)
            .filter(|&v| done[v].is_none())
            .map(|v| format!("{v}:{}", mmv.state(v).map_or(0, |s| s.knowledge.rank())))
            .collect();
        failure = Some(Failure::new("mmv", format!("undecoded node:rank {}", ranks.join(" "))));
    }
    let rounds = session.now();
    let mut report = PipelineReport {
        pipeline: "known",
        n,
        depth,
        k: messages.len(),
        completion,
        budget,
        stages: vec![("mmv".into(), rounds)],
        failure,
        labels: Some(labels),
        windows: vec![MmvWindow { log_n, offset: 0, len: rounds }],
        trace: session.into_trace(),
    };
    report.check_budget();
    Ok(report)
}
