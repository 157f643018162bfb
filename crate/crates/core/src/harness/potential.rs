//! Backwards-time potential of a node over a recorded schedule run.
//!
//! `S_t` holds the nodes that reach the target through a chain of successful
//! receptions inside the last `t` rounds; `Φ(t) = min_{u ∈ S_t} d_u·L + l_u`.

use std::collections::HashMap;

use thiserror::Error;

use crate::bits::Bits;
use crate::engine::{Event, PacketKind, Round, Trace};
use crate::graph::NodeId;
use crate::gst::GstLabels;
use crate::schedules::MmvWindow;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PotentialError {
    #[error("node {0} is not in the trace")]
    TargetAbsent(NodeId),
    #[error("node {0} has no virtual distance label")]
    MissingVdist(NodeId),
    #[error("trace has {trace} nodes, labels have {labels}")]
    SizeMismatch { trace: usize, labels: usize },
}

/// `Φ(t)` for `t = 0..=len`. Without a window the whole trace is used with the
/// given `log_n`; a window brings its own. With `mu`, only receptions of coded packets whose coefficient
/// vector has a nonzero inner product with `mu` count.
pub fn potential_trace(
    trace: &Trace,
    labels: &GstLabels,
    target: NodeId,
    mu: Option<&Bits>,
    log_n: usize,
    window: Option<MmvWindow>,
) -> Result<Vec<u64>, PotentialError> {
    if trace.node_count != labels.len() {
        return Err(PotentialError::SizeMismatch { trace: trace.node_count, labels: labels.len() });
    }
    if target >= labels.len() {
        return Err(PotentialError::TargetAbsent(target));
    }
    let (log_n, first, last) = match window {
        Some(w) => (w.log_n, w.offset + 1, w.offset + w.len),
        None => (log_n, 1, trace.rounds),
    };
    let mut key = Vec::with_capacity(labels.len());
    for (v, x) in labels.nodes.iter().enumerate() {
        let d = x.vdist.ok_or(PotentialError::MissingVdist(v))?;
        key.push(u64::from(d) * log_n as u64 + x.level as u64);
    }
    let mut rounds: HashMap<Round, (Vec<(NodeId, NodeId)>, HashMap<NodeId, bool>)> = HashMap::new();
    for r in &trace.records {
        if r.round < first || r.round > last {
            continue;
        }
        let entry = rounds.entry(r.round).or_default();
        match &r.event {
            Event::Receive { from } => entry.0.push((r.node, *from)),
            Event::Transmit(p) => {
                let ok = match (mu, &p.kind) {
                    (None, _) => true,
                    (Some(mu), PacketKind::Coded { coefficients, .. }) => coefficients.len() == mu.len() && coefficients.dot(mu),
                    (Some(_), _) => false,
                };
                entry.1.insert(r.node, ok);
            }
            _ => {}
        }
    }
    let mut inside = vec![false; labels.len()];
    inside[target] = true;
    let mut phi = key[target];
    let mut out = Vec::with_capacity((last + 1 - first) as usize + 1);
    out.push(phi);
    let mut round = last;
    while round >= first {
        if let Some((recv, tx)) = rounds.get(&round) {
            let add: Vec<NodeId> = recv
                .iter()
                .filter(|(w, u)| inside[*w] && !inside[*u] && tx.get(u).copied().unwrap_or(false))
                .map(|&(_, u)| u)
                .collect();
            for u in add {
                inside[u] = true;
                phi = phi.min(key[u]);
            }
        }
        out.push(phi);
        round -= 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Packet, TraceRecord};
    use crate::gst::build_gst_oracle;
    use crate::graph::{generate_graph, GraphFamily};

    fn path_labels(n: usize) -> GstLabels {
        let g = generate_graph(&GraphFamily::Path { n }, 0).unwrap();
        let labels = build_gst_oracle(&g, 0);
        let d = crate::gst::virtual_distances(&g, &labels);
        labels.with_virtual_distances(&d)
    }

    fn hop(round: Round, from: NodeId, to: NodeId) -> [TraceRecord; 2] {
        [
            TraceRecord { round, node: from, event: Event::Transmit(Packet::noise(from, round)) },
            TraceRecord { round, node: to, event: Event::Receive { from } },
        ]
    }

    #[test]
    fn silent_target_keeps_its_own_key() {
        let labels = path_labels(4);
        let trace = Trace { node_count: 4, rounds: 5, records: vec![] };
        let phi = potential_trace(&trace, &labels, 3, None, 4, None).unwrap();
        let own = u64::from(labels.nodes[3].vdist.unwrap()) * 4 + 3;
        assert_eq!(phi, vec![own; 6]);
    }

    #[test]
    fn chains_must_run_forward_in_time() {
        let labels = path_labels(3);
        // 0 → 1 in round 2 and 1 → 2 in round 3 connect 0 to 2; the reverse order would not.
        let mut records: Vec<TraceRecord> = hop(2, 0, 1).into_iter().chain(hop(3, 1, 2)).collect();
        let trace = Trace { node_count: 3, rounds: 3, records: records.clone() };
        let phi = potential_trace(&trace, &labels, 2, None, 4, None).unwrap();
        assert_eq!(*phi.last().unwrap(), 0);
        assert!(phi.windows(2).all(|w| w[1] <= w[0]));
        records = hop(3, 0, 1).into_iter().chain(hop(2, 1, 2)).collect();
        let trace = Trace { node_count: 3, rounds: 3, records };
        let phi = potential_trace(&trace, &labels, 2, None, 4, None).unwrap();
        assert!(*phi.last().unwrap() > 0);
    }

    #[test]
    fn mu_filters_out_noise() {
        let labels = path_labels(2);
        let trace = Trace { node_count: 2, rounds: 1, records: hop(1, 0, 1).to_vec() };
        let mu = Bits::unit(2, 0);
        let phi = potential_trace(&trace, &labels, 1, Some(&mu), 4, None).unwrap();
        assert!(*phi.last().unwrap() > 0);
        assert_eq!(potential_trace(&trace, &labels, 9, None, 4, None).unwrap_err(), PotentialError::TargetAbsent(9));
    }
}
