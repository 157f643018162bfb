//! Gathering messages from scattered origins at a root along a BFS tree.
//!
//! Every message is copied `(c+1)·L` times and each copy gets its own delay `t`. The
//! origin sends the copy after `3t` rounds, addressed to its tree parent; a node that
//! hears a packet addressed to it forwards it to its own parent in the next round.
//! Without interference a copy from depth `h` reaches the root in round `3t + h`.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

use crate::engine::{Action, Ctx, EngineConfig, NodeRng, Outcome, Packet, Protocol, Round, Session, Trace};
use crate::graph::{bfs_layering, bfs_tree, ceil_log2, Graph, NodeId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatherError {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("message {0} has no valid origin node")]
    MissingOrigin(usize),
    #[error("{k} messages exceed n² = {max}")]
    TooManyMessages { k: usize, max: usize },
    #[error("copies of message {0} share a delay")]
    RepeatedDelay(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GatherCopy {
    pub message: usize,
    pub delay: u64,
}

#[derive(Clone, Debug)]
pub struct GatherPlan {
    pub root: NodeId,
    pub parent: Vec<Option<NodeId>>,
    pub depth: Vec<usize>,
    pub c: u64,
    pub log_n: usize,
    /// Origin node of each message.
    pub origins: Vec<NodeId>,
    pub copies: Vec<GatherCopy>,
}

impl GatherPlan {
    /// Canonical BFS tree rooted at `root` and random delays.
    pub fn random<R: Rng>(g: &Graph, root: NodeId, origins: &[NodeId], c: u64, rng: &mut R) -> Result<Self, GatherError> {
        if root >= g.node_count() {
            return Err(GatherError::InvalidTree(format!("root {root} out of range")));
        }
        let log_n = ceil_log2(g.node_count()).max(1);
        let k = origins.len() as u64;
        let per = ((c + 1) * log_n as u64) as usize;
        let range = (10 * (c + 1) * k * log_n as u64) as usize;
        let mut copies = Vec::with_capacity(origins.len() * per);
        for m in 0..origins.len() {
            for i in sample(rng, range, per) {
                copies.push(GatherCopy { message: m, delay: i as u64 + 1 });
            }
        }
        Self::with_copies(g, root, bfs_tree(g, root), origins, c, copies)
    }

    /// Explicit tree and copies; checks the tree is a BFS tree of `g` rooted at `root`.
    pub fn with_copies(
        g: &Graph,
        root: NodeId,
        parent: Vec<Option<NodeId>>,
        origins: &[NodeId],
        c: u64,
        copies: Vec<GatherCopy>,
    ) -> Result<Self, GatherError> {
        let n = g.node_count();
        if root >= n {
            return Err(GatherError::InvalidTree(format!("root {root} out of range")));
        }
        if parent.len() != n {
            return Err(GatherError::InvalidTree(format!("{} parents for {n} nodes", parent.len())));
        }
        let level = bfs_layering(g, root).level;
        for (v, p) in parent.iter().enumerate() {
            match *p {
                None if v == root => {}
                None => return Err(GatherError::InvalidTree(format!("node {v} has no parent"))),
                Some(_) if v == root => return Err(GatherError::InvalidTree("root has a parent".into())),
                Some(p) if p >= n || !g.has_edge(v, p) || level[p] + 1 != level[v] => {
                    return Err(GatherError::InvalidTree(format!("{p} is not a BFS parent of {v}")));
                }
                Some(_) => {}
            }
        }
        if origins.len() > n * n {
            return Err(GatherError::TooManyMessages { k: origins.len(), max: n * n });
        }
        if let Some(m) = origins.iter().position(|&u| u >= n) {
            return Err(GatherError::MissingOrigin(m));
        }
        if let Some(x) = copies.iter().find(|x| x.message >= origins.len()) {
            return Err(GatherError::MissingOrigin(x.message));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(x) = copies.iter().find(|x| !seen.insert((x.message, x.delay))) {
            return Err(GatherError::RepeatedDelay(x.message));
        }
        Ok(GatherPlan { root, parent, depth: level, c, log_n: ceil_log2(n).max(1), origins: origins.to_vec(), copies })
    }

    /// Round in which a copy reaches the root if nothing interferes: `3t + h`.
    pub fn dist(&self, copy: &GatherCopy) -> Round {
        3 * copy.delay + self.depth[self.origins[copy.message]] as Round
    }

    /// Hard cap on the run: tree depth plus `30(c+1)·k·L`.
    pub fn round_cap(&self) -> Round {
        let depth = self.depth.iter().copied().max().unwrap_or(0) as Round;
        depth + 30 * (self.c + 1) * self.origins.len() as Round * self.log_n as Round
    }
}

#[derive(Debug)]
pub struct GatherReport {
    /// Which messages the root holds at the end.
    pub received: Vec<bool>,
    /// Stage round each copy reached the root, in plan order.
    pub arrivals: Vec<Option<Round>>,
    /// Stage round by which the root held every message.
    pub completion: Option<Round>,
    pub rounds: Round,
    pub trace: Trace,
}

impl GatherReport {
    pub fn all_received(&self) -> bool {
        self.received.iter().all(|&x| x)
    }
}

struct Gathering<'a> {
    plan: &'a GatherPlan,
    /// Own sends by 0-based step; several entries for one node cancel out.
    own: BTreeMap<u64, Vec<(NodeId, usize)>>,
    relays: Vec<(NodeId, Packet)>,
    next_relays: Vec<(NodeId, Packet)>,
    sending: Vec<Option<Packet>>,
    arrivals: Vec<Option<Round>>,
}

impl Gathering<'_> {
    fn packet(&self, node: NodeId, round: Round, copy: usize) -> Packet {
        let to = self.plan.parent[node].expect("non-root sender") as u64;
        let mut p = Packet::control(node, round, "ga", &[("copy", copy as u64), ("to", to)]);
        p.origin = (self.plan.origins[self.plan.copies[copy].message], 0);
        p
    }
}

impl Protocol for Gathering<'_> {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        self.relays = std::mem::take(&mut self.next_relays);
        let mut count: BTreeMap<NodeId, Vec<Option<usize>>> = BTreeMap::new();
        for (v, _) in &self.relays {
            count.entry(*v).or_default().push(None);
        }
        if let Some(own) = self.own.get(&step) {
            for &(v, copy) in own {
                count.entry(v).or_default().push(Some(copy));
            }
        }
        for (v, items) in count {
            // A node with more than one packet for this round sends none of them.
            if items.len() == 1 {
                out.push(v);
                self.sending[v] = items[0].map(|i| self.packet(v, 0, i));
            }
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, _rng: &mut NodeRng) -> Action {
        let p = match self.sending[node].take() {
            Some(mut p) => {
                p.origin.1 = ctx.round;
                p
            }
            None => {
                let (_, p) = self.relays.iter().find(|(v, _)| *v == node).expect("actor has a relay");
                let mut p = p.relayed_by(node);
                if let crate::engine::PacketKind::Control { fields, .. } = &mut p.kind {
                    for (k, v) in fields.iter_mut() {
                        if k == "to" {
                            *v = self.plan.parent[node].expect("non-root relay") as u64;
                        }
                    }
                }
                p
            }
        };
        Action::Transmit(p)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if p.tag() != Some("ga") || p.field("to") != Some(node as u64) {
            return;
        }
        if node == self.plan.root {
            let copy = p.field("copy").expect("copy field") as usize;
            self.arrivals[copy].get_or_insert(ctx.step + 1);
        } else {
            self.next_relays.push((node, p));
        }
    }

    fn finished(&self) -> bool {
        false
    }

    fn next_busy(&self, step: u64) -> u64 {
        if !self.next_relays.is_empty() {
            return step;
        }
        self.own.range(step..).next().map_or(u64::MAX, |(&s, _)| s)
    }
}

/// Runs the plan for its full round cap. Messages whose origin is the root count as
/// received from the start.
pub fn gathering_algorithm(g: &Graph, plan: &GatherPlan, cfg: &EngineConfig) -> GatherReport {
    let mut own: BTreeMap<u64, Vec<(NodeId, usize)>> = BTreeMap::new();
    for (i, x) in plan.copies.iter().enumerate() {
        let u = plan.origins[x.message];
        if u != plan.root {
            own.entry(3 * x.delay).or_default().push((u, i));
        }
    }
    let mut proto = Gathering {
        plan,
        own,
        relays: Vec::new(),
        next_relays: Vec::new(),
        sending: vec![None; g.node_count()],
        arrivals: vec![None; plan.copies.len()],
    };
    let cap = plan.round_cap();
    let mut session = Session::new(g, cfg.clone());
    session.execute(cap, &mut proto).expect("gathering needs no collision detection and stays within its cap");
    let k = plan.origins.len();
    let mut first: Vec<Option<Round>> = (0..k).map(|m| (plan.origins[m] == plan.root).then_some(0)).collect();
    for (x, a) in plan.copies.iter().zip(&proto.arrivals) {
        if let Some(a) = *a {
            let f = &mut first[x.message];
            *f = Some(f.map_or(a, |f| f.min(a)));
        }
    }
    GatherReport {
        received: first.iter().map(Option::is_some).collect(),
        completion: first.iter().copied().collect::<Option<Vec<_>>>().map(|v| v.into_iter().max().unwrap_or(0)),
        arrivals: proto.arrivals,
        rounds: cap,
        trace: session.into_trace(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_graph, GraphFamily};
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    #[test]
    fn leaf_of_a_path_arrives_at_three_t_plus_h() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        let copies = vec![GatherCopy { message: 0, delay: 4 }];
        let plan = GatherPlan::with_copies(&g, 0, bfs_tree(&g, 0), &[2], 1, copies).unwrap();
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(0));
        assert_eq!(r.arrivals, vec![Some(14)]);
        assert_eq!(r.completion, Some(14));
    }

    #[test]
    fn separated_copies_on_a_shared_path_both_arrive() {
        let g = generate_graph(&GraphFamily::Path { n: 6 }, 0).unwrap();
        // dist 3·2+5 = 11 and 3·3+3 = 12: adjacent, expected to interfere.
        let close = vec![GatherCopy { message: 0, delay: 2 }, GatherCopy { message: 1, delay: 3 }];
        let plan = GatherPlan::with_copies(&g, 0, bfs_tree(&g, 0), &[5, 3], 1, close).unwrap();
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(0));
        assert!(r.arrivals.iter().any(Option::is_none));
        // dist 11 and 15.
        let apart = vec![GatherCopy { message: 0, delay: 2 }, GatherCopy { message: 1, delay: 4 }];
        let plan = GatherPlan::with_copies(&g, 0, bfs_tree(&g, 0), &[5, 3], 1, apart).unwrap();
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(0));
        assert_eq!(r.arrivals, vec![Some(11), Some(15)]);
    }

    #[test]
    fn same_node_same_delay_sends_nothing() {
        let g = generate_graph(&GraphFamily::Path { n: 2 }, 0).unwrap();
        let copies = vec![GatherCopy { message: 0, delay: 1 }, GatherCopy { message: 1, delay: 1 }];
        let plan = GatherPlan::with_copies(&g, 0, bfs_tree(&g, 0), &[1, 1], 1, copies).unwrap();
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(0));
        assert_eq!(r.arrivals, vec![None, None]);
        assert_eq!(r.trace.transmissions().count(), 0);
    }

    #[test]
    fn random_plans_have_distinct_delays_per_message() {
        let g = generate_graph(&GraphFamily::Grid { rows: 4, cols: 4 }, 0).unwrap();
        let mut rng = SmallRng::seed_from_u64(9);
        let plan = GatherPlan::random(&g, 0, &[3, 7, 15], 1, &mut rng).unwrap();
        assert_eq!(plan.copies.len(), 3 * 2 * 4);
        for m in 0..3 {
            let mut d: Vec<u64> = plan.copies.iter().filter(|x| x.message == m).map(|x| x.delay).collect();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 8);
            assert!(d.iter().all(|&t| (1..=10 * 2 * 3 * 4).contains(&t)));
        }
        let r = gathering_algorithm(&g, &plan, &EngineConfig::with_seed(9));
        for (x, a) in plan.copies.iter().zip(&r.arrivals) {
            if let Some(a) = a {
                assert_eq!(*a, plan.dist(x));
            }
        }
        assert!(r.trace.rounds <= plan.round_cap());
    }

    #[test]
    fn rejects_bad_input() {
        let g = generate_graph(&GraphFamily::Path { n: 3 }, 0).unwrap();
        let mut rng = SmallRng::seed_from_u64(0);
        assert_eq!(GatherPlan::random(&g, 0, &[7], 1, &mut rng).unwrap_err(), GatherError::MissingOrigin(0));
        let bad = vec![None, Some(0), Some(0)];
        assert!(matches!(GatherPlan::with_copies(&g, 0, bad, &[2], 1, vec![]), Err(GatherError::InvalidTree(_))));
        let twice = vec![GatherCopy { message: 0, delay: 1 }; 2];
        assert_eq!(GatherPlan::with_copies(&g, 0, bfs_tree(&g, 0), &[2], 1, twice).unwrap_err(), GatherError::RepeatedDelay(0));
    }
}
