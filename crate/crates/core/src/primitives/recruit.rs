//! The Recruiting protocol on a red/blue bipartite subgraph.
//!
//! The iterations are spread evenly over `L` probability levels: iteration `j` of `J`
//! has `L + 2` rounds: red announce (probability `2^-⌈j·L/J⌉`), one Decay
//! phase of replies by unrecruited blues, and a confirm round in which exactly the
//! announcing reds transmit again: the replier's id if there was one replier, Σ if
//! there were several, an empty packet otherwise.
//!
//! A red can gain a second child in a later iteration after its first child was
//! confirmed by id, so the iterations are followed by as many single class rounds in
//! which reds with children repeat their final class with the same decreasing
//! probabilities; a blue hearing its parent there updates its view of the class.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::constants::Constants;
use crate::engine::{Action, Ctx, EngineConfig, NodeRng, Outcome, Packet, Protocol, Round, Session, Trace};
use crate::graph::{Graph, NodeId};
use crate::primitives::decay::{coin_pow2, standard_exponent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildClass {
    Zero,
    One,
    TwoPlus,
}

const ANNOUNCE: &str = "ra";
const REPLY: &str = "rr";
const CONFIRM: &str = "rc";
const SIGMA: &str = "rs";
const EMPTY: &str = "re";
const CLASS: &str = "rk";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    None,
    Red,
    Blue,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RedState {
    Zero,
    One(NodeId),
    TwoPlus,
}

/// One Recruiting run over fixed red and blue sets. Usable as a stage on its own or
/// embedded in a larger protocol, which forwards local steps to it.
#[derive(Clone, Debug)]
pub struct Recruiter {
    phase_len: usize,
    iterations: u64,
    reds: Vec<NodeId>,
    blues: Vec<NodeId>,
    role: Vec<Role>,
    /// Opaque per-red value attached to confirmations (e.g. an already known rank).
    red_tag: Vec<u64>,
    red: Vec<RedState>,
    announced: Vec<bool>,
    any_announced: bool,
    replies: Vec<SmallVec<[NodeId; 2]>>,
    heard_red: Vec<Option<NodeId>>,
    any_heard: bool,
    parent: Vec<Option<NodeId>>,
    parent_class: Vec<Option<ChildClass>>,
    parent_tag: Vec<u64>,
}

impl Recruiter {
    pub fn new(n: usize, reds: &[NodeId], blues: &[NodeId], phase_len: usize, iterations: u64) -> Self {
        let mut role = vec![Role::None; n];
        for &b in blues {
            role[b] = Role::Blue;
        }
        for &r in reds {
            assert!(role[r] != Role::Blue, "node {r} is both red and blue");
            role[r] = Role::Red;
        }
        Recruiter {
            phase_len: phase_len.max(1),
            iterations,
            reds: reds.to_vec(),
            blues: blues.to_vec(),
            role,
            red_tag: vec![0; n],
            red: vec![RedState::Zero; n],
            announced: vec![false; n],
            any_announced: false,
            replies: vec![SmallVec::new(); n],
            heard_red: vec![None; n],
            any_heard: false,
            parent: vec![None; n],
            parent_class: vec![None; n],
            parent_tag: vec![0; n],
        }
    }

    pub fn with_red_tags(mut self, tags: impl IntoIterator<Item = (NodeId, u64)>) -> Self {
        for (v, t) in tags {
            self.red_tag[v] = t;
        }
        self
    }

    pub fn rounds(&self) -> u64 {
        Self::round_count(self.phase_len, self.iterations)
    }

    /// Length of a run with the given phase length and iteration count.
    pub fn round_count(phase_len: usize, iterations: u64) -> u64 {
        iterations * (phase_len.max(1) as u64 + 3)
    }

    /// Exponent of the red transmit probability in (1-based) iteration `j`.
    fn level(&self, j: u64) -> u32 {
        let per_level = (self.iterations / self.phase_len as u64).max(1);
        j.div_ceil(per_level) as u32
    }

    fn class_start(&self) -> u64 {
        self.iterations * self.iteration_len()
    }

    fn iteration_len(&self) -> u64 {
        self.phase_len as u64 + 2
    }

    fn split(&self, step: u64) -> (u64, u64) {
        (step / self.iteration_len() + 1, step % self.iteration_len())
    }

    pub fn parent(&self, blue: NodeId) -> Option<NodeId> {
        self.parent[blue]
    }

    /// The class of `blue`'s parent as known to `blue`.
    pub fn parent_class(&self, blue: NodeId) -> Option<ChildClass> {
        self.parent_class[blue]
    }

    /// The tag `blue`'s parent attached to its confirmation.
    pub fn parent_tag(&self, blue: NodeId) -> u64 {
        self.parent_tag[blue]
    }

    pub fn class(&self, red: NodeId) -> ChildClass {
        match self.red[red] {
            RedState::Zero => ChildClass::Zero,
            RedState::One(_) => ChildClass::One,
            RedState::TwoPlus => ChildClass::TwoPlus,
        }
    }

    pub fn reds(&self) -> &[NodeId] {
        &self.reds
    }

    fn replies_to(&self, blue: NodeId) -> Option<NodeId> {
        match self.parent[blue] {
            None => self.heard_red[blue],
            Some(_) => None,
        }
    }

    pub fn result(&self, blues: &[NodeId]) -> RecruitResult {
        RecruitResult {
            parent: blues.iter().map(|&b| (b, self.parent[b])).collect(),
            red_child_class: self.reds.iter().map(|&r| (r, self.class(r))).collect(),
            blue_knows_class: blues.iter().filter_map(|&b| self.parent_class[b].map(|c| (b, c))).collect(),
        }
    }
}

impl Protocol for Recruiter {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        if step >= self.class_start() {
            out.extend(self.reds.iter().copied().filter(|&r| self.red[r] != RedState::Zero));
            return;
        }
        let (_, s) = self.split(step);
        if s == 0 {
            for &r in &self.reds {
                self.announced[r] = false;
                self.replies[r].clear();
            }
            if self.any_heard {
                for &b in &self.blues {
                    self.heard_red[b] = None;
                }
            }
            self.any_announced = false;
            self.any_heard = false;
            out.extend_from_slice(&self.reds);
        } else if s <= self.phase_len as u64 {
            if self.any_heard {
                out.extend(self.blues.iter().copied().filter(|&b| self.replies_to(b).is_some()));
            }
        } else {
            out.extend(self.reds.iter().copied().filter(|&r| self.announced[r]));
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        if ctx.step >= self.class_start() {
            let j = ctx.step - self.class_start() + 1;
            if !coin_pow2(self.level(j), rng) {
                return Action::Listen;
            }
            let class = if self.red[node] == RedState::TwoPlus { 2 } else { 1 };
            return Action::Transmit(Packet::control(node, ctx.round, CLASS, &[("k", class), ("pr", self.red_tag[node])]));
        }
        let (j, s) = self.split(ctx.step);
        if s == 0 {
            if coin_pow2(self.level(j), rng) {
                self.announced[node] = true;
                self.any_announced = true;
                return Action::Transmit(Packet::control(node, ctx.round, ANNOUNCE, &[]));
            }
            return Action::Listen;
        }
        if s <= self.phase_len as u64 {
            let red = self.replies_to(node).expect("only replying blues act");
            if coin_pow2(standard_exponent(s, self.phase_len), rng) {
                return Action::Transmit(Packet::control(node, ctx.round, REPLY, &[("b", node as u64), ("r", red as u64)]));
            }
            return Action::Listen;
        }
        let heard = &self.replies[node];
        let tag = self.red_tag[node];
        let (next, packet) = match (self.red[node], heard.len()) {
            (_, 0) => (self.red[node], Packet::control(node, ctx.round, EMPTY, &[])),
            (RedState::Zero, 1) => (RedState::One(heard[0]), confirm(node, ctx.round, heard[0], tag)),
            (RedState::One(_), 1) => (RedState::TwoPlus, confirm(node, ctx.round, heard[0], tag)),
            (RedState::TwoPlus, 1) => (RedState::TwoPlus, confirm(node, ctx.round, heard[0], tag)),
            (_, _) => (RedState::TwoPlus, sigma(node, ctx.round, tag)),
        };
        self.red[node] = next;
        Action::Transmit(packet)
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if ctx.step >= self.class_start() {
            if self.role[node] == Role::Blue && self.parent[node] == Some(p.src) && p.tag() == Some(CLASS) {
                self.parent_class[node] = Some(if p.field("k") == Some(2) { ChildClass::TwoPlus } else { ChildClass::One });
            }
            return;
        }
        let (_, s) = self.split(ctx.step);
        match self.role[node] {
            Role::Blue if s == 0 => {
                if p.tag() == Some(ANNOUNCE) {
                    self.heard_red[node] = Some(p.src);
                    self.any_heard = true;
                }
            }
            Role::Blue if s > self.phase_len as u64 => {
                if self.heard_red[node] != Some(p.src) {
                    return;
                }
                let tag = p.field("pr").unwrap_or(0);
                let class = match p.tag() {
                    Some(CONFIRM) if p.field("to") == Some(node as u64) => ChildClass::One,
                    Some(SIGMA) => ChildClass::TwoPlus,
                    _ => return,
                };
                if self.parent[node].is_none() {
                    self.parent[node] = Some(p.src);
                    self.parent_class[node] = Some(class);
                    self.parent_tag[node] = tag;
                }
            }
            Role::Red if s >= 1 && s <= self.phase_len as u64 => {
                if self.announced[node] && p.tag() == Some(REPLY) && p.field("r") == Some(node as u64) {
                    let b = p.field("b").expect("reply carries a blue id") as NodeId;
                    if !self.replies[node].contains(&b) {
                        self.replies[node].push(b);
                    }
                }
            }
            _ => {}
        }
    }

    fn next_busy(&self, step: u64) -> u64 {
        if self.reds.is_empty() || step >= self.rounds() {
            return u64::MAX;
        }
        if step >= self.class_start() {
            return if self.reds.iter().any(|&r| self.red[r] != RedState::Zero) { step } else { u64::MAX };
        }
        let (j, s) = self.split(step);
        let next_iteration = j * self.iteration_len();
        match s {
            0 => step,
            _ if !self.any_announced => next_iteration,
            s if s <= self.phase_len as u64 && !self.any_heard => step.max((j - 1) * self.iteration_len() + self.phase_len as u64 + 1),
            _ => step,
        }
    }
}

fn confirm(node: NodeId, round: Round, child: NodeId, tag: u64) -> Packet {
    Packet::control(node, round, CONFIRM, &[("to", child as u64), ("pr", tag)])
}

fn sigma(node: NodeId, round: Round, tag: u64) -> Packet {
    Packet::control(node, round, SIGMA, &[("pr", tag)])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecruitResult {
    pub parent: Vec<(NodeId, Option<NodeId>)>,
    pub red_child_class: Vec<(NodeId, ChildClass)>,
    pub blue_knows_class: Vec<(NodeId, ChildClass)>,
}

impl RecruitResult {
    pub fn unrecruited(&self) -> Vec<NodeId> {
        self.parent.iter().filter(|(_, p)| p.is_none()).map(|&(b, _)| b).collect()
    }
}

#[derive(Debug)]
pub struct RecruitRun {
    pub result: RecruitResult,
    pub rounds: Round,
    pub trace: Trace,
}

/// Runs the Recruiting protocol with all other nodes silent.
pub fn recruiting_protocol(g: &Graph, red: &[NodeId], blue: &[NodeId], constants: &Constants, cfg: &EngineConfig) -> RecruitRun {
    let log_n = constants.log_n(g);
    let mut rec = Recruiter::new(g.node_count(), red, blue, log_n, constants.recruit_iteration_count(log_n));
    let mut session = Session::new(g, cfg.clone());
    let rounds = rec.rounds();
    session.execute(rounds, &mut rec).expect("round limit must cover the recruiting run");
    RecruitRun { result: rec.result(blue), rounds: session.now(), trace: session.into_trace() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn cfg(seed: u64) -> EngineConfig {
        EngineConfig::with_seed(seed)
    }

    #[test]
    fn single_pair_recruits_with_class_one() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let run = recruiting_protocol(&g, &[0], &[1], &Constants::default(), &cfg(3));
        assert_eq!(run.result.parent, vec![(1, Some(0))]);
        assert_eq!(run.result.red_child_class, vec![(0, ChildClass::One)]);
        assert_eq!(run.result.blue_knows_class, vec![(1, ChildClass::One)]);
    }

    fn run_with(g: &Graph, red: &[NodeId], blue: &[NodeId], phase_len: usize, iterations: u64, seed: u64) -> RecruitResult {
        let mut rec = Recruiter::new(g.node_count(), red, blue, phase_len, iterations);
        let mut session = Session::new(g, cfg(seed));
        session.execute(rec.rounds(), &mut rec).unwrap();
        rec.result(blue)
    }

    #[test]
    fn red_with_two_blues_reports_two_plus_to_both() {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2)]).unwrap();
        let mut full = 0;
        for seed in 0..50 {
            let r = run_with(&g, &[0], &[1, 2], 6, 144, seed);
            // Possible outcomes: nobody, one blue with class one, or both with class two.
            match r.unrecruited().len() {
                0 => {
                    full += 1;
                    assert_eq!(r.red_child_class, vec![(0, ChildClass::TwoPlus)]);
                    assert_eq!(r.blue_knows_class, vec![(1, ChildClass::TwoPlus), (2, ChildClass::TwoPlus)]);
                }
                1 => {
                    assert_eq!(r.red_child_class, vec![(0, ChildClass::One)]);
                    assert_eq!(r.blue_knows_class.len(), 1);
                    assert_eq!(r.blue_knows_class[0].1, ChildClass::One);
                }
                _ => assert_eq!(r.red_child_class, vec![(0, ChildClass::Zero)]),
            }
        }
        assert!(full >= 49, "both recruited in only {full}/50 runs");
    }
}
