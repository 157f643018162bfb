//! Generation mode inside one ring: the batch is coded in small generations, the
//! ring is cut into strips by height `h = d·L + l`, and time into steps. In step `s`
//! a node in strip `σ` works on generation `s − σ` (and keeps accepting earlier ones it
//! missed); whatever it has not decoded by the end of a step is dropped. Decoded
//! generations are kept and served to the strips below.

use crate::bits::Bits;
use crate::engine::{Action, Ctx, NodeRng, Outcome, Packet, PacketKind, Protocol, Round};
use crate::graph::NodeId;
use crate::gst::GstLabels;
use crate::primitives::decay::coin_pow2;
use crate::primitives::NoisePolicy;
use crate::rlnc::{Generation, KnowledgeSpace};
use crate::schedules::{prompt, same_rank_parents, Prompt};

use rand::Rng;

struct StripNode {
    level: usize,
    rank: u32,
    vdist: u32,
    stretch_start: bool,
    parent: Option<NodeId>,
    has_fast_child: bool,
    strip: u64,
    spaces: Vec<KnowledgeSpace>,
    /// Schedule round each generation was decoded (0 for initial holders).
    decoded_at: Vec<Option<Round>>,
    last_fast: Option<Packet>,
}

impl StripNode {
    /// Generation the node's own strip works on in step `s`.
    fn current(&self, s: u64) -> Option<usize> {
        s.checked_sub(self.strip).map(|c| c as usize)
    }

    fn nonempty(&self, i: usize) -> bool {
        self.spaces.get(i).is_some_and(|x| x.rank() > 0)
    }

    fn decoded(&self, i: usize) -> bool {
        self.spaces.get(i).is_some_and(|x| x.is_full())
    }
}

pub struct StripMmv {
    log_n: usize,
    policy: NoisePolicy,
    step_rounds: u64,
    first_id: u32,
    nodes: Vec<Option<StripNode>>,
    fast: Vec<Vec<NodeId>>,
    slow: [Vec<NodeId>; 3],
    step: u64,
}

impl StripMmv {
    /// `gens` are the generations of one batch, with consecutive ids. `holders` start
    /// with all of them.
    pub fn new(
        labels: &GstLabels,
        members: &[NodeId],
        holders: &[NodeId],
        gens: &[Generation],
        strip_height: usize,
        step_rounds: u64,
        policy: NoisePolicy,
        log_n: usize,
    ) -> Self {
        let heads = same_rank_parents(labels);
        let mut nodes: Vec<Option<StripNode>> = (0..labels.len()).map(|_| None).collect();
        let period = 6 * log_n;
        let mut fast = vec![Vec::new(); period];
        let mut slow: [Vec<NodeId>; 3] = Default::default();
        for &v in members {
            let x = &labels.nodes[v];
            let vdist = x.vdist.expect("strips need virtual distances");
            let h = vdist as usize * log_n + x.level;
            nodes[v] = Some(StripNode {
                level: x.level,
                rank: x.rank,
                vdist,
                stretch_start: x.stretch_start,
                parent: x.parent,
                has_fast_child: heads[v],
                strip: (h / strip_height.max(1)) as u64,
                spaces: gens.iter().map(|g| KnowledgeSpace::new(g.id, g.size(), g.body_len())).collect(),
                decoded_at: vec![None; gens.len()],
                last_fast: None,
            });
            if heads[v] {
                fast[(2 * (x.level + 3 * x.rank as usize)) % period].push(v);
            }
            slow[vdist as usize % 3].push(v);
        }
        for &v in holders {
            let s = nodes[v].as_mut().expect("holders must be members");
            s.spaces = gens.iter().map(KnowledgeSpace::full).collect();
            s.decoded_at = vec![Some(0); gens.len()];
        }
        StripMmv {
            log_n,
            policy,
            step_rounds: step_rounds.max(1),
            first_id: gens.first().map_or(0, |g| g.id),
            nodes,
            fast,
            slow,
            step: 0,
        }
    }

    /// Decoded messages of every generation, concatenated, and the schedule round the
    /// last one was decoded.
    pub fn decoded(&self, v: NodeId) -> Option<(Vec<Bits>, Round)> {
        let s = self.nodes[v].as_ref()?;
        let mut out = Vec::new();
        for x in &s.spaces {
            out.extend(x.decode()?);
        }
        Some((out, s.decoded_at.iter().map(|r| r.unwrap()).max().unwrap_or(0)))
    }

    /// Drops every undecoded generation at each step boundary.
    fn sync(&mut self, step: u64) {
        let s = step / self.step_rounds;
        if s == self.step {
            return;
        }
        self.step = s;
        for node in self.nodes.iter_mut().flatten() {
            for x in node.spaces.iter_mut().filter(|x| !x.is_full()) {
                x.clear();
            }
        }
    }

    fn noise(&self, node: NodeId, round: Round) -> Action {
        match self.policy {
            NoisePolicy::Noise => Action::Transmit(Packet::noise(node, round)),
            NoisePolicy::Silent => Action::Listen,
        }
    }

    /// A coded packet for a uniformly chosen generation among the current one (if the
    /// node knows anything of it) and every earlier one it has decoded. Earlier
    /// generations are what strips further down still need; a fast wave carries the
    /// packet through all of them.
    fn fresh(&self, node: NodeId, round: Round, rng: &mut NodeRng) -> Action {
        let x = self.nodes[node].as_ref().unwrap();
        let Some(c) = x.current(self.step) else { return self.noise(node, round) };
        let c = c.min(x.spaces.len());
        let mut pick: Vec<usize> = (0..c).filter(|&i| x.decoded(i)).collect();
        if x.nonempty(c) {
            pick.push(c);
        }
        if pick.is_empty() {
            return self.noise(node, round);
        }
        let i = pick[rng.gen_range(0..pick.len())];
        Action::Transmit(x.spaces[i].encode_packet(node, round, rng).expect("nonempty space"))
    }
}

impl Protocol for StripMmv {
    fn actors(&mut self, step: u64, out: &mut Vec<NodeId>) {
        self.sync(step);
        let t = step + 1;
        if t % 2 == 0 {
            out.extend_from_slice(&self.fast[(t % self.fast.len() as u64) as usize]);
        } else {
            out.extend_from_slice(&self.slow[((t - 1) / 2 % 3) as usize]);
        }
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, rng: &mut NodeRng) -> Action {
        let t = ctx.step + 1;
        let x = self.nodes[node].as_mut().expect("actors are members");
        match prompt(x.level, x.rank, x.vdist, t, self.log_n) {
            Prompt::Fast if !x.has_fast_child => Action::Listen,
            Prompt::Fast if !x.stretch_start => match x.last_fast.take() {
                Some(p) => Action::Transmit(p.relayed_by(node)),
                None => self.noise(node, ctx.round),
            },
            Prompt::Fast => self.fresh(node, ctx.round, rng),
            Prompt::Slow(e) if coin_pow2(e, rng) => self.fresh(node, ctx.round, rng),
            _ => Action::Listen,
        }
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, outcome: Outcome) {
        let Outcome::Received(p) = outcome else { return };
        if self.nodes.get(p.src).is_none_or(|s| s.is_none()) {
            return;
        }
        let PacketKind::Coded { generation, .. } = p.kind else { return };
        let step = self.step;
        let first = self.first_id;
        let Some(x) = self.nodes[node].as_mut() else { return };
        let t = ctx.step + 1;
        if t % 2 == 0 && x.parent == Some(p.src) {
            x.last_fast = Some(p.clone());
        }
        let Some(i) = generation.checked_sub(first).map(|i| i as usize) else { return };
        let Some(c) = x.current(step) else { return };
        if i > c || i >= x.spaces.len() || x.spaces[i].is_full() {
            return;
        }
        if x.spaces[i].insert_packet(&p).unwrap_or(false) && x.spaces[i].is_full() {
            x.decoded_at[i] = Some(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{EngineConfig, Session};
    use crate::graph::{generate_graph, GraphFamily};
    use crate::gst::{build_gst_oracle, virtual_distances};
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    #[test]
    fn path_generations_arrive_in_order() {
        let g = generate_graph(&GraphFamily::Path { n: 40 }, 0).unwrap();
        let labels = build_gst_oracle(&g, 0);
        let d = virtual_distances(&g, &labels);
        let labels = labels.with_virtual_distances(&d);
        let mut rng = SmallRng::seed_from_u64(4);
        let gens: Vec<Generation> = (0..3).map(|i| Generation::random(i, 4, 16, &mut rng)).collect();
        let members: Vec<NodeId> = (0..40).collect();
        let (log_n, strip, step) = (6, 16, 600);
        let mut p = StripMmv::new(&labels, &members, &[0], &gens, strip, step, NoisePolicy::Noise, log_n);
        let mut session = Session::new(&g, EngineConfig::with_seed(4));
        // Heights run to 39 here, so three strips and three generations.
        session.execute(step * 6, &mut p).unwrap();
        let want: Vec<Bits> = gens.iter().flat_map(|g| g.messages.clone()).collect();
        for v in 0..40 {
            let (got, _) = p.decoded(v).unwrap_or_else(|| panic!("node {v}"));
            assert_eq!(got, want);
        }
        // A node in strip 2 cannot hold generation 0 before step 2.
        let x = p.nodes[39].as_ref().unwrap();
        assert_eq!(x.strip, 2);
        assert!(x.decoded_at[0].unwrap() > 2 * step);
    }
}
