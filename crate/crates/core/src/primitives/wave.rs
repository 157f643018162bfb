//! BFS layering by a wave of collisions.

use crate::engine::{Action, Ctx, EngineConfig, EngineError, NodeRng, Outcome, Packet, Protocol, Session};
use crate::graph::{Graph, NodeId};

/// Source transmits in rounds `1..=depth`; a node that first hears anything (packet or
/// collision) in round `r` has level `r` and transmits in rounds `r+1..=depth`.
pub struct WaveStage {
    pub level: Vec<Option<usize>>,
    active: Vec<NodeId>,
}

impl WaveStage {
    pub fn new(n: usize, source: NodeId) -> Self {
        let mut level = vec![None; n];
        level[source] = Some(0);
        WaveStage { level, active: vec![source] }
    }
}

impl Protocol for WaveStage {
    fn actors(&mut self, _step: u64, out: &mut Vec<NodeId>) {
        out.extend_from_slice(&self.active);
    }

    fn act(&mut self, ctx: Ctx, node: NodeId, _rng: &mut NodeRng) -> Action {
        Action::Transmit(Packet::control(node, ctx.round, "wave", &[]))
    }

    fn observe(&mut self, ctx: Ctx, node: NodeId, _outcome: Outcome) {
        if self.level[node].is_none() {
            self.level[node] = Some(ctx.step as usize + 1);
            self.active.push(node);
        }
    }
}

/// Runs the wave for `depth` rounds on `session` and returns each node's level
/// (`None` for nodes farther than `depth`).
pub fn run_wave(session: &mut Session, source: NodeId, depth: usize) -> Result<Vec<Option<usize>>, EngineError> {
    if !session.config().collision_detection {
        return Err(EngineError::CollisionDetectionRequired);
    }
    let mut wave = WaveStage::new(session.graph().node_count(), source);
    session.execute(depth as u64, &mut wave)?;
    Ok(wave.level)
}

/// BFS levels from `source` in exactly `depth` rounds. Requires collision detection
/// and `depth` at least the eccentricity of `source`.
pub fn collision_wave_bfs(g: &Graph, source: NodeId, depth: usize, cfg: &EngineConfig) -> Result<Vec<usize>, EngineError> {
    let mut session = Session::new(g, cfg.clone());
    let levels = run_wave(&mut session, source, depth)?;
    Ok(levels.into_iter().map(|l| l.expect("depth must cover the source eccentricity")).collect())
}
