//! End-to-end broadcast pipelines: single message with unknown topology, many
//! messages with known topology, and many messages with unknown topology.

mod known;
mod rings;
mod single;
mod strips;
mod transfer;
mod unknown;

use std::fmt;

use thiserror::Error;

use crate::engine::{EngineError, Round, Trace};
use crate::gst::GstLabels;
use crate::schedules::MmvWindow;

pub use known::multi_message_known;
pub use rings::{build_ring_gsts, RingDecomposition, RingGst};
pub use single::single_message_broadcast;
pub use transfer::{inter_ring_transfer, FecStage, TransferReport};
pub use unknown::{multi_message_unknown, BatchPlan, CodingMode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BroadcastError {
    #[error("collision detection is required but disabled")]
    CollisionDetectionRequired,
    #[error("source {0} is not a node of the graph")]
    BadSource(usize),
    #[error("no messages to broadcast")]
    NoMessages,
    #[error("messages must all have the same length")]
    UnequalMessages,
    #[error("an inter-ring transfer needs at least one sender")]
    NoSenders,
}

/// Why a pipeline run did not complete.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Failure {
    pub stage: String,
    pub detail: String,
}

impl Failure {
    pub fn new(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Failure { stage: stage.into(), detail: detail.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.detail)
    }
}

/// Internal early exit from a pipeline.
#[derive(Debug)]
enum Halt {
    Engine(EngineError),
    Failed(Failure),
}

impl From<EngineError> for Halt {
    fn from(e: EngineError) -> Self {
        Halt::Engine(e)
    }
}

impl From<Failure> for Halt {
    fn from(f: Failure) -> Self {
        Halt::Failed(f)
    }
}

impl Halt {
    fn into_failure(self, stage: &str) -> Failure {
        match self {
            Halt::Engine(e) => Failure::new(stage, e.to_string()),
            Halt::Failed(f) => f,
        }
    }
}

#[derive(Debug)]
pub struct PipelineReport {
    pub pipeline: &'static str,
    pub n: usize,
    /// Eccentricity of the source.
    pub depth: usize,
    pub k: usize,
    /// First round by which every node holds every message, checked against the
    /// original message bodies.
    pub completion: Option<Round>,
    pub budget: Round,
    /// Rounds spent per stage, in order.
    pub stages: Vec<(String, Round)>,
    pub failure: Option<Failure>,
    /// Labels the MMV stages ran on (levels relative to each ring).
    pub labels: Option<GstLabels>,
    /// Where the MMV stages sit in the trace.
    pub windows: Vec<MmvWindow>,
    pub trace: Trace,
}

impl PipelineReport {
    pub fn success(&self) -> bool {
        self.failure.is_none()
    }

    /// Every node got every message, possibly after the budget ran out.
    pub fn delivered(&self) -> bool {
        self.completion.is_some() && self.failure.as_ref().is_none_or(|f| f.stage == "budget")
    }

    /// `stage:rounds` pairs joined by `;`.
    pub fn stage_breakdown(&self) -> String {
        self.stages.iter().map(|(s, r)| format!("{s}:{r}")).collect::<Vec<_>>().join(";")
    }

    /// Marks the run failed if it did not complete within its budget.
    fn check_budget(&mut self) {
        if self.failure.is_some() {
            return;
        }
        match self.completion {
            Some(c) if c <= self.budget => {}
            Some(c) => self.failure = Some(Failure::new("budget", format!("completed at {c}, budget {}", self.budget))),
            None => self.failure = Some(Failure::new("budget", "never completed")),
        }
    }
}

/// Latest of the per-node completion rounds, if every node completed.
fn all_done(done: &[Option<Round>]) -> Option<Round> {
    done.iter().copied().collect::<Option<Vec<_>>>().map(|v| v.into_iter().max().unwrap_or(0))
}
