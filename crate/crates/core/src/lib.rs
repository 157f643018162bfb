//! Radio-network broadcast simulator.

pub mod bits;
pub mod broadcast;
pub mod constants;
pub mod engine;
pub mod graph;
pub mod gather;
pub mod gst;
pub mod harness;
pub mod primitives;
pub mod rlnc;
pub mod schedules;
