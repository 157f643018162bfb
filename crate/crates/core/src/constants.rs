//! Multiplicative constants behind every Θ(·) bound used by the protocols.
//!
//! Values are written as factors of `L = ⌈log₂ n⌉`; e.g. `recruit_iterations = 4`
//! means the Recruiting protocol runs `4·L²` iterations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constants {
    /// Decay phases used wherever a w.h.p. delivery is needed: `x·L`.
    pub decay_phases: u64,
    /// Recruiting iterations: `x·L²`.
    pub recruit_iterations: u64,
    /// Bipartite-assignment epochs per rank: `x·L`.
    pub assignment_epochs: u64,
    /// Pipeline round budget `x·(D + k·L + L⁶)`.
    pub budget: u64,
    /// Per-ring MMV stage length `a·W + b·L² + c·k′·L` for a ring of width `W`
    /// carrying `k′` messages.
    pub ring_mmv_width: u64,
    pub ring_mmv_log: u64,
    pub ring_mmv_message: u64,
    /// Inter-ring Decay bridge for a single message: `x·L` phases.
    pub bridge_phases: u64,
    /// One ring suffices while `D ≤ L^x`.
    pub single_ring_exponent: u32,
    /// Otherwise rings are `⌈D / L^x⌉` layers wide.
    pub ring_width_exponent: u32,
    /// Forces a ring width, overriding the two rules above.
    pub ring_width: Option<u64>,
    /// Generation size in generation mode: `x·L` messages.
    pub batch: u64,
    /// Strip height in generation mode: `x·L²`.
    pub strip: u64,
    /// Step length in generation mode: `x·L²` rounds.
    pub step: u64,
    /// Inter-ring batch size floor: `max(x·L, ⌈D/L³⌉)` messages.
    pub ring_batch: u64,
    /// Inter-ring FEC transfer: `max(decay_phases·L, x·k′)` Decay phases.
    pub fec_phases: u64,
    /// Floor on the `L` used by protocol timing, so that tiny graphs still get
    /// multi-round Decay phases. Rank bounds are unaffected.
    pub log_floor: usize,
    /// Gathering exponent `c` (copies `(c+1)·L`, delays up to `10(c+1)kL`).
    pub gather_c: u64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants {
            decay_phases: 4,
            recruit_iterations: 4,
            assignment_epochs: 8,
            budget: 64,
            ring_mmv_width: 2,
            ring_mmv_log: 8,
            ring_mmv_message: 8,
            bridge_phases: 4,
            single_ring_exponent: 6,
            ring_width_exponent: 4,
            ring_width: None,
            batch: 1,
            strip: 1,
            step: 12,
            ring_batch: 1,
            fec_phases: 16,
            gather_c: 1,
            log_floor: 4,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConstantsError {
    #[error("override `{0}` is not of the form key=value")]
    Syntax(String),
    #[error("unknown constant `{0}`")]
    Unknown(String),
    #[error("bad value for `{key}`: {value}")]
    Value { key: String, value: String },
}

impl Constants {
    /// Applies comma-separated `key=value` overrides, e.g. `decay_phases=6,ring_width=40`.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), ConstantsError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| ConstantsError::Syntax(item.to_string()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || ConstantsError::Value { key: key.to_string(), value: value.to_string() };
            let int = || value.parse::<u64>().map_err(|_| bad());
            match key {
                "decay_phases" => self.decay_phases = int()?,
                "recruit_iterations" => self.recruit_iterations = int()?,
                "assignment_epochs" => self.assignment_epochs = int()?,
                "budget" => self.budget = int()?,
                "ring_mmv_width" => self.ring_mmv_width = int()?,
                "ring_mmv_log" => self.ring_mmv_log = int()?,
                "ring_mmv_message" => self.ring_mmv_message = int()?,
                "bridge_phases" => self.bridge_phases = int()?,
                "single_ring_exponent" => self.single_ring_exponent = value.parse().map_err(|_| bad())?,
                "ring_width_exponent" => self.ring_width_exponent = value.parse().map_err(|_| bad())?,
                "ring_width" => {
                    self.ring_width = if value == "auto" { None } else { Some(int()?.max(1)) };
                }
                "batch" => self.batch = int()?,
                "strip" => self.strip = int()?,
                "step" => self.step = int()?,
                "ring_batch" => self.ring_batch = int()?,
                "fec_phases" => self.fec_phases = int()?,
                "gather_c" => self.gather_c = int()?,
                "log_floor" => self.log_floor = int()? as usize,
                _ => return Err(ConstantsError::Unknown(key.to_string())),
            }
        }
        Ok(())
    }

    /// The `L` used for protocol timing on `g`.
    pub fn log_n(&self, g: &crate::graph::Graph) -> usize {
        g.log_n().max(self.log_floor).max(1)
    }

    pub fn whp_phases(&self, log_n: usize) -> u64 {
        (self.decay_phases * log_n as u64).max(1)
    }

    pub fn recruit_iteration_count(&self, log_n: usize) -> u64 {
        (self.recruit_iterations * (log_n * log_n) as u64).max(1)
    }

    pub fn epoch_count(&self, log_n: usize) -> u64 {
        (self.assignment_epochs * log_n as u64).max(1)
    }

    /// Round budget for a pipeline on diameter `d` with `k` messages.
    pub fn round_budget(&self, d: usize, k: usize, log_n: usize) -> u64 {
        let l = log_n as u64;
        self.budget.saturating_mul(d as u64 + k as u64 * l + l.pow(6))
    }

    /// Width of each ring for a graph with BFS depth `d`.
    pub fn ring_width(&self, d: usize, log_n: usize) -> usize {
        if let Some(w) = self.ring_width {
            return w as usize;
        }
        let l = log_n as u128;
        let d128 = d as u128;
        if d128 <= l.saturating_pow(self.single_ring_exponent) {
            return d + 1;
        }
        d128.div_ceil(l.saturating_pow(self.ring_width_exponent)).max(1) as usize
    }

    pub fn ring_mmv_rounds(&self, width: usize, k: usize, log_n: usize) -> u64 {
        let l = log_n as u64;
        self.ring_mmv_width * width as u64 + self.ring_mmv_log * l * l + self.ring_mmv_message * k as u64 * l
    }

    pub fn generation_size(&self, log_n: usize) -> usize {
        (self.batch as usize * log_n).max(1)
    }

    pub fn strip_height(&self, log_n: usize) -> usize {
        (self.strip as usize * log_n * log_n).max(1)
    }

    pub fn step_rounds(&self, log_n: usize) -> u64 {
        (self.step * (log_n * log_n) as u64).max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_apply_and_reject_unknown_keys() {
        let mut c = Constants::default();
        c.apply_overrides("decay_phases=6, ring_width=40").unwrap();
        assert_eq!(c.decay_phases, 6);
        assert_eq!(c.ring_width, Some(40));
        c.apply_overrides("ring_width=auto").unwrap();
        assert_eq!(c.ring_width, None);
        assert_eq!(c.apply_overrides("nope=1"), Err(ConstantsError::Unknown("nope".into())));
        assert!(matches!(c.apply_overrides("budget"), Err(ConstantsError::Syntax(_))));
        assert!(matches!(c.apply_overrides("budget=x"), Err(ConstantsError::Value { .. })));
    }

    #[test]
    fn small_depth_uses_one_ring() {
        let c = Constants::default();
        assert_eq!(c.ring_width(40, 7), 41);
        let big = 7usize.pow(6) + 1;
        assert_eq!(c.ring_width(big, 7), big.div_ceil(7usize.pow(4)));
    }
}
