//! Run counters and the per-tick CSV export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::Tick;
use crate::state::{Audit, BreakCause};

/// Schema tag written on the first line of every metrics CSV.
pub const METRICS_SCHEMA: &str = "vodsim-metrics/1";

pub const TICK_COLUMNS: &[&str] = &[
    "tick",
    "issued",
    "satisfied",
    "unsatisfied",
    "stalls",
    "retries",
    "active_boxes",
    "playbacks",
    "connections",
    "used_slots",
    "capacity_slots",
    "utilization",
    "swarms",
    "max_swarm",
    "seed_searches",
    "audit_violations",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickRecord {
    pub tick: Tick,
    /// Cumulative counters at the end of the tick.
    pub issued: u64,
    pub satisfied: u64,
    pub unsatisfied: u64,
    pub stalls: u64,
    pub retries: u64,
    pub active_boxes: usize,
    pub playbacks: usize,
    pub connections: usize,
    pub used_slots: u64,
    pub capacity_slots: u64,
    pub utilization: f64,
    pub swarms: usize,
    pub max_swarm: usize,
    pub seed_searches: u64,
    pub audit_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    /// Playback requests (start and zap events).
    pub issued: u64,
    /// Requests connected on every stripe within `t_S`.
    pub satisfied: u64,
    pub unsatisfied: u64,
    /// Satisfied requests before the first unsatisfied one.
    pub saturation: u64,
    pub first_failure_tick: Option<Tick>,
    /// Playbacks that missed `t_S` but connected later.
    pub late_starts: u64,
    pub completed: u64,
    /// Mid-playback stall episodes.
    pub stalls: u64,
    pub stall_causes: BTreeMap<BreakCause, u64>,
    pub unexplained_stalls: u64,
    /// Stripe searches for playbacks that were already waiting.
    pub retries: u64,
    pub probes: u64,
    pub flips: u64,
    pub evictions: u64,
    pub reseeds: u64,
    /// Searches that consulted allocation holders.
    pub seed_searches: u64,
    pub max_seed_searches_per_stripe: u32,
    pub skipped_events: u64,
    /// Per-tick audit findings, summed.
    pub audit: Audit,
    pub ticks: Vec<TickRecord>,
}

impl Metrics {
    pub fn stalls_by(&self, cause: BreakCause) -> u64 {
        self.stall_causes.get(&cause).copied().unwrap_or(0)
    }

    pub fn mean_utilization(&self) -> f64 {
        if self.ticks.is_empty() {
            return 0.0;
        }
        self.ticks.iter().map(|t| t.utilization).sum::<f64>() / self.ticks.len() as f64
    }

    /// Schema line, header, one row per tick and a final `summary` row whose
    /// counters are the run totals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {METRICS_SCHEMA}");
        let _ = writeln!(out, "{}", TICK_COLUMNS.join(","));
        for t in &self.ticks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{:.6},{},{},{},{}",
                t.tick,
                t.issued,
                t.satisfied,
                t.unsatisfied,
                t.stalls,
                t.retries,
                t.active_boxes,
                t.playbacks,
                t.connections,
                t.used_slots,
                t.capacity_slots,
                t.utilization,
                t.swarms,
                t.max_swarm,
                t.seed_searches,
                t.audit_violations
            );
        }
        let last = self.ticks.last().cloned().unwrap_or_default();
        let _ = writeln!(
            out,
            "summary,{},{},{},{},{},{},{},{},{},{},{:.6},{},{},{},{}",
            self.issued,
            self.satisfied,
            self.unsatisfied,
            self.stalls,
            self.retries,
            last.active_boxes,
            last.playbacks,
            last.connections,
            last.used_slots,
            last.capacity_slots,
            self.mean_utilization(),
            last.swarms,
            self.ticks.iter().map(|t| t.max_swarm).max().unwrap_or(0),
            self.seed_searches,
            audit_total(&self.audit)
        );
        out
    }
}

pub fn audit_total(a: &Audit) -> u64 {
    a.over_capacity + a.reserved_slot + a.failed_box_busy + a.ordering + a.cycles
}
