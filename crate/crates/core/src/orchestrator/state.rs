use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::agents::Tool;
use crate::metrics::MetricReport;
use crate::netlist::Point;
use crate::pipeline::{DcGoals, DcOutcome, FullOutcome, Problem};
use crate::simulator::Region;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcSummary {
    pub converged: bool,
    pub regions: BTreeMap<String, Region>,
    /// Devices off their goal region; `None` when no goals were set yet.
    pub mismatches: Option<usize>,
}

impl DcSummary {
    pub fn from_outcome(dc: &DcOutcome, goals: Option<&DcGoals>) -> Self {
        let regions = dc
            .solution
            .as_ref()
            .map(|s| s.transistor_ops.iter().map(|(k, op)| (k.clone(), op.region)).collect())
            .unwrap_or_default();
        DcSummary { converged: dc.solution.is_some(), regions, mismatches: goals.map(|g| dc.mismatches(g).len()) }
    }
}

/// One evaluated (or proposed) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub phase: u8,
    /// Agent name, or `optimizer`.
    pub source: String,
    pub point: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dc: Option<DcSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl HistoryEntry {
    pub fn fom(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.fom)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub llm_calls: u64,
    pub optimizer_calls: u64,
    pub dc_sims: u64,
    pub full_sims_llm: u64,
    pub full_sims_opt: u64,
}

impl Budgets {
    pub fn full_sims(&self) -> u64 {
        self.full_sims_llm + self.full_sims_opt
    }
}

/// Everything the agents can see, plus the bookkeeping the engine needs.
#[derive(Debug, Clone)]
pub struct WorkflowState {
    pub netlist_text: String,
    /// Problem definition; `problem.matching` holds the active matching groups.
    pub problem: Problem,
    pub explanation: Option<String>,
    /// True once matching groups are fixed (by config or the Matching Finder).
    pub matching_set: bool,
    pub dc_goals: Option<DcGoals>,
    pub history: Vec<HistoryEntry>,
    pub budgets: Budgets,
    pub phase: u8,
    pub current: Option<Point>,
    pub latest_dc: Option<DcOutcome>,
    pub latest_full: Option<FullOutcome>,
    pub latest_tool: Option<Tool>,
    pub feedback: Option<String>,
    pub stagnation: Option<bool>,
    pub next_tool: Tool,
}

impl WorkflowState {
    pub fn new(problem: Problem, netlist_text: String) -> Self {
        let matching_set = !problem.matching.is_empty();
        WorkflowState {
            netlist_text,
            problem,
            explanation: None,
            matching_set,
            dc_goals: None,
            history: Vec::new(),
            budgets: Budgets::default(),
            phase: 1,
            current: None,
            latest_dc: None,
            latest_full: None,
            latest_tool: None,
            feedback: None,
            stagnation: None,
            next_tool: Tool::FullSim,
        }
    }

    pub fn push_history(&mut self, mut entry: HistoryEntry) -> usize {
        entry.index = self.history.len() + 1;
        self.history.push(entry);
        self.history.len()
    }

    /// Best full-simulation result so far; ties go to the earliest.
    pub fn best(&self) -> Option<&HistoryEntry> {
        self.history.iter().filter(|h| h.report.is_some()).fold(None, |best: Option<&HistoryEntry>, h| match best {
            Some(b) if b.fom().unwrap_or(0.0) >= h.fom().unwrap_or(0.0) => Some(b),
            _ => Some(h),
        })
    }

    /// Full report already computed for exactly this point, if any.
    pub fn report_for(&self, point: &Point) -> Option<&HistoryEntry> {
        self.history.iter().rev().find(|h| h.report.is_some() && &h.point == point)
    }

    /// Scored full-simulation history, oldest first.
    pub fn fom_history(&self) -> Vec<f64> {
        self.history.iter().filter_map(HistoryEntry::fom).collect()
    }
}

/// True when the best-so-far FoM improved by less than `min_improvement`
/// over the last `window` scored entries. Short histories never stagnate.
pub fn detect_stagnation(foms: &[f64], window: usize, min_improvement: f64) -> bool {
    if window < 2 || foms.len() < window {
        return false;
    }
    let mut best = f64::MIN;
    let running: Vec<f64> = foms
        .iter()
        .map(|f| {
            best = best.max(*f);
            best
        })
        .collect();
    let n = running.len();
    running[n - 1] - running[n - window] < min_improvement
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stagnation_window() {
        assert!(!detect_stagnation(&[0.5, 0.5, 0.5, 0.5], 5, 0.01));
        assert!(detect_stagnation(&[0.5, 0.5, 0.5, 0.5, 0.5], 5, 0.01));
        assert!(!detect_stagnation(&[0.5, 0.5, 0.5, 0.5, 0.52], 5, 0.01));
        // a dip does not count as improvement, the running best is used
        assert!(detect_stagnation(&[0.1, 0.9, 0.2, 0.3, 0.4, 0.5, 0.6], 5, 0.01));
        assert!(!detect_stagnation(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], 5, 0.01));
    }
}
