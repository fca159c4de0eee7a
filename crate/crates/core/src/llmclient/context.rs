use std::fmt::Write as _;

use crate::metrics::Direction;
use crate::netlist::MatchKind;
use crate::orchestrator::{AgentSpec, ContextKey, HistoryEntry, Tool, WorkflowState};
use crate::pipeline::{DcGoals, DcOutcome, FullOutcome};
use crate::trace::fmt_num;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ContextError {
    #[error("{agent} needs '{key}', which the workflow has not produced yet")]
    Missing { agent: String, key: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextOptions {
    /// Most recent history entries shown.
    pub history_tail: usize,
    /// Approximate budget, at four characters per token. Older history
    /// entries are dropped first when it is exceeded.
    pub token_budget: usize,
}

impl Default for ContextOptions {
    fn default() -> Self {
        ContextOptions { history_tail: 10, token_budget: 12_000 }
    }
}

fn region_table(out: &mut String, dc: Option<&DcOutcome>, sol: Option<&crate::DcSolution>, goals: Option<&DcGoals>) {
    if let Some(err) = dc.and_then(|d| d.error.as_deref()) {
        let _ = writeln!(out, "DC analysis failed: {err}\n");
        return;
    }
    let Some(sol) = sol else {
        out.push_str("No operating point available.\n\n");
        return;
    };
    out.push_str("| device | region | goal | Id (A) | Vgs (V) | Vds (V) | gm (S) | gds (S) |\n|---|---|---|---|---|---|---|---|\n");
    for (dev, op) in &sol.transistor_ops {
        let goal = match goals.and_then(|g| g.get(dev)) {
            Some(g) if *g == op.region => "ok".to_string(),
            Some(g) => format!("**{}**", g.as_str()),
            None => "-".to_string(),
        };
        let _ = writeln!(
            out,
            "| {dev} | {} | {goal} | {} | {} | {} | {} | {} |",
            op.region.as_str(),
            fmt_num(op.id_a),
            fmt_num(op.vgs_v),
            fmt_num(op.vds_v),
            fmt_num(op.gm_s),
            fmt_num(op.gds_s)
        );
    }
    out.push('\n');
    let nodes: Vec<String> = sol.node_voltages.iter().map(|(n, v)| format!("{n}={}", fmt_num(*v))).collect();
    let _ = writeln!(out, "Node voltages (V): {}\n", nodes.join(", "));
}

fn full_block(out: &mut String, state: &WorkflowState, full: &FullOutcome) {
    if let Some(err) = &full.error {
        let _ = writeln!(out, "Simulation failed: {err}\n");
    }
    out.push_str("| metric | value | target | met |\n|---|---|---|---|\n");
    for s in &state.problem.specs {
        let v = full.report.values.get(&s.metric).map_or("-".to_string(), |v| fmt_num(*v));
        let dir = match s.direction {
            Direction::AtLeast => ">=",
            Direction::AtMost => "<=",
        };
        let met = if full.report.satisfied.get(&s.metric).copied().unwrap_or(false) { "yes" } else { "no" };
        let _ = writeln!(out, "| {} | {v} | {dir} {} | {met} |", s.metric.as_str(), fmt_num(s.target));
    }
    let _ = writeln!(out, "\nFoM: {:.4}\n", full.fom());
    for w in &full.warnings {
        let _ = writeln!(out, "Warning: {w}\n");
    }
    region_table(out, None, full.dc.as_ref(), state.dc_goals.as_ref());
}

fn history_line(h: &HistoryEntry) -> String {
    let mut s = format!("#{} phase {} {}:", h.index, h.phase, h.source);
    if let Some(r) = &h.report {
        let _ = write!(s, " fom {:.4}", r.fom);
        for (m, v) in &r.values {
            let _ = write!(s, ", {}={}", m.as_str(), fmt_num(*v));
        }
    }
    if let Some(dc) = &h.dc {
        match (dc.converged, dc.mismatches) {
            (false, _) => s.push_str("; dc failed"),
            (true, Some(0)) => s.push_str("; dc goals met"),
            (true, Some(n)) => {
                let _ = write!(s, "; {n} region mismatches");
            }
            (true, None) => s.push_str("; dc ok"),
        }
    }
    if let Some(e) = &h.error {
        let _ = write!(s, "; error: {e}");
    }
    let params: Vec<String> = h.point.iter().map(|(k, v)| format!("{k}={}", fmt_num(*v))).collect();
    let _ = write!(s, " | {}", params.join(" "));
    s
}

/// Render the state an agent is allowed to see, in a fixed section order.
pub fn assemble_context(state: &WorkflowState, spec: &AgentSpec, opts: &ContextOptions) -> Result<String, ContextError> {
    let missing = |key: ContextKey| ContextError::Missing { agent: spec.role.name().to_string(), key: key.as_str() };
    let mut keys = spec.context_keys.clone();
    keys.sort();
    keys.dedup();
    let mut head = String::new();
    let mut history: Vec<String> = Vec::new();
    for key in keys {
        match key {
            ContextKey::Netlist => {
                let _ = writeln!(head, "## Netlist\n\n```spice\n{}\n```\n", state.netlist_text.trim_end());
            }
            ContextKey::Parameters => {
                head.push_str("## Parameters\n\n| parameter | min | max | unit | current |\n|---|---|---|---|---|\n");
                for e in state.problem.space.entries() {
                    let cur = state.current.as_ref().and_then(|p| p.get(&e.name)).map_or("-".to_string(), |v| fmt_num(*v));
                    let _ = writeln!(head, "| {} | {} | {} | {} | {cur} |", e.name, fmt_num(e.lo), fmt_num(e.hi), e.unit);
                }
                head.push('\n');
            }
            ContextKey::Specs => {
                head.push_str("## Specifications\n\n");
                for s in &state.problem.specs {
                    let dir = match s.direction {
                        Direction::AtLeast => ">=",
                        Direction::AtMost => "<=",
                    };
                    let soft = if s.hardness == crate::metrics::Hardness::SoftObjective { " (soft)" } else { "" };
                    let _ = writeln!(head, "- {} {dir} {}{soft}", s.metric.as_str(), fmt_num(s.target));
                }
                head.push('\n');
            }
            ContextKey::Explanation => {
                let text = state.explanation.as_ref().ok_or_else(|| missing(key))?;
                let _ = writeln!(head, "## Circuit explanation\n\n{}\n", text.trim_end());
            }
            ContextKey::Matching => {
                if !state.matching_set {
                    return Err(missing(key));
                }
                head.push_str("## Matching groups\n\n");
                if state.problem.matching.is_empty() {
                    head.push_str("None.\n");
                }
                for g in &state.problem.matching {
                    match g.kind {
                        MatchKind::Equal => {
                            let _ = writeln!(head, "- equal: {}", g.members.join(", "));
                        }
                        MatchKind::Ratio => {
                            let r: Vec<String> = g.ratios.iter().map(|x| x.to_string()).collect();
                            let _ = writeln!(head, "- ratio {}: {}", r.join(":"), g.members.join(", "));
                        }
                    }
                }
                head.push('\n');
            }
            ContextKey::DcGoals => {
                let goals = state.dc_goals.as_ref().ok_or_else(|| missing(key))?;
                head.push_str("## DC goals\n\n");
                for (d, r) in goals {
                    let _ = writeln!(head, "- {d}: {}", r.as_str());
                }
                head.push('\n');
            }
            ContextKey::LatestDc => {
                let dc = state.latest_dc.as_ref().ok_or_else(|| missing(key))?;
                head.push_str("## Latest DC operating point\n\n");
                region_table(&mut head, Some(dc), dc.solution.as_ref(), state.dc_goals.as_ref());
            }
            ContextKey::LatestFull => {
                let full = state.latest_full.as_ref().ok_or_else(|| missing(key))?;
                head.push_str("## Latest full simulation\n\n");
                full_block(&mut head, state, full);
            }
            ContextKey::LatestSim => match state.latest_tool {
                Some(Tool::DcSim) => {
                    let dc = state.latest_dc.as_ref().ok_or_else(|| missing(key))?;
                    head.push_str("## Latest simulation (DC only)\n\n");
                    region_table(&mut head, Some(dc), dc.solution.as_ref(), state.dc_goals.as_ref());
                }
                Some(_) => {
                    let full = state.latest_full.as_ref().ok_or_else(|| missing(key))?;
                    head.push_str("## Latest simulation\n\n");
                    full_block(&mut head, state, full);
                }
                None => return Err(missing(key)),
            },
            ContextKey::Feedback => {
                let fb = state.feedback.as_ref().ok_or_else(|| missing(key))?;
                let _ = writeln!(head, "## Reviewer feedback\n\n{}\n", fb.trim_end());
            }
            ContextKey::Stagnation => {
                let s = state.stagnation.ok_or_else(|| missing(key))?;
                let msg = if s {
                    "The best figure of merit has stopped improving over the recent evaluations."
                } else {
                    "The figure of merit is still improving."
                };
                let _ = writeln!(head, "## Progress\n\n{msg}\n");
            }
            ContextKey::History => {
                let skip = state.history.len().saturating_sub(opts.history_tail);
                history = state.history[skip..].iter().map(history_line).collect();
            }
        }
    }
    let task = format!("## Task\n\n{}\n", spec.task);
    let budget_chars = opts.token_budget.saturating_mul(4);
    let mut dropped = 0;
    let render_history = |lines: &[String], dropped: usize| {
        if lines.is_empty() && dropped == 0 {
            return String::new();
        }
        let mut s = String::from("## History\n\n");
        if dropped > 0 {
            let _ = writeln!(s, "({dropped} older entries omitted)");
        }
        for l in lines {
            let _ = writeln!(s, "- {l}");
        }
        s.push('\n');
        s
    };
    let has_history_key = spec.context_keys.contains(&ContextKey::History);
    let mut hist = render_history(&history, 0);
    while !history.is_empty() && head.len() + hist.len() + task.len() > budget_chars {
        history.remove(0);
        dropped += 1;
        hist = render_history(&history, dropped);
    }
    if has_history_key && hist.is_empty() {
        hist = "## History\n\nNo evaluations yet.\n\n".to_string();
    }
    Ok(format!("{head}{hist}{task}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, Metric, MetricValues, Spec};
    use crate::netlist::MatchingGroup;
    use crate::orchestrator::{agent_spec, AgentRole, DcSummary};
    use crate::simulator::{DcSolution, Region, TransistorOp};
    use crate::testbench::{two_stage_initial_point, two_stage_problem, TWO_STAGE_NETLIST};

    fn op(id: f64, region: Region) -> TransistorOp {
        TransistorOp { id_a: id, vgs_v: 0.7, vds_v: 0.4, gm_s: 2e-4, gds_s: 1e-6, region }
    }

    fn state() -> WorkflowState {
        let specs = vec![Spec::at_least(Metric::GainDb, 60.0), Spec::at_most(Metric::PowerW, 1e-3)];
        let mut problem = two_stage_problem(specs.clone());
        problem.matching = vec![MatchingGroup::equal(&["W1", "W2"])];
        let mut s = WorkflowState::new(problem, TWO_STAGE_NETLIST.to_string());
        s.explanation = Some("Two-stage Miller amplifier.".into());
        s.dc_goals = Some([("M1".to_string(), Region::Saturation), ("M6".to_string(), Region::Saturation)].into());
        let mut sol = DcSolution::default();
        sol.node_voltages.insert("out".into(), 0.9);
        sol.transistor_ops.insert("M1".into(), op(2e-5, Region::Saturation));
        sol.transistor_ops.insert("M6".into(), op(1e-4, Region::Triode));
        let point = two_stage_initial_point();
        let dc = DcOutcome { point: point.clone(), solution: Some(sol), error: None };
        for i in 0..12 {
            let mut values = MetricValues::new();
            values.insert(Metric::GainDb, 50.0 + i as f64);
            values.insert(Metric::PowerW, 5e-4);
            s.push_history(HistoryEntry {
                index: 0,
                phase: 3,
                source: "Reasoning Sizer".into(),
                point: point.clone(),
                dc: Some(DcSummary::from_outcome(&dc, s.dc_goals.as_ref())),
                report: Some(evaluate(values, &specs)),
                error: None,
            });
        }
        s.current = Some(point);
        s.latest_dc = Some(dc);
        s.latest_tool = Some(Tool::DcSim);
        s.feedback = Some("Lengthen L6.".into());
        s
    }

    fn golden(name: &str, actual: &str) {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, actual).unwrap();
        }
        let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(actual, want, "context drifted from {}", path.display());
    }

    #[test]
    fn dc_sizer_context_matches_golden() {
        let ctx = assemble_context(&state(), &agent_spec(AgentRole::DcSizer), &ContextOptions::default()).unwrap();
        golden("dc_sizer_context.md", &ctx);
    }

    #[test]
    fn sections_keep_their_order() {
        let ctx = assemble_context(&state(), &agent_spec(AgentRole::DcReviewer), &ContextOptions::default()).unwrap();
        let pos = |s: &str| ctx.find(s).unwrap_or_else(|| panic!("missing {s}"));
        assert!(pos("## Netlist") < pos("## DC goals"));
        assert!(pos("## DC goals") < pos("## Latest DC"));
        assert!(pos("## Latest DC") < pos("## History"));
        assert!(pos("## History") < pos("## Task"));
        assert!(ctx.contains("| M6 | triode | **saturation** |"));
        // tail of ten out of twelve
        assert!(!ctx.contains("- #2 "));
        assert!(ctx.contains("- #3 ") && ctx.contains("- #12 "));
    }

    #[test]
    fn missing_key_is_an_error() {
        let mut s = state();
        s.explanation = None;
        let err = assemble_context(&s, &agent_spec(AgentRole::InitialDesigner), &ContextOptions::default()).unwrap_err();
        assert_eq!(err, ContextError::Missing { agent: "Initial Designer".into(), key: "explanation" });
    }

    #[test]
    fn tight_budget_drops_oldest_history_first() {
        let s = state();
        let spec = agent_spec(AgentRole::DcReviewer);
        let full = assemble_context(&s, &spec, &ContextOptions::default()).unwrap();
        let tight = ContextOptions { token_budget: (full.len() - 300) / 4, ..Default::default() };
        let ctx = assemble_context(&s, &spec, &tight).unwrap();
        assert!(ctx.len() <= tight.token_budget * 4);
        assert!(ctx.contains("older entries omitted"));
        assert!(!ctx.contains("- #3 ") && ctx.contains("- #12 "));
        assert!(ctx.ends_with(&format!("## Task\n\n{}\n", spec.task)));
    }
}
