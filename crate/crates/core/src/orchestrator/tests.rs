use serde_json::json;

use super::*;
use crate::llmclient::{Scenario, ScriptEntry, ScriptedBackend};
use crate::netlist::MatchingGroup;
use crate::metrics::{Metric, Spec};
use crate::trace::{normalized_ndjson, summarize_accounting};
use crate::testbench::{two_stage_initial_point, two_stage_problem, TWO_STAGE_NETLIST};

fn entry(agent: AgentRole, response: Value) -> ScriptEntry {
    ScriptEntry { agent: agent.name().into(), response, repeat: 1, note: None }
}

fn sizing(point: &Point) -> Value {
    json!({ "parameters": point, "rationale": "square-law estimate" })
}

fn phase1(problem: &Problem) -> Vec<ScriptEntry> {
    let goals: serde_json::Map<String, Value> =
        problem.circuit.mosfets().map(|d| (d.id.clone(), json!("saturation"))).collect();
    vec![
        entry(AgentRole::CircuitExplainer, json!({ "explanation": "Two-stage Miller amplifier." })),
        entry(AgentRole::MatchingFinder, json!({ "groups": [{ "kind": "equal", "members": ["W1", "W2"] }] })),
        entry(AgentRole::DcGoalSetter, json!({ "goals": goals })),
        entry(AgentRole::InitialDesigner, sizing(&two_stage_initial_point())),
    ]
}

fn run(problem: Problem, entries: Vec<ScriptEntry>, config: WorkflowConfig) -> (Result<RunOutcome>, Trace, ScriptedBackend) {
    let backend = ScriptedBackend::new(Scenario { entries });
    let mut trace = Trace::in_memory().with_clock(|| 0);
    let out = run_workflow(problem, TWO_STAGE_NETLIST.into(), config, &backend, &mut trace);
    (out, trace, backend)
}

fn easy() -> Problem {
    two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)])
}

fn impossible() -> Problem {
    two_stage_problem(vec![Spec::at_least(Metric::GainDb, 200.0)])
}

fn assert_budgets_match_trace(out: &RunOutcome, trace: &Trace) {
    let a = summarize_accounting(trace.events());
    let b = out.budgets;
    assert_eq!(
        (a.llm_calls, a.opt_calls, a.dc_sims, a.full_sims_llm, a.full_sims_opt),
        (b.llm_calls, b.optimizer_calls, b.dc_sims, b.full_sims_llm, b.full_sims_opt)
    );
    let fulls = out.state.history.iter().filter(|h| h.report.is_some()).count() as u64;
    assert_eq!(fulls, b.full_sims());
    let space = &out.state.problem.space;
    for h in &out.state.history {
        assert!(space.contains(&h.point), "entry {} out of bounds", h.index);
        assert_eq!(space.project(&h.point, &out.state.problem.matching), h.point);
    }
}

#[test]
fn first_point_meeting_specs_finishes_early() {
    let p = easy();
    let (out, trace, backend) = run(p.clone(), phase1(&p), WorkflowConfig::default());
    let out = out.unwrap();
    assert_eq!(out.status, RunStatus::Complete);
    assert_eq!(backend.remaining(), 0);
    assert_eq!(out.budgets, Budgets { llm_calls: 4, optimizer_calls: 0, dc_sims: 1, full_sims_llm: 1, full_sims_opt: 0 });
    assert_eq!(out.best.as_ref().unwrap().fom(), Some(1.0));
    assert_budgets_match_trace(&out, &trace);
    assert_eq!(out.state.problem.matching.len(), 1);
}

#[test]
fn schema_retry_names_the_missing_parameter() {
    let p = easy();
    let mut entries = phase1(&p);
    let mut partial = two_stage_initial_point();
    partial.remove("L3");
    entries.insert(3, entry(AgentRole::InitialDesigner, sizing(&partial)));
    let (out, trace, _) = run(p, entries, WorkflowConfig::default());
    let out = out.unwrap();
    assert_eq!(out.budgets.llm_calls, 5);
    let retry = trace.events().iter().find(|e| e.kind == EventKind::SchemaRetry).unwrap();
    assert_eq!(retry.actor, "Initial Designer");
    assert!(retry.payload["violation"].as_str().unwrap().contains("L3"));
}

#[test]
fn three_bad_replies_degrade_to_the_fallback_point() {
    let p = easy();
    let mut entries = phase1(&p);
    entries[3] = ScriptEntry { agent: "Initial Designer".into(), response: json!("I think W1 should be larger."), repeat: 3, note: None };
    let cfg = WorkflowConfig { fallback_point: Some(two_stage_initial_point()), ..Default::default() };
    let (out, trace, _) = run(p, entries, cfg);
    let out = out.unwrap();
    assert_eq!(out.budgets.llm_calls, 6);
    assert_eq!(out.status, RunStatus::Complete);
    let retries = trace.events().iter().filter(|e| e.kind == EventKind::SchemaRetry).count();
    assert_eq!(retries, 3);
    assert!(trace.events().iter().any(|e| e.kind == EventKind::Warning && e.actor == "Initial Designer"));
}

#[test]
fn exhausted_script_is_fatal() {
    let p = impossible();
    let (out, _, _) = run(p.clone(), phase1(&p), WorkflowConfig::default());
    match out {
        Err(OrchestratorError::Backend { agent, source: LlmError::ScriptExhausted { index, .. } }) => {
            assert_eq!(agent, "Specs Reviewer");
            assert_eq!(index, 5);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn phase2_cap_keeps_the_closest_point() {
    let p = easy();
    let mut entries = phase1(&p);
    // a tiny output PMOS cannot carry the second-stage current
    let mut bad = two_stage_initial_point();
    bad.insert("W6".into(), 0.5e-6);
    entries[3] = entry(AgentRole::InitialDesigner, sizing(&bad));
    entries.push(entry(AgentRole::DcReviewer, json!({ "report": "M5 weak", "feedback": "widen W6" })));
    entries.push(entry(AgentRole::DcSizer, sizing(&bad)));
    let caps = Caps { phase2_max_cycles: 2, phase3_max_full_sims: 1, phase4_max_cycles: 0, ..Caps::default() };
    let (out, trace, backend) = run(p, entries, WorkflowConfig { caps, ..Default::default() });
    let out = out.unwrap();
    assert_eq!(backend.remaining(), 0);
    assert_eq!(out.budgets.dc_sims, 2);
    assert!(out.state.history[0].dc.as_ref().unwrap().mismatches.unwrap() > 0);
    assert!(trace.events().iter().any(|e| e.kind == EventKind::Warning && e.payload["message"].as_str().unwrap().contains("DC goals not met")));
}

fn optimizer_script(p: &Problem, budget: usize) -> Vec<ScriptEntry> {
    let mut e = phase1(p);
    e.push(entry(AgentRole::AdvisorReviewer, json!({ "critique": "gain short", "feedback": "use the optimizer", "advise_optimizer": true })));
    e.push(entry(
        AgentRole::EquippedSizer,
        json!({ "mode": "optimizer", "algorithm": "bo", "budget": budget, "rationale": "coupled trade-off" }),
    ));
    e
}

fn optimizer_config(parallelism: usize) -> WorkflowConfig {
    let caps = Caps { phase3_max_full_sims: 1, phase4_max_cycles: 1, optimizer_budget_cap: 8, ..Caps::default() };
    let bo = BoSettings { candidates: 64, refine_iters: 4, ..BoSettings::default() };
    WorkflowConfig { caps, parallelism, seed: 7, bo, ..Default::default() }
}

#[test]
fn optimizer_run_is_accounted_and_clamped() {
    let p = impossible();
    let (out, trace, _) = run(p.clone(), optimizer_script(&p, 50), optimizer_config(1));
    let out = out.unwrap();
    assert_eq!(out.status, RunStatus::Incomplete);
    assert_eq!(out.budgets.optimizer_calls, 1);
    assert_eq!(out.budgets.full_sims_opt, 8);
    assert_eq!(out.budgets.llm_calls, 6);
    assert!(trace.events().iter().any(|e| e.kind == EventKind::Warning && e.payload["message"] == "optimizer budget 50 clamped to 8"));
    assert_budgets_match_trace(&out, &trace);
    let best = out.best.unwrap();
    assert_eq!(out.state.current.as_ref(), Some(&best.point));
}

#[test]
fn parallel_objective_keeps_trace_order() {
    let p = impossible();
    let (a, ta, _) = run(p.clone(), optimizer_script(&p, 8), optimizer_config(1));
    let (b, tb, _) = run(p.clone(), optimizer_script(&p, 8), optimizer_config(4));
    a.unwrap();
    b.unwrap();
    assert_eq!(normalized_ndjson(ta.events()), normalized_ndjson(tb.events()));
}

#[test]
fn optimizer_cap_skips_extra_calls() {
    let p = impossible();
    let mut e = optimizer_script(&p, 4);
    e.push(entry(AgentRole::AdvisorReviewer, json!({ "critique": "still short", "advise_optimizer": true })));
    e.push(entry(AgentRole::EquippedSizer, json!({ "mode": "optimizer", "algorithm": "de", "budget": 4 })));
    let mut cfg = optimizer_config(1);
    cfg.caps.phase4_max_cycles = 2;
    cfg.caps.phase4_max_optimizer_calls = 1;
    let (out, trace, backend) = run(p, e, cfg);
    let out = out.unwrap();
    assert_eq!(backend.remaining(), 0);
    assert_eq!(out.budgets.optimizer_calls, 1);
    assert!(trace.events().iter().any(|e| e.payload["message"] == "optimizer call cap reached; keeping the current point"));
}

#[test]
fn configured_matching_skips_the_finder() {
    let mut p = easy();
    p.matching = vec![MatchingGroup::equal(&["W3", "W4"])];
    let mut entries = phase1(&p);
    entries.remove(1);
    let (out, _, backend) = run(p, entries, WorkflowConfig::default());
    let out = out.unwrap();
    assert_eq!(backend.remaining(), 0);
    assert_eq!(out.budgets.llm_calls, 3);
    assert_eq!(out.state.problem.matching, vec![MatchingGroup::equal(&["W3", "W4"])]);
}

