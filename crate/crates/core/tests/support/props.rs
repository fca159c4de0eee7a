//! Strategies and property checks shared by the core property tests and
//! the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeMap;

use agentsize_core::llmclient::{Scenario, ScriptEntry, ScriptedBackend};
use agentsize_core::metrics::{compute_fom, Direction, Metric, Spec};
use agentsize_core::pipeline::Problem;
use agentsize_core::netlist::{
    apply_matching, parse_netlist, serialize_netlist, MatchingGroup, ParamEntry, ParameterSpace, Point, Scale,
};
use agentsize_core::orchestrator::{enforce_schema, run_workflow, EnforceError, SchemaId, WorkflowConfig};
use agentsize_core::simulator::{kcl_residual, solve_dc, DcOptions};
use agentsize_core::testbench;
use agentsize_core::trace::{EventKind, Trace};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use serde_json::json;

const NETS: [&str; 7] = ["0", "n1", "n2", "n3", "out", "vdd", "x_1"];

pub fn net() -> impl Strategy<Value = String> {
    prop::sample::select(NETS.to_vec()).prop_map(str::to_string)
}

pub fn value_text() -> impl Strategy<Value = String> {
    prop_oneof![
        (1u32..999, prop::sample::select(vec!["", "f", "p", "n", "u", "m", "k", "meg", "g"]))
            .prop_map(|(m, s)| format!("{}{s}", m as f64 / 10.0)),
        (1u32..5).prop_map(|i| format!("{{P{i}}}")),
        (-12i32..6, 1u32..99).prop_map(|(e, m)| format!("{m}e{e}")),
    ]
}

pub fn device_line(i: usize) -> impl Strategy<Value = String> {
    prop_oneof![
        (net(), net(), value_text()).prop_map(move |(a, b, v)| format!("R{i} {a} {b} {v}")),
        (net(), net(), value_text()).prop_map(move |(a, b, v)| format!("C{i} {a} {b} {v}")),
        (net(), net(), value_text(), prop::option::of(value_text()))
            .prop_map(move |(a, b, v, ac)| match ac {
                Some(ac) => format!("V{i} {a} {b} DC {v} AC {ac}"),
                None => format!("V{i} {a} {b} {v}"),
            }),
        (net(), net(), value_text()).prop_map(move |(a, b, v)| format!("I{i} {a} {b} DC {v}")),
        (net(), net(), net(), net(), prop::bool::ANY, value_text(), value_text()).prop_map(
            move |(d, g, s, b, n, w, l)| {
                let model = if n { "NMOS" } else { "PMOS" };
                format!("M{i} {d} {g} {s} {b} {model} W={w} L = {l}")
            }
        ),
    ]
}

pub fn netlist_text() -> impl Strategy<Value = String> {
    (1usize..12).prop_flat_map(|n| {
        let lines: Vec<_> = (0..n).map(device_line).collect();
        (lines, prop::bool::ANY).prop_map(|(lines, comment)| {
            let mut text = String::from("fuzzed circuit\n");
            if comment {
                text.push_str("* a comment line\n");
            }
            for l in lines {
                text.push_str(&l);
                text.push('\n');
            }
            // every fuzzed circuit touches ground
            text.push_str("Rg n1 0 1k\n.end\n");
            text
        })
    })
}


pub fn space(n: usize) -> ParameterSpace {
    let entries = (0..n)
        .map(|i| ParamEntry { name: format!("P{i}"), lo: 1e-7, hi: 1e-4, unit: "m".into(), scale: Scale::Log })
        .collect();
    ParameterSpace::new(entries).unwrap()
}

pub fn groups_and_point() -> impl Strategy<Value = (Vec<MatchingGroup>, Point)> {
    (prop::collection::vec(0usize..3, 8), prop::collection::vec(1e-7f64..1e-4, 8), prop::collection::vec(1u32..4, 8))
        .prop_map(|(assign, values, ratios)| {
            let mut groups = Vec::new();
            for g in 0..3 {
                let members: Vec<String> =
                    (0..8).filter(|i| assign[*i] == g).map(|i| format!("P{i}")).collect();
                if members.len() < 2 {
                    continue;
                }
                let refs: Vec<&str> = members.iter().map(String::as_str).collect();
                if g == 2 {
                    let r: Vec<f64> = (0..refs.len()).map(|i| ratios[i] as f64).collect();
                    groups.push(MatchingGroup::ratio(&refs, &r));
                } else {
                    groups.push(MatchingGroup::equal(&refs));
                }
            }
            let point = values.iter().enumerate().map(|(i, v)| (format!("P{i}"), *v)).collect();
            (groups, point)
        })
}


pub fn metric_values() -> impl Strategy<Value = BTreeMap<Metric, f64>> {
    prop::collection::vec(prop::option::of(1e-6f64..1e9), 5).prop_map(|vals| {
        Metric::ALL.iter().zip(vals).filter_map(|(m, v)| v.map(|v| (*m, v))).collect()
    })
}

pub fn specs() -> impl Strategy<Value = Vec<Spec>> {
    prop::collection::vec((prop::bool::ANY, 1e-6f64..1e9, 0.1f64..5.0), 5).prop_map(|raw| {
        Metric::ALL
            .iter()
            .zip(raw)
            .map(|(m, (up, target, weight))| {
                let mut s = if up { Spec::at_least(*m, target) } else { Spec::at_most(*m, target) };
                s.weight = weight;
                s
            })
            .collect()
    })
}


pub fn unit_point(space: &ParameterSpace) -> impl Strategy<Value = Point> {
    let s = space.clone();
    prop::collection::vec(0.0f64..=1.0, space.len()).prop_map(move |u| s.from_unit(&u))
}


pub fn valid_sizing() -> String {
    json!({ "parameters": testbench::two_stage_initial_point(), "rationale": "hand sizing" }).to_string()
}

pub fn check_round_trip(text: &str) -> Result<(), TestCaseError> {
    let first = parse_netlist(text).unwrap();
    let rendered = serialize_netlist(&first);
    let second = parse_netlist(&rendered).unwrap();
    prop_assert_eq!(&first, &second);
    prop_assert_eq!(serialize_netlist(&second), rendered);
    Ok(())
}

pub fn check_matching(groups: &[MatchingGroup], point: &Point) -> Result<(), TestCaseError> {
    let once = apply_matching(point, groups);
    prop_assert_eq!(apply_matching(&once, groups), once.clone());
    let s = space(8);
    if s.validate_groups(groups).is_ok() {
        let p = s.project(point, groups);
        prop_assert!(s.contains(&p));
        prop_assert_eq!(s.project(&p, groups), p);
    }
    Ok(())
}

pub fn check_fom_monotone(
    values: &BTreeMap<Metric, f64>,
    specs: &[Spec],
    which: usize,
    factor: f64,
) -> Result<(), TestCaseError> {
    let before = compute_fom(values, specs);
    prop_assert!((0.0..=1.0).contains(&before));
    let spec = &specs[which];
    let mut better = values.clone();
    let current = values.get(&spec.metric).copied().unwrap_or(spec.target / 1e3);
    let improved = match spec.direction {
        Direction::AtLeast => current * factor,
        Direction::AtMost => current / factor,
    };
    better.insert(spec.metric, improved);
    prop_assert!(compute_fom(&better, specs) >= before);
    Ok(())
}

/// Every DC solution the solver accepts must satisfy KCL to its own tolerance.
pub fn check_kcl(p: &Problem, point: &Point) -> Result<(), TestCaseError> {
    let bound = agentsize_core::netlist::bind_parameters(&p.circuit, &p.space, point).unwrap();
    let opts = DcOptions::default();
    if let Ok(dc) = solve_dc(&bound, &p.models, &opts) {
        let r = kcl_residual(&bound, &p.models, &dc).unwrap();
        prop_assert!(r <= opts.newton_tol, "residual {r:e}");
    }
    Ok(())
}

pub fn check_schema_ladder(first_valid: usize) -> Result<(), TestCaseError> {
    let p = testbench::two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)]);
    let reply = |i: usize| if i == first_valid { valid_sizing() } else { format!("reply {i}: no JSON here") };
    let mut calls = 0;
    let out = enforce_schema(reply(0), SchemaId::Sizing, &p, 3, |attempt, violation| {
        calls += 1;
        assert!(!violation.is_empty());
        Ok(reply(attempt - 1))
    });
    match out {
        Ok((_, attempts)) => {
            prop_assert!(first_valid < 3);
            prop_assert_eq!(attempts, first_valid + 1);
            prop_assert_eq!(calls, first_valid);
        }
        Err(EnforceError::Failure(f)) => {
            prop_assert!(first_valid >= 3);
            prop_assert_eq!(f.attempts.len(), 3);
            prop_assert_eq!(calls, 2);
        }
        Err(e) => prop_assert!(false, "unexpected {e}"),
    }
    Ok(())
}

/// Wildcard entries stand in for whatever agent is asking, so the same
/// script exercises the ladder at any depth.
pub fn check_wildcard_ladder(bad: usize) -> Result<(), TestCaseError> {
    let p = testbench::two_stage_problem(vec![Spec::at_least(Metric::GainDb, 60.0)]);
    let goals: serde_json::Map<String, serde_json::Value> =
        p.circuit.mosfets().map(|d| (d.id.clone(), json!("saturation"))).collect();
    let entry = |agent: &str, response: serde_json::Value, repeat: usize| ScriptEntry {
        agent: agent.into(),
        response,
        repeat,
        note: None,
    };
    let mut entries = vec![
        entry("*", json!({ "explanation": "two-stage opamp" }), 1),
        entry("*", json!({ "groups": [] }), 1),
        entry("*", json!({ "goals": goals }), 1),
    ];
    if bad > 0 {
        entries.push(entry("*", json!("W1 should be larger"), bad));
    }
    entries.push(entry("*", serde_json::from_str(&valid_sizing()).unwrap(), 1));
    let backend = ScriptedBackend::new(Scenario { entries });
    let mut trace = Trace::in_memory().with_clock(|| 0);
    let cfg = WorkflowConfig { fallback_point: Some(testbench::two_stage_initial_point()), ..Default::default() };
    let out = run_workflow(p, testbench::TWO_STAGE_NETLIST.into(), cfg, &backend, &mut trace).unwrap();
    let retries = trace.events().iter().filter(|e| e.kind == EventKind::SchemaRetry).count();
    prop_assert_eq!(retries, bad.min(3));
    let used = 3 + bad.min(3) + usize::from(bad < 3);
    prop_assert_eq!(out.budgets.llm_calls, used as u64);
    prop_assert_eq!(backend.remaining(), bad + 4 - used);
    let gave_up = trace.events().iter().any(|e| e.kind == EventKind::Warning && e.actor == "Initial Designer");
    prop_assert_eq!(gave_up, bad >= 3);
    Ok(())
}
