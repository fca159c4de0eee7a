//! Reference circuits shipped with the repository: model cards, the
//! two-stage Miller opamp and the folded-cascode opamp with their
//! parameter spaces.

use std::path::PathBuf;

use crate::metrics::Spec;
use crate::netlist::{bind_parameters, parse_netlist, Circuit, MatchingGroup, ParamEntry, ParameterSpace, Point, Scale};
use crate::pipeline::{Analysis, Problem, SlewBench};
use crate::simulator::{AcGrid, DcOptions, ModelSet, MosKind, MosModelCard};

pub const TWO_STAGE_NETLIST: &str = include_str!("../../../circuits/two_stage/two_stage.sp");
pub const TWO_STAGE_FOLLOWER_NETLIST: &str = include_str!("../../../circuits/two_stage/two_stage_follower.sp");
pub const FOLDED_CASCODE_NETLIST: &str = include_str!("../../../circuits/folded_cascode/folded_cascode.sp");
pub const FOLDED_CASCODE_FOLLOWER_NETLIST: &str =
    include_str!("../../../circuits/folded_cascode/folded_cascode_follower.sp");

pub fn two_stage_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../circuits/two_stage/two_stage.sp")
}

/// Square-law cards used by every bundled circuit.
pub fn models() -> ModelSet {
    let mut m = ModelSet::new();
    m.insert(
        "NMOS".into(),
        MosModelCard { kind: MosKind::Nmos, vth: 0.45, kprime: 280e-6, lambda: 0.08, cox_area: 8.5e-3 },
    );
    m.insert(
        "PMOS".into(),
        MosModelCard { kind: MosKind::Pmos, vth: 0.45, kprime: 70e-6, lambda: 0.1, cox_area: 8.5e-3 },
    );
    m
}

fn log_entry(name: &str, lo: f64, hi: f64, unit: &str) -> ParamEntry {
    ParamEntry { name: name.into(), lo, hi, unit: unit.into(), scale: Scale::Log }
}

pub fn two_stage() -> Circuit {
    parse_netlist(TWO_STAGE_NETLIST).expect("bundled netlist parses")
}

pub fn two_stage_space() -> ParameterSpace {
    let mut entries = Vec::new();
    for w in ["W1", "W2", "W3", "W4", "W5", "W6", "W7"] {
        entries.push(log_entry(w, 0.5e-6, 100e-6, "m"));
    }
    for l in ["L1", "L3", "L6", "LB"] {
        entries.push(log_entry(l, 0.18e-6, 2e-6, "m"));
    }
    entries.push(log_entry("CC", 0.1e-12, 10e-12, "F"));
    ParameterSpace::new(entries).expect("bundled space is valid")
}

/// A hand-sized starting point with every device in saturation.
pub fn two_stage_initial_point() -> Point {
    [
        ("W1", 10e-6),
        ("W2", 10e-6),
        ("L1", 0.5e-6),
        ("W3", 10e-6),
        ("W4", 10e-6),
        ("L3", 0.5e-6),
        ("W5", 8e-6),
        ("W6", 50e-6),
        ("L6", 0.5e-6),
        ("W7", 20e-6),
        ("LB", 1e-6),
        ("CC", 1e-12),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

pub fn two_stage_bound() -> Circuit {
    bind_parameters(&two_stage(), &two_stage_space(), &two_stage_initial_point()).expect("initial point binds")
}

/// Unity-gain step from 0.6 V to 1.2 V on the follower testbench.
pub fn two_stage_slew_bench() -> SlewBench {
    SlewBench {
        circuit: parse_netlist(TWO_STAGE_FOLLOWER_NETLIST).expect("bundled netlist parses"),
        source: "VIN".into(),
        v_low: 0.6,
        v_high: 1.2,
        t_stop: 100e-9,
        dt: 0.25e-9,
        output_net: "out".into(),
    }
}

pub fn two_stage_problem(specs: Vec<Spec>) -> Problem {
    Problem {
        circuit: two_stage(),
        models: models(),
        space: two_stage_space(),
        matching: Vec::new(),
        specs,
        analysis: Analysis {
            input_source: "VIN".into(),
            output_net: "out".into(),
            grid: AcGrid::default(),
            slew: Some(two_stage_slew_bench()),
        },
        dc_options: DcOptions::default(),
    }
}

pub fn folded_cascode() -> Circuit {
    parse_netlist(FOLDED_CASCODE_NETLIST).expect("bundled netlist parses")
}

pub fn folded_cascode_space() -> ParameterSpace {
    let mut entries = Vec::new();
    for w in ["W0", "W1", "W2", "W3", "W4", "W5", "W6", "W7", "W8", "W9", "W10"] {
        entries.push(log_entry(w, 0.5e-6, 100e-6, "m"));
    }
    for l in ["L0", "L1", "L3", "L5", "L7", "L9"] {
        entries.push(log_entry(l, 0.18e-6, 2e-6, "m"));
    }
    ParameterSpace::new(entries).expect("bundled space is valid")
}

/// Pair and mirror widths that must stay equal.
pub fn folded_cascode_matching() -> Vec<MatchingGroup> {
    [["W1", "W2"], ["W3", "W4"], ["W5", "W6"], ["W7", "W8"], ["W9", "W10"]]
        .iter()
        .map(|g| MatchingGroup::equal(g))
        .collect()
}

/// A hand-sized starting point with every device in saturation.
pub fn folded_cascode_initial_point() -> Point {
    [
        ("W0", 8e-6),
        ("L0", 1e-6),
        ("W1", 10e-6),
        ("W2", 10e-6),
        ("L1", 0.5e-6),
        ("W3", 10e-6),
        ("W4", 10e-6),
        ("L3", 1e-6),
        ("W5", 10e-6),
        ("W6", 10e-6),
        ("L5", 0.5e-6),
        ("W7", 4e-6),
        ("W8", 4e-6),
        ("L7", 0.5e-6),
        ("W9", 4e-6),
        ("W10", 4e-6),
        ("L9", 1e-6),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Unity-gain step from 0.7 V to 1.1 V on the follower testbench.
pub fn folded_cascode_slew_bench() -> SlewBench {
    SlewBench {
        circuit: parse_netlist(FOLDED_CASCODE_FOLLOWER_NETLIST).expect("bundled netlist parses"),
        source: "VIN".into(),
        v_low: 0.7,
        v_high: 1.1,
        t_stop: 100e-9,
        dt: 0.25e-9,
        output_net: "out".into(),
    }
}

pub fn folded_cascode_problem(specs: Vec<Spec>) -> Problem {
    Problem {
        circuit: folded_cascode(),
        models: models(),
        space: folded_cascode_space(),
        matching: Vec::new(),
        specs,
        analysis: Analysis {
            input_source: "VIN".into(),
            output_net: "out".into(),
            grid: AcGrid::default(),
            slew: Some(folded_cascode_slew_bench()),
        },
        dc_options: DcOptions::default(),
    }
}
