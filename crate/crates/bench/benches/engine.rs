use std::hint::black_box;

use agentsize_core::metrics::{Metric, Spec};
use agentsize_core::netlist::{bind_parameters, parse_netlist};
use agentsize_core::optimizer::gp::{gp_fit, GpHyper};
use agentsize_core::simulator::{solve_ac, solve_dc, AcGrid, DcOptions};
use agentsize_core::testbench;
use criterion::{criterion_group, criterion_main, Criterion};

fn simulator(c: &mut Criterion) {
    let models = testbench::models();
    let opts = DcOptions::default();
    let bound = testbench::two_stage_bound();
    let dc = solve_dc(&bound, &models, &opts).unwrap();

    c.bench_function("parse two-stage netlist", |b| b.iter(|| parse_netlist(black_box(testbench::TWO_STAGE_NETLIST)).unwrap()));
    c.bench_function("dc two-stage", |b| b.iter(|| solve_dc(black_box(&bound), &models, &opts).unwrap()));
    c.bench_function("ac two-stage 200 points", |b| {
        b.iter(|| solve_ac(&bound, &models, black_box(&dc), "VIN", "out", &AcGrid::default()).unwrap())
    });

    let folded = testbench::folded_cascode();
    let point = testbench::folded_cascode_initial_point();
    let space = testbench::folded_cascode_space();
    let folded = bind_parameters(&folded, &space, &point).unwrap();
    c.bench_function("dc folded cascode", |b| b.iter(|| solve_dc(black_box(&folded), &models, &opts).unwrap()));
}

fn pipeline(c: &mut Criterion) {
    let specs = vec![Spec::at_least(Metric::GainDb, 75.0), Spec::at_most(Metric::PowerW, 0.5e-3)];
    let problem = testbench::two_stage_problem(specs);
    let point = testbench::two_stage_initial_point();
    c.bench_function("full_sim two-stage", |b| b.iter(|| problem.full_sim(black_box(&point))));
}

fn optimizer(c: &mut Criterion) {
    let xs: Vec<Vec<f64>> = (0..60).map(|i| (0..8).map(|j| ((i * 7 + j * 13) % 61) as f64 / 61.0).collect()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| x.iter().map(|v| (v - 0.4).powi(2)).sum()).collect();
    c.bench_function("gp fit 60x8", |b| b.iter(|| gp_fit(black_box(&xs), &ys, GpHyper::default()).unwrap()));
}

criterion_group!(benches, simulator, pipeline, optimizer);
criterion_main!(benches);
