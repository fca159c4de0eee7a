use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use agentsize_core::metrics::unwrapped_phase_deg;
use agentsize_core::netlist::{parse_netlist, substitute_parameters, DeviceKind, Slot};
use agentsize_core::optimizer::{optimize, Algorithm, OptimizerRequest};
use agentsize_core::orchestrator::{run_workflow, RunStatus};
use agentsize_core::simulator::{solve_ac, solve_dc, solve_transient, AcGrid, DcOptions, ModelSet, Stimulus};
use agentsize_core::testbench;
use agentsize_core::trace::{fom_series_csv, read_events, render_report, Trace};
use anyhow::{bail, Context, Result};
use serde_json::json;

use crate::config::{load_config, parse_assignments};

/// Outcome of a command that can finish with unmet specs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    SpecsMet,
    Incomplete,
}

impl Finish {
    pub fn exit_code(self) -> i32 {
        match self {
            Finish::SpecsMet => 0,
            Finish::Incomplete => 2,
        }
    }
}

fn output_dir(default: PathBuf, over: Option<&Path>) -> Result<PathBuf> {
    let dir = over.map(Path::to_path_buf).unwrap_or(default);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Full agent workflow. Writes `trace.ndjson`, `report.md`, `fom_series.csv`
/// and, when anything was simulated, `best_point.json`.
pub fn cmd_run(config: &Path, out: Option<&Path>) -> Result<Finish> {
    let cfg = load_config(config)?;
    let backend = cfg.backend()?;
    let dir = output_dir(cfg.output_dir.clone(), out)?;
    let mut trace = Trace::to_file(&dir.join("trace.ndjson"))?;
    let result = run_workflow(cfg.problem.clone(), cfg.netlist_text.clone(), cfg.workflow_config(), &*backend, &mut trace);

    // the report is useful even when the run aborted
    write(&dir, "report.md", &render_report(trace.events()))?;
    write(&dir, "fom_series.csv", &fom_series_csv(trace.events()))?;
    let outcome = result?;
    if let Some(best) = &outcome.best {
        let doc = json!({
            "status": if outcome.status == RunStatus::Complete { "complete" } else { "incomplete" },
            "fom": best.fom(),
            "point": best.point,
            "metrics": best.report.as_ref().map(|r| &r.values),
            "source": best.source,
            "budgets": outcome.budgets,
        });
        write(&dir, "best_point.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    }
    Ok(match outcome.status {
        RunStatus::Complete => Finish::SpecsMet,
        RunStatus::Incomplete => Finish::Incomplete,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Analysis {
    Op,
    Ac,
    Tran,
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub netlist: PathBuf,
    pub params: Vec<String>,
    pub analysis: Analysis,
    /// TOML table of model cards; the bundled cards when absent.
    pub models: Option<PathBuf>,
    pub input: Option<String>,
    pub output: String,
    pub grid: AcGrid,
    pub t_stop: f64,
    pub dt: f64,
    /// `SOURCE=from:to`, applied one step into the run.
    pub step: Option<String>,
    pub probes: Vec<String>,
}

fn load_models(path: Option<&Path>) -> Result<ModelSet> {
    match path {
        None => Ok(testbench::models()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let models: ModelSet = toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
            for (name, card) in &models {
                card.validate().map_err(|m| anyhow::anyhow!("models.{name}: {m}"))?;
            }
            Ok(models)
        }
    }
}

/// One analysis on a netlist; returns the table printed on stdout.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<String> {
    let text = fs::read_to_string(&args.netlist).with_context(|| format!("reading {}", args.netlist.display()))?;
    let circuit = parse_netlist(&text).with_context(|| format!("parsing {}", args.netlist.display()))?;
    let params = parse_assignments(&args.params)?;
    let circuit = substitute_parameters(&circuit, &params)?;
    let models = load_models(args.models.as_deref())?;
    let opts = DcOptions::default();
    let dc = solve_dc(&circuit, &models, &opts)?;
    let mut out = String::new();
    match args.analysis {
        Analysis::Op => {
            out.push_str("node,voltage_v\n");
            for (net, v) in &dc.node_voltages {
                let _ = writeln!(out, "{net},{v:.9}");
            }
            if !dc.transistor_ops.is_empty() {
                out.push_str("\ndevice,region,id_a,vgs_v,vds_v,gm_s,gds_s\n");
                for (id, op) in &dc.transistor_ops {
                    let region = format!("{:?}", op.region).to_lowercase();
                    let _ = writeln!(
                        out,
                        "{id},{region},{:e},{:.6},{:.6},{:e},{:e}",
                        op.id_a, op.vgs_v, op.vds_v, op.gm_s, op.gds_s
                    );
                }
            }
        }
        Analysis::Ac => {
            let input = match &args.input {
                Some(s) => s.clone(),
                None => circuit
                    .devices
                    .iter()
                    .find(|d| matches!(d.kind, DeviceKind::VSource | DeviceKind::ISource) && d.num(Slot::Ac).is_some_and(|v| v != 0.0))
                    .map(|d| d.id.clone())
                    .context("no source with an AC value; pass --input")?,
            };
            let ac = solve_ac(&circuit, &models, &dc, &input, &args.output, &args.grid)?;
            let phase = unwrapped_phase_deg(&ac);
            out.push_str("freq_hz,gain_db,phase_deg\n");
            for ((f, h), p) in ac.freqs_hz.iter().zip(&ac.transfer).zip(&phase) {
                let _ = writeln!(out, "{f:e},{:.6},{p:.4}", 20.0 * h.norm().log10());
            }
        }
        Analysis::Tran => {
            let stim = match &args.step {
                None => Stimulus { source: String::new(), points: Vec::new() },
                Some(s) => {
                    let (src, levels) = s.split_once('=').context("--step expects SOURCE=from:to")?;
                    let (a, b) = levels.split_once(':').context("--step expects SOURCE=from:to")?;
                    let parse = |v: &str| agentsize_core::netlist::parse_si_value(v.trim()).with_context(|| format!("bad level '{v}'"));
                    Stimulus { source: src.trim().to_string(), points: vec![(0.0, parse(a)?), (args.dt, parse(b)?)] }
                }
            };
            // start from the pre-step level so the step is a real edge
            let dc = match stim.points.first() {
                Some(&(_, v0)) => {
                    let mut c = circuit.clone();
                    let d = c.devices.iter_mut().find(|d| d.id.eq_ignore_ascii_case(&stim.source)).with_context(|| format!("unknown source '{}'", stim.source))?;
                    d.values.insert(Slot::Dc, agentsize_core::netlist::Value::Num(v0));
                    solve_dc(&c, &models, &opts)?
                }
                None => dc,
            };
            let probes: Vec<&str> = args.probes.iter().map(String::as_str).collect();
            let tr = solve_transient(&circuit, &models, &dc, &stim, args.t_stop, args.dt, &probes)?;
            let nets: Vec<&String> = tr.node_voltages.keys().collect();
            out.push_str("time_s");
            for n in &nets {
                let _ = write!(out, ",{n}");
            }
            out.push('\n');
            for (i, t) in tr.times_s.iter().enumerate() {
                let _ = write!(out, "{t:e}");
                for n in &nets {
                    let _ = write!(out, ",{:.9}", tr.node_voltages[*n][i]);
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OptimizeSummary {
    pub finish: Finish,
    pub best_fom: f64,
    pub evaluations: usize,
    pub output_dir: PathBuf,
}

/// Optimizer alone, no agents. Writes `best_point.json` and `fom_series.csv`.
pub fn cmd_optimize(config: &Path, algorithm: Algorithm, budget: usize, out: Option<&Path>) -> Result<OptimizeSummary> {
    if budget == 0 {
        bail!("--budget: must be positive");
    }
    let cfg = load_config(config)?;
    let problem = &cfg.problem;
    let mut req = OptimizerRequest::new(problem.space.clone(), algorithm, budget, cfg.raw.seed);
    req.matching = problem.matching.clone();
    req.parallelism = cfg.raw.parallelism;
    let result = optimize(&req, problem.objective())?;
    let dir = output_dir(cfg.output_dir.clone(), out)?;

    let mut csv = String::from("sim,source,fom,best_fom\n");
    let mut best = f64::MIN;
    for (i, e) in result.evaluations.iter().enumerate() {
        best = best.max(e.fom);
        let _ = writeln!(csv, "{},{algorithm},{},{best}", i + 1, e.fom);
    }
    write(&dir, "fom_series.csv", &csv)?;
    let best_eval = result.evaluations.iter().find(|e| e.point == result.best_point);
    let doc = json!({
        "algorithm": algorithm.to_string(),
        "budget": budget,
        "seed": cfg.raw.seed,
        "fom": result.best_fom,
        "point": result.best_point,
        "metrics": best_eval.map(|e| &e.detail.report.values),
    });
    write(&dir, "best_point.json", &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    let finish = if result.best_fom >= 1.0 { Finish::SpecsMet } else { Finish::Incomplete };
    Ok(OptimizeSummary { finish, best_fom: result.best_fom, evaluations: result.evaluations.len(), output_dir: dir })
}

/// Render a report from an event log.
pub fn cmd_report(trace: &Path) -> Result<String> {
    let events = read_events(trace).with_context(|| format!("reading {}", trace.display()))?;
    Ok(render_report(&events))
}
