//! Circuit evaluation: DC operating point, small-signal AC and
//! backward-Euler transient on a shared MNA formulation.
//!
//! Devices use a level-1 square-law model (see [`mosfet`]). The small-signal
//! matrix used by [`solve_ac`] is the DC Jacobian at the operating point plus
//! `jwC`, so gm/gds linearization is exactly the Newton linearization.

mod linalg;
mod mna;
pub mod mosfet;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{parse_netlist, Circuit, GROUND};
use linalg::Dense;
use mna::{Elem, LoadCtx, Mna};
pub use mosfet::{classify_region, MosKind, MosModelCard, Region};

/// Model cards keyed by the model name used in the netlist.
pub type ModelSet = BTreeMap<String, MosModelCard>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("DC did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },
    #[error("transient did not converge at t = {time:.6e} s (step {step})")]
    TransientNonConvergence { step: usize, time: f64 },
    #[error("singular matrix at unknown '{node}'")]
    SingularMatrix { node: String },
    #[error("device {device}: no model card named '{model}'")]
    UnknownModel { device: String, model: String },
    #[error("device {device}: {slot} is still a placeholder")]
    Unbound { device: String, slot: &'static str },
    #[error("no independent source named '{0}'")]
    UnknownSource(String),
    #[error("no net named '{0}'")]
    UnknownNet(String),
    #[error("invalid analysis setup: {0}")]
    InvalidSetup(String),
    #[error("netlist: {0}")]
    Netlist(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcOptions {
    pub newton_tol: f64,
    pub max_iters: usize,
    pub gmin: f64,
    pub source_steps: usize,
    /// Largest node-voltage change accepted per Newton step, V.
    pub max_step: f64,
}

impl Default for DcOptions {
    fn default() -> Self {
        Self { newton_tol: 1e-9, max_iters: 100, gmin: 1e-12, source_steps: 10, max_step: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransistorOp {
    /// Current into the drain terminal, A (negative for a conducting PMOS).
    pub id_a: f64,
    pub vgs_v: f64,
    pub vds_v: f64,
    pub gm_s: f64,
    pub gds_s: f64,
    pub region: Region,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DcSolution {
    pub node_voltages: BTreeMap<String, f64>,
    /// Branch current of each voltage source, flowing from n+ through the source to n-.
    pub branch_currents: BTreeMap<String, f64>,
    /// DC value of each voltage source, V.
    pub source_voltages: BTreeMap<String, f64>,
    pub transistor_ops: BTreeMap<String, TransistorOp>,
    /// Infinity norm of the KCL residual at the accepted solution.
    pub residual: f64,
    pub iterations: usize,
}

impl DcSolution {
    pub fn voltage(&self, net: &str) -> Option<f64> {
        if net == GROUND {
            Some(0.0)
        } else {
            self.node_voltages.get(net).copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcGrid {
    pub f_lo: f64,
    pub f_hi: f64,
    pub pts_per_decade: usize,
}

impl Default for AcGrid {
    fn default() -> Self {
        Self { f_lo: 1.0, f_hi: 1e10, pts_per_decade: 20 }
    }
}

impl AcGrid {
    pub const MIN_PTS_PER_DECADE: usize = 20;

    pub fn frequencies(&self) -> Result<Vec<f64>, SimError> {
        if !(self.f_lo > 0.0 && self.f_lo.is_finite() && self.f_hi.is_finite()) || self.f_hi < self.f_lo {
            return Err(SimError::InvalidSetup(format!(
                "frequency range [{}, {}] is not a positive interval",
                self.f_lo, self.f_hi
            )));
        }
        if self.pts_per_decade < Self::MIN_PTS_PER_DECADE {
            return Err(SimError::InvalidSetup(format!(
                "need at least {} points per decade",
                Self::MIN_PTS_PER_DECADE
            )));
        }
        if self.f_hi == self.f_lo {
            return Ok(vec![self.f_lo]);
        }
        let decades = (self.f_hi / self.f_lo).log10();
        let n = (decades * self.pts_per_decade as f64 - 1e-9).ceil() as usize;
        let mut f: Vec<f64> = (0..=n)
            .map(|k| self.f_lo * 10f64.powf(decades * k as f64 / n as f64))
            .collect();
        f[n] = self.f_hi;
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcSweep {
    pub freqs_hz: Vec<f64>,
    /// V(output) divided by the AC magnitude of the input source.
    pub transfer: Vec<Complex64>,
    /// Raw output phasor V(output).
    pub response: Vec<Complex64>,
    pub input_magnitude: f64,
}

/// Piecewise-linear override for one independent source. Before the first
/// breakpoint the first value holds; after the last, the last value holds.
/// No breakpoints means the source keeps its DC value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub source: String,
    pub points: Vec<(f64, f64)>,
}

impl Stimulus {
    pub fn step(source: &str, from: f64, to: f64, at: f64) -> Self {
        Self { source: source.into(), points: vec![(at, from), (at + 1e-15, to)] }
    }

    pub fn value_at(&self, t: f64) -> Option<f64> {
        let pts = &self.points;
        let first = pts.first()?;
        if t <= first.0 {
            return Some(first.1);
        }
        for w in pts.windows(2) {
            let ((t0, v0), (t1, v1)) = (w[0], w[1]);
            if t <= t1 {
                if t1 <= t0 {
                    return Some(v1);
                }
                return Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0));
            }
        }
        pts.last().map(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientTrace {
    pub times_s: Vec<f64>,
    pub node_voltages: BTreeMap<String, Vec<f64>>,
}

fn singular(mna: &Mna, k: usize) -> SimError {
    let node = if k < mna.n_nodes {
        mna.nets[k].clone()
    } else {
        let mut b = mna.n_nodes;
        let mut name = format!("branch{k}");
        for (id, e) in mna.ids.iter().zip(&mna.elems) {
            if let Elem::VSource { .. } = e {
                if b == k {
                    name = format!("I({id})");
                }
                b += 1;
            }
        }
        name
    };
    SimError::SingularMatrix { node }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

enum NewtonOutcome {
    Converged { iterations: usize, residual: f64 },
    Failed { iterations: usize, residual: f64 },
}

/// Damped Newton on `F(x) = 0`. Converges on residual, or (when
/// `accept_stall`) on an update at round-off level.
fn newton(
    mna: &Mna,
    x: &mut [f64],
    ctx: &LoadCtx,
    opts: &DcOptions,
    accept_stall: bool,
) -> Result<NewtonOutcome, SimError> {
    let n = x.len();
    let mut jac = Dense::<f64>::zeros(n);
    let mut f = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iters {
        mna.load(x, ctx, &mut jac, &mut f);
        residual = inf_norm(&f);
        if !residual.is_finite() {
            return Ok(NewtonOutcome::Failed { iterations: it, residual });
        }
        let small = residual <= opts.newton_tol;
        let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
        jac.solve_in_place(&mut dx).map_err(|k| singular(mna, k))?;
        let vmax = inf_norm(&dx[..mna.n_nodes]);
        let scale = if vmax > opts.max_step { opts.max_step / vmax } else { 1.0 };
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += scale * di;
        }
        if small {
            // one full step past the tolerance puts the solution at round-off
            mna.load(x, ctx, &mut jac, &mut f);
            let polished = inf_norm(&f);
            if polished <= opts.newton_tol {
                return Ok(NewtonOutcome::Converged { iterations: it + 1, residual: polished });
            }
            residual = polished;
            continue;
        }
        if accept_stall && scale == 1.0 && inf_norm(&dx) <= 1e-12 * (1.0 + inf_norm(x)) {
            mna.load(x, ctx, &mut jac, &mut f);
            return Ok(NewtonOutcome::Converged { iterations: it + 1, residual: inf_norm(&f) });
        }
    }
    mna.load(x, ctx, &mut jac, &mut f);
    let final_res = inf_norm(&f);
    if final_res <= opts.newton_tol {
        return Ok(NewtonOutcome::Converged { iterations: opts.max_iters, residual: final_res });
    }
    residual = residual.min(final_res);
    Ok(NewtonOutcome::Failed { iterations: opts.max_iters, residual })
}

fn dc_core(mna: &Mna, opts: &DcOptions, guess: Option<&[f64]>) -> Result<(Vec<f64>, f64, usize), SimError> {
    if let Some(k) = mna.floating_node() {
        return Err(singular(mna, k));
    }
    let n = mna.size();
    let start: Vec<f64> = guess.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    let plain = LoadCtx::default();
    let mut total = 0;

    // rung 1: plain Newton
    let mut x = start.clone();
    match newton(mna, &mut x, &plain, opts, false) {
        Ok(NewtonOutcome::Converged { iterations, residual }) => return Ok((x, residual, total + iterations)),
        Ok(NewtonOutcome::Failed { iterations, .. }) => total += iterations,
        Err(SimError::SingularMatrix { .. }) => {}
        Err(e) => return Err(e),
    }

    // rung 2: gmin stepping down to opts.gmin, then polish without shunts
    let mut x = start.clone();
    let mut ok = true;
    let mut g = 1e-3_f64.max(opts.gmin);
    loop {
        let ctx = LoadCtx { gmin: g, ..LoadCtx::default() };
        match newton(mna, &mut x, &ctx, opts, false)? {
            NewtonOutcome::Converged { iterations, .. } => total += iterations,
            NewtonOutcome::Failed { iterations, .. } => {
                total += iterations;
                ok = false;
                break;
            }
        }
        if g <= opts.gmin {
            break;
        }
        g = (g / 10.0).max(opts.gmin);
    }
    if ok {
        let mut polished = x.clone();
        if let Ok(NewtonOutcome::Converged { iterations, residual }) = newton(mna, &mut polished, &plain, opts, false) {
            return Ok((polished, residual, total + iterations));
        }
        // devices fully off can leave a node floating without the shunts
        let residual = plain_residual(mna, &x);
        if residual <= opts.newton_tol {
            return Ok((x, residual, total));
        }
    }

    // rung 3: source stepping with gmin shunts, then polish
    let mut x = vec![0.0; n];
    let steps = opts.source_steps.max(1);
    for k in 1..=steps {
        let ctx = LoadCtx { source_scale: k as f64 / steps as f64, gmin: opts.gmin, ..LoadCtx::default() };
        match newton(mna, &mut x, &ctx, opts, false)? {
            NewtonOutcome::Converged { iterations, .. } => total += iterations,
            NewtonOutcome::Failed { iterations, residual } => {
                return Err(SimError::NonConvergence { residual, iterations: total + iterations });
            }
        }
    }
    let mut polished = x.clone();
    match newton(mna, &mut polished, &plain, opts, false) {
        Ok(NewtonOutcome::Converged { iterations, residual }) => Ok((polished, residual, total + iterations)),
        outcome => {
            let residual = plain_residual(mna, &x);
            if residual <= opts.newton_tol {
                return Ok((x, residual, total));
            }
            match outcome {
                Ok(NewtonOutcome::Failed { iterations, residual }) => {
                    Err(SimError::NonConvergence { residual, iterations: total + iterations })
                }
                Err(e) => Err(e),
                Ok(NewtonOutcome::Converged { .. }) => unreachable!(),
            }
        }
    }
}

fn plain_residual(mna: &Mna, x: &[f64]) -> f64 {
    let n = x.len();
    let mut jac = Dense::<f64>::zeros(n);
    let mut f = vec![0.0; n];
    mna.load(x, &LoadCtx::default(), &mut jac, &mut f);
    inf_norm(&f)
}

fn package_dc(mna: &Mna, x: &[f64], residual: f64, iterations: usize) -> DcSolution {
    let v = |n: mna::Node| n.map_or(0.0, |i| x[i]);
    let node_voltages = mna.nets.iter().cloned().zip(x.iter().copied()).collect();
    let mut branch_currents = BTreeMap::new();
    let mut source_voltages = BTreeMap::new();
    let mut transistor_ops = BTreeMap::new();
    for (id, e) in mna.ids.iter().zip(&mna.elems) {
        match e {
            Elem::VSource { branch, dc, .. } => {
                branch_currents.insert(id.clone(), x[*branch]);
                source_voltages.insert(id.clone(), *dc);
            }
            Elem::Mosfet { d, g, s, card, w, l } => {
                let (vd, vg, vs) = (v(*d), v(*g), v(*s));
                let m = mosfet::evaluate(card, *w, *l, vd, vg, vs);
                let (vgs_eff, vds_eff) = mosfet::effective_bias(card, vd, vg, vs);
                let (_, gm, gds) = mosfet::small_signal(card, *w, *l, vgs_eff, vds_eff);
                transistor_ops.insert(
                    id.clone(),
                    TransistorOp {
                        id_a: m.ids,
                        vgs_v: vg - vs,
                        vds_v: vd - vs,
                        gm_s: gm,
                        gds_s: gds,
                        region: classify_region(vgs_eff, vds_eff, card.vth),
                    },
                );
            }
            _ => {}
        }
    }
    DcSolution { node_voltages, branch_currents, source_voltages, transistor_ops, residual, iterations }
}

/// DC operating point. Capacitors are open.
pub fn solve_dc(c: &Circuit, models: &ModelSet, opts: &DcOptions) -> Result<DcSolution, SimError> {
    let mna = Mna::build(c, models)?;
    let (x, residual, iterations) = dc_core(&mna, opts, None)?;
    Ok(package_dc(&mna, &x, residual, iterations))
}

fn dc_vector(mna: &Mna, dc: &DcSolution) -> Vec<f64> {
    let mut x = vec![0.0; mna.size()];
    for (i, net) in mna.nets.iter().enumerate() {
        x[i] = dc.node_voltages.get(net).copied().unwrap_or(0.0);
    }
    for (id, e) in mna.ids.iter().zip(&mna.elems) {
        if let Elem::VSource { branch, .. } = e {
            x[*branch] = dc.branch_currents.get(id).copied().unwrap_or(0.0);
        }
    }
    x
}

/// Small-signal frequency sweep around `dc`. Only `input_source` is excited,
/// with its netlist AC magnitude (1 when the netlist gives none).
pub fn solve_ac(
    c: &Circuit,
    models: &ModelSet,
    dc: &DcSolution,
    input_source: &str,
    output_net: &str,
    grid: &AcGrid,
) -> Result<AcSweep, SimError> {
    let mna = Mna::build(c, models)?;
    let src = mna.element_index(input_source).ok_or_else(|| SimError::UnknownSource(input_source.into()))?;
    let out = if output_net == GROUND {
        None
    } else {
        Some(mna.nets.iter().position(|n| n == output_net).ok_or_else(|| SimError::UnknownNet(output_net.into()))?)
    };
    let freqs = grid.frequencies()?;
    let n = mna.size();
    let x = dc_vector(&mna, dc);
    let mut jac = Dense::<f64>::zeros(n);
    let mut f = vec![0.0; n];
    mna.load(&x, &LoadCtx::default(), &mut jac, &mut f);
    let caps = mna.capacitance();

    let magnitude = match mna.elems[src] {
        Elem::VSource { ac, .. } | Elem::ISource { ac, .. } if ac != 0.0 => ac,
        _ => 1.0,
    };
    let mut rhs0 = vec![Complex64::new(0.0, 0.0); n];
    match mna.elems[src] {
        Elem::VSource { branch, .. } => rhs0[branch] = Complex64::new(magnitude, 0.0),
        Elem::ISource { p, n: m, .. } => {
            // source current leaves p and enters m; move to the right-hand side
            if let Some(p) = p {
                rhs0[p] -= magnitude;
            }
            if let Some(m) = m {
                rhs0[m] += magnitude;
            }
        }
        _ => unreachable!("element_index only returns sources"),
    }

    let mut transfer = Vec::with_capacity(freqs.len());
    let mut response = Vec::with_capacity(freqs.len());
    for &freq in &freqs {
        let omega = 2.0 * std::f64::consts::PI * freq;
        let mut a = Dense::<Complex64>::zeros(n);
        for (dst, src) in a.data.iter_mut().zip(&jac.data) {
            *dst = Complex64::new(*src, 0.0);
        }
        for &(p, m, cap) in &caps {
            mna::stamp_g(&mut a, p, m, Complex64::new(0.0, omega * cap));
        }
        let mut b = rhs0.clone();
        a.solve_in_place(&mut b).map_err(|k| singular(&mna, k))?;
        let vout = out.map_or(Complex64::new(0.0, 0.0), |i| b[i]);
        response.push(vout);
        transfer.push(vout / magnitude);
    }
    Ok(AcSweep { freqs_hz: freqs, transfer, response, input_magnitude: magnitude })
}

/// Backward-Euler transient from the DC solution on a uniform grid.
/// `probes` selects nets to record; empty records every net.
pub fn solve_transient(
    c: &Circuit,
    models: &ModelSet,
    dc: &DcSolution,
    stimulus: &Stimulus,
    t_stop: f64,
    dt: f64,
    probes: &[&str],
) -> Result<TransientTrace, SimError> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_stop >= dt) {
        return Err(SimError::InvalidSetup(format!("need dt > 0 and t_stop >= dt (dt={dt}, t_stop={t_stop})")));
    }
    let mna = Mna::build(c, models)?;
    let src = if stimulus.points.is_empty() {
        None
    } else {
        Some(mna.element_index(&stimulus.source).ok_or_else(|| SimError::UnknownSource(stimulus.source.clone()))?)
    };
    let selected: Vec<(String, Option<usize>)> = if probes.is_empty() {
        mna.nets.iter().enumerate().map(|(i, n)| (n.clone(), Some(i))).collect()
    } else {
        probes
            .iter()
            .map(|p| {
                if *p == GROUND {
                    Ok((p.to_string(), None))
                } else {
                    mna.nets
                        .iter()
                        .position(|n| n == p)
                        .map(|i| (p.to_string(), Some(i)))
                        .ok_or_else(|| SimError::UnknownNet(p.to_string()))
                }
            })
            .collect::<Result<_, _>>()?
    };

    let steps = (t_stop / dt).round().max(1.0) as usize;
    let opts = DcOptions::default();
    let mut x = dc_vector(&mna, dc);
    let mut times = Vec::with_capacity(steps + 1);
    let mut traces: Vec<Vec<f64>> = vec![Vec::with_capacity(steps + 1); selected.len()];
    let record = |x: &[f64], traces: &mut Vec<Vec<f64>>| {
        for (k, (_, idx)) in selected.iter().enumerate() {
            traces[k].push(idx.map_or(0.0, |i| x[i]));
        }
    };
    times.push(0.0);
    record(&x, &mut traces);

    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * dt;
        let t = k as f64 * dt;
        let mut ok = false;
        // retry a failed step as 4, then 16 sub-steps
        for subdiv in [1usize, 4, 16] {
            let h = (t - t_prev) / subdiv as f64;
            let mut trial = x.clone();
            let mut good = true;
            for j in 1..=subdiv {
                let tj = t_prev + h * j as f64;
                let prev = trial.clone();
                let ctx = LoadCtx {
                    companion: Some((&prev, h)),
                    source_override: src.zip(stimulus.value_at(tj)),
                    ..LoadCtx::default()
                };
                match newton(&mna, &mut trial, &ctx, &opts, true) {
                    Ok(NewtonOutcome::Converged { .. }) => {}
                    _ => {
                        good = false;
                        break;
                    }
                }
            }
            if good {
                x = trial;
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(SimError::TransientNonConvergence { step: k, time: t });
        }
        times.push(t);
        record(&x, &mut traces);
    }
    Ok(TransientTrace {
        times_s: times,
        node_voltages: selected.into_iter().map(|(n, _)| n).zip(traces).collect(),
    })
}

/// Boundary for an out-of-process simulator that consumes serialized netlists.
/// [`BuiltinSimulator`] implements it with the in-process engine.
pub trait ExternalSimulator: Send + Sync {
    fn operating_point(&self, netlist: &str) -> Result<DcSolution, SimError>;
    fn ac(&self, netlist: &str, input_source: &str, output_net: &str, grid: &AcGrid) -> Result<AcSweep, SimError>;
}

#[derive(Debug, Clone, Default)]
pub struct BuiltinSimulator {
    pub models: ModelSet,
    pub options: DcOptions,
}

impl BuiltinSimulator {
    fn parse(&self, netlist: &str) -> Result<Circuit, SimError> {
        let c = parse_netlist(netlist).map_err(|e| SimError::Netlist(e.to_string()))?;
        if !c.is_numeric() {
            return Err(SimError::Netlist(format!("unbound placeholders: {}", c.params.join(", "))));
        }
        Ok(c)
    }
}

impl ExternalSimulator for BuiltinSimulator {
    fn operating_point(&self, netlist: &str) -> Result<DcSolution, SimError> {
        solve_dc(&self.parse(netlist)?, &self.models, &self.options)
    }

    fn ac(&self, netlist: &str, input_source: &str, output_net: &str, grid: &AcGrid) -> Result<AcSweep, SimError> {
        let c = self.parse(netlist)?;
        let dc = solve_dc(&c, &self.models, &self.options)?;
        solve_ac(&c, &self.models, &dc, input_source, output_net, grid)
    }
}

/// KCL residual of `dc` against the circuit equations, independent of how it was found.
pub fn kcl_residual(c: &Circuit, models: &ModelSet, dc: &DcSolution) -> Result<f64, SimError> {
    let mna = Mna::build(c, models)?;
    let x = dc_vector(&mna, dc);
    let n = mna.size();
    let mut jac = Dense::<f64>::zeros(n);
    let mut f = vec![0.0; n];
    mna.load(&x, &LoadCtx::default(), &mut jac, &mut f);
    Ok(inf_norm(&f))
}
