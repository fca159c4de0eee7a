//! Budgeted black-box optimizers over a [`ParameterSpace`]: Bayesian
//! optimization (GP + expected improvement) and differential evolution.
//!
//! Both work in the unit cube. Every candidate is projected onto bounds and
//! matching groups before the objective sees it, so evaluated points always
//! satisfy `apply_matching(p) == p`.

pub mod de;
pub mod ei;
pub mod gp;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netlist::{MatchingGroup, ParameterSpace, Point};
pub use de::{de_step, de_trials, Population};
pub use ei::expected_improvement;
pub use gp::{gp_fit, gp_predict, GpError, GpHyper, GpModel, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Bo,
    De,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Bo => "bo",
            Algorithm::De => "de",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bo" => Ok(Algorithm::Bo),
            "de" => Ok(Algorithm::De),
            other => Err(format!("unknown algorithm '{other}' (expected bo or de)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub point: Point,
    pub fom: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoSettings {
    pub hyper: GpHyper,
    pub candidates: usize,
    pub refine_starts: usize,
    pub refine_iters: usize,
}

impl Default for BoSettings {
    fn default() -> Self {
        BoSettings { hyper: GpHyper::default(), candidates: 1024, refine_starts: 4, refine_iters: 20 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeSettings {
    /// Defaults to `clamp(5 * dims, 8, 40)`.
    pub pop_size: Option<usize>,
    pub f_weight: f64,
    pub crossover_rate: f64,
}

impl Default for DeSettings {
    fn default() -> Self {
        DeSettings { pop_size: None, f_weight: 0.7, crossover_rate: 0.9 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerRequest {
    pub space: ParameterSpace,
    pub matching: Vec<MatchingGroup>,
    pub initial_points: Vec<Scored>,
    pub budget: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub parallelism: usize,
    pub bo: BoSettings,
    pub de: DeSettings,
}

impl OptimizerRequest {
    pub fn new(space: ParameterSpace, algorithm: Algorithm, budget: usize, seed: u64) -> Self {
        OptimizerRequest {
            space,
            matching: Vec::new(),
            initial_points: Vec::new(),
            budget,
            algorithm,
            seed,
            parallelism: 1,
            bo: BoSettings::default(),
            de: DeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation<T = ()> {
    pub point: Point,
    pub fom: f64,
    pub detail: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult<T = ()> {
    pub best_point: Point,
    pub best_fom: f64,
    /// In submission order, one per objective call.
    pub evaluations: Vec<Evaluation<T>>,
    pub budget_used: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("parameter space is empty")]
    EmptySpace,
    #[error("invalid matching groups: {0}")]
    Matching(String),
    #[error("surrogate model: {0}")]
    Gp(#[from] GpError),
}

/// Pick the `k` best-scoring history entries as warm-start points.
pub fn top_k(history: &[Scored], k: usize) -> Vec<Scored> {
    let mut v: Vec<Scored> = history.to_vec();
    v.sort_by(|a, b| b.fom.total_cmp(&a.fom));
    v.truncate(k);
    v
}

/// Evaluate points with up to `parallelism` threads; results keep input order.
pub fn evaluate_batch<T, F>(points: &[Point], objective: &F, parallelism: usize) -> Vec<(f64, T)>
where
    T: Send,
    F: Fn(&Point) -> (f64, T) + Sync,
{
    let sanitize = |(f, t): (f64, T)| (if f.is_finite() { f } else { 0.0 }, t);
    let threads = parallelism.max(1).min(points.len());
    if threads <= 1 {
        return points.iter().map(|p| sanitize(objective(p))).collect();
    }
    let chunk = points.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = points
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|p| sanitize(objective(p))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("objective panicked")).collect()
    })
}

/// Bookkeeping shared by the algorithms: projection, budget and history.
struct Run<'a, T, F> {
    req: &'a OptimizerRequest,
    objective: &'a F,
    evaluations: Vec<Evaluation<T>>,
}

impl<'a, T: Send, F: Fn(&Point) -> (f64, T) + Sync> Run<'a, T, F> {
    fn remaining(&self) -> usize {
        self.req.budget - self.evaluations.len()
    }

    fn project_unit(&self, u: &[f64]) -> (Point, Vec<f64>) {
        let p = self.req.space.project(&self.req.space.from_unit(u), &self.req.matching);
        let u = self.req.space.to_unit(&p);
        (p, u)
    }

    /// Evaluate (at most `remaining()` of) the unit vectors; returns the
    /// projected vectors with their scores.
    fn eval_units(&mut self, units: &[Vec<f64>]) -> Vec<(Vec<f64>, f64)> {
        let take = units.len().min(self.remaining());
        let (points, projected): (Vec<Point>, Vec<Vec<f64>>) =
            units[..take].iter().map(|u| self.project_unit(u)).unzip();
        let scores = evaluate_batch(&points, self.objective, self.req.parallelism);
        let mut out = Vec::with_capacity(take);
        for ((point, u), (fom, detail)) in points.into_iter().zip(projected).zip(scores) {
            out.push((u, fom));
            self.evaluations.push(Evaluation { point, fom, detail });
        }
        out
    }

    fn initial_units(&self) -> Vec<(Vec<f64>, f64)> {
        self.req
            .initial_points
            .iter()
            .map(|s| {
                let p = self.req.space.project(&s.point, &self.req.matching);
                (self.req.space.to_unit(&p), s.fom)
            })
            .collect()
    }

    fn finish(self) -> OptimizerResult<T> {
        let mut best: Option<(Point, f64)> = None;
        let candidates = self
            .req
            .initial_points
            .iter()
            .map(|s| (self.req.space.project(&s.point, &self.req.matching), s.fom))
            .chain(self.evaluations.iter().map(|e| (e.point.clone(), e.fom)));
        for (p, f) in candidates {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((p, f));
            }
        }
        let (best_point, best_fom) = best.unwrap_or_else(|| (self.req.space.center(), 0.0));
        let budget_used = self.evaluations.len();
        OptimizerResult { best_point, best_fom, evaluations: self.evaluations, budget_used }
    }
}

fn check(req: &OptimizerRequest) -> Result<(), OptimizerError> {
    if req.budget == 0 {
        return Err(OptimizerError::ZeroBudget);
    }
    if req.space.is_empty() {
        return Err(OptimizerError::EmptySpace);
    }
    req.space.validate_groups(&req.matching).map_err(|e| OptimizerError::Matching(e.to_string()))
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// Run the requested algorithm. The objective returns a figure of merit
/// (non-finite values score 0) plus a caller-defined detail record.
pub fn optimize<T, F>(req: &OptimizerRequest, objective: F) -> Result<OptimizerResult<T>, OptimizerError>
where
    T: Send,
    F: Fn(&Point) -> (f64, T) + Sync,
{
    check(req)?;
    let mut run = Run { req, objective: &objective, evaluations: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    match req.algorithm {
        Algorithm::Bo => run_bo(&mut run, &mut rng)?,
        Algorithm::De => run_de(&mut run, &mut rng),
    }
    Ok(run.finish())
}

/// Uniform random search with the same projection and accounting; the
/// baseline the model-based methods are compared against.
pub fn random_search<T, F>(req: &OptimizerRequest, objective: F) -> Result<OptimizerResult<T>, OptimizerError>
where
    T: Send,
    F: Fn(&Point) -> (f64, T) + Sync,
{
    check(req)?;
    let mut run = Run { req, objective: &objective, evaluations: Vec::new() };
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let d = req.space.len();
    let units: Vec<Vec<f64>> = (0..req.budget).map(|_| random_unit(&mut rng, d)).collect();
    run.eval_units(&units);
    Ok(run.finish())
}

fn run_bo<T: Send, F: Fn(&Point) -> (f64, T) + Sync>(
    run: &mut Run<'_, T, F>,
    rng: &mut ChaCha8Rng,
) -> Result<(), OptimizerError> {
    let d = run.req.space.len();
    let s = &run.req.bo;
    let mut data = run.initial_units();
    let n_random = (d + 1).saturating_sub(data.len()).max(1).min(run.remaining());
    let seeds: Vec<Vec<f64>> = (0..n_random).map(|_| random_unit(rng, d)).collect();
    data.extend(run.eval_units(&seeds));

    while run.remaining() > 0 {
        let xs: Vec<Vec<f64>> = data.iter().map(|(x, _)| x.clone()).collect();
        let ys = standardize(&data.iter().map(|(_, y)| *y).collect::<Vec<f64>>());
        let model = gp_fit(&xs, &ys, s.hyper)?;
        let best = ys.iter().copied().fold(f64::MIN, f64::max);
        let acq = |x: &[f64]| {
            let p = model.predict(x);
            expected_improvement(p.mean, p.var, best)
        };

        let mut pool: Vec<(Vec<f64>, f64)> = (0..s.candidates)
            .map(|_| {
                let x = random_unit(rng, d);
                let a = acq(&x);
                (x, a)
            })
            .collect();
        pool.sort_by(|a, b| b.1.total_cmp(&a.1));
        pool.truncate(s.refine_starts.max(1));
        // uniform candidates almost never land near the incumbent in a few dimensions
        if let Some((x, _)) = data.iter().max_by(|a, b| a.1.total_cmp(&b.1)) {
            let a = acq(x);
            pool.push((x.clone(), a));
        }
        let mut chosen: Option<(Vec<f64>, f64)> = None;
        for (x, a) in pool {
            let refined = coordinate_ascent(x, a, s.refine_iters, &acq);
            if chosen.as_ref().is_none_or(|c| refined.1 > c.1) {
                chosen = Some(refined);
            }
        }
        let mut next = chosen.map(|c| c.0).unwrap_or_else(|| random_unit(rng, d));
        let (_, projected) = run.project_unit(&next);
        let duplicate = xs.iter().any(|x| x.iter().zip(&projected).all(|(a, b)| (a - b).abs() < 1e-9));
        if duplicate {
            next = random_unit(rng, d);
        }
        data.extend(run.eval_units(&[next]));
    }
    Ok(())
}

/// Zero mean and unit variance, so the fixed unit signal variance matches the
/// spread of whatever is being optimized.
fn standardize(ys: &[f64]) -> Vec<f64> {
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    ys.iter().map(|y| (y - mean) / sd).collect()
}

/// Derivative-free refinement: try +-step along each axis, halve the step
/// after a sweep without improvement.
fn coordinate_ascent(mut x: Vec<f64>, mut fx: f64, iters: usize, f: &impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut step = 0.05;
    for _ in 0..iters {
        let mut improved = false;
        for j in 0..x.len() {
            for dir in [1.0, -1.0] {
                let old = x[j];
                x[j] = (old + dir * step).clamp(0.0, 1.0);
                let v = f(&x);
                if v > fx {
                    fx = v;
                    improved = true;
                } else {
                    x[j] = old;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

fn run_de<T: Send, F: Fn(&Point) -> (f64, T) + Sync>(run: &mut Run<'_, T, F>, rng: &mut ChaCha8Rng) {
    let d = run.req.space.len();
    let s = run.req.de.clone();
    let np = s.pop_size.unwrap_or((5 * d).clamp(8, 40)).max(4);

    let mut seeded = run.initial_units();
    seeded.sort_by(|a, b| b.1.total_cmp(&a.1));
    seeded.truncate(np);
    let fresh: Vec<Vec<f64>> = (seeded.len()..np).map(|_| random_unit(rng, d)).collect();
    seeded.extend(run.eval_units(&fresh));
    if seeded.len() < 4 {
        return;
    }
    let (members, fitness) = seeded.into_iter().unzip();
    let mut pop = Population { members, fitness };
    while run.remaining() > 0 {
        let trials = de_trials(&pop, s.f_weight, s.crossover_rate, rng);
        let scored = run.eval_units(&trials);
        de::select(&mut pop, scored);
    }
}
