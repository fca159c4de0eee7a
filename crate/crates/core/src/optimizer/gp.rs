//! Exact Gaussian-process regression with a squared-exponential kernel.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for GpHyper {
    fn default() -> Self {
        GpHyper { lengthscale: 0.2, signal_var: 1.0, noise_var: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("no training points")]
    Empty,
    #[error("training inputs have inconsistent dimensions")]
    Dimension,
    #[error("covariance not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub var: f64,
}

/// A fitted model. The prior mean is the mean of the training values.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyper,
    x: Vec<Vec<f64>>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    prior_mean: f64,
    pub jitter: f64,
}

const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn kernel(h: &GpHyper, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    h.signal_var * (-0.5 * d2 / (h.lengthscale * h.lengthscale)).exp()
}

pub fn gp_fit(points: &[Vec<f64>], values: &[f64], hyper: GpHyper) -> Result<GpModel, GpError> {
    let n = points.len();
    if n == 0 || values.len() != n {
        return Err(GpError::Empty);
    }
    let d = points[0].len();
    if points.iter().any(|p| p.len() != d) {
        return Err(GpError::Dimension);
    }
    let prior_mean = values.iter().sum::<f64>() / n as f64;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&hyper, &points[i], &points[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    for &jitter in &JITTER_LADDER {
        let mut a = k.clone();
        for i in 0..n {
            a[i * n + i] += hyper.noise_var + jitter;
        }
        if cholesky_in_place(&mut a, n) {
            let centered: Vec<f64> = values.iter().map(|y| y - prior_mean).collect();
            let alpha = chol_solve(&a, n, &centered);
            return Ok(GpModel { hyper, x: points.to_vec(), chol: a, alpha, prior_mean, jitter });
        }
    }
    Err(GpError::NotPositiveDefinite { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
}

impl GpModel {
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let n = self.x.len();
        let kx: Vec<f64> = self.x.iter().map(|xi| kernel(&self.hyper, xi, x)).collect();
        let mean = self.prior_mean + kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum::<f64>();
        let v = forward_sub(&self.chol, n, &kx);
        let var = self.hyper.signal_var - v.iter().map(|t| t * t).sum::<f64>();
        Prediction { mean, var: var.max(0.0) }
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn gp_predict(model: &GpModel, x: &[f64]) -> Prediction {
    model.predict(x)
}

/// In-place lower Cholesky; the strict upper triangle is left untouched.
/// Returns false when a pivot is not positive.
fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if !(s > 0.0) {
            return false;
        }
        let d = s.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn forward_sub(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = forward_sub(l, n, b);
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: direct inversion of the covariance.
    fn oracle(points: &[Vec<f64>], values: &[f64], h: GpHyper, x: &[f64]) -> (f64, f64) {
        let n = points.len();
        let m = values.iter().sum::<f64>() / n as f64;
        let k = DMatrix::from_fn(n, n, |i, j| {
            kernel(&h, &points[i], &points[j]) + if i == j { h.noise_var } else { 0.0 }
        });
        let kinv = k.try_inverse().unwrap();
        let kx = DVector::from_fn(n, |i, _| kernel(&h, &points[i], x));
        let y = DVector::from_fn(n, |i, _| values[i] - m);
        let mean = m + (kx.transpose() * &kinv * y)[0];
        let var = h.signal_var - (kx.transpose() * &kinv * &kx)[0];
        (mean, var)
    }

    #[test]
    fn single_point_interpolates() {
        let h = GpHyper::default();
        let g = gp_fit(&[vec![0.3, 0.4]], &[0.7], h).unwrap();
        let p = g.predict(&[0.3, 0.4]);
        assert!((p.mean - 0.7).abs() < 1e-6);
        assert!((p.var - h.noise_var).abs() < 1e-9);
    }

    #[test]
    fn far_prediction_reverts_to_prior() {
        let h = GpHyper::default();
        let g = gp_fit(&[vec![0.0], vec![0.1]], &[1.0, 2.0], h).unwrap();
        let p = g.predict(&[10.0 * h.lengthscale + 0.1]);
        assert!((p.mean - 1.5).abs() < 1e-9);
        assert!((p.var - h.signal_var).abs() / h.signal_var < 0.01);
    }

    #[test]
    fn sine_midpoints() {
        let h = GpHyper::default();
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * x[0]).sin()).collect();
        let g = gp_fit(&xs, &ys, h).unwrap();
        let mut se = 0.0;
        for i in 0..4 {
            let x = [(i as f64 + 0.5) / 4.0];
            let p = g.predict(&x);
            let (om, _) = oracle(&xs, &ys, h, &x);
            assert!((p.mean - om).abs() < 1e-8);
            se += (p.mean - (2.0 * std::f64::consts::PI * x[0]).sin()).powi(2);
        }
        assert!((se / 4.0).sqrt() <= 0.1, "rmse {}", (se / 4.0).sqrt());
    }

    #[test]
    fn matches_direct_inversion() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = GpHyper::default();
        for _ in 0..20 {
            let pts: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
            let ys: Vec<f64> = (0..5).map(|_| rng.random()).collect();
            let g = gp_fit(&pts, &ys, h).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.random()).collect();
            let p = g.predict(&x);
            let (m, v) = oracle(&pts, &ys, h, &x);
            assert!((p.mean - m).abs() < 1e-8 && (p.var - v.max(0.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicate_points_fit_with_noise() {
        let h = GpHyper { noise_var: 0.0, ..GpHyper::default() };
        let g = gp_fit(&[vec![0.5], vec![0.5]], &[1.0, 1.0], h).unwrap();
        assert!(g.jitter > 0.0);
        assert_eq!(gp_fit(&[], &[], h).unwrap_err(), GpError::Empty);
    }
}
