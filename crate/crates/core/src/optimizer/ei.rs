//! Expected improvement for maximization.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

pub fn expected_improvement(mean: f64, var: f64, best_so_far: f64) -> f64 {
    let gap = mean - best_so_far;
    let sigma = var.max(0.0).sqrt();
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let n = Normal::standard();
    (gap * n.cdf(z) + sigma * n.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_and_closed_form() {
        assert_eq!(expected_improvement(0.5, 0.0, 0.5), 0.0);
        assert_eq!(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
        assert!((expected_improvement(0.5, 1.0, 0.5) - 0.398_942_280_4).abs() < 1e-4);
    }

    #[test]
    fn increasing_in_sigma_below_incumbent() {
        let mut prev = 0.0;
        for i in 1..50 {
            let var = (i as f64 * 0.1).powi(2);
            let ei = expected_improvement(0.2, var, 0.5);
            assert!(ei > prev);
            prev = ei;
        }
    }
}
