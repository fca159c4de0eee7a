//! Dense LU with partial pivoting over real or complex entries.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// Pivots at or below this magnitude are treated as singular.
const PIVOT_FLOOR: f64 = 1e-20;

/// Row-major square matrix.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, v: T) {
        let n = self.n;
        self.data[row * n + col] = self.data[row * n + col] + v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|x| *x = T::zero());
    }

    /// Solve `A x = b` in place, destroying `A`. On a singular pivot returns
    /// the column index (unknown) that could not be eliminated.
    pub fn solve_in_place(&mut self, b: &mut [T]) -> Result<(), usize> {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        let a = &mut self.data;
        for k in 0..n {
            let mut piv = k;
            let mut best = a[k * n + k].magnitude();
            for r in (k + 1)..n {
                let m = a[r * n + k].magnitude();
                if m > best {
                    best = m;
                    piv = r;
                }
            }
            if !(best > PIVOT_FLOOR) {
                return Err(k);
            }
            if piv != k {
                for c in 0..n {
                    a.swap(k * n + c, piv * n + c);
                }
                b.swap(k, piv);
            }
            let pivot = a[k * n + k];
            for r in (k + 1)..n {
                let factor = a[r * n + k] / pivot;
                if factor.magnitude() == 0.0 {
                    continue;
                }
                a[r * n + k] = T::zero();
                for c in (k + 1)..n {
                    a[r * n + c] = a[r * n + c] - factor * a[k * n + c];
                }
                b[r] = b[r] - factor * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for c in (k + 1)..n {
                acc = acc - a[k * n + c] * b[c];
            }
            b[k] = acc / a[k * n + k];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_real_system() {
        let mut a = Dense::<f64>::zeros(3);
        let vals = [[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        for (r, row) in vals.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                a.add(r, c, *v);
            }
        }
        // x = [1, 2, 3]
        let mut b = vec![7.0, 3.0, 6.0];
        a.solve_in_place(&mut b).unwrap();
        for (got, want) in b.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn reports_singular_column() {
        let mut a = Dense::<f64>::zeros(2);
        a.add(0, 0, 1.0);
        let mut b = vec![1.0, 1.0];
        assert_eq!(a.solve_in_place(&mut b), Err(1));
    }

    #[test]
    fn complex_system() {
        let j = Complex64::new(0.0, 1.0);
        let mut a = Dense::<Complex64>::zeros(2);
        a.add(0, 0, Complex64::new(1.0, 0.0) + j);
        a.add(0, 1, Complex64::new(2.0, 0.0));
        a.add(1, 0, -j);
        a.add(1, 1, Complex64::new(1.0, 0.0));
        let x = [Complex64::new(1.0, -1.0), Complex64::new(0.5, 2.0)];
        let mut b = vec![
            (Complex64::new(1.0, 0.0) + j) * x[0] + Complex64::new(2.0, 0.0) * x[1],
            -j * x[0] + x[1],
        ];
        a.solve_in_place(&mut b).unwrap();
        assert!((b[0] - x[0]).norm() < 1e-12 && (b[1] - x[1]).norm() < 1e-12);
    }
}
