//! Small dense BFGS with central-difference gradients and Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop when the gradient norm or the relative decrease falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64]) -> DVector<f64> {
    let mut probe = x.to_vec();
    DVector::from_iterator(
        x.len(),
        (0..x.len()).map(|d| {
            let h = 1e-6 * (1.0 + x[d].abs());
            probe[d] = x[d] + h;
            let up = f(&probe);
            probe[d] = x[d] - h;
            let dn = f(&probe);
            probe[d] = x[d];
            (up - dn) / (2.0 * h)
        }),
    )
}

pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: BfgsOptions) -> BfgsResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    let mut g = gradient(&f, x.as_slice());
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    for iteration in 0..opts.max_iter {
        if !fx.is_finite() {
            break;
        }
        if g.norm() < opts.tol {
            return BfgsResult { x: x.as_slice().to_vec(), value: fx, iterations: iteration, converged: true };
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            // Lost descent; fall back to steepest descent.
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let fc = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                next = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = next else {
            // No decrease along a descent direction: at numerical resolution.
            return BfgsResult { x: x.as_slice().to_vec(), value: fx, iterations: iteration, converged: true };
        };
        let g_new = gradient(&f, x_new.as_slice());
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        let decrease = fx - f_new;
        x = x_new;
        g = g_new;
        let scale = fx.abs().max(f_new.abs()).max(1e-300);
        fx = f_new;
        if decrease <= opts.tol * scale {
            return BfgsResult { x: x.as_slice().to_vec(), value: fx, iterations: iteration + 1, converged: true };
        }
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
    }
    BfgsResult { x: x.as_slice().to_vec(), value: fx, iterations: opts.max_iter, converged: false }
}
