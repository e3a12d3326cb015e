//! Gaussian log-densities and log-space helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Univariate normal log-density.
#[inline]
pub fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Component covariance: a variance for `p = 1`, a full SPD matrix otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Variance(f64),
    Matrix(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Variance(_) => 1,
            Covariance::Matrix(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            Covariance::Variance(v) => DMatrix::from_element(1, 1, *v),
            Covariance::Matrix(m) => m.clone(),
        }
    }

    /// Diagonal entries (the variance alone when univariate).
    pub fn diagonal(&self) -> Vec<f64> {
        match self {
            Covariance::Variance(v) => vec![*v],
            Covariance::Matrix(m) => m.diagonal().iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Univariate { inv_var: f64 },
    Multivariate { chol_l: DMatrix<f64> },
}

/// A Gaussian with its Cholesky factor and normalizing constant cached.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: Vec<f64>,
    cov: Covariance,
    log_norm: f64,
    kernel: Kernel,
}

impl PartialEq for Gaussian {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov
    }
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, cov: Covariance) -> Result<Self> {
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("non-finite component mean".into()));
        }
        let p = mean.len();
        if cov.dim() != p {
            return Err(Error::InvalidParameter(format!(
                "covariance dimension {} does not match mean dimension {p}",
                cov.dim()
            )));
        }
        match &cov {
            Covariance::Variance(v) => {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(Error::InvalidParameter(format!("variance {v} is not positive")));
                }
                let log_norm = -0.5 * (LN_2PI + v.ln());
                Ok(Self { mean, log_norm, kernel: Kernel::Univariate { inv_var: 1.0 / v }, cov })
            }
            Covariance::Matrix(m) => {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite covariance entry".into()));
                }
                let asym = (m - m.transpose()).abs().max();
                if asym > 1e-9 * (1.0 + m.abs().max()) {
                    return Err(Error::InvalidParameter("covariance is not symmetric".into()));
                }
                let chol = m
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))?;
                let l = chol.l();
                let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let log_norm = -0.5 * (p as f64 * LN_2PI + log_det);
                Ok(Self { mean, log_norm, kernel: Kernel::Multivariate { chol_l: l }, cov })
            }
        }
    }

    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], Covariance::Variance(var))
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Covariance {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        match &self.kernel {
            Kernel::Univariate { inv_var } => {
                let d = x[0] - self.mean[0];
                self.log_norm - 0.5 * d * d * inv_var
            }
            Kernel::Multivariate { chol_l } => {
                let diff = DVector::from_iterator(self.mean.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
                let z = chol_l.solve_lower_triangular(&diff).expect("cholesky factor has a positive diagonal");
                self.log_norm - 0.5 * z.norm_squared()
            }
        }
    }
}
