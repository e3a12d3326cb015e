//! Data model for anchored Gaussian mixtures: parameters, priors, anchor
//! sets, allocations and responsibilities, plus the anchored likelihood.

pub mod enumerate;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, Covariance, Gaussian};

/// Row and simplex sums are held to this tolerance.
pub const SUM_TOL: f64 = 1e-12;

/// Component Gaussians plus mixing weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    components: Vec<Gaussian>,
    weights: Vec<f64>,
}

impl MixtureParams {
    pub fn new(components: Vec<Gaussian>, weights: Vec<f64>) -> Result<Self> {
        let k = components.len();
        if k == 0 {
            return Err(Error::InvalidParameter("mixture needs at least one component".into()));
        }
        if weights.len() != k {
            return Err(Error::InvalidParameter(format!("{} weights for {k} components", weights.len())));
        }
        let p = components[0].dim();
        if components.iter().any(|c| c.dim() != p) {
            return Err(Error::InvalidParameter("components differ in dimension".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParameter(format!("weights {weights:?} are not on the simplex")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL * k as f64 {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { components, weights })
    }

    pub fn univariate(means: &[f64], variances: &[f64], weights: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::InvalidParameter("means and variances differ in length".into()));
        }
        let comps =
            means.iter().zip(variances).map(|(&m, &v)| Gaussian::univariate(m, v)).collect::<Result<Vec<_>>>()?;
        Self::new(comps, weights.to_vec())
    }

    pub fn from_parts(means: Vec<Vec<f64>>, covs: Vec<Covariance>, weights: Vec<f64>) -> Result<Self> {
        if means.len() != covs.len() {
            return Err(Error::InvalidParameter("means and covariances differ in length".into()));
        }
        let comps = means.into_iter().zip(covs).map(|(m, c)| Gaussian::new(m, c)).collect::<Result<Vec<_>>>()?;
        Self::new(comps, weights)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[Gaussian] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &Gaussian {
        &self.components[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::new(self.components.clone(), weights)
    }

    /// Relabel so that new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            components: perm.iter().map(|&j| self.components[j].clone()).collect(),
            weights: perm.iter().map(|&j| self.weights[j]).collect(),
        }
    }

    pub fn report(&self) -> ParamsReport {
        ParamsReport {
            means: self.components.iter().map(|c| c.mean().to_vec()).collect(),
            covariances: self
                .components
                .iter()
                .map(|c| {
                    let m = c.cov().to_matrix();
                    (0..m.nrows()).map(|r| m.row(r).iter().cloned().collect()).collect()
                })
                .collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Plain serializable view of [`MixtureParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub weights: Vec<f64>,
}

impl ParamsReport {
    pub fn to_params(&self) -> Result<MixtureParams> {
        let covs = self
            .covariances
            .iter()
            .map(|rows| {
                if rows.len() == 1 {
                    Covariance::Variance(rows[0][0])
                } else {
                    let p = rows.len();
                    Covariance::Matrix(DMatrix::from_row_iterator(p, p, rows.iter().flatten().cloned()))
                }
            })
            .collect();
        MixtureParams::from_parts(self.means.clone(), covs, self.weights.clone())
    }
}

/// Hyperprior on the precision-prior rate `b0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatePrior {
    Fixed(f64),
    /// `b0 ~ Gamma(shape, rate)`.
    Gamma {
        shape: f64,
        rate: f64,
    },
}

impl RatePrior {
    /// The fixed value, or the hyperprior mean.
    pub fn point(&self) -> f64 {
        match *self {
            RatePrior::Fixed(b) => b,
            RatePrior::Gamma { shape, rate } => shape / rate,
        }
    }
}

/// Univariate prior: `theta ~ N(mean, 1/kappa)`, `1/sigma^2 ~ Gamma(shape, b0)`.
/// Every Gamma is shape-rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGammaPrior {
    pub mean: f64,
    pub kappa: f64,
    pub shape: f64,
    pub rate: RatePrior,
}

/// Multivariate prior: `theta | Sigma ~ N(mean, Sigma/kappa)`,
/// `Sigma^{-1} ~ Wishart(dof, scale)` with `E[Sigma^{-1}] = dof * scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalWishartPrior {
    pub mean: Vec<f64>,
    pub kappa: f64,
    pub dof: f64,
    pub scale: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ComponentPrior {
    NormalGamma(NormalGammaPrior),
    NormalWishart(NormalWishartPrior),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    /// Symmetric Dirichlet concentration on the weights.
    pub dirichlet: f64,
    pub component: ComponentPrior,
}

impl PriorSpec {
    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.dirichlet > 0.0) {
            return bad(format!("Dirichlet concentration {} must be positive", self.dirichlet));
        }
        match &self.component {
            ComponentPrior::NormalGamma(g) => {
                if p != 1 {
                    return bad(format!("Normal-Gamma prior is univariate but data have p = {p}"));
                }
                if !g.mean.is_finite() || !(g.kappa > 0.0) || !(g.shape > 0.0) {
                    return bad(format!("invalid Normal-Gamma prior {g:?}"));
                }
                match g.rate {
                    RatePrior::Fixed(b) if !(b > 0.0) => return bad(format!("rate {b} must be positive")),
                    RatePrior::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                        return bad(format!("rate hyperprior Gamma({shape}, {rate}) must be positive"))
                    }
                    _ => {}
                }
            }
            ComponentPrior::NormalWishart(w) => {
                if w.mean.len() != p || w.scale.nrows() != p || w.scale.ncols() != p {
                    return bad(format!("Normal-Wishart prior dimension does not match p = {p}"));
                }
                if !(w.kappa > 0.0) {
                    return bad(format!("kappa {} must be positive", w.kappa));
                }
                if !(w.dof > p as f64 - 1.0) {
                    return bad(format!("Wishart degrees {} must exceed p - 1", w.dof));
                }
                if w.scale.clone().cholesky().is_none() {
                    return bad("Wishart scale is not positive definite".into());
                }
            }
        }
        Ok(())
    }

    pub fn has_rate_hyperprior(&self) -> bool {
        matches!(self.component, ComponentPrior::NormalGamma(NormalGammaPrior { rate: RatePrior::Gamma { .. }, .. }))
    }
}

/// Disjoint index sets `A_1..A_k`; each set is kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AnchorSet {
    sets: Vec<Vec<usize>>,
}

impl AnchorSet {
    pub fn new(mut sets: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::InvalidAnchors("anchor set needs at least one component".into()));
        }
        let mut seen = vec![false; n];
        for (j, set) in sets.iter_mut().enumerate() {
            set.sort_unstable();
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::InvalidAnchors(format!(
                        "row {i} anchored to component {} is out of range (n = {n})",
                        j + 1
                    )));
                }
                if seen[i] {
                    return Err(Error::InvalidAnchors(format!("row {i} is anchored more than once")));
                }
                seen[i] = true;
            }
        }
        Ok(Self { sets })
    }

    pub fn empty(k: usize) -> Self {
        Self { sets: vec![Vec::new(); k] }
    }

    pub fn k(&self) -> usize {
        self.sets.len()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn set(&self, j: usize) -> &[usize] {
        &self.sets[j]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.sets.iter().map(Vec::len).collect()
    }

    /// Total number of anchored rows, `m`.
    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Number of non-empty sets, `k0`.
    pub fn nonempty(&self) -> usize {
        self.sets.iter().filter(|s| !s.is_empty()).count()
    }

    /// Anchored component per row (`None` for free rows).
    pub fn labels(&self, n: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n];
        for (j, set) in self.sets.iter().enumerate() {
            for &i in set {
                out[i] = Some(j);
            }
        }
        out
    }

    pub fn is_anchored(&self, i: usize) -> bool {
        self.sets.iter().any(|s| s.binary_search(&i).is_ok())
    }

    /// Non-empty sets first, ordered by smallest index.
    pub fn is_canonical(&self) -> bool {
        let k0 = self.nonempty();
        self.sets[..k0].iter().all(|s| !s.is_empty()) && self.sets[..k0].windows(2).all(|w| w[0][0] < w[1][0])
    }

    /// Permutation `perm` such that `self.permuted(&perm)` is canonical; empty
    /// components keep their relative order after the anchored ones.
    pub fn canonical_permutation(&self) -> Vec<usize> {
        let mut anchored: Vec<usize> = (0..self.k()).filter(|&j| !self.sets[j].is_empty()).collect();
        anchored.sort_by_key(|&j| self.sets[j][0]);
        anchored.extend((0..self.k()).filter(|&j| self.sets[j].is_empty()));
        anchored
    }

    /// Relabel so that new set `j` is old set `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self { sets: perm.iter().map(|&j| self.sets[j].clone()).collect() }
    }

    pub fn canonicalize(&self) -> (Self, Vec<usize>) {
        let perm = self.canonical_permutation();
        (self.permuted(&perm), perm)
    }

    /// Copy with row `i` added to component `j`.
    pub fn with_anchor(&self, i: usize, j: usize) -> Result<Self> {
        if self.is_anchored(i) {
            return Err(Error::InvalidAnchors(format!("row {i} is already anchored")));
        }
        let mut sets = self.sets.clone();
        sets[j].push(i);
        sets[j].sort_unstable();
        Ok(Self { sets })
    }

    pub fn check_rows(&self, n: usize) -> Result<()> {
        match self.sets.iter().flatten().find(|&&i| i >= n) {
            Some(i) => Err(Error::InvalidAnchors(format!("row {i} out of range (n = {n})"))),
            None => Ok(()),
        }
    }

    pub fn admits(&self, alloc: &AllocationVector) -> bool {
        self.sets.iter().enumerate().all(|(j, s)| s.iter().all(|&i| alloc.labels().get(i) == Some(&j)))
    }
}

/// Latent component labels, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllocationVector {
    labels: Vec<usize>,
    k: usize,
}

impl AllocationVector {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::InvalidParameter(format!("label {l} out of range for k = {k}")));
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        self.labels.iter().for_each(|&l| c[l] += 1);
        c
    }
}

/// `n x k` allocation probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsibilityMatrix {
    n: usize,
    k: usize,
    values: Vec<f64>,
}

impl ResponsibilityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if n == 0 || k == 0 {
            return Err(Error::InvalidParameter("empty responsibility matrix".into()));
        }
        let mut values = Vec::with_capacity(n * k);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != k {
                return Err(Error::InvalidParameter(format!("row {i} has {} entries, expected {k}", r.len())));
            }
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!("row {i} has entries outside [0, 1]")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > SUM_TOL * k as f64 {
                return Err(Error::InvalidParameter(format!("row {i} sums to {s}")));
            }
            values.extend(r);
        }
        Ok(Self { n, k, values })
    }

    pub(crate) fn from_raw(n: usize, k: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * k);
        Self { n, k, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k..(i + 1) * self.k]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy with anchored rows replaced by one-hot rows.
    pub fn constrained(&self, anchors: &AnchorSet) -> Self {
        let mut out = self.clone();
        for (j, set) in anchors.sets().iter().enumerate() {
            for &i in set {
                let row = &mut out.values[i * self.k..(i + 1) * self.k];
                row.iter_mut().for_each(|v| *v = 0.0);
                row[j] = 1.0;
            }
        }
        out
    }

    /// Per-column totals `sum_i r_ij`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.k];
        for r in self.values.chunks_exact(self.k) {
            for (a, b) in s.iter_mut().zip(r) {
                *a += b;
            }
        }
        s
    }
}

fn check_dims(data: &Dataset, params: &MixtureParams) -> Result<()> {
    if data.p() != params.dim() {
        return Err(Error::InvalidParameter(format!(
            "parameters have dimension {} but data have p = {}",
            params.dim(),
            data.p()
        )));
    }
    Ok(())
}

/// `log(eta_j) + log phi(y; gamma_j)` for every component.
pub fn weighted_log_densities(params: &MixtureParams, point: &[f64]) -> Vec<f64> {
    params.components().iter().zip(params.weights()).map(|(c, &w)| w.ln() + c.ln_pdf(point)).collect()
}

/// `log sum_j eta_j phi(point; gamma_j)`.
pub fn mixture_logpdf(params: &MixtureParams, point: &[f64]) -> f64 {
    log_sum_exp(&weighted_log_densities(params, point))
}

/// Log-likelihood under the anchor model: anchored rows contribute their own
/// component density with no weight factor, free rows the full mixture.
pub fn anchored_loglik(data: &Dataset, anchors: &AnchorSet, params: &MixtureParams) -> Result<f64> {
    check_dims(data, params)?;
    if anchors.k() != params.k() {
        return Err(Error::InvalidAnchors(format!(
            "anchor set has {} components, parameters have {}",
            anchors.k(),
            params.k()
        )));
    }
    anchors.check_rows(data.n())?;
    let labels = anchors.labels(data.n());
    Ok(data
        .rows()
        .zip(&labels)
        .map(|(y, l)| match l {
            Some(j) => params.component(*j).ln_pdf(y),
            None => mixture_logpdf(params, y),
        })
        .sum())
}

/// Unconstrained log-responsibilities, row-major `n x k`.
pub fn log_responsibilities(data: &Dataset, params: &MixtureParams) -> Result<Vec<f64>> {
    check_dims(data, params)?;
    let k = params.k();
    let mut out = Vec::with_capacity(data.n() * k);
    for (i, y) in data.rows().enumerate() {
        let lw = weighted_log_densities(params, y);
        let norm = log_sum_exp(&lw);
        if !norm.is_finite() {
            return Err(Error::Degenerate { row: i, reason: "every component density underflows".into() });
        }
        out.extend(lw.iter().map(|v| v - norm));
    }
    Ok(out)
}

/// Allocation probabilities; anchored rows are one-hot at their component.
pub fn responsibilities(data: &Dataset, params: &MixtureParams, anchors: &AnchorSet) -> Result<ResponsibilityMatrix> {
    anchors.check_rows(data.n())?;
    let k = params.k();
    let logs = log_responsibilities(data, params)?;
    let mut values: Vec<f64> = logs.iter().map(|v| v.exp()).collect();
    for (i, row) in values.chunks_exact_mut(k).enumerate() {
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Degenerate { row: i, reason: "responsibility row is all zero".into() });
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(ResponsibilityMatrix::from_raw(data.n(), k, values).constrained(anchors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::ln_normal;
    use proptest::prelude::*;

    #[test]
    fn single_standard_normal() {
        let p = MixtureParams::univariate(&[0.0], &[1.0], &[1.0]).unwrap();
        assert!((mixture_logpdf(&p, &[0.0]) + 0.918_938_5).abs() < 1e-7);
    }

    #[test]
    fn identical_components_collapse() {
        let single = MixtureParams::univariate(&[1.5], &[2.0], &[1.0]).unwrap();
        let double = MixtureParams::univariate(&[1.5, 1.5], &[2.0, 2.0], &[0.2, 0.8]).unwrap();
        for y in [-3.0, 0.0, 1.5, 7.0] {
            assert!((mixture_logpdf(&single, &[y]) - mixture_logpdf(&double, &[y])).abs() < 1e-12);
        }
    }

    #[test]
    fn two_term_sum_by_hand() {
        let p = MixtureParams::univariate(&[0.0, 3.0], &[1.0, 1.0], &[0.3, 0.7]).unwrap();
        let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expect = (0.3 * phi(1.0) + 0.7 * phi(-2.0)).ln();
        assert!((mixture_logpdf(&p, &[1.0]) - expect).abs() < 1e-12);
    }

    #[test]
    fn anchored_loglik_cases() {
        let data = Dataset::univariate(&[-1.0, 0.5, 2.0, 4.0]).unwrap();
        let p = MixtureParams::univariate(&[0.0, 3.0], &[1.0, 2.0], &[0.4, 0.6]).unwrap();
        let free = AnchorSet::empty(2);
        let plain: f64 = data.rows().map(|y| mixture_logpdf(&p, y)).sum();
        assert_eq!(anchored_loglik(&data, &free, &p).unwrap(), plain);

        // One anchor per component, free rows 1 and 2.
        let a = AnchorSet::new(vec![vec![0], vec![3]], 4).unwrap();
        let mix = |y: f64| (0.4 * ln_normal(y, 0.0, 1.0).exp() + 0.6 * ln_normal(y, 3.0, 2.0).exp()).ln();
        let expect = ln_normal(-1.0, 0.0, 1.0) + mix(0.5) + mix(2.0) + ln_normal(4.0, 3.0, 2.0);
        assert!((anchored_loglik(&data, &a, &p).unwrap() - expect).abs() < 1e-12);

        // Fully anchored: weights drop out.
        let all = AnchorSet::new(vec![vec![0, 1], vec![2, 3]], 4).unwrap();
        let q = p.with_weights(vec![0.9, 0.1]).unwrap();
        assert_eq!(anchored_loglik(&data, &all, &p).unwrap(), anchored_loglik(&data, &all, &q).unwrap());
    }

    #[test]
    fn responsibility_cases() {
        let data = Dataset::univariate(&[1.0, -2.0, 5.0]).unwrap();
        let same = MixtureParams::univariate(&[0.0; 3], &[1.0; 3], &[0.2, 0.3, 0.5]).unwrap();
        let r = responsibilities(&data, &same, &AnchorSet::empty(3)).unwrap();
        for i in 0..3 {
            for (a, b) in r.row(i).iter().zip(same.weights()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let a = AnchorSet::new(vec![vec![], vec![2], vec![]], 3).unwrap();
        let r = responsibilities(&data, &same, &a).unwrap();
        assert_eq!(r.row(2), &[0.0, 1.0, 0.0]);

        let p = MixtureParams::univariate(&[0.0, 4.0], &[1.0, 1.0], &[0.5, 0.5]).unwrap();
        let r = responsibilities(&data, &p, &AnchorSet::empty(2)).unwrap();
        // log phi(1;0,1) - log phi(1;4,1) = (9 - 1)/2 = 4
        let expect = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((r.get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn anchor_set_validation_and_canonical_form() {
        assert!(AnchorSet::new(vec![vec![0, 1], vec![1]], 3).is_err());
        assert!(AnchorSet::new(vec![vec![5]], 3).is_err());
        let a = AnchorSet::new(vec![vec![], vec![4, 2], vec![1]], 5).unwrap();
        assert_eq!(a.set(1), &[2, 4]);
        assert!(!a.is_canonical());
        let (c, perm) = a.canonicalize();
        assert_eq!(perm, vec![2, 1, 0]);
        assert!(c.is_canonical());
        assert_eq!(c.sets(), &[vec![1], vec![2, 4], vec![]]);
        assert_eq!(c.nonempty(), 2);
        assert_eq!(c.total(), 3);
    }

    proptest! {
        #[test]
        fn rows_are_stochastic(
            ys in proptest::collection::vec(-50.0f64..50.0, 1..20),
            means in proptest::collection::vec(-10.0f64..10.0, 3),
            vars in proptest::collection::vec(0.01f64..5.0, 3),
            w in proptest::collection::vec(0.05f64..1.0, 3),
        ) {
            let total: f64 = w.iter().sum();
            let w: Vec<f64> = w.iter().map(|v| v / total).collect();
            let p = MixtureParams::univariate(&means, &vars, &w).unwrap();
            let data = Dataset::univariate(&ys).unwrap();
            let r = responsibilities(&data, &p, &AnchorSet::empty(3)).unwrap();
            for i in 0..data.n() {
                let s: f64 = r.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= SUM_TOL);
                prop_assert!(r.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
