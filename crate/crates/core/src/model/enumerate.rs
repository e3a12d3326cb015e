//! Exact small-instance oracles for the known-variance location model:
//! conditional and anchored marginal likelihoods, and the enumerated
//! posterior over the anchored allocation space.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, LN_2PI};
use crate::model::{AllocationVector, AnchorSet};

pub const DEFAULT_ENUMERATION_CAP: usize = 1 << 20;

/// `theta ~ N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalMean {
    pub mean: f64,
    pub var: f64,
}

impl NormalMean {
    /// Conjugate update with observations of known variance `sigma2`.
    pub fn update(&self, count: usize, sum: f64, sigma2: f64) -> NormalMean {
        let prec = 1.0 / self.var + count as f64 / sigma2;
        NormalMean { mean: (self.mean / self.var + sum / sigma2) / prec, var: 1.0 / prec }
    }
}

/// Per-component Normal priors on the means; usually exchangeable.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationPrior {
    components: Vec<NormalMean>,
}

impl LocationPrior {
    pub fn exchangeable(mean: f64, var: f64, k: usize) -> Result<Self> {
        Self::new(vec![NormalMean { mean, var }; k])
    }

    pub fn new(components: Vec<NormalMean>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("location prior needs a component".into()));
        }
        if components.iter().any(|c| !(c.var > 0.0) || !c.mean.is_finite()) {
            return Err(Error::InvalidParameter("location prior variances must be positive".into()));
        }
        Ok(Self { components })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, j: usize) -> NormalMean {
        self.components[j]
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct GroupStats {
    count: usize,
    sum: f64,
    sumsq: f64,
}

impl GroupStats {
    fn push(&mut self, y: f64) {
        self.count += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    /// Full Normal-Normal log evidence of the group; zero when empty.
    fn log_evidence(&self, prior: NormalMean, sigma2: f64) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let ybar = self.sum / n;
        let wss = (self.sumsq - n * ybar * ybar).max(0.0);
        let spread = n * prior.var + sigma2;
        -0.5 * n * (LN_2PI + sigma2.ln())
            - 0.5 * (spread / sigma2).ln()
            - 0.5 * (wss / sigma2 + n * (ybar - prior.mean).powi(2) / spread)
    }
}

fn check_inputs(data: &Dataset, k: usize, prior: &LocationPrior, sigma2: f64) -> Result<()> {
    if data.p() != 1 {
        return Err(Error::InvalidData("location oracles are univariate".into()));
    }
    if prior.k() != k {
        return Err(Error::InvalidParameter(format!("prior has {} components, expected {k}", prior.k())));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma2 = {sigma2} must be positive")));
    }
    Ok(())
}

fn group_stats(ys: &[f64], labels: &[usize], k: usize) -> Vec<GroupStats> {
    let mut stats = vec![GroupStats::default(); k];
    for (&y, &l) in ys.iter().zip(labels) {
        stats[l].push(y);
    }
    stats
}

/// `log m(y | s)` with the component means integrated out. The constant is
/// the full Normal-Normal marginal, so values compare across anchor models.
pub fn cond_marginal_loglik(
    data: &Dataset,
    alloc: &AllocationVector,
    prior: &LocationPrior,
    sigma2: f64,
) -> Result<f64> {
    check_inputs(data, alloc.k(), prior, sigma2)?;
    if alloc.labels().len() != data.n() {
        return Err(Error::InvalidParameter("allocation length differs from n".into()));
    }
    let ys = data.column(0);
    Ok(group_stats(&ys, alloc.labels(), alloc.k())
        .iter()
        .enumerate()
        .map(|(j, g)| g.log_evidence(prior.component(j), sigma2))
        .sum())
}

/// Visit every allocation compatible with `anchors`, free rows varying as an
/// odometer with the last free row fastest.
pub fn for_each_allocation<F: FnMut(&[usize])>(n: usize, anchors: &AnchorSet, mut visit: F) {
    let k = anchors.k();
    let fixed = anchors.labels(n);
    let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
    let mut labels: Vec<usize> = fixed.iter().map(|l| l.unwrap_or(0)).collect();
    loop {
        visit(&labels);
        let mut pos = free.len();
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            let i = free[pos];
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
        }
    }
}

fn enumeration_size(n: usize, anchors: &AnchorSet, cap: usize) -> Result<usize> {
    let free = n - anchors.total();
    let terms = (anchors.k() as f64).powi(free as i32);
    if terms > cap as f64 {
        return Err(Error::EnumerationTooLarge { terms, cap });
    }
    Ok(terms as usize)
}

/// `log sum_{s in S^A} m(y|s) p_A(s)` with equal weights, `p_A(s) = k^-(n-m)`.
pub fn anchored_marginal_loglik_enumerate(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    sigma2: f64,
) -> Result<f64> {
    anchored_marginal_loglik_enumerate_capped(data, anchors, prior, sigma2, DEFAULT_ENUMERATION_CAP)
}

pub fn anchored_marginal_loglik_enumerate_capped(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    sigma2: f64,
    cap: usize,
) -> Result<f64> {
    check_inputs(data, anchors.k(), prior, sigma2)?;
    anchors.check_rows(data.n())?;
    let size = enumeration_size(data.n(), anchors, cap)?;
    let ys = data.column(0);
    let k = anchors.k();
    let mut terms = Vec::with_capacity(size);
    for_each_allocation(data.n(), anchors, |labels| {
        let stats = group_stats(&ys, labels, k);
        terms.push(stats.iter().enumerate().map(|(j, g)| g.log_evidence(prior.component(j), sigma2)).sum::<f64>());
    });
    let log_p_alloc = -((data.n() - anchors.total()) as f64) * (k as f64).ln();
    Ok(log_sum_exp(&terms) + log_p_alloc)
}

/// One allocation's share of the posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTerm {
    pub labels: Vec<usize>,
    pub weight: f64,
    /// Conjugate posterior of each component mean given this allocation.
    pub components: Vec<NormalMean>,
}

/// The posterior of the component means as a finite mixture over `S^A`.
#[derive(Debug, Clone)]
pub struct EnumeratedPosterior {
    pub terms: Vec<PosteriorTerm>,
    /// `log m_A(y)`.
    pub log_evidence: f64,
}

impl EnumeratedPosterior {
    pub fn k(&self) -> usize {
        self.terms[0].components.len()
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.terms.iter().map(|t| t.weight * t.components[j].mean).sum()
    }

    pub fn variance(&self, j: usize) -> f64 {
        let m = self.mean(j);
        self.terms
            .iter()
            .map(|t| {
                let c = t.components[j];
                t.weight * (c.var + (c.mean - m).powi(2))
            })
            .sum()
    }

    /// Cumulative weights for inverse-CDF sampling of a term.
    pub fn cumulative_weights(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.terms
            .iter()
            .map(|t| {
                acc += t.weight;
                acc
            })
            .collect()
    }
}

pub fn enumerate_posterior(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    sigma2: f64,
) -> Result<EnumeratedPosterior> {
    enumerate_posterior_capped(data, anchors, prior, sigma2, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_posterior_capped(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    sigma2: f64,
    cap: usize,
) -> Result<EnumeratedPosterior> {
    check_inputs(data, anchors.k(), prior, sigma2)?;
    anchors.check_rows(data.n())?;
    let size = enumeration_size(data.n(), anchors, cap)?;
    let ys = data.column(0);
    let k = anchors.k();
    let mut log_w = Vec::with_capacity(size);
    let mut terms = Vec::with_capacity(size);
    for_each_allocation(data.n(), anchors, |labels| {
        let stats = group_stats(&ys, labels, k);
        log_w.push(stats.iter().enumerate().map(|(j, g)| g.log_evidence(prior.component(j), sigma2)).sum::<f64>());
        terms.push(PosteriorTerm {
            labels: labels.to_vec(),
            weight: 0.0,
            components: stats
                .iter()
                .enumerate()
                .map(|(j, g)| prior.component(j).update(g.count, g.sum, sigma2))
                .collect(),
        });
    });
    let norm = log_sum_exp(&log_w);
    for (t, lw) in terms.iter_mut().zip(&log_w) {
        t.weight = (lw - norm).exp();
    }
    let log_p_alloc = -((data.n() - anchors.total()) as f64) * (k as f64).ln();
    Ok(EnumeratedPosterior { terms, log_evidence: norm + log_p_alloc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alloc(labels: &[usize], k: usize) -> AllocationVector {
        AllocationVector::new(labels.to_vec(), k).unwrap()
    }

    #[test]
    fn label_permutation_invariance() {
        let d = Dataset::univariate(&[0.3, -1.2, 2.5, 2.9, 0.1]).unwrap();
        let prior = LocationPrior::exchangeable(0.5, 4.0, 3).unwrap();
        let a = cond_marginal_loglik(&d, &alloc(&[0, 1, 2, 2, 0], 3), &prior, 0.7).unwrap();
        let b = cond_marginal_loglik(&d, &alloc(&[2, 0, 1, 1, 2], 3), &prior, 0.7).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn empty_group_contributes_nothing() {
        let d = Dataset::univariate(&[0.3, -1.2]).unwrap();
        let prior = LocationPrior::exchangeable(0.0, 1.0, 2).unwrap();
        let one = LocationPrior::exchangeable(0.0, 1.0, 1).unwrap();
        let a = cond_marginal_loglik(&d, &alloc(&[0, 0], 2), &prior, 1.0).unwrap();
        let b = cond_marginal_loglik(&d, &alloc(&[0, 0], 1), &one, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fully_anchored_is_single_term() {
        let d = Dataset::univariate(&[0.3, -1.2, 2.0]).unwrap();
        let prior = LocationPrior::exchangeable(0.0, 2.0, 2).unwrap();
        let a = AnchorSet::new(vec![vec![0, 1], vec![2]], 3).unwrap();
        let m = anchored_marginal_loglik_enumerate(&d, &a, &prior, 1.0).unwrap();
        let c = cond_marginal_loglik(&d, &alloc(&[0, 0, 1], 2), &prior, 1.0).unwrap();
        assert!((m - c).abs() < 1e-12);
    }

    #[test]
    fn cap_is_enforced() {
        let d = Dataset::univariate(&[0.0; 12]).unwrap();
        let prior = LocationPrior::exchangeable(0.0, 1.0, 2).unwrap();
        let err = anchored_marginal_loglik_enumerate_capped(&d, &AnchorSet::empty(2), &prior, 1.0, 1000);
        assert!(matches!(err, Err(Error::EnumerationTooLarge { .. })));
    }

    #[test]
    fn single_component_posterior_is_conjugate() {
        let d = Dataset::univariate(&[1.0, 2.0, 4.0]).unwrap();
        let prior = LocationPrior::exchangeable(0.0, 10.0, 1).unwrap();
        let post = enumerate_posterior(&d, &AnchorSet::empty(1), &prior, 2.0).unwrap();
        assert_eq!(post.terms.len(), 1);
        let prec = 0.1 + 3.0 / 2.0;
        assert!((post.mean(0) - (7.0 / 2.0) / prec).abs() < 1e-12);
        assert!((post.variance(0) - 1.0 / prec).abs() < 1e-12);
    }

    #[test]
    fn odometer_visits_k_pow_free() {
        let a = AnchorSet::new(vec![vec![1], vec![], vec![3]], 5).unwrap();
        let mut seen = std::collections::HashSet::new();
        for_each_allocation(5, &a, |l| {
            assert_eq!(l[1], 0);
            assert_eq!(l[3], 2);
            seen.insert(l.to_vec());
        });
        assert_eq!(seen.len(), 27);
    }
}
