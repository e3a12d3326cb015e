//! Limiting relabeling distribution of an anchor model: for each label
//! permutation `rho_q`, `p_q ∝ prod_j prod_{x in A_j} phi(x; [rho_q(gamma0)]_j)`.
//! Mixture weights do not enter.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::log_sum_exp;
use crate::model::{AnchorSet, MixtureParams};

/// `10!`.
pub const DEFAULT_FACTORIAL_CAP: usize = 3_628_800;

fn factorial(k: usize) -> Option<usize> {
    (1..=k).try_fold(1usize, |acc, v| acc.checked_mul(v))
}

fn check_cap(k: usize, cap: usize) -> Result<usize> {
    match factorial(k) {
        Some(f) if f <= cap => Ok(f),
        _ => Err(Error::FactorialCap { k, cap }),
    }
}

/// Advance to the next permutation in lexicographic order; false after the last.
pub fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// All permutations of `0..k` in lexicographic order, identity first.
pub fn permutations(k: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    check_cap(k, cap)?;
    let mut p: Vec<usize> = (0..k).collect();
    let mut out = vec![p.clone()];
    while next_permutation(&mut p) {
        out.push(p.clone());
    }
    Ok(out)
}

/// The `q`-th permutation of `0..k` in lexicographic order.
pub fn nth_permutation(k: usize, mut q: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..k).collect();
    let mut out = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let f = factorial(i).expect("k already passed the cap");
        out.push(pool.remove(q / f));
        q %= f;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelabelingDistribution {
    k: usize,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
}

impl RelabelingDistribution {
    /// Normalizes unnormalized log weights indexed by lexicographic permutation.
    pub fn from_log_weights(k: usize, log_w: Vec<f64>) -> Result<Self> {
        if factorial(k) != Some(log_w.len()) {
            return Err(Error::InvalidParameter(format!("{} weights for k = {k}", log_w.len())));
        }
        let lse = log_sum_exp(&log_w);
        if !lse.is_finite() {
            return Err(Error::Degenerate { row: 0, reason: "every relabeling has zero anchor density".into() });
        }
        let log_probs: Vec<f64> = log_w.iter().map(|l| l - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        Ok(Self { k, log_probs, probs })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn permutation(&self, q: usize) -> Vec<usize> {
        nth_permutation(self.k, q)
    }

    /// Indices of the `n` most probable relabelings, ties to the lower index.
    pub fn top(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.log_probs[b].total_cmp(&self.log_probs[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

/// Per-component anchor log-densities: `table[j * k + l] = sum_{x in A_j} ln phi(x; gamma0_l)`.
fn anchor_table(anchor_values: &[Vec<Vec<f64>>], gamma0: &MixtureParams) -> Result<Vec<f64>> {
    let k = gamma0.k();
    if anchor_values.len() != k {
        return Err(Error::InvalidAnchors(format!("{} anchor groups for k = {k}", anchor_values.len())));
    }
    let mut table = vec![0.0; k * k];
    for (j, xs) in anchor_values.iter().enumerate() {
        for x in xs {
            if x.len() != gamma0.dim() {
                return Err(Error::InvalidAnchors(format!("anchor of dimension {} for p = {}", x.len(), gamma0.dim())));
            }
            for (l, c) in gamma0.components().iter().enumerate() {
                table[j * k + l] += c.ln_pdf(x);
            }
        }
    }
    Ok(table)
}

/// Relabeling distribution for anchor values grouped by component.
pub fn relabeling_probs(
    anchor_values: &[Vec<Vec<f64>>],
    gamma0: &MixtureParams,
    cap: usize,
) -> Result<RelabelingDistribution> {
    let k = gamma0.k();
    check_cap(k, cap)?;
    let table = anchor_table(anchor_values, gamma0)?;
    let mut p: Vec<usize> = (0..k).collect();
    let mut log_w = Vec::with_capacity(factorial(k).unwrap_or(0));
    loop {
        log_w.push(p.iter().enumerate().map(|(j, &l)| table[j * k + l]).sum());
        if !next_permutation(&mut p) {
            break;
        }
    }
    RelabelingDistribution::from_log_weights(k, log_w)
}

/// Anchor values looked up from the rows of `data`.
pub fn anchor_values(data: &Dataset, anchors: &AnchorSet) -> Vec<Vec<Vec<f64>>> {
    anchors.sets().iter().map(|set| set.iter().map(|&i| data.row(i).to_vec()).collect()).collect()
}

pub fn relabeling_probs_for(
    data: &Dataset,
    anchors: &AnchorSet,
    gamma0: &MixtureParams,
    cap: usize,
) -> Result<RelabelingDistribution> {
    anchors.check_rows(data.n())?;
    relabeling_probs(&anchor_values(data, anchors), gamma0, cap)
}

/// `alpha_hat = max_q p_q`.
pub fn quasi_consistency_alpha(dist: &RelabelingDistribution) -> f64 {
    dist.probs.iter().cloned().fold(0.0, f64::max)
}

/// `-sum_q p_q ln p_q` with `0 ln 0 = 0`.
pub fn relabeling_entropy(dist: &RelabelingDistribution) -> f64 {
    let h: f64 = dist.probs.iter().zip(&dist.log_probs).filter(|(p, _)| **p > 0.0).map(|(p, l)| -p * l).sum();
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma0Source {
    AnchoredEmMap,
    PosteriorMean,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPermutation {
    /// 1-based component labels: position `j` holds the component mapped to `j`.
    pub permutation: Vec<usize>,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub alpha_hat: f64,
    pub entropy: f64,
    pub top_permutations: Vec<RankedPermutation>,
    pub gamma0_source: Gamma0Source,
}

pub fn diagnostics(dist: &RelabelingDistribution, source: Gamma0Source) -> Diagnostics {
    Diagnostics {
        alpha_hat: quasi_consistency_alpha(dist),
        entropy: relabeling_entropy(dist),
        top_permutations: dist
            .top(5)
            .into_iter()
            .map(|q| RankedPermutation {
                permutation: dist.permutation(q).iter().map(|l| l + 1).collect(),
                probability: dist.probs[q],
            })
            .collect(),
        gamma0_source: source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[&[f64]]) -> Vec<Vec<Vec<f64>>> {
        v.iter().map(|g| g.iter().map(|x| vec![*x]).collect()).collect()
    }

    #[test]
    fn permutations_are_lexicographic() {
        let p = permutations(3, DEFAULT_FACTORIAL_CAP).unwrap();
        assert_eq!(p, vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]);
        for (q, perm) in permutations(5, DEFAULT_FACTORIAL_CAP).unwrap().iter().enumerate() {
            assert_eq!(&nth_permutation(5, q), perm);
        }
        assert!(matches!(permutations(11, DEFAULT_FACTORIAL_CAP), Err(Error::FactorialCap { k: 11, .. })));
        assert!(permutations(4, 23).is_err());
    }

    #[test]
    fn symmetric_anchors_give_half() {
        let g = MixtureParams::univariate(&[-1.0, 1.0], &[1.0, 1.0], &[0.3, 0.7]).unwrap();
        let d = relabeling_probs(&pts(&[&[0.0], &[0.0]]), &g, DEFAULT_FACTORIAL_CAP).unwrap();
        assert!((d.probs()[0] - 0.5).abs() < 1e-15);
        assert!((relabeling_entropy(&d) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn location_closed_form() {
        let (t1, t2, s2) = (-0.4, 1.1, 0.8);
        let x1 = [-0.9, 0.3, -0.2];
        let x2 = [0.7, 1.9, 0.1];
        let g = MixtureParams::univariate(&[t1, t2], &[s2, s2], &[0.5, 0.5]).unwrap();
        let d = relabeling_probs(&pts(&[&x1, &x2]), &g, DEFAULT_FACTORIAL_CAP).unwrap();
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        let expect = (3.0 / s2 * (t2 - t1) * (mean(&x2) - mean(&x1))).exp();
        assert!((d.probs()[0] / d.probs()[1] / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_and_degenerate_limits() {
        let u = RelabelingDistribution::from_log_weights(3, vec![0.0; 6]).unwrap();
        assert!((quasi_consistency_alpha(&u) - 1.0 / 6.0).abs() < 1e-15);
        assert!((relabeling_entropy(&u) - 6f64.ln()).abs() < 1e-12);
        let d = RelabelingDistribution::from_log_weights(2, vec![0.0, -1e4]).unwrap();
        assert!((quasi_consistency_alpha(&d) - 1.0).abs() < 1e-12);
        assert!(relabeling_entropy(&d) < 1e-12);
        let n = RelabelingDistribution::from_log_weights(2, vec![0.0, (1e-12f64).ln()]).unwrap();
        assert!(quasi_consistency_alpha(&n) > 1.0 - 2e-12);
    }

    #[test]
    fn diagnostics_block() {
        let g = MixtureParams::univariate(&[0.0, 5.0, 10.0], &[1.0; 3], &[1.0 / 3.0; 3]).unwrap();
        let d = relabeling_probs(&pts(&[&[0.2], &[4.6], &[]]), &g, DEFAULT_FACTORIAL_CAP).unwrap();
        let block = diagnostics(&d, Gamma0Source::AnchoredEmMap);
        assert_eq!(block.top_permutations.len(), 5);
        assert_eq!(block.top_permutations[0].permutation, vec![1, 2, 3]);
        let json = serde_json::to_string(&block).unwrap();
        assert!(json.contains("anchored_em_map"));
    }

    fn k2_entropy(p1: f64) -> f64 {
        let d = RelabelingDistribution::from_log_weights(2, vec![p1.ln(), (1.0 - p1).ln()]).unwrap();
        relabeling_entropy(&d)
    }

    #[test]
    fn k2_entropy_decreases_away_from_half() {
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let p = 0.5 + 0.0099 * i as f64;
            let h = k2_entropy(p);
            assert!(h < last);
            assert!((h - k2_entropy(1.0 - p)).abs() < 1e-12);
            last = h;
        }
    }

    proptest! {
        #[test]
        fn normalized_and_bounded(
            means in proptest::collection::vec(-5.0..5.0f64, 3),
            vars in proptest::collection::vec(0.2..4.0f64, 3),
            xs in proptest::collection::vec(-8.0..8.0f64, 3),
        ) {
            let g = MixtureParams::univariate(&means, &vars, &[1.0 / 3.0; 3]).unwrap();
            let d = relabeling_probs(&pts(&[&xs[..1], &xs[1..2], &xs[2..]]), &g, DEFAULT_FACTORIAL_CAP).unwrap();
            let s: f64 = d.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(d.probs().iter().all(|p| *p >= 0.0));
            let h = relabeling_entropy(&d);
            prop_assert!(h >= 0.0 && h <= 6f64.ln() + 1e-12);
        }

        #[test]
        fn label_permutation_equivariance(
            means in proptest::collection::vec(-5.0..5.0f64, 3),
            vars in proptest::collection::vec(0.2..4.0f64, 3),
            xs in proptest::collection::vec(-8.0..8.0f64, 3),
            rho in 0usize..6,
        ) {
            let g = MixtureParams::univariate(&means, &vars, &[1.0 / 3.0; 3]).unwrap();
            let values = pts(&[&xs[..1], &xs[1..2], &xs[2..]]);
            let a = relabeling_probs(&values, &g, DEFAULT_FACTORIAL_CAP).unwrap();
            let b = relabeling_probs(&values, &g.permuted(&nth_permutation(3, rho)), DEFAULT_FACTORIAL_CAP).unwrap();
            let mut pa = a.probs().to_vec();
            let mut pb = b.probs().to_vec();
            pa.sort_by(f64::total_cmp);
            pb.sort_by(f64::total_cmp);
            for (x, y) in pa.iter().zip(&pb) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((quasi_consistency_alpha(&a) - quasi_consistency_alpha(&b)).abs() < 1e-12);
        }

        #[test]
        fn invariant_to_common_density_scale(shift in -50.0..50.0f64) {
            let base = vec![0.3, -1.2, 2.0, 0.1, 0.0, -0.7];
            let a = RelabelingDistribution::from_log_weights(3, base.clone()).unwrap();
            let b = RelabelingDistribution::from_log_weights(3, base.iter().map(|v| v + shift).collect()).unwrap();
            prop_assert!((relabeling_entropy(&a) - relabeling_entropy(&b)).abs() < 1e-12);
            prop_assert!((quasi_consistency_alpha(&a) - quasi_consistency_alpha(&b)).abs() < 1e-12);
        }
    }
}
