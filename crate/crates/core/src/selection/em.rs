//! Anchored EM: alternate a constrained E-step (pick the anchor sets, keep
//! the unconstrained responsibilities elsewhere) with a MAP M-step, tracking
//! the lower bound `F = log p(gamma, eta | y) - KL(q || q*)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{ln_normal, Covariance, Gaussian, LN_2PI};
use crate::model::{
    log_responsibilities, responsibilities, AnchorSet, ComponentPrior, MixtureParams, NormalGammaPrior,
    NormalWishartPrior, PriorSpec, ResponsibilityMatrix,
};
use crate::rng;
use crate::selection::assign::{assign_by_scores, AssignSolver};

const INNER_TOL: f64 = 1e-10;
const INNER_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub k: usize,
    /// Anchors requested per component, `m_j`.
    pub budgets: Vec<usize>,
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub solver: AssignSolver,
    pub seed: u64,
}

impl EmConfig {
    pub fn new(k: usize, per_component: usize) -> Self {
        Self {
            k,
            budgets: vec![per_component; k],
            tol: 1e-8,
            max_iter: 1000,
            n_starts: 25,
            solver: AssignSolver::Exact,
            seed: 0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k < 2 {
            return bad(format!("anchored EM needs k >= 2, got {}", self.k));
        }
        if self.budgets.len() != self.k {
            return bad(format!("{} budgets for k = {}", self.budgets.len(), self.k));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance {} must be positive", self.tol));
        }
        if self.n_starts == 0 || self.max_iter == 0 {
            return bad("n_starts and max_iter must be positive".into());
        }
        let k0 = self.budgets.iter().filter(|&&b| b > 0).count();
        if k0 + 1 < self.k {
            return bad(format!("only {k0} of {} components are anchored; need at least k - 1", self.k));
        }
        let m: usize = self.budgets.iter().sum();
        if m > n {
            return Err(Error::InfeasibleBudget { requested: m, available: n });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmState {
    pub params: MixtureParams,
    pub anchors: AnchorSet,
    pub resp: ResponsibilityMatrix,
    pub lower_bound: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub lower_bound: f64,
    pub anchors: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: usize,
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    pub error: Option<String>,
}

impl StartTrace {
    /// Largest drop of `F` between consecutive iterations (0 when monotone).
    pub fn max_decrease(&self) -> f64 {
        self.entries.windows(2).map(|w| w[0].lower_bound - w[1].lower_bound).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    /// Winning start, relabeled so its anchor set is canonical.
    pub best: EmState,
    pub best_start: usize,
    pub traces: Vec<StartTrace>,
}

/// `F` together with its two parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    pub value: f64,
    pub log_posterior: f64,
    pub kl: f64,
    /// An anchored row had zero unconstrained responsibility; `value` is `-inf`.
    pub degenerate: bool,
}

/// Unnormalized log joint prior of the parameters. The univariate prior is a
/// density on `(theta, sigma^2)` with `b0` at its fixed value or hyperprior
/// mean; the multivariate one is on `(theta, Sigma)`.
pub fn log_prior(params: &MixtureParams, prior: &PriorSpec) -> f64 {
    let dir: f64 = params.weights().iter().map(|w| (prior.dirichlet - 1.0) * w.ln()).sum();
    let comps: f64 = match &prior.component {
        ComponentPrior::NormalGamma(g) => {
            let b0 = g.rate.point();
            params
                .components()
                .iter()
                .map(|c| {
                    let var = c.cov().diagonal()[0];
                    ln_normal(c.mean()[0], g.mean, 1.0 / g.kappa) - (g.shape + 1.0) * var.ln() - b0 / var
                })
                .sum()
        }
        ComponentPrior::NormalWishart(w) => {
            let p = w.mean.len() as f64;
            let w_inv = w.scale.clone().try_inverse().expect("validated SPD scale");
            params
                .components()
                .iter()
                .map(|c| {
                    let sigma = c.cov().to_matrix();
                    let chol = sigma.clone().cholesky().expect("component covariance is SPD");
                    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                    let sigma_inv = chol.inverse();
                    let d = DVector::from_iterator(w.mean.len(), c.mean().iter().zip(&w.mean).map(|(a, b)| a - b));
                    let quad = (d.transpose() * &sigma_inv * &d)[(0, 0)];
                    let theta = -0.5 * (p * LN_2PI + log_det - p * w.kappa.ln()) - 0.5 * w.kappa * quad;
                    let sig = -0.5 * (w.dof + p + 1.0) * log_det - 0.5 * (&w_inv * &sigma_inv).trace();
                    theta + sig
                })
                .sum()
        }
    };
    dir + comps
}

/// Unnormalized log posterior of the exchangeable model (all rows free).
pub fn log_posterior(data: &Dataset, params: &MixtureParams, prior: &PriorSpec) -> f64 {
    let ll: f64 = data.rows().map(|y| crate::model::mixture_logpdf(params, y)).sum();
    ll + log_prior(params, prior)
}

fn check_resp(resp: &ResponsibilityMatrix, anchors: &AnchorSet, n: usize, k: usize) -> Result<()> {
    if resp.n() != n || resp.k() != k {
        return Err(Error::InvalidParameter("responsibility matrix has the wrong shape".into()));
    }
    for (j, set) in anchors.sets().iter().enumerate() {
        for &i in set {
            if resp.get(i, j) != 1.0 {
                return Err(Error::InvalidParameter(format!("row {i} is anchored but not one-hot")));
            }
        }
    }
    Ok(())
}

/// `F(gamma, eta, q)` up to the model-evidence constant, via the per-row
/// factorization of `KL(q || q*)`.
pub fn lower_bound(
    data: &Dataset,
    anchors: &AnchorSet,
    params: &MixtureParams,
    prior: &PriorSpec,
    resp: &ResponsibilityMatrix,
) -> Result<LowerBound> {
    let k = params.k();
    check_resp(resp, anchors, data.n(), k)?;
    let log_r = log_responsibilities(data, params)?;
    let labels = anchors.labels(data.n());
    let mut kl = 0.0;
    for i in 0..data.n() {
        let lr = &log_r[i * k..(i + 1) * k];
        match labels[i] {
            Some(j) => kl -= lr[j],
            None => {
                for (q, l) in resp.row(i).iter().zip(lr) {
                    if *q > 0.0 {
                        kl += q * (q.ln() - l);
                    }
                }
            }
        }
    }
    let log_posterior = log_posterior(data, params, prior);
    let degenerate = kl == f64::INFINITY;
    Ok(LowerBound {
        value: if degenerate { f64::NEG_INFINITY } else { log_posterior - kl },
        log_posterior,
        kl,
        degenerate,
    })
}

/// `E_q[log p(gamma, eta, s, y)]`, unnormalized like [`log_prior`].
pub fn expected_complete_log_posterior(
    data: &Dataset,
    params: &MixtureParams,
    prior: &PriorSpec,
    resp: &ResponsibilityMatrix,
) -> f64 {
    let mut total = log_prior(params, prior);
    for (i, y) in data.rows().enumerate() {
        for (j, (c, w)) in params.components().iter().zip(params.weights()).enumerate() {
            let q = resp.get(i, j);
            if q > 0.0 {
                total += q * (w.ln() + c.ln_pdf(y));
            }
        }
    }
    total
}

fn map_weights(resp: &ResponsibilityMatrix, alpha: f64) -> Result<Vec<f64>> {
    let counts = resp.column_sums();
    let k = counts.len() as f64;
    if alpha < 1.0 {
        if let Some((j, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 1.0 - alpha) {
            return Err(Error::WeightMapUndefined { component: j, count: c });
        }
    }
    let denom = resp.n() as f64 + k * (alpha - 1.0);
    let mut w: Vec<f64> = counts.iter().map(|c| (c + alpha - 1.0) / denom).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

fn univariate_component(ys: &[f64], q: impl Fn(usize) -> f64, g: &NormalGammaPrior, start: (f64, f64)) -> (f64, f64) {
    let b0 = g.rate.point();
    let (mut theta, mut var) = start;
    let mut total = 0.0;
    let mut sum = 0.0;
    for (i, y) in ys.iter().enumerate() {
        total += q(i);
        sum += q(i) * y;
    }
    for _ in 0..INNER_SWEEPS {
        let prec = 1.0 / var;
        let new_theta = (g.kappa * g.mean + prec * sum) / (g.kappa + prec * total);
        let ss: f64 = ys.iter().enumerate().map(|(i, y)| q(i) * (y - new_theta).powi(2)).sum();
        let new_var = (2.0 * b0 + ss) / (2.0 * g.shape + 2.0 + total);
        let change = (new_theta - theta).abs() / (1.0 + theta.abs()) + (new_var - var).abs() / var;
        theta = new_theta;
        var = new_var;
        if change < INNER_TOL {
            break;
        }
    }
    (theta, var)
}

fn wishart_component(data: &Dataset, q: impl Fn(usize) -> f64, w: &NormalWishartPrior) -> (Vec<f64>, DMatrix<f64>) {
    let p = data.p();
    let mu = DVector::from_column_slice(&w.mean);
    let mut total = 0.0;
    let mut sum = DVector::zeros(p);
    for (i, y) in data.rows().enumerate() {
        total += q(i);
        sum += DVector::from_column_slice(y) * q(i);
    }
    let theta = (&mu * w.kappa + &sum) / (w.kappa + total);
    let mut scatter = w.scale.clone().try_inverse().expect("validated SPD scale");
    for (i, y) in data.rows().enumerate() {
        let d = DVector::from_column_slice(y) - &theta;
        scatter += &d * d.transpose() * q(i);
    }
    let d = &theta - &mu;
    scatter += &d * d.transpose() * w.kappa;
    let cov = scatter / (total + w.dof + p as f64 + 2.0);
    let cov = (&cov + cov.transpose()) * 0.5;
    (theta.iter().cloned().collect(), cov)
}

/// MAP of the expected complete-data log posterior under `resp`, starting
/// the univariate coordinate cycle from weighted moments.
pub fn m_step(data: &Dataset, resp: &ResponsibilityMatrix, prior: &PriorSpec) -> Result<MixtureParams> {
    m_step_inner(data, resp, prior, None)
}

/// As [`m_step`], warm-starting the univariate coordinate cycle at `start`
/// so the bound cannot decrease.
pub fn m_step_from(
    data: &Dataset,
    resp: &ResponsibilityMatrix,
    prior: &PriorSpec,
    start: &MixtureParams,
) -> Result<MixtureParams> {
    m_step_inner(data, resp, prior, Some(start))
}

fn m_step_inner(
    data: &Dataset,
    resp: &ResponsibilityMatrix,
    prior: &PriorSpec,
    start: Option<&MixtureParams>,
) -> Result<MixtureParams> {
    prior.validate(data.p())?;
    if resp.n() != data.n() {
        return Err(Error::InvalidParameter("responsibilities do not match the data".into()));
    }
    let k = resp.k();
    let weights = map_weights(resp, prior.dirichlet)?;
    let comps = match &prior.component {
        ComponentPrior::NormalGamma(g) => {
            let ys = data.column(0);
            let pooled = data.covariance()[0].max(1e-12);
            (0..k)
                .map(|j| {
                    let init = match start {
                        Some(s) => (s.component(j).mean()[0], s.component(j).cov().diagonal()[0]),
                        None => {
                            let tot: f64 = (0..data.n()).map(|i| resp.get(i, j)).sum();
                            let m = if tot > 0.0 {
                                ys.iter().enumerate().map(|(i, y)| resp.get(i, j) * y).sum::<f64>() / tot
                            } else {
                                g.mean
                            };
                            (m, pooled)
                        }
                    };
                    let (theta, var) = univariate_component(&ys, |i| resp.get(i, j), g, init);
                    Gaussian::univariate(theta, var)
                })
                .collect::<Result<Vec<_>>>()?
        }
        ComponentPrior::NormalWishart(w) => (0..k)
            .map(|j| {
                let (theta, cov) = wishart_component(data, |i| resp.get(i, j), w);
                Gaussian::new(theta, Covariance::Matrix(cov))
            })
            .collect::<Result<Vec<_>>>()?,
    };
    MixtureParams::new(comps, weights)
}

fn initial_params<R: Rng>(data: &Dataset, k: usize, rng: &mut R) -> Result<MixtureParams> {
    if k > data.n() {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds n = {}", data.n())));
    }
    let rows = sample(rng, data.n(), k).into_vec();
    let p = data.p();
    let cov = if p == 1 {
        Covariance::Variance(data.covariance()[0].max(1e-6))
    } else {
        let mut m = DMatrix::from_row_slice(p, p, &data.covariance());
        if m.clone().cholesky().is_none() {
            m += DMatrix::identity(p, p) * (1e-6 * (1.0 + m.diagonal().max()));
        }
        Covariance::Matrix(m)
    };
    MixtureParams::from_parts(
        rows.iter().map(|&i| data.row(i).to_vec()).collect(),
        vec![cov; k],
        vec![1.0 / k as f64; k],
    )
}

/// One E-step: anchor sets from the unconstrained log-responsibilities and
/// the constrained `q`. The exact solver maximizes `sum log r_ij` over the
/// anchored entries, which is the anchored part of `-KL(q || q*)`.
pub fn e_step(
    data: &Dataset,
    params: &MixtureParams,
    budgets: &[usize],
    solver: AssignSolver,
) -> Result<(AnchorSet, ResponsibilityMatrix)> {
    let k = params.k();
    let log_r = log_responsibilities(data, params)?;
    let anchors = assign_by_scores(&log_r, data.n(), k, budgets, solver)?;
    let resp = ResponsibilityMatrix::from_raw(data.n(), k, log_r.iter().map(|v| v.exp()).collect());
    Ok((anchors.clone(), resp.constrained(&anchors)))
}

/// EM with the anchor sets held fixed, for user-supplied anchors. Free rows
/// start mostly on the component with the nearest anchor centroid.
pub fn fixed_anchor_em(
    data: &Dataset,
    prior: &PriorSpec,
    anchors: &AnchorSet,
    tol: f64,
    max_iter: usize,
) -> Result<EmState> {
    prior.validate(data.p())?;
    anchors.check_rows(data.n())?;
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidParameter("fixed-anchor EM needs tol > 0 and max_iter > 0".into()));
    }
    let k = anchors.k();
    if anchors.nonempty() + 1 < k {
        return Err(Error::InvalidAnchors(format!(
            "only {} of {k} components are anchored; need at least k - 1",
            anchors.nonempty()
        )));
    }
    let centroids: Vec<Option<Vec<f64>>> = anchors
        .sets()
        .iter()
        .map(|set| {
            (!set.is_empty()).then(|| {
                (0..data.p()).map(|d| set.iter().map(|&i| data.row(i)[d]).sum::<f64>() / set.len() as f64).collect()
            })
        })
        .collect();
    let rows = (0..data.n())
        .map(|i| {
            let nearest = (0..k)
                .filter_map(|j| {
                    let c = centroids[j].as_ref()?;
                    Some((j, c.iter().zip(data.row(i)).map(|(a, b)| (a - b).powi(2)).sum::<f64>()))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
                .unwrap_or(0);
            (0..k).map(|j| 0.1 / k as f64 + if j == nearest { 0.9 } else { 0.0 }).collect()
        })
        .collect();
    let resp = ResponsibilityMatrix::from_rows(rows)?.constrained(anchors);
    let mut params = m_step(data, &resp, prior)?;
    let mut previous = f64::NEG_INFINITY;
    for iteration in 1..=max_iter {
        let resp = responsibilities(data, &params, anchors)?;
        params = m_step_from(data, &resp, prior, &params)?;
        let bound = lower_bound(data, anchors, &params, prior, &resp)?.value;
        if bound - previous < tol || iteration == max_iter {
            return Ok(EmState { params, anchors: anchors.clone(), resp, lower_bound: bound, iteration });
        }
        previous = bound;
    }
    unreachable!("max_iter is positive")
}

fn run_start(data: &Dataset, prior: &PriorSpec, config: &EmConfig, start: usize) -> (StartTrace, Option<EmState>) {
    let mut trace = StartTrace { start, entries: Vec::new(), converged: false, error: None };
    let mut rng = rng::stream(config.seed, rng::DOMAIN_EM, start as u64);
    let result = (|| -> Result<EmState> {
        let mut params = initial_params(data, config.k, &mut rng)?;
        let mut previous = f64::NEG_INFINITY;
        let mut state = None;
        for iteration in 1..=config.max_iter {
            let (anchors, resp) = e_step(data, &params, &config.budgets, config.solver)?;
            params = m_step_from(data, &resp, prior, &params)?;
            let bound = lower_bound(data, &anchors, &params, prior, &resp)?;
            if !bound.value.is_finite() {
                return Err(Error::Degenerate {
                    row: 0,
                    reason: format!("lower bound is {} at iteration {iteration}", bound.value),
                });
            }
            trace.entries.push(TraceEntry { iteration, lower_bound: bound.value, anchors: anchors.sets().to_vec() });
            let delta = bound.value - previous;
            previous = bound.value;
            state = Some(EmState { params: params.clone(), anchors, resp, lower_bound: bound.value, iteration });
            if delta < config.tol {
                trace.converged = true;
                break;
            }
        }
        Ok(state.expect("max_iter is positive"))
    })();
    match result {
        Ok(s) => (trace, Some(s)),
        Err(e) => {
            trace.error = Some(e.to_string());
            (trace, None)
        }
    }
}

/// Multi-start anchored EM; the winner has the largest final `F` (ties go to
/// the lowest start index) and is returned in canonical labeling.
pub fn anchored_em(data: &Dataset, prior: &PriorSpec, config: &EmConfig) -> Result<EmResult> {
    config.validate(data.n())?;
    prior.validate(data.p())?;
    let runs: Vec<(StartTrace, Option<EmState>)> =
        (0..config.n_starts).into_par_iter().map(|s| run_start(data, prior, config, s)).collect();
    let mut best: Option<(usize, EmState)> = None;
    for (s, (_, state)) in runs.iter().enumerate() {
        if let Some(st) = state {
            if best.as_ref().is_none_or(|(_, b)| st.lower_bound > b.lower_bound) {
                best = Some((s, st.clone()));
            }
        }
    }
    let traces: Vec<StartTrace> = runs.into_iter().map(|(t, _)| t).collect();
    let Some((best_start, state)) = best else {
        return Err(Error::AllStartsFailed {
            diagnostics: traces
                .iter()
                .map(|t| format!("start {}: {}", t.start, t.error.as_deref().unwrap_or("unknown")))
                .collect(),
        });
    };
    Ok(EmResult { best: canonical_state(state), best_start, traces })
}

fn canonical_state(state: EmState) -> EmState {
    let (anchors, perm) = state.anchors.canonicalize();
    let k = perm.len();
    let n = state.resp.n();
    let mut values = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = state.resp.row(i);
        values.extend(perm.iter().map(|&j| row[j]));
    }
    EmState {
        params: state.params.permuted(&perm),
        anchors,
        resp: ResponsibilityMatrix::from_raw(n, k, values),
        lower_bound: state.lower_bound,
        iteration: state.iteration,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{responsibilities, RatePrior};
    use crate::selection::assign::assignment_objective;

    fn ng_prior(mean: f64, kappa: f64, shape: f64, rate: f64, alpha: f64) -> PriorSpec {
        PriorSpec {
            dirichlet: alpha,
            component: ComponentPrior::NormalGamma(NormalGammaPrior {
                mean,
                kappa,
                shape,
                rate: RatePrior::Fixed(rate),
            }),
        }
    }

    fn two_clusters() -> Dataset {
        Dataset::univariate(&[-5.2, -4.9, -5.5, -4.4, -5.0, -6.1, 4.8, 5.3, 5.1, 4.2, 6.0, 5.5]).unwrap()
    }

    #[test]
    fn single_component_mle_limit() {
        let data = Dataset::univariate(&[1.0, 2.0, 4.5, 7.0]).unwrap();
        let prior = ng_prior(0.0, 1e-12, 1.0, 1e-12, 1.0);
        let resp = ResponsibilityMatrix::from_rows(vec![vec![1.0]; 4]).unwrap();
        let p = m_step(&data, &resp, &prior).unwrap();
        assert!((p.component(0).mean()[0] - 3.625).abs() < 1e-8);
        assert_eq!(p.weights(), &[1.0]);
    }

    #[test]
    fn one_hot_mean_is_conjugate() {
        // With the variance fixed by the inner cycle, theta is the precision-weighted mean.
        let data = Dataset::univariate(&[1.0, 3.0, 10.0, 12.0]).unwrap();
        let prior = ng_prior(5.0, 0.5, 2.0, 1.0, 1.0);
        let resp =
            ResponsibilityMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]])
                .unwrap();
        let p = m_step(&data, &resp, &prior).unwrap();
        for (j, ys) in [[1.0, 3.0], [10.0, 12.0]].iter().enumerate() {
            let var = p.component(j).cov().diagonal()[0];
            let prec = 1.0 / var;
            let expect = (0.5 * 5.0 + prec * (ys[0] + ys[1])) / (0.5 + 2.0 * prec);
            assert!((p.component(j).mean()[0] - expect).abs() < 1e-9);
            let ss: f64 = ys.iter().map(|y| (y - expect).powi(2)).sum();
            assert!((var - (2.0 + ss) / (4.0 + 2.0 + 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn m_step_is_stationary() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.05, 2.0, 1.5, 1.3);
        let guess = MixtureParams::univariate(&[-3.0, 2.0], &[2.0, 3.0], &[0.5, 0.5]).unwrap();
        let resp = responsibilities(&data, &guess, &AnchorSet::empty(2)).unwrap();
        let p = m_step(&data, &resp, &prior).unwrap();
        let objective = |x: &[f64]| {
            let q = MixtureParams::univariate(&[x[0], x[1]], &[x[2], x[3]], &[x[4], 1.0 - x[4]]).unwrap();
            expected_complete_log_posterior(&data, &q, &prior, &resp)
        };
        let x0 = [
            p.component(0).mean()[0],
            p.component(1).mean()[0],
            p.component(0).cov().diagonal()[0],
            p.component(1).cov().diagonal()[0],
            p.weights()[0],
        ];
        let mut norm = 0.0;
        for d in 0..5 {
            let h = 1e-5 * (1.0 + x0[d].abs());
            let mut up = x0;
            let mut dn = x0;
            up[d] += h;
            dn[d] -= h;
            let g = (objective(&up) - objective(&dn)) / (2.0 * h);
            norm += g * g;
        }
        assert!(norm.sqrt() < 1e-6, "gradient norm {}", norm.sqrt());
    }

    #[test]
    fn weight_map_undefined_for_sparse_alpha() {
        let data = Dataset::univariate(&[1.0, 2.0, 3.0]).unwrap();
        let prior = ng_prior(0.0, 1.0, 2.0, 1.0, 0.5);
        let resp = ResponsibilityMatrix::from_rows(vec![vec![1.0, 0.0]; 3]).unwrap();
        assert!(matches!(m_step(&data, &resp, &prior), Err(Error::WeightMapUndefined { component: 1, .. })));
    }

    #[test]
    fn kl_vanishes_without_anchors() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.05, 2.0, 1.5, 1.0);
        let p = MixtureParams::univariate(&[-4.0, 3.0], &[1.0, 2.0], &[0.4, 0.6]).unwrap();
        let r = responsibilities(&data, &p, &AnchorSet::empty(2)).unwrap();
        let b = lower_bound(&data, &AnchorSet::empty(2), &p, &prior, &r).unwrap();
        assert!(b.kl.abs() < 1e-12);
        assert!((b.value - log_posterior(&data, &p, &prior)).abs() < 1e-9);

        let a = AnchorSet::new(vec![vec![0], vec![6]], data.n()).unwrap();
        let q = r.constrained(&a);
        let b = lower_bound(&data, &a, &p, &prior, &q).unwrap();
        assert!(b.kl > 0.0 && b.value < b.log_posterior);
    }

    #[test]
    fn bound_equals_expected_complete_plus_entropy() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.05, 2.0, 1.5, 1.0);
        let p = MixtureParams::univariate(&[-4.0, 3.0], &[1.0, 2.0], &[0.4, 0.6]).unwrap();
        let a = AnchorSet::new(vec![vec![0, 3], vec![6]], data.n()).unwrap();
        let q = responsibilities(&data, &p, &a).unwrap();
        let b = lower_bound(&data, &a, &p, &prior, &q).unwrap();
        let entropy: f64 = q.values().iter().filter(|v| **v > 0.0).map(|v| -v * v.ln()).sum();
        let alt = expected_complete_log_posterior(&data, &p, &prior, &q) + entropy;
        assert!((b.value - alt).abs() < 1e-9);
    }

    #[test]
    fn kl_matches_joint_enumeration() {
        // KL between the anchored q(s) and the unconstrained posterior of s,
        // summed over all 2^5 joint allocations.
        let data = Dataset::univariate(&[-1.3, 0.2, 0.9, 2.4, 3.1]).unwrap();
        let prior = ng_prior(0.0, 0.1, 2.0, 1.0, 1.0);
        let p = MixtureParams::univariate(&[0.0, 2.5], &[1.0, 0.7], &[0.45, 0.55]).unwrap();
        let a = AnchorSet::new(vec![vec![1], vec![2]], 5).unwrap();
        let q = responsibilities(&data, &p, &a).unwrap();
        let r = responsibilities(&data, &p, &AnchorSet::empty(2)).unwrap();
        let mut kl = 0.0;
        for code in 0..32u32 {
            let s: Vec<usize> = (0..5).map(|i| ((code >> i) & 1) as usize).collect();
            let qs: f64 = s.iter().enumerate().map(|(i, &j)| q.get(i, j)).product();
            let ps: f64 = s.iter().enumerate().map(|(i, &j)| r.get(i, j)).product();
            if qs > 0.0 {
                kl += qs * (qs / ps).ln();
            }
        }
        let b = lower_bound(&data, &a, &p, &prior, &q).unwrap();
        assert!((b.kl - kl).abs() < 1e-10, "{} vs {kl}", b.kl);
    }

    #[test]
    fn em_ascends_and_finds_cluster_anchors() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.01, 2.0, 1.0, 1.0);
        let mut cfg = EmConfig::new(2, 1);
        cfg.n_starts = 6;
        cfg.seed = 3;
        let res = anchored_em(&data, &prior, &cfg).unwrap();
        for t in &res.traces {
            assert!(t.max_decrease() <= 1e-9, "start {} decreased by {}", t.start, t.max_decrease());
        }
        let best = &res.best;
        assert!(best.anchors.is_canonical());
        // Converged anchors agree with an exhaustive assignment on the final responsibilities.
        let log_r = log_responsibilities(&data, &best.params).unwrap();
        let brute = crate::selection::assign::tests::brute_force(&log_r, data.n(), 2, &[1, 1]);
        assert!((assignment_objective(&log_r, 2, &best.anchors) - brute).abs() < 1e-9);
        assert!(best.anchors.set(0)[0] < 6 && best.anchors.set(1)[0] >= 6);
    }

    #[test]
    fn multivariate_em_runs_and_ascends() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.37;
                if i % 2 == 0 {
                    vec![t.sin() * 0.3, t.cos() * 0.3]
                } else {
                    vec![4.0 + t.cos() * 0.4, 3.0 + t.sin() * 0.2]
                }
            })
            .collect();
        let data = Dataset::new(rows, None, None).unwrap();
        let prior = PriorSpec {
            dirichlet: 1.0,
            component: ComponentPrior::NormalWishart(NormalWishartPrior {
                mean: data.mean(),
                kappa: 0.5,
                dof: 4.0,
                scale: DMatrix::identity(2, 2),
            }),
        };
        let mut cfg = EmConfig::new(2, 2);
        cfg.n_starts = 4;
        let res = anchored_em(&data, &prior, &cfg).unwrap();
        for t in &res.traces {
            assert!(t.max_decrease() <= 1e-9);
        }
        let labels = res.best.anchors.labels(20);
        let comp_of_even =
            labels.iter().enumerate().filter(|(i, l)| l.is_some() && i % 2 == 0).map(|(_, l)| l.unwrap());
        let first: Vec<usize> = comp_of_even.collect();
        assert!(first.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn rejects_insufficient_anchoring() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.01, 2.0, 1.0, 1.0);
        let mut cfg = EmConfig::new(3, 1);
        cfg.budgets = vec![1, 0, 0];
        assert!(anchored_em(&data, &prior, &cfg).is_err());
    }

    #[test]
    fn fixed_anchor_em_recovers_clusters() {
        let data = two_clusters();
        let prior = ng_prior(0.0, 0.01, 2.0, 1.0, 1.0);
        let anchors = AnchorSet::new(vec![vec![0], vec![6]], 12).unwrap();
        let state = fixed_anchor_em(&data, &prior, &anchors, 1e-10, 500).unwrap();
        assert_eq!(state.anchors, anchors);
        let m = state.params.report().means;
        assert!((m[0][0] + 5.18).abs() < 0.2 && (m[1][0] - 5.15).abs() < 0.2, "{m:?}");
        let mut cfg = EmConfig::new(2, 1);
        cfg.seed = 3;
        let free = anchored_em(&data, &prior, &cfg).unwrap();
        assert!(state.lower_bound <= free.best.lower_bound + 1e-8);
        assert!(fixed_anchor_em(&data, &prior, &AnchorSet::empty(3), 1e-8, 10).is_err());
    }
}
