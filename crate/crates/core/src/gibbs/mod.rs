//! Multi-chain Gibbs sampler for anchored Gaussian mixtures.
//!
//! Each sweep updates `s -> theta -> scale -> b0 -> eta`. Anchored rows keep
//! their labels and count toward the Dirichlet update.

pub mod summary;

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, Covariance, Gaussian};
use crate::model::{responsibilities, AnchorSet, ComponentPrior, MixtureParams, PriorSpec, RatePrior};
use crate::rng;

pub use summary::{allocation_table, summarize, PosteriorSummary};

pub const DRAWS_SCHEMA: &str = "anchormix.draws/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Sweeps per chain, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    /// Total draws kept across chains after thinning.
    pub target_draws: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn galaxies() -> Self {
        Self { chains: 50, iterations: 10_000, burn_in: 1_000, target_draws: 5_000, seed: 0 }
    }

    pub fn sisfall() -> Self {
        Self { chains: 60, iterations: 8_000, burn_in: 1_000, target_draws: 10_000, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.chains == 0 || self.target_draws == 0 {
            return bad("chains and target_draws must be positive".into());
        }
        if self.iterations <= self.burn_in {
            return bad(format!("iterations {} must exceed burn_in {}", self.iterations, self.burn_in));
        }
        if self.target_draws > self.chains * (self.iterations - self.burn_in) {
            return bad(format!(
                "target of {} draws exceeds the {} post-burn-in sweeps",
                self.target_draws,
                self.chains * (self.iterations - self.burn_in)
            ));
        }
        Ok(())
    }

    /// 1-based iterations kept by each chain before the tail trim.
    fn kept_iterations(&self) -> Vec<usize> {
        let post = self.iterations - self.burn_in;
        let per = self.target_draws.div_ceil(self.chains);
        (1..=per).map(|r| self.burn_in + r * post / per).collect()
    }
}

/// Mutable state of one chain. Univariate scales are `1 x 1` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub labels: Vec<usize>,
    pub theta: Vec<Vec<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    pub weights: Vec<f64>,
    pub b0: Option<f64>,
}

impl ChainState {
    pub fn k(&self) -> usize {
        self.theta.len()
    }

    pub fn params(&self) -> Result<MixtureParams> {
        let covs = self
            .cov
            .iter()
            .map(|c| if c.nrows() == 1 { Covariance::Variance(c[(0, 0)]) } else { Covariance::Matrix(c.clone()) })
            .collect();
        MixtureParams::from_parts(self.theta.clone(), covs, self.weights.clone())
    }

    /// State at fixed parameters, labels drawn from the anchored responsibilities.
    pub fn from_params<R: Rng>(
        data: &Dataset,
        anchors: &AnchorSet,
        prior: &PriorSpec,
        params: &MixtureParams,
        rng: &mut R,
    ) -> Result<Self> {
        let resp = responsibilities(data, params, anchors)?;
        let labels = (0..data.n()).map(|i| categorical(resp.row(i), rng)).collect();
        Ok(Self {
            labels,
            theta: params.components().iter().map(|c| c.mean().to_vec()).collect(),
            cov: params.components().iter().map(|c| c.cov().to_matrix()).collect(),
            weights: params.weights().to_vec(),
            b0: initial_b0(prior),
        })
    }

    /// Fallback start: uniform labels off the anchors, per-group means and
    /// the pooled covariance.
    pub fn uniform<R: Rng>(data: &Dataset, anchors: &AnchorSet, prior: &PriorSpec, rng: &mut R) -> Result<Self> {
        let k = anchors.k();
        let fixed = anchors.labels(data.n());
        let labels: Vec<usize> = fixed.iter().map(|l| l.unwrap_or_else(|| rng.random_range(0..k))).collect();
        let p = data.p();
        let mut pooled = DMatrix::from_row_slice(p, p, &data.covariance());
        if pooled.clone().cholesky().is_none() {
            pooled += DMatrix::identity(p, p) * (1e-6 * (1.0 + pooled.diagonal().max().abs()));
        }
        let overall = data.mean();
        let theta = (0..k)
            .map(|j| {
                let rows: Vec<&[f64]> = data.rows().zip(&labels).filter(|(_, &l)| l == j).map(|(y, _)| y).collect();
                if rows.is_empty() {
                    return overall.clone();
                }
                (0..p).map(|d| rows.iter().map(|y| y[d]).sum::<f64>() / rows.len() as f64).collect()
            })
            .collect();
        Ok(Self { labels, theta, cov: vec![pooled; k], weights: vec![1.0 / k as f64; k], b0: initial_b0(prior) })
    }
}

fn initial_b0(prior: &PriorSpec) -> Option<f64> {
    match &prior.component {
        ComponentPrior::NormalGamma(g) => match g.rate {
            RatePrior::Gamma { .. } => Some(g.rate.point()),
            RatePrior::Fixed(_) => None,
        },
        ComponentPrior::NormalWishart(_) => None,
    }
}

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (j, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

fn gamma_rate<R: Rng>(shape: f64, rate: f64, rng: &mut R) -> std::result::Result<f64, String> {
    if !(shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite()) {
        return Err(format!("invalid Gamma({shape}, {rate}) conditional"));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| e.to_string())?;
    Ok(g.sample(rng))
}

/// Dirichlet draw through normalized Gamma variates.
pub fn dirichlet<R: Rng>(alpha: &[f64], rng: &mut R) -> std::result::Result<Vec<f64>, String> {
    let mut g: Vec<f64> = alpha.iter().map(|&a| gamma_rate(a, 1.0, rng)).collect::<std::result::Result<_, _>>()?;
    let s: f64 = g.iter().sum();
    if !(s > 0.0) {
        // All variates underflowed (tiny concentrations): fall back to the largest.
        let j = alpha.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(j, _)| j).unwrap_or(0);
        g.iter_mut().enumerate().for_each(|(i, v)| *v = if i == j { 1.0 } else { 0.0 });
        return Ok(g);
    }
    g.iter_mut().for_each(|v| *v /= s);
    Ok(g)
}

/// Wishart(dof, scale) draw by the Bartlett decomposition.
pub fn wishart<R: Rng>(dof: f64, scale: &DMatrix<f64>, rng: &mut R) -> std::result::Result<DMatrix<f64>, String> {
    let p = scale.nrows();
    if !(dof > p as f64 - 1.0) {
        return Err(format!("Wishart degrees of freedom {dof} too small for p = {p}"));
    }
    let l = scale.clone().cholesky().ok_or("Wishart scale is not SPD")?.l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = (2.0 * gamma_rate((dof - i as f64) / 2.0, 1.0, rng)?).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = &l * &a;
    Ok(&la * la.transpose())
}

fn sym_inverse(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, String> {
    let inv = m.clone().cholesky().ok_or("matrix is not SPD")?.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// One full sweep. `fixed[i]` holds the anchored label of row `i`.
pub fn sweep<R: Rng>(
    data: &Dataset,
    fixed: &[Option<usize>],
    prior: &PriorSpec,
    state: &mut ChainState,
    rng: &mut R,
) -> std::result::Result<(), String> {
    let k = state.k();
    let p = data.p();

    // s
    let comps: Vec<Gaussian> = state
        .theta
        .iter()
        .zip(&state.cov)
        .map(|(t, c)| {
            let cov = if p == 1 { Covariance::Variance(c[(0, 0)]) } else { Covariance::Matrix(c.clone()) };
            Gaussian::new(t.clone(), cov).map_err(|e| e.to_string())
        })
        .collect::<std::result::Result<_, _>>()?;
    let log_w: Vec<f64> = state.weights.iter().map(|w| w.ln()).collect();
    let mut lp = vec![0.0; k];
    for (i, y) in data.rows().enumerate() {
        if let Some(j) = fixed[i] {
            state.labels[i] = j;
            continue;
        }
        for j in 0..k {
            lp[j] = log_w[j] + comps[j].ln_pdf(y);
        }
        let lse = log_sum_exp(&lp);
        if !lse.is_finite() {
            return Err(format!("row {i} has no finite allocation weight"));
        }
        let probs: Vec<f64> = lp.iter().map(|v| (v - lse).exp()).collect();
        state.labels[i] = categorical(&probs, rng);
    }

    let mut counts = vec![0usize; k];
    state.labels.iter().for_each(|&l| counts[l] += 1);

    match &prior.component {
        ComponentPrior::NormalGamma(g) => {
            let mut sum = vec![0.0; k];
            for (y, &l) in data.rows().zip(&state.labels) {
                sum[l] += y[0];
            }
            let b0 = state.b0.unwrap_or_else(|| g.rate.point());
            for j in 0..k {
                let lambda = 1.0 / state.cov[j][(0, 0)];
                let prec = g.kappa + counts[j] as f64 * lambda;
                let mean = (g.kappa * g.mean + lambda * sum[j]) / prec;
                let z: f64 = rng.sample(StandardNormal);
                state.theta[j][0] = mean + z / prec.sqrt();
            }
            let mut ss = vec![0.0; k];
            for (y, &l) in data.rows().zip(&state.labels) {
                ss[l] += (y[0] - state.theta[l][0]).powi(2);
            }
            let mut lambda_sum = 0.0;
            for j in 0..k {
                let lambda = gamma_rate(g.shape + counts[j] as f64 / 2.0, b0 + 0.5 * ss[j], rng)?;
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return Err(format!("precision draw {lambda} for component {}", j + 1));
                }
                lambda_sum += lambda;
                state.cov[j][(0, 0)] = 1.0 / lambda;
            }
            if let RatePrior::Gamma { shape, rate } = g.rate {
                state.b0 = Some(gamma_rate(shape + k as f64 * g.shape, rate + lambda_sum, rng)?);
            }
        }
        ComponentPrior::NormalWishart(w) => {
            let mu = DVector::from_column_slice(&w.mean);
            let w_inv = sym_inverse(&w.scale)?;
            let mut sums = vec![DVector::<f64>::zeros(p); k];
            for (y, &l) in data.rows().zip(&state.labels) {
                sums[l] += DVector::from_column_slice(y);
            }
            for j in 0..k {
                let nj = counts[j] as f64;
                let mean = (&mu * w.kappa + &sums[j]) / (w.kappa + nj);
                let chol = state.cov[j].clone().cholesky().ok_or("covariance lost positive definiteness")?;
                let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let theta = mean + chol.l() * z / (w.kappa + nj).sqrt();
                state.theta[j] = theta.iter().cloned().collect();
            }
            let mut scatter: Vec<DMatrix<f64>> = (0..k)
                .map(|j| {
                    let d = DVector::from_column_slice(&state.theta[j]) - &mu;
                    &w_inv + &d * d.transpose() * w.kappa
                })
                .collect();
            for (y, &l) in data.rows().zip(&state.labels) {
                let d = DVector::from_column_slice(y) - DVector::from_column_slice(&state.theta[l]);
                scatter[l] += &d * d.transpose();
            }
            for j in 0..k {
                let scale = sym_inverse(&scatter[j])?;
                let lambda = wishart(w.dof + counts[j] as f64 + 1.0, &scale, rng)?;
                state.cov[j] = sym_inverse(&lambda)?;
            }
        }
    }

    let alpha: Vec<f64> = counts.iter().map(|&c| prior.dirichlet + c as f64).collect();
    state.weights = dirichlet(&alpha, rng)?;
    if state.theta.iter().flatten().any(|v| !v.is_finite()) || state.weights.iter().any(|v| !v.is_finite()) {
        return Err("non-finite parameter draw".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub chain: usize,
    pub iter: usize,
    pub theta: Vec<Vec<f64>>,
    /// Row-major covariance per component (`[sigma^2]` when univariate).
    pub cov: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub b0: Option<f64>,
    pub labels: Vec<u32>,
}

impl Draw {
    fn from_state(chain: usize, iter: usize, s: &ChainState) -> Self {
        Self {
            chain,
            iter,
            theta: s.theta.clone(),
            cov: s.cov.iter().map(|c| c.transpose().as_slice().to_vec()).collect(),
            weights: s.weights.clone(),
            b0: s.b0,
            labels: s.labels.iter().map(|&l| l as u32).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub k: usize,
    pub p: usize,
    pub n: usize,
    pub draws: Vec<Draw>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn has_b0(&self) -> bool {
        self.draws.first().is_some_and(|d| d.b0.is_some())
    }

    /// Posterior-mean parameters (a plug-in for diagnostics).
    pub fn posterior_mean(&self) -> Result<MixtureParams> {
        if self.draws.is_empty() {
            return Err(Error::InvalidParameter("no draws".into()));
        }
        let t = self.draws.len() as f64;
        let avg = |f: &dyn Fn(&Draw) -> &Vec<f64>, len: usize| -> Vec<f64> {
            let mut out = vec![0.0; len];
            for d in &self.draws {
                out.iter_mut().zip(f(d)).for_each(|(o, v)| *o += v / t);
            }
            out
        };
        let means = (0..self.k).map(|j| avg(&|d| &d.theta[j], self.p)).collect();
        let covs = (0..self.k)
            .map(|j| {
                let c = avg(&|d| &d.cov[j], self.p * self.p);
                if self.p == 1 {
                    Covariance::Variance(c[0])
                } else {
                    Covariance::Matrix(DMatrix::from_row_slice(self.p, self.p, &c))
                }
            })
            .collect();
        let w = avg(&|d| &d.weights, self.k);
        let s: f64 = w.iter().sum();
        MixtureParams::from_parts(means, covs, w.iter().map(|v| v / s).collect())
    }
}

fn run_chain(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &PriorSpec,
    config: &SamplerConfig,
    init: Option<&MixtureParams>,
    chain: usize,
    keep: &[usize],
) -> Result<Vec<Draw>> {
    let mut rng = rng::stream(config.seed, rng::DOMAIN_GIBBS, chain as u64);
    let fixed = anchors.labels(data.n());
    let mut state = match init {
        Some(p) => ChainState::from_params(data, anchors, prior, p, &mut rng)?,
        None => ChainState::uniform(data, anchors, prior, &mut rng)?,
    };
    let mut out = Vec::with_capacity(keep.len());
    let mut next = keep.iter().peekable();
    for iteration in 1..=config.iterations {
        sweep(data, &fixed, prior, &mut state, &mut rng).map_err(|reason| Error::ChainFailure {
            chain,
            iteration,
            reason,
        })?;
        if next.peek() == Some(&&iteration) {
            next.next();
            for (i, f) in fixed.iter().enumerate() {
                if let Some(j) = f {
                    assert_eq!(state.labels[i], *j, "anchored row {i} changed label");
                }
            }
            out.push(Draw::from_state(chain, iteration, &state));
        }
    }
    Ok(out)
}

/// Run all chains (in parallel) and pool the thinned draws by chain index.
/// `init` is typically the anchored-EM MAP; chains then start from labels
/// drawn from its responsibilities.
pub fn gibbs_fit(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &PriorSpec,
    config: &SamplerConfig,
    init: Option<&MixtureParams>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    prior.validate(data.p())?;
    anchors.check_rows(data.n())?;
    let k = anchors.k();
    if k < 1 || anchors.nonempty() + 1 < k {
        return Err(Error::InvalidAnchors(format!(
            "{} of {k} components anchored; at least k - 1 are needed",
            anchors.nonempty()
        )));
    }
    if let Some(p) = init {
        if p.k() != k || p.dim() != data.p() {
            return Err(Error::InvalidParameter("initial parameters do not match k or p".into()));
        }
    }
    let keep = config.kept_iterations();
    let per_chain: Vec<Vec<Draw>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(data, anchors, prior, config, init, c, &keep))
        .collect::<Result<_>>()?;
    let surplus = config.chains * keep.len() - config.target_draws;
    let mut draws = Vec::with_capacity(config.target_draws);
    for (c, mut chain) in per_chain.into_iter().enumerate() {
        if c + surplus >= config.chains {
            chain.pop();
        }
        draws.extend(chain);
    }
    Ok(PosteriorDraws { k, p: data.p(), n: data.n(), draws })
}

fn header(k: usize, p: usize, n: usize, b0: bool) -> Vec<String> {
    let mut h = vec!["chain".to_string(), "iter".to_string()];
    for j in 1..=k {
        for d in 1..=p {
            h.push(if p == 1 { format!("theta_{j}") } else { format!("theta_{j}_{d}") });
        }
    }
    for j in 1..=k {
        if p == 1 {
            h.push(format!("sigma2_{j}"));
        } else {
            for a in 1..=p {
                for b in a..=p {
                    h.push(format!("sigma_{j}_{a}_{b}"));
                }
            }
        }
    }
    for j in 1..=k {
        h.push(format!("eta_{j}"));
    }
    if b0 {
        h.push("b0".into());
    }
    for i in 1..=n {
        h.push(format!("s_{i}"));
    }
    h
}

/// CSV with a leading `# schema:` line; columns `chain, iter`, then theta,
/// covariance (upper triangle), weights, `b0` when sampled and 1-based labels.
/// Chains and iterations are 1-based.
pub fn write_draws_csv<W: Write>(draws: &PosteriorDraws, mut out: W) -> Result<()> {
    writeln!(out, "# schema: {DRAWS_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    let (k, p) = (draws.k, draws.p);
    w.write_record(header(k, p, draws.n, draws.has_b0()))?;
    for d in &draws.draws {
        let mut rec = vec![(d.chain + 1).to_string(), d.iter.to_string()];
        rec.extend(d.theta.iter().flatten().map(|v| v.to_string()));
        for c in &d.cov {
            for a in 0..p {
                for b in a..p {
                    rec.push(c[a * p + b].to_string());
                }
            }
        }
        rec.extend(d.weights.iter().map(|v| v.to_string()));
        if let Some(b0) = d.b0 {
            rec.push(b0.to_string());
        }
        rec.extend(d.labels.iter().map(|l| (l + 1).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_draws_csv<R: BufRead>(mut input: R, k: usize, p: usize) -> Result<PosteriorDraws> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim() != format!("# schema: {DRAWS_SCHEMA}") {
        return Err(Error::Schema(format!("expected schema {DRAWS_SCHEMA}, found {:?}", first.trim())));
    }
    let mut r = csv::Reader::from_reader(input);
    let head = r.headers()?.clone();
    let b0 = head.iter().any(|h| h == "b0");
    let fixed = 2 + k * p + k * p * (p + 1) / 2 + k + usize::from(b0);
    if head.len() < fixed {
        return Err(Error::Schema("draws header is too short for k and p".into()));
    }
    let n = head.len() - fixed;
    if head.iter().collect::<Vec<_>>() != header(k, p, n, b0) {
        return Err(Error::Schema("draws header does not match k and p".into()));
    }
    let mut draws = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize| -> Result<f64> {
            rec[c].parse::<f64>().map_err(|e| Error::Parse {
                row: row + 1,
                column: head[c].to_string(),
                reason: e.to_string(),
            })
        };
        let mut c = 2;
        let mut take = |len: usize| -> Result<Vec<f64>> {
            let v = (c..c + len).map(&num).collect();
            c += len;
            v
        };
        let chain = num(0)? as usize - 1;
        let iter = num(1)? as usize;
        let theta = (0..k).map(|_| take(p)).collect::<Result<Vec<_>>>()?;
        let cov = (0..k)
            .map(|_| {
                let tri = take(p * (p + 1) / 2)?;
                let mut m = vec![0.0; p * p];
                let mut t = tri.iter();
                for a in 0..p {
                    for b in a..p {
                        let v = *t.next().expect("sized above");
                        m[a * p + b] = v;
                        m[b * p + a] = v;
                    }
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = take(k)?;
        let b0v = if b0 { Some(take(1)?[0]) } else { None };
        let labels = take(n)?.iter().map(|l| *l as u32 - 1).collect();
        draws.push(Draw { chain, iter, theta, cov, weights, b0: b0v, labels });
    }
    Ok(PosteriorDraws { k, p, n, draws })
}
