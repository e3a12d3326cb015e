//! Predictive study for two-component location mixtures: for each data set
//! and anchor count `m`, pick the anchor model with the highest marginal
//! likelihood and score it by expected log pointwise predictive density
//! (ELPPD) on replicate data from the same generating cell.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, LN_2PI};
use crate::model::enumerate::{enumerate_posterior, LocationPrior};
use crate::model::AnchorSet;
use crate::rng;

pub const SIM_SCHEMA: &str = "anchormix.sim/v1";
pub const TRANSFORM: &str = "y = z if c = 1; y = sigma * z + delta if c = 2";
/// Largest number of anchor models searched for a single `m`.
pub const SEARCH_GUARD: f64 = 1e6;
const MAX_TABLE_BITS: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    /// Data sets per cell (`J`).
    pub datasets: usize,
    pub n: usize,
    /// Replicate data sets per ELPPD estimate.
    pub replicates: usize,
    /// Posterior draws per ELPPD estimate (`T`).
    pub posterior_draws: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    /// Desk scale.
    fn default() -> Self {
        Self {
            deltas: vec![0.25, 1.75, 2.75],
            sigmas: vec![0.1, 1.0],
            datasets: 100,
            n: 10,
            replicates: 100,
            posterior_draws: 500,
            m_min: 2,
            m_max: 10,
            prior_mean: 0.0,
            prior_var: 25.0,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn paper_scale() -> Self {
        Self { datasets: 1000, replicates: 1000, posterior_draws: 3000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.deltas.is_empty() || self.sigmas.is_empty() {
            return bad("delta and sigma grids must be non-empty".into());
        }
        if self.sigmas.iter().any(|s| !(*s > 0.0)) || self.deltas.iter().any(|d| !d.is_finite()) {
            return bad("sigma values must be positive and deltas finite".into());
        }
        if self.datasets == 0 || self.replicates == 0 || self.posterior_draws == 0 {
            return bad("datasets, replicates and posterior_draws must be positive".into());
        }
        if self.m_min < 2 || self.m_max < self.m_min || self.m_max > self.n {
            return bad(format!("m range {}..={} must lie in 2..={}", self.m_min, self.m_max, self.n));
        }
        if !(self.prior_var > 0.0) {
            return bad("prior variance must be positive".into());
        }
        for m in self.m_min..=self.m_max {
            check_guard(self.n, m)?;
        }
        Ok(())
    }
}

fn check_guard(n: usize, m: usize) -> Result<()> {
    if n > MAX_TABLE_BITS {
        return Err(Error::SearchTooLarge(format!("n = {n} exceeds {MAX_TABLE_BITS}; use a smaller n")));
    }
    let subsets = (0..m).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let models = subsets * (2f64.powi(m as i32 - 1) - 1.0);
    if models > SEARCH_GUARD {
        return Err(Error::SearchTooLarge(format!("{models:.0} anchor models for n = {n}, m = {m}; reduce n or m")));
    }
    Ok(())
}

/// Standardized values `z` and true labels `c` (1 or 2), one row per data set.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterBatch {
    pub z: Vec<Vec<f64>>,
    pub c: Vec<Vec<u8>>,
}

impl MasterBatch {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

fn batch_from<R: Rng>(count: usize, n: usize, rng: &mut R) -> MasterBatch {
    let mut z = Vec::with_capacity(count);
    let mut c = Vec::with_capacity(count);
    for _ in 0..count {
        z.push((0..n).map(|_| rng.sample(StandardNormal)).collect());
        c.push((0..n).map(|_| 1 + u8::from(rng.random::<bool>())).collect());
    }
    MasterBatch { z, c }
}

pub fn make_master_batch(count: usize, n: usize, seed: u64) -> MasterBatch {
    batch_from(count, n, &mut rng::stream(seed, rng::DOMAIN_MASTER, 0))
}

/// Replicate batch shared by every cell and data set.
pub fn make_replicate_batch(count: usize, n: usize, seed: u64) -> MasterBatch {
    batch_from(count, n, &mut rng::stream(seed, rng::DOMAIN_REPLICATE, 0))
}

pub fn transform_batch(batch: &MasterBatch, delta: f64, sigma: f64) -> Vec<Vec<f64>> {
    batch
        .z
        .iter()
        .zip(&batch.c)
        .map(|(z, c)| z.iter().zip(c).map(|(&z, &c)| if c == 1 { z } else { sigma * z + delta }).collect())
        .collect()
}

/// `log m(y|s)` for every two-component allocation, bit `i` of the index set
/// when row `i` is in component 2.
fn allocation_table(ys: &[f64], prior: &LocationPrior, sigma2: f64) -> Vec<f64> {
    let n = ys.len();
    (0..1usize << n)
        .map(|s| {
            let mut stats = [(0usize, 0.0f64, 0.0f64); 2];
            for (i, y) in ys.iter().enumerate() {
                let g = &mut stats[(s >> i) & 1];
                g.0 += 1;
                g.1 += y;
                g.2 += y * y;
            }
            stats
                .iter()
                .enumerate()
                .filter(|(_, g)| g.0 > 0)
                .map(|(j, &(c, sum, sumsq))| {
                    let pr = prior.component(j);
                    let c = c as f64;
                    let ybar = sum / c;
                    let wss = (sumsq - c * ybar * ybar).max(0.0);
                    let spread = c * pr.var + sigma2;
                    -0.5 * c * (LN_2PI + sigma2.ln())
                        - 0.5 * (spread / sigma2).ln()
                        - 0.5 * (wss / sigma2 + c * (ybar - pr.mean).powi(2) / spread)
                })
                .sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestAnchorModel {
    pub anchors: AnchorSet,
    /// `log m_A(y)` with equal weights.
    pub log_marginal: f64,
}

fn sets_of(mask: usize, comp2: usize, n: usize) -> [Vec<usize>; 2] {
    let a1 = (0..n).filter(|&i| (mask >> i) & 1 == 1 && (comp2 >> i) & 1 == 0).collect();
    let a2 = (0..n).filter(|&i| (comp2 >> i) & 1 == 1).collect();
    [a1, a2]
}

fn search_table(table: &[f64], n: usize, m: usize) -> Result<BestAnchorModel> {
    let full = (1usize << n) - 1;
    let mut best: Option<(f64, [Vec<usize>; 2])> = None;
    let mut terms = Vec::with_capacity(1 << (n - m));
    for mask in (0..=full).filter(|s: &usize| s.count_ones() as usize == m) {
        let low = mask & mask.wrapping_neg();
        let rest = mask & !low;
        let free = full & !mask;
        // comp2 ranges over non-empty subsets of the anchors that exclude the lowest one.
        let mut sub = rest;
        while sub != 0 {
            terms.clear();
            let mut f = free;
            loop {
                terms.push(table[sub | f]);
                if f == 0 {
                    break;
                }
                f = (f - 1) & free;
            }
            let score = log_sum_exp(&terms) - (n - m) as f64 * 2f64.ln();
            let sets = sets_of(mask, sub, n);
            let better = match &best {
                None => true,
                Some((b, bs)) => score > *b || (score == *b && sets < *bs),
            };
            if better {
                best = Some((score, sets));
            }
            sub = (sub - 1) & rest;
        }
    }
    let (log_marginal, sets) = best.ok_or_else(|| Error::InvalidParameter(format!("no anchor model with m = {m}")))?;
    Ok(BestAnchorModel { anchors: AnchorSet::new(sets.to_vec(), n)?, log_marginal })
}

/// Highest-marginal-likelihood canonical anchor model with `m` anchors and
/// both components anchored (`sigma^2 = 1`, equal weights). Ties go to the
/// lexicographically smallest `(A_1, A_2)`.
pub fn best_anchor_model(data: &Dataset, m: usize, prior: &LocationPrior) -> Result<BestAnchorModel> {
    best_anchor_models(data, &[m], prior).map(|mut v| v.remove(0))
}

/// As [`best_anchor_model`] for several `m`, sharing one allocation table.
pub fn best_anchor_models(data: &Dataset, ms: &[usize], prior: &LocationPrior) -> Result<Vec<BestAnchorModel>> {
    if data.p() != 1 || prior.k() != 2 {
        return Err(Error::InvalidParameter("best anchor search is for univariate k = 2 models".into()));
    }
    let n = data.n();
    for &m in ms {
        if m < 2 || m > n {
            return Err(Error::InvalidParameter(format!("m = {m} must lie in 2..={n}")));
        }
        check_guard(n, m)?;
    }
    let table = allocation_table(&data.column(0), prior, 1.0);
    ms.iter().map(|&m| search_table(&table, n, m)).collect()
}

/// ELPPD from given draws of the component means (equal weights, unit
/// variance): the replicate-average of `sum_k log(T^-1 sum_t f(y_k | theta_t))`.
pub fn elppd_from_draws(draws: &[Vec<f64>], replicates: &[Vec<f64>]) -> f64 {
    let t = draws.len() as f64;
    let k = draws[0].len() as f64;
    let norm = -0.5 * LN_2PI - k.ln() - t.ln();
    let mut total = 0.0;
    for rep in replicates {
        for &y in rep {
            let direct: f64 = draws.iter().flatten().map(|theta| (-0.5 * (y - theta).powi(2)).exp()).sum();
            total += norm
                + if direct.is_normal() {
                    direct.ln()
                } else {
                    // Far in the tails every kernel underflows.
                    let lp: Vec<f64> = draws.iter().flatten().map(|theta| -0.5 * (y - theta).powi(2)).collect();
                    log_sum_exp(&lp)
                };
        }
    }
    total / replicates.len() as f64
}

/// Exact posterior draws of the means: allocation from the enumerated
/// posterior, then the conjugate Normal given that allocation.
pub fn posterior_draws<R: Rng>(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let post = enumerate_posterior(data, anchors, prior, 1.0)?;
    let cum = post.cumulative_weights();
    let total = *cum.last().expect("posterior has terms");
    Ok((0..count)
        .map(|_| {
            let u = rng.random::<f64>() * total;
            let idx = cum.partition_point(|c| *c <= u).min(cum.len() - 1);
            post.terms[idx]
                .components
                .iter()
                .map(|c| c.mean + c.var.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect())
}

pub fn elppd<R: Rng>(
    data: &Dataset,
    anchors: &AnchorSet,
    prior: &LocationPrior,
    replicates: &[Vec<f64>],
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if replicates.is_empty() || draws == 0 {
        return Err(Error::InvalidParameter("ELPPD needs replicates and draws".into()));
    }
    Ok(elppd_from_draws(&posterior_draws(data, anchors, prior, draws, rng)?, replicates))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRow {
    pub delta: f64,
    pub sigma: f64,
    pub m: usize,
    /// 1-based.
    pub dataset_id: usize,
    pub elppd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub delta: f64,
    pub sigma: f64,
    pub m: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub schema: String,
    pub transform: String,
    pub config: SimConfig,
    pub cells: Vec<BoxStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResults {
    pub rows: Vec<SimRow>,
    pub summary: SimSummary,
}

impl SimResults {
    pub fn cell(&self, delta: f64, sigma: f64, m: usize) -> Option<&BoxStats> {
        self.summary.cells.iter().find(|c| c.delta == delta && c.sigma == sigma && c.m == m)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(delta: f64, sigma: f64, m: usize, values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BoxStats {
        delta,
        sigma,
        m,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        min: v[0],
        max: v[v.len() - 1],
    }
}

/// Full factorial over `(delta, sigma, dataset, m)`. Output rows are ordered
/// by `(delta, sigma, m, dataset)`.
pub fn run_simulation(config: &SimConfig) -> Result<SimResults> {
    config.validate()?;
    let prior = LocationPrior::exchangeable(config.prior_mean, config.prior_var, 2)?;
    let master = make_master_batch(config.datasets, config.n, config.seed);
    let replicate = make_replicate_batch(config.replicates, config.n, config.seed);
    let ms: Vec<usize> = (config.m_min..=config.m_max).collect();
    let cells: Vec<(f64, f64)> =
        config.deltas.iter().flat_map(|&d| config.sigmas.iter().map(move |&s| (d, s))).collect();
    let units: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..config.datasets).map(move |j| (c, j))).collect();
    let per_unit: Vec<Vec<f64>> = units
        .par_iter()
        .map(|&(c, j)| {
            let (delta, sigma) = cells[c];
            let ys = &transform_batch(
                &MasterBatch { z: vec![master.z[j].clone()], c: vec![master.c[j].clone()] },
                delta,
                sigma,
            )[0];
            let data = Dataset::univariate(ys)?;
            let reps = transform_batch(&replicate, delta, sigma);
            let best = best_anchor_models(&data, &ms, &prior)?;
            best.iter()
                .enumerate()
                .map(|(mi, b)| {
                    let index = ((c * config.datasets + j) * ms.len() + mi) as u64;
                    let mut rng = rng::stream(config.seed, rng::DOMAIN_POSTERIOR, index);
                    elppd(&data, &b.anchors, &prior, &reps, config.posterior_draws, &mut rng)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(units.len() * ms.len());
    let mut stats = Vec::new();
    for (c, &(delta, sigma)) in cells.iter().enumerate() {
        for (mi, &m) in ms.iter().enumerate() {
            let values: Vec<f64> = (0..config.datasets).map(|j| per_unit[c * config.datasets + j][mi]).collect();
            rows.extend(values.iter().enumerate().map(|(j, &elppd)| SimRow {
                delta,
                sigma,
                m,
                dataset_id: j + 1,
                elppd,
            }));
            stats.push(box_stats(delta, sigma, m, &values));
        }
    }
    Ok(SimResults {
        rows,
        summary: SimSummary {
            schema: SIM_SCHEMA.into(),
            transform: TRANSFORM.into(),
            config: config.clone(),
            cells: stats,
        },
    })
}

/// Columns `delta, sigma, m, dataset_id, elppd`.
pub fn write_sim_csv<W: Write>(rows: &[SimRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
