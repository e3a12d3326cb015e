//! Posterior summaries: moments, histograms, Gaussian KDEs and group
//! allocation tables. Values are sorted before any reduction so results do
//! not depend on draw order.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gibbs::PosteriorDraws;

pub const SUMMARY_SCHEMA: &str = "anchormix.summary/v1";
pub const KDE_GRID_POINTS: usize = 512;
pub const PAIR_GRID_POINTS: usize = 64;
pub const HISTOGRAM_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub mean: f64,
    pub sd: f64,
    pub histogram: Histogram,
    /// `None` for constant draws.
    pub kde: Option<Kde>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    /// 1-based.
    pub component: usize,
    pub theta: Vec<Marginal>,
    /// Standard deviations: `sigma_j`, or the square roots of the diagonal of `Sigma_j`.
    pub sigma: Vec<Marginal>,
    pub weight: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGrid {
    pub component: usize,
    /// 1-based coordinates of theta.
    pub dims: (usize, usize),
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `density[a][b]` at `(x[a], y[b])`.
    pub density: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeSettings {
    pub kernel: String,
    pub bandwidth: String,
    pub grid_points: usize,
    pub pair_grid_points: usize,
    pub histogram_bins: usize,
}

impl Default for KdeSettings {
    fn default() -> Self {
        Self {
            kernel: "gaussian".into(),
            bandwidth: "silverman".into(),
            grid_points: KDE_GRID_POINTS,
            pair_grid_points: PAIR_GRID_POINTS,
            histogram_bins: HISTOGRAM_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub schema: String,
    pub k: usize,
    pub p: usize,
    pub draws: usize,
    pub kde: KdeSettings,
    pub components: Vec<ComponentSummary>,
    pub b0: Option<Marginal>,
    pub pairwise: Vec<PairGrid>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn silverman(sorted: &[f64], sd: f64) -> f64 {
    let iqr = quantile(sorted, 0.75) - quantile(sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (sorted.len() as f64).powf(-0.2)
}

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points).map(|g| lo + (hi - lo) * g as f64 / (points - 1) as f64).collect()
}

/// `kernel[g][i] = phi_h(grid[g] - v[i])`.
fn kernel_matrix(v: &[f64], h: f64, at: &[f64]) -> DMatrix<f64> {
    let c = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    DMatrix::from_fn(at.len(), v.len(), |g, i| c * (-0.5 * ((at[g] - v[i]) / h).powi(2)).exp())
}

fn histogram(sorted: &[f64]) -> Histogram {
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi == lo {
        return Histogram { edges: vec![lo, hi], counts: vec![sorted.len()] };
    }
    let edges = grid(lo, hi, HISTOGRAM_BINS + 1);
    let mut counts = vec![0; HISTOGRAM_BINS];
    for v in sorted {
        let b = (((v - lo) / (hi - lo)) * HISTOGRAM_BINS as f64) as usize;
        counts[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Histogram { edges, counts }
}

/// Mean, sd, histogram and KDE of a scalar sample.
pub fn marginal(values: Vec<f64>) -> Marginal {
    let v = sorted(values);
    let (mean, sd) = moments(&v);
    let kde = (sd > 0.0).then(|| {
        let h = silverman(&v, sd);
        let g = grid(v[0] - 3.0 * h, v[v.len() - 1] + 3.0 * h, KDE_GRID_POINTS);
        let k = kernel_matrix(&v, h, &g);
        let n = v.len() as f64;
        let density = k.row_iter().map(|r| r.sum() / n).collect();
        Kde { bandwidth: h, grid: g, density }
    });
    Marginal { mean, sd, histogram: histogram(&v), kde }
}

fn pair_grid(component: usize, dims: (usize, usize), mut pairs: Vec<(f64, f64)>) -> Option<PairGrid> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let axis = |v: &[f64]| {
        let s = sorted(v.to_vec());
        let (_, sd) = moments(&s);
        (sd > 0.0).then(|| {
            // Two-dimensional Silverman/Scott factor n^(-1/6).
            let h = sd * (s.len() as f64).powf(-1.0 / 6.0);
            (h, grid(s[0] - 3.0 * h, s[s.len() - 1] + 3.0 * h, PAIR_GRID_POINTS))
        })
    };
    let (hx, gx) = axis(&xs)?;
    let (hy, gy) = axis(&ys)?;
    let kx = kernel_matrix(&xs, hx, &gx);
    let ky = kernel_matrix(&ys, hy, &gy);
    let d = kx * ky.transpose() / xs.len() as f64;
    Some(PairGrid {
        component,
        dims,
        x: gx,
        y: gy,
        density: d.row_iter().map(|r| r.iter().cloned().collect()).collect(),
    })
}

pub fn summarize(draws: &PosteriorDraws) -> Result<PosteriorSummary> {
    if draws.draws.is_empty() {
        return Err(Error::InvalidParameter("cannot summarize an empty draw set".into()));
    }
    let (k, p) = (draws.k, draws.p);
    let col = |f: &dyn Fn(&crate::gibbs::Draw) -> f64| -> Vec<f64> { draws.draws.iter().map(f).collect() };
    let components = (0..k)
        .map(|j| ComponentSummary {
            component: j + 1,
            theta: (0..p).map(|d| marginal(col(&|x| x.theta[j][d]))).collect(),
            sigma: (0..p).map(|d| marginal(col(&|x| x.cov[j][d * p + d].sqrt()))).collect(),
            weight: marginal(col(&|x| x.weights[j])),
        })
        .collect();
    let b0 = draws.has_b0().then(|| marginal(col(&|x| x.b0.unwrap_or(f64::NAN))));
    let mut pairwise = Vec::new();
    for j in 0..k {
        for a in 0..p {
            for b in a + 1..p {
                let pairs = draws.draws.iter().map(|x| (x.theta[j][a], x.theta[j][b])).collect();
                pairwise.extend(pair_grid(j + 1, (a + 1, b + 1), pairs));
            }
        }
    }
    Ok(PosteriorSummary {
        schema: SUMMARY_SCHEMA.into(),
        k,
        p,
        draws: draws.draws.len(),
        kde: KdeSettings::default(),
        components,
        b0,
        pairwise,
    })
}

/// `probs[i][j]`: share of draws with `s_i = j`.
pub fn allocation_probabilities(draws: &PosteriorDraws) -> Vec<Vec<f64>> {
    let t = draws.draws.len() as f64;
    let mut counts = vec![vec![0usize; draws.k]; draws.n];
    for d in &draws.draws {
        for (i, &l) in d.labels.iter().enumerate() {
            counts[i][l as usize] += 1;
        }
    }
    counts.iter().map(|row| row.iter().map(|&c| c as f64 / t).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTable {
    /// Groups in order of first appearance.
    pub groups: Vec<String>,
    pub probs: Vec<Vec<f64>>,
}

/// Per-group average of the per-row allocation frequencies.
pub fn allocation_table(draws: &PosteriorDraws, data: &Dataset) -> Result<AllocationTable> {
    let groups = data.groups().ok_or_else(|| Error::InvalidData("allocation table needs a group column".into()))?;
    if data.n() != draws.n || draws.draws.is_empty() {
        return Err(Error::InvalidData("draws do not match the dataset".into()));
    }
    let per_row = allocation_probabilities(draws);
    let mut names: Vec<String> = Vec::new();
    let mut sums: Vec<(Vec<f64>, usize)> = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let idx = match names.iter().position(|n| n == g) {
            Some(idx) => idx,
            None => {
                names.push(g.clone());
                sums.push((vec![0.0; draws.k], 0));
                names.len() - 1
            }
        };
        sums[idx].0.iter_mut().zip(&per_row[i]).for_each(|(s, v)| *s += v);
        sums[idx].1 += 1;
    }
    Ok(AllocationTable {
        groups: names,
        probs: sums.into_iter().map(|(s, c)| s.iter().map(|v| v / c as f64).collect()).collect(),
    })
}
