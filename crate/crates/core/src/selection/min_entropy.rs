//! Minimum-entropy anchors: minimize the relabeling entropy over continuous
//! anchor coordinates, then snap each coordinate to an observation.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    anchor_values, quasi_consistency_alpha, relabeling_entropy, relabeling_probs, DEFAULT_FACTORIAL_CAP,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AnchorSet, MixtureParams};
use crate::rng;
use crate::selection::bfgs::{minimize, BfgsOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinEntropyConfig {
    pub opt_tol: f64,
    pub n_starts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub factorial_cap: usize,
    /// Polish each snapped set by single-row swaps while entropy decreases.
    pub refine: bool,
}

impl Default for MinEntropyConfig {
    fn default() -> Self {
        Self {
            opt_tol: 1e-10,
            n_starts: 20,
            max_iter: 500,
            seed: 0,
            factorial_cap: DEFAULT_FACTORIAL_CAP,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinEntropyResult {
    pub anchors: AnchorSet,
    /// Continuous optimum of the winning start, grouped by component.
    pub x_star: Vec<Vec<Vec<f64>>>,
    pub continuous_entropy: f64,
    /// Entropy of the snapped anchors.
    pub entropy: f64,
    pub alpha_hat: f64,
    /// Winning start; `None` when the supplied initial set was kept.
    pub chosen_start: Option<usize>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

fn entropy_of(values: &[Vec<Vec<f64>>], gamma: &MixtureParams, cap: usize) -> f64 {
    match relabeling_probs(values, gamma, cap) {
        Ok(d) => relabeling_entropy(&d),
        Err(_) => f64::INFINITY,
    }
}

fn group(x: &[f64], budgets: &[usize], p: usize) -> Vec<Vec<Vec<f64>>> {
    let mut it = x.chunks(p);
    budgets.iter().map(|&m| (0..m).map(|_| it.next().expect("slot count matches").to_vec()).collect()).collect()
}

/// Snap grouped anchor coordinates to distinct rows: repeatedly take the
/// closest (slot, row) pair among unfilled slots and free rows. Ties go to
/// the lower row, then the earlier slot.
pub fn snap(data: &Dataset, groups: &[Vec<Vec<f64>>]) -> Result<AnchorSet> {
    let slots: Vec<(usize, &[f64])> =
        groups.iter().enumerate().flat_map(|(j, g)| g.iter().map(move |x| (j, x.as_slice()))).collect();
    if slots.len() > data.n() {
        return Err(Error::InfeasibleBudget { requested: slots.len(), available: data.n() });
    }
    let mut pairs = Vec::with_capacity(slots.len() * data.n());
    for (s, (_, x)) in slots.iter().enumerate() {
        if x.len() != data.p() {
            return Err(Error::InvalidAnchors(format!("coordinate of dimension {} for p = {}", x.len(), data.p())));
        }
        for (i, y) in data.rows().enumerate() {
            let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
            pairs.push((d, i, s));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut taken = vec![false; data.n()];
    let mut filled = vec![false; slots.len()];
    let mut sets = vec![Vec::new(); groups.len()];
    for (_, i, s) in pairs {
        if !taken[i] && !filled[s] {
            taken[i] = true;
            filled[s] = true;
            sets[slots[s].0].push(i);
        }
    }
    AnchorSet::new(sets, data.n())
}

/// Coordinates live in the data's bounding box through a logistic map; left
/// unbounded the entropy keeps falling as anchors move off the data.
struct Bounds {
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl Bounds {
    fn of(data: &Dataset) -> Self {
        let (lo, width) = (0..data.p())
            .map(|c| {
                let col = data.column(c);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi - lo)
            })
            .unzip();
        Self { lo, width }
    }

    fn to_x(&self, u: &[f64]) -> Vec<f64> {
        let p = self.lo.len();
        u.iter().enumerate().map(|(d, v)| self.lo[d % p] + self.width[d % p] / (1.0 + (-v).exp())).collect()
    }

    fn to_u(&self, x: &[f64]) -> Vec<f64> {
        let p = self.lo.len();
        x.iter()
            .enumerate()
            .map(|(d, v)| {
                if self.width[d % p] == 0.0 {
                    return 0.0;
                }
                let t = ((v - self.lo[d % p]) / self.width[d % p]).clamp(1e-6, 1.0 - 1e-6);
                (t / (1.0 - t)).ln()
            })
            .collect()
    }
}

/// First-improvement swap search: replace one anchor by a free row whenever
/// that lowers the entropy, until no single swap helps.
fn refine(
    data: &Dataset,
    gamma: &MixtureParams,
    anchors: AnchorSet,
    entropy: f64,
    cap: usize,
) -> Result<(AnchorSet, f64)> {
    let mut sets = anchors.sets().to_vec();
    let mut best = entropy;
    let mut taken = vec![false; data.n()];
    sets.iter().flatten().for_each(|&i| taken[i] = true);
    loop {
        let mut improved = false;
        for j in 0..sets.len() {
            for s in 0..sets[j].len() {
                for i in 0..data.n() {
                    if taken[i] {
                        continue;
                    }
                    let old = sets[j][s];
                    sets[j][s] = i;
                    let values: Vec<Vec<Vec<f64>>> =
                        sets.iter().map(|set| set.iter().map(|&r| data.row(r).to_vec()).collect()).collect();
                    let h = entropy_of(&values, gamma, cap);
                    if h < best - 1e-15 {
                        best = h;
                        taken[old] = false;
                        taken[i] = true;
                        improved = true;
                    } else {
                        sets[j][s] = old;
                    }
                }
            }
        }
        if !improved {
            return Ok((AnchorSet::new(sets, data.n())?, best));
        }
    }
}

struct Candidate {
    start: Option<usize>,
    anchors: AnchorSet,
    x: Vec<Vec<Vec<f64>>>,
    continuous: f64,
    entropy: f64,
    converged: bool,
}

/// Minimum-entropy anchor selection at the plug-in `gamma_hat`. The
/// continuous search is restricted to the bounding box of the data. When
/// `initial` is given (typically the anchored-EM sets) it seeds an extra
/// start and is itself a candidate, so the result never has higher entropy.
pub fn min_entropy_select(
    data: &Dataset,
    gamma_hat: &MixtureParams,
    budgets: &[usize],
    initial: Option<&AnchorSet>,
    config: &MinEntropyConfig,
) -> Result<MinEntropyResult> {
    let k = gamma_hat.k();
    let p = data.p();
    if budgets.len() != k {
        return Err(Error::InvalidParameter(format!("{} budgets for k = {k}", budgets.len())));
    }
    if gamma_hat.dim() != p {
        return Err(Error::InvalidParameter("gamma_hat dimension does not match the data".into()));
    }
    if !(config.opt_tol > 0.0) {
        return Err(Error::InvalidParameter("opt_tol must be positive".into()));
    }
    let m: usize = budgets.iter().sum();
    if m == 0 {
        return Err(Error::InvalidParameter("no anchors requested".into()));
    }
    if m > data.n() {
        return Err(Error::InfeasibleBudget { requested: m, available: data.n() });
    }
    if (1..=k).try_fold(1usize, |a, v| a.checked_mul(v)).is_none_or(|f| f > config.factorial_cap) {
        return Err(Error::FactorialCap { k, cap: config.factorial_cap });
    }
    if let Some(a) = initial {
        a.check_rows(data.n())?;
        if a.sizes() != budgets {
            return Err(Error::InvalidAnchors("initial anchor sizes differ from the budgets".into()));
        }
    }
    let cap = config.factorial_cap;
    let bounds = Bounds::of(data);
    let objective = |u: &[f64]| entropy_of(&group(&bounds.to_x(u), budgets, p), gamma_hat, cap);
    let opts = BfgsOptions { tol: config.opt_tol, max_iter: config.max_iter };

    let run = |start: Option<usize>, rows: Vec<usize>| -> Result<Candidate> {
        let x0: Vec<f64> = rows.iter().flat_map(|&i| data.row(i).to_vec()).collect();
        let r = minimize(objective, &bounds.to_u(&x0), opts);
        let x = group(&bounds.to_x(&r.x), budgets, p);
        let mut anchors = snap(data, &x)?;
        let mut entropy = entropy_of(&anchor_values(data, &anchors), gamma_hat, cap);
        if config.refine {
            (anchors, entropy) = refine(data, gamma_hat, anchors, entropy, cap)?;
        }
        Ok(Candidate { start, anchors, x, continuous: r.value, entropy, converged: r.converged })
    };

    let mut candidates: Vec<Candidate> = (0..config.n_starts)
        .into_par_iter()
        .map(|s| {
            let mut rng = rng::stream(config.seed, rng::DOMAIN_MIN_ENTROPY, s as u64);
            run(Some(s), sample(&mut rng, data.n(), m).into_vec())
        })
        .collect::<Result<_>>()?;
    if let Some(a) = initial {
        let rows: Vec<usize> = a.sets().iter().flatten().copied().collect();
        let mut seeded = run(Some(config.n_starts), rows)?;
        seeded.start = Some(config.n_starts);
        candidates.push(seeded);
        let values = anchor_values(data, a);
        let mut anchors = a.clone();
        let mut entropy = entropy_of(&values, gamma_hat, cap);
        if config.refine {
            (anchors, entropy) = refine(data, gamma_hat, anchors, entropy, cap)?;
        }
        candidates.push(Candidate { start: None, anchors, x: values, continuous: entropy, entropy, converged: true });
    }
    // Lowest snapped entropy wins; earlier candidates win ties.
    let best = candidates
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.entropy.total_cmp(&b.entropy).then(ia.cmp(ib)))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidParameter("min-entropy search needs at least one start".into()))?;
    let any_converged = candidates.iter().any(|c| c.converged && c.start.is_some());
    let best = candidates.swap_remove(best);
    let mut warnings = Vec::new();
    if !best.converged {
        warnings.push("optimizer did not converge for the selected start".to_string());
    }
    if !any_converged {
        warnings.push("no start converged within max_iter".to_string());
    }
    let dist = relabeling_probs(&anchor_values(data, &best.anchors), gamma_hat, cap)?;
    // Relabel so the most probable relabeling is the identity: set j moves to
    // the component that explains it. Entropy and alpha are unchanged.
    let top = dist.permutation(dist.top(1)[0]);
    let mut sets = vec![Vec::new(); k];
    let mut x_star = vec![Vec::new(); k];
    for (j, &l) in top.iter().enumerate() {
        sets[l] = best.anchors.set(j).to_vec();
        x_star[l] = best.x[j].clone();
    }
    Ok(MinEntropyResult {
        alpha_hat: quasi_consistency_alpha(&dist),
        anchors: AnchorSet::new(sets, data.n())?,
        x_star,
        continuous_entropy: best.continuous,
        entropy: best.entropy,
        chosen_start: best.start,
        converged: best.converged,
        warnings,
    })
}
