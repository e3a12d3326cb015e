//! Anchor assignment for the E-step: choose disjoint `A_j` with `|A_j| = m_j`
//! maximizing a per-(row, component) score. The exact solver replicates
//! component `j` into `m_j` slots and solves the resulting rectangular
//! min-cost assignment with the Hungarian method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnchorSet, ResponsibilityMatrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignSolver {
    #[default]
    Exact,
    Greedy,
}

/// Scores below this are treated as this (keeps the solver finite when a
/// log-responsibility is `-inf`).
const SCORE_FLOOR: f64 = -1e9;

/// Anchors maximizing `sum_j sum_{i in A_j} r_ij`.
pub fn e_step_assign(resp: &ResponsibilityMatrix, budgets: &[usize], solver: AssignSolver) -> Result<AnchorSet> {
    assign_by_scores(resp.values(), resp.n(), resp.k(), budgets, solver)
}

/// Anchors maximizing the summed `scores` (row-major `n x k`).
pub fn assign_by_scores(
    scores: &[f64],
    n: usize,
    k: usize,
    budgets: &[usize],
    solver: AssignSolver,
) -> Result<AnchorSet> {
    if scores.len() != n * k {
        return Err(Error::InvalidParameter(format!("score matrix has {} entries, expected {n} x {k}", scores.len())));
    }
    if budgets.len() != k {
        return Err(Error::InvalidParameter(format!("{} budgets for {k} components", budgets.len())));
    }
    let m: usize = budgets.iter().sum();
    if m > n {
        return Err(Error::InfeasibleBudget { requested: m, available: n });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidParameter("NaN assignment score".into()));
    }
    let sets = match solver {
        AssignSolver::Exact => exact(scores, n, k, budgets),
        AssignSolver::Greedy => greedy(scores, n, k, budgets),
    };
    AnchorSet::new(sets, n)
}

pub fn assignment_objective(scores: &[f64], k: usize, anchors: &AnchorSet) -> f64 {
    anchors.sets().iter().enumerate().flat_map(|(j, s)| s.iter().map(move |&i| scores[i * k + j])).sum()
}

fn greedy(scores: &[f64], n: usize, k: usize, budgets: &[usize]) -> Vec<Vec<usize>> {
    let m: usize = budgets.iter().sum();
    let mut sets = vec![Vec::new(); k];
    let mut taken = vec![false; n];
    for _ in 0..m {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| !taken[i]) {
            for j in (0..k).filter(|&j| sets[j].len() < budgets[j]) {
                let s = scores[i * k + j];
                if best.is_none_or(|(_, _, b)| s > b) {
                    best = Some((i, j, s));
                }
            }
        }
        let (i, j, _) = best.expect("budget total is at most n");
        taken[i] = true;
        sets[j].push(i);
    }
    sets
}

fn exact(scores: &[f64], n: usize, k: usize, budgets: &[usize]) -> Vec<Vec<usize>> {
    let slots: Vec<usize> = (0..k).flat_map(|j| std::iter::repeat_n(j, budgets[j])).collect();
    let mut sets = vec![Vec::new(); k];
    if slots.is_empty() {
        return sets;
    }
    let cost: Vec<Vec<f64>> =
        slots.iter().map(|&j| (0..n).map(|i| -scores[i * k + j].max(SCORE_FLOOR)).collect()).collect();
    for (slot, col) in hungarian(&cost).into_iter().enumerate() {
        sets[slots[slot]].push(col);
    }
    sets
}

/// Min-cost assignment of every row to a distinct column, `rows <= cols`.
/// Shortest augmenting paths with potentials, `O(rows^2 cols)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let rows = cost.len();
    let cols = cost[0].len();
    assert!(rows <= cols, "more rows than columns");
    // 1-based; column 0 is the virtual root.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        owner[0] = r;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}
