use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` observations in `p` dimensions, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    p: usize,
    ids: Vec<String>,
    groups: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, ids: Option<Vec<String>>, groups: Option<Vec<String>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        let p = rows[0].len();
        if p == 0 {
            return Err(Error::InvalidData("dataset has no columns".into()));
        }
        let mut values = Vec::with_capacity(n * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::InvalidData(format!("row {i} has {} values, expected {p}", row.len())));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite value at row {i}, column {c}")));
            }
            values.extend_from_slice(row);
        }
        let ids = match ids {
            Some(ids) => {
                if ids.len() != n {
                    return Err(Error::InvalidData(format!("{} ids for {n} rows", ids.len())));
                }
                let mut seen = HashSet::with_capacity(n);
                for id in &ids {
                    if !seen.insert(id.as_str()) {
                        return Err(Error::InvalidData(format!("duplicate id {id:?}")));
                    }
                }
                ids
            }
            None => (1..=n).map(|i| i.to_string()).collect(),
        };
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::InvalidData(format!("{} group tags for {n} rows", g.len())));
            }
        }
        Ok(Self { values, n, p, ids, groups })
    }

    pub fn univariate(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| vec![v]).collect(), None, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.p)
    }

    /// First coordinate of every row; the whole data for `p == 1`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.rows().map(|r| r[c]).collect()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn groups(&self) -> Option<&[String]> {
        self.groups.as_deref()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.p];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    /// Per-coordinate midpoint of the range.
    pub fn midpoint(&self) -> Vec<f64> {
        (0..self.p)
            .map(|c| {
                let col = self.column(c);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                0.5 * (lo + hi)
            })
            .collect()
    }

    /// Sample covariance (denominator `n - 1`, or `n` when `n == 1`).
    pub fn covariance(&self) -> Vec<f64> {
        let mean = self.mean();
        let p = self.p;
        let mut cov = vec![0.0; p * p];
        for r in self.rows() {
            for a in 0..p {
                for b in 0..p {
                    cov[a * p + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
                }
            }
        }
        let denom = if self.n > 1 { self.n - 1 } else { 1 } as f64;
        cov.iter_mut().for_each(|v| *v /= denom);
        cov
    }

    /// Rows `idx` as a new dataset, keeping ids and groups.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let rows = idx.iter().map(|&i| self.row(i).to_vec()).collect();
        let ids = idx.iter().map(|&i| self.ids[i].clone()).collect();
        let groups = self.groups.as_ref().map(|g| idx.iter().map(|&i| g[i].clone()).collect());
        Self::new(rows, Some(ids), groups)
    }
}
