//! SMOTE oversampling of the minority class. Applied to training rows only.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Minority:majority ratio after resampling.
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig { k_neighbors: 5, target_ratio: 1.0, seed: 0 }
    }
}

/// One synthetic row: `x[base] + u * (x[neighbor] - x[base])`, indices into
/// the input rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    pub base: usize,
    pub neighbor: usize,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    /// Input rows first, in input order, then synthetic rows.
    pub x: Matrix,
    pub y: Vec<u8>,
    pub synthetic: Vec<Synthetic>,
    /// The input already met the target ratio; output equals input.
    pub already_balanced: bool,
}

/// Number of synthetic minority rows needed to reach `ratio`.
pub fn synthetic_count(minority: usize, majority: usize, ratio: f64) -> usize {
    let target = (ratio * majority as f64 - 1e-9).ceil().max(0.0) as usize;
    target.saturating_sub(minority)
}

/// Indices of the `k` nearest other rows among `idx` for every member of
/// `idx` (Euclidean; ties broken by lower index).
fn neighbors(x: &Matrix, idx: &[usize], k: usize) -> Vec<Vec<usize>> {
    idx.par_iter()
        .map(|&i| {
            let mut d: Vec<(f64, usize)> = idx.iter().filter(|&&j| j != i).map(|&j| (sq_dist(x.row(i), x.row(j)), j)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.truncate(k);
            d.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn smote(x: &Matrix, y: &[u8], cfg: &SmoteConfig) -> Result<Resampled> {
    if cfg.k_neighbors == 0 || !(cfg.target_ratio > 0.0 && cfg.target_ratio <= 1.0) {
        return Err(Error::InvalidConfig(format!("SMOTE needs k >= 1 and ratio in (0, 1], got k={} ratio={}", cfg.k_neighbors, cfg.target_ratio)));
    }
    assert_eq!(x.nrows(), y.len(), "smote rows");
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("SMOTE input has missing or non-finite values".into()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    let neg = y.len() - pos;
    let (minority_label, minority, majority) = if pos <= neg { (1u8, pos, neg) } else { (0u8, neg, pos) };
    let need = synthetic_count(minority, majority, cfg.target_ratio);
    if need == 0 {
        return Ok(Resampled { x: x.clone(), y: y.to_vec(), synthetic: vec![], already_balanced: true });
    }
    if minority <= cfg.k_neighbors {
        return Err(Error::TooFewMinority { minority, k: cfg.k_neighbors });
    }
    let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == minority_label).collect();
    let nn = neighbors(x, &idx, cfg.k_neighbors);
    let mut rng = seed::rng(cfg.seed);
    let mut out = x.clone();
    let mut synthetic = Vec::with_capacity(need);
    let mut row = vec![0.0; x.ncols()];
    for _ in 0..need {
        let b = rng.random_range(0..idx.len());
        let nb = nn[b][rng.random_range(0..nn[b].len())];
        let u: f64 = rng.random();
        let (xb, xn) = (x.row(idx[b]), x.row(nb));
        for j in 0..row.len() {
            row[j] = xb[j] + u * (xn[j] - xb[j]);
        }
        out.push_row(&row);
        synthetic.push(Synthetic { base: idx[b], neighbor: nb, u });
    }
    let mut y2 = y.to_vec();
    y2.resize(y.len() + need, minority_label);
    Ok(Resampled { x: out, y: y2, synthetic, already_balanced: false })
}
