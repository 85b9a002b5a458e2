//! Shapley attributions under the interventional (marginal) value function
//! `v(S) = mean_b f(x_S, b_notS)`: exact enumeration and Kernel SHAP.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cholesky_solve, Matrix};
use crate::seed;

pub const EXACT_MAX_FEATURES: usize = 20;
pub const KERNEL_MAX_FEATURES: usize = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapMode {
    Exact,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub source: String,
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub base_value: f64,
    /// Explained rows by features.
    pub values: Matrix,
    pub feature_names: Vec<String>,
    pub background: BackgroundSpec,
    pub mode: ShapMode,
}

/// `v(S)` for one explained row, `S` given as a bitmask.
fn value<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], bg: &Matrix, mask: u64, buf: &mut [f64]) -> f64 {
    let p = x.len();
    let mut s = 0.0;
    for b in bg.rows_iter() {
        for j in 0..p {
            buf[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
        }
        s += f(buf);
    }
    s / bg.nrows() as f64
}

fn mean_output<F: Fn(&[f64]) -> f64>(f: &F, bg: &Matrix) -> f64 {
    bg.rows_iter().map(f).sum::<f64>() / bg.nrows() as f64
}

fn check(x: &Matrix, bg: &Matrix) -> Result<()> {
    if bg.nrows() == 0 {
        return Err(Error::InvalidConfig("SHAP background is empty".into()));
    }
    if bg.ncols() != x.ncols() {
        return Err(Error::ManifestMismatch { expected: x.ncols(), got: bg.ncols() });
    }
    Ok(())
}

/// Exact Shapley values by enumerating all `2^p` coalitions per row.
/// Returns `(base_value, values)`.
pub fn exact_shap<F: Fn(&[f64]) -> f64 + Sync>(f: &F, x: &Matrix, bg: &Matrix) -> Result<(f64, Matrix)> {
    let p = x.ncols();
    if p > EXACT_MAX_FEATURES {
        return Err(Error::TooManyFeatures { max: EXACT_MAX_FEATURES, got: p });
    }
    check(x, bg)?;
    // w[s] = s! (p - s - 1)! / p!
    let w: Vec<f64> = (0..p).map(|s| 1.0 / (p as f64 * binom(p - 1, s))).collect();
    let rows: Vec<Vec<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut buf = vec![0.0; p];
            let v: Vec<f64> = (0..1u64 << p).map(|m| value(f, xi, bg, m, &mut buf)).collect();
            (0..p)
                .map(|j| {
                    let bit = 1u64 << j;
                    (0..1u64 << p).filter(|m| m & bit == 0).map(|m| w[m.count_ones() as usize] * (v[(m | bit) as usize] - v[m as usize])).sum()
                })
                .collect()
        })
        .collect();
    Ok((mean_output(f, bg), Matrix::from_rows(&rows)))
}

fn binom(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `s` out of `p`.
pub fn kernel_weight(p: usize, s: usize) -> f64 {
    (p - 1) as f64 / (binom(p, s) * s as f64 * (p - s) as f64)
}

/// Weighted coalitions (never empty or full). Size pairs `(s, p - s)` are
/// enumerated completely from the outside in while the budget allows; the
/// remaining kernel mass is spread over complement pairs sampled by size.
pub fn coalitions(p: usize, budget: usize, seed: u64) -> Vec<(u64, f64)> {
    let mut out = Vec::new();
    let mut left = budget;
    let mut s = 1;
    let mut done = vec![false; p + 1];
    while s <= p / 2 {
        let sizes: Vec<usize> = if s == p - s { vec![s] } else { vec![s, p - s] };
        let need: f64 = sizes.iter().map(|&k| binom(p, k)).sum();
        if need > left as f64 {
            break;
        }
        for &k in &sizes {
            let w = kernel_weight(p, k);
            for m in subsets_of_size(p, k) {
                out.push((m, w));
            }
            done[k] = true;
        }
        left -= need as usize;
        s += 1;
    }
    let rest: Vec<usize> = (1..p).filter(|&k| !done[k]).collect();
    let pairs = left / 2;
    if rest.is_empty() || pairs == 0 {
        return out;
    }
    // Kernel mass of each remaining size.
    let mass: Vec<f64> = rest.iter().map(|&k| kernel_weight(p, k) * binom(p, k)).collect();
    let total: f64 = mass.iter().sum();
    let per = total / (2 * pairs) as f64;
    let mut rng = seed::rng(seed);
    let full = if p == 64 { u64::MAX } else { (1u64 << p) - 1 };
    for _ in 0..pairs {
        let mut u = rng.random::<f64>() * total;
        let mut k = rest[rest.len() - 1];
        for (q, &m) in mass.iter().enumerate() {
            if u < m {
                k = rest[q];
                break;
            }
            u -= m;
        }
        let m = sample(&mut rng, p, k).iter().fold(0u64, |acc, j| acc | 1 << j);
        out.push((m, per));
        out.push((full ^ m, per));
    }
    out
}

fn subsets_of_size(p: usize, k: usize) -> Vec<u64> {
    (0..1u64 << p).filter(|m| m.count_ones() as usize == k).collect()
}

/// Kernel SHAP: weighted least squares over coalitions with the efficiency
/// constraint eliminated exactly. `n_coalitions` counts the empty and full
/// coalitions; at `2^p` or more every coalition is used.
pub fn kernel_shap<F: Fn(&[f64]) -> f64 + Sync>(f: &F, x: &Matrix, bg: &Matrix, n_coalitions: usize, ridge: f64, seed: u64) -> Result<(f64, Matrix)> {
    let p = x.ncols();
    if p < 2 {
        return Err(Error::InvalidConfig("kernel SHAP needs at least 2 features".into()));
    }
    if p > KERNEL_MAX_FEATURES {
        return Err(Error::TooManyFeatures { max: KERNEL_MAX_FEATURES, got: p });
    }
    if n_coalitions < p + 2 {
        return Err(Error::InsufficientCoalitions { needed: p + 2, got: n_coalitions });
    }
    check(x, bg)?;
    let coal = coalitions(p, n_coalitions - 2, seed);
    let base = mean_output(f, bg);
    let q = p - 1;
    // Normal equations of the reduced design z_j - z_last, shared by all rows.
    let mut a = vec![0.0; q * q];
    let zrow = |m: u64| -> Vec<f64> {
        let last = (m >> q & 1) as f64;
        (0..q).map(|j| (m >> j & 1) as f64 - last).collect()
    };
    for &(m, w) in &coal {
        let z = zrow(m);
        for r in 0..q {
            for c in 0..q {
                a[r * q + c] += w * z[r] * z[c];
            }
        }
    }
    for r in 0..q {
        a[r * q + r] += ridge;
    }
    let rows: Vec<Result<Vec<f64>>> = (0..x.nrows())
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut buf = vec![0.0; p];
            let total = f(xi) - base;
            let mut rhs = vec![0.0; q];
            for &(m, w) in &coal {
                let last = (m >> q & 1) as f64;
                let t = value(f, xi, bg, m, &mut buf) - base - last * total;
                for (r, z) in zrow(m).into_iter().enumerate() {
                    rhs[r] += w * z * t;
                }
            }
            let beta = cholesky_solve(&a, &rhs).ok_or(Error::InsufficientCoalitions { needed: p + 2, got: n_coalitions })?;
            let mut phi = beta.clone();
            phi.push(total - beta.iter().sum::<f64>());
            Ok(phi)
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((base, Matrix::from_rows(&rows)))
}

/// Features by mean |phi|, descending; ties by name.
pub fn global_importance(attr: &Attribution) -> Vec<(String, f64)> {
    let n = attr.values.nrows().max(1) as f64;
    let mut v: Vec<(String, f64)> = attr
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| (name.clone(), attr.values.col(j).iter().map(|x| x.abs()).sum::<f64>() / n))
        .collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v
}

/// Mean signed phi of each feature over the explained rows whose value
/// exceeds the background mean of that feature: the direction the feature
/// pushes risk when it is present or high. `None` when no row qualifies.
pub fn mean_signed(attr: &Attribution, x: &Matrix, bg_means: &[f64]) -> Vec<(String, Option<f64>)> {
    attr.feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let sel: Vec<f64> = (0..x.nrows()).filter(|&i| x.get(i, j) > bg_means[j]).map(|i| attr.values.get(i, j)).collect();
            let m = if sel.is_empty() { None } else { Some(sel.iter().sum::<f64>() / sel.len() as f64) };
            (name.clone(), m)
        })
        .collect()
}

/// Long-format rows `(row, feature, phi, value)`.
pub fn beeswarm_tsv(attr: &Attribution, x: &Matrix, row_ids: &[String]) -> String {
    let mut s = String::from("row_id\tfeature\tshap\tvalue\n");
    for i in 0..x.nrows() {
        for (j, name) in attr.feature_names.iter().enumerate() {
            s += &format!("{}\t{}\t{}\t{}\n", row_ids[i], name, attr.values.get(i, j), x.get(i, j));
        }
    }
    s
}

/// Seeded uniform subsample of `n` rows (all rows when fewer), in row order.
pub fn subsample_rows(rows: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= rows {
        return (0..rows).collect();
    }
    let mut idx = sample(&mut seed::rng(seed), rows, n).into_vec();
    idx.sort_unstable();
    idx
}
