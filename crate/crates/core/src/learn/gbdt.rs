//! Gradient boosting with logistic loss. Trees are grown level-wise with an
//! exact greedy search over presorted feature values; leaves hold the
//! second-order value `-G / (H + lambda)`. The oblivious variant forces one
//! shared split per level, approximating symmetric trees.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{Tree, LEAF};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::special::{log1pexp, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtConfig {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub lambda_l2: f64,
    /// Minimum hessian sum per child (ignored by oblivious trees).
    pub min_child_weight: f64,
    pub oblivious: bool,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig::xgb_like()
    }
}

impl GbdtConfig {
    pub fn xgb_like() -> Self {
        GbdtConfig { n_trees: 200, learning_rate: 0.05, max_depth: 3, lambda_l2: 1.0, min_child_weight: 1.0, oblivious: false }
    }

    pub fn cat_like() -> Self {
        GbdtConfig { n_trees: 500, oblivious: true, ..GbdtConfig::xgb_like() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    pub base_margin: f64,
    pub learning_rate: f64,
    /// Leaf values are unscaled; the margin adds `learning_rate * leaf`.
    pub trees: Vec<Tree>,
}

impl Gbdt {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_margin + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

pub fn logloss(margin: &[f64], y: &[u8]) -> f64 {
    margin.iter().zip(y).map(|(&m, &t)| log1pexp(m) - f64::from(t) * m).sum::<f64>() / y.len() as f64
}

#[inline]
fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

struct Grower<'a> {
    x: &'a Matrix,
    /// Row indices of each feature sorted by value.
    order: &'a [Vec<u32>],
    cfg: &'a GbdtConfig,
}

const NONE: u32 = u32::MAX;

impl Grower<'_> {
    /// Best `(gain, threshold)` per frontier node for feature `j`.
    fn scan(&self, j: usize, node_of: &[u32], sums: &[(f64, f64)], g: &[f64], h: &[f64]) -> Vec<Option<(f64, f64)>> {
        let k = sums.len();
        let mut acc = vec![(0.0f64, 0.0f64); k];
        let mut last = vec![f64::NAN; k];
        let mut best: Vec<Option<(f64, f64)>> = vec![None; k];
        let lambda = self.cfg.lambda_l2;
        for &r in &self.order[j] {
            let r = r as usize;
            let node = node_of[r];
            if node == NONE {
                continue;
            }
            let node = node as usize;
            let v = self.x.get(r, j);
            if !last[node].is_nan() && v > last[node] {
                let (gl, hl) = acc[node];
                let (gt, ht) = sums[node];
                if hl >= self.cfg.min_child_weight && ht - hl >= self.cfg.min_child_weight {
                    let gain = split_gain(gl, hl, gt, ht, lambda);
                    if gain > 1e-12 && best[node].is_none_or(|(b, _)| gain > b) {
                        best[node] = Some((gain, 0.5 * (last[node] + v)));
                    }
                }
            }
            acc[node].0 += g[r];
            acc[node].1 += h[r];
            last[node] = v;
        }
        best
    }

    /// Best shared `(gain, threshold)` for feature `j`, gain summed over nodes.
    fn scan_oblivious(&self, j: usize, node_of: &[u32], sums: &[(f64, f64)], g: &[f64], h: &[f64]) -> Option<(f64, f64)> {
        let k = sums.len();
        let mut acc = vec![(0.0f64, 0.0f64); k];
        let lambda = self.cfg.lambda_l2;
        let mut best: Option<(f64, f64)> = None;
        let mut last = f64::NAN;
        let col = &self.order[j];
        let mut i = 0;
        while i < col.len() {
            let v = self.x.get(col[i] as usize, j);
            if !last.is_nan() && v > last {
                let gain: f64 = (0..k).map(|q| split_gain(acc[q].0, acc[q].1, sums[q].0, sums[q].1, lambda)).sum();
                if gain > 1e-12 && best.is_none_or(|(b, _)| gain > b) {
                    best = Some((gain, 0.5 * (last + v)));
                }
            }
            // Absorb every row sharing value v.
            while i < col.len() && self.x.get(col[i] as usize, j) == v {
                let r = col[i] as usize;
                if node_of[r] != NONE {
                    let q = node_of[r] as usize;
                    acc[q].0 += g[r];
                    acc[q].1 += h[r];
                }
                i += 1;
            }
            last = v;
        }
        best
    }

    fn grow(&self, g: &[f64], h: &[f64]) -> Tree {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let lambda = self.cfg.lambda_l2;
        let mut tree = Tree::default();
        let mut node_of = vec![0u32; n];
        // frontier[k] = tree node id of frontier slot k.
        let mut frontier = vec![push(&mut tree)];
        for depth in 0..=self.cfg.max_depth {
            let k = frontier.len();
            let mut sums = vec![(0.0, 0.0); k];
            for r in 0..n {
                if node_of[r] != NONE {
                    let s = &mut sums[node_of[r] as usize];
                    s.0 += g[r];
                    s.1 += h[r];
                }
            }
            for (q, &id) in frontier.iter().enumerate() {
                tree.value[id] = -sums[q].0 / (sums[q].1 + lambda);
            }
            if depth == self.cfg.max_depth {
                break;
            }
            // splits[q] = Some((feature, threshold)) for frontier slot q.
            let splits: Vec<Option<(usize, f64)>> = if self.cfg.oblivious {
                let per: Vec<Option<(f64, f64)>> = (0..p).into_par_iter().map(|j| self.scan_oblivious(j, &node_of, &sums, g, h)).collect();
                let mut best: Option<(f64, usize, f64)> = None;
                for (j, b) in per.into_iter().enumerate() {
                    if let Some((gain, t)) = b {
                        if best.is_none_or(|(bg, _, _)| gain > bg) {
                            best = Some((gain, j, t));
                        }
                    }
                }
                vec![best.map(|(_, j, t)| (j, t)); k]
            } else {
                let per: Vec<Vec<Option<(f64, f64)>>> = (0..p).into_par_iter().map(|j| self.scan(j, &node_of, &sums, g, h)).collect();
                (0..k)
                    .map(|q| {
                        let mut best: Option<(f64, usize, f64)> = None;
                        for (j, b) in per.iter().enumerate() {
                            if let Some((gain, t)) = b[q] {
                                if best.is_none_or(|(bg, _, _)| gain > bg) {
                                    best = Some((gain, j, t));
                                }
                            }
                        }
                        best.map(|(_, j, t)| (j, t))
                    })
                    .collect()
            };
            if splits.iter().all(Option::is_none) {
                break;
            }
            let mut next = Vec::new();
            // child_slot[q] = (left slot, right slot) in the next frontier.
            let mut child_slot = vec![(NONE, NONE); k];
            for (q, s) in splits.iter().enumerate() {
                if let Some((j, t)) = *s {
                    let id = frontier[q];
                    let (l, r) = (push(&mut tree), push(&mut tree));
                    tree.feature[id] = j as u32;
                    tree.threshold[id] = t;
                    tree.left[id] = l as u32;
                    tree.right[id] = r as u32;
                    child_slot[q] = (next.len() as u32, next.len() as u32 + 1);
                    next.push(l);
                    next.push(r);
                }
            }
            for r in 0..n {
                if node_of[r] == NONE {
                    continue;
                }
                let q = node_of[r] as usize;
                node_of[r] = match splits[q] {
                    Some((j, t)) => {
                        if self.x.get(r, j) <= t { child_slot[q].0 } else { child_slot[q].1 }
                    }
                    None => NONE,
                };
            }
            frontier = next;
        }
        tree
    }
}

fn push(tree: &mut Tree) -> usize {
    tree.feature.push(LEAF);
    tree.threshold.push(0.0);
    tree.left.push(0);
    tree.right.push(0);
    tree.value.push(0.0);
    tree.feature.len() - 1
}

/// Fits and returns the per-round training logloss (entry 0 is the base).
pub fn fit_gbdt_traced(x: &Matrix, y: &[u8], cfg: &GbdtConfig) -> Result<(Gbdt, Vec<f64>)> {
    let n = x.nrows();
    assert_eq!(n, y.len(), "gbdt rows");
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    if !(cfg.learning_rate > 0.0) || cfg.lambda_l2 < 0.0 {
        return Err(Error::InvalidConfig(format!("gbdt needs learning_rate > 0 and lambda >= 0, got {cfg:?}")));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("gbdt input has non-finite values".into()));
    }
    let ybar = (y.iter().filter(|&&t| t == 1).count() as f64 / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let base_margin = (ybar / (1.0 - ybar)).ln();
    let order: Vec<Vec<u32>> = (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let mut o: Vec<u32> = (0..n as u32).collect();
            o.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b)));
            o
        })
        .collect();
    let grower = Grower { x, order: &order, cfg };
    let mut margin = vec![base_margin; n];
    let mut trace = vec![logloss(&margin, y)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let (mut g, mut h) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            let p = sigmoid(margin[i]);
            g[i] = p - f64::from(y[i]);
            h[i] = p * (1.0 - p);
        }
        let tree = grower.grow(&g, &h);
        for i in 0..n {
            margin[i] += cfg.learning_rate * tree.predict(x.row(i));
        }
        trace.push(logloss(&margin, y));
        trees.push(tree);
    }
    Ok((Gbdt { base_margin, learning_rate: cfg.learning_rate, trees }, trace))
}

pub fn fit_gbdt(x: &Matrix, y: &[u8], cfg: &GbdtConfig) -> Result<Gbdt> {
    fit_gbdt_traced(x, y, cfg).map(|(m, _)| m)
}
