//! Bagged CART forests for classification (Gini) and regression (variance).
//! Features are pre-binned at distinct-value midpoints, up to `max_bins`
//! per feature, so a split search at a node is one histogram pass.

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForestTask {
    Classify,
    Regress,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// √p for classification, p/3 for regression.
    Auto,
    Sqrt,
    Third,
    All,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, p: usize, task: ForestTask) -> usize {
        let m = match self {
            MaxFeatures::Auto => return MaxFeatures::resolve(if task == ForestTask::Classify { MaxFeatures::Sqrt } else { MaxFeatures::Third }, p, task),
            MaxFeatures::Sqrt => (p as f64).sqrt().floor() as usize,
            MaxFeatures::Third => p / 3,
            MaxFeatures::All => p,
            MaxFeatures::Count(k) => k,
        };
        m.clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub max_bins: usize,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 100, max_depth: None, min_leaf: 1, max_features: MaxFeatures::Auto, bootstrap: true, max_bins: 255 }
    }
}

/// Flat tree. `feature[k] == u32::MAX` marks a leaf; otherwise rows with
/// `x[feature] <= threshold` go to `left[k]`, the rest to `right[k]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub feature: Vec<u32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
}

pub const LEAF: u32 = u32::MAX;

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0usize;
        while self.feature[k] != LEAF {
            let f = self.feature[k] as usize;
            k = if x[f] <= self.threshold[k] { self.left[k] } else { self.right[k] } as usize;
        }
        self.value[k]
    }

    pub fn n_nodes(&self) -> usize {
        self.feature.len()
    }

    fn push_leaf(&mut self, value: f64) -> usize {
        self.feature.push(LEAF);
        self.threshold.push(0.0);
        self.left.push(0);
        self.right.push(0);
        self.value.push(value);
        self.feature.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: ForestTask,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Classification: fraction of trees voting for class 1.
    /// Regression: mean of tree predictions.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let s: f64 = match self.task {
            ForestTask::Classify => self.trees.iter().map(|t| f64::from(u8::from(t.predict(x) > 0.5))).sum(),
            ForestTask::Regress => self.trees.iter().map(|t| t.predict(x)).sum(),
        };
        s / self.trees.len() as f64
    }

    /// Majority vote for classification (ties go to class 1), mean for
    /// regression.
    pub fn predict_value(&self, x: &[f64]) -> f64 {
        let p = self.predict(x);
        match self.task {
            ForestTask::Classify => f64::from(u8::from(p >= 0.5)),
            ForestTask::Regress => p,
        }
    }
}

/// Per-feature bin edges and the binned copy of a matrix (column-major).
pub struct Binned {
    edges: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
}

impl Binned {
    pub fn new(x: &Matrix, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, u16::MAX as usize);
        let (n, p) = (x.nrows(), x.ncols());
        let mut edges = Vec::with_capacity(p);
        let mut codes = Vec::with_capacity(p);
        for j in 0..p {
            let mut v = x.col(j);
            v.sort_by(f64::total_cmp);
            v.dedup();
            // Edge b is the upper bound of bin b; the last bin is unbounded.
            let e: Vec<f64> = if v.len() <= max_bins {
                v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
            } else {
                let mut e: Vec<f64> = (1..max_bins)
                    .map(|b| {
                        let k = b * v.len() / max_bins;
                        0.5 * (v[k - 1] + v[k])
                    })
                    .collect();
                e.dedup();
                e
            };
            let c: Vec<u16> = (0..n).map(|i| e.partition_point(|&t| t < x.get(i, j)) as u16).collect();
            edges.push(e);
            codes.push(c);
        }
        Binned { edges, codes }
    }
}

struct Grower<'a> {
    bins: &'a Binned,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
}

impl Grower<'_> {
    fn leaf_value(&self, idx: &[u32]) -> f64 {
        idx.iter().map(|&i| self.y[i as usize]).sum::<f64>() / idx.len() as f64
    }

    fn grow(&self, idx: &mut [u32], depth: usize, tree: &mut Tree, rng: &mut seed::Rng) -> usize {
        let n = idx.len();
        let value = self.leaf_value(idx);
        let pure = idx.iter().all(|&i| self.y[i as usize] == self.y[idx[0] as usize]);
        if pure || n < 2 * self.cfg.min_leaf || self.cfg.max_depth.is_some_and(|d| depth >= d) {
            return tree.push_leaf(value);
        }
        let p = self.bins.codes.len();
        let total: f64 = idx.iter().map(|&i| self.y[i as usize]).sum();
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, usize)> = None;
        let mut cnt = Vec::new();
        let mut sum = Vec::new();
        for j in sample(rng, p, self.mtry) {
            let nb = self.bins.edges[j].len() + 1;
            cnt.clear();
            cnt.resize(nb, 0usize);
            sum.clear();
            sum.resize(nb, 0.0f64);
            let codes = &self.bins.codes[j];
            for &i in idx.iter() {
                let b = codes[i as usize] as usize;
                cnt[b] += 1;
                sum[b] += self.y[i as usize];
            }
            let (mut nl, mut sl) = (0usize, 0.0f64);
            for b in 0..nb - 1 {
                nl += cnt[b];
                sl += sum[b];
                let nr = n - nl;
                if nl < self.cfg.min_leaf {
                    continue;
                }
                if nr < self.cfg.min_leaf {
                    break;
                }
                if cnt[b] == 0 {
                    continue;
                }
                let sr = total - sl;
                let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, j, b));
                }
            }
        }
        let Some((_, j, b)) = best else {
            return tree.push_leaf(value);
        };
        let codes = &self.bins.codes[j];
        let mut split = 0;
        for k in 0..n {
            if codes[idx[k] as usize] as usize <= b {
                idx.swap(k, split);
                split += 1;
            }
        }
        let node = tree.push_leaf(value);
        let (lo, hi) = idx.split_at_mut(split);
        let l = self.grow(lo, depth + 1, tree, rng);
        let r = self.grow(hi, depth + 1, tree, rng);
        tree.feature[node] = j as u32;
        tree.threshold[node] = self.bins.edges[j][b];
        tree.left[node] = l as u32;
        tree.right[node] = r as u32;
        node
    }
}

fn fit_tree(bins: &Binned, y: &[f64], cfg: &ForestConfig, mtry: usize, seed: u64) -> Tree {
    let n = y.len();
    let mut rng = seed::rng(seed);
    let mut idx: Vec<u32> = if cfg.bootstrap { (0..n).map(|_| rng.random_range(0..n) as u32).collect() } else { (0..n as u32).collect() };
    let g = Grower { bins, y, cfg, mtry };
    let mut tree = Tree::default();
    g.grow(&mut idx, 0, &mut tree, &mut rng);
    tree
}

/// Fits a forest. Classification targets must be 0/1. Each tree draws from
/// its own seed `child(seed, t)`, so results do not depend on thread count.
pub fn fit_forest(x: &Matrix, y: &[f64], task: ForestTask, cfg: &ForestConfig, seed: u64) -> Forest {
    assert_eq!(x.nrows(), y.len(), "forest rows");
    assert!(!y.is_empty(), "forest needs rows");
    let bins = Binned::new(x, cfg.max_bins);
    fit_forest_binned(&bins, x.ncols(), y, task, cfg, seed)
}

pub fn fit_forest_binned(bins: &Binned, p: usize, y: &[f64], task: ForestTask, cfg: &ForestConfig, seed: u64) -> Forest {
    let mtry = cfg.max_features.resolve(p, task);
    let trees = (0..cfg.n_trees as u64).into_par_iter().map(|t| fit_tree(bins, y, cfg, mtry, seed::child(seed, t))).collect();
    Forest { task, n_features: p, trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tree_fits_step() {
        let x = Matrix::from_vec(201, 1, (0..201).map(|i| (i as f64 - 100.0) / 10.0 + 0.05).collect());
        let y: Vec<f64> = (0..201).map(|i| f64::from(u8::from(x.get(i, 0) > 0.0))).collect();
        let cfg = ForestConfig { n_trees: 1, bootstrap: false, ..Default::default() };
        let f = fit_forest(&x, &y, ForestTask::Classify, &cfg, 1);
        for i in 0..201 {
            assert_eq!(f.predict_value(x.row(i)), y[i]);
        }
    }

    #[test]
    fn constant_regression_target() {
        let x = Matrix::from_vec(50, 2, (0..100).map(|i| (i * 7 % 13) as f64).collect());
        let y = vec![3.25; 50];
        let f = fit_forest(&x, &y, ForestTask::Regress, &ForestConfig { n_trees: 10, ..Default::default() }, 4);
        for i in 0..50 {
            assert_eq!(f.predict(x.row(i)), 3.25);
        }
    }

    #[test]
    fn tree_structure_is_consistent() {
        let mut rng = seed::rng(3);
        let x = Matrix::from_vec(300, 3, (0..900).map(|_| rng.random::<f64>()).collect());
        let y: Vec<f64> = (0..300).map(|i| x.get(i, 0) * 2.0 + x.get(i, 2)).collect();
        let cfg = ForestConfig { n_trees: 3, max_depth: Some(4), min_leaf: 5, ..Default::default() };
        let f = fit_forest(&x, &y, ForestTask::Regress, &cfg, 9);
        for t in &f.trees {
            for k in 0..t.n_nodes() {
                if t.feature[k] != LEAF {
                    assert!(t.left[k] as usize > k && t.right[k] as usize > k && (t.right[k] as usize) < t.n_nodes());
                }
            }
            assert!(t.n_nodes() <= 31);
        }
        let g = fit_forest(&x, &y, ForestTask::Regress, &cfg, 9);
        assert_eq!(f, g);
    }
}
