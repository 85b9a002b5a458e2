//! Correlation pruning and cross-validated L1 regularization paths.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{cmp_row_id, fold_split, stratified_folds};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::special::{log1pexp, sigmoid};
use crate::tabular::FeatureMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDrop {
    pub dropped: String,
    pub partner: String,
    pub r: f64,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Scans columns in order and drops any column whose |r| with an earlier
/// kept column exceeds `threshold`.
pub fn prune_correlated(x: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<CorrelationDrop>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!("correlation threshold {threshold} not in (0, 1]")));
    }
    let cols: Vec<Vec<f64>> = (0..x.n_features()).map(|j| x.x.col(j)).collect();
    let mut kept: Vec<usize> = Vec::new();
    let mut drops = Vec::new();
    for j in 0..cols.len() {
        match kept.iter().map(|&i| (i, pearson(&cols[i], &cols[j]))).find(|(_, r)| r.abs() > threshold) {
            Some((i, r)) => drops.push(CorrelationDrop { dropped: x.feature_names[j].clone(), partner: x.feature_names[i].clone(), r }),
            None => kept.push(j),
        }
    }
    let names: Vec<String> = kept.iter().map(|&j| x.feature_names[j].clone()).collect();
    Ok((x.select_features(&names)?, drops))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LassoLoss {
    /// (1/n) Σ log(1 + exp(−ỹ(xβ + b))) + λ‖β‖₁
    Logistic,
    /// (1/2n) Σ (y − xβ − b)² + λ‖β‖₁ on the 0/1 outcome
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    pub loss: LassoLoss,
    pub n_lambdas: usize,
    pub min_ratio: f64,
    /// Explicit descending grid; overrides `n_lambdas` / `min_ratio`.
    pub lambdas: Option<Vec<f64>>,
    pub n_folds: usize,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig { loss: LassoLoss::Gaussian, n_lambdas: 100, min_ratio: 1e-4, lambdas: None, n_folds: 10, tol: 1e-7, max_sweeps: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub loss: LassoLoss,
    pub feature_names: Vec<String>,
    pub lambdas: Vec<f64>,
    /// lambdas × features
    pub coef: Matrix,
    pub intercepts: Vec<f64>,
    pub cv_mean: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_opt: f64,
    pub opt_index: usize,
}

impl LassoPath {
    pub fn coef_at(&self, k: usize) -> &[f64] {
        self.coef.row(k)
    }

    pub fn coef_opt(&self) -> &[f64] {
        self.coef.row(self.opt_index)
    }
}

/// Column-major design for coordinate descent.
pub struct Design {
    cols: Vec<Vec<f64>>,
    sq: Vec<f64>,
    n: usize,
}

impl Design {
    pub fn new(x: &Matrix) -> Self {
        let n = x.nrows();
        let cols: Vec<Vec<f64>> = (0..x.ncols()).map(|j| x.col(j)).collect();
        let sq = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>() / n as f64).collect();
        Design { cols, sq, n }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }
}

#[inline]
fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Coordinate-descent state for one problem, reused along a λ path.
pub struct Solver<'a> {
    d: &'a Design,
    y: &'a [f64],
    loss: LassoLoss,
    pub beta: Vec<f64>,
    pub b0: f64,
    eta: Vec<f64>,
    /// Null-model intercept and the smallest penalty that keeps β = 0.
    null_b0: f64,
    lmax: f64,
    pub tol: f64,
    pub max_sweeps: usize,
    /// When set, the penalized objective is recorded after every sweep.
    pub objective_trace: Option<Vec<f64>>,
}

impl<'a> Solver<'a> {
    pub fn new(d: &'a Design, y: &'a [f64], loss: LassoLoss) -> Self {
        let ybar = y.iter().sum::<f64>() / y.len() as f64;
        let b0 = match loss {
            LassoLoss::Gaussian => ybar,
            LassoLoss::Logistic => (ybar / (1.0 - ybar)).ln(),
        };
        let lmax = lambda_max(d, y);
        Solver { d, y, loss, beta: vec![0.0; d.p()], b0, eta: vec![b0; d.n], null_b0: b0, lmax, tol: 1e-7, max_sweeps: 1_000_000, objective_trace: None }
    }

    /// Residual `y − ŷ` per row (ŷ is the fitted mean / probability).
    pub fn residual(&self) -> Vec<f64> {
        self.eta
            .iter()
            .zip(self.y)
            .map(|(e, y)| match self.loss {
                LassoLoss::Gaussian => y - e,
                LassoLoss::Logistic => y - sigmoid(*e),
            })
            .collect()
    }

    pub fn objective(&self, lambda: f64) -> f64 {
        let n = self.d.n as f64;
        let data: f64 = match self.loss {
            LassoLoss::Gaussian => self.eta.iter().zip(self.y).map(|(e, y)| (y - e) * (y - e)).sum::<f64>() / (2.0 * n),
            // log(1 + exp(−ỹη)) = log1pexp(η) − yη for y ∈ {0, 1}
            LassoLoss::Logistic => self.eta.iter().zip(self.y).map(|(e, y)| log1pexp(*e) - y * e).sum::<f64>() / n,
        };
        data + lambda * self.beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn update_coord(&mut self, j: usize, lambda: f64) -> f64 {
        let n = self.d.n as f64;
        let col = &self.d.cols[j];
        let sq = self.d.sq[j];
        if sq == 0.0 {
            return 0.0;
        }
        let grad: f64 = match self.loss {
            LassoLoss::Gaussian => col.iter().zip(self.y.iter().zip(&self.eta)).map(|(x, (y, e))| x * (y - e)).sum::<f64>() / n,
            LassoLoss::Logistic => col.iter().zip(self.y.iter().zip(&self.eta)).map(|(x, (y, e))| x * (y - sigmoid(*e))).sum::<f64>() / n,
        };
        // Curvature: exact for squared error, the 1/4 bound for the logistic loss.
        let l = match self.loss {
            LassoLoss::Gaussian => sq,
            LassoLoss::Logistic => 0.25 * sq,
        };
        let old = self.beta[j];
        let new = soft(old + grad / l, lambda / l);
        let delta = new - old;
        if delta != 0.0 {
            self.beta[j] = new;
            for (e, x) in self.eta.iter_mut().zip(col) {
                *e += delta * x;
            }
        }
        delta.abs()
    }

    fn update_intercept(&mut self) -> f64 {
        let n = self.d.n as f64;
        let delta = match self.loss {
            LassoLoss::Gaussian => self.y.iter().zip(&self.eta).map(|(y, e)| y - e).sum::<f64>() / n,
            LassoLoss::Logistic => 4.0 * self.y.iter().zip(&self.eta).map(|(y, e)| y - sigmoid(*e)).sum::<f64>() / n,
        };
        self.b0 += delta;
        self.eta.iter_mut().for_each(|e| *e += delta);
        delta.abs()
    }

    fn sweep(&mut self, coords: &[usize], lambda: f64) -> f64 {
        let mut change = self.update_intercept();
        for &j in coords {
            change = change.max(self.update_coord(j, lambda));
        }
        if let Some(t) = self.objective_trace.as_mut().map(std::mem::take) {
            let mut t = t;
            t.push(self.objective(lambda));
            self.objective_trace = Some(t);
        }
        change
    }

    /// Solves at `lambda` from the current (warm) state. Sweeps cycle over
    /// the active set until it settles, then a full sweep confirms.
    pub fn solve(&mut self, lambda: f64) -> Result<usize> {
        // At or above λ_max the null model is optimal; set it exactly rather
        // than let rounding in the gradient admit a tiny coefficient.
        if lambda >= self.lmax {
            self.beta.iter_mut().for_each(|b| *b = 0.0);
            self.b0 = self.null_b0;
            self.eta.iter_mut().for_each(|e| *e = self.null_b0);
            return Ok(0);
        }
        let all: Vec<usize> = (0..self.d.p()).collect();
        let mut sweeps = 0;
        loop {
            let change = self.sweep(&all, lambda);
            sweeps += 1;
            if change < self.tol {
                return Ok(sweeps);
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| self.beta[j] != 0.0).collect();
            loop {
                if sweeps >= self.max_sweeps {
                    return Err(Error::NonConvergence { model: "lasso", iterations: sweeps, residual: change });
                }
                let c = self.sweep(&active, lambda);
                sweeps += 1;
                if c < self.tol {
                    break;
                }
            }
            if sweeps >= self.max_sweeps {
                return Err(Error::NonConvergence { model: "lasso", iterations: sweeps, residual: change });
            }
        }
    }
}

/// `max_j |(1/n) Σ x_ij (y_i − ȳ)|`
pub fn lambda_max(d: &Design, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    d.cols.iter().map(|c| (c.iter().zip(y).map(|(x, y)| x * (y - ybar)).sum::<f64>() / n).abs()).fold(0.0, f64::max)
}

pub fn lambda_grid(lmax: f64, n: usize, min_ratio: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lmax];
    }
    (0..n).map(|k| lmax * min_ratio.powf(k as f64 / (n - 1) as f64)).collect()
}

/// Fits the whole path on one data set; returns (coef rows, intercepts).
pub fn fit_path(x: &Matrix, y: &[f64], lambdas: &[f64], cfg: &LassoConfig) -> Result<(Matrix, Vec<f64>)> {
    let d = Design::new(x);
    let mut s = Solver::new(&d, y, cfg.loss);
    s.tol = cfg.tol;
    s.max_sweeps = cfg.max_sweeps;
    let mut coef = Matrix::zeros(lambdas.len(), d.p());
    let mut b = Vec::with_capacity(lambdas.len());
    for (k, &l) in lambdas.iter().enumerate() {
        s.solve(l)?;
        coef.row_mut(k).copy_from_slice(&s.beta);
        b.push(s.b0);
    }
    Ok((coef, b))
}

fn deviance(loss: LassoLoss, eta: f64, y: f64) -> f64 {
    match loss {
        LassoLoss::Gaussian => (y - eta) * (y - eta),
        LassoLoss::Logistic => 2.0 * (log1pexp(eta) - y * eta),
    }
}

/// Cross-validated path. Rows are canonicalized by row id first, so the
/// result does not depend on input row order.
pub fn fit_lasso_path(fm: &FeatureMatrix, cfg: &LassoConfig, seed: u64) -> Result<LassoPath> {
    let n = fm.n_rows();
    if n == 0 {
        return Err(Error::EmptyCohort);
    }
    for j in 0..fm.n_features() {
        let m = fm.x.col(j).iter().sum::<f64>() / n as f64;
        if m.abs() > 1e-6 {
            return Err(Error::NotStandardized { column: fm.feature_names[j].clone(), mean: m });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| cmp_row_id(&fm.row_ids[a], &fm.row_ids[b]));
    let fm = fm.select_rows(&order);
    let y: Vec<f64> = fm.y.iter().map(|&v| f64::from(v)).collect();
    if fm.y.iter().all(|&v| v == fm.y[0]) {
        return Err(Error::SingleClass);
    }
    let lambdas = match &cfg.lambdas {
        Some(l) => {
            if l.is_empty() || l.windows(2).any(|w| w[1] > w[0]) || l.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::InvalidGrid("lambdas must be non-negative and descending".into()));
            }
            l.clone()
        }
        None => lambda_grid(lambda_max(&Design::new(&fm.x), &y), cfg.n_lambdas, cfg.min_ratio),
    };
    let (coef, intercepts) = fit_path(&fm.x, &y, &lambdas, cfg)?;

    let folds = stratified_folds(&fm.y, Some(&fm.row_ids), cfg.n_folds, seed)?;
    let per_fold: Vec<Vec<f64>> = (0..cfg.n_folds)
        .into_par_iter()
        .map(|f| {
            let (tr, va) = fold_split(&folds, f);
            let xt = fm.x.select_rows(&tr);
            let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let (c, b) = fit_path(&xt, &yt, &lambdas, cfg)?;
            Ok((0..lambdas.len())
                .map(|k| {
                    let beta = c.row(k);
                    va.iter().map(|&i| deviance(cfg.loss, b[k] + crate::matrix::dot(fm.x.row(i), beta), y[i])).sum::<f64>() / va.len() as f64
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let kf = cfg.n_folds as f64;
    let cv_mean: Vec<f64> = (0..lambdas.len()).map(|k| per_fold.iter().map(|f| f[k]).sum::<f64>() / kf).collect();
    let cv_se: Vec<f64> = (0..lambdas.len())
        .map(|k| {
            let m = cv_mean[k];
            (per_fold.iter().map(|f| (f[k] - m).powi(2)).sum::<f64>() / (kf - 1.0)).sqrt() / kf.sqrt()
        })
        .collect();
    let opt_index = (0..lambdas.len()).fold(0, |best, k| if cv_mean[k] < cv_mean[best] { k } else { best });
    Ok(LassoPath {
        loss: cfg.loss,
        feature_names: fm.feature_names.clone(),
        lambda_opt: lambdas[opt_index],
        lambdas,
        coef,
        intercepts,
        cv_mean,
        cv_se,
        opt_index,
    })
}

/// Features with |β(λ_opt)| > threshold, by descending |β| (ties by name).
pub fn select_features(path: &LassoPath, coef_threshold: f64) -> Result<Vec<(String, f64)>> {
    if !(coef_threshold >= 0.0) {
        return Err(Error::InvalidConfig(format!("coefficient threshold {coef_threshold} is negative")));
    }
    let mut sel: Vec<(String, f64)> = path.feature_names.iter().cloned().zip(path.coef_opt().iter().copied()).filter(|(_, b)| b.abs() > coef_threshold).collect();
    if sel.is_empty() {
        return Err(Error::EmptySelection { threshold: coef_threshold });
    }
    sel.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then_with(|| a.0.cmp(&b.0)));
    Ok(sel)
}

/// Subtracts column means so the design meets the centering precondition.
/// Slopes are unchanged; the intercept absorbs the shift.
pub fn center(fm: &FeatureMatrix) -> FeatureMatrix {
    let means = fm.x.column_means();
    let mut x = fm.x.clone();
    for i in 0..x.nrows() {
        for (v, m) in x.row_mut(i).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    FeatureMatrix { x, ..fm.clone() }
}
