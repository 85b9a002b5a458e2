//! Soft-margin SVM solved in the dual by SMO with maximal-violating-pair
//! working-set selection, plus Platt probability calibration.

use std::collections::HashMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::cv::{fold_split, stratified_folds};
use crate::error::{Error, Result};
use crate::matrix::{dot, sq_dist, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub kernel: Kernel,
    /// Stop when the maximal KKT violation falls below this.
    pub tol: f64,
    pub calibrate: bool,
    pub platt_folds: usize,
    pub max_iter: usize,
    /// Kernel rows kept in the LRU cache.
    pub cache_rows: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, kernel: Kernel::Rbf { gamma: 0.01 }, tol: 1e-3, calibrate: true, platt_folds: 3, max_iter: 10_000_000, cache_rows: 2048 }
    }
}

/// LRU cache of kernel rows `K(x_i, .)`.
struct KernelCache<'a> {
    x: &'a Matrix,
    kernel: Kernel,
    cap: usize,
    rows: HashMap<usize, (Rc<Vec<f64>>, u64)>,
    clock: u64,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Matrix, kernel: Kernel, cap: usize) -> Self {
        KernelCache { x, kernel, cap: cap.max(2), rows: HashMap::new(), clock: 0 }
    }

    fn row(&mut self, i: usize) -> Rc<Vec<f64>> {
        self.clock += 1;
        if let Some(e) = self.rows.get_mut(&i) {
            e.1 = self.clock;
            return Rc::clone(&e.0);
        }
        if self.rows.len() >= self.cap {
            let old = *self.rows.iter().min_by_key(|(_, (_, t))| *t).unwrap().0;
            self.rows.remove(&old);
        }
        let xi = self.x.row(i);
        let r: Rc<Vec<f64>> = Rc::new(self.x.rows_iter().map(|xj| self.kernel.eval(xi, xj)).collect());
        self.rows.insert(i, (Rc::clone(&r), self.clock));
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision function is `sum_i alpha_i y_i K(x_i, x) - rho`.
    pub rho: f64,
    pub iterations: usize,
    /// Maximal KKT violation at exit.
    pub violation: f64,
    /// Dual objective `sum alpha - 1/2 alpha'Q alpha` at exit.
    pub objective: f64,
}

/// SMO on `min 1/2 a'Qa - e'a`, `0 <= a <= C`, `y'a = 0`, `Q_ij = y_i y_j K_ij`.
/// `y` holds +1/-1. `trace` receives the dual objective after every update.
pub fn solve_dual(x: &Matrix, y: &[f64], cfg: &SvmConfig, mut trace: Option<&mut Vec<f64>>) -> Result<DualSolution> {
    let n = x.nrows();
    let c = cfg.c;
    let mut cache = KernelCache::new(x, cfg.kernel, cfg.cache_rows);
    let diag: Vec<f64> = x.rows_iter().map(|r| cfg.kernel.eval(r, r)).collect();
    let mut alpha = vec![0.0; n];
    // Gradient of the minimized objective: G = Qa - e.
    let mut g = vec![-1.0; n];
    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);
    let dual = |alpha: &[f64], g: &[f64]| -> f64 { alpha.iter().zip(g).map(|(a, gi)| a * (gi - 1.0)).sum::<f64>() * -0.5 };
    let mut iterations = 0;
    loop {
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * g[t];
            if up(alpha[t], y[t]) && v > gmax {
                gmax = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        let violation = if i == usize::MAX || j == usize::MAX { 0.0 } else { gmax - gmin };
        if violation < cfg.tol {
            let rho = bias(&alpha, &g, y, c);
            return Ok(DualSolution { objective: dual(&alpha, &g), alpha, rho, iterations, violation });
        }
        if iterations >= cfg.max_iter {
            return Err(Error::NonConvergence { model: "svm", iterations, residual: violation });
        }
        iterations += 1;
        let ki = cache.row(i);
        let kj = cache.row(j);
        let (yi, yj) = (y[i], y[j]);
        let (ai_old, aj_old) = (alpha[i], alpha[j]);
        let quad = (diag[i] + diag[j] - 2.0 * ki[j]).max(1e-12);
        // Two-variable subproblem along the feasible direction.
        let (mut ai, mut aj);
        if yi != yj {
            let delta = (-g[i] - g[j]) / quad;
            let diff = ai_old - aj_old;
            ai = ai_old + delta;
            aj = aj_old + delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = ai_old + aj_old;
            ai = ai_old - delta;
            aj = aj_old + delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (ai - ai_old, aj - aj_old);
        for t in 0..n {
            g[t] += y[t] * (yi * ki[t] * di + yj * kj[t] * dj);
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(dual(&alpha, &g));
        }
    }
}

fn bias(alpha: &[f64], g: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum, mut nfree) = (0.0, 0usize);
    for t in 0..alpha.len() {
        let yg = y[t] * g[t];
        if alpha[t] >= c {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            nfree += 1;
            sum += yg;
        }
    }
    if nfree > 0 { sum / nfree as f64 } else { 0.5 * (ub + lb) }
}

/// `P(y = 1 | f) = 1 / (1 + exp(a f + b))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Platt {
    pub a: f64,
    pub b: f64,
}

impl Platt {
    pub fn prob(&self, f: f64) -> f64 {
        crate::special::sigmoid(-(self.a * f + self.b))
    }
}

/// Platt's regularized maximum-likelihood sigmoid fit (Newton with
/// backtracking on smoothed targets).
pub fn fit_platt(f: &[f64], y: &[u8]) -> Platt {
    let n1 = y.iter().filter(|&&t| t == 1).count() as f64;
    let n0 = y.len() as f64 - n1;
    let (hi, lo) = ((n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0));
    let t: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
    let obj = |a: f64, b: f64| -> f64 {
        f.iter().zip(&t).map(|(&fi, &ti)| {
            let z = fi * a + b;
            if z >= 0.0 { ti * z + (-z).exp().ln_1p() } else { (ti - 1.0) * z + z.exp().ln_1p() }
        }).sum()
    };
    let (mut a, mut b) = (0.0, ((n0 + 1.0) / (n1 + 1.0)).ln());
    let mut fval = obj(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let z = fi * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = obj(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step *= 0.5;
        }
        if step < 1e-10 {
            break;
        }
    }
    Platt { a, b }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Svm {
    pub kernel: Kernel,
    pub support: Matrix,
    /// `alpha_i y_i` per support vector.
    pub dual_coef: Vec<f64>,
    pub rho: f64,
    pub platt: Option<Platt>,
}

impl Svm {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support.rows_iter().zip(&self.dual_coef).map(|(s, &c)| c * self.kernel.eval(s, x)).sum::<f64>() - self.rho
    }

    /// Platt probability when calibrated, else the logistic of the decision.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let f = self.decision(x);
        match self.platt {
            Some(p) => p.prob(f),
            None => crate::special::sigmoid(f),
        }
    }
}

fn fit_uncalibrated(x: &Matrix, y: &[u8], cfg: &SvmConfig) -> Result<Svm> {
    let ys: Vec<f64> = y.iter().map(|&t| if t == 1 { 1.0 } else { -1.0 }).collect();
    let sol = solve_dual(x, &ys, cfg, None)?;
    let sv: Vec<usize> = (0..x.nrows()).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(Svm {
        kernel: cfg.kernel,
        support: x.select_rows(&sv),
        dual_coef: sv.iter().map(|&i| sol.alpha[i] * ys[i]).collect(),
        rho: sol.rho,
        platt: None,
    })
}

/// Fits the SVM on all rows; with `calibrate`, Platt parameters come from
/// out-of-fold decision values over `platt_folds` stratified folds.
pub fn fit_svm(x: &Matrix, y: &[u8], cfg: &SvmConfig, seed: u64) -> Result<Svm> {
    assert_eq!(x.nrows(), y.len(), "svm rows");
    if !(cfg.c > 0.0) || matches!(cfg.kernel, Kernel::Rbf { gamma } if !(gamma > 0.0)) {
        return Err(Error::InvalidConfig(format!("SVM needs C > 0 and gamma > 0, got {:?}", cfg)));
    }
    let pos = y.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    if x.nrows() > 0 && (1..x.nrows()).all(|i| x.row(i) == x.row(0)) {
        return Err(Error::DegenerateKernel);
    }
    let mut model = fit_uncalibrated(x, y, cfg)?;
    if cfg.calibrate {
        let folds = stratified_folds(y, None, cfg.platt_folds, seed)?;
        let mut f = vec![0.0; y.len()];
        for k in 0..cfg.platt_folds {
            let (tr, va) = fold_split(&folds, k);
            let ytr: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
            let m = fit_uncalibrated(&x.select_rows(&tr), &ytr, cfg)?;
            for &i in &va {
                f[i] = m.decision(x.row(i));
            }
        }
        model.platt = Some(fit_platt(&f, y));
    }
    Ok(model)
}
