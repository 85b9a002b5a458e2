//! L2-penalized logistic regression by damped Newton. Objective:
//! `sum log(1 + exp(-t_i (x_i'b + b0))) + |b|^2 / (2C)`, intercept unpenalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{cholesky_solve, dot, Matrix};
use crate::special::{log1pexp, sigmoid};

pub const GRAD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogReg {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LogReg {
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.coef, x) + self.intercept
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }
}

/// Penalized objective at `(coef, intercept)`.
pub fn objective(x: &Matrix, y: &[u8], c: f64, m: &LogReg) -> f64 {
    let loss: f64 = x.rows_iter().zip(y).map(|(r, &t)| {
        let eta = m.decision(r);
        log1pexp(eta) - f64::from(t) * eta
    }).sum();
    loss + dot(&m.coef, &m.coef) / (2.0 * c)
}

/// Gradient `[d/dcoef..., d/dintercept]`.
pub fn gradient(x: &Matrix, y: &[u8], c: f64, m: &LogReg) -> Vec<f64> {
    let p = x.ncols();
    let mut g = vec![0.0; p + 1];
    for (r, &t) in x.rows_iter().zip(y) {
        let e = m.predict(r) - f64::from(t);
        for j in 0..p {
            g[j] += e * r[j];
        }
        g[p] += e;
    }
    for j in 0..p {
        g[j] += m.coef[j] / c;
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Fits by Newton steps with backtracking until the gradient norm of the
/// mean loss is below `1e-8` (summed gradient below `1e-8 * n`). Hitting
/// `max_iters` is reported as `NonConvergence`.
pub fn fit_logreg(x: &Matrix, y: &[u8], c: f64, max_iters: usize) -> Result<LogReg> {
    let (n, p) = (x.nrows(), x.ncols());
    assert_eq!(n, y.len(), "logreg rows");
    if !(c > 0.0) {
        return Err(Error::InvalidConfig(format!("logistic regression needs C > 0, got {c}")));
    }
    let pos = y.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("logistic regression input has non-finite values".into()));
    }
    let ybar = pos as f64 / n as f64;
    let mut m = LogReg { coef: vec![0.0; p], intercept: (ybar / (1.0 - ybar)).ln() };
    let mut f = objective(x, y, c, &m);
    let d = p + 1;
    let tol = GRAD_TOL * n as f64;
    for _ in 0..max_iters {
        let g = gradient(x, y, c, &m);
        if norm(&g) < tol {
            return Ok(m);
        }
        let mut h = vec![0.0; d * d];
        for r in x.rows_iter() {
            let pr = m.predict(r);
            let w = pr * (1.0 - pr);
            for a in 0..p {
                let wa = w * r[a];
                for b in 0..=a {
                    h[a * d + b] += wa * r[b];
                }
                h[p * d + a] += wa;
            }
            h[p * d + p] += w;
        }
        for a in 0..d {
            for b in a + 1..d {
                h[a * d + b] = h[b * d + a];
            }
        }
        for a in 0..p {
            h[a * d + a] += 1.0 / c;
        }
        // Tiny ridge keeps the intercept row solvable when all weights vanish.
        h[p * d + p] += 1e-12;
        let step = cholesky_solve(&h, &g).unwrap_or_else(|| g.clone());
        let mut t = 1.0;
        let slope = dot(&g, &step);
        loop {
            let cand = LogReg { coef: (0..p).map(|j| m.coef[j] - t * step[j]).collect(), intercept: m.intercept - t * step[p] };
            let fc = objective(x, y, c, &cand);
            if fc <= f - 1e-4 * t * slope || t < 1e-10 {
                // Accept; at the precision floor a non-increasing step still
                // moves the gradient toward zero.
                if fc <= f {
                    m = cand;
                    f = fc;
                }
                break;
            }
            t *= 0.5;
        }
        if t < 1e-10 {
            // No further progress is possible in floating point.
            let g = gradient(x, y, c, &m);
            if norm(&g) < tol {
                return Ok(m);
            }
            return Err(Error::NonConvergence { model: "logreg", iterations: max_iters, residual: norm(&g) });
        }
    }
    let g = gradient(x, y, c, &m);
    if norm(&g) < tol {
        return Ok(m);
    }
    Err(Error::NonConvergence { model: "logreg", iterations: max_iters, residual: norm(&g) })
}
