//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! an oracle written independently of the library code under test.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use strokerisk::eval;
use strokerisk::explain::{exact_shap, kernel_shap};
use strokerisk::learn::forest::{Tree, LEAF};
use strokerisk::learn::gbdt::{fit_gbdt_traced, GbdtConfig};
use strokerisk::learn::svm::{solve_dual, Kernel, SvmConfig};
use strokerisk::learn::{self, Family, ModelSpec};
use strokerisk::matrix::Matrix;
use strokerisk::pipeline::{self, DataSource, PipelineConfig};
use strokerisk::resample::{self, SmoteConfig};
use strokerisk::select::{self, Design, LassoConfig, LassoLoss};
use strokerisk::stats::{self, TVariant};
use strokerisk::tabular::{CohortTable, ColumnValues, VarKind};
use strokerisk::{cohortgen, seed};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn within(limit: Duration, t: Instant) -> Result<(), String> {
    ensure(t.elapsed() < limit, || format!("took {:?}, limit {limit:?}", t.elapsed()))
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn gaussian_matrix(rng: &mut impl Rng, n: usize, p: usize) -> Matrix {
    Matrix::from_vec(n, p, (0..n * p).map(|_| normal(rng)).collect())
}

fn logistic_labels(rng: &mut impl Rng, x: &Matrix, w: &[f64], b: f64) -> Vec<u8> {
    x.rows_iter().map(|r| u8::from(rng.random::<f64>() < sigmoid(b + r.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()))).collect()
}

// Criterion 1: cohort statistics from published counts and moments.

fn table1_counts() -> Outcome {
    let t = Instant::now();
    let tables: [([[f64; 2]; 2], f64, f64); 4] = [
        ([[273.0, 3503.0], [115.0, 1025.0]], 9.448, 0.15),
        ([[94.0, 326.0], [294.0, 4202.0]], 130.434, 2.0),
        ([[55.0, 248.0], [333.0, 4280.0]], 45.259, 1.0),
        ([[256.0, 3422.0], [132.0, 1106.0]], 16.956, 0.5),
    ];
    let mut got = Vec::new();
    for (tab, want, tol) in tables {
        let rows: Vec<Vec<f64>> = tab.iter().map(|r| r.to_vec()).collect();
        let s = stats::chi_square(&rows, true).map_err(|e| e.to_string())?.statistic;
        ensure((s - want).abs() <= tol, || format!("chi-square {s:.3}, published {want}"))?;
        got.push(format!("{s:.3}"));
    }
    // (stroke n, mean, sd), (no-stroke n, mean, sd), band
    let moments = [
        ("age", (388, 72.0, 9.9), (4528, 68.0, 10.8), (6.9, 8.1)),
        ("sbp", (388, 113.8, 10.6), (4528, 112.0, 9.0), (2.8, 3.6)),
        ("cci", (388, 6.5, 2.2), (4528, 4.4, 2.3), (16.2, 19.0)),
    ];
    for (name, a, b, (lo, hi)) in moments {
        let sa = stats::summary_equivalent_sample(a.0, a.1, a.2);
        let sb = stats::summary_equivalent_sample(b.0, b.1, b.2);
        let tv = stats::t_test(&sa, &sb, TVariant::Welch).map_err(|e| e.to_string())?.statistic.abs();
        // Welch statistic straight from the moments.
        let direct = (a.1 - b.1) / (a.2 * a.2 / a.0 as f64 + b.2 * b.2 / b.0 as f64).sqrt();
        ensure((tv - direct.abs()).abs() < 1e-9, || format!("{name}: t {tv} differs from moment formula {direct}"))?;
        ensure(tv >= lo && tv <= hi, || format!("{name}: |t| {tv:.3} outside [{lo}, {hi}]"))?;
        got.push(format!("{name} |t| {tv:.2}"));
    }
    within(Duration::from_secs(1), t)?;
    Ok(format!("chi-square {}", got.join(", ")))
}

// Criterion 2: trapezoid AUC against pair counting.

fn pair_count_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &a) in s.iter().enumerate() {
        if y[i] != 1 {
            continue;
        }
        for (j, &b) in s.iter().enumerate() {
            if y[j] != 0 {
                continue;
            }
            pairs += 1.0;
            wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    wins / pairs
}

fn auc_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=2000);
        let levels = [3, 10, 50, 1_000_000][rng.random_range(0..4)];
        let prev = rng.random_range(0.05..0.95);
        let mut y: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < prev)).collect();
        y[0] = 1;
        y[1] = 0;
        let s: Vec<f64> = y.iter().map(|&l| (rng.random_range(0..levels) as f64 + f64::from(l) * levels as f64 * 0.2) / levels as f64).collect();
        let got = eval::roc_auc(&s, &y).map_err(|e| e.to_string())?.auc;
        worst = worst.max((got - pair_count_auc(&s, &y)).abs());
    }
    ensure(worst <= 1e-12, || format!("max |AUC - pair count| = {worst:e}"))?;
    within(Duration::from_secs(30), t)?;
    Ok(format!("1000 instances, max deviation {worst:.1e}"))
}

// Criterion 3: Shapley values.

/// Shapley values from the subset formula with the interventional value
/// function v(S) = mean over background of f(x_S, b_rest).
fn shapley_oracle(f: &dyn Fn(&[f64]) -> f64, x: &[f64], bg: &Matrix) -> Vec<f64> {
    let p = x.len();
    let v = |mask: u32| {
        let mut z = vec![0.0; p];
        bg.rows_iter()
            .map(|b| {
                for j in 0..p {
                    z[j] = if mask >> j & 1 == 1 { x[j] } else { b[j] };
                }
                f(&z)
            })
            .sum::<f64>()
            / bg.nrows() as f64
    };
    let vals: Vec<f64> = (0..1u32 << p).map(v).collect();
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    (0..p)
        .map(|j| {
            (0..1u32 << p)
                .filter(|m| m >> j & 1 == 0)
                .map(|m| {
                    let s = m.count_ones() as usize;
                    fact(s) * fact(p - s - 1) / fact(p) * (vals[(m | 1 << j) as usize] - vals[m as usize])
                })
                .sum()
        })
        .collect()
}

fn shap_oracle() -> Outcome {
    let t = Instant::now();
    let p = 12;
    let mut rng = seed::rng(3);
    let mut x = gaussian_matrix(&mut rng, 600, p);
    // Columns 10 and 11 are identical so symmetric players exist.
    for i in 0..x.nrows() {
        let v = x.get(i, 10);
        x.set(i, 11, v);
    }
    let w: Vec<f64> = (0..p).map(|j| if j < 6 { 1.0 - 0.3 * j as f64 } else if j >= 10 { 0.4 } else { 0.0 }).collect();
    let y = logistic_labels(&mut rng, &x, &w, -0.5);
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let rows: Vec<usize> = (0..50).collect();
    let bg_rows: Vec<usize> = (100..116).collect();
    let (xe, bg) = (x.select_rows(&rows), x.select_rows(&bg_rows));
    let mut notes = Vec::new();
    for fam in [Family::GbdtXgbPreset, Family::Logreg] {
        let m = learn::fit(&ModelSpec::default_for(fam), &x, &y, &names, 7).map_err(|e| e.to_string())?;
        let f = |r: &[f64]| m.score_row(r);
        let (base, exact) = exact_shap(&f, &xe, &bg).map_err(|e| e.to_string())?;
        let (kbase, kern) = kernel_shap(&f, &xe, &bg, 1 << p, 0.0, 11).map_err(|e| e.to_string())?;
        let kdev = exact.as_slice().iter().zip(kern.as_slice()).map(|(a, b)| (a - b).abs()).fold((base - kbase).abs(), f64::max);
        ensure(kdev <= 1e-6, || format!("{}: kernel vs exact {kdev:e}", fam.name()))?;

        // Exact mode against the subset formula on a few rows.
        let mut odev: f64 = 0.0;
        for i in 0..3 {
            let o = shapley_oracle(&f, xe.row(i), &bg);
            odev = o.iter().zip(exact.row(i)).map(|(a, b)| (a - b).abs()).fold(odev, f64::max);
        }
        ensure(odev <= 1e-9, || format!("{}: exact vs subset formula {odev:e}", fam.name()))?;

        // Efficiency.
        let eff = (0..xe.nrows()).map(|i| (base + exact.row(i).iter().sum::<f64>() - f(xe.row(i))).abs()).fold(0.0, f64::max);
        ensure(eff <= 1e-6, || format!("{}: efficiency {eff:e}", fam.name()))?;

        // Null player: a wrapped model that ignores feature 3.
        let g = |r: &[f64]| {
            let mut z = r.to_vec();
            z[3] = 0.25;
            f(&z)
        };
        let (_, gphi) = exact_shap(&g, &xe, &bg).map_err(|e| e.to_string())?;
        let null = gphi.col(3).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        ensure(null <= 1e-6, || format!("{}: null player {null:e}", fam.name()))?;

        // Symmetry: h is invariant under swapping features 10 and 11, which
        // are equal in every row, so they must get equal attributions.
        let h = |r: &[f64]| {
            let mut z = r.to_vec();
            z.swap(10, 11);
            0.5 * (f(r) + f(&z))
        };
        let (_, hphi) = exact_shap(&h, &xe, &bg).map_err(|e| e.to_string())?;
        let sym = (0..xe.nrows()).map(|i| (hphi.get(i, 10) - hphi.get(i, 11)).abs()).fold(0.0, f64::max);
        ensure(sym <= 1e-6, || format!("{}: symmetry {sym:e}", fam.name()))?;
        notes.push(format!("{} kernel {kdev:.0e} formula {odev:.0e} eff {eff:.0e} null {null:.0e} sym {sym:.0e}", fam.name()));
    }
    within(Duration::from_secs(300), t)?;
    Ok(notes.join("; "))
}

// Criterion 4: LASSO path.

/// Largest KKT residual of the penalized objective at (b, beta).
fn lasso_kkt(x: &Matrix, y: &[f64], loss: LassoLoss, lambda: f64, b: f64, beta: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let resid: Vec<f64> = x
        .rows_iter()
        .zip(y)
        .map(|(r, &t)| {
            let eta = b + r.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>();
            match loss {
                LassoLoss::Gaussian => eta - t,
                LassoLoss::Logistic => sigmoid(eta) - t,
            }
        })
        .collect();
    let mut worst = (resid.iter().sum::<f64>() / n).abs();
    for (j, &bj) in beta.iter().enumerate() {
        let g = x.rows_iter().zip(&resid).map(|(r, e)| r[j] * e).sum::<f64>() / n;
        let r = if bj != 0.0 { (g + lambda * bj.signum()).abs() } else { (g.abs() - lambda).max(0.0) };
        worst = worst.max(r);
    }
    worst
}

/// Unpenalized one-feature logistic regression by Newton's method on (b, w).
fn newton_logistic(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mut b, mut w) = (0.0, 0.0);
    for _ in 0..100 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(b + w * xi);
            let v = p * (1.0 - p);
            g0 += p - yi;
            g1 += (p - yi) * xi;
            h00 += v;
            h01 += v * xi;
            h11 += v * xi * xi;
        }
        let det = h00 * h11 - h01 * h01;
        let (db, dw) = ((h11 * g0 - h01 * g1) / det, (h00 * g1 - h01 * g0) / det);
        b -= db;
        w -= dw;
        if db.abs().max(dw.abs()) < 1e-14 {
            break;
        }
    }
    (b, w)
}

fn lasso_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(4);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let (n, p) = (500, 30);
        let common: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mut x = gaussian_matrix(&mut rng, n, p);
        for i in 0..n {
            for j in 0..p {
                let v = x.get(i, j) + 0.5 * common[i];
                x.set(i, j, v);
            }
        }
        let w: Vec<f64> = (0..p).map(|j| if j % 6 == 0 { 0.8 } else { 0.0 }).collect();
        let y: Vec<f64> = logistic_labels(&mut rng, &x, &w, -1.0).into_iter().map(f64::from).collect();
        let loss = if k % 2 == 0 { LassoLoss::Gaussian } else { LassoLoss::Logistic };
        let cfg = LassoConfig { loss, ..LassoConfig::default() };
        let lmax = select::lambda_max(&Design::new(&x), &y);
        let grid = select::lambda_grid(lmax, cfg.n_lambdas, cfg.min_ratio);
        let (coef, b) = select::fit_path(&x, &y, &grid, &cfg).map_err(|e| e.to_string())?;
        for (q, &l) in grid.iter().enumerate() {
            worst = worst.max(lasso_kkt(&x, &y, loss, l, b[q], coef.row(q)));
        }
        let (top, _) = select::fit_path(&x, &y, &[2.0 * lmax, lmax], &cfg).map_err(|e| e.to_string())?;
        ensure(top.as_slice().iter().all(|&v| v == 0.0), || format!("problem {k}: nonzero coefficient at lambda >= lambda_max"))?;
    }
    ensure(worst <= 1e-6, || format!("max KKT residual {worst:e}"))?;

    let x1: Vec<f64> = (0..400).map(|_| normal(&mut rng)).collect();
    let xm = Matrix::from_columns(&[x1.clone()]);
    let y1: Vec<f64> = logistic_labels(&mut rng, &xm, &[1.3], 0.4).into_iter().map(f64::from).collect();
    let (nb, nw) = newton_logistic(&x1, &y1);
    let cfg = LassoConfig { loss: LassoLoss::Logistic, ..LassoConfig::default() };
    let (c, b) = select::fit_path(&xm, &y1, &[0.0], &cfg).map_err(|e| e.to_string())?;
    let dev = (c.get(0, 0) - nw).abs().max((b[0] - nb).abs());
    ensure(dev <= 1e-5, || format!("lambda=0 fit ({}, {}) vs Newton ({nb}, {nw})", b[0], c.get(0, 0)))?;
    within(Duration::from_secs(120), t)?;
    Ok(format!("max KKT residual {worst:.1e}, Newton deviation {dev:.1e}"))
}

// Criterion 5: SVM dual.

fn gram(x: &Matrix, y: &[f64], k: Kernel) -> Vec<Vec<f64>> {
    let n = x.nrows();
    (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k.eval(x.row(i), x.row(j))).collect()).collect()
}

fn dual_value(q: &[Vec<f64>], a: &[f64]) -> f64 {
    let quad: f64 = q.iter().zip(a).map(|(r, ai)| ai * r.iter().zip(a).map(|(v, aj)| v * aj).sum::<f64>()).sum();
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Euclidean projection onto {0 <= a <= c, y'a = 0} by bisection on the
/// multiplier of the equality constraint.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let h = |nu: f64| at(nu).iter().zip(y).map(|(a, yi)| a * yi).sum::<f64>();
    let span = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 { lo = mid } else { hi = mid }
    }
    at(0.5 * (lo + hi))
}

/// Accelerated projected gradient on min 1/2 a'Qa - e'a over the dual set.
fn pg_dual(q: &[Vec<f64>], y: &[f64], c: f64) -> Vec<f64> {
    let n = y.len();
    let mut v = vec![1.0; n];
    let mut lip = 0.0;
    for _ in 0..200 {
        let w: Vec<f64> = q.iter().map(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        lip = norm;
        v = w.iter().map(|x| x / norm).collect();
    }
    let step = 1.0 / (lip * 1.01);
    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut tk: f64 = 1.0;
    for _ in 0..60_000 {
        let g: Vec<f64> = q.iter().map(|r| r.iter().zip(&z).map(|(qq, zz)| qq * zz).sum::<f64>() - 1.0).collect();
        let next = project(&z.iter().zip(&g).map(|(zz, gg)| zz - step * gg).collect::<Vec<_>>(), y, c);
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        let restart = dual_value(q, &next) < dual_value(q, &a);
        z = if restart { next.clone() } else { next.iter().zip(&a).map(|(x1, x0)| x1 + (tk - 1.0) / tn * (x1 - x0)).collect() };
        tk = if restart { 1.0 } else { tn };
        let moved = next.iter().zip(&a).map(|(x1, x0)| (x1 - x0).abs()).fold(0.0, f64::max);
        a = next;
        if moved < 1e-13 {
            break;
        }
    }
    a
}

/// Maximal violating pair gap m(a) - M(a).
fn kkt_gap(q: &[Vec<f64>], y: &[f64], a: &[f64], c: f64) -> f64 {
    let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..a.len() {
        let g = q[i].iter().zip(a).map(|(v, aj)| v * aj).sum::<f64>() - 1.0;
        let s = -y[i] * g;
        if (y[i] > 0.0 && a[i] < c) || (y[i] < 0.0 && a[i] > 0.0) {
            up = up.max(s);
        }
        if (y[i] > 0.0 && a[i] > 0.0) || (y[i] < 0.0 && a[i] < c) {
            low = low.min(s);
        }
    }
    up - low
}

fn svm_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(5);
    let (mut worst_obj, mut worst_kkt): (f64, f64) = (0.0, 0.0);
    for k in 0..10 {
        let n = 60 + 14 * k;
        let x = gaussian_matrix(&mut rng, n, 3);
        let y: Vec<f64> = x.rows_iter().map(|r| if r[0] + 0.5 * r[1] * r[1] - 0.3 + 0.5 * normal(&mut rng) > 0.0 { 1.0 } else { -1.0 }).collect();
        let kernel = if k % 2 == 0 { Kernel::Rbf { gamma: 0.5 } } else { Kernel::Linear };
        let c = [0.5, 1.0, 4.0][k % 3];
        let cfg = SvmConfig { c, kernel, calibrate: false, ..SvmConfig::default() };
        let sol = solve_dual(&x, &y, &cfg, None).map_err(|e| e.to_string())?;
        let q = gram(&x, &y, kernel);
        let oracle = pg_dual(&q, &y, c);
        let (d_smo, d_pg) = (dual_value(&q, &sol.alpha), dual_value(&q, &oracle));
        let rel = (d_smo - d_pg).abs() / d_pg.abs();
        ensure(rel <= 1e-4, || format!("problem {k}: SMO objective {d_smo} vs oracle {d_pg}"))?;
        ensure((sol.objective - d_smo).abs() <= 1e-8 * d_smo.abs().max(1.0), || format!("problem {k}: reported objective {} vs {d_smo}", sol.objective))?;
        let gap = kkt_gap(&q, &y, &sol.alpha, c);
        ensure(gap < 1e-3, || format!("problem {k}: KKT violation {gap:e}"))?;
        worst_obj = worst_obj.max(rel);
        worst_kkt = worst_kkt.max(gap);
    }

    let x = Matrix::from_rows(&[[0.0], [2.0]]);
    let y = [-1.0, 1.0];
    let cfg = SvmConfig { c: 100.0, kernel: Kernel::Linear, calibrate: false, ..SvmConfig::default() };
    let sol = solve_dual(&x, &y, &cfg, None).map_err(|e| e.to_string())?;
    let f = |v: f64| (0..2).map(|i| sol.alpha[i] * y[i] * x.get(i, 0) * v).sum::<f64>() - sol.rho;
    let dev = [-1.0, 0.0, 0.5, 1.0, 2.0, 3.5].iter().map(|&v| (f(v) - (v - 1.0)).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-3, || format!("two-point decision deviates from x - 1 by {dev:e}"))?;
    within(Duration::from_secs(120), t)?;
    Ok(format!("max relative objective gap {worst_obj:.1e}, max KKT violation {worst_kkt:.1e}, two-point deviation {dev:.1e}"))
}

// Criterion 6: GBDT.

fn leaf_of(tree: &Tree, x: &[f64]) -> usize {
    let mut k = 0;
    while tree.feature[k] != LEAF {
        k = if x[tree.feature[k] as usize] <= tree.threshold[k] { tree.left[k] } else { tree.right[k] } as usize;
    }
    k
}

fn gbdt_correctness() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(6);
    let mut worst: f64 = 0.0;
    let mut leaves = 0usize;
    for k in 0..20 {
        let (n, p) = (300, 5);
        let mut x = gaussian_matrix(&mut rng, n, p);
        // A coarse column forces ties in split search.
        for i in 0..n {
            let v = (x.get(i, 4) * 2.0).round();
            x.set(i, 4, v);
        }
        let y: Vec<u8> = x.rows_iter().map(|r| u8::from(rng.random::<f64>() < sigmoid(r[0] - r[1] * r[2] + 0.5 * r[4]))).collect();
        let cfg = GbdtConfig {
            n_trees: 40,
            learning_rate: [0.05, 0.1, 0.3][k % 3],
            max_depth: 2 + k % 3,
            lambda_l2: [0.5, 1.0, 2.0][k % 3],
            min_child_weight: 1.0,
            oblivious: k % 2 == 1,
        };
        let (model, trace) = fit_gbdt_traced(&x, &y, &cfg).map_err(|e| e.to_string())?;
        ensure(trace.len() == cfg.n_trees + 1, || format!("problem {k}: trace has {} entries", trace.len()))?;
        for r in 1..trace.len() {
            ensure(trace[r] <= trace[r - 1], || format!("problem {k}: logloss rose at round {r}: {} -> {}", trace[r - 1], trace[r]))?;
        }
        let mut margin = vec![model.base_margin; n];
        for tree in &model.trees {
            let mut gh: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for i in 0..n {
                let pr = sigmoid(margin[i]);
                let e = gh.entry(leaf_of(tree, x.row(i))).or_default();
                e.0 += pr - f64::from(y[i]);
                e.1 += pr * (1.0 - pr);
            }
            for (kk, &f) in tree.feature.iter().enumerate() {
                if f != LEAF {
                    continue;
                }
                let (g, h) = gh.get(&kk).copied().unwrap_or((0.0, 0.0));
                let want = -g / (h + cfg.lambda_l2);
                worst = worst.max((tree.value[kk] - want).abs());
                leaves += 1;
            }
            for i in 0..n {
                margin[i] += cfg.learning_rate * tree.value[leaf_of(tree, x.row(i))];
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max leaf deviation {worst:e}"))?;
    within(Duration::from_secs(60), t)?;
    Ok(format!("20 problems nonincreasing, {leaves} leaves, max deviation {worst:.1e}"))
}

// Criterion 7: SMOTE.

fn smote_geometry() -> Outcome {
    let t = Instant::now();
    let mut rng = seed::rng(7);
    let (n, p, minority) = (300, 4, 40);
    let x = gaussian_matrix(&mut rng, n, p);
    let y: Vec<u8> = (0..n).map(|i| u8::from(i % 7 == 0 && i / 7 < minority)).collect();
    let pos = y.iter().filter(|&&v| v == 1).count();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (ratio, k) in [(1.0, 5), (0.5, 3), (0.8, 5)] {
        let r = resample::smote(&x, &y, &SmoteConfig { k_neighbors: k, target_ratio: ratio, seed: 17 }).map_err(|e| e.to_string())?;
        let post_min = r.y.iter().filter(|&&v| v == 1).count() as f64;
        let maj = (n - pos) as f64;
        ensure((post_min - ratio * maj).abs() <= 1.0, || format!("ratio {ratio}: {post_min} minority vs {maj} majority"))?;
        for (m, s) in r.synthetic.iter().enumerate() {
            let (a, b, z) = (x.row(s.base), x.row(s.neighbor), r.x.row(n + m));
            ensure(y[s.base] == 1 && y[s.neighbor] == 1 && s.base != s.neighbor, || format!("synthetic {m}: parents are not two minority rows"))?;
            // Parent b must be among the k nearest minority rows of a.
            let d = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            let mut ds: Vec<f64> = (0..n).filter(|&i| y[i] == 1 && i != s.base).map(|i| d(a, x.row(i))).collect();
            ds.sort_by(f64::total_cmp);
            ensure(d(a, b) <= ds[k - 1], || format!("synthetic {m}: neighbor is not among the {k} nearest"))?;
            let ab: f64 = a.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum();
            let u = a.iter().zip(b).zip(z).map(|((p, q), w)| (w - p) * (q - p)).sum::<f64>() / ab;
            ensure((-1e-12..=1.0 + 1e-12).contains(&u), || format!("synthetic {m}: projection {u} outside the segment"))?;
            worst = (0..p).map(|j| (a[j] + u * (b[j] - a[j]) - z[j]).abs()).fold(worst, f64::max);
            checked += 1;
        }
    }
    ensure(worst < 1e-12, || format!("interpolation residual {worst:e}"))?;
    let count = resample::synthetic_count(388, 4528, 1.0);
    ensure(count == 4140, || format!("388/4528 at ratio 1.0 gives {count} synthetic rows"))?;
    let xs = gaussian_matrix(&mut rng, 388 + 4528, 2);
    let ys: Vec<u8> = (0..388 + 4528).map(|i| u8::from(i < 388)).collect();
    let r = resample::smote(&xs, &ys, &SmoteConfig::default()).map_err(|e| e.to_string())?;
    ensure(r.synthetic.len() == 4140, || format!("SMOTE on 388/4528 made {} synthetic rows", r.synthetic.len()))?;
    within(Duration::from_secs(60), t)?;
    Ok(format!("{checked} synthetic rows, residual {worst:.1e}, 388/4528 -> 4140"))
}

// Criterion 8: nothing learned depends on test cells.

fn perturb_test_cells(table: &CohortTable, test_ids: &[String]) -> Result<CohortTable, String> {
    let pos: BTreeMap<&str, usize> = table.row_ids().iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
    let rows: Vec<usize> = test_ids.iter().map(|r| pos[r.as_str()]).collect();
    let mut cols = table.columns().to_vec();
    for (c, col) in cols.iter_mut().enumerate() {
        let kind = col.kind;
        match &mut col.values {
            ColumnValues::Numeric(v) => {
                for (q, &i) in rows.iter().enumerate() {
                    v[i] = match (kind, v[i], (q + c) % 5) {
                        (_, _, 0) => None,
                        (VarKind::Binary, Some(b), _) => Some(1.0 - b),
                        (VarKind::Binary, None, _) => Some(1.0),
                        (_, Some(a), _) => Some(a * 1.7 + 3.0),
                        (_, None, _) => Some(42.0),
                    };
                }
            }
            ColumnValues::Categorical(v) => {
                let levels: Vec<String> = v.iter().flatten().cloned().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
                for (q, &i) in rows.iter().enumerate() {
                    v[i] = if (q + c) % 5 == 0 { None } else { levels.iter().find(|l| Some(*l) != v[i].as_ref()).cloned() };
                }
            }
        }
    }
    table.with_columns(cols).map_err(|e| e.to_string())
}

fn fitted_bytes(cfg: &PipelineConfig, table: &CohortTable) -> Result<(Vec<String>, Vec<Vec<u8>>), String> {
    let p = pipeline::prepare(cfg, table).map_err(|e| e.to_string())?;
    let balanced = pipeline::balance(cfg, &p.train_x).map_err(|e| e.to_string())?;
    let mut out = vec![
        serde_json::to_vec(&p.plan).map_err(|e| e.to_string())?,
        serde_json::to_vec(&p.path).map_err(|e| e.to_string())?,
        serde_json::to_vec(&p.selected).map_err(|e| e.to_string())?,
    ];
    for fam in Family::REPORTED {
        let m = pipeline::fit_model(cfg, &ModelSpec::default_for(fam), &balanced).map_err(|e| e.to_string())?;
        out.push(m.to_json().map_err(|e| e.to_string())?.into_bytes());
    }
    // Last entry: the test matrix, which must change.
    out.push(serde_json::to_vec(&p.test_all.x.as_slice()).map_err(|e| e.to_string())?);
    Ok((p.test.row_ids().to_vec(), out))
}

fn leakage_audit() -> Outcome {
    let t = Instant::now();
    let cfg = PipelineConfig::default();
    let table = pipeline::load_data(&cfg).map_err(|e| e.to_string())?;
    let (test_ids, before) = fitted_bytes(&cfg, &table)?;
    let chosen: Vec<String> = test_ids.iter().step_by(7).cloned().collect();
    let changed = perturb_test_cells(&table, &chosen)?;
    let (test_ids2, after) = fitted_bytes(&cfg, &changed)?;
    ensure(test_ids == test_ids2, || "perturbation changed the split".into())?;
    let labels = ["plan", "lasso path", "selection", "gbdt_xgb_preset", "logreg", "svm_rbf", "gbdt_cat_preset"];
    for (k, l) in labels.iter().enumerate() {
        ensure(before[k] == after[k], || format!("{l} changed after perturbing test cells"))?;
    }
    ensure(before[labels.len()] != after[labels.len()], || "perturbation did not reach the test matrix".into())?;
    within(Duration::from_secs(60), t)?;
    Ok(format!("{} test rows perturbed in every column; plan, path and 4 models byte-identical", chosen.len()))
}

// Criterion 9: directional findings on the synthetic cohort.

const COMORBIDITIES: [&str; 3] = ["ckd", "diabetes", "heart_failure"];

fn variable(feature: &str) -> &str {
    feature.split('=').next().unwrap_or(feature)
}

fn synthetic_end_to_end() -> Outcome {
    let t = Instant::now();
    let cfg = PipelineConfig::default();
    ensure(cfg.master_seed == 42, || "default master seed is not 42".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let s = pipeline::run_all(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let aucs: Vec<String> = s.reports.iter().map(|(f, r)| format!("{} {:.3}", f.name(), r.auc)).collect();
    ensure(s.reports.len() == 4, || format!("{} reported models", s.reports.len()))?;
    for (f, r) in &s.reports {
        ensure((0.75..=0.95).contains(&r.auc), || format!("{} AUC {:.4} outside [0.75, 0.95]", f.name(), r.auc))?;
    }
    let top = s.importance.first().map(|i| i.0.clone()).unwrap_or_default();
    ensure(top == "cci", || format!("top feature is {top}, not cci"))?;

    let (mut selected_ok, mut auc_drop, mut shap_up) = (0, 0, 0);
    let mut notes = Vec::new();
    for k in 0..10u64 {
        let mut rc = PipelineConfig::default();
        rc.data = DataSource::Synthetic { spec: None, seed: Some(seed::child(cfg.master_seed, k)) };
        let table = pipeline::load_data(&rc).map_err(|e| e.to_string())?;
        let p = pipeline::prepare(&rc, &table).map_err(|e| e.to_string())?;
        let names = p.selected_names();
        let missing = cohortgen::INFORMATIVE.iter().filter(|v| !names.iter().any(|n| variable(n) == **v)).count();
        let nuisance = names.iter().filter(|n| !cohortgen::INFORMATIVE.contains(&variable(n))).count();
        if missing == 0 && nuisance <= 3 {
            selected_ok += 1;
        }
        let mut note = format!("seed {k}: missing {missing} nuisance {nuisance}");
        if k < 5 {
            let spec = rc.explain_spec();
            let base = pipeline::ablation_run(&rc, &p, &spec, &[]).map_err(|e| e.to_string())?;
            let no_cci = pipeline::ablation_run(&rc, &p, &spec, &["cci".to_string()]).map_err(|e| e.to_string())?;
            let drop3: Vec<String> = COMORBIDITIES.iter().map(|s| s.to_string()).collect();
            let no3 = pipeline::ablation_run(&rc, &p, &spec, &drop3).map_err(|e| e.to_string())?;
            if no3.report.auc < base.report.auc {
                auc_drop += 1;
            }
            let up = COMORBIDITIES.iter().all(|c| match (base.explanation.mean_signed_of(c), no_cci.explanation.mean_signed_of(c)) {
                (Some(a), Some(b)) => b > a,
                _ => false,
            });
            if up {
                shap_up += 1;
            }
            note += &format!(", AUC {:.3} -> {:.3} without comorbidities, SHAP rise {up}", base.report.auc, no3.report.auc);
        }
        notes.push(note);
    }
    for n in &notes {
        println!("    {n}");
    }
    ensure(selected_ok >= 8, || format!("planted variables selected on {selected_ok}/10 seeds"))?;
    ensure(auc_drop >= 4, || format!("AUC fell on {auc_drop}/5 seeds"))?;
    ensure(shap_up >= 4, || format!("comorbidity SHAP rose on {shap_up}/5 seeds"))?;
    within(Duration::from_secs(600), t)?;
    Ok(format!("{}; cci first; selection {selected_ok}/10, AUC drop {auc_drop}/5, SHAP rise {shap_up}/5", aucs.join(", ")))
}

// Criterion 10: byte-identical reruns.

fn files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).map_err(|e| e.to_string())?.to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(out)
}

fn without_timestamps(manifest: &[u8]) -> Result<serde_json::Value, String> {
    let mut v: serde_json::Value = serde_json::from_slice(manifest).map_err(|e| e.to_string())?;
    let o = v.as_object_mut().ok_or("manifest is not an object")?;
    o.remove("started_unix_ms");
    o.remove("finished_unix_ms");
    Ok(v)
}

fn determinism() -> Outcome {
    let t = Instant::now();
    let cfg = PipelineConfig::default();
    let (a, b) = (tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?);
    pipeline::run_all(&cfg, a.path()).map_err(|e| e.to_string())?;
    pipeline::run_all(&cfg, b.path()).map_err(|e| e.to_string())?;
    let (fa, fb) = (files(a.path())?, files(b.path())?);
    ensure(fa.keys().eq(fb.keys()), || "runs wrote different file sets".into())?;
    for (name, bytes) in &fa {
        if name == "manifest.json" {
            ensure(without_timestamps(bytes)? == without_timestamps(&fb[name])?, || "manifests differ beyond timestamps".into())?;
        } else {
            ensure(*bytes == fb[name], || format!("{name} differs between runs"))?;
        }
    }
    within(Duration::from_secs(1200), t)?;
    Ok(format!("{} artifacts byte-identical", fa.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("cohort statistics from published counts", table1_counts),
        ("AUC equals pair counting", auc_oracle),
        ("Shapley values", shap_oracle),
        ("LASSO optimality", lasso_correctness),
        ("SVM dual optimality", svm_correctness),
        ("GBDT logloss and leaf values", gbdt_correctness),
        ("SMOTE geometry and counts", smote_geometry),
        ("no leakage from test cells", leakage_audit),
        ("synthetic end-to-end findings", synthetic_end_to_end),
        ("byte-identical reruns", determinism),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("criterion {id:>2} PASS  {name} ({secs:.1} s): {d}"),
            Err(e) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1} s): {e}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
