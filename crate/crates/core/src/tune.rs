//! Grid search with stratified k-fold CV. SMOTE runs on each training fold
//! only; validation folds stay untouched.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{fold_split, stratified_folds};
use crate::error::{Error, Result};
use crate::eval::roc_auc;
use crate::learn::{fit, Family, ModelSpec};
use crate::matrix::Matrix;
use crate::resample::{smote, SmoteConfig};
use crate::seed;

/// Hyperparameter name to candidate values, per family.
pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GridSpec(pub BTreeMap<Family, Grid>);

impl GridSpec {
    /// Grids centred on the published optima.
    pub fn centered() -> GridSpec {
        let g = |v: &[(&str, &[f64])]| -> Grid { v.iter().map(|(k, x)| (k.to_string(), x.to_vec())).collect() };
        GridSpec(BTreeMap::from([
            (Family::Logreg, g(&[("c", &[0.01, 0.1, 1.0])])),
            (Family::SvmRbf, g(&[("c", &[0.1, 1.0, 10.0]), ("gamma", &[0.001, 0.01, 0.1])])),
            (Family::GbdtXgbPreset, g(&[("n_trees", &[100.0, 200.0, 400.0]), ("max_depth", &[2.0, 3.0, 4.0])])),
            (Family::GbdtCatPreset, g(&[("n_trees", &[250.0, 500.0, 1000.0]), ("max_depth", &[2.0, 3.0, 4.0])])),
        ]))
    }
}

/// Every configuration of `grid` applied to `base`, in lexicographic order
/// (parameter names sorted, values in the given order).
pub fn expand(base: &ModelSpec, grid: &Grid) -> Result<Vec<(BTreeMap<String, f64>, ModelSpec)>> {
    let allowed = base.family().params();
    for (k, v) in grid {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::InvalidGrid(format!("`{k}` is not a hyperparameter of {}", base.family().name())));
        }
        if v.is_empty() {
            return Err(Error::InvalidGrid(format!("`{k}` has no candidate values")));
        }
    }
    let mut out = vec![(BTreeMap::new(), base.clone())];
    for (k, vals) in grid {
        let mut next = Vec::with_capacity(out.len() * vals.len());
        for (params, spec) in &out {
            for &v in vals {
                let mut p = params.clone();
                p.insert(k.clone(), v);
                next.push((p, spec.with_param(k, v)?));
            }
        }
        out = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub params: BTreeMap<String, f64>,
    pub spec: ModelSpec,
    pub fold_auc: Vec<Option<f64>>,
    /// Per-fold error codes, `None` where the fold succeeded.
    pub fold_error: Vec<Option<String>>,
    pub mean_auc: f64,
    pub sd_auc: f64,
}

impl ConfigScore {
    pub fn complete(&self) -> bool {
        self.fold_error.iter().all(Option::is_none)
    }

    pub fn label(&self) -> String {
        self.params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub family: Family,
    pub leaderboard: Vec<ConfigScore>,
    pub best: usize,
    pub n_folds: usize,
    pub seed: u64,
}

impl TuneResult {
    pub fn best_spec(&self) -> &ModelSpec {
        &self.leaderboard[self.best].spec
    }

    /// Header plus one row per configuration.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("family\tconfig\tmean_auc\tsd_auc\tfailed_folds\n");
        for c in &self.leaderboard {
            let failed = c.fold_error.iter().filter(|e| e.is_some()).count();
            s += &format!("{}\t{}\t{:.6}\t{:.6}\t{}\n", self.family.name(), c.label(), c.mean_auc, c.sd_auc, failed);
        }
        s
    }
}

/// Training (resampled) and validation data of fold `f`.
pub fn fold_data(x: &Matrix, y: &[u8], folds: &[usize], f: usize, smote_cfg: &SmoteConfig) -> Result<(Matrix, Vec<u8>, Matrix, Vec<u8>)> {
    let (tr, va) = fold_split(folds, f);
    let ytr: Vec<u8> = tr.iter().map(|&i| y[i]).collect();
    let r = smote(&x.select_rows(&tr), &ytr, smote_cfg)?;
    Ok((r.x, r.y, x.select_rows(&va), va.iter().map(|&i| y[i]).collect()))
}

/// Scores every configuration by mean validation AUC. The best is the
/// highest mean among configurations without failed folds; exact ties go to
/// the smaller model.
pub fn grid_search(x: &Matrix, y: &[u8], names: &[String], base: &ModelSpec, grid: &Grid, n_folds: usize, smote_cfg: &SmoteConfig, seed: u64) -> Result<TuneResult> {
    if n_folds < 2 {
        return Err(Error::InvalidConfig(format!("tuning needs at least 2 folds, got {n_folds}")));
    }
    let configs = expand(base, grid)?;
    let folds = stratified_folds(y, None, n_folds, seed::derive(seed, "folds"))?;
    let data: Vec<_> = (0..n_folds)
        .map(|f| fold_data(x, y, &folds, f, &SmoteConfig { seed: seed::child(smote_cfg.seed, f as u64), ..*smote_cfg }))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..n_folds).map(move |f| (c, f))).collect();
    let fit_seed = seed::derive(seed, "fit");
    let results: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(c, f)| {
            let (xt, yt, xv, yv) = &data[f];
            let m = fit(&configs[c].1, xt, yt, names, seed::child(fit_seed, f as u64))?;
            roc_auc(&m.score(xv)?, yv).map(|r| r.auc)
        })
        .collect();
    let mut leaderboard = Vec::with_capacity(configs.len());
    for (c, (params, spec)) in configs.into_iter().enumerate() {
        let cell = &results[c * n_folds..(c + 1) * n_folds];
        let fold_auc: Vec<Option<f64>> = cell.iter().map(|r| r.as_ref().ok().copied()).collect();
        let fold_error: Vec<Option<String>> = cell.iter().map(|r| r.as_ref().err().map(|e| e.code().to_string())).collect();
        let ok: Vec<f64> = fold_auc.iter().flatten().copied().collect();
        let mean = if ok.is_empty() { f64::NAN } else { ok.iter().sum::<f64>() / ok.len() as f64 };
        let sd = if ok.len() < 2 { 0.0 } else { (ok.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt() };
        leaderboard.push(ConfigScore { params, spec, fold_auc, fold_error, mean_auc: mean, sd_auc: sd });
    }
    let mut best: Option<usize> = None;
    for (i, c) in leaderboard.iter().enumerate() {
        if !c.complete() {
            continue;
        }
        best = match best {
            Some(b) => {
                let cb = &leaderboard[b];
                let better = c.mean_auc > cb.mean_auc
                    || (c.mean_auc == cb.mean_auc && c.spec.size_key().partial_cmp(&cb.spec.size_key()) == Some(std::cmp::Ordering::Less));
                Some(if better { i } else { b })
            }
            None => Some(i),
        };
    }
    let Some(best) = best else {
        return Err(results.into_iter().find_map(Result::err).unwrap_or_else(|| Error::InvalidGrid("no configuration completed".into())));
    };
    Ok(TuneResult { family: base.family(), leaderboard, best, n_folds, seed })
}
