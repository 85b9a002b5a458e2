//! Classifier families behind one probability-scoring contract.

pub mod forest;
pub mod gbdt;
pub mod logreg;
pub mod svm;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::special::sigmoid;
use crate::tabular::FeatureMatrix;
use forest::{fit_forest, Forest, ForestConfig, ForestTask};
use gbdt::{fit_gbdt, Gbdt, GbdtConfig};
use logreg::{fit_logreg, LogReg};
use svm::{fit_svm, Kernel, Platt, Svm, SvmConfig};

pub const MODEL_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logreg,
    SvmRbf,
    GbdtXgbPreset,
    GbdtCatPreset,
    RandomForest,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Logreg, Family::SvmRbf, Family::GbdtXgbPreset, Family::GbdtCatPreset, Family::RandomForest];
    /// The four reported families, in report order.
    pub const REPORTED: [Family; 4] = [Family::GbdtXgbPreset, Family::Logreg, Family::SvmRbf, Family::GbdtCatPreset];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logreg => "logreg",
            Family::SvmRbf => "svm_rbf",
            Family::GbdtXgbPreset => "gbdt_xgb_preset",
            Family::GbdtCatPreset => "gbdt_cat_preset",
            Family::RandomForest => "random_forest",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| Error::InvalidConfig(format!("unknown model family `{s}`")))
    }

    /// Tunable hyperparameter names.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            Family::Logreg => &["c"],
            Family::SvmRbf => &["c", "gamma"],
            Family::GbdtXgbPreset | Family::GbdtCatPreset => &["n_trees", "learning_rate", "max_depth", "lambda_l2"],
            Family::RandomForest => &["n_trees", "max_depth", "min_leaf"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogregConfig {
    /// Inverse L2 strength.
    pub c: f64,
    pub max_iters: usize,
}

impl Default for LogregConfig {
    fn default() -> Self {
        LogregConfig { c: 0.1, max_iters: 100 }
    }
}

/// A family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Logreg(LogregConfig),
    SvmRbf(SvmConfig),
    GbdtXgbPreset(GbdtConfig),
    GbdtCatPreset(GbdtConfig),
    RandomForest(ForestConfig),
}

impl ModelSpec {
    /// Defaults are the published optima for each family.
    pub fn default_for(family: Family) -> ModelSpec {
        match family {
            Family::Logreg => ModelSpec::Logreg(LogregConfig::default()),
            Family::SvmRbf => ModelSpec::SvmRbf(SvmConfig::default()),
            Family::GbdtXgbPreset => ModelSpec::GbdtXgbPreset(GbdtConfig::xgb_like()),
            Family::GbdtCatPreset => ModelSpec::GbdtCatPreset(GbdtConfig::cat_like()),
            Family::RandomForest => ModelSpec::RandomForest(ForestConfig::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ModelSpec::Logreg(_) => Family::Logreg,
            ModelSpec::SvmRbf(_) => Family::SvmRbf,
            ModelSpec::GbdtXgbPreset(_) => Family::GbdtXgbPreset,
            ModelSpec::GbdtCatPreset(_) => Family::GbdtCatPreset,
            ModelSpec::RandomForest(_) => Family::RandomForest,
        }
    }

    /// Sets one named hyperparameter.
    pub fn with_param(&self, name: &str, v: f64) -> Result<ModelSpec> {
        let bad = || Error::InvalidGrid(format!("`{name}` = {v} is not valid for {}", self.family().name()));
        let count = |v: f64| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { Err(bad()) };
        let pos = |v: f64| if v > 0.0 && v.is_finite() { Ok(v) } else { Err(bad()) };
        let mut s = self.clone();
        match (&mut s, name) {
            (ModelSpec::Logreg(c), "c") => c.c = pos(v)?,
            (ModelSpec::SvmRbf(c), "c") => c.c = pos(v)?,
            (ModelSpec::SvmRbf(c), "gamma") => c.kernel = Kernel::Rbf { gamma: pos(v)? },
            (ModelSpec::GbdtXgbPreset(c) | ModelSpec::GbdtCatPreset(c), n) => match n {
                "n_trees" => c.n_trees = count(v)?,
                "learning_rate" => c.learning_rate = pos(v)?,
                "max_depth" => c.max_depth = count(v)?,
                "lambda_l2" => c.lambda_l2 = if v >= 0.0 { v } else { return Err(bad()) },
                _ => return Err(bad()),
            },
            (ModelSpec::RandomForest(c), n) => match n {
                "n_trees" => c.n_trees = count(v)?,
                "max_depth" => c.max_depth = Some(count(v)?),
                "min_leaf" => c.min_leaf = count(v)?,
                _ => return Err(bad()),
            },
            _ => return Err(bad()),
        }
        Ok(s)
    }

    /// Size key for parsimony tie-breaks: (trees, C, depth or gamma);
    /// smaller is simpler.
    pub fn size_key(&self) -> (f64, f64, f64) {
        match self {
            ModelSpec::Logreg(c) => (0.0, c.c, 0.0),
            ModelSpec::SvmRbf(c) => (0.0, c.c, match c.kernel { Kernel::Rbf { gamma } => gamma, Kernel::Linear => 0.0 }),
            ModelSpec::GbdtXgbPreset(c) | ModelSpec::GbdtCatPreset(c) => (c.n_trees as f64, 0.0, c.max_depth as f64),
            ModelSpec::RandomForest(c) => (c.n_trees as f64, 0.0, c.max_depth.map_or(f64::INFINITY, |d| d as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum Params {
    Logreg(LogReg),
    Svm(Svm),
    Gbdt(Gbdt),
    Forest(Forest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub spec: ModelSpec,
    pub n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub format: u32,
    pub family: Family,
    pub feature_manifest: Vec<String>,
    pub params: Params,
    /// Platt sigmoid over the SVM decision value.
    pub calibration: Option<Platt>,
    pub train_meta: TrainMeta,
}

/// Fits `spec` on `x`/`y`; `names` become the feature manifest.
pub fn fit(spec: &ModelSpec, x: &Matrix, y: &[u8], names: &[String], seed: u64) -> Result<FittedModel> {
    if names.len() != x.ncols() {
        return Err(Error::ManifestMismatch { expected: names.len(), got: x.ncols() });
    }
    let pos = y.iter().filter(|&&t| t == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    let mut calibration = None;
    let params = match spec {
        ModelSpec::Logreg(c) => Params::Logreg(fit_logreg(x, y, c.c, c.max_iters)?),
        ModelSpec::SvmRbf(c) => {
            let mut m = fit_svm(x, y, c, seed)?;
            calibration = m.platt.take();
            Params::Svm(m)
        }
        ModelSpec::GbdtXgbPreset(c) | ModelSpec::GbdtCatPreset(c) => Params::Gbdt(fit_gbdt(x, y, c)?),
        ModelSpec::RandomForest(c) => {
            let yf: Vec<f64> = y.iter().map(|&t| f64::from(t)).collect();
            Params::Forest(fit_forest(x, &yf, ForestTask::Classify, c, seed))
        }
    };
    Ok(FittedModel {
        format: MODEL_FORMAT,
        family: spec.family(),
        feature_manifest: names.to_vec(),
        params,
        calibration,
        train_meta: TrainMeta { seed, spec: spec.clone(), n_train: y.len() },
    })
}

pub fn fit_features(spec: &ModelSpec, fm: &FeatureMatrix, seed: u64) -> Result<FittedModel> {
    fit(spec, &fm.x, &fm.y, &fm.feature_names, seed)
}

impl FittedModel {
    pub fn width(&self) -> usize {
        self.feature_manifest.len()
    }

    /// Probability of class 1 for one row of manifest width.
    pub fn score_row(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Logreg(m) => m.predict(x),
            Params::Svm(m) => {
                let f = m.decision(x);
                match self.calibration {
                    Some(p) => p.prob(f),
                    None => sigmoid(f),
                }
            }
            Params::Gbdt(m) => m.predict(x),
            Params::Forest(m) => m.predict(x),
        }
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.width() {
            return Err(Error::ManifestMismatch { expected: self.width(), got: x.ncols() });
        }
        Ok((0..x.nrows()).into_par_iter().map(|i| self.score_row(x.row(i))).collect())
    }

    /// Scores after aligning columns to the manifest by name.
    pub fn score_features(&self, fm: &FeatureMatrix) -> Result<Vec<f64>> {
        if fm.feature_names == self.feature_manifest {
            return self.score(&fm.x);
        }
        self.score(&fm.select_features(&self.feature_manifest)?.x)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<FittedModel> {
        let m: FittedModel = serde_json::from_str(s)?;
        if m.format != MODEL_FORMAT {
            return Err(Error::PlanVersionMismatch { found: m.format, expected: MODEL_FORMAT });
        }
        Ok(m)
    }
}
