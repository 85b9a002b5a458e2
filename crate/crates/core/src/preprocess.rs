//! Missingness filter, categorical fill, iterative random-forest imputation,
//! standard scaling and one-hot encoding. Everything is learned from the
//! training table and frozen into a [`PreprocessPlan`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::forest::{fit_forest, Forest, ForestConfig, ForestTask, MaxFeatures};
use crate::matrix::Matrix;
use crate::seed;
use crate::tabular::{CohortTable, Column, ColumnValues, FeatureMatrix, Schema, VarDef, VarKind};

pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedFeature {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionPolicy {
    /// Fail when a column already has a category equal to the fill label.
    Strict,
    /// Merge the existing category with filled cells.
    #[default]
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputerConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub forest: ForestConfig,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        ImputerConfig {
            max_iters: 5,
            tol: 1e-3,
            forest: ForestConfig { n_trees: 100, max_depth: Some(10), min_leaf: 5, max_features: MaxFeatures::Sqrt, bootstrap: true, max_bins: 255 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub missingness_threshold: f64,
    pub unknown_label: String,
    pub collision_policy: CollisionPolicy,
    pub imputer: ImputerConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { missingness_threshold: 0.30, unknown_label: "Unknown".into(), collision_policy: CollisionPolicy::Merge, imputer: ImputerConfig::default() }
    }
}

/// Drops every feature whose missing fraction is strictly above `threshold`.
pub fn drop_sparse(t: &CohortTable, threshold: f64) -> Result<(CohortTable, Vec<DroppedFeature>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidConfig(format!("missingness threshold {threshold} not in (0, 1)")));
    }
    let dropped: Vec<DroppedFeature> = t
        .columns()
        .iter()
        .filter(|c| c.missing_fraction() > threshold)
        .map(|c| DroppedFeature { name: c.name.clone(), reason: format!("missing fraction {:.4} > {threshold}", c.missing_fraction()) })
        .collect();
    let names: Vec<String> = dropped.iter().map(|d| d.name.clone()).collect();
    Ok((t.without_columns(&names), dropped))
}

fn fill_columns(columns: &[Column], label: &str, policy: CollisionPolicy) -> Result<Vec<Column>> {
    columns
        .iter()
        .map(|c| match &c.values {
            ColumnValues::Categorical(v) => {
                if policy == CollisionPolicy::Strict && v.iter().flatten().any(|s| s == label) {
                    return Err(Error::LabelCollision { column: c.name.clone(), label: label.into() });
                }
                Ok(Column::categorical(&c.name, v.iter().map(|s| Some(s.clone().unwrap_or_else(|| label.to_string()))).collect()))
            }
            ColumnValues::Numeric(_) => Ok(c.clone()),
        })
        .collect()
}

/// Replaces missing categorical cells with `label`.
pub fn fill_categorical_unknown(t: &CohortTable, label: &str, policy: CollisionPolicy) -> Result<CohortTable> {
    t.with_columns(fill_columns(t.columns(), label, policy)?)
}

/// Column layout of the imputer's working matrix: numeric and binary columns
/// take one slot, categorical columns one slot per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignBlock {
    pub name: String,
    pub kind: VarKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    pub offset: usize,
    /// Training mean (numeric) or mode (binary) used for initial fill.
    pub fill: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputeTarget {
    pub column: String,
    pub slot: usize,
    pub forest: Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfImputer {
    pub blocks: Vec<DesignBlock>,
    pub width: usize,
    pub unknown_label: String,
    pub targets: Vec<ImputeTarget>,
    /// Relative change of imputed numeric cells after each iteration.
    pub trace: Vec<f64>,
}

fn find<'a>(columns: &'a [Column], name: &str) -> Result<&'a Column> {
    columns.iter().find(|c| c.name == name).ok_or_else(|| Error::SchemaMismatch(format!("column `{name}` absent")))
}

impl RfImputer {
    /// Working matrix with missing cells set to the initial fill, plus the
    /// per-slot missingness mask.
    fn design(&self, columns: &[Column], n: usize) -> Result<(Matrix, Vec<Vec<bool>>)> {
        let mut d = Matrix::zeros(n, self.width);
        let mut miss = vec![Vec::new(); self.width];
        for b in &self.blocks {
            let c = find(columns, &b.name)?;
            if c.len() != n || (c.kind == VarKind::Categorical) != (b.kind == VarKind::Categorical) {
                return Err(Error::SchemaMismatch(format!("column `{}` does not match the fitted layout", b.name)));
            }
            match &c.values {
                ColumnValues::Numeric(v) => {
                    miss[b.offset] = v.iter().map(Option::is_none).collect();
                    for (i, x) in v.iter().enumerate() {
                        d.set(i, b.offset, x.unwrap_or(b.fill));
                    }
                }
                ColumnValues::Categorical(v) => {
                    let unknown = b.categories.iter().position(|s| *s == self.unknown_label).expect("unknown level");
                    for (i, x) in v.iter().enumerate() {
                        let k = x.as_ref().and_then(|s| b.categories.iter().position(|c| c == s)).unwrap_or(unknown);
                        d.set(i, b.offset + k, 1.0);
                    }
                }
            }
        }
        Ok((d, miss))
    }

    fn write_back(&self, columns: &[Column], d: &Matrix) -> Vec<Column> {
        columns
            .iter()
            .map(|c| match (&c.values, self.blocks.iter().find(|b| b.name == c.name)) {
                (ColumnValues::Numeric(_), Some(b)) => Column { name: c.name.clone(), kind: c.kind, values: ColumnValues::Numeric(d.col(b.offset).into_iter().map(Some).collect()) },
                _ => c.clone(),
            })
            .collect()
    }

    /// Fills missing numeric and binary cells: initial fill, then one pass of
    /// the fitted forests in fit order. Observed cells are never changed.
    pub fn apply_columns(&self, columns: &[Column]) -> Result<Vec<Column>> {
        let n = columns.first().map_or(0, Column::len);
        let (mut d, miss) = self.design(columns, n)?;
        let mut buf = vec![0.0; self.width.saturating_sub(1)];
        for t in &self.targets {
            for i in (0..n).filter(|&i| miss[t.slot][i]) {
                drop_slot(d.row(i), t.slot, &mut buf);
                let v = t.forest.predict_value(&buf);
                d.set(i, t.slot, v);
            }
        }
        Ok(self.write_back(columns, &d))
    }
}

fn drop_slot(row: &[f64], slot: usize, out: &mut [f64]) {
    out[..slot].copy_from_slice(&row[..slot]);
    out[slot..].copy_from_slice(&row[slot + 1..]);
}

fn without_col(d: &Matrix, rows: &[usize], slot: usize) -> Matrix {
    let mut m = Matrix::zeros(rows.len(), d.ncols() - 1);
    for (k, &i) in rows.iter().enumerate() {
        drop_slot(d.row(i), slot, m.row_mut(k));
    }
    m
}

/// MissForest-style imputer. Categorical columns must already be filled
/// (stray missing categorical cells are read as the unknown label).
pub fn fit_rf_imputer(train: &CohortTable, cfg: &ImputerConfig, unknown_label: &str, seed: u64) -> Result<RfImputer> {
    let n = train.n_rows();
    let mut blocks = Vec::new();
    let mut width = 0;
    for c in train.columns() {
        match &c.values {
            ColumnValues::Numeric(v) => {
                let obs: Vec<f64> = v.iter().flatten().copied().collect();
                if obs.is_empty() {
                    return Err(Error::NoSignal(c.name.clone()));
                }
                let mean = obs.iter().sum::<f64>() / obs.len() as f64;
                let fill = if c.kind == VarKind::Binary { f64::from(u8::from(mean >= 0.5)) } else { mean };
                blocks.push(DesignBlock { name: c.name.clone(), kind: c.kind, categories: vec![], offset: width, fill });
                width += 1;
            }
            ColumnValues::Categorical(_) => {
                let mut cats = c.categories();
                if !cats.iter().any(|s| s == unknown_label) {
                    cats.push(unknown_label.to_string());
                }
                let k = cats.len();
                blocks.push(DesignBlock { name: c.name.clone(), kind: c.kind, categories: cats, offset: width, fill: 0.0 });
                width += k;
            }
        }
    }
    let mut imp = RfImputer { blocks, width, unknown_label: unknown_label.into(), targets: vec![], trace: vec![] };
    let (mut d, miss) = imp.design(train.columns(), n)?;

    let mut order: Vec<(usize, &DesignBlock)> = imp
        .blocks
        .iter()
        .filter(|b| b.kind != VarKind::Categorical)
        .map(|b| (miss[b.offset].iter().filter(|&&m| m).count(), b))
        .filter(|(k, _)| *k > 0)
        .collect();
    order.sort_by_key(|(k, _)| *k);
    let order: Vec<(usize, VarKind, String)> = order.into_iter().map(|(_, b)| (b.offset, b.kind, b.name.clone())).collect();
    if order.is_empty() || width < 2 {
        return Ok(imp);
    }

    let mut forests: Vec<Option<Forest>> = vec![None; order.len()];
    for iter in 0..cfg.max_iters {
        let (mut num, mut den, mut flips, mut nbin) = (0.0, 0.0, 0usize, 0usize);
        for (t, (slot, kind, _)) in order.iter().enumerate() {
            let obs: Vec<usize> = (0..n).filter(|&i| !miss[*slot][i]).collect();
            let mis: Vec<usize> = (0..n).filter(|&i| miss[*slot][i]).collect();
            let x = without_col(&d, &obs, *slot);
            let y: Vec<f64> = obs.iter().map(|&i| d.get(i, *slot)).collect();
            let task = if *kind == VarKind::Binary { ForestTask::Classify } else { ForestTask::Regress };
            let f = fit_forest(&x, &y, task, &cfg.forest, seed::child(seed::child(seed, iter as u64), t as u64));
            let mut buf = vec![0.0; width - 1];
            for &i in &mis {
                drop_slot(d.row(i), *slot, &mut buf);
                let new = f.predict_value(&buf);
                let old = d.get(i, *slot);
                if task == ForestTask::Regress {
                    num += (new - old) * (new - old);
                    den += new * new;
                } else {
                    flips += usize::from(new != old);
                    nbin += 1;
                }
                d.set(i, *slot, new);
            }
            forests[t] = Some(f);
        }
        let change = if den > 0.0 { num / den } else if nbin > 0 { flips as f64 / nbin as f64 } else { 0.0 };
        imp.trace.push(change);
        log::debug!("imputer iteration {} relative change {change:.3e}", iter + 1);
        if change < cfg.tol {
            break;
        }
    }
    imp.targets = order.into_iter().zip(forests).map(|((slot, _, column), f)| ImputeTarget { column, slot, forest: f.expect("forest") }).collect();
    Ok(imp)
}

pub fn apply_imputer(imputer: &RfImputer, t: &CohortTable) -> Result<CohortTable> {
    t.with_columns(imputer.apply_columns(t.columns())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureBlock {
    Scaled { name: String, mean: f64, sd: f64 },
    Binary { name: String },
    OneHot { name: String, categories: Vec<String> },
}

/// Standard scaler plus full one-hot encoder, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerEncoder {
    pub blocks: Vec<FeatureBlock>,
    pub unknown_label: String,
    pub dropped: Vec<DroppedFeature>,
    pub feature_names: Vec<String>,
}

impl ScalerEncoder {
    pub fn fit(train: &CohortTable, unknown_label: &str) -> Result<ScalerEncoder> {
        let mut blocks = Vec::new();
        let mut dropped = Vec::new();
        let mut names = Vec::new();
        for c in train.columns() {
            match &c.values {
                ColumnValues::Numeric(v) => {
                    let x: Vec<f64> = v.iter().map(|x| x.ok_or_else(|| Error::SchemaMismatch(format!("`{}` still has missing cells", c.name)))).collect::<Result<_>>()?;
                    let n = x.len() as f64;
                    let mean = x.iter().sum::<f64>() / n;
                    let sd = (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
                    if !(sd > 1e-12 * (1.0 + mean.abs())) {
                        dropped.push(DroppedFeature { name: c.name.clone(), reason: "zero variance".into() });
                        continue;
                    }
                    names.push(c.name.clone());
                    blocks.push(if c.kind == VarKind::Binary { FeatureBlock::Binary { name: c.name.clone() } } else { FeatureBlock::Scaled { name: c.name.clone(), mean, sd } });
                }
                ColumnValues::Categorical(v) => {
                    let mut cats = c.categories();
                    if v.iter().any(Option::is_none) {
                        return Err(Error::SchemaMismatch(format!("`{}` still has missing cells", c.name)));
                    }
                    if cats.len() < 2 {
                        dropped.push(DroppedFeature { name: c.name.clone(), reason: "zero variance".into() });
                        continue;
                    }
                    if !cats.iter().any(|s| s == unknown_label) {
                        cats.push(unknown_label.to_string());
                    }
                    names.extend(cats.iter().map(|s| format!("{}={s}", c.name)));
                    blocks.push(FeatureBlock::OneHot { name: c.name.clone(), categories: cats });
                }
            }
        }
        Ok(ScalerEncoder { blocks, unknown_label: unknown_label.into(), dropped, feature_names: names })
    }

    /// Encodes complete columns. Unseen categories go to the unknown indicator.
    pub fn transform_columns(&self, columns: &[Column]) -> Result<Matrix> {
        let n = columns.first().map_or(0, Column::len);
        let mut m = Matrix::zeros(n, self.feature_names.len());
        let mut j = 0;
        for b in &self.blocks {
            match b {
                FeatureBlock::Scaled { name, mean, sd } => {
                    let v = find(columns, name)?.as_numeric().ok_or_else(|| Error::SchemaMismatch(format!("`{name}` is not numeric")))?;
                    for (i, x) in v.iter().enumerate() {
                        let x = x.ok_or_else(|| Error::SchemaMismatch(format!("`{name}` has a missing cell")))?;
                        m.set(i, j, (x - mean) / sd);
                    }
                    j += 1;
                }
                FeatureBlock::Binary { name } => {
                    let v = find(columns, name)?.as_numeric().ok_or_else(|| Error::SchemaMismatch(format!("`{name}` is not binary")))?;
                    for (i, x) in v.iter().enumerate() {
                        m.set(i, j, x.ok_or_else(|| Error::SchemaMismatch(format!("`{name}` has a missing cell")))?);
                    }
                    j += 1;
                }
                FeatureBlock::OneHot { name, categories } => {
                    let v = find(columns, name)?.as_categorical().ok_or_else(|| Error::SchemaMismatch(format!("`{name}` is not categorical")))?;
                    let unknown = categories.iter().position(|s| *s == self.unknown_label).expect("unknown level");
                    for (i, x) in v.iter().enumerate() {
                        let k = x.as_ref().and_then(|s| categories.iter().position(|c| c == s)).unwrap_or(unknown);
                        m.set(i, j + k, 1.0);
                    }
                    j += categories.len();
                }
            }
        }
        Ok(m)
    }

    pub fn transform(&self, t: &CohortTable) -> Result<FeatureMatrix> {
        Ok(FeatureMatrix { x: self.transform_columns(t.columns())?, feature_names: self.feature_names.clone(), y: t.outcome().to_vec(), row_ids: t.row_ids().to_vec() })
    }
}

/// Fits the scaler/encoder on imputed training data and applies it to both.
pub fn fit_apply_scaler_encoder(train: &CohortTable, test: &CohortTable, unknown_label: &str) -> Result<(FeatureMatrix, FeatureMatrix, ScalerEncoder)> {
    let enc = ScalerEncoder::fit(train, unknown_label)?;
    Ok((enc.transform(train)?, enc.transform(test)?, enc))
}

/// Frozen preprocessing learned from training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessPlan {
    pub version: u32,
    pub missingness_threshold: f64,
    pub unknown_label: String,
    pub input_schema: Schema,
    pub kept: Vec<VarDef>,
    pub dropped_features: Vec<DroppedFeature>,
    pub imputer: RfImputer,
    pub encoder: ScalerEncoder,
}

impl PreprocessPlan {
    /// Learns the full chain from `train`.
    pub fn fit(train: &CohortTable, cfg: &PreprocessConfig, seed: u64) -> Result<PreprocessPlan> {
        let (kept, mut dropped) = drop_sparse(train, cfg.missingness_threshold)?;
        let filled = fill_categorical_unknown(&kept, &cfg.unknown_label, cfg.collision_policy)?;
        let imputer = fit_rf_imputer(&filled, &cfg.imputer, &cfg.unknown_label, seed)?;
        let imputed = apply_imputer(&imputer, &filled)?;
        let encoder = ScalerEncoder::fit(&imputed, &cfg.unknown_label)?;
        dropped.extend(encoder.dropped.iter().cloned());
        Ok(PreprocessPlan {
            version: PLAN_VERSION,
            missingness_threshold: cfg.missingness_threshold,
            unknown_label: cfg.unknown_label.clone(),
            input_schema: train.schema(),
            kept: kept.schema().0,
            dropped_features: dropped,
            imputer,
            encoder,
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.encoder.feature_names
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != PLAN_VERSION {
            return Err(Error::PlanVersionMismatch { found: self.version, expected: PLAN_VERSION });
        }
        Ok(())
    }

    /// Applies the frozen chain to raw columns (extra columns are ignored).
    pub fn transform_columns(&self, columns: &[Column]) -> Result<Matrix> {
        self.check_version()?;
        let mut kept = Vec::with_capacity(self.kept.len());
        for v in &self.kept {
            let c = find(columns, &v.name)?;
            if c.kind != v.kind {
                return Err(Error::SchemaMismatch(format!("column `{}` is {:?}, plan expects {:?}", v.name, c.kind, v.kind)));
            }
            kept.push(c.clone());
        }
        let filled = fill_columns(&kept, &self.unknown_label, CollisionPolicy::Merge)?;
        let imputed = self.imputer.apply_columns(&filled)?;
        self.encoder.transform_columns(&imputed)
    }

    pub fn transform(&self, t: &CohortTable) -> Result<FeatureMatrix> {
        Ok(FeatureMatrix { x: self.transform_columns(t.columns())?, feature_names: self.feature_names().to_vec(), y: t.outcome().to_vec(), row_ids: t.row_ids().to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn strict_threshold() {
        let mk = |k: usize| Column::numeric(format!("c{k}"), (0..10).map(|i| if i < k { None } else { Some(i as f64) }).collect());
        let t = CohortTable::new(vec![mk(0), mk(3), mk(4)], vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], "y", ids(10)).unwrap();
        let (kept, dropped) = drop_sparse(&t, 0.3).unwrap();
        assert_eq!(kept.schema().names().collect::<Vec<_>>(), vec!["c0", "c3"]);
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].name, "c4");
        let (same, none) = drop_sparse(&kept.without_columns(&["c3".into()]), 0.3).unwrap();
        assert!(none.is_empty());
        assert_eq!(same.n_rows(), 10);
    }

    #[test]
    fn unknown_fill_and_collision() {
        let c = Column::categorical("ins", vec![Some("A".into()), None, Some("B".into()), None]);
        let t = CohortTable::new(vec![c, Column::numeric("x", vec![None, Some(1.0), Some(2.0), Some(3.0)])], vec![0, 1, 0, 1], "y", ids(4)).unwrap();
        let f = fill_categorical_unknown(&t, "Unknown", CollisionPolicy::Strict).unwrap();
        let v = f.column("ins").unwrap().as_categorical().unwrap();
        assert_eq!(v.iter().filter(|s| s.as_deref() == Some("Unknown")).count(), 2);
        assert!(f.column("x").unwrap().is_missing(0));
        assert_eq!(fill_categorical_unknown(&f, "Unknown", CollisionPolicy::Strict).unwrap_err().code(), "LabelCollision");
        assert_eq!(fill_categorical_unknown(&f, "Unknown", CollisionPolicy::Merge).unwrap(), f);
    }

    fn linear_table(n: usize, seed: u64, frac: f64) -> (CohortTable, Vec<f64>, Vec<bool>) {
        let mut rng = seed::rng(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < frac).collect();
        let yc = y.iter().zip(&mask).map(|(v, &m)| if m { None } else { Some(*v) }).collect();
        let cols = vec![Column::numeric("x", x.into_iter().map(Some).collect()), Column::numeric("z", z.into_iter().map(Some).collect()), Column::numeric("t", yc)];
        let out = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
        (CohortTable::new(cols, out, "y", ids(n)).unwrap(), y, mask)
    }

    #[test]
    fn forest_imputation_beats_mean() {
        let cfg = ImputerConfig { forest: ForestConfig { n_trees: 30, ..ImputerConfig::default().forest }, ..Default::default() };
        let mut wins = 0;
        for s in 0..10 {
            let (t, truth, mask) = linear_table(400, s, 0.2);
            let imp = fit_rf_imputer(&t, &cfg, "Unknown", s).unwrap();
            assert!(imp.trace.len() <= 5 && !imp.trace.is_empty());
            let done = apply_imputer(&imp, &t).unwrap();
            let v = done.column("t").unwrap().as_numeric().unwrap();
            let obs: Vec<f64> = truth.iter().zip(&mask).filter(|(_, &m)| !m).map(|(v, _)| *v).collect();
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            let (mut rf, mut mf) = (0.0, 0.0);
            for i in (0..400).filter(|&i| mask[i]) {
                rf += (v[i].unwrap() - truth[i]).powi(2);
                mf += (mean - truth[i]).powi(2);
            }
            wins += usize::from(rf < mf);
            // Observed cells untouched; applying twice changes nothing.
            for i in (0..400).filter(|&i| !mask[i]) {
                assert_eq!(v[i], Some(truth[i]));
            }
            assert_eq!(apply_imputer(&imp, &done).unwrap(), done);
        }
        assert!(wins >= 9, "{wins}");
    }

    #[test]
    fn complete_table_trains_nothing() {
        let (t, _, _) = linear_table(50, 1, 0.0);
        let imp = fit_rf_imputer(&t, &ImputerConfig::default(), "Unknown", 0).unwrap();
        assert!(imp.targets.is_empty());
        assert_eq!(apply_imputer(&imp, &t).unwrap(), t);
    }

    #[test]
    fn all_missing_column_has_no_signal() {
        let t = CohortTable::new(vec![Column::numeric("a", vec![None, None])], vec![0, 1], "y", ids(2)).unwrap();
        assert_eq!(fit_rf_imputer(&t, &ImputerConfig::default(), "Unknown", 0).unwrap_err().code(), "NoSignal");
    }

    fn mixed(n: usize, shift: f64) -> CohortTable {
        let levels = ["CCU", "CVICU", "Others"];
        CohortTable::new(
            vec![
                Column::numeric("age", (0..n).map(|i| Some(50.0 + (i % 17) as f64 + shift)).collect()),
                Column::binary("ckd", (0..n).map(|i| Some(f64::from(u8::from(i % 3 == 0)))).collect()),
                Column::numeric("flat", vec![Some(1.0); n]),
                Column::categorical("unit", (0..n).map(|i| Some(levels[i % 3].to_string())).collect()),
            ],
            (0..n).map(|i| u8::from(i % 4 == 0)).collect(),
            "y",
            ids(n),
        )
        .unwrap()
    }

    #[test]
    fn scaler_encoder_layout() {
        let train = mixed(60, 0.0);
        let mut test = mixed(9, 5.0);
        let cols: Vec<Column> = test
            .columns()
            .iter()
            .map(|c| if c.name == "unit" { Column::categorical("unit", (0..9).map(|i| Some(if i == 0 { "NEW".into() } else { "CCU".into() })).collect()) } else { c.clone() })
            .collect();
        test = test.with_columns(cols).unwrap();
        let (a, b, enc) = fit_apply_scaler_encoder(&train, &test, "Unknown").unwrap();
        assert_eq!(a.feature_names, vec!["age", "ckd", "unit=CCU", "unit=CVICU", "unit=Others", "unit=Unknown"]);
        assert_eq!(enc.dropped[0].name, "flat");
        let age = a.x.col(0);
        let m = age.iter().sum::<f64>() / 60.0;
        let sd = (age.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 60.0).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        assert!(b.x.col(0).iter().sum::<f64>().abs() > 1.0);
        for fm in [&a, &b] {
            for i in 0..fm.n_rows() {
                assert_eq!(fm.x.row(i)[2..].iter().sum::<f64>(), 1.0);
            }
        }
        assert_eq!(b.x.get(0, 5), 1.0);
    }

    #[test]
    fn plan_round_trips_through_json() {
        let train = mixed(40, 0.0);
        let plan = PreprocessPlan::fit(&train, &PreprocessConfig::default(), 3).unwrap();
        let s = serde_json::to_string(&plan).unwrap();
        let back: PreprocessPlan = serde_json::from_str(&s).unwrap();
        assert_eq!(back, plan);
        assert_eq!(back.transform(&train).unwrap().x, plan.transform(&train).unwrap().x);
        let mut old = plan.clone();
        old.version = 0;
        assert_eq!(old.transform(&train).unwrap_err().code(), "PlanVersionMismatch");
    }
}
