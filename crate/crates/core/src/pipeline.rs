//! End-to-end orchestration: configuration, stage seeds, the fixed run
//! directory layout, ablations and scoring of new extracts.
//!
//! Run directory layout:
//!
//! ```text
//! config.lock      resolved configuration
//! manifest.json    config hash, stage seeds, artifact checksums, timestamps
//! table1.tsv       baseline characteristics, train and test
//! dropped.tsv      features removed by the missingness filter or encoder
//! pruned.tsv       features removed by correlation pruning
//! path.tsv         LASSO path with CV error
//! selected.txt     selected features, one per line
//! models/          plan.json, one <family>.json per model, tuning leaderboards
//! eval/            report.tsv, per-family ROC and report
//! explain/         importance, beeswarm and mean signed SHAP, ablations
//! plots/           SVG figures
//! FAILED           present only when a stage failed
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohortgen::{self, CopulaSpec, MarginalSpec};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, EvalReport};
use crate::explain::{self, Attribution, BackgroundSpec, ShapMode};
use crate::learn::{self, Family, FittedModel, ModelSpec};
use crate::matrix::Matrix;
use crate::plots;
use crate::preprocess::{PreprocessConfig, PreprocessPlan};
use crate::resample::{self, SmoteConfig};
use crate::select::{self, CorrelationDrop, LassoConfig, LassoPath};
use crate::seed;
use crate::stats::{self, BaselineTable, TVariant};
use crate::tabular::{self, CohortTable, FeatureMatrix, Schema};
use crate::tune::{self, GridSpec, TuneResult};

pub const CONFIG_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const FAILED: &str = "FAILED";
pub const PLAN_FILE: &str = "plan.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub marginals: MarginalSpec,
    pub copula: CopulaSpec,
    pub missingness: BTreeMap<String, f64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let (marginals, copula, missingness) = cohortgen::default_spec();
        SynthSpec { marginals, copula, missingness }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Built-in calibrated cohort. `spec` defaults to the calibrated one,
    /// `seed` to the `synth` stage seed.
    Synthetic {
        #[serde(default)]
        spec: Option<SynthSpec>,
        #[serde(default)]
        seed: Option<u64>,
    },
    Csv { path: PathBuf, schema: Schema, outcome: String },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { spec: None, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub t_variant: TVariant,
    pub yates: bool,
}

impl Default for Table1Config {
    fn default() -> Self {
        Table1Config { t_variant: TVariant::Welch, yates: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub corr_threshold: f64,
    pub coef_threshold: f64,
    pub lasso: LassoConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { corr_threshold: 0.9, coef_threshold: 0.01, lasso: LassoConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    /// Models trained and reported, in report order.
    pub families: Vec<ModelSpec>,
    /// Grid-search each family before the final fit.
    pub tune: bool,
    pub tune_folds: usize,
    pub grids: GridSpec,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        ModelsConfig { families: Family::REPORTED.iter().map(|&f| ModelSpec::default_for(f)).collect(), tune: false, tune_folds: 5, grids: GridSpec::centered() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Family explained and refitted by the ablations.
    pub family: Family,
    /// `None` picks exact enumeration up to `exact_max_features`, else kernel.
    pub mode: Option<ShapMode>,
    pub exact_max_features: usize,
    pub background: usize,
    pub n_explain: usize,
    pub coalitions: usize,
    pub ridge: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { family: Family::Logreg, mode: None, exact_max_features: 10, background: 100, n_explain: 300, coalitions: 2048, ridge: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Never changes results.
    pub threads: usize,
    pub data: DataSource,
    pub test_fraction: f64,
    pub table1: Table1Config,
    pub preprocess: PreprocessConfig,
    pub selection: SelectionConfig,
    /// `seed` is ignored; the `smote` stage seed is used.
    pub smote: SmoteConfig,
    pub models: ModelsConfig,
    pub eval: EvalConfig,
    pub explain: ExplainConfig,
    /// Feature sets removed in turn; a variable name drops all its indicators.
    pub ablations: Vec<Vec<String>>,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            master_seed: 42,
            threads: 0,
            data: DataSource::default(),
            test_fraction: 0.3,
            table1: Table1Config::default(),
            preprocess: PreprocessConfig::default(),
            selection: SelectionConfig::default(),
            smote: SmoteConfig::default(),
            models: ModelsConfig::default(),
            eval: EvalConfig::default(),
            explain: ExplainConfig::default(),
            ablations: vec![vec!["cci".into()], vec!["ckd".into(), "diabetes".into(), "heart_failure".into()]],
            output_dir: None,
        }
    }
}

/// Names hashed into the stage seeds.
pub const SEEDED_STAGES: [&str; 9] = ["synth", "split", "preprocess", "select", "smote", "tune", "train", "eval", "explain"];

impl PipelineConfig {
    pub fn from_json(s: &str) -> Result<PipelineConfig> {
        let cfg: PipelineConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig> {
        let path = path.as_ref();
        PipelineConfig::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::PlanVersionMismatch { found: self.version, expected: CONFIG_VERSION });
        }
        if self.models.families.is_empty() {
            return Err(Error::InvalidConfig("no model families configured".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.models.families {
            if !seen.insert(s.family()) {
                return Err(Error::InvalidConfig(format!("family `{}` listed twice", s.family().name())));
            }
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        seed::derive(self.master_seed, stage)
    }

    /// Per-family seed within a stage.
    pub fn family_seed(&self, stage: &str, family: Family) -> u64 {
        seed::derive(self.stage_seed(stage), family.name())
    }

    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        SEEDED_STAGES.iter().map(|s| (s.to_string(), self.stage_seed(s))).collect()
    }

    fn smote_config(&self) -> SmoteConfig {
        SmoteConfig { seed: self.stage_seed("smote"), ..self.smote.clone() }
    }

    /// The configured spec of the explained family, or its default.
    pub fn explain_spec(&self) -> ModelSpec {
        self.models.families.iter().find(|s| s.family() == self.explain.family).cloned().unwrap_or_else(|| ModelSpec::default_for(self.explain.family))
    }
}

pub fn load_data(cfg: &PipelineConfig) -> Result<CohortTable> {
    match &cfg.data {
        DataSource::Synthetic { spec, seed } => {
            let s = spec.clone().unwrap_or_default();
            cohortgen::generate(&s.marginals, &s.copula, &s.missingness, seed.unwrap_or_else(|| cfg.stage_seed("synth")))
        }
        DataSource::Csv { path, schema, outcome } => tabular::load_csv(path, schema, outcome),
    }
}

pub fn split(cfg: &PipelineConfig, t: &CohortTable) -> Result<(CohortTable, CohortTable)> {
    tabular::split_stratified(t, cfg.test_fraction, cfg.stage_seed("split"))
}

pub fn table1(cfg: &PipelineConfig, train: &CohortTable, test: &CohortTable) -> Result<BaselineTable> {
    stats::baseline_table(train, test, cfg.table1.t_variant, cfg.table1.yates)
}

/// Everything learned from the training partition before model fitting.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: CohortTable,
    pub test: CohortTable,
    pub plan: PreprocessPlan,
    /// Plan output over every encoded feature.
    pub train_all: FeatureMatrix,
    pub test_all: FeatureMatrix,
    pub correlation_drops: Vec<CorrelationDrop>,
    pub path: LassoPath,
    pub selected: Vec<(String, f64)>,
    /// Plan output restricted to the selected features.
    pub train_x: FeatureMatrix,
    pub test_x: FeatureMatrix,
}

impl Prepared {
    pub fn selected_names(&self) -> Vec<String> {
        self.selected.iter().map(|s| s.0.clone()).collect()
    }
}

/// Fits the plan on `train` and applies it to both partitions.
pub fn preprocess(cfg: &PipelineConfig, train: &CohortTable, test: &CohortTable) -> Result<(PreprocessPlan, FeatureMatrix, FeatureMatrix)> {
    let plan = PreprocessPlan::fit(train, &cfg.preprocess, cfg.stage_seed("preprocess"))?;
    let tr = plan.transform(train)?;
    let te = plan.transform(test)?;
    Ok((plan, tr, te))
}

/// Correlation pruning, then the CV LASSO path on the centered training
/// matrix, then the coefficient threshold.
pub fn select(cfg: &PipelineConfig, train_all: &FeatureMatrix) -> Result<(Vec<CorrelationDrop>, LassoPath, Vec<(String, f64)>)> {
    let (pruned, drops) = select::prune_correlated(train_all, cfg.selection.corr_threshold)?;
    let path = select::fit_lasso_path(&select::center(&pruned), &cfg.selection.lasso, cfg.stage_seed("select"))?;
    let selected = select::select_features(&path, cfg.selection.coef_threshold)?;
    Ok((drops, path, selected))
}

/// Split, preprocess and select; errors carry the stage name.
pub fn prepare(cfg: &PipelineConfig, table: &CohortTable) -> Result<Prepared> {
    let (train, test) = split(cfg, table).map_err(|e| e.in_stage("split"))?;
    let (plan, train_all, test_all) = preprocess(cfg, &train, &test).map_err(|e| e.in_stage("preprocess"))?;
    let (correlation_drops, path, selected) = select(cfg, &train_all).map_err(|e| e.in_stage("select"))?;
    let names: Vec<String> = selected.iter().map(|s| s.0.clone()).collect();
    let train_x = train_all.select_features(&names)?;
    let test_x = test_all.select_features(&names)?;
    Ok(Prepared { train, test, plan, train_all, test_all, correlation_drops, path, selected, train_x, test_x })
}

/// SMOTE on the training matrix with the `smote` stage seed. Synthetic rows
/// get ids `synthetic-<k>`.
pub fn balance(cfg: &PipelineConfig, train: &FeatureMatrix) -> Result<FeatureMatrix> {
    let r = resample::smote(&train.x, &train.y, &cfg.smote_config())?;
    let mut row_ids = train.row_ids.clone();
    row_ids.extend((0..r.synthetic.len()).map(|k| format!("synthetic-{k}")));
    Ok(FeatureMatrix { x: r.x, feature_names: train.feature_names.clone(), y: r.y, row_ids })
}

/// Final fit on an already balanced training matrix.
pub fn fit_model(cfg: &PipelineConfig, spec: &ModelSpec, balanced: &FeatureMatrix) -> Result<FittedModel> {
    learn::fit_features(spec, balanced, cfg.family_seed("train", spec.family()))
}

/// Grid search over the family's configured grid (SMOTE inside each fold).
/// `None` when the grid has no entry for the family.
pub fn tune_family(cfg: &PipelineConfig, spec: &ModelSpec, train: &FeatureMatrix) -> Result<Option<TuneResult>> {
    let Some(grid) = cfg.models.grids.0.get(&spec.family()) else { return Ok(None) };
    tune::grid_search(&train.x, &train.y, &train.feature_names, spec, grid, cfg.models.tune_folds, &cfg.smote_config(), cfg.family_seed("tune", spec.family())).map(Some)
}

pub fn evaluate_model(cfg: &PipelineConfig, model: &FittedModel, test: &FeatureMatrix) -> Result<EvalReport> {
    let scores = model.score_features(test)?;
    eval::evaluate(&scores, &test.y, &cfg.eval, cfg.family_seed("eval", model.family))
}

/// Attribution plus the explained rows it refers to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub attribution: Attribution,
    pub x: Matrix,
    pub row_ids: Vec<String>,
    pub background_means: Vec<f64>,
}

impl Explanation {
    pub fn importance(&self) -> Vec<(String, f64)> {
        explain::global_importance(&self.attribution)
    }

    pub fn mean_signed(&self) -> Vec<(String, Option<f64>)> {
        explain::mean_signed(&self.attribution, &self.x, &self.background_means)
    }

    pub fn mean_signed_of(&self, feature: &str) -> Option<f64> {
        self.mean_signed().into_iter().find(|m| m.0 == feature).and_then(|m| m.1)
    }
}

/// SHAP of `model` on a seeded subsample of test rows against a seeded
/// background of (unresampled) training rows. Row choice depends only on the
/// partition sizes, so ablations explain the same rows.
pub fn explain_model(cfg: &PipelineConfig, model: &FittedModel, train: &FeatureMatrix, test: &FeatureMatrix) -> Result<Explanation> {
    let e = &cfg.explain;
    let s = cfg.stage_seed("explain");
    let (bg_seed, row_seed, coal_seed) = (seed::derive(s, "background"), seed::derive(s, "rows"), seed::derive(s, "coalitions"));
    let train = train.select_features(&model.feature_manifest)?;
    let test = test.select_features(&model.feature_manifest)?;
    let bg = train.x.select_rows(&explain::subsample_rows(train.n_rows(), e.background, bg_seed));
    let rows = explain::subsample_rows(test.n_rows(), e.n_explain, row_seed);
    let x = test.x.select_rows(&rows);
    let p = x.ncols();
    let mode = e.mode.unwrap_or(if p <= e.exact_max_features || p < 2 { ShapMode::Exact } else { ShapMode::Kernel });
    let f = |r: &[f64]| model.score_row(r);
    let (base_value, values) = match mode {
        ShapMode::Exact => explain::exact_shap(&f, &x, &bg)?,
        ShapMode::Kernel => explain::kernel_shap(&f, &x, &bg, e.coalitions, e.ridge, coal_seed)?,
    };
    let attribution = Attribution {
        base_value,
        values,
        feature_names: model.feature_manifest.clone(),
        background: BackgroundSpec { source: "train".into(), size: bg.nrows(), seed: bg_seed },
        mode,
    };
    Ok(Explanation { attribution, x, row_ids: rows.iter().map(|&i| test.row_ids[i].clone()).collect(), background_means: bg.column_means() })
}

/// Features matched by `drop`: exact feature names, or every indicator
/// `name=level` of a categorical variable `name`.
pub fn resolve_drop(features: &[String], drop: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for d in drop {
        let prefix = format!("{d}=");
        let hit: Vec<&String> = features.iter().filter(|f| *f == d || f.starts_with(&prefix)).collect();
        if hit.is_empty() {
            return Err(Error::UnknownFeature(d.clone()));
        }
        out.extend(hit.into_iter().cloned());
    }
    out.sort();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub drop: Vec<String>,
    pub dropped_features: Vec<String>,
    pub model: FittedModel,
    pub report: EvalReport,
    pub explanation: Explanation,
}

/// Refits `spec` without the `drop` features, with the same hyperparameters
/// and seeds as the baseline fit, and re-evaluates and re-explains it. An
/// empty `drop` reproduces the baseline.
pub fn ablation_run(cfg: &PipelineConfig, prepared: &Prepared, spec: &ModelSpec, drop: &[String]) -> Result<AblationResult> {
    let names = prepared.selected_names();
    let dropped = resolve_drop(&names, drop)?;
    let keep: Vec<String> = names.into_iter().filter(|n| !dropped.contains(n)).collect();
    if keep.is_empty() {
        return Err(Error::InvalidConfig("ablation removes every selected feature".into()));
    }
    let train = prepared.train_x.select_features(&keep)?;
    let test = prepared.test_x.select_features(&keep)?;
    let model = fit_model(cfg, spec, &balance(cfg, &train)?)?;
    let report = evaluate_model(cfg, &model, &test)?;
    let explanation = explain_model(cfg, &model, &train, &test)?;
    Ok(AblationResult { drop: drop.to_vec(), dropped_features: dropped, model, report, explanation })
}

/// Stages in execution order; a run executes every stage up to its last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Table1,
    Preprocess,
    Select,
    Tune,
    Train,
    Evaluate,
    Explain,
    Ablate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Table1 => "table1",
            Stage::Preprocess => "preprocess",
            Stage::Select => "select",
            Stage::Tune => "tune",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Ablate => "ablate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub drop: Vec<String>,
    pub dropped_features: Vec<String>,
    pub auc: f64,
    pub baseline_auc: f64,
    pub mean_signed: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub root: PathBuf,
    pub selected: Vec<String>,
    pub reports: Vec<(Family, EvalReport)>,
    pub importance: Vec<(String, f64)>,
    pub baseline_mean_signed: Vec<(String, Option<f64>)>,
    pub ablations: Vec<AblationSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub status: String,
    pub last_stage: String,
    pub config_sha256: String,
    pub master_seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    /// Relative path to SHA-256 of every artifact except the manifest.
    pub artifacts: BTreeMap<String, String>,
    pub failure: Option<Failure>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn now_ms() -> u128 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

struct RunDir {
    root: PathBuf,
    checksums: BTreeMap<String, String>,
}

impl RunDir {
    /// Creates `root`, clearing an earlier run found there. A non-empty
    /// directory that is not a run directory is refused.
    fn create(root: &Path) -> Result<RunDir> {
        if root.exists() {
            let is_run = root.join("config.lock").exists() || root.join(MANIFEST).exists() || root.join(FAILED).exists();
            let empty = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_none();
            if !is_run && !empty {
                return Err(Error::InvalidConfig(format!("{} exists and is not a run directory", root.display())));
            }
            if is_run {
                std::fs::remove_dir_all(root).map_err(|e| Error::io(root, e))?;
            }
        }
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(RunDir { root: root.to_path_buf(), checksums: BTreeMap::new() })
    }

    fn write(&mut self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.checksums.insert(rel.to_string(), sha256_hex(bytes.as_ref()));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        self.write(rel, serde_json::to_string_pretty(v)? + "\n")
    }
}

fn tsv_row(s: &mut String, cells: &[String]) {
    s.push_str(&cells.join("\t"));
    s.push('\n');
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

fn matrix_tsv(fm: &FeatureMatrix) -> String {
    let mut s = String::new();
    let mut head = vec![tabular::ROW_ID_COLUMN.to_string()];
    head.extend(fm.feature_names.iter().cloned());
    head.push("outcome".into());
    tsv_row(&mut s, &head);
    for i in 0..fm.n_rows() {
        let mut r = vec![fm.row_ids[i].clone()];
        r.extend(fm.x.row(i).iter().map(|v| v.to_string()));
        r.push(fm.y[i].to_string());
        tsv_row(&mut s, &r);
    }
    s
}

fn path_tsv(path: &LassoPath) -> String {
    let mut s = String::new();
    let mut head = vec!["lambda".to_string(), "cv_mean".into(), "cv_se".into(), "intercept".into()];
    head.extend(path.feature_names.iter().cloned());
    tsv_row(&mut s, &head);
    for k in 0..path.lambdas.len() {
        let mut r = vec![path.lambdas[k].to_string(), path.cv_mean[k].to_string(), path.cv_se[k].to_string(), path.intercepts[k].to_string()];
        r.extend(path.coef_at(k).iter().map(|v| v.to_string()));
        tsv_row(&mut s, &r);
    }
    s
}

const REPORT_HEADER: [&str; 13] =
    ["model", "auc", "auc_lo", "auc_hi", "rule", "threshold", "sensitivity", "specificity", "accuracy", "accuracy_lo", "accuracy_hi", "n_boot", "level"];

fn report_row(name: &str, r: &EvalReport) -> Vec<String> {
    let rule = match r.rule {
        eval::OperatingRule::Youden => "youden".to_string(),
        eval::OperatingRule::Fixed { threshold } => format!("fixed:{threshold}"),
    };
    vec![
        name.to_string(),
        r.auc.to_string(),
        r.auc_ci.0.to_string(),
        r.auc_ci.1.to_string(),
        rule,
        r.point.threshold.to_string(),
        r.point.sensitivity.to_string(),
        r.point.specificity.to_string(),
        r.point.accuracy.to_string(),
        r.accuracy_ci.0.to_string(),
        r.accuracy_ci.1.to_string(),
        r.n_boot.to_string(),
        r.level.to_string(),
    ]
}

fn roc_tsv(r: &EvalReport) -> String {
    let mut s = String::from("fpr\ttpr\tthreshold\ttp\tfp\n");
    for p in &r.roc.points {
        tsv_row(&mut s, &[p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string(), p.tp.to_string(), p.fp.to_string()]);
    }
    s
}

fn pairs_tsv(head: [&str; 2], rows: &[(String, f64)]) -> String {
    let mut s = format!("{}\t{}\n", head[0], head[1]);
    for (n, v) in rows {
        tsv_row(&mut s, &[n.clone(), v.to_string()]);
    }
    s
}

fn signed_tsv(rows: &[(String, Option<f64>)]) -> String {
    let mut s = String::from("feature\tmean_signed_shap\n");
    for (n, v) in rows {
        tsv_row(&mut s, &[n.clone(), opt(*v)]);
    }
    s
}

/// Beeswarm with features in importance order.
fn beeswarm_svg(title: &str, ex: &Explanation) -> String {
    let order = ex.importance();
    let idx: Vec<usize> = order.iter().map(|(n, _)| ex.attribution.feature_names.iter().position(|f| f == n).expect("feature")).collect();
    let names: Vec<String> = order.iter().map(|o| o.0.clone()).collect();
    let phi: Vec<Vec<f64>> = idx.iter().map(|&j| ex.attribution.values.col(j)).collect();
    let val: Vec<Vec<f64>> = idx.iter().map(|&j| ex.x.col(j)).collect();
    plots::beeswarm(title, &names, &phi, &val)
}

fn write_explanation(dir: &mut RunDir, prefix: &str, ex: &Explanation) -> Result<()> {
    dir.write(&format!("{prefix}/importance.tsv"), pairs_tsv(["feature", "mean_abs_shap"], &ex.importance()))?;
    dir.write(&format!("{prefix}/mean_signed.tsv"), signed_tsv(&ex.mean_signed()))?;
    dir.write(&format!("{prefix}/beeswarm.tsv"), explain::beeswarm_tsv(&ex.attribution, &ex.x, &ex.row_ids))?;
    dir.json(&format!("{prefix}/attribution.json"), &ex.attribution)
}

fn ablation_slug(drop: &[String]) -> String {
    let mut d = drop.to_vec();
    d.sort();
    format!("no_{}", d.join("_"))
}

/// Runs every stage up to and including `last`, writing its artifacts under
/// `root`. On failure the artifacts written so far are kept, a `FAILED`
/// marker names the stage and error code, and the error is returned.
pub fn run_until(cfg: &PipelineConfig, root: &Path, last: Stage) -> Result<RunSummary> {
    cfg.validate()?;
    let started = now_ms();
    let mut dir = RunDir::create(root)?;
    let lock = cfg.to_json();
    dir.write("config.lock", &lock)?;
    let result = execute(cfg, &mut dir, last);
    let failure = result.as_ref().err().map(|e| Failure {
        stage: match e {
            Error::Stage { stage, .. } => stage.clone(),
            _ => "setup".into(),
        },
        code: e.code().to_string(),
        message: e.to_string(),
    });
    if let Some(f) = &failure {
        dir.write(FAILED, format!("stage\tcode\tmessage\n{}\t{}\t{}\n", f.stage, f.code, f.message.replace(['\t', '\n'], " ")))?;
    }
    let manifest = Manifest {
        version: CONFIG_VERSION,
        status: if failure.is_some() { "failed".into() } else { "ok".into() },
        last_stage: last.name().into(),
        config_sha256: sha256_hex(lock.as_bytes()),
        master_seed: cfg.master_seed,
        stage_seeds: cfg.stage_seeds(),
        artifacts: dir.checksums.clone(),
        failure,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
    };
    let body = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(root.join(MANIFEST), body).map_err(|e| Error::io(root.join(MANIFEST), e))?;
    result.map(|mut s| {
        s.root = root.to_path_buf();
        s
    })
}

/// Full run: every stage including the ablations.
pub fn run_all(cfg: &PipelineConfig, root: &Path) -> Result<RunSummary> {
    run_until(cfg, root, Stage::Ablate)
}

fn execute(cfg: &PipelineConfig, dir: &mut RunDir, last: Stage) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    let table = load_data(cfg).map_err(|e| e.in_stage("synth"))?;

    let (train, test) = split(cfg, &table).map_err(|e| e.in_stage("table1"))?;
    let t1 = table1(cfg, &train, &test).map_err(|e| e.in_stage("table1"))?;
    dir.write("table1.tsv", t1.to_tsv())?;
    if last == Stage::Table1 {
        return Ok(summary);
    }

    let (plan, train_all, test_all) = preprocess(cfg, &train, &test).map_err(|e| e.in_stage("preprocess"))?;
    dir.json(&format!("models/{PLAN_FILE}"), &plan)?;
    let mut dropped = String::from("feature\treason\n");
    for d in &plan.dropped_features {
        tsv_row(&mut dropped, &[d.name.clone(), d.reason.clone()]);
    }
    dir.write("dropped.tsv", dropped)?;
    if last == Stage::Preprocess {
        dir.write("matrices/train.tsv", matrix_tsv(&train_all))?;
        dir.write("matrices/test.tsv", matrix_tsv(&test_all))?;
        return Ok(summary);
    }

    let (correlation_drops, path, selected) = select(cfg, &train_all).map_err(|e| e.in_stage("select"))?;
    let mut pruned = String::from("dropped\tpartner\tcorrelation\n");
    for d in &correlation_drops {
        tsv_row(&mut pruned, &[d.dropped.clone(), d.partner.clone(), d.r.to_string()]);
    }
    dir.write("pruned.tsv", pruned)?;
    dir.write("path.tsv", path_tsv(&path))?;
    dir.write("selected.txt", selected.iter().map(|s| format!("{}\n", s.0)).collect::<String>())?;
    let loglam: Vec<f64> = path.lambdas.iter().map(|l| l.log10()).collect();
    let series: Vec<(String, Vec<(f64, f64)>)> =
        path.feature_names.iter().enumerate().map(|(j, n)| (n.clone(), loglam.iter().enumerate().map(|(k, &x)| (x, path.coef.get(k, j))).collect())).collect();
    dir.write("plots/path.svg", plots::lines("LASSO coefficient path", "log10 lambda", "coefficient", &series, None, None))?;
    let cv = vec![("cv error".to_string(), loglam.iter().zip(&path.cv_mean).map(|(&x, &y)| (x, y)).collect())];
    dir.write("plots/cv.svg", plots::lines("Cross-validated error", "log10 lambda", "mean CV error", &cv, None, None))?;
    dir.write("plots/coefficients.svg", plots::bars("Selected coefficients", "coefficient at optimal lambda", &selected))?;
    let names: Vec<String> = selected.iter().map(|s| s.0.clone()).collect();
    summary.selected = names.clone();
    if last == Stage::Select {
        return Ok(summary);
    }
    let prepared = Prepared {
        train_x: train_all.select_features(&names)?,
        test_x: test_all.select_features(&names)?,
        train,
        test,
        plan,
        train_all,
        test_all,
        correlation_drops,
        path,
        selected,
    };

    let mut specs = cfg.models.families.clone();
    if cfg.models.tune || last == Stage::Tune {
        for spec in specs.iter_mut() {
            if let Some(t) = tune_family(cfg, spec, &prepared.train_x).map_err(|e| e.in_stage("tune"))? {
                dir.write(&format!("models/tune_{}.tsv", spec.family().name()), t.to_tsv())?;
                *spec = t.best_spec().clone();
            }
        }
    }
    if last == Stage::Tune {
        return Ok(summary);
    }

    let balanced = balance(cfg, &prepared.train_x).map_err(|e| e.in_stage("train"))?;
    let mut models = Vec::new();
    for spec in &specs {
        let m = fit_model(cfg, spec, &balanced).map_err(|e| e.in_stage("train"))?;
        dir.write(&format!("models/{}.json", spec.family().name()), m.to_json()?)?;
        models.push(m);
    }
    if last == Stage::Train {
        return Ok(summary);
    }

    let mut report = String::new();
    tsv_row(&mut report, &REPORT_HEADER.map(String::from));
    let mut roc_series = Vec::new();
    for m in &models {
        let r = evaluate_model(cfg, m, &prepared.test_x).map_err(|e| e.in_stage("evaluate"))?;
        let name = m.family.name();
        tsv_row(&mut report, &report_row(name, &r));
        dir.write(&format!("eval/roc_{name}.tsv"), roc_tsv(&r))?;
        dir.json(&format!("eval/{name}.json"), &r)?;
        roc_series.push((format!("{name} (AUC {:.3})", r.auc), r.roc.points.iter().map(|p| (p.fpr, p.tpr)).collect()));
        summary.reports.push((m.family, r));
    }
    dir.write("eval/report.tsv", report)?;
    dir.write("plots/roc.svg", plots::lines("ROC curves, test set", "1 - specificity", "sensitivity", &roc_series, Some((0.0, 1.0)), Some((0.0, 1.0))))?;
    if last == Stage::Evaluate {
        return Ok(summary);
    }

    let ex_spec = specs.iter().find(|s| s.family() == cfg.explain.family).cloned().unwrap_or_else(|| cfg.explain_spec());
    let (ex_model, baseline_auc) = match models.iter().position(|m| m.family == cfg.explain.family) {
        Some(i) => (models[i].clone(), summary.reports[i].1.auc),
        None => {
            let m = fit_model(cfg, &ex_spec, &balanced).map_err(|e| e.in_stage("explain"))?;
            let auc = evaluate_model(cfg, &m, &prepared.test_x).map_err(|e| e.in_stage("explain"))?.auc;
            (m, auc)
        }
    };
    let ex = explain_model(cfg, &ex_model, &prepared.train_x, &prepared.test_x).map_err(|e| e.in_stage("explain"))?;
    write_explanation(dir, "explain", &ex)?;
    let fam = cfg.explain.family.name();
    dir.write("plots/importance.svg", plots::bars(&format!("Feature importance ({fam})"), "mean |SHAP value|", &ex.importance()))?;
    dir.write("plots/beeswarm.svg", beeswarm_svg(&format!("SHAP values ({fam})"), &ex))?;
    summary.importance = ex.importance();
    summary.baseline_mean_signed = ex.mean_signed();
    if last == Stage::Explain {
        return Ok(summary);
    }

    let mut table = String::new();
    tsv_row(&mut table, &["ablation", "dropped_features", "n_features", "auc", "auc_lo", "auc_hi", "baseline_auc", "delta_auc"].map(String::from));
    let mut shift = String::from("ablation\tfeature\tbaseline_mean_signed\tablated_mean_signed\n");
    for drop in &cfg.ablations {
        let a = ablation_run(cfg, &prepared, &ex_spec, drop).map_err(|e| e.in_stage("ablate"))?;
        let slug = ablation_slug(drop);
        write_explanation(dir, &format!("explain/ablation_{slug}"), &a.explanation)?;
        dir.json(&format!("explain/ablation_{slug}/report.json"), &a.report)?;
        dir.write(&format!("plots/beeswarm_{slug}.svg"), beeswarm_svg(&format!("SHAP values ({fam}, without {})", drop.join(", ")), &a.explanation))?;
        let r = &a.report;
        tsv_row(
            &mut table,
            &[
                slug.clone(),
                a.dropped_features.join(","),
                a.model.feature_manifest.len().to_string(),
                r.auc.to_string(),
                r.auc_ci.0.to_string(),
                r.auc_ci.1.to_string(),
                baseline_auc.to_string(),
                (r.auc - baseline_auc).to_string(),
            ],
        );
        let ablated = a.explanation.mean_signed();
        for (n, b) in &summary.baseline_mean_signed {
            if let Some((_, v)) = ablated.iter().find(|m| &m.0 == n) {
                tsv_row(&mut shift, &[slug.clone(), n.clone(), opt(*b), opt(*v)]);
            }
        }
        summary.ablations.push(AblationSummary { drop: drop.clone(), dropped_features: a.dropped_features, auc: r.auc, baseline_auc, mean_signed: ablated });
    }
    dir.write("explain/ablations.tsv", table)?;
    dir.write("explain/ablation_shap_shift.tsv", shift)?;
    Ok(summary)
}

/// Scores an unlabeled extract with a saved model and the plan next to it
/// (or `plan`). Columns outside the plan's schema are ignored.
pub fn score_new(model_path: &Path, plan_path: Option<&Path>, csv_path: &Path) -> Result<Vec<(String, f64)>> {
    let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let model = FittedModel::from_json(&read(model_path)?)?;
    let plan_path = plan_path.map(Path::to_path_buf).unwrap_or_else(|| model_path.with_file_name(PLAN_FILE));
    let plan: PreprocessPlan = serde_json::from_str(&read(&plan_path)?)?;
    plan.check_version()?;
    let (columns, row_ids) = tabular::load_unlabeled_csv(csv_path, &Schema(plan.kept.clone()))?;
    let x = plan.transform_columns(&columns)?;
    let fm = FeatureMatrix { y: vec![0; x.nrows()], x, feature_names: plan.feature_names().to_vec(), row_ids };
    let p = model.score_features(&fm)?;
    Ok(fm.row_ids.into_iter().zip(p).collect())
}

pub fn scores_tsv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("row_id\tprobability\n");
    for (id, p) in rows {
        tsv_row(&mut s, &[id.clone(), p.to_string()]);
    }
    s
}
