//! Python bindings: configuration, end-to-end runs, fitted models with SHAP,
//! and the statistical primitives.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use strokerisk::error::Error;
use strokerisk::eval::{self, EvalConfig};
use strokerisk::explain;
use strokerisk::learn::{self, Family, FittedModel, ModelSpec};
use strokerisk::matrix::Matrix;
use strokerisk::pipeline::{self, PipelineConfig};
use strokerisk::resample::{self, SmoteConfig};
use strokerisk::stats::{self, TVariant};
use strokerisk::tabular;

create_exception!(strokerisk_py, StrokeriskError, PyException, "Pipeline error; the message starts with the error code.");

fn err(e: Error) -> PyErr {
    StrokeriskError::new_err(format!("{}: {e}", e.code()))
}

fn invalid(msg: impl Into<String>) -> PyErr {
    err(Error::InvalidConfig(msg.into()))
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(invalid("rows have different lengths"));
    }
    Ok(Matrix::from_rows(rows))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.rows_iter().map(<[f64]>::to_vec).collect()
}

/// Pipeline configuration; JSON keys as in `config.lock`.
#[pyclass(name = "PipelineConfig", module = "strokerisk_py", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (json = None))]
    fn new(json: Option<&str>) -> PyResult<Self> {
        let inner = match json {
            Some(s) => PipelineConfig::from_json(s).map_err(err)?,
            None => PipelineConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    #[getter]
    fn master_seed(&self) -> u64 {
        self.inner.master_seed
    }

    #[setter]
    fn set_master_seed(&mut self, seed: u64) {
        self.inner.master_seed = seed;
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn stage_seeds(&self) -> BTreeMap<String, u64> {
        self.inner.stage_seeds()
    }
}

/// A fitted classifier: logreg, svm_rbf, gbdt_xgb_preset, gbdt_cat_preset
/// or random_forest.
#[pyclass(name = "Model", module = "strokerisk_py", frozen)]
struct PyModel {
    inner: FittedModel,
}

#[pymethods]
impl PyModel {
    /// Fits `family` with its default hyperparameters, overridden by `params`.
    #[staticmethod]
    #[pyo3(signature = (family, x, y, feature_names = None, seed = 0, params = None))]
    fn fit(family: &str, x: Vec<Vec<f64>>, y: Vec<u8>, feature_names: Option<Vec<String>>, seed: u64, params: Option<BTreeMap<String, f64>>) -> PyResult<Self> {
        let fam = Family::parse(family).map_err(err)?;
        let mut spec = ModelSpec::default_for(fam);
        for (k, v) in params.unwrap_or_default() {
            spec = spec.with_param(&k, v).map_err(err)?;
        }
        let x = matrix(&x)?;
        let names = feature_names.unwrap_or_else(|| (0..x.ncols()).map(|j| format!("x{j}")).collect());
        let inner = learn::fit(&spec, &x, &y, &names, seed).map_err(err)?;
        Ok(PyModel { inner })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(PyModel { inner: FittedModel::from_json(s).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_manifest.clone()
    }

    /// Probabilities for each row.
    fn score(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.score(&matrix(&x)?).map_err(err)
    }

    /// Shapley values of the probability output against `background`.
    /// Returns `(base_value, values)`.
    #[pyo3(signature = (x, background, mode = "exact", coalitions = 2048, ridge = 1e-6, seed = 0))]
    fn shap(&self, x: Vec<Vec<f64>>, background: Vec<Vec<f64>>, mode: &str, coalitions: usize, ridge: f64, seed: u64) -> PyResult<(f64, Vec<Vec<f64>>)> {
        let (x, bg) = (matrix(&x)?, matrix(&background)?);
        let f = |r: &[f64]| self.inner.score_row(r);
        let (base, phi) = match mode {
            "exact" => explain::exact_shap(&f, &x, &bg),
            "kernel" => explain::kernel_shap(&f, &x, &bg, coalitions, ridge, seed),
            m => return Err(invalid(format!("unknown SHAP mode `{m}`"))),
        }
        .map_err(err)?;
        Ok((base, rows(&phi)))
    }
}

/// Tie-aware trapezoid AUC.
#[pyfunction]
fn roc_auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    Ok(eval::roc_auc(&scores, &labels).map_err(err)?.auc)
}

/// AUC and Youden operating point with percentile bootstrap intervals.
#[pyfunction]
#[pyo3(signature = (scores, labels, n_boot = 2000, level = 0.95, seed = 0))]
fn evaluate(scores: Vec<f64>, labels: Vec<u8>, n_boot: usize, level: f64, seed: u64) -> PyResult<BTreeMap<String, f64>> {
    let cfg = EvalConfig { n_boot, level, ..EvalConfig::default() };
    let r = eval::evaluate(&scores, &labels, &cfg, seed).map_err(err)?;
    Ok(BTreeMap::from([
        ("auc".to_string(), r.auc),
        ("auc_lo".into(), r.auc_ci.0),
        ("auc_hi".into(), r.auc_ci.1),
        ("threshold".into(), r.point.threshold),
        ("sensitivity".into(), r.point.sensitivity),
        ("specificity".into(), r.point.specificity),
        ("accuracy".into(), r.point.accuracy),
        ("accuracy_lo".into(), r.accuracy_ci.0),
        ("accuracy_hi".into(), r.accuracy_ci.1),
    ]))
}

/// Pearson chi-square on an r x c count table. Returns `(statistic, p)`.
#[pyfunction]
#[pyo3(signature = (table, yates = true))]
fn chi_square(table: Vec<Vec<f64>>, yates: bool) -> PyResult<(f64, f64)> {
    let r = stats::chi_square(&table, yates).map_err(err)?;
    Ok((r.statistic, r.p_value))
}

/// Two-sample t test, `variant` "welch" or "pooled". Returns `(t, p)`.
#[pyfunction]
#[pyo3(signature = (a, b, variant = "welch"))]
fn t_test(a: Vec<f64>, b: Vec<f64>, variant: &str) -> PyResult<(f64, f64)> {
    let v = match variant {
        "welch" => TVariant::Welch,
        "pooled" => TVariant::Pooled,
        v => return Err(invalid(format!("unknown t-test variant `{v}`"))),
    };
    let r = stats::t_test(&a, &b, v).map_err(err)?;
    Ok((r.statistic, r.p_value))
}

/// Deterministic sample of size `n` with exactly the given mean and sd.
#[pyfunction]
fn summary_equivalent_sample(n: usize, mean: f64, sd: f64) -> Vec<f64> {
    stats::summary_equivalent_sample(n, mean, sd)
}

/// SMOTE oversampling. Returns `(x, y)` with input rows first.
#[pyfunction]
#[pyo3(signature = (x, y, k_neighbors = 5, target_ratio = 1.0, seed = 0))]
fn smote(x: Vec<Vec<f64>>, y: Vec<u8>, k_neighbors: usize, target_ratio: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<u8>)> {
    let r = resample::smote(&matrix(&x)?, &y, &SmoteConfig { k_neighbors, target_ratio, seed }).map_err(err)?;
    Ok((rows(&r.x), r.y))
}

/// Writes the synthetic cohort of `config` to `path`. Returns the row count.
#[pyfunction]
#[pyo3(signature = (path, config = None))]
fn synthesize(path: &str, config: Option<PyRef<'_, PyConfig>>) -> PyResult<usize> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let t = pipeline::load_data(&cfg).map_err(err)?;
    tabular::save_csv(&t, path).map_err(err)?;
    Ok(t.n_rows())
}

/// Runs every stage into `out_dir`. Returns per-family test AUCs, the
/// selected features and the global importance ranking.
#[pyfunction]
#[pyo3(signature = (out_dir, config = None))]
fn run_all(py: Python<'_>, out_dir: &str, config: Option<PyRef<'_, PyConfig>>) -> PyResult<Py<PyAny>> {
    let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
    let s = py.detach(|| pipeline::run_all(&cfg, Path::new(out_dir))).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    let aucs: BTreeMap<&str, f64> = s.reports.iter().map(|(f, r)| (f.name(), r.auc)).collect();
    d.set_item("auc", aucs)?;
    d.set_item("selected", s.selected)?;
    d.set_item("importance", s.importance)?;
    let abl: Vec<(Vec<String>, f64, f64)> = s.ablations.iter().map(|a| (a.drop.clone(), a.auc, a.baseline_auc)).collect();
    d.set_item("ablations", abl)?;
    Ok(d.into_any().unbind())
}

/// Scores a CSV with a saved model and its plan. Returns `(row_id, p)` pairs.
#[pyfunction]
#[pyo3(signature = (model_path, csv_path, plan_path = None))]
fn score_csv(model_path: &str, csv_path: &str, plan_path: Option<&str>) -> PyResult<Vec<(String, f64)>> {
    pipeline::score_new(Path::new(model_path), plan_path.map(Path::new), Path::new(csv_path)).map_err(err)
}

#[pymodule]
fn strokerisk_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("StrokeriskError", m.py().get_type::<StrokeriskError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square, m)?)?;
    m.add_function(wrap_pyfunction!(t_test, m)?)?;
    m.add_function(wrap_pyfunction!(summary_equivalent_sample, m)?)?;
    m.add_function(wrap_pyfunction!(smote, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    m.add_function(wrap_pyfunction!(score_csv, m)?)?;
    Ok(())
}
