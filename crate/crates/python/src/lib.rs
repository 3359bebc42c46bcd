//! Python bindings. Results come back as plain dicts and lists.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use survexplain::dataio::{self, load_csv, DatasetSchema, SyntheticSpec};
use survexplain::effects::{
    ale_curves, build_grid, ice_curves, m_plot, pdp_curves, sample_rows, GridKind,
};
use survexplain::importance::{cpi, loco, pfi, BrierLoss, FiConfig, FiMode};
use survexplain::interactions::{h_total, h_two_way};
use survexplain::local::{
    counterfactual_explain, survlime_explain, PsoConfig, SurvLimeBaseline, SurvLimeConfig,
};
use survexplain::metrics::{default_eval_grid, evaluate};
use survexplain::models::{
    fit_cox, fit_rsf, predict_table, CoxConfig, ModelDocument, ModelOutput, ModelSpec, OutputScale,
    RsfConfig, SurvivalModel,
};
use survexplain::survshap::{survshap_kernel, survshap_sampling, SampleCount};
use survexplain::{FeatureSpec, FeatureTable, SurvivalDataset, TimeGrid};

create_exception!(survexplain, SurvExplainError, PyException);

fn err(e: survexplain::Error) -> PyErr {
    SurvExplainError::new_err(format!("{}: {e}", e.kind()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Dataset", module = "survexplain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: SurvivalDataset,
}

#[pymethods]
impl PyDataset {
    /// Numeric features from row-major lists.
    #[new]
    #[pyo3(signature = (features, time, event, names=None))]
    fn new(
        features: Vec<Vec<f64>>,
        time: Vec<f64>,
        event: Vec<bool>,
        names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let p = features.first().map_or(0, Vec::len);
        let names = names.unwrap_or_else(|| (1..=p).map(|j| format!("x{j}")).collect());
        if names.len() != p {
            return Err(PyValueError::new_err(
                "names must match the number of columns",
            ));
        }
        let schema = names.into_iter().map(FeatureSpec::numeric).collect();
        let table = FeatureTable::new(schema, features.concat()).map_err(err)?;
        let inner = SurvivalDataset::new(table, time, event).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (data, schema, impute=false))]
    fn from_csv(data: PathBuf, schema: PathBuf, impute: bool) -> PyResult<Self> {
        let schema = DatasetSchema::from_file(&schema).map_err(err)?;
        let (inner, _) = load_csv(&data, &schema, impute).map_err(err)?;
        Ok(Self { inner })
    }

    /// Simulated Cox data with an exponential baseline.
    #[staticmethod]
    #[pyo3(signature = (n, coefficients, seed, censoring_rate=0.3))]
    fn synthetic(
        n: usize,
        coefficients: Vec<f64>,
        seed: u64,
        censoring_rate: f64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            n,
            coefficients,
            censoring_rate,
            seed,
            ..SyntheticSpec::default()
        };
        let inner = dataio::generate_synthetic(&spec).map_err(err)?;
        Ok(Self { inner })
    }

    /// Writes `data.csv`-style content and, if given, the schema JSON.
    #[pyo3(signature = (path, schema=None))]
    fn to_csv(&self, path: PathBuf, schema: Option<PathBuf>) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| err(e.into()))?;
        dataio::write_csv(&self.inner, file).map_err(err)?;
        if let Some(s) = schema {
            DatasetSchema::for_dataset(&self.inner)
                .to_file(&s)
                .map_err(err)?;
        }
        Ok(())
    }

    fn split(&self, fractions: [f64; 3], seed: u64) -> PyResult<(Self, Self, Self)> {
        let [a, b, c] = dataio::split(&self.inner, fractions, seed).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }, Self { inner: c }))
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.schema().iter().map(|f| f.name.clone()).collect()
    }

    #[getter]
    fn time(&self) -> Vec<f64> {
        self.inner.time().to_vec()
    }

    #[getter]
    fn event(&self) -> Vec<bool> {
        self.inner.event().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        check_row(&self.inner, i)?;
        Ok(self.inner.features().row(i).to_vec())
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.features().rows().map(<[f64]>::to_vec).collect()
    }

    /// Unique event times up to the 95th percentile of observed times.
    fn default_times(&self) -> PyResult<Vec<f64>> {
        Ok(default_eval_grid(&self.inner)
            .map_err(err)?
            .points()
            .to_vec())
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n_rows={}, n_features={}, events={})",
            self.inner.n_rows(),
            self.inner.n_features(),
            self.inner.n_events()
        )
    }
}

#[pyclass(name = "Model", module = "survexplain", frozen)]
struct PyModel {
    doc: ModelDocument,
    model: Box<dyn SurvivalModel>,
}

impl PyModel {
    fn from_doc(doc: ModelDocument) -> PyResult<Self> {
        let model = doc.clone().into_model().map_err(err)?;
        Ok(Self { doc, model })
    }

    fn spec(&self) -> ModelSpec {
        match &self.doc {
            ModelDocument::Cox { .. } => ModelSpec::Cox(CoxConfig::default()),
            ModelDocument::Rsf { config, .. } => ModelSpec::Rsf(config.clone()),
        }
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (data, max_iter=100, tolerance=1e-9))]
    fn fit_cox(data: &PyDataset, max_iter: usize, tolerance: f64) -> PyResult<Self> {
        let cfg = CoxConfig {
            max_iter,
            tolerance,
            ..CoxConfig::default()
        };
        let m = fit_cox(&data.inner, &cfg).map_err(err)?;
        Self::from_doc(ModelDocument::from(&m))
    }

    #[staticmethod]
    #[pyo3(signature = (data, seed, n_trees=100, min_node_size=15, mtry=None))]
    fn fit_rsf(
        data: &PyDataset,
        seed: u64,
        n_trees: usize,
        min_node_size: usize,
        mtry: Option<usize>,
    ) -> PyResult<Self> {
        let cfg = RsfConfig {
            n_trees,
            min_node_size,
            mtry,
            seed,
            ..RsfConfig::default()
        };
        let m = fit_rsf(&data.inner, &cfg).map_err(err)?;
        Self::from_doc(ModelDocument::from(&m))
    }

    /// Loads a model document, bare or wrapped in a `fit` artifact.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(e.into()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| err(e.into()))?;
        if let Some(inner) = value.get_mut("result") {
            value = inner.take();
        }
        let doc = serde_json::from_value(value).map_err(|e| err(e.into()))?;
        Self::from_doc(doc)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        survexplain::models::save_model(&self.doc, &path).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.doc {
            ModelDocument::Cox { .. } => "cox",
            ModelDocument::Rsf { .. } => "rsf",
        }
    }

    /// Cox coefficients; `None` for forests.
    #[getter]
    fn coefficients(&self) -> Option<Vec<f64>> {
        match &self.doc {
            ModelDocument::Cox { coefficients, .. } => Some(coefficients.clone()),
            ModelDocument::Rsf { .. } => None,
        }
    }

    /// One curve per row on `times`; `scale` is survival, chf or log_chf.
    #[pyo3(signature = (rows, times, scale="survival"))]
    fn predict(
        &self,
        rows: Vec<Vec<f64>>,
        times: Vec<f64>,
        scale: &str,
    ) -> PyResult<Vec<Vec<f64>>> {
        let grid = TimeGrid::new(times).map_err(err)?;
        let table = FeatureTable::new(self.model.schema().to_vec(), rows.concat()).map_err(err)?;
        let out = ModelOutput::new(self.model.as_ref(), parse_scale(scale)?);
        let flat = predict_table(&out, &table, &grid).map_err(err)?;
        Ok(flat.chunks(grid.len()).map(<[f64]>::to_vec).collect())
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.doc).map_err(|e| err(e.into()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, n_features={})",
            self.kind(),
            self.model.schema().len()
        )
    }
}

fn parse_scale(s: &str) -> PyResult<OutputScale> {
    match s {
        "survival" => Ok(OutputScale::Survival),
        "chf" => Ok(OutputScale::Chf),
        "log_chf" => Ok(OutputScale::LogChf),
        _ => Err(PyValueError::new_err(format!("unknown scale `{s}`"))),
    }
}

fn parse_mode(s: &str) -> PyResult<FiMode> {
    match s {
        "difference" => Ok(FiMode::Difference),
        "quotient" => Ok(FiMode::Quotient),
        _ => Err(PyValueError::new_err(format!("unknown mode `{s}`"))),
    }
}

fn parse_grid_kind(s: &str) -> PyResult<GridKind> {
    match s {
        "equidistant" => Ok(GridKind::Equidistant),
        "quantile" => Ok(GridKind::Quantile),
        "sample" => Ok(GridKind::Sample),
        _ => Err(PyValueError::new_err(format!("unknown grid kind `{s}`"))),
    }
}

fn check_row(data: &SurvivalDataset, i: usize) -> PyResult<()> {
    if i >= data.n_rows() {
        return Err(PyValueError::new_err(format!(
            "row {i} out of range for {} rows",
            data.n_rows()
        )));
    }
    Ok(())
}

fn resolve_times(data: &SurvivalDataset, times: Option<Vec<f64>>) -> PyResult<TimeGrid> {
    match times {
        Some(t) => TimeGrid::new(t).map_err(err),
        None => default_eval_grid(data).map_err(err),
    }
}

fn feature(data: &SurvivalDataset, name: &str) -> PyResult<usize> {
    data.features()
        .feature_index(name)
        .map_err(|_| PyValueError::new_err(format!("unknown feature `{name}`")))
}

fn check_schema(model: &PyModel, data: &PyDataset) -> PyResult<()> {
    if model.model.schema() != data.inner.schema() {
        return Err(PyValueError::new_err("model and data schemas differ"));
    }
    Ok(())
}

/// Brier curve, integrated Brier score, C-index and D-calibration.
#[pyfunction]
#[pyo3(name = "evaluate", signature = (model, data, times=None, bins=10))]
fn py_evaluate(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    times: Option<Vec<f64>>,
    bins: usize,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    let grid = resolve_times(&data.inner, times)?;
    let r = evaluate(model.model.as_ref(), &data.inner, &grid, bins).map_err(err)?;
    to_py(py, &r)
}

/// ICE, PDP or M-plot curves for one feature.
#[pyfunction]
#[pyo3(signature = (
    model, data, feature_name, method="pdp", times=None, grid_size=20, grid_kind="quantile",
    center_at=None, n_rows=100, fraction=0.1, scale="survival", seed=0
))]
#[allow(clippy::too_many_arguments)]
fn effect(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    feature_name: &str,
    method: &str,
    times: Option<Vec<f64>>,
    grid_size: usize,
    grid_kind: &str,
    center_at: Option<f64>,
    n_rows: usize,
    fraction: f64,
    scale: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    let j = feature(&data.inner, feature_name)?;
    let grid_times = resolve_times(&data.inner, times)?;
    let feats = data.inner.features();
    let pred = ModelOutput::new(model.model.as_ref(), parse_scale(scale)?);
    let grid = build_grid(feats, j, parse_grid_kind(grid_kind)?, grid_size, seed).map_err(err)?;
    let surface = match method {
        "ice" => {
            let rows = sample_rows(feats.n_rows(), n_rows, seed);
            ice_curves(&pred, feats, &grid, &grid_times, center_at, Some(&rows))
        }
        "pdp" => pdp_curves(&pred, feats, &grid, &grid_times, center_at, None),
        "mplot" => m_plot(&pred, feats, &grid, &grid_times, fraction),
        _ => return Err(PyValueError::new_err(format!("unknown method `{method}`"))),
    }
    .map_err(err)?;
    to_py(py, &surface)
}

/// Accumulated local effects of one feature.
#[pyfunction]
#[pyo3(signature = (model, data, feature_name, times=None, intervals=10, centered=true, scale="survival"))]
#[allow(clippy::too_many_arguments)]
fn ale(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    feature_name: &str,
    times: Option<Vec<f64>>,
    intervals: usize,
    centered: bool,
    scale: &str,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    let j = feature(&data.inner, feature_name)?;
    let grid_times = resolve_times(&data.inner, times)?;
    let pred = ModelOutput::new(model.model.as_ref(), parse_scale(scale)?);
    let surface = ale_curves(
        &pred,
        data.inner.features(),
        j,
        &grid_times,
        intervals,
        centered,
    )
    .map_err(err)?;
    to_py(py, &surface)
}

/// Friedman's H² over time: two-way with `other`, total otherwise.
#[pyfunction]
#[pyo3(signature = (model, data, feature_name, other=None, times=None, eval_rows=200, scale="survival", seed=0))]
#[allow(clippy::too_many_arguments)]
fn h_statistic(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    feature_name: &str,
    other: Option<&str>,
    times: Option<Vec<f64>>,
    eval_rows: usize,
    scale: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    let j = feature(&data.inner, feature_name)?;
    let grid_times = resolve_times(&data.inner, times)?;
    let feats = data.inner.features();
    let pred = ModelOutput::new(model.model.as_ref(), parse_scale(scale)?);
    let rows = sample_rows(feats.n_rows(), eval_rows, seed);
    let r = match other {
        Some(name) => {
            let k = feature(&data.inner, name)?;
            h_two_way(&pred, feats, j, k, &grid_times, &rows)
        }
        None => h_total(&pred, feats, j, &grid_times, &rows),
    }
    .map_err(err)?;
    to_py(py, &r)
}

/// Permutation (`pfi`), conditional (`cpi`) or leave-one-covariate-out
/// (`loco`) importance under the Brier loss.
#[pyfunction]
#[pyo3(signature = (model, data, method="pfi", test_data=None, times=None, repeats=10, mode="difference", seed=0))]
#[allow(clippy::too_many_arguments)]
fn importance(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    method: &str,
    test_data: Option<&PyDataset>,
    times: Option<Vec<f64>>,
    repeats: usize,
    mode: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    let grid_times = resolve_times(&data.inner, times)?;
    let mode = parse_mode(mode)?;
    let cfg = FiConfig {
        repeats,
        mode,
        seed,
    };
    let pred = ModelOutput::survival(model.model.as_ref());
    let r = match method {
        "pfi" => pfi(&pred, &data.inner, &BrierLoss, &cfg, &grid_times),
        "cpi" => cpi(&pred, &data.inner, &BrierLoss, &cfg, &grid_times),
        "loco" => {
            let test = test_data.map_or(&data.inner, |d| &d.inner);
            loco(
                &model.spec(),
                &data.inner,
                test,
                &BrierLoss,
                mode,
                &grid_times,
            )
        }
        _ => return Err(PyValueError::new_err(format!("unknown method `{method}`"))),
    }
    .map_err(err)?;
    to_py(py, &r)
}

/// Local Cox surrogate around row `instance`.
#[pyfunction]
#[pyo3(signature = (model, data, instance, g=100, radius=0.5, baseline="breslow", seed=0))]
#[allow(clippy::too_many_arguments)]
fn survlime(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    instance: usize,
    g: usize,
    radius: f64,
    baseline: &str,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    check_row(&data.inner, instance)?;
    let baseline = match baseline {
        "breslow" => SurvLimeBaseline::Breslow,
        "nelson_aalen" => SurvLimeBaseline::NelsonAalen,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown baseline `{baseline}`"
            )))
        }
    };
    let cfg = SurvLimeConfig {
        g,
        radius,
        baseline,
        seed,
        ..SurvLimeConfig::default()
    };
    let pred = ModelOutput::new(model.model.as_ref(), OutputScale::Chf);
    let r = survlime_explain(
        &pred,
        &data.inner,
        data.inner.features().row(instance),
        &cfg,
    )
    .map_err(err)?;
    to_py(py, &r)
}

/// Time-dependent Shapley values of row `instance` against a sampled
/// background. `samples` is `"all"` or a count.
#[pyfunction]
#[pyo3(signature = (model, data, instance, times=None, estimator="sampling", samples=None, background=100, seed=0))]
#[allow(clippy::too_many_arguments)]
fn survshap(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    instance: usize,
    times: Option<Vec<f64>>,
    estimator: &str,
    samples: Option<Bound<'_, PyAny>>,
    background: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    check_row(&data.inner, instance)?;
    let grid_times = resolve_times(&data.inner, times)?;
    let feats = data.inner.features();
    let samples = match samples {
        None => SampleCount::default_for(feats.n_features()),
        Some(s) if s.extract::<String>().is_ok_and(|v| v == "all") => SampleCount::All,
        Some(s) => SampleCount::Count(s.extract()?),
    };
    let bg = feats.select_rows(&sample_rows(feats.n_rows(), background, seed));
    let pred = ModelOutput::survival(model.model.as_ref());
    let x = feats.row(instance);
    let mut r = match estimator {
        "sampling" => survshap_sampling(&pred, &bg, x, &grid_times, samples, seed),
        "kernel" => survshap_kernel(&pred, &bg, x, &grid_times, samples, seed),
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown estimator `{estimator}`"
            )))
        }
    }
    .map_err(err)?;
    r.instance = Some(instance);
    to_py(py, &r)
}

/// Counterfactual for row `instance` that raises the restricted mean
/// survival time by `r_gap`.
#[pyfunction]
#[pyo3(signature = (model, data, instance, r_gap, penalty=0.1, particles=50, iterations=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn counterfactual(
    py: Python<'_>,
    model: &PyModel,
    data: &PyDataset,
    instance: usize,
    r_gap: f64,
    penalty: f64,
    particles: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    check_schema(model, data)?;
    check_row(&data.inner, instance)?;
    let pso = PsoConfig {
        particles,
        iterations,
        ..PsoConfig::default()
    };
    let pred = ModelOutput::survival(model.model.as_ref());
    let x = data.inner.features().row(instance);
    let r =
        counterfactual_explain(&pred, &data.inner, x, r_gap, penalty, &pso, seed).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
#[pyo3(name = "survexplain")]
fn survexplain_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SurvExplainError", m.py().get_type::<SurvExplainError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(py_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(effect, m)?)?;
    m.add_function(wrap_pyfunction!(ale, m)?)?;
    m.add_function(wrap_pyfunction!(h_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(importance, m)?)?;
    m.add_function(wrap_pyfunction!(survlime, m)?)?;
    m.add_function(wrap_pyfunction!(survshap, m)?)?;
    m.add_function(wrap_pyfunction!(counterfactual, m)?)?;
    Ok(())
}
