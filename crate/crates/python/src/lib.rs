//! Python bindings: datasets, run configurations, the task drivers and a
//! streaming `Model` that wraps the engine and predictor.

use std::path::PathBuf;

use dynembed::config::{RunConfig, KEYS};
use dynembed::data::{self, Dataset as CoreDataset, EventRecord, InputFormat};
use dynembed::engine::Engine;
use dynembed::evalkit::{self, EvalReport};
use dynembed::linalg::truncated_svd_dense;
use dynembed::predictor::{top_k, Predictor};
use faer::Mat;
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: dynembed::Error) -> PyErr {
    match e {
        dynembed::Error::Config { .. } => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (r.to_json(),))
}

/// Flat key/value run configuration.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// `Config(path=None, **overrides)`; override values are converted with
    /// `str()`.
    #[new]
    #[pyo3(signature = (path=None, **overrides))]
    fn new(path: Option<PathBuf>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = match path {
            Some(p) => RunConfig::from_file(&p).map_err(err)?,
            None => RunConfig::default(),
        };
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                inner.set(&k.extract::<String>()?, &v.str()?.to_string()).map_err(err)?;
            }
        }
        Ok(PyConfig { inner })
    }

    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        self.inner.set(key, &value.str()?.to_string()).map_err(err)
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    /// Every key with its current value.
    fn echo(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.echo()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// `(key, default, description)` for every accepted key.
    #[staticmethod]
    fn keys() -> Vec<(&'static str, &'static str, &'static str)> {
        KEYS.to_vec()
    }

    /// Loads and prepares the configured `dataset`.
    fn load_dataset(&self) -> PyResult<PyDataset> {
        Ok(PyDataset {
            inner: self.inner.load_dataset().map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Config(task={}, hash={})", self.inner.task.as_str(), &self.inner.content_hash()[..12])
    }
}

/// Time-ordered interaction events.
#[pyclass(name = "Dataset")]
struct PyDataset {
    inner: CoreDataset,
}

#[pymethods]
impl PyDataset {
    /// Reads a dataset; `format` is one of canonical, generic,
    /// movielens-100k, movielens-1m, recbole, jodie.
    #[staticmethod]
    #[pyo3(signature = (path, format="canonical"))]
    fn load(path: PathBuf, format: &str) -> PyResult<Self> {
        let fmt: InputFormat = format.parse().map_err(err)?;
        Ok(PyDataset {
            inner: data::load(&path, fmt).map_err(err)?,
        })
    }

    /// Builds a dataset from `(user, item, timestamp)` tuples.
    #[staticmethod]
    fn from_events(events: Vec<(String, String, f64)>) -> PyResult<Self> {
        let ev = events.into_iter().map(|(u, i, t)| EventRecord::new(u, i, t)).collect();
        Ok(PyDataset {
            inner: CoreDataset::new(ev).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        data::save_canonical(&self.inner, &path).map_err(err)
    }

    fn filter_min_item_count(&mut self, min_count: usize) {
        self.inner.filter_min_item_count(min_count);
    }

    fn events(&self) -> Vec<(String, String, f64)> {
        self.inner
            .events
            .iter()
            .map(|e| (e.user_id.clone(), e.item_id.clone(), e.timestamp))
            .collect()
    }

    #[getter]
    fn user_count(&self) -> usize {
        self.inner.user_count()
    }

    #[getter]
    fn item_count(&self) -> usize {
        self.inner.item_count()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn prepared(cfg: &PyConfig, ds: &PyDataset) -> CoreDataset {
    let mut d = ds.inner.clone();
    cfg.inner.prepare(&mut d);
    d
}

macro_rules! driver {
    ($name:ident, $f:path, $doc:literal) => {
        #[doc = $doc]
        #[pyfunction]
        fn $name<'py>(py: Python<'py>, config: &PyConfig, dataset: &PyDataset) -> PyResult<Bound<'py, PyAny>> {
            config.inner.validate().map_err(err)?;
            let ds = prepared(config, dataset);
            let r = py.detach(|| $f(&config.inner, &ds)).map_err(err)?;
            report_dict(py, &r)
        }
    };
}

driver!(run_task, evalkit::run_task, "Runs the configured task; returns the report as a dict.");
driver!(run_ablation, evalkit::run_ablation, "Runs the ablation variants of the configured task.");
driver!(restart_policy_study, evalkit::restart_policy_study, "Monitor vs fixed restart schedules.");
driver!(correlation_study, evalkit::correlation_study, "Monitor distance vs true error.");
driver!(robustness_study, evalkit::robustness_study, "Accuracy as the training share shrinks.");

/// Truncated SVD of a dense row-major matrix: returns `(U, s, V)` with
/// `U` of shape m×k and `V` of shape n×k, as nested lists.
#[pyfunction]
fn truncated_svd(rows: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    let a = Mat::from_fn(m, n, |i, j| rows[i][j]);
    let f = truncated_svd_dense(a.as_ref(), k).map_err(err)?;
    let lists = |x: faer::MatRef<'_, f64>| (0..x.nrows()).map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect()).collect();
    Ok((lists(f.left()), f.singular().to_vec(), lists(f.right())))
}

/// Streaming recommender: fitted on a history, then fed one interaction at
/// a time.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    engine: Engine,
    predictor: Predictor,
    /// Subtracted from incoming timestamps when `shift_time` moved the
    /// history to start at 0.
    offset: f64,
}

#[pymethods]
impl PyModel {
    /// Fits on `history`; the first stage starts at its last timestamp.
    #[new]
    fn new(config: &PyConfig, history: &PyDataset) -> PyResult<Self> {
        config.inner.validate().map_err(err)?;
        let mut ds = history.inner.clone();
        ds.filter_min_item_count(config.inner.min_item_count);
        let offset = match ds.events.first() {
            Some(e) if config.inner.shift_time => e.timestamp,
            _ => 0.0,
        };
        config.inner.prepare(&mut ds);
        let engine = Engine::init_at_end(&ds.events, config.inner.engine_config().map_err(err)?).map_err(err)?;
        let mut predictor = Predictor::new(config.inner.predictor_config()).map_err(err)?;
        predictor.seed(&engine);
        Ok(PyModel { engine, predictor, offset })
    }

    /// Ingests one interaction; returns whether a restart happened.
    fn process(&mut self, user: &str, item: &str, timestamp: f64) -> PyResult<bool> {
        let timestamp = timestamp - self.offset;
        let e = EventRecord::new(user, item, timestamp);
        let u = self.engine.register_user(user, None).map_err(err)?;
        let restarted = self.engine.process(&e).map_err(err)?;
        if restarted {
            self.predictor.reseed_snapshots();
        }
        let i = self.engine.item_index(item).expect("ingested item is registered");
        self.predictor.observe(&mut self.engine, u, i, timestamp).map_err(err)?;
        Ok(restarted)
    }

    /// Scores of every known item for `user`, keyed by item id.
    fn scores(&mut self, user: &str) -> PyResult<Vec<(String, f64)>> {
        let u = self.user(user)?;
        let s = self.predictor.scores(&mut self.engine, u).map_err(err)?;
        Ok(s.into_iter()
            .enumerate()
            .map(|(i, v)| (self.engine.item_id(i).expect("indexed item").to_string(), v))
            .collect())
    }

    /// The `k` best item ids for `user`.
    #[pyo3(signature = (user, k=10, exclude_seen=false))]
    fn recommend(&mut self, user: &str, k: usize, exclude_seen: bool) -> PyResult<Vec<String>> {
        let u = self.user(user)?;
        let s = self.predictor.scores(&mut self.engine, u).map_err(err)?;
        let seen: std::collections::HashSet<usize> =
            if exclude_seen { self.engine.user_items(u).into_iter().collect() } else { Default::default() };
        Ok(top_k(&s, k, &|i| seen.contains(&i))
            .into_iter()
            .map(|i| self.engine.item_id(i).expect("indexed item").to_string())
            .collect())
    }

    fn user_embedding(&mut self, user: &str) -> PyResult<Vec<f64>> {
        let u = self.user(user)?;
        Ok(self.engine.bundle().map_err(err)?.user_row(u))
    }

    fn item_embedding(&mut self, item: &str) -> PyResult<Vec<f64>> {
        let i = self
            .engine
            .item_index(item)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown item `{item}`")))?;
        Ok(self.engine.bundle().map_err(err)?.item_row(i))
    }

    /// Forces an offline recomputation with the stage starting at `now`.
    fn restart(&mut self, now: f64) -> PyResult<()> {
        self.engine.restart(now - self.offset).map_err(err)?;
        self.predictor.reseed_snapshots();
        Ok(())
    }

    /// Frobenius distance between the online factors and a fresh offline
    /// factorization of the same matrix.
    fn true_error(&self) -> PyResult<f64> {
        self.engine.true_error().map_err(err)
    }

    #[getter]
    fn monitor_distance(&self) -> f64 {
        self.engine.monitor_distance()
    }

    #[getter]
    fn restart_count(&self) -> usize {
        self.engine.restart_events().len()
    }

    #[getter]
    fn stage(&self) -> (usize, f64, f64) {
        let s = self.engine.stage();
        (s.index, s.start + self.offset, s.beta)
    }

    #[getter]
    fn user_count(&self) -> usize {
        self.engine.user_count()
    }

    #[getter]
    fn item_count(&self) -> usize {
        self.engine.item_count()
    }
}

impl PyModel {
    fn user(&self, id: &str) -> PyResult<usize> {
        self.engine
            .user_index(id)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown user `{id}`")))
    }
}

#[pymodule(name = "dynembed")]
fn dynembed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run_task, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    m.add_function(wrap_pyfunction!(restart_policy_study, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_study, m)?)?;
    m.add_function(wrap_pyfunction!(robustness_study, m)?)?;
    m.add_function(wrap_pyfunction!(truncated_svd, m)?)?;
    Ok(())
}
