//! Python module `mia_audit`: configs, corpora, encoders, attack scores,
//! metrics and audit reports.

use std::collections::BTreeSet;
use std::path::PathBuf;

use ::mia_audit::attacks::{knn_score, subject_embedding, ReferenceSet};
use ::mia_audit::audit::{
    aggregate, auc, calibrate_threshold, render_auc_scatter, render_delta_heatmap, run_audit, select_members,
    AggregationKind, AggregationPolicy, AuditReport, TrainedModel,
};
use ::mia_audit::config::{fingerprint, RunConfig};
use ::mia_audit::corpus::{build_corpus, read_cache, read_records_dir, SubjectId, WindowCorpus, WindowSource};
use ::mia_audit::encoders::{load_checkpoint, pretrain, save_checkpoint, Encoder, EncoderConfig, EncoderModel, Family};
use ::mia_audit::{Error, SeededRng};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_user_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_subject(s: &str) -> PyResult<SubjectId> {
    let (dataset, key) = s
        .split_once('/')
        .ok_or_else(|| PyValueError::new_err(format!("subject {s:?} is not <dataset>/<key>")))?;
    SubjectId::new(dataset, key).map_err(to_py)
}

fn parse_family(name: &str) -> PyResult<Family> {
    name.parse::<Family>().map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Validated run configuration with its fingerprint.
#[pyclass(name = "RunConfig", module = "mia_audit")]
struct PyRunConfig {
    inner: RunConfig,
    fingerprint: String,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    #[pyo3(signature = (path, seed=None))]
    fn load(path: PathBuf, seed: Option<u64>) -> PyResult<Self> {
        let (inner, fingerprint) = RunConfig::load(&path, seed).map_err(to_py)?;
        Ok(Self { inner, fingerprint })
    }

    #[staticmethod]
    #[pyo3(signature = (text, seed=None))]
    fn from_json(text: &str, seed: Option<u64>) -> PyResult<Self> {
        let inner = RunConfig::from_json(text.as_bytes(), seed).map_err(to_py)?;
        Ok(Self {
            fingerprint: fingerprint(text.as_bytes(), inner.seed),
            inner,
        })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    #[getter]
    fn train_datasets(&self) -> Vec<String> {
        self.inner.train_datasets.clone()
    }

    #[getter]
    fn families(&self) -> Vec<&'static str> {
        self.inner.encoders.iter().map(|e| e.family.as_str()).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// Generates the configured synthetic cohorts and windows them.
    fn synthesize(&self) -> PyResult<PyCorpus> {
        let mut records = Vec::new();
        for c in &self.inner.cohorts {
            records.extend(c.generate(self.inner.seed).map_err(to_py)?);
        }
        Ok(PyCorpus {
            inner: build_corpus(&records, None).map_err(to_py)?,
        })
    }

    /// Pretraining members of `dataset` within `corpus`.
    fn members(&self, corpus: &PyCorpus, dataset: &str) -> PyResult<Vec<String>> {
        let m = select_members(&self.inner, &corpus.inner, dataset).map_err(to_py)?;
        Ok(m.iter().map(ToString::to_string).collect())
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={}, fingerprint={:.12})", self.inner.seed, self.fingerprint)
    }
}

/// Preprocessed windows grouped by subject.
#[pyclass(name = "WindowCorpus", module = "mia_audit")]
struct PyCorpus {
    inner: WindowCorpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn read_cache(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_cache(&path).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_records_dir(path: PathBuf) -> PyResult<Self> {
        let records = read_records_dir(&path).map_err(to_py)?;
        Ok(Self {
            inner: build_corpus(&records, None).map_err(to_py)?,
        })
    }

    fn subjects(&self) -> Vec<String> {
        self.inner.subjects().iter().map(ToString::to_string).collect()
    }

    fn datasets(&self) -> Vec<String> {
        self.inner.datasets()
    }

    fn windows(&self, subject: &str) -> PyResult<Vec<Vec<f64>>> {
        let s = parse_subject(subject)?;
        Ok(self.inner.windows_of(&s).into_iter().map(<[f64]>::to_vec).collect())
    }

    fn total_windows(&self) -> usize {
        self.inner.total_windows()
    }
}

/// A self-supervised ECG encoder.
#[pyclass(name = "Encoder", module = "mia_audit", from_py_object)]
#[derive(Clone)]
struct PyEncoder {
    inner: EncoderModel,
}

#[pymethods]
impl PyEncoder {
    /// Untrained encoder with the desk-scale configuration of `family`.
    #[new]
    #[pyo3(signature = (family, seed=42))]
    fn new(family: &str, seed: u64) -> PyResult<Self> {
        let mut cfg = EncoderConfig::desk(parse_family(family)?);
        cfg.seed = seed;
        Ok(Self {
            inner: EncoderModel::init(&cfg).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(to_py)?,
        })
    }

    /// Pretrains the configured `family` encoder on `members`.
    #[staticmethod]
    fn pretrain(config: &PyRunConfig, family: &str, corpus: &PyCorpus, members: Vec<String>) -> PyResult<Self> {
        let family = parse_family(family)?;
        let enc = config
            .inner
            .encoder(family)
            .ok_or_else(|| PyValueError::new_err(format!("family {family} is not configured")))?;
        let members = members.iter().map(|s| parse_subject(s)).collect::<PyResult<BTreeSet<_>>>()?;
        let (inner, _) = pretrain(enc, &corpus.inner, &members).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family().as_str()
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.inner.embedding_dim()
    }

    #[getter]
    fn train_subjects(&self) -> Vec<String> {
        self.inner.train_subjects().iter().map(ToString::to_string).collect()
    }

    fn encode(&self, window: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.encode(&window).map_err(to_py)
    }

    /// Mean embedding of at most `cap` windows.
    #[pyo3(signature = (windows, cap=2000, seed=42))]
    fn subject_embedding(&self, windows: Vec<Vec<f64>>, cap: usize, seed: u64) -> PyResult<Vec<f64>> {
        let refs: Vec<&[f64]> = windows.iter().map(Vec::as_slice).collect();
        subject_embedding(&self.inner, &refs, cap, &mut SeededRng::new(seed, 0)).map_err(to_py)
    }
}

/// Metrics of every (dataset, family, attack) cell plus learned-minus-score
/// AUC deltas.
#[pyclass(name = "AuditReport", module = "mia_audit")]
struct PyReport {
    inner: AuditReport,
}

#[pymethods]
impl PyReport {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: AuditReport::read(&path).map_err(to_py)?,
        })
    }

    #[getter]
    fn config_fingerprint(&self) -> &str {
        &self.inner.config_fingerprint
    }

    /// Cells as `(dataset, family, attack, auc, tpr_at_alpha, fpr, adv)`.
    fn cells(&self) -> Vec<(String, &'static str, &'static str, f64, f64, f64, f64)> {
        self.inner
            .cells
            .iter()
            .map(|c| (c.dataset.clone(), c.family.as_str(), c.attack.as_str(), c.auc, c.tpr_at_alpha, c.fpr, c.adv))
            .collect()
    }

    fn delta_auc(&self) -> Vec<(String, &'static str, f64)> {
        self.inner
            .delta_auc
            .iter()
            .map(|d| (d.dataset.clone(), d.family.as_str(), d.value))
            .collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn cells_csv(&self) -> String {
        self.inner.cells_csv()
    }

    fn delta_heatmap_svg(&self) -> String {
        render_delta_heatmap(&self.inner)
    }

    fn auc_scatter_svg(&self) -> String {
        render_auc_scatter(&self.inner)
    }
}

/// Runs every configured attack against `models`, given as
/// `(training dataset, encoder)` pairs.
#[pyfunction]
#[pyo3(name = "run_audit")]
fn py_run_audit(config: &PyRunConfig, corpus: &PyCorpus, models: Vec<(String, PyEncoder)>) -> PyResult<PyReport> {
    let trained: Vec<TrainedModel> = models
        .into_iter()
        .map(|(dataset, m)| TrainedModel { dataset, model: m.inner })
        .collect();
    let out = run_audit(&config.inner, &config.fingerprint, &corpus.inner, &trained).map_err(to_py)?;
    Ok(PyReport { inner: out.report })
}

/// Subject-level AUC with ties counted as one half.
#[pyfunction]
#[pyo3(name = "auc")]
fn py_auc(members: Vec<f64>, nonmembers: Vec<f64>) -> PyResult<f64> {
    auc(&members, &nonmembers).map_err(to_py)
}

/// Returns `(threshold, achieved_fpr)`.
#[pyfunction]
#[pyo3(name = "calibrate_threshold")]
fn py_calibrate_threshold(nonmember_scores: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    let c = calibrate_threshold(&nonmember_scores, alpha).map_err(to_py)?;
    Ok((c.threshold, c.achieved_fpr))
}

/// Mean of the `k` largest scores; the plain mean when `k` is None.
#[pyfunction]
#[pyo3(name = "aggregate", signature = (scores, k=Some(50)))]
fn py_aggregate(scores: Vec<f64>, k: Option<usize>) -> PyResult<f64> {
    let policy = AggregationPolicy {
        kind: if k.is_some() { AggregationKind::TopKMean } else { AggregationKind::Mean },
        k: k.unwrap_or(1),
        window_cap: scores.len(),
    };
    aggregate(&scores, &policy).map_err(to_py)
}

/// Negative mean Euclidean distance to the `k` nearest references.
#[pyfunction]
#[pyo3(name = "knn_score", signature = (z, references, k=5))]
fn py_knn_score(z: Vec<f64>, references: Vec<Vec<f64>>, k: usize) -> PyResult<f64> {
    let entries = references
        .into_iter()
        .enumerate()
        .map(|(i, r)| Ok((SubjectId::new("ref", i.to_string()).map_err(to_py)?, r)))
        .collect::<PyResult<Vec<_>>>()?;
    let refs = ReferenceSet::new(entries).map_err(to_py)?;
    knn_score(&z, &refs, k, None).map_err(to_py)
}

/// Hex SHA-256 of the config bytes followed by the seed.
#[pyfunction]
#[pyo3(name = "fingerprint")]
fn py_fingerprint(config_bytes: &[u8], seed: u64) -> String {
    fingerprint(config_bytes, seed)
}

#[pymodule]
#[pyo3(name = "mia_audit")]
fn mia_audit_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyEncoder>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(py_run_audit, m)?)?;
    m.add_function(wrap_pyfunction!(py_auc, m)?)?;
    m.add_function(wrap_pyfunction!(py_calibrate_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(py_aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(py_knn_score, m)?)?;
    m.add_function(wrap_pyfunction!(py_fingerprint, m)?)?;
    Ok(())
}
