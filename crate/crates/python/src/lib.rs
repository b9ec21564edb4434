//! Python bindings: preprocessing, embeddings, the classifier, ranking
//! metrics and the file-based pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use cqa_rank::corpus::{self, DatasetFormat, TokenizerConfig};
use cqa_rank::embeddings::{self, EmbeddingConfig, EmbeddingModel};
use cqa_rank::model::{self, LogRegModel, TrainOptions};
use cqa_rank::pipeline::{self, PipelineConfig};
use cqa_rank::ranking;
use cqa_rank::synth::Signal;
use cqa_rank::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Json(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Tokens of `text` after placeholder substitution and lowercasing.
#[pyfunction]
#[pyo3(signature = (text, remove_stopwords = true))]
fn preprocess(text: &str, remove_stopwords: bool) -> Vec<String> {
    let cfg = if remove_stopwords {
        TokenizerConfig::default()
    } else {
        TokenizerConfig::without_stopwords()
    };
    corpus::preprocess(text, &cfg)
}

/// Writes a synthetic dataset and a pipeline config; returns the three paths.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, threads = 50, signal = "topical", subtask = "a"))]
fn synth(out_dir: PathBuf, seed: u64, threads: usize, signal: &str, subtask: &str) -> PyResult<(String, String, String)> {
    let signal = match signal {
        "topical" => Signal::Topical,
        "centroid" => Signal::Centroid,
        s => return Err(PyValueError::new_err(format!("unknown signal {s:?}"))),
    };
    let format = match subtask.to_ascii_lowercase().as_str() {
        "a" => DatasetFormat::SubtaskA,
        "c" => DatasetFormat::SubtaskC,
        s => return Err(PyValueError::new_err(format!("unknown subtask {s:?}"))),
    };
    let (d, t, c) = pipeline::cmd_synth(seed, threads, out_dir, signal, format).map_err(py_err)?;
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    Ok((s(d), s(t), s(c)))
}

#[pyfunction]
fn average_precision(relevant: Vec<bool>) -> Option<f64> {
    ranking::average_precision(&relevant)
}

#[pyfunction]
fn cosine_similarity(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    if u.len() != v.len() {
        return Err(PyValueError::new_err("vectors differ in length"));
    }
    Ok(embeddings::cosine_similarity(&u, &v))
}

/// Skip-gram word vectors.
#[pyclass(name = "Embeddings", module = "cqa_rank_py")]
struct PyEmbeddings {
    inner: EmbeddingModel,
}

#[pymethods]
impl PyEmbeddings {
    #[staticmethod]
    #[pyo3(signature = (sentences, dim = 100, window = 5, min_count = 5, negative_samples = 5, epochs = 5, seed = 1))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        sentences: Vec<Vec<String>>,
        dim: usize,
        window: usize,
        min_count: u64,
        negative_samples: usize,
        epochs: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = EmbeddingConfig {
            dim,
            window,
            min_count,
            negative_samples,
            epochs,
            seed,
            ..Default::default()
        };
        let inner = py
            .detach(|| embeddings::train_skipgram(&sentences, &cfg))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads the word2vec binary (`.bin`) or text format.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = if path.extension().is_some_and(|e| e == "bin") {
            EmbeddingModel::load_binary(&path)
        } else {
            EmbeddingModel::load_text(&path)
        };
        Ok(Self {
            inner: inner.map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        if path.extension().is_some_and(|e| e == "bin") {
            self.inner.save_binary(&path)
        } else {
            self.inner.save_text(&path)
        }
        .map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, word: &str) -> bool {
        self.inner.vector(word).is_some()
    }

    fn words(&self) -> Vec<String> {
        self.inner.vocabulary().words().to_vec()
    }

    fn vector(&self, word: &str) -> Option<Vec<f64>> {
        self.inner.vector_f64(word)
    }

    /// Cosine similarity of two in-vocabulary words.
    fn similarity(&self, a: &str, b: &str) -> Option<f64> {
        Some(embeddings::cosine_similarity(
            &self.inner.vector_f64(a)?,
            &self.inner.vector_f64(b)?,
        ))
    }

    /// Mean vector of the known tokens; `None` when none are known.
    fn centroid(&self, tokens: Vec<String>) -> Option<Vec<f64>> {
        let c = self.inner.centroid(&tokens);
        (!c.degenerate).then_some(c.vector)
    }
}

/// L2-regularized logistic regression over min-max scaled features.
#[pyclass(name = "LogisticRegression", module = "cqa_rank_py")]
struct PyLogReg {
    inner: LogRegModel,
}

#[pymethods]
impl PyLogReg {
    /// Fits on raw rows; the scaler is learned from `x`.
    #[staticmethod]
    #[pyo3(signature = (x, y, c = 1.0, tolerance = 1e-8, max_iterations = 200))]
    fn fit(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<bool>, c: f64, tolerance: f64, max_iterations: usize) -> PyResult<Self> {
        let opts = TrainOptions {
            tolerance,
            max_iterations,
            ..Default::default()
        };
        let inner = py
            .detach(|| model::fit_scaled(&x, &y, c, &opts, ""))
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: LogRegModel::load(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.inner.bias
    }

    #[getter]
    fn cost_c(&self) -> f64 {
        self.inner.cost_c
    }

    /// Probability of the Good class for each raw row.
    fn predict_proba(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let d = self.inner.dim();
        if let Some(r) = x.iter().find(|r| r.len() != d) {
            return Err(PyValueError::new_err(format!("row has {} values, model expects {d}", r.len())));
        }
        Ok(x.iter().map(|r| self.inner.predict_raw(r)).collect())
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<bool>> {
        Ok(self.predict_proba(x)?.into_iter().map(model::predict_good).collect())
    }
}

/// Selects the cost by k-fold accuracy; returns `(best_c, {c: accuracy})`.
#[pyfunction]
#[pyo3(signature = (x, y, costs = None, folds = 5, seed = 1))]
fn cross_validate(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
    costs: Option<Vec<f64>>,
    folds: usize,
    seed: u64,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let mut opts = TrainOptions {
        folds,
        seed,
        ..Default::default()
    };
    if let Some(c) = costs {
        opts.cost_grid = c;
    }
    let cv = py.detach(|| model::cross_validate_c(&x, &y, &opts)).map_err(py_err)?;
    Ok((cv.best_c, cv.table.iter().map(|r| (r.c, r.accuracy)).collect()))
}

/// File-based pipeline driven by a JSON config.
#[pyclass(name = "Pipeline", module = "cqa_rank_py")]
struct PyPipeline {
    inner: pipeline::Pipeline,
}

fn report_dict(r: &ranking::EvalReport) -> BTreeMap<String, f64> {
    BTreeMap::from([("map".to_string(), r.map), ("acc".to_string(), r.acc)])
}

#[pymethods]
impl PyPipeline {
    /// `overrides` maps dotted keys to JSON values, e.g.
    /// `{"embedding.dim": "50"}`.
    #[new]
    #[pyo3(signature = (config, overrides = None))]
    fn new(config: PathBuf, overrides: Option<BTreeMap<String, String>>) -> PyResult<Self> {
        let ov: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
        let cfg = PipelineConfig::load(&config, &ov).map_err(py_err)?;
        Ok(Self {
            inner: pipeline::Pipeline::new(cfg),
        })
    }

    fn preprocess(&self, py: Python<'_>) -> PyResult<String> {
        let p = py.detach(|| self.inner.preprocess()).map_err(py_err)?;
        Ok(p.path.to_string_lossy().into_owned())
    }

    #[pyo3(signature = (force = false))]
    fn train_embeddings(&self, py: Python<'_>, force: bool) -> PyResult<Vec<String>> {
        let out = py.detach(|| self.inner.train_embeddings(force)).map_err(py_err)?;
        Ok(out.iter().map(|p| p.path.to_string_lossy().into_owned()).collect())
    }

    #[pyo3(signature = (force = false))]
    fn cluster(&self, py: Python<'_>, force: bool) -> PyResult<Vec<String>> {
        let out = py.detach(|| self.inner.cluster(force)).map_err(py_err)?;
        Ok(out.iter().map(|p| p.path.to_string_lossy().into_owned()).collect())
    }

    #[pyo3(signature = (force = false))]
    fn train_lda(&self, py: Python<'_>, force: bool) -> PyResult<String> {
        let p = py.detach(|| self.inner.train_lda(force)).map_err(py_err)?;
        Ok(p.path.to_string_lossy().into_owned())
    }

    /// Returns `(feature_names, train_rows, test_rows)`.
    fn extract(&self, py: Python<'_>) -> PyResult<(Vec<String>, usize, usize)> {
        let (schema, a, b) = py.detach(|| self.inner.extract()).map_err(py_err)?;
        Ok((schema.names().map(str::to_string).collect(), a, b))
    }

    /// Returns the chosen cost.
    fn train(&self, py: Python<'_>) -> PyResult<f64> {
        let (m, _) = py.detach(|| self.inner.train()).map_err(py_err)?;
        Ok(m.cost_c)
    }

    fn predict(&self, py: Python<'_>) -> PyResult<String> {
        let p = py.detach(|| self.inner.predict()).map_err(py_err)?;
        Ok(p.to_string_lossy().into_owned())
    }

    fn evaluate(&self, py: Python<'_>) -> PyResult<BTreeMap<String, f64>> {
        let r = py.detach(|| self.inner.evaluate()).map_err(py_err)?;
        Ok(report_dict(&r))
    }

    /// Returns the formatted ablation table.
    fn ablate(&self, py: Python<'_>) -> PyResult<String> {
        let (_, table) = py.detach(|| self.inner.ablate()).map_err(py_err)?;
        Ok(table)
    }

    fn run_all(&self, py: Python<'_>) -> PyResult<BTreeMap<String, f64>> {
        let r = py.detach(|| self.inner.run_all()).map_err(py_err)?;
        Ok(report_dict(&r))
    }
}

#[pymodule]
fn cqa_rank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_class::<PyEmbeddings>()?;
    m.add_class::<PyLogReg>()?;
    m.add_class::<PyPipeline>()?;
    Ok(())
}
