//! Python bindings: synthetic experiments, training, decoding, uncertainty
//! scoring and the evaluation metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use seqpl::cli::{DataConfig, Experiment as CoreExperiment, RunConfig};
use seqpl::decode::beam_search;
use seqpl::metrics::{self, prr_of_scores, RejectionOrder};
use seqpl::numkit::Matrix;
use seqpl::pseudolabel::{
    evaluate_model, no_hook, score_sample, self_train_from, train_baseline, Baseline, RoundRecord, ScoringConfig,
    SelfTrainConfig,
};
use seqpl::recognizer::{checkpoint, FeatureSequence, LabeledSample, Model as CoreModel, ModelParams, Vocabulary};
use seqpl::uncertainty::EnsembleSpec;

fn err(e: seqpl::Error) -> PyErr {
    let msg = format!("{}: {e}", e.category());
    match e.category() {
        "io" | "locked" => PyIOError::new_err(msg),
        "autodiff" => PyRuntimeError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

type Frames = Vec<Vec<f64>>;

fn features(frames: Frames) -> PyResult<FeatureSequence> {
    let cols = frames.first().map_or(0, Vec::len);
    if frames.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(
            "frames must all have the same number of channels",
        ));
    }
    let rows = frames.len();
    let m = Matrix::from_vec(rows, cols, frames.into_iter().flatten().collect()).map_err(err)?;
    FeatureSequence::new(m).map_err(err)
}

fn frames_of(f: &FeatureSequence) -> Frames {
    let m = f.frames();
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn record_dict<'py>(py: Python<'py>, r: &RoundRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("round", r.round)?;
    d.set_item("selected", r.selected)?;
    d.set_item("train_size", r.train_size)?;
    d.set_item("val_accuracy", r.val_accuracy)?;
    d.set_item("val_cer", r.val_cer)?;
    Ok(d)
}

/// Trained recognizer parameters.
#[pyclass(frozen, module = "seqpl")]
struct Model {
    params: ModelParams,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: checkpoint::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.params, &path).map_err(err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self {
            params: checkpoint::from_bytes(data).map_err(err)?,
        })
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        checkpoint::to_bytes(&self.params).map_err(err)
    }

    #[getter]
    fn symbols(&self) -> String {
        self.params.vocab.symbols()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.params.dims.input
    }

    #[getter]
    fn hidden(&self) -> usize {
        self.params.dims.hidden
    }

    #[getter]
    fn max_len(&self) -> usize {
        self.params.dims.max_len
    }

    /// Ranked `(text, log_prob, truncated)` hypotheses.
    #[pyo3(signature = (frames, beam_width = 5, max_len = None))]
    fn beam_search(
        &self,
        frames: Frames,
        beam_width: usize,
        max_len: Option<usize>,
    ) -> PyResult<Vec<(String, f64, bool)>> {
        let v = features(frames)?;
        let s_max = max_len.unwrap_or(self.params.dims.max_len);
        let hyps = beam_search(&self.params, &v, beam_width, s_max).map_err(err)?;
        Ok(hyps
            .hypotheses()
            .iter()
            .map(|h| (self.params.vocab.decode(&h.tokens), h.log_prob, h.truncated))
            .collect())
    }

    /// Prediction, confidence and total uncertainty under a dropout ensemble.
    #[pyo3(signature = (frames, beam_width = 5, ensembles = 5, dropout = 0.1, temperature = 0.01, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn score<'py>(
        &self,
        py: Python<'py>,
        frames: Frames,
        beam_width: usize,
        ensembles: usize,
        dropout: f64,
        temperature: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let v = features(frames)?;
        let ens = if dropout == 0.0 {
            EnsembleSpec::deterministic(self.params.dims.hidden)
        } else {
            EnsembleSpec::sample(dropout, ensembles, self.params.dims.hidden, seed, 0).map_err(err)?
        };
        let scoring = ScoringConfig {
            beam_width,
            temperature,
            s_max: self.params.dims.max_len,
        };
        let s = score_sample(&CoreModel::new(&self.params), 0, &v, &scoring, &ens).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("prediction", self.params.vocab.decode(&s.prediction.tokens))?;
        d.set_item("log_prob", s.prediction.log_prob)?;
        d.set_item("confidence", s.confidence)?;
        d.set_item("ensemble_confidence", s.ensemble_confidence)?;
        d.set_item("uncertainty", s.uncertainty.total)?;
        Ok(d)
    }

    /// Word accuracy, WER and CER on `(frames, text)` pairs.
    #[pyo3(signature = (samples, beam_width = 5))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        samples: Vec<(Frames, String)>,
        beam_width: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let labeled = samples
            .into_iter()
            .enumerate()
            .map(|(i, (f, text))| {
                Ok(LabeledSample {
                    id: i as u64,
                    features: features(f)?,
                    label: self.params.vocab.encode_label(&text).map_err(err)?,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let r = evaluate_model(&self.params, &labeled, beam_width).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("word_accuracy", r.word_accuracy)?;
        d.set_item("wer", r.wer)?;
        d.set_item("cer", r.cer)?;
        d.set_item("count", r.count)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let d = &self.params.dims;
        format!(
            "Model(symbols={:?}, channels={}, hidden={}, max_len={})",
            self.symbols(),
            d.input,
            d.hidden,
            d.max_len
        )
    }
}

/// A seeded synthetic experiment: labeled and unlabeled pools plus
/// validation and test sets.
#[pyclass(frozen, module = "seqpl")]
struct Experiment {
    config: RunConfig,
    exp: CoreExperiment,
    vocab: Vocabulary,
}

impl Experiment {
    fn labeled_list(&self, samples: &[LabeledSample]) -> Vec<(Frames, String)> {
        samples
            .iter()
            .map(|s| (frames_of(&s.features), self.vocab.decode(&s.label)))
            .collect()
    }

    fn self_train_config(
        &self,
        tau: Option<f64>,
        rounds: Option<usize>,
        iterations: Option<usize>,
    ) -> PyResult<SelfTrainConfig> {
        let mut c = self.config.self_train.clone();
        if let Some(t) = tau {
            c.tau = t;
        }
        if let Some(r) = rounds {
            c.rounds = r;
        }
        if let Some(i) = iterations {
            c.train.iterations = i;
        }
        c.validate().map_err(err)?;
        Ok(c)
    }
}

#[pymethods]
impl Experiment {
    #[new]
    #[pyo3(signature = (seed = 0, label_fraction = 0.1, pool = 1000, val = 200, test = 500))]
    fn new(seed: u64, label_fraction: f64, pool: usize, val: usize, test: usize) -> PyResult<Self> {
        let config = RunConfig {
            seed,
            data: DataConfig {
                pool,
                val,
                test,
                label_fraction,
            },
            ..RunConfig::default()
        }
        .resolve()
        .map_err(err)?;
        let exp = config.experiment().map_err(err)?;
        let vocab = config.synth.vocabulary().map_err(err)?;
        Ok(Self { config, exp, vocab })
    }

    #[getter]
    fn symbols(&self) -> String {
        self.vocab.symbols()
    }

    #[getter]
    fn labeled(&self) -> Vec<(Frames, String)> {
        self.labeled_list(&self.exp.split.labeled)
    }

    #[getter]
    fn unlabeled(&self) -> Vec<Frames> {
        self.exp
            .split
            .unlabeled
            .iter()
            .map(|s| frames_of(&s.features))
            .collect()
    }

    #[getter]
    fn val(&self) -> Vec<(Frames, String)> {
        self.labeled_list(&self.exp.val)
    }

    #[getter]
    fn test(&self) -> Vec<(Frames, String)> {
        self.labeled_list(&self.exp.test)
    }

    /// Run configuration as TOML.
    fn config_toml(&self) -> PyResult<String> {
        self.config.to_toml().map_err(err)
    }

    /// Supervised model on the labeled pool. Returns `(model, record)`.
    #[pyo3(signature = (iterations = None))]
    fn train_baseline<'py>(&self, py: Python<'py>, iterations: Option<usize>) -> PyResult<(Model, Bound<'py, PyDict>)> {
        let c = self.self_train_config(None, None, iterations)?;
        let b = py
            .detach(|| train_baseline(&self.exp.split.labeled, &self.exp.val, &self.vocab, &c, &mut no_hook))
            .map_err(err)?;
        let rec = record_dict(py, &b.record)?;
        Ok((Model { params: b.params }, rec))
    }

    /// Baseline followed by pseudo-labeling rounds. Returns
    /// `(best_model, best_round, history)`.
    #[pyo3(signature = (tau = None, rounds = None, iterations = None))]
    fn self_train<'py>(
        &self,
        py: Python<'py>,
        tau: Option<f64>,
        rounds: Option<usize>,
        iterations: Option<usize>,
    ) -> PyResult<(Model, usize, Vec<Bound<'py, PyDict>>)> {
        let c = self.self_train_config(tau, rounds, iterations)?;
        let (d_l, d_u, val) = (&self.exp.split.labeled, &self.exp.split.unlabeled, &self.exp.val);
        let out = py
            .detach(|| {
                let b: Baseline = train_baseline(d_l, val, &self.vocab, &c, &mut no_hook)?;
                self_train_from(b, d_l, d_u, val, &c, &mut no_hook)
            })
            .map_err(err)?;
        let history = out
            .history
            .iter()
            .map(|r| record_dict(py, r))
            .collect::<PyResult<_>>()?;
        Ok((Model { params: out.best }, out.best_round, history))
    }
}

/// Prediction rejection ratio; `None` when there are no errors or only errors.
#[pyfunction]
fn prr(uncertainties: Vec<f64>, wrong: Vec<bool>) -> PyResult<Option<f64>> {
    Ok(
        prr_of_scores(&uncertainties, &wrong, RejectionOrder::UncertaintyDescending)
            .map_err(err)?
            .value(),
    )
}

#[pyfunction]
#[pyo3(signature = (confidences, correct, bins = 10))]
fn ece(confidences: Vec<f64>, correct: Vec<bool>, bins: usize) -> PyResult<f64> {
    Ok(metrics::ece(&confidences, &correct, bins).map_err(err)?.ece)
}

/// Character error rate over strings.
#[pyfunction]
fn cer(predictions: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    let chars = |v: Vec<String>| v.into_iter().map(|s| s.chars().collect::<Vec<_>>()).collect::<Vec<_>>();
    metrics::cer(&chars(predictions), &chars(references)).map_err(err)
}

#[pymodule]
#[pyo3(name = "seqpl")]
fn seqpl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Model>()?;
    m.add_class::<Experiment>()?;
    m.add_function(wrap_pyfunction!(prr, m)?)?;
    m.add_function(wrap_pyfunction!(ece, m)?)?;
    m.add_function(wrap_pyfunction!(cer, m)?)?;
    Ok(())
}
