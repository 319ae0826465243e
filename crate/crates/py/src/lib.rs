//! Python bindings for the ecpipe toolkit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ecpipe::config::PipelineConfig;
use ecpipe::corpus::{self, Label};
use ecpipe::dsp::{self, Signal};
use ecpipe::eval::{self, BaselinePolicy, Metrics};
use ecpipe::fusion::{self, CertaintyState, DlfConfig};
use ecpipe::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingAudio(_) | Error::MissingArtifact(_) | Error::MissingInput(_) => {
            PyIOError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn labels(v: &[String]) -> PyResult<Vec<Label>> {
    v.iter().map(|s| s.parse::<Label>().map_err(to_py)).collect()
}

fn signal(samples: Vec<f64>, sample_rate: u32) -> PyResult<Signal> {
    Signal::new(samples, sample_rate).map_err(to_py)
}

fn metrics_dict(m: &Metrics) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("precision", m.precision_i),
        ("recall", m.recall_i),
        ("f1", m.f1_i),
        ("tp", m.tp as f64),
        ("fp", m.fp as f64),
        ("fn", m.fn_ as f64),
    ])
}

fn policy(name: &str) -> PyResult<BaselinePolicy> {
    match name {
        "equal" | "equal_priors" => Ok(BaselinePolicy::EqualPriors),
        "class" | "class_priors" => Ok(BaselinePolicy::ClassPriors),
        _ => Err(PyValueError::new_err(format!("unknown baseline policy {name:?}"))),
    }
}

/// Pipeline configuration, round-tripped through its JSON form.
#[pyclass(name = "PipelineConfig")]
#[derive(Clone)]
struct PyConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (desk = false))]
    fn new(desk: bool) -> Self {
        let inner = if desk { PipelineConfig::desk() } else { PipelineConfig::default() };
        Self { inner }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PipelineConfig::from_json(text, "<python>").map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }
}

/// A loaded or generated corpus.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: corpus::Corpus = serde_json::from_str(text).map_err(|e| to_py(e.into()))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn ingest(alignment: PathBuf, annotations: PathBuf, audio_dir: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: corpus::ingest_files(&alignment, &annotations, &audio_dir).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("corpus serializes")
    }

    #[getter]
    fn n_narratives(&self) -> usize {
        self.inner.stats.n_narratives
    }

    #[getter]
    fn n_tokens(&self) -> usize {
        self.inner.stats.n_tokens
    }

    #[getter]
    fn ec_fraction(&self) -> f64 {
        self.inner.stats.ec_token_fraction
    }

    fn speakers(&self) -> Vec<String> {
        self.inner.speakers()
    }

    fn vocabulary(&self) -> Vec<String> {
        self.inner.vocabulary()
    }

    /// (narrative_id, word, label) for every token.
    fn tokens(&self) -> Vec<(String, String, String)> {
        self.inner
            .narratives
            .iter()
            .flat_map(|n| {
                n.tokens
                    .iter()
                    .map(move |t| (n.narrative_id.clone(), t.word.clone(), t.label.to_string()))
            })
            .collect()
    }

    /// Speaker to fold index.
    fn split_folds(&self, k: usize, seed: u64) -> PyResult<BTreeMap<String, usize>> {
        Ok(corpus::split_folds(&self.inner, k, seed).map_err(to_py)?.assignments)
    }
}

/// Generates a synthetic corpus under `root` using the config's synth section.
#[pyfunction]
fn synth_generate(config: &PyConfig, root: PathBuf) -> PyResult<PyCorpus> {
    let sc = corpus::synth_generate(&config.inner.synth, config.inner.seed, &root).map_err(to_py)?;
    Ok(PyCorpus { inner: sc.corpus })
}

/// MFCC tensor of a mono segment as (shape, flat row-major values).
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000))]
fn mfcc(samples: Vec<f64>, sample_rate: u32) -> PyResult<(Vec<usize>, Vec<f64>)> {
    let t = dsp::extract_mfcc_tensor(&signal(samples, sample_rate)?).map_err(to_py)?;
    Ok((t.shape().to_vec(), t.data))
}

/// Per-frame f0 in Hz (0 for unvoiced frames).
#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000))]
fn extract_f0(samples: Vec<f64>, sample_rate: u32) -> PyResult<Vec<f64>> {
    Ok(dsp::extract_f0(&signal(samples, sample_rate)?).f0)
}

#[pyfunction]
#[pyo3(signature = (samples, sample_rate = 16000))]
fn prosodic_features(samples: Vec<f64>, sample_rate: u32) -> PyResult<BTreeMap<&'static str, Option<f64>>> {
    let s = signal(samples, sample_rate)?;
    let f = dsp::prosodic_features(&s, &dsp::extract_f0(&s)).map_err(to_py)?;
    Ok(dsp::ProsodicFeatures::FIELDS.into_iter().zip(f.values()).collect())
}

/// "certain_positive", "uncertain" or "certain_negative".
#[pyfunction]
fn certainty(p_ec: f64, p_db: f64, epsilon: f64) -> String {
    fusion::certainty(p_ec, p_db, epsilon).to_string()
}

/// Decision-level fusion label ("I" or "O") with the default thresholds.
#[pyfunction]
fn dlf_decide(p_lex: f64, p_ac: f64) -> String {
    DlfConfig::default().decide(p_lex, p_ac).label.to_string()
}

#[pyfunction]
fn dlf_merge(lexical: &str, acoustic: &str) -> PyResult<String> {
    let state = |s: &str| match s {
        "certain_positive" => Ok(CertaintyState::CertainPositive),
        "uncertain" => Ok(CertaintyState::Uncertain),
        "certain_negative" => Ok(CertaintyState::CertainNegative),
        _ => Err(PyValueError::new_err(format!("unknown certainty state {s:?}"))),
    };
    Ok(fusion::dlf_merge(state(lexical)?, state(acoustic)?).to_string())
}

#[pyfunction]
fn oracle_stream(gold: Vec<String>, pred_a: Vec<String>, pred_t: Vec<String>) -> PyResult<Vec<String>> {
    let out = fusion::oracle_stream(&labels(&gold)?, &labels(&pred_a)?, &labels(&pred_t)?).map_err(to_py)?;
    Ok(out.into_iter().map(|l| l.to_string()).collect())
}

/// Class-I precision and recall (percent), F1 (fraction) and counts.
#[pyfunction]
fn prf1(gold: Vec<String>, pred: Vec<String>) -> PyResult<BTreeMap<&'static str, f64>> {
    let m = eval::prf1_class_i(&labels(&gold)?, &labels(&pred)?).map_err(to_py)?;
    Ok(metrics_dict(&m))
}

#[pyfunction]
fn baseline_expected(prior_i: f64, policy_name: &str) -> PyResult<BTreeMap<&'static str, f64>> {
    Ok(metrics_dict(&eval::baseline_expected(prior_i, policy(policy_name)?)))
}

#[pyfunction]
fn simulate_baseline(prior_i: f64, policy_name: &str, n_tokens: usize, seed: u64) -> PyResult<BTreeMap<&'static str, f64>> {
    Ok(metrics_dict(&eval::simulate_baseline(prior_i, policy(policy_name)?, n_tokens, seed)))
}

/// Student's two-sample t-test; returns (t, p).
#[pyfunction]
fn ttest_ind(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64)> {
    let r = eval::ttest_ind(&a, &b).map_err(to_py)?;
    Ok((r.t, r.p))
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ecpipe::cli::main_with_args(std::iter::once("ecpipe".to_string()).chain(args))
}

#[pymodule]
pub fn ecpipe_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(extract_f0, m)?)?;
    m.add_function(wrap_pyfunction!(prosodic_features, m)?)?;
    m.add_function(wrap_pyfunction!(certainty, m)?)?;
    m.add_function(wrap_pyfunction!(dlf_decide, m)?)?;
    m.add_function(wrap_pyfunction!(dlf_merge, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_stream, m)?)?;
    m.add_function(wrap_pyfunction!(prf1, m)?)?;
    m.add_function(wrap_pyfunction!(baseline_expected, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(ttest_ind, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
