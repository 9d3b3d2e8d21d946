//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists built from their JSON form.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use cotprobe::analysis;
use cotprobe::cipher::{self, ShiftLevel};
use cotprobe::config::Config as CoreConfig;
use cotprobe::data;
use cotprobe::dataset::{CipherExample, FrequencyTable};
use cotprobe::pipeline;
use cotprobe::prompt::{self, PromptStyle};
use cotprobe::sim::{self, SimParams};
use cotprobe::statfit::{self, FitOptions};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn shift(k: u8) -> PyResult<ShiftLevel> {
    ShiftLevel::new(k).map_err(value_err)
}

fn style(name: &str, demo_shift: u8, corruption_seed: Option<u64>) -> PyResult<PromptStyle> {
    PromptStyle::parse(name, Some(shift(demo_shift)?), corruption_seed).map_err(value_err)
}

#[pyfunction]
fn encode(text: &str, k: u8) -> PyResult<String> {
    cipher::encode(text, shift(k)?).map_err(value_err)
}

#[pyfunction]
fn decode(text: &str, k: u8) -> PyResult<String> {
    cipher::decode(text, shift(k)?).map_err(value_err)
}

/// Prompt text for `style` at shift `k`; `test_input` is inserted verbatim.
#[pyfunction]
#[pyo3(signature = (style_name, k, test_input, demo_shift = 14, corruption_seed = None))]
fn render_prompt(style_name: &str, k: u8, test_input: &str, demo_shift: u8, corruption_seed: Option<u64>) -> PyResult<String> {
    let s = style(style_name, demo_shift, corruption_seed.or(Some(prompt::DEFAULT_CORRUPTION_SEED)))?;
    Ok(prompt::render(s, shift(k)?, test_input).map_err(value_err)?.text)
}

#[pyfunction]
fn style_names() -> Vec<&'static str> {
    PromptStyle::all_defaults().into_iter().map(|s| s.name()).collect()
}

/// Parses a response into `{example_id, steps, final_answer, parse_warnings}`.
#[pyfunction]
#[pyo3(signature = (raw, style_name = "text-cot", example_id = ""))]
fn parse_transcript(py: Python<'_>, raw: &str, style_name: &str, example_id: &str) -> PyResult<Py<PyAny>> {
    let p = analysis::parse_transcript(example_id, raw, style(style_name, 14, None)?);
    to_py(py, &p)
}

/// `(chain_correct, final_correct)` for a response to `word` enciphered at `k`.
#[pyfunction]
#[pyo3(signature = (raw, word, k, style_name = "text-cot"))]
fn judge(raw: &str, word: &str, k: u8, style_name: &str) -> PyResult<(bool, bool)> {
    let s = style(style_name, 14, None)?;
    let example = CipherExample::new(word, shift(k)?, 1, None).map_err(value_err)?;
    let p = analysis::parse_transcript(&example.id, raw, s);
    let q = analysis::judge(&p, &example, s).quadrant;
    Ok((q.chain_correct, q.final_correct))
}

#[pyfunction]
#[pyo3(signature = (q, word_len, two_way = true))]
fn curve_noisy(q: f64, word_len: u32, two_way: bool) -> Vec<(u8, f64)> {
    let shifts: Vec<ShiftLevel> = ShiftLevel::probe_range().collect();
    sim::curve_noisy(q, word_len, &shifts, two_way)
}

/// Logistic regression of `y` on the columns of `x`; returns the fit report.
#[pyfunction]
#[pyo3(signature = (x, y, names, ridge = 0.0))]
fn fit_logistic(py: Python<'_>, x: Vec<Vec<f64>>, y: Vec<f64>, names: Vec<String>, ridge: f64) -> PyResult<Py<PyAny>> {
    if x.len() != y.len() {
        return Err(value_err(format!("{} rows of x but {} outcomes", x.len(), y.len())));
    }
    let p = names.len();
    if let Some(row) = x.iter().find(|r| r.len() != p) {
        return Err(value_err(format!("row has {} values, expected {p}", row.len())));
    }
    let m = DMatrix::from_fn(x.len(), p, |i, j| x[i][j]);
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let opts = FitOptions { ridge, ..FitOptions::default() };
    let fit = statfit::fit_logistic_matrix(&m, &y, &names, opts).map_err(value_err)?;
    to_py(py, &fit.report())
}

/// The simulated reasoner over the bundled shift-frequency table.
#[pyclass(name = "Reasoner")]
struct PyReasoner {
    inner: sim::Reasoner,
}

#[pymethods]
impl PyReasoner {
    #[new]
    #[pyo3(signature = (lexicon = Vec::new(), seed = 0, q = None, eps_complement = None, memo_ceiling = None, prior_strength = None, sampling_noise = None))]
    fn new(
        lexicon: Vec<(String, f64)>,
        seed: u64,
        q: Option<f64>,
        eps_complement: Option<f64>,
        memo_ceiling: Option<f64>,
        prior_strength: Option<f64>,
        sampling_noise: Option<f64>,
    ) -> PyResult<Self> {
        let d = SimParams::default();
        let params = SimParams {
            q: q.unwrap_or(d.q),
            eps_complement: eps_complement.unwrap_or(d.eps_complement),
            memo_ceiling: memo_ceiling.unwrap_or(d.memo_ceiling),
            prior_strength: prior_strength.unwrap_or(if lexicon.is_empty() { 0.0 } else { d.prior_strength }),
            sampling_noise: sampling_noise.unwrap_or(d.sampling_noise),
            seed,
            ..d
        };
        let freq = FrequencyTable::from_csv_str(data::SHIFT_FREQ_CSV).map_err(runtime_err)?;
        Ok(Self {
            inner: sim::Reasoner::new(params, freq, lexicon).map_err(value_err)?,
        })
    }

    #[pyo3(signature = (word, k, style_name = "text-cot", temperature = 0.0))]
    fn simulate(&self, word: &str, k: u8, style_name: &str, temperature: f64) -> PyResult<String> {
        let example = CipherExample::new(word, shift(k)?, 1, None).map_err(value_err)?;
        self.inner
            .simulate_transcript(&example, style(style_name, 14, None)?, temperature)
            .map_err(value_err)
    }

    fn letter_accuracy(&self, k: u8) -> PyResult<f64> {
        Ok(self.inner.letter_accuracy(shift(k)?))
    }
}

/// A run configuration; every pipeline command takes one.
#[pyclass(name = "Config")]
struct PyConfig {
    inner: CoreConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml_text = ""))]
    fn new(toml_text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::from_toml(toml_text, "<python>").map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreConfig::load(&path).map_err(value_err)?,
        })
    }

    #[getter]
    fn out_dir(&self) -> PathBuf {
        self.inner.out_dir.clone()
    }

    #[setter]
    fn set_out_dir(&mut self, dir: PathBuf) {
        self.inner.out_dir = dir;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    #[getter]
    fn styles(&self) -> Vec<String> {
        self.inner.probe.styles.clone()
    }

    #[setter]
    fn set_styles(&mut self, styles: Vec<String>) -> PyResult<()> {
        let mut next = self.inner.clone();
        next.probe.styles = styles;
        next.validate().map_err(value_err)?;
        self.inner = next;
        Ok(())
    }

    fn build_dataset(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::cmd_build_dataset(&self.inner).map_err(runtime_err)?)
    }

    fn probe(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::cmd_probe(&self.inner).map_err(runtime_err)?)
    }

    fn analyze(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::cmd_analyze(&self.inner).map_err(runtime_err)?)
    }

    fn fit(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &pipeline::cmd_fit(&self.inner).map_err(runtime_err)?)
    }

    fn curves(&self) -> PyResult<Vec<PathBuf>> {
        pipeline::cmd_curves(&self.inner).map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!("Config(out_dir={:?}, seed={}, styles={:?})", self.inner.out_dir, self.inner.seed, self.inner.probe.styles)
    }
}

#[pymodule]
#[pyo3(name = "cotprobe")]
fn cotprobe_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(style_names, m)?)?;
    m.add_function(wrap_pyfunction!(parse_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(judge, m)?)?;
    m.add_function(wrap_pyfunction!(curve_noisy, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_class::<PyReasoner>()?;
    m.add_class::<PyConfig>()?;
    Ok(())
}
