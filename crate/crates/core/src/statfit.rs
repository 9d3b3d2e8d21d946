//! Logistic regression of per-transcript correctness on probability,
//! frequency and shift predictors, fitted by Newton-Raphson with Wald tests.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::analysis::Judged;
use crate::cipher::ShiftLevel;
use crate::dataset::{score_word, CipherExample, FrequencyTable, Scorer, ScorerError};

pub const PREDICTORS: [&str; 5] = ["input_logprob", "output_logprob", "shift_freq", "shift_level", "min_steps"];
pub const INTERCEPT: &str = "intercept";

/// Linear predictors beyond this magnitude mean the fit is running off to infinity.
const SEPARATION_ETA: f64 = 30.0;
const MAX_HALVINGS: u32 = 60;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("no predictor value for {0:?} and no scorer to compute it")]
    MissingPredictor(String),
    #[error("example {0:?} has no matching dataset entry")]
    UnknownExample(String),
    #[error("scoring failed: {0}")]
    Scorer(#[from] ScorerError),
    #[error("outcomes are separable ({0}); refit with a ridge penalty, e.g. ridge = 1e-3")]
    SeparationError(String),
    #[error("information matrix is singular: {0}")]
    SingularDesign(String),
    #[error("no rows to fit")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub example_id: String,
    pub bin: u8,
    pub correct: u8,
    pub input_logprob: f64,
    pub output_logprob: f64,
    pub shift_freq: f64,
    pub shift_level: f64,
    pub min_steps: f64,
}

impl RegressionRow {
    /// Predictor values in [`PREDICTORS`] order.
    pub fn features(&self) -> [f64; 5] {
        [self.input_logprob, self.output_logprob, self.shift_freq, self.shift_level, self.min_steps]
    }
}

/// Log probabilities keyed by text; missing entries are scored on demand
/// when a scorer is available.
pub struct ScoreSource<'a> {
    pub cache: HashMap<String, f64>,
    pub scorer: Option<&'a dyn Scorer>,
}

impl ScoreSource<'_> {
    fn get(&mut self, text: &str) -> Result<f64, FitError> {
        if let Some(&v) = self.cache.get(text) {
            return Ok(v);
        }
        let scorer = self.scorer.ok_or_else(|| FitError::MissingPredictor(text.to_string()))?;
        let v = score_word(scorer, text)?;
        self.cache.insert(text.to_string(), v);
        Ok(v)
    }
}

/// One row per judged transcript; `correct` is final-answer correctness.
pub fn build_design(
    judged: &[Judged],
    examples: &[CipherExample],
    scores: &mut ScoreSource<'_>,
    freq: &FrequencyTable,
) -> Result<Vec<RegressionRow>, FitError> {
    let by_id: HashMap<&str, &CipherExample> = examples.iter().map(|e| (e.id.as_str(), e)).collect();
    judged
        .iter()
        .map(|j| {
            let ex = by_id.get(j.example_id.as_str()).ok_or_else(|| FitError::UnknownExample(j.example_id.clone()))?;
            let k: ShiftLevel = ex.shift;
            Ok(RegressionRow {
                example_id: ex.id.clone(),
                bin: ex.bin,
                correct: j.quadrant.final_correct as u8,
                input_logprob: scores.get(&ex.encoded)?,
                output_logprob: scores.get(&ex.plaintext)?,
                shift_freq: freq.normalized(k.get()),
                shift_level: k.get() as f64,
                min_steps: k.min_steps() as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stops when the largest gradient entry or half the Newton decrement drops below this.
    pub tol: f64,
    pub ridge: f64,
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            ridge: 0.0,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Intercept first, on the original predictor scale.
    pub coefficients: Vec<Coefficient>,
    pub loglik: f64,
    pub loglik_history: Vec<f64>,
    pub n: usize,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_max: f64,
    pub ridge: f64,
    /// Standard errors come from a penalized fit.
    pub approximate_se: bool,
    pub standardized: bool,
}

impl FitResult {
    pub fn coef(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.coef).collect()
    }

    /// `{predictors: {name: {coef, se, z, p}}, loglik, n, iterations, converged}`.
    pub fn report(&self) -> serde_json::Value {
        let predictors: serde_json::Map<String, serde_json::Value> = self
            .coefficients
            .iter()
            .map(|c| (c.name.clone(), serde_json::json!({"coef": c.coef, "se": c.se, "z": c.z, "p": c.p})))
            .collect();
        serde_json::json!({
            "predictors": predictors,
            "loglik": self.loglik,
            "n": self.n,
            "iterations": self.iterations,
            "converged": self.converged,
            "ridge": self.ridge,
            "approximate_se": self.approximate_se,
            "standardized": self.standardized,
        })
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn penalized_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, ridge: f64) -> f64 {
    let eta = x * beta;
    let ll: f64 = eta.iter().zip(y.iter()).map(|(&e, &yi)| yi * e - softplus(e)).sum();
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll - 0.5 * ridge * penalty
}

fn information(x: &DMatrix<f64>, beta: &DVector<f64>, ridge: f64) -> DMatrix<f64> {
    let eta = x * beta;
    let w = DVector::from_iterator(eta.len(), eta.iter().map(|&e| {
        let m = sigmoid(e);
        m * (1.0 - m)
    }));
    let mut xw = x.clone();
    for (mut row, wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= *wi;
    }
    let mut h = x.transpose() * xw;
    for j in 1..h.nrows() {
        h[(j, j)] += ridge;
    }
    h
}

fn gradient(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, ridge: f64) -> DVector<f64> {
    let eta = x * beta;
    let resid = DVector::from_iterator(eta.len(), eta.iter().zip(y.iter()).map(|(&e, &yi)| yi - sigmoid(e)));
    let mut g = x.transpose() * resid;
    for j in 1..g.len() {
        g[j] -= ridge * beta[j];
    }
    g
}

fn factor(h: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, FitError> {
    let chol = h
        .cholesky()
        .ok_or_else(|| FitError::SingularDesign("information matrix is not positive definite".into()))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = (diag.min(), diag.max());
    if !(lo > hi * 1e-7) {
        return Err(FitError::SingularDesign("predictors are collinear".into()));
    }
    Ok(chol)
}

/// Fits `y ~ 1 + x` where `x` holds one column per named predictor.
pub fn fit_logistic_matrix(x: &DMatrix<f64>, y: &[f64], names: &[&str], opts: FitOptions) -> Result<FitResult, FitError> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(FitError::Empty);
    }
    assert_eq!(names.len(), p, "one name per predictor column");
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if opts.ridge == 0.0 && (positives == 0 || positives == n) {
        return Err(FitError::SeparationError(format!("all {n} outcomes are {}", if positives == 0 { 0 } else { 1 })));
    }

    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    if opts.standardize {
        for j in 0..p {
            let col = x.column(j);
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(FitError::SingularDesign(format!("predictor {} is constant", names[j])));
            }
            means[j] = m;
            scales[j] = var.sqrt();
        }
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { (x[(i, j - 1)] - means[j - 1]) / scales[j - 1] });
    let yv = DVector::from_column_slice(y);

    let mut beta = DVector::zeros(p + 1);
    let mut ll = penalized_loglik(&design, &yv, &beta, opts.ridge);
    let mut history = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut grad = gradient(&design, &yv, &beta, opts.ridge);
    while iterations < opts.max_iter {
        if grad.amax() < opts.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let h = information(&design, &beta, opts.ridge);
        let chol = factor(h)?;
        let step = chol.solve(&grad);
        // Newton decrement: the predicted gain of a full step
        let decrement = grad.dot(&step) / 2.0;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &beta + &step * t;
            let cand_ll = penalized_loglik(&design, &yv, &cand, opts.ridge);
            if cand_ll >= ll {
                beta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        history.push(ll);
        grad = gradient(&design, &yv, &beta, opts.ridge);
        if !accepted {
            converged = grad.amax() < opts.tol;
            break;
        }
        if decrement < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged && grad.amax() < opts.tol {
        converged = true;
    }

    if opts.ridge == 0.0 {
        let eta_max = (&design * &beta).amax();
        if eta_max > SEPARATION_ETA {
            return Err(FitError::SeparationError(format!("linear predictor reached {eta_max:.1}")));
        }
    }

    let h = information(&design, &beta, opts.ridge);
    let cov_std = factor(h)?.inverse();

    // beta_orig = A * beta_std
    let mut a = DMatrix::identity(p + 1, p + 1);
    for j in 1..=p {
        a[(j, j)] = 1.0 / scales[j - 1];
        a[(0, j)] = -means[j - 1] / scales[j - 1];
    }
    let beta_orig = &a * &beta;
    let cov = &a * cov_std * a.transpose();

    let coefficients = std::iter::once(INTERCEPT)
        .chain(names.iter().copied())
        .enumerate()
        .map(|(j, name)| {
            let coef = beta_orig[j];
            let se = cov[(j, j)].max(0.0).sqrt();
            let z = coef / se;
            let pval = if z.is_finite() { erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0) } else { 1.0 };
            Coefficient {
                name: name.to_string(),
                coef,
                se,
                z,
                p: pval,
            }
        })
        .collect();

    Ok(FitResult {
        coefficients,
        loglik: ll,
        loglik_history: history,
        n,
        iterations,
        converged,
        gradient_max: grad.amax(),
        ridge: opts.ridge,
        approximate_se: opts.ridge > 0.0,
        standardized: opts.standardize,
    })
}

pub fn fit_logistic(rows: &[RegressionRow], opts: FitOptions) -> Result<FitResult, FitError> {
    if rows.is_empty() {
        return Err(FitError::Empty);
    }
    let x = DMatrix::from_fn(rows.len(), PREDICTORS.len(), |i, j| rows[i].features()[j]);
    let y: Vec<f64> = rows.iter().map(|r| r.correct as f64).collect();
    fit_logistic_matrix(&x, &y, &PREDICTORS, opts)
}

/// `σ(β₀ + Σ βⱼ xⱼ)` for a feature vector without the intercept.
pub fn predict_features(fit: &FitResult, features: &[f64]) -> f64 {
    let beta = fit.beta();
    let eta = beta[0] + beta[1..].iter().zip(features).map(|(b, x)| b * x).sum::<f64>();
    sigmoid(eta)
}

pub fn predict(fit: &FitResult, row: &RegressionRow) -> f64 {
    predict_features(fit, &row.features())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    pub n: usize,
    pub log_loss: f64,
    pub accuracy: f64,
}

pub fn heldout_eval(fit: &FitResult, rows: &[RegressionRow]) -> HeldoutMetrics {
    heldout_from_probs(rows.iter().map(|r| (predict(fit, r), r.correct)))
}

fn heldout_from_probs(items: impl Iterator<Item = (f64, u8)>) -> HeldoutMetrics {
    let (mut n, mut loss, mut hits) = (0usize, 0.0, 0usize);
    for (p, y) in items {
        let p = p.clamp(1e-15, 1.0 - 1e-15);
        loss -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
        hits += ((p >= 0.5) == (y == 1)) as usize;
        n += 1;
    }
    HeldoutMetrics {
        n,
        log_loss: if n > 0 { loss / n as f64 } else { f64::NAN },
        accuracy: if n > 0 { hits as f64 / n as f64 } else { f64::NAN },
    }
}

/// Mean predicted accuracy per (shift, bin).
pub fn prediction_curve(fit: &FitResult, rows: &[RegressionRow]) -> BTreeMap<(u8, u8), f64> {
    let mut acc: BTreeMap<(u8, u8), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.shift_level as u8, r.bin)).or_default();
        e.0 += predict(fit, r);
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

pub fn write_prediction_csv<W: Write>(out: W, curve: &BTreeMap<(u8, u8), f64>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["shift", "bin", "predicted_acc"])?;
    for ((shift, bin), v) in curve {
        w.write_record([shift.to_string(), bin.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
