//! Word scoring: the log probability of a word and its closing quote in the
//! context `The word is "`.
//!
//! A [`Scorer`] only has to return the total log probability of a string; the
//! conditional word score is the difference of two such calls.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::http::{HttpError, RetryPolicy};

pub const SCORING_PREFIX: &str = "The word is \"";

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer unavailable: {0}")]
    Unavailable(String),
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("word {0:?} must be non-empty ASCII letters")]
    InvalidWord(String),
    #[error("cannot read scorer training data {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScorerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScorerError::Unavailable(_))
    }
}

/// Anything that can assign a natural-log probability to a string.
pub trait Scorer: Send + Sync {
    /// Stable descriptor used in manifests.
    fn id(&self) -> String;

    /// Same input, same output.
    fn deterministic(&self) -> bool {
        true
    }

    fn logprob(&self, text: &str) -> Result<f64, ScorerError>;
}

/// `logP("The word is \"WORD\"") - logP("The word is \"")`.
pub fn score_word(scorer: &dyn Scorer, word: &str) -> Result<f64, ScorerError> {
    if word.is_empty() || !word.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(ScorerError::InvalidWord(word.to_string()));
    }
    let full = scorer.logprob(&format!("{SCORING_PREFIX}{word}\""))?;
    let prefix = scorer.logprob(SCORING_PREFIX)?;
    let lp = full - prefix;
    if !lp.is_finite() {
        return Err(ScorerError::Protocol(format!("non-finite score {lp} for {word:?}")));
    }
    Ok(lp)
}

/// Scores `words` with at most `max_in_flight` concurrent requests.
/// Results come back in input order.
pub fn score_words(
    scorer: &dyn Scorer,
    words: &[String],
    max_in_flight: usize,
) -> Result<Vec<(String, f64)>, ScorerError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| ScorerError::Unavailable(e.to_string()))?;
    pool.install(|| {
        words
            .par_iter()
            .map(|w| score_word(scorer, w).map(|lp| (w.clone(), lp)))
            .collect()
    })
}

/// Every character costs `ln(1/alphabet)`.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    pub alphabet: usize,
}

impl Default for UniformScorer {
    fn default() -> Self {
        Self { alphabet: 26 }
    }
}

impl Scorer for UniformScorer {
    fn id(&self) -> String {
        format!("uniform-{}", self.alphabet)
    }

    fn logprob(&self, text: &str) -> Result<f64, ScorerError> {
        Ok(text.chars().count() as f64 * (1.0 / self.alphabet as f64).ln())
    }
}

#[derive(Debug, Clone, Default)]
struct HistoryStats {
    total: f64,
    followers: HashMap<char, f64>,
}

/// Interpolated Witten-Bell character n-gram model.
///
/// Trained on quote-delimited words (`"word"`), so the first letter of a word
/// is predicted from the opening quote and the word end from the closing one.
/// The base distribution is uniform over printable ASCII.
#[derive(Debug, Clone)]
pub struct CharNgramScorer {
    order: usize,
    stats: HashMap<String, HistoryStats>,
    base_size: f64,
    tag: String,
}

impl CharNgramScorer {
    pub const DEFAULT_ORDER: usize = 4;

    /// `entries` are `(word, weight)` pairs.
    pub fn train<'a>(entries: impl IntoIterator<Item = (&'a str, f64)>, order: usize, tag: &str) -> Self {
        assert!(order >= 1, "n-gram order must be at least 1");
        let mut stats: HashMap<String, HistoryStats> = HashMap::new();
        for (word, weight) in entries {
            let seq: Vec<char> = format!("\"{word}\"").chars().collect();
            for i in 1..seq.len() {
                for h in 0..order.min(i + 1) {
                    let hist: String = seq[i - h..i].iter().collect();
                    let s = stats.entry(hist).or_default();
                    s.total += weight;
                    *s.followers.entry(seq[i]).or_insert(0.0) += weight;
                }
            }
        }
        Self {
            order,
            stats,
            base_size: 95.0,
            tag: tag.to_string(),
        }
    }

    /// Trains from a `word<TAB>count` file. Weights are `max(1, log10(count))`.
    pub fn from_frequency_list(text: &str, order: usize, tag: &str) -> Self {
        let entries: Vec<(String, f64)> = text
            .lines()
            .filter_map(|line| {
                let mut it = line.split('\t');
                let word = it.next()?.trim().to_ascii_lowercase();
                let count: f64 = it.next()?.trim().parse().ok()?;
                (!word.is_empty() && word.chars().all(|c| c.is_ascii_lowercase()))
                    .then(|| (word, count.log10().max(1.0)))
            })
            .collect();
        Self::train(entries.iter().map(|(w, c)| (w.as_str(), *c)), order, tag)
    }

    pub fn from_frequency_file(path: &Path, order: usize) -> Result<Self, ScorerError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScorerError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::from_frequency_list(&text, order, &path.display().to_string()))
    }

    fn prob(&self, history: &[char], c: char) -> f64 {
        let lower = if history.is_empty() {
            1.0 / self.base_size
        } else {
            self.prob(&history[1..], c)
        };
        let key: String = history.iter().collect();
        match self.stats.get(&key) {
            Some(s) if s.total > 0.0 => {
                let distinct = s.followers.len() as f64;
                let seen = s.followers.get(&c).copied().unwrap_or(0.0);
                (seen + distinct * lower) / (s.total + distinct)
            }
            _ => lower,
        }
    }
}

impl Scorer for CharNgramScorer {
    fn id(&self) -> String {
        format!("char-ngram-{}:{}", self.order, self.tag)
    }

    fn logprob(&self, text: &str) -> Result<f64, ScorerError> {
        let chars: Vec<char> = text.chars().collect();
        Ok((0..chars.len())
            .map(|i| {
                let start = i.saturating_sub(self.order - 1);
                self.prob(&chars[start..i], chars[i]).ln()
            })
            .sum())
    }
}

/// Remote scorer: `POST {url}` with `{"text": ...}`, expecting either
/// `{"logprob": x}` or `{"token_logprobs": [..]}` (summed).
pub struct HttpScorer {
    url: String,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

impl HttpScorer {
    pub fn new(url: &str, timeout: Duration, retry: RetryPolicy) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        Ok(Self {
            url: url.to_string(),
            client,
            retry,
        })
    }
}

impl Scorer for HttpScorer {
    fn id(&self) -> String {
        format!("http:{}", self.url)
    }

    fn logprob(&self, text: &str) -> Result<f64, ScorerError> {
        let body = json!({ "text": text });
        let value = crate::http::post_json(&self.client, &self.url, &[], &body, &self.retry).map_err(|e| match e {
            HttpError::Status { .. } | HttpError::Transport(_) => ScorerError::Unavailable(e.to_string()),
            HttpError::Decode(m) => ScorerError::Protocol(m),
        })?;
        if let Some(lp) = value.get("logprob").and_then(|v| v.as_f64()) {
            return Ok(lp);
        }
        if let Some(arr) = value.get("token_logprobs").and_then(|v| v.as_array()) {
            return arr
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| ScorerError::Protocol("non-numeric token logprob".into())))
                .sum();
        }
        Err(ScorerError::Protocol(format!("response has neither logprob nor token_logprobs: {value}")))
    }
}
