//! Completion providers (HTTP chat endpoint, replay cache, built-in simulator),
//! the JSONL transcript store and the resumable probe runner.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cipher;
use crate::dataset::CipherExample;
use crate::http::{post_json, HttpError, RateLimiter, RetryPolicy};
use crate::prompt::{render, test_input_for, PromptError, PromptInstance, PromptStyle};
use crate::sim::{Reasoner, SimError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no cached response for prompt {0}")]
    CacheMiss(String),
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("environment variable {0} with the API key is not set")]
    AuthMissing(String),
    #[error("response has no text at {pointer}: {body}")]
    BadResponse { pointer: String, body: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("transcript store {path}: {source}")]
    Store {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript store {path} line {line}: {message}")]
    StoreFormat { path: String, line: usize, message: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub example_id: String,
    pub style: String,
    pub provider: String,
    pub params: DecodingParams,
    pub prompt_hash: String,
    pub raw_response: String,
    pub timestamp: String,
}

impl Transcript {
    pub fn key(&self) -> String {
        transcript_key(&self.example_id, &self.style, &self.provider, &self.params, &self.prompt_hash)
    }
}

pub fn transcript_key(example_id: &str, style: &str, provider: &str, params: &DecodingParams, prompt_hash: &str) -> String {
    format!(
        "{example_id}|{style}|{provider}|{}|{}|{prompt_hash}",
        params.temperature, params.max_new_tokens
    )
}

/// Hex SHA-256 of the prompt text.
pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A source of completions.
pub trait Completer: Send + Sync {
    /// Stable identifier recorded in every transcript.
    fn id(&self) -> String;
    fn complete(&self, example_id: &str, prompt: &PromptInstance, params: &DecodingParams) -> Result<String, BackendError>;
}

fn default_body_template() -> Value {
    serde_json::json!({
        "model": "$model",
        "messages": [{"role": "user", "content": "$prompt"}],
        "temperature": "$temperature",
        "max_tokens": "$max_tokens",
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    pub base_url: String,
    /// Appended to `base_url`.
    pub path: String,
    pub model: String,
    pub auth_env: String,
    pub auth_header: String,
    /// Written before the key in the auth header, e.g. `Bearer `.
    pub auth_prefix: String,
    pub extra_headers: BTreeMap<String, String>,
    /// Request JSON; string leaves `$prompt`, `$model`, `$temperature` and
    /// `$max_tokens` are replaced by the request values.
    pub body_template: Value,
    /// JSON pointer to the completion text in the reply.
    pub response_pointer: String,
    pub timeout_secs: u64,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/chat/completions".into(),
            model: "gpt-4".into(),
            auth_env: "PROBE_API_KEY".into(),
            auth_header: "Authorization".into(),
            auth_prefix: "Bearer ".into(),
            extra_headers: BTreeMap::new(),
            body_template: default_body_template(),
            response_pointer: "/choices/0/message/content".into(),
            timeout_secs: 120,
        }
    }
}

fn fill_template(template: &Value, prompt: &str, model: &str, params: &DecodingParams) -> Value {
    match template {
        Value::String(s) => match s.as_str() {
            "$prompt" => Value::String(prompt.to_string()),
            "$model" => Value::String(model.to_string()),
            "$temperature" => serde_json::json!(params.temperature),
            "$max_tokens" => serde_json::json!(params.max_new_tokens),
            _ => Value::String(s.clone()),
        },
        Value::Array(items) => Value::Array(items.iter().map(|v| fill_template(v, prompt, model, params)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| (k.clone(), fill_template(v, prompt, model, params)))
                .collect(),
        ),
        other => other.clone(),
    }
}

/// A chat-completion endpoint; the prompt is sent as one user message with
/// no system prompt and no stop sequence.
pub struct HttpChat {
    config: HttpChatConfig,
    client: Client,
    limiter: RateLimiter,
    retry: RetryPolicy,
}

impl HttpChat {
    pub fn new(config: HttpChatConfig, rate_limit_rpm: u32) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            limiter: RateLimiter::per_minute(rate_limit_rpm),
            config,
            client,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn headers(&self) -> Result<Vec<(String, String)>, BackendError> {
        let key = std::env::var(&self.config.auth_env).map_err(|_| BackendError::AuthMissing(self.config.auth_env.clone()))?;
        let mut headers = vec![(self.config.auth_header.clone(), format!("{}{key}", self.config.auth_prefix))];
        headers.extend(self.config.extra_headers.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(headers)
    }
}

impl Completer for HttpChat {
    fn id(&self) -> String {
        format!("http_chat:{}", self.config.model)
    }

    fn complete(&self, _example_id: &str, prompt: &PromptInstance, params: &DecodingParams) -> Result<String, BackendError> {
        let headers = self.headers()?;
        let body = fill_template(&self.config.body_template, &prompt.text, &self.config.model, params);
        let url = format!("{}{}", self.config.base_url.trim_end_matches('/'), self.config.path);
        self.limiter.acquire();
        let reply = post_json(&self.client, &url, &headers, &body, &self.retry)?;
        reply
            .pointer(&self.config.response_pointer)
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse {
                pointer: self.config.response_pointer.clone(),
                body: reply.to_string().chars().take(300).collect(),
            })
    }
}

/// Serves responses from earlier transcript stores, keyed by prompt hash.
#[derive(Debug, Clone)]
pub struct Replay {
    responses: HashMap<String, String>,
}

impl Replay {
    pub fn from_transcripts(transcripts: impl IntoIterator<Item = Transcript>) -> Self {
        Self {
            responses: transcripts.into_iter().map(|t| (t.prompt_hash, t.raw_response)).collect(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_transcripts(read_transcripts(path)?))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl Completer for Replay {
    fn id(&self) -> String {
        "replay".into()
    }

    fn complete(&self, _example_id: &str, prompt: &PromptInstance, _params: &DecodingParams) -> Result<String, BackendError> {
        let hash = prompt_hash(&prompt.text);
        self.responses.get(&hash).cloned().ok_or(BackendError::CacheMiss(hash))
    }
}

/// The built-in reasoner answering as a model would.
pub struct Simulator {
    reasoner: Reasoner,
}

impl Simulator {
    pub fn new(reasoner: Reasoner) -> Self {
        Self { reasoner }
    }
}

impl Completer for Simulator {
    fn id(&self) -> String {
        format!("simulator:seed{}", self.reasoner.params().seed)
    }

    fn complete(&self, example_id: &str, prompt: &PromptInstance, params: &DecodingParams) -> Result<String, BackendError> {
        let k = prompt.described_shift;
        let plaintext = cipher::decode(&prompt.encoded_input, k).map_err(|e| BackendError::Config(e.to_string()))?;
        let example = CipherExample {
            id: example_id.to_string(),
            plaintext,
            bin: 0,
            split: None,
            shift: k,
            encoded: prompt.encoded_input.to_ascii_lowercase(),
        };
        Ok(self.reasoner.simulate_transcript(&example, prompt.style, params.temperature)?)
    }
}

/// Provider selection as it appears in configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    HttpChat(HttpChatConfig),
    Replay { cache_path: PathBuf },
    Simulator,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Simulator
    }
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, BackendError> {
    let store_err = |source| BackendError::Store {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(store_err)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(store_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| BackendError::StoreFormat {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

/// Append-only JSONL store with a single serialized writer.
pub struct TranscriptStore {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
    existing: HashMap<String, Transcript>,
}

impl TranscriptStore {
    /// Opens (creating if needed) and indexes the transcripts already present.
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let existing = if path.exists() {
            read_transcripts(path)?.into_iter().map(|t| (t.key(), t)).collect()
        } else {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|source| BackendError::Store {
                    path: dir.display().to_string(),
                    source,
                })?;
            }
            HashMap::new()
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| BackendError::Store {
                path: path.display().to_string(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            writer: Mutex::new(BufWriter::new(file)),
            existing,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, key: &str) -> Option<&Transcript> {
        self.existing.get(key)
    }

    pub fn len_existing(&self) -> usize {
        self.existing.len()
    }

    /// Writes one line and flushes it before returning.
    pub fn append(&self, t: &Transcript) -> Result<(), BackendError> {
        let line = serde_json::to_string(t).expect("transcripts serialize");
        let mut w = self.writer.lock().expect("store writer poisoned");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|source| BackendError::Store {
                path: self.path.display().to_string(),
                source,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeOptions {
    pub concurrency: usize,
    pub resume: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            concurrency: 4,
            resume: true,
        }
    }
}

#[derive(Debug)]
pub struct ProbeOutcome {
    /// In example order; includes transcripts reused from the store.
    pub transcripts: Vec<Transcript>,
    pub failures: Vec<(String, BackendError)>,
    pub requested: usize,
    pub reused: usize,
}

impl ProbeOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn render_for(example: &CipherExample, style: PromptStyle) -> Result<PromptInstance, PromptError> {
    render(style, example.shift, &test_input_for(style, &example.encoded))
}

/// Runs every example through `provider`, persisting each completion before
/// reporting it. Examples whose key is already stored are reused when
/// `opts.resume` is set.
pub fn run_probe(
    provider: &dyn Completer,
    examples: &[CipherExample],
    style: PromptStyle,
    params: &DecodingParams,
    store: &TranscriptStore,
    opts: ProbeOptions,
) -> ProbeOutcome {
    let provider_id = provider.id();
    let mut order: Vec<&CipherExample> = examples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = HashSet::new();
    order.retain(|e| seen.insert(e.id.clone()));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.concurrency.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<(String, Result<(Transcript, bool), BackendError>)> = pool.install(|| {
        order
            .par_iter()
            .map(|ex| {
                let result = (|| {
                    let prompt = render_for(ex, style)?;
                    let hash = prompt_hash(&prompt.text);
                    let key = transcript_key(&ex.id, style.name(), &provider_id, params, &hash);
                    if opts.resume {
                        if let Some(t) = store.get(&key) {
                            return Ok((t.clone(), true));
                        }
                    }
                    let raw = provider.complete(&ex.id, &prompt, params)?;
                    let t = Transcript {
                        example_id: ex.id.clone(),
                        style: style.name().to_string(),
                        provider: provider_id.clone(),
                        params: *params,
                        prompt_hash: hash,
                        raw_response: raw,
                        timestamp: chrono::Utc::now().to_rfc3339(),
                    };
                    store.append(&t)?;
                    Ok((t, false))
                })();
                (ex.id.clone(), result)
            })
            .collect()
    });

    let mut outcome = ProbeOutcome {
        transcripts: Vec::new(),
        failures: Vec::new(),
        requested: 0,
        reused: 0,
    };
    for (id, r) in results {
        match r {
            Ok((t, reused)) => {
                if reused {
                    outcome.reused += 1;
                } else {
                    outcome.requested += 1;
                }
                outcome.transcripts.push(t);
            }
            Err(e) => {
                outcome.requested += 1;
                outcome.failures.push((id, e));
            }
        }
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::ShiftLevel;
    use crate::dataset::FrequencyTable;
    use crate::http::testserver;
    use crate::sim::SimParams;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn k(v: u8) -> ShiftLevel {
        ShiftLevel::new(v).unwrap()
    }

    fn noiseless() -> Simulator {
        Simulator::new(Reasoner::new(SimParams::noiseless(), FrequencyTable::uniform(), vec![]).unwrap())
    }

    fn examples(words: &[&str]) -> Vec<CipherExample> {
        words
            .iter()
            .flat_map(|w| [3u8, 13].map(|s| CipherExample::new(w, k(s), 1, None).unwrap()))
            .collect()
    }

    #[test]
    fn simulator_decodes_demo_input() {
        let p = render(PromptStyle::TextCot, k(13), "\"fgnl\"").unwrap();
        let out = noiseless().complete("x", &p, &DecodingParams::default()).unwrap();
        assert_eq!(out.lines().last().unwrap(), "Original text: \"stay\"");
    }

    #[test]
    fn replay_hits_and_misses() {
        let p = render(PromptStyle::TextCot, k(13), "\"fgnl\"").unwrap();
        let empty = Replay::from_transcripts(vec![]);
        assert!(matches!(empty.complete("x", &p, &DecodingParams::default()), Err(BackendError::CacheMiss(_))));
        let t = Transcript {
            example_id: "x".into(),
            style: "text-cot".into(),
            provider: "p".into(),
            params: DecodingParams::default(),
            prompt_hash: prompt_hash(&p.text),
            raw_response: "Original text: \"stay\"".into(),
            timestamp: "t".into(),
        };
        let r = Replay::from_transcripts(vec![t]);
        let a = r.complete("x", &p, &DecodingParams::default()).unwrap();
        let b = r.complete("x", &p, &DecodingParams::default()).unwrap();
        assert_eq!(prompt_hash(&a), prompt_hash(&b));
    }

    #[test]
    fn probe_persists_and_resumes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let exs = examples(&["stay", "hello", "world"]);
        let sim = noiseless();
        let params = DecodingParams::default();
        let store = TranscriptStore::open(&path).unwrap();
        let first = run_probe(&sim, &exs, PromptStyle::TextCot, &params, &store, ProbeOptions::default());
        assert!(first.is_success());
        assert_eq!(first.transcripts.len(), exs.len());
        assert_eq!(first.requested, exs.len());
        drop(store);
        let stored = read_transcripts(&path).unwrap();
        assert_eq!(stored.len(), exs.len());
        let ids: Vec<_> = first.transcripts.iter().map(|t| t.example_id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);

        // Drop two lines to mimic an interrupted run.
        let text = std::fs::read_to_string(&path).unwrap();
        let kept: Vec<&str> = text.lines().take(exs.len() - 2).collect();
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();

        struct Counting<'a>(&'a Simulator, AtomicUsize);
        impl Completer for Counting<'_> {
            fn id(&self) -> String {
                self.0.id()
            }
            fn complete(&self, id: &str, p: &PromptInstance, d: &DecodingParams) -> Result<String, BackendError> {
                self.1.fetch_add(1, Ordering::SeqCst);
                self.0.complete(id, p, d)
            }
        }
        let counting = Counting(&sim, AtomicUsize::new(0));
        let store = TranscriptStore::open(&path).unwrap();
        let second = run_probe(&counting, &exs, PromptStyle::TextCot, &params, &store, ProbeOptions::default());
        assert_eq!(counting.1.load(Ordering::SeqCst), 2);
        assert_eq!(second.reused, exs.len() - 2);
        drop(store);
        assert_eq!(read_transcripts(&path).unwrap().len(), exs.len());
        let bodies = |o: &ProbeOutcome| o.transcripts.iter().map(|t| t.raw_response.clone()).collect::<Vec<_>>();
        assert_eq!(bodies(&first), bodies(&second));
    }

    #[test]
    fn failures_are_reported_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::open(&dir.path().join("s.jsonl")).unwrap();
        let exs = examples(&["stay"]);
        let out = run_probe(&noiseless(), &exs, PromptStyle::HiddenCot, &DecodingParams::default(), &store, ProbeOptions::default());
        assert_eq!(out.failures.len(), exs.len());
        assert!(!out.is_success());
    }

    #[test]
    fn transcripts_round_trip() {
        let t = Transcript {
            example_id: "b1-stay-k13".into(),
            style: "math-cot".into(),
            provider: "simulator:seed0".into(),
            params: DecodingParams {
                temperature: 1.0,
                max_new_tokens: 50,
            },
            prompt_hash: prompt_hash("abc"),
            raw_response: "line one\n\"quoted\"".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
        };
        let back: Transcript = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.prompt_hash, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn http_chat_sends_one_user_message() {
        let reply = r#"{"choices":[{"message":{"content":"Original text: \"stay\""}}]}"#;
        let (url, captured, handle) = testserver::serve(vec![
            (503, vec![("Retry-After".into(), "0".into())], "busy".into()),
            (200, vec![], reply.into()),
        ]);
        let env = "COTPROBE_TEST_KEY_CHAT";
        std::env::set_var(env, "secret-token");
        let chat = HttpChat::new(HttpChatConfig {
            base_url: url,
            model: "m1".into(),
            auth_env: env.into(),
            ..HttpChatConfig::default()
        }, 60)
        .unwrap();
        let p = render(PromptStyle::TextCot, k(13), "\"fgnl\"").unwrap();
        let out = chat
            .complete("x", &p, &DecodingParams { temperature: 0.0, max_new_tokens: 200 })
            .unwrap();
        handle.join().unwrap();
        assert_eq!(out, "Original text: \"stay\"");
        let reqs = captured.lock().unwrap();
        assert_eq!(reqs.len(), 2);
        let body: Value = serde_json::from_str(&reqs[1].body).unwrap();
        assert_eq!(body["model"], "m1");
        assert_eq!(body["messages"].as_array().unwrap().len(), 1);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], p.text);
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 200);
        assert!(reqs[1].headers.iter().any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret-token")));
    }

    #[test]
    fn http_chat_requires_key() {
        let chat = HttpChat::new(HttpChatConfig {
            auth_env: "COTPROBE_TEST_KEY_DEFINITELY_UNSET".into(),
            ..HttpChatConfig::default()
        }, 60)
        .unwrap();
        let p = render(PromptStyle::TextCot, k(13), "\"fgnl\"").unwrap();
        assert!(matches!(chat.complete("x", &p, &DecodingParams::default()), Err(BackendError::AuthMissing(_))));
    }

    #[test]
    fn provider_config_toml() {
        let c: ProviderConfig = toml::from_str("kind = \"http_chat\"\nmodel = \"claude\"\nauth_header = \"x-api-key\"\nauth_prefix = \"\"").unwrap();
        match c {
            ProviderConfig::HttpChat(h) => {
                assert_eq!(h.model, "claude");
                assert_eq!(h.response_pointer, "/choices/0/message/content");
            }
            other => panic!("{other:?}"),
        }
        let r: ProviderConfig = toml::from_str("kind = \"replay\"\ncache_path = \"a.jsonl\"").unwrap();
        assert!(matches!(r, ProviderConfig::Replay { .. }));
    }
}
