//! The five pipeline commands, shared by the CLI and the Python bindings.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! dataset/words.jsonl  examples_eval.jsonl  examples_heldout.jsonl  manifest.json
//! runs/<style>/t<temperature>/transcripts.jsonl
//!                            metrics.csv confusion.csv histogram.csv summary.json
//!                            fit_report.json prediction.csv *.svg manifest-*.json
//! curves/*.csv  curves/*.svg
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, Judged, ParsedTranscript};
use crate::backend::{self, BackendError, Completer, HttpChat, ProviderConfig, Replay, Simulator, Transcript, TranscriptStore};
use crate::cipher::ShiftLevel;
use crate::config::{Config, ConfigError, ScorerKind};
use crate::data;
use crate::dataset::{
    apply_blocklist, bin_words, build_examples, enumerate_candidates, score_words, split_bins, BinningError, CharNgramScorer,
    CipherExample, FrequencyError, FrequencyTable, HttpScorer, Scorer, ScorerError, Split, Tokenizer, TokenizerError, UniformScorer,
    WordRecord,
};
use crate::http::RetryPolicy;
use crate::prompt::PromptStyle;
use crate::report::{self, Artifact, RunManifest, Series};
use crate::sim::{self, Reasoner, SimError};
use crate::statfit::{self, FitError, ScoreSource};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{what} not found at {path}; {hint}")]
    MissingInput { what: String, path: String, hint: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Binning(#[from] BinningError),
    #[error(transparent)]
    Frequency(#[from] FrequencyError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{context}: {source}")]
    Fit {
        context: String,
        #[source]
        source: FitError,
    },
    #[error("{failed} of {total} requests failed (first: {first}); completed transcripts were kept")]
    ProbeFailures { failed: usize, total: usize, first: String },
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        writeln!(w, "{}", serde_json::to_string(item).expect("serializable")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Format {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

/// Output locations derived from `out_dir`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(out: &Path) -> Self {
        Self { out: out.to_path_buf() }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn words(&self) -> PathBuf {
        self.dataset_dir().join("words.jsonl")
    }

    pub fn examples(&self, split: Split) -> PathBuf {
        self.dataset_dir().join(format!("examples_{split}.jsonl"))
    }

    pub fn run_dir(&self, style: PromptStyle, temperature: f64) -> PathBuf {
        self.out.join("runs").join(style.name()).join(format!("t{temperature}"))
    }

    pub fn transcripts(&self, style: PromptStyle, temperature: f64) -> PathBuf {
        self.run_dir(style, temperature).join("transcripts.jsonl")
    }

    pub fn curves_dir(&self) -> PathBuf {
        self.out.join("curves")
    }
}

fn config_hash(cfg: &Config) -> String {
    report::sha256_hex(toml::to_string(cfg).unwrap_or_default().as_bytes())
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn artifacts(paths: &[PathBuf]) -> Result<Vec<Artifact>> {
    paths
        .iter()
        .map(|p| {
            Ok(Artifact {
                path: p.clone(),
                sha256: report::file_hash(p).map_err(io_err(p))?,
            })
        })
        .collect()
}

fn load_tokenizer(cfg: &Config) -> Result<Tokenizer> {
    let d = &cfg.dataset;
    match (&d.vocab, &d.merges) {
        (Some(v), Some(m)) => {
            for (key, p) in [("dataset.vocab", v), ("dataset.merges", m)] {
                if !p.exists() {
                    return Err(PipelineError::MissingInput {
                        what: format!("file for config key `{key}`"),
                        path: p.display().to_string(),
                        hint: format!("fix `{key}` or remove both dataset.vocab and dataset.merges to use the bundled vocabulary"),
                    });
                }
            }
            Ok(Tokenizer::from_files(v, m, &d.marker)?)
        }
        _ => Ok(Tokenizer::from_strs(data::VOCAB_JSON, data::MERGES_TXT, &d.marker)?),
    }
}

/// The log-probability scorer selected by `dataset.scorer`.
pub fn build_scorer(cfg: &Config) -> Result<Box<dyn Scorer>> {
    let d = &cfg.dataset;
    Ok(match d.scorer {
        ScorerKind::Uniform => Box::new(UniformScorer::default()),
        ScorerKind::Ngram => match &d.wordfreq {
            Some(p) => {
                if !p.exists() {
                    return Err(PipelineError::MissingInput {
                        what: "file for config key `dataset.wordfreq`".into(),
                        path: p.display().to_string(),
                        hint: "fix `dataset.wordfreq` or remove it to use the bundled list".into(),
                    });
                }
                Box::new(CharNgramScorer::from_frequency_file(p, d.ngram_order)?)
            }
            None => Box::new(CharNgramScorer::from_frequency_list(data::WORDFREQ_TSV, d.ngram_order, "bundled")),
        },
        ScorerKind::Http => {
            let url = d.scorer_url.as_deref().expect("validated");
            Box::new(HttpScorer::new(url, Duration::from_secs(60), RetryPolicy::default())?)
        }
    })
}

pub fn load_frequency(cfg: &Config) -> Result<FrequencyTable> {
    match &cfg.dataset.shift_freq {
        Some(p) => {
            if !p.exists() {
                return Err(PipelineError::MissingInput {
                    what: "file for config key `dataset.shift_freq`".into(),
                    path: p.display().to_string(),
                    hint: "fix `dataset.shift_freq` or remove it to use the bundled table".into(),
                });
            }
            Ok(FrequencyTable::load(p)?)
        }
        None => Ok(FrequencyTable::from_csv_str(data::SHIFT_FREQ_CSV)?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub candidates: usize,
    pub words: usize,
    pub eval_examples: usize,
    pub heldout_examples: usize,
    pub scorer: String,
}

pub fn cmd_build_dataset(cfg: &Config) -> Result<DatasetSummary> {
    let started = now();
    let layout = Layout::new(&cfg.out_dir);
    let d = &cfg.dataset;
    let tokenizer = load_tokenizer(cfg)?;
    let mut candidates = enumerate_candidates(&tokenizer)?;
    if let Some(p) = &d.blocklist {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        candidates = apply_blocklist(candidates, &text);
    }
    let scorer = build_scorer(cfg)?;
    let scored = score_words(scorer.as_ref(), &candidates, d.scorer_concurrency)?;
    let per_bin = d.eval_per_bin + d.heldout_per_bin;
    let binned = bin_words(&scored, d.n_bins, per_bin)?;
    let mut records = split_bins(&binned, d.eval_per_bin, d.heldout_per_bin)?;
    records.sort_by(|a, b| a.bin.cmp(&b.bin).then_with(|| a.word.cmp(&b.word)));

    let shifts = cfg.dataset_shifts();
    let of_split = |s: Split| records.iter().filter(|r| r.split == Some(s)).cloned().collect::<Vec<_>>();
    let eval = build_examples(&of_split(Split::Eval), &shifts)?;
    let heldout = build_examples(&of_split(Split::Heldout), &shifts)?;

    write_jsonl(&layout.words(), &records)?;
    write_jsonl(&layout.examples(Split::Eval), &eval)?;
    write_jsonl(&layout.examples(Split::Heldout), &heldout)?;
    let outputs = vec![layout.words(), layout.examples(Split::Eval), layout.examples(Split::Heldout)];
    let summary = DatasetSummary {
        candidates: candidates.len(),
        words: records.len(),
        eval_examples: eval.len(),
        heldout_examples: heldout.len(),
        scorer: scorer.id(),
    };
    let manifest = RunManifest {
        command: "build-dataset".into(),
        config_hash: config_hash(cfg),
        dataset_hash: Some(report::file_hash(&layout.examples(Split::Eval)).map_err(io_err(&layout.examples(Split::Eval)))?),
        provider: None,
        styles: vec![],
        shifts: d.shifts.clone(),
        started,
        finished: now(),
        outputs: artifacts(&outputs)?,
        extra: BTreeMap::from([("summary".to_string(), serde_json::to_value(&summary).expect("serializable"))]),
    };
    write_json(&layout.dataset_dir().join("manifest.json"), &manifest)?;
    Ok(summary)
}

fn missing_dataset(path: &Path) -> PipelineError {
    PipelineError::MissingInput {
        what: "dataset".into(),
        path: path.display().to_string(),
        hint: "run `build-dataset` first with the same --out".into(),
    }
}

pub fn load_examples(cfg: &Config, split: Split) -> Result<Vec<CipherExample>> {
    let path = Layout::new(&cfg.out_dir).examples(split);
    if !path.exists() {
        return Err(missing_dataset(&path));
    }
    read_jsonl(&path)
}

pub fn load_words(cfg: &Config) -> Result<Vec<WordRecord>> {
    let path = Layout::new(&cfg.out_dir).words();
    if !path.exists() {
        return Err(missing_dataset(&path));
    }
    read_jsonl(&path)
}

/// The provider selected by `provider.kind`.
pub fn build_provider(cfg: &Config) -> Result<Box<dyn Completer>> {
    Ok(match &cfg.provider {
        ProviderConfig::Simulator => {
            let lexicon = load_words(cfg)?.into_iter().map(|r| (r.word, r.logprob)).collect();
            let reasoner = Reasoner::new(cfg.sim.clone(), load_frequency(cfg)?, lexicon)?;
            Box::new(Simulator::new(reasoner))
        }
        ProviderConfig::Replay { cache_path } => {
            if !cache_path.exists() {
                return Err(PipelineError::MissingInput {
                    what: "replay cache for config key `provider.cache_path`".into(),
                    path: cache_path.display().to_string(),
                    hint: "point it at an existing transcripts.jsonl".into(),
                });
            }
            Box::new(Replay::open(cache_path)?)
        }
        ProviderConfig::HttpChat(h) => Box::new(HttpChat::new(h.clone(), cfg.rate_limit_rpm)?),
    })
}

fn probe_filter(cfg: &Config, examples: Vec<CipherExample>) -> Vec<CipherExample> {
    examples
        .into_iter()
        .filter(|e| cfg.probe.shifts.is_empty() || cfg.probe.shifts.contains(&e.shift.get()))
        .filter(|e| cfg.probe.bins.is_empty() || cfg.probe.bins.contains(&e.bin))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRunSummary {
    pub style: String,
    pub temperature: f64,
    pub transcripts: usize,
    pub requested: usize,
    pub reused: usize,
    pub failed: usize,
    pub store: PathBuf,
}

/// Probes eval and heldout examples for every configured style and temperature.
pub fn cmd_probe(cfg: &Config) -> Result<Vec<ProbeRunSummary>> {
    let layout = Layout::new(&cfg.out_dir);
    let mut examples = load_examples(cfg, Split::Eval)?;
    let heldout_path = layout.examples(Split::Heldout);
    if heldout_path.exists() {
        examples.extend(read_jsonl::<CipherExample>(&heldout_path)?);
    }
    let examples = probe_filter(cfg, examples);
    let dataset_hash = report::file_hash(&layout.examples(Split::Eval)).ok();
    let provider = build_provider(cfg)?;
    let styles = cfg.styles().map_err(|e| ConfigError::Invalid {
        key: "probe.styles".into(),
        message: e.to_string(),
    })?;
    let mut summaries = Vec::new();
    let mut failed = 0;
    let mut first_failure = None;
    for &style in &styles {
        for temperature in cfg.temperatures() {
            let started = now();
            let params = backend::DecodingParams {
                temperature,
                ..cfg.params
            };
            let store_path = layout.transcripts(style, temperature);
            let store = TranscriptStore::open(&store_path)?;
            let outcome = backend::run_probe(provider.as_ref(), &examples, style, &params, &store, cfg.probe_options());
            drop(store);
            failed += outcome.failures.len();
            if first_failure.is_none() {
                first_failure = outcome.failures.first().map(|(id, e)| format!("{id}: {e}"));
            }
            for (id, e) in &outcome.failures {
                log::error!("{style} t={temperature} {id}: {e}");
            }
            let summary = ProbeRunSummary {
                style: style.name().to_string(),
                temperature,
                transcripts: outcome.transcripts.len(),
                requested: outcome.requested,
                reused: outcome.reused,
                failed: outcome.failures.len(),
                store: store_path.clone(),
            };
            let manifest = RunManifest {
                command: "probe".into(),
                config_hash: config_hash(cfg),
                dataset_hash: dataset_hash.clone(),
                provider: Some(provider.id()),
                styles: vec![style.name().to_string()],
                shifts: cfg.probe.shifts.clone(),
                started,
                finished: now(),
                outputs: artifacts(std::slice::from_ref(&store_path))?,
                extra: BTreeMap::from([("summary".to_string(), serde_json::to_value(&summary).expect("serializable"))]),
            };
            write_json(&layout.run_dir(style, temperature).join("manifest-probe.json"), &manifest)?;
            summaries.push(summary);
        }
    }
    if failed > 0 {
        return Err(PipelineError::ProbeFailures {
            failed,
            total: summaries.iter().map(|s| s.requested).sum(),
            first: first_failure.unwrap_or_default(),
        });
    }
    Ok(summaries)
}

/// Rebuilds an example from an id of the form `b{bin}-{word}-k{shift}`.
pub fn example_from_id(id: &str) -> Option<CipherExample> {
    let rest = id.strip_prefix('b')?;
    let (bin, rest) = rest.split_once('-')?;
    let (word, shift) = rest.rsplit_once("-k")?;
    let shift = ShiftLevel::new(shift.parse().ok()?).ok()?;
    CipherExample::new(word, shift, bin.parse().ok()?, None).ok()
}

struct RunData {
    style: PromptStyle,
    temperature: f64,
    dir: PathBuf,
    graded: Vec<(CipherExample, ParsedTranscript, Judged)>,
}

/// Parses and grades every stored transcript for one run. Examples missing
/// from the dataset are rebuilt from their ids.
fn grade_run(cfg: &Config, style: PromptStyle, temperature: f64) -> Result<Option<RunData>> {
    let layout = Layout::new(&cfg.out_dir);
    let path = layout.transcripts(style, temperature);
    if !path.exists() {
        return Ok(None);
    }
    let mut known: HashMap<String, CipherExample> = HashMap::new();
    for split in [Split::Eval, Split::Heldout] {
        let p = layout.examples(split);
        if p.exists() {
            known.extend(read_jsonl::<CipherExample>(&p)?.into_iter().map(|e| (e.id.clone(), e)));
        }
    }
    let transcripts: Vec<Transcript> = backend::read_transcripts(&path)?;
    let mut latest: BTreeMap<String, Transcript> = BTreeMap::new();
    for t in transcripts {
        latest.insert(t.example_id.clone(), t);
    }
    let mut graded = Vec::with_capacity(latest.len());
    for (id, t) in latest {
        let example = match known.get(&id) {
            Some(e) => e.clone(),
            None => example_from_id(&id).ok_or_else(|| PipelineError::Format {
                path: path.display().to_string(),
                message: format!("transcript for unknown example {id:?}"),
            })?,
        };
        let parsed = analysis::parse_transcript(&id, &t.raw_response, style);
        let judged = analysis::judge(&parsed, &example, style);
        graded.push((example, parsed, judged));
    }
    Ok(Some(RunData {
        style,
        temperature,
        dir: layout.run_dir(style, temperature),
        graded,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub style: String,
    pub temperature: f64,
    pub n: usize,
    pub mean_accuracy: f64,
    pub mean_faithful_accuracy: f64,
    /// Mean over shifts of each bin's accuracy.
    pub bin_mean_accuracy: BTreeMap<u8, f64>,
    pub shift_accuracy: BTreeMap<u8, f64>,
    pub parse_warnings: usize,
}

fn summarize(style: PromptStyle, temperature: f64, judged: &[Judged], warnings: usize) -> AnalysisSummary {
    let table = analysis::accuracy_table(judged);
    let mut by_bin: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    let mut by_shift: BTreeMap<u8, (f64, usize)> = BTreeMap::new();
    for (&(shift, bin), c) in &table {
        by_bin.entry(bin).or_default().push(c.overall_acc);
        let e = by_shift.entry(shift).or_default();
        e.0 += c.overall_acc * c.n as f64;
        e.1 += c.n;
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let n = judged.len();
    let frac = |f: fn(&Judged) -> bool| if n == 0 { 0.0 } else { judged.iter().filter(|j| f(j)).count() as f64 / n as f64 };
    AnalysisSummary {
        style: style.name().to_string(),
        temperature,
        n,
        mean_accuracy: frac(|j| j.quadrant.final_correct),
        mean_faithful_accuracy: frac(|j| j.quadrant.chain_correct),
        bin_mean_accuracy: by_bin.iter().map(|(b, v)| (*b, mean(v))).collect(),
        shift_accuracy: by_shift.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        parse_warnings: warnings,
    }
}

fn is_eval(e: &CipherExample) -> bool {
    e.split != Some(Split::Heldout)
}

fn analyze_run(cfg: &Config, run: &RunData) -> Result<AnalysisSummary> {
    let eval: Vec<&(CipherExample, ParsedTranscript, Judged)> = run.graded.iter().filter(|(e, _, _)| is_eval(e)).collect();
    let judged: Vec<Judged> = eval.iter().map(|(_, _, j)| j.clone()).collect();
    let n_bins = judged.iter().map(|j| j.bin).max().unwrap_or(1).max(cfg.dataset.n_bins as u8);
    let table = analysis::accuracy_table(&judged);
    let confusion = analysis::confusion_by_group(&judged, n_bins);
    let hists = analysis::shift_histograms(eval.iter().map(|(e, p, _)| (e.shift, p)));
    let warnings = eval.iter().map(|(_, p, _)| p.parse_warnings.len()).sum();

    let metrics_path = run.dir.join("metrics.csv");
    let confusion_path = run.dir.join("confusion.csv");
    let hist_path = run.dir.join("histogram.csv");
    let summary_path = run.dir.join("summary.json");
    analysis::write_metrics_csv(create(&metrics_path)?, &table).map_err(csv_err(&metrics_path))?;
    analysis::write_confusion_csv(create(&confusion_path)?, &confusion).map_err(csv_err(&confusion_path))?;
    analysis::write_histogram_csv(create(&hist_path)?, &hists).map_err(csv_err(&hist_path))?;
    let summary = summarize(run.style, run.temperature, &judged, warnings);
    write_json(&summary_path, &summary)?;
    let mut outputs = vec![metrics_path, confusion_path, hist_path, summary_path];

    if cfg.report.svg {
        let mut per_bin: BTreeMap<u8, Vec<(f64, f64)>> = BTreeMap::new();
        for (&(shift, bin), c) in &table {
            per_bin.entry(bin).or_default().push((shift as f64, c.overall_acc));
        }
        let series: Vec<Series> = per_bin
            .into_iter()
            .map(|(b, points)| Series {
                label: format!("bin {b}"),
                points,
                dashed: false,
            })
            .collect();
        let acc_svg = run.dir.join("accuracy.svg");
        write_text(&acc_svg, &report::line_chart(&format!("{} accuracy", run.style), "shift level", "accuracy", &series, Some((0.0, 1.0))))?;
        let hist_series: Vec<Series> = hists
            .iter()
            .map(|(k, h)| Series {
                label: format!("rot-{k}"),
                points: h.freq().iter().enumerate().map(|(s, f)| (s as f64, *f)).collect(),
                dashed: false,
            })
            .filter(|s| [1.0, 4.0, 13.0, 20.0, 25.0].contains(&s.label[4..].parse::<f64>().unwrap_or(-1.0)))
            .collect();
        let hist_svg = run.dir.join("histogram.svg");
        write_text(&hist_svg, &report::line_chart("inferred step shift", "inferred shift", "frequency", &hist_series, Some((0.0, 1.0))))?;
        outputs.extend([acc_svg, hist_svg]);
    }

    let manifest = RunManifest {
        command: "analyze".into(),
        config_hash: config_hash(cfg),
        dataset_hash: report::file_hash(&Layout::new(&cfg.out_dir).examples(Split::Eval)).ok(),
        provider: None,
        styles: vec![run.style.name().to_string()],
        shifts: table.keys().map(|k| k.0).collect::<std::collections::BTreeSet<_>>().into_iter().collect(),
        started: now(),
        finished: now(),
        outputs: artifacts(&outputs)?,
        extra: BTreeMap::new(),
    };
    write_json(&run.dir.join("manifest-analyze.json"), &manifest)?;
    Ok(summary)
}

fn runs(cfg: &Config) -> Result<Vec<(PromptStyle, f64)>> {
    let styles = cfg.styles().map_err(|e| ConfigError::Invalid {
        key: "probe.styles".into(),
        message: e.to_string(),
    })?;
    Ok(styles.into_iter().flat_map(|s| cfg.temperatures().into_iter().map(move |t| (s, t))).collect())
}

pub fn cmd_analyze(cfg: &Config) -> Result<Vec<AnalysisSummary>> {
    let mut out = Vec::new();
    for (style, temperature) in runs(cfg)? {
        if let Some(run) = grade_run(cfg, style, temperature)? {
            out.push(analyze_run(cfg, &run)?);
        }
    }
    if out.is_empty() {
        return Err(PipelineError::MissingInput {
            what: "transcripts".into(),
            path: cfg.out_dir.join("runs").display().to_string(),
            hint: "run `probe` first with the same --out and styles".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub style: String,
    pub temperature: f64,
    pub fit: statfit::FitResult,
    pub heldout: Option<statfit::HeldoutMetrics>,
    pub train: statfit::HeldoutMetrics,
}

fn fit_run(cfg: &Config, run: &RunData, scores: &mut ScoreSource<'_>, freq: &FrequencyTable) -> Result<FitSummary> {
    let context = format!("fit {} t={}", run.style, run.temperature);
    let fit_err = |source| PipelineError::Fit {
        context: context.clone(),
        source,
    };
    let (eval, heldout): (Vec<_>, Vec<_>) = run.graded.iter().partition(|(e, _, _)| is_eval(e));
    let rows_for = |items: &[&(CipherExample, ParsedTranscript, Judged)], scores: &mut ScoreSource<'_>| {
        let examples: Vec<CipherExample> = items.iter().map(|(e, _, _)| e.clone()).collect();
        let judged: Vec<Judged> = items.iter().map(|(_, _, j)| j.clone()).collect();
        statfit::build_design(&judged, &examples, scores, freq)
    };
    let train_rows = rows_for(&eval, scores).map_err(fit_err)?;
    let fit = statfit::fit_logistic(&train_rows, cfg.fit).map_err(fit_err)?;
    let heldout_metrics = if heldout.is_empty() {
        None
    } else {
        let rows = rows_for(&heldout, scores).map_err(fit_err)?;
        Some(statfit::heldout_eval(&fit, &rows))
    };
    let summary = FitSummary {
        style: run.style.name().to_string(),
        temperature: run.temperature,
        train: statfit::heldout_eval(&fit, &train_rows),
        heldout: heldout_metrics,
        fit,
    };

    let report_path = run.dir.join("fit_report.json");
    let mut report = summary.fit.report();
    report["heldout"] = serde_json::to_value(summary.heldout).expect("serializable");
    report["train"] = serde_json::to_value(summary.train).expect("serializable");
    write_json(&report_path, &report)?;
    let curve = statfit::prediction_curve(&summary.fit, &train_rows);
    let pred_path = run.dir.join("prediction.csv");
    statfit::write_prediction_csv(create(&pred_path)?, &curve).map_err(csv_err(&pred_path))?;
    let mut outputs = vec![report_path, pred_path];
    if cfg.report.svg {
        let observed = analysis::accuracy_table(&eval.iter().map(|(_, _, j)| j.clone()).collect::<Vec<_>>());
        let mut series = Vec::new();
        let bins: std::collections::BTreeSet<u8> = curve.keys().map(|k| k.1).collect();
        for b in bins {
            series.push(Series {
                label: format!("bin {b} observed"),
                points: observed.iter().filter(|(k, _)| k.1 == b).map(|(k, c)| (k.0 as f64, c.overall_acc)).collect(),
                dashed: false,
            });
            series.push(Series {
                label: format!("bin {b} fitted"),
                points: curve.iter().filter(|(k, _)| k.1 == b).map(|(k, v)| (k.0 as f64, *v)).collect(),
                dashed: true,
            });
        }
        let svg_path = run.dir.join("regression.svg");
        write_text(&svg_path, &report::line_chart("logistic regression overlay", "shift level", "accuracy", &series, Some((0.0, 1.0))))?;
        outputs.push(svg_path);
    }
    let manifest = RunManifest {
        command: "fit".into(),
        config_hash: config_hash(cfg),
        dataset_hash: report::file_hash(&Layout::new(&cfg.out_dir).examples(Split::Eval)).ok(),
        provider: None,
        styles: vec![run.style.name().to_string()],
        shifts: vec![],
        started: now(),
        finished: now(),
        outputs: artifacts(&outputs)?,
        extra: BTreeMap::new(),
    };
    write_json(&run.dir.join("manifest-fit.json"), &manifest)?;
    Ok(summary)
}

/// Fits on the eval split of every run and scores the heldout split.
pub fn cmd_fit(cfg: &Config) -> Result<Vec<FitSummary>> {
    let freq = load_frequency(cfg)?;
    let scorer = build_scorer(cfg)?;
    let words_path = Layout::new(&cfg.out_dir).words();
    let cache: HashMap<String, f64> = if words_path.exists() {
        read_jsonl::<WordRecord>(&words_path)?.into_iter().map(|r| (r.word, r.logprob)).collect()
    } else {
        HashMap::new()
    };
    let mut scores = ScoreSource {
        cache,
        scorer: Some(scorer.as_ref()),
    };
    let mut out = Vec::new();
    for (style, temperature) in runs(cfg)? {
        if let Some(run) = grade_run(cfg, style, temperature)? {
            out.push(fit_run(cfg, &run, &mut scores, &freq)?);
        }
    }
    if out.is_empty() {
        return Err(PipelineError::MissingInput {
            what: "transcripts".into(),
            path: cfg.out_dir.join("runs").display().to_string(),
            hint: "run `probe` first with the same --out and styles".into(),
        });
    }
    Ok(out)
}

/// Writes the archetype curves; returns the files written.
pub fn cmd_curves(cfg: &Config) -> Result<Vec<PathBuf>> {
    let c = &cfg.curves;
    let dir = Layout::new(&cfg.out_dir).curves_dir();
    let shifts: Vec<ShiftLevel> = ShiftLevel::probe_range().collect();
    let freq = load_frequency(cfg)?;
    let symbolic = sim::curve_symbolic(&shifts);
    let one_way = sim::curve_noisy(c.q, c.word_len, &shifts, false);
    let two_way = sim::curve_noisy(c.q, c.word_len, &shifts, true);
    let memo = sim::curve_memorization(&freq, &shifts, c.memo_ceiling);
    let (high, low) = sim::curve_probabilistic(&two_way, c.delta);
    let low_bin = cfg.dataset.n_bins as u8;

    let mut written = Vec::new();
    let single: [(&str, &sim::Curve); 4] = [
        ("symbolic", &symbolic),
        ("noisy_one_way", &one_way),
        ("noisy_two_way", &two_way),
        ("memorization", &memo),
    ];
    for (name, curve) in single {
        let p = dir.join(format!("{name}.csv"));
        report::write_curve_csv(create(&p)?, &[(None, curve)]).map_err(csv_err(&p))?;
        written.push(p);
    }
    let p = dir.join("probabilistic.csv");
    report::write_curve_csv(create(&p)?, &[(Some(1), &high), (Some(low_bin), &low)]).map_err(csv_err(&p))?;
    written.push(p);
    if cfg.report.svg {
        let pts = |curve: &sim::Curve| curve.iter().map(|&(k, a)| (k as f64, a)).collect::<Vec<_>>();
        let series = vec![
            Series { label: "symbolic".into(), points: pts(&symbolic), dashed: false },
            Series { label: "noisy one-way".into(), points: pts(&one_way), dashed: false },
            Series { label: "noisy two-way".into(), points: pts(&two_way), dashed: false },
            Series { label: "memorization".into(), points: pts(&memo), dashed: false },
            Series { label: "probabilistic high".into(), points: pts(&high), dashed: true },
            Series { label: "probabilistic low".into(), points: pts(&low), dashed: true },
        ];
        let p = dir.join("curves.svg");
        write_text(&p, &report::line_chart("reasoning archetypes", "shift level", "accuracy", &series, Some((0.0, 1.0))))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        let e = CipherExample::new("mariner", ShiftLevel::new(4).unwrap(), 3, None).unwrap();
        assert_eq!(example_from_id(&e.id), Some(e));
        assert_eq!(example_from_id("garbage"), None);
        assert_eq!(example_from_id("b1-word-k99"), None);
    }

    #[test]
    fn missing_vocab_names_the_key() {
        let mut cfg = Config::default();
        cfg.dataset.vocab = Some("/nonexistent/vocab.json".into());
        cfg.dataset.merges = Some("/nonexistent/merges.txt".into());
        let e = load_tokenizer(&cfg).unwrap_err();
        assert!(e.to_string().contains("dataset.vocab"), "{e}");
    }

    #[test]
    fn layout_paths() {
        let l = Layout::new(Path::new("o"));
        assert_eq!(l.transcripts(PromptStyle::TextCot, 0.0), Path::new("o/runs/text-cot/t0/transcripts.jsonl"));
        assert_eq!(l.run_dir(PromptStyle::MathCot, 1.0), Path::new("o/runs/math-cot/t1"));
        assert_eq!(l.examples(Split::Heldout), Path::new("o/dataset/examples_heldout.jsonl"));
    }
}
