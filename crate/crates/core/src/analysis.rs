//! Transcript parsing and the accuracy, faithfulness and inferred-shift metrics.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::cipher::{self, ShiftLevel, ALPHABET_LEN};
use crate::dataset::CipherExample;
use crate::prompt::PromptStyle;

/// One side of a step line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Symbol {
    Letter(char),
    Number(i64),
    /// A `*` written in place of the step's answer.
    Masked,
}

impl Symbol {
    fn render(&self) -> String {
        match self {
            Symbol::Letter(c) => c.to_string(),
            Symbol::Number(n) => n.to_string(),
            Symbol::Masked => "*".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub input: Symbol,
    pub output: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTranscript {
    pub example_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<String>,
    pub parse_warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadrant {
    pub chain_correct: bool,
    pub final_correct: bool,
}

static STEP_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(\d+)\.\s+(\S+)\s*->\s*(?:.*->\s*)?(\S+)$").expect("step pattern"));

static LETTER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)original text(?: is)?:").expect("marker pattern"));
static NUMBER_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)original sequence(?: of numbers is)?:").expect("marker pattern"));

fn parse_symbol(raw: &str, numbers: bool) -> Option<Symbol> {
    let s = raw.trim_end_matches(['.', ',', ';']).trim_matches('"');
    if s == "*" {
        return Some(Symbol::Masked);
    }
    if numbers {
        return s.parse::<i64>().ok().map(Symbol::Number);
    }
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some(Symbol::Letter(c.to_ascii_lowercase())),
        _ => None,
    }
}

fn clean_answer(rest: &str) -> String {
    let rest = rest.trim();
    let inner = match rest.find('"') {
        Some(open) => match rest[open + 1..].find('"') {
            Some(len) => &rest[open + 1..open + 1 + len],
            None => &rest[open + 1..],
        },
        None => rest,
    };
    inner.trim().trim_matches('"').trim().to_lowercase()
}

/// Reads what follows the last answer marker on its line, or the next
/// non-empty line when the marker ends its line.
fn final_answer(raw: &str, style: PromptStyle) -> Option<String> {
    let re = if style.is_number_domain() { &*NUMBER_MARKER } else { &*LETTER_MARKER };
    let last = re.find_iter(raw).last()?;
    let mut lines = raw[last.end()..].lines();
    let first = lines.next().unwrap_or("");
    let answer = if first.trim().is_empty() {
        lines.find(|l| !l.trim().is_empty()).map(clean_answer).unwrap_or_default()
    } else {
        clean_answer(first)
    };
    Some(answer)
}

/// Total: never fails. Unreadable step lines and a missing answer marker
/// become warnings.
pub fn parse_transcript(example_id: &str, raw: &str, style: PromptStyle) -> ParsedTranscript {
    let numbers = style.is_number_domain();
    let mut steps: Vec<Step> = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let line = line.trim();
        if !line.starts_with(|c: char| c.is_ascii_digit()) || !line.contains("->") {
            continue;
        }
        let Some(c) = STEP_RE.captures(line) else {
            warnings.push(format!("line {}: unreadable step {line:?}", lineno + 1));
            continue;
        };
        let index: usize = c[1].parse().unwrap_or(0);
        let (Some(input), Some(output)) = (parse_symbol(&c[2], numbers), parse_symbol(&c[3], numbers)) else {
            warnings.push(format!("line {}: invalid symbols in {line:?}", lineno + 1));
            continue;
        };
        if index == 1 && !steps.is_empty() {
            warnings.push(format!("line {}: step numbering restarts; earlier steps discarded", lineno + 1));
            steps.clear();
        } else if index != steps.len() + 1 {
            warnings.push(format!("line {}: expected step {}, found {index}", lineno + 1, steps.len() + 1));
        }
        steps.push(Step { index, input, output });
    }
    let final_answer = final_answer(raw, style);
    if raw.trim().is_empty() {
        warnings.push("empty transcript".to_string());
    } else if final_answer.is_none() {
        warnings.push(format!("no {:?} line found", style.answer_marker()));
    }
    ParsedTranscript {
        example_id: example_id.to_string(),
        steps,
        final_answer,
        parse_warnings: warnings,
    }
}

/// Step outputs concatenated in order (comma-joined for numbers).
/// Absent when there are no steps or any output is masked.
pub fn faithful_answer(p: &ParsedTranscript) -> Option<String> {
    if p.steps.is_empty() || p.steps.iter().any(|s| s.output == Symbol::Masked) {
        return None;
    }
    let numbers = p.steps.iter().any(|s| matches!(s.output, Symbol::Number(_)));
    let parts: Vec<String> = p.steps.iter().map(|s| s.output.render()).collect();
    Some(if numbers { parts.join(",") } else { parts.concat() })
}

fn normalize(s: &str) -> String {
    s.trim().trim_matches('"').trim().to_lowercase()
}

fn parse_numbers(s: &str) -> Option<Vec<i64>> {
    normalize(s).split(',').map(|p| p.trim().parse::<i64>().ok()).collect()
}

/// Letter answers compare case-insensitively; number sequences element-wise.
pub fn answers_match(answer: &str, truth: &str, numbers: bool) -> bool {
    if numbers {
        matches!((parse_numbers(answer), parse_numbers(truth)), (Some(a), Some(b)) if a == b)
    } else {
        normalize(answer) == normalize(truth)
    }
}

/// `truth` is the plaintext word, or its position sequence for number styles.
pub fn classify(p: &ParsedTranscript, truth: &str, numbers: bool) -> Quadrant {
    let check = |a: Option<String>| a.is_some_and(|a| answers_match(&a, truth, numbers));
    Quadrant {
        chain_correct: check(faithful_answer(p)),
        final_correct: check(p.final_answer.clone()),
    }
}

/// The value a transcript of `style` is graded against.
pub fn truth_for(example: &CipherExample, style: PromptStyle) -> String {
    if style.is_number_domain() {
        cipher::positions_csv(&example.plaintext).unwrap_or_default()
    } else {
        example.plaintext.clone()
    }
}

/// A graded transcript with the grouping keys the tables need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judged {
    pub example_id: String,
    pub shift: u8,
    pub bin: u8,
    pub quadrant: Quadrant,
}

pub fn judge(p: &ParsedTranscript, example: &CipherExample, style: PromptStyle) -> Judged {
    Judged {
        example_id: example.id.clone(),
        shift: example.shift.get(),
        bin: example.bin,
        quadrant: classify(p, &truth_for(example, style), style.is_number_domain()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub n: usize,
    pub overall_acc: f64,
    pub faithful_acc: f64,
}

/// Per (shift, bin) accuracy, keyed in ascending order.
pub fn accuracy_table(judged: &[Judged]) -> BTreeMap<(u8, u8), AccuracyCell> {
    let mut counts: BTreeMap<(u8, u8), (usize, usize, usize)> = BTreeMap::new();
    for j in judged {
        let e = counts.entry((j.shift, j.bin)).or_default();
        e.0 += 1;
        e.1 += j.quadrant.final_correct as usize;
        e.2 += j.quadrant.chain_correct as usize;
    }
    counts
        .into_iter()
        .map(|(key, (n, fc, cc))| {
            (
                key,
                AccuracyCell {
                    n,
                    overall_acc: fc as f64 / n as f64,
                    faithful_acc: cc as f64 / n as f64,
                },
            )
        })
        .collect()
}

/// Quadrant counts; the first letter is the chain, the second the final answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub cc: usize,
    pub ci: usize,
    pub ic: usize,
    pub ii: usize,
}

impl Confusion {
    pub fn add(&mut self, q: Quadrant) {
        match (q.chain_correct, q.final_correct) {
            (true, true) => self.cc += 1,
            (true, false) => self.ci += 1,
            (false, true) => self.ic += 1,
            (false, false) => self.ii += 1,
        }
    }

    pub fn n(&self) -> usize {
        self.cc + self.ci + self.ic + self.ii
    }

    pub fn overall_acc(&self) -> f64 {
        (self.cc + self.ic) as f64 / self.n() as f64
    }

    pub fn faithful_acc(&self) -> f64 {
        (self.cc + self.ci) as f64 / self.n() as f64
    }
}

pub fn confusion_matrix(judged: &[Judged]) -> Confusion {
    let mut c = Confusion::default();
    for j in judged {
        c.add(j.quadrant);
    }
    c
}

/// `high` for bin 1, `low` for the last bin, `bin{b}` otherwise.
pub fn bin_group(bin: u8, n_bins: u8) -> String {
    if bin == 1 {
        "high".to_string()
    } else if bin == n_bins {
        "low".to_string()
    } else {
        format!("bin{bin}")
    }
}

/// Confusion counts per (shift, bin group).
pub fn confusion_by_group(judged: &[Judged], n_bins: u8) -> BTreeMap<(u8, String), Confusion> {
    let mut out: BTreeMap<(u8, String), Confusion> = BTreeMap::new();
    for j in judged {
        out.entry((j.shift, bin_group(j.bin, n_bins))).or_default().add(j.quadrant);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShiftHistogram {
    pub counts: [u64; ALPHABET_LEN as usize],
}

impl ShiftHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalized frequencies; all zero when empty.
    pub fn freq(&self) -> [f64; ALPHABET_LEN as usize] {
        let total = self.total();
        let mut out = [0.0; ALPHABET_LEN as usize];
        if total > 0 {
            for (o, c) in out.iter_mut().zip(self.counts) {
                *o = c as f64 / total as f64;
            }
        }
        out
    }

    /// Shifts ordered by descending count (ties by shift).
    pub fn modes(&self) -> Vec<u8> {
        let mut order: Vec<u8> = (0..ALPHABET_LEN).collect();
        order.sort_by(|&a, &b| self.counts[b as usize].cmp(&self.counts[a as usize]).then(a.cmp(&b)));
        order
    }

    pub fn add_steps(&mut self, steps: &[Step]) {
        for s in steps {
            if let Some(k) = step_shift(s) {
                self.counts[k.get() as usize] += 1;
            }
        }
    }
}

/// Backward shift implied by a step; `None` for masked or out-of-range symbols.
pub fn step_shift(step: &Step) -> Option<ShiftLevel> {
    match (step.input, step.output) {
        (Symbol::Letter(i), Symbol::Letter(o)) => cipher::infer_step_shift(i, o).ok(),
        (Symbol::Number(i), Symbol::Number(o)) if (0..26).contains(&i) && (0..26).contains(&o) => Some(ShiftLevel::wrapping(i - o)),
        _ => None,
    }
}

pub fn shift_histogram<'a>(transcripts: impl IntoIterator<Item = &'a ParsedTranscript>) -> ShiftHistogram {
    let mut h = ShiftHistogram::default();
    for t in transcripts {
        h.add_steps(&t.steps);
    }
    h
}

/// One histogram per intended shift.
pub fn shift_histograms<'a>(items: impl IntoIterator<Item = (ShiftLevel, &'a ParsedTranscript)>) -> BTreeMap<u8, ShiftHistogram> {
    let mut out: BTreeMap<u8, ShiftHistogram> = BTreeMap::new();
    for (k, t) in items {
        out.entry(k.get()).or_default().add_steps(&t.steps);
    }
    out
}

pub fn write_metrics_csv<W: Write>(out: W, table: &BTreeMap<(u8, u8), AccuracyCell>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["shift", "bin", "n", "overall_acc", "faithful_acc"])?;
    for ((shift, bin), c) in table {
        w.write_record([
            shift.to_string(),
            bin.to_string(),
            c.n.to_string(),
            c.overall_acc.to_string(),
            c.faithful_acc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_confusion_csv<W: Write>(out: W, table: &BTreeMap<(u8, String), Confusion>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["shift", "bin_group", "cc", "ci", "ic", "ii"])?;
    for ((shift, group), c) in table {
        w.write_record([
            shift.to_string(),
            group.clone(),
            c.cc.to_string(),
            c.ci.to_string(),
            c.ic.to_string(),
            c.ii.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(out: W, hists: &BTreeMap<u8, ShiftHistogram>) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["intended_shift", "inferred_shift", "count", "freq"])?;
    for (k, h) in hists {
        let freq = h.freq();
        for s in 0..ALPHABET_LEN as usize {
            w.write_record([k.to_string(), s.to_string(), h.counts[s].to_string(), freq[s].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
