//! Prompt rendering for every probing style.
//!
//! At shift 13 each style reproduces its reference template exactly; at any
//! other shift the shift number is substituted wherever it names the shift
//! and the demonstration word `stay` is re-encoded under that shift.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cipher::{self, letter_pos, pos_letter, ShiftLevel};

/// Demonstration word used by every template.
pub const DEMO_WORD: &str = "stay";

/// Placeholder for the test input in rendered templates.
pub const TEST_INPUT_SLOT: &str = "<test_input>";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("{style} expects {expected} input, got {got:?}")]
    InputDomainMismatch {
        style: String,
        expected: &'static str,
        got: String,
    },
    #[error("mismatched demonstration needs a demo shift different from the described shift {0}")]
    InvalidMismatch(ShiftLevel),
    #[error("unknown prompt style {0:?}")]
    UnknownStyle(String),
}

/// How a mismatched demonstration lays out its steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DemoFormat {
    #[default]
    Text,
    Math,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum PromptStyle {
    Standard,
    TextCot,
    MathCot,
    NumberCot,
    HiddenCot,
    PartiallyHiddenCot,
    /// Text-CoT whose demonstration step outputs are replaced by seeded random wrong letters.
    RandomCorrupted { seed: u64 },
    /// Describes the prompt's shift but demonstrates `demo_shift`.
    MismatchedDemo { demo_shift: ShiftLevel, format: DemoFormat },
}

/// Seed whose corruptions yield the reference example (w, a, b, i).
pub const DEFAULT_CORRUPTION_SEED: u64 = 456_692;

impl PromptStyle {
    pub fn name(&self) -> &'static str {
        match self {
            PromptStyle::Standard => "standard",
            PromptStyle::TextCot => "text-cot",
            PromptStyle::MathCot => "math-cot",
            PromptStyle::NumberCot => "number-cot",
            PromptStyle::HiddenCot => "hidden-cot",
            PromptStyle::PartiallyHiddenCot => "partially-hidden-cot",
            PromptStyle::RandomCorrupted { .. } => "random-corrupted",
            PromptStyle::MismatchedDemo { format: DemoFormat::Text, .. } => "mismatched",
            PromptStyle::MismatchedDemo { format: DemoFormat::Math, .. } => "mismatched-math",
        }
    }

    /// Parses a style name; `demo_shift` and `seed` fill the parameterized variants.
    pub fn parse(name: &str, demo_shift: Option<ShiftLevel>, seed: Option<u64>) -> Result<Self, PromptError> {
        let mismatched = |format| PromptStyle::MismatchedDemo {
            demo_shift: demo_shift.unwrap_or(ShiftLevel::wrapping(14)),
            format,
        };
        Ok(match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "standard" => PromptStyle::Standard,
            "text-cot" | "text" => PromptStyle::TextCot,
            "math-cot" | "math" => PromptStyle::MathCot,
            "number-cot" | "number" => PromptStyle::NumberCot,
            "hidden-cot" | "hidden" => PromptStyle::HiddenCot,
            "partially-hidden-cot" | "partially-hidden" => PromptStyle::PartiallyHiddenCot,
            "random-corrupted" | "corrupted" => PromptStyle::RandomCorrupted {
                seed: seed.unwrap_or(DEFAULT_CORRUPTION_SEED),
            },
            "mismatched" | "mismatched-demo" | "mismatched-text" => mismatched(DemoFormat::Text),
            "mismatched-math" => mismatched(DemoFormat::Math),
            other => return Err(PromptError::UnknownStyle(other.to_string())),
        })
    }

    /// Input and output are number sequences rather than words.
    pub fn is_number_domain(&self) -> bool {
        matches!(self, PromptStyle::NumberCot)
    }

    /// The line prefix a response is asked to end with.
    pub fn answer_marker(&self) -> &'static str {
        if self.is_number_domain() {
            "Original sequence:"
        } else {
            "Original text:"
        }
    }

    /// All eight families, with default parameters.
    pub fn all_defaults() -> Vec<PromptStyle> {
        vec![
            PromptStyle::Standard,
            PromptStyle::TextCot,
            PromptStyle::MathCot,
            PromptStyle::NumberCot,
            PromptStyle::HiddenCot,
            PromptStyle::PartiallyHiddenCot,
            PromptStyle::RandomCorrupted {
                seed: DEFAULT_CORRUPTION_SEED,
            },
            PromptStyle::MismatchedDemo {
                demo_shift: ShiftLevel::wrapping(14),
                format: DemoFormat::Text,
            },
        ]
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptStyle {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s, None, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub style: PromptStyle,
    pub described_shift: ShiftLevel,
    /// Test input without surrounding quotes.
    pub encoded_input: String,
    pub text: String,
    pub demo_plaintext: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoStep {
    pub index: usize,
    pub input: String,
    pub output: String,
    /// Full numbered line as it appears in the prompt.
    pub line: String,
}

fn strip_quotes(s: &str) -> &str {
    let t = s.trim();
    t.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(t)
}

fn check_input(style: PromptStyle, test_input: &str) -> Result<String, PromptError> {
    let bare = strip_quotes(test_input);
    let mismatch = |expected| PromptError::InputDomainMismatch {
        style: style.name().to_string(),
        expected,
        got: test_input.to_string(),
    };
    if style.is_number_domain() {
        let ok = !bare.is_empty() && bare.split(',').all(|p| p.trim().parse::<u32>().is_ok());
        if !ok {
            return Err(mismatch("a comma-separated number sequence"));
        }
    } else if bare.is_empty() || !bare.chars().all(|c| c.is_ascii_alphabetic()) {
        return Err(mismatch("a letter sequence"));
    }
    Ok(bare.to_string())
}

/// Step lines for the demonstration at shift `k`.
///
/// `demo_k` is the shift the demonstration actually applies; it differs from
/// `k` only for mismatched demonstrations.
fn steps_for(style: PromptStyle, k: ShiftLevel) -> Vec<DemoStep> {
    let demo_k = match style {
        PromptStyle::MismatchedDemo { demo_shift, .. } => demo_shift,
        _ => k,
    };
    let encoded = cipher::encode(DEMO_WORD, demo_k).expect("demo word is letters");
    let corrupted = match style {
        PromptStyle::RandomCorrupted { seed } => Some(corrupt_outputs(seed)),
        _ => None,
    };
    encoded
        .chars()
        .zip(DEMO_WORD.chars())
        .enumerate()
        .map(|(i, (enc, plain))| {
            let index = i + 1;
            let p = letter_pos(enc).expect("letter");
            let q = letter_pos(plain).expect("letter");
            let (input, output, body) = match style {
                PromptStyle::MathCot
                | PromptStyle::MismatchedDemo {
                    format: DemoFormat::Math,
                    ..
                } => (
                    enc.to_string(),
                    plain.to_string(),
                    format!("{enc} -> ({p} - {demo_k}) mod 26 = {q} -> {plain}"),
                ),
                PromptStyle::NumberCot => (p.to_string(), q.to_string(), format!("{p} -> ({p} - {k}) mod 26 -> {q}")),
                PromptStyle::HiddenCot => (enc.to_string(), "*".to_string(), format!("{enc} -> *")),
                PromptStyle::RandomCorrupted { .. } => {
                    let c = corrupted.as_ref().expect("corruptions")[i];
                    (enc.to_string(), c.to_string(), format!("{enc} -> {c}"))
                }
                _ => (enc.to_string(), plain.to_string(), format!("{enc} -> {plain}")),
            };
            DemoStep {
                index,
                input,
                output,
                line: format!("{index}. {body}"),
            }
        })
        .collect()
}

/// One uniformly drawn wrong letter per demonstration step.
pub fn corrupt_outputs(seed: u64) -> Vec<char> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DEMO_WORD
        .chars()
        .map(|correct| {
            let skip = letter_pos(correct).expect("letter");
            let r: u8 = rng.random_range(0..25);
            pos_letter(if r >= skip { r + 1 } else { r })
        })
        .collect()
}

pub fn demo_steps(k: ShiftLevel, style: PromptStyle) -> Vec<DemoStep> {
    steps_for(style, k)
}

fn join_lines(steps: &[DemoStep]) -> String {
    steps.iter().map(|s| s.line.as_str()).collect::<Vec<_>>().join("\n")
}

fn letter_header(k: ShiftLevel, demo_encoded: &str, with_original: bool) -> String {
    let mut s = format!("Rot-{k} is a cipher in which each letter is shifted {k} positions forward in the alphabet. For example, here is a message written in rot-{k}");
    if with_original {
        s.push_str(&format!(
            " along with the original text that it was created from:\nRot-{k} text: \"{demo_encoded}\"\nOriginal text: \"{DEMO_WORD}\""
        ));
    } else {
        s.push_str(&format!(":\nRot-{k} text: \"{demo_encoded}\""));
    }
    s
}

fn letter_tail(k: ShiftLevel, test_input: &str, silent: bool) -> String {
    let middle = if silent {
        " As you produce each '*', we want you to still think about the correct letter that should go in the place of the star - just don't write it down."
    } else {
        ""
    };
    format!(
        "Here is another message in rot-{k}. Decode this message one letter at a time.{middle} On the last line, write the words \"Original text:\" followed by the decoded message:\nRot-{k} text: {test_input}"
    )
}

fn position_mapping() -> String {
    (0..26u8).map(|p| format!("{} -> {p}", pos_letter(p))).collect::<Vec<_>>().join("\n")
}

fn math_body(k: ShiftLevel, steps: &[DemoStep]) -> String {
    format!(
        "To decode this message, we need to shift each letter {k} positions backward. Let\u{2019}s start by writing the position-letter mapping for the alphabet:\n\n{}\n\nNext, we find the encoded letter as follows:\nPosition of original letter = (Position of given letter - {k}) mod 26\n\nThen map the found position to the corresponding letter using the letter-position mapping.\n\nUsing this,\n{}\nTherefore, the original text is: \"{DEMO_WORD}\"",
        position_mapping(),
        join_lines(steps)
    )
}

fn text_body(k: ShiftLevel, steps: &[DemoStep]) -> String {
    format!(
        "To decode this message, we shift each letter {k} positions backward:\n{}\nTherefore, the original text is: \"{DEMO_WORD}\"",
        join_lines(steps)
    )
}

/// Renders `style` at shift `k`. `test_input` is substituted verbatim
/// (callers normally pass the encoded word in double quotes).
pub fn render(style: PromptStyle, k: ShiftLevel, test_input: &str) -> Result<PromptInstance, PromptError> {
    if let PromptStyle::MismatchedDemo { demo_shift, .. } = style {
        if demo_shift == k {
            return Err(PromptError::InvalidMismatch(k));
        }
    }
    let encoded_input = check_input(style, test_input)?;
    let steps = steps_for(style, k);
    let demo_k = match style {
        PromptStyle::MismatchedDemo { demo_shift, .. } => demo_shift,
        _ => k,
    };
    let demo_encoded = cipher::encode(DEMO_WORD, demo_k).expect("demo word is letters");

    let text = match style {
        PromptStyle::Standard => format!(
            "{}\n\nDecode this message to produce the original text:\n\nRot-{k} text: {test_input}",
            letter_header(k, &demo_encoded, true)
        ),
        PromptStyle::TextCot | PromptStyle::RandomCorrupted { .. } | PromptStyle::MismatchedDemo { format: DemoFormat::Text, .. } => format!(
            "{}\n\n{}\n\n{}",
            letter_header(k, &demo_encoded, false),
            text_body(k, &steps),
            letter_tail(k, test_input, false)
        ),
        PromptStyle::MathCot | PromptStyle::MismatchedDemo { format: DemoFormat::Math, .. } => format!(
            "{}\n\n{}\n\n{}",
            letter_header(k, &demo_encoded, false),
            math_body(k, &steps),
            letter_tail(k, test_input, false)
        ),
        PromptStyle::HiddenCot => format!(
            "{}\n\nTo decode this message, we shift each letter {k} positions backward; but instead of revealing what each letter becomes, we will replace it with a '*' until we write the final answer:\n{}\nIf we put together the letters that were hidden behind each '*', we get that the original text is: \"{DEMO_WORD}\".\n\n{}",
            letter_header(k, &demo_encoded, false),
            join_lines(&steps),
            letter_tail(k, test_input, false)
        ),
        PromptStyle::PartiallyHiddenCot => {
            let starred = steps_for(PromptStyle::HiddenCot, k);
            format!(
                "{}\n\nTo decode this message, we shift each letter {k} positions backward:\n{}\n\nBut, in order to preserve secrecy, we will ask you to write your answer in a slightly different way: Instead of revealing what each letter becomes, we will replace it with a '*' until we write the final answer. Using this format, the reasoning shown above becomes:\n{}\n\nTherefore, the original text is: \"{DEMO_WORD}\"\n\n{}",
                letter_header(k, &demo_encoded, false),
                join_lines(&steps),
                join_lines(&starred),
                letter_tail(k, test_input, true)
            )
        }
        PromptStyle::NumberCot => {
            let enc_seq = cipher::positions_csv(&demo_encoded).expect("letters");
            let plain_seq = cipher::positions_csv(DEMO_WORD).expect("letters");
            format!(
                "Shift-{k} is a process in which each number is shifted {k} positions forward until it reaches 26 and subsequently circles back to 1. For example, here is a sequence of numbers written in shift-{k}:\nshift-{k} sequence: \"{enc_seq}\"\n\nTo decode this sequence, we need to shift each number {k} positions backward.\nNew position = (Given position - {k}) mod 26\n\nUsing this,\n{}\n\nTherefore, the original sequence of numbers is: \"{plain_seq}\"\n\nHere is another sequence of numbers in shift-{k}. Decode this sequence one number at a time. On the last line, write the words \"Original sequence:\" followed by the decoded sequence:\nshift-{k} sequence: {test_input}",
                join_lines(&steps)
            )
        }
    };

    Ok(PromptInstance {
        style,
        described_shift: k,
        encoded_input,
        text,
        demo_plaintext: DEMO_WORD.to_string(),
    })
}

/// The test input as it is placed into a prompt for `example`'s encoded word.
pub fn test_input_for(style: PromptStyle, encoded: &str) -> String {
    if style.is_number_domain() {
        format!("\"{}\"", cipher::positions_csv(encoded).unwrap_or_default())
    } else {
        format!("\"{encoded}\"")
    }
}
