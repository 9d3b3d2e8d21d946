//! Reasoning archetypes as analytic accuracy curves, and a generative
//! simulator that writes transcripts mixing noisy per-letter reasoning,
//! memorization of frequent shifts and a pull toward probable outputs.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cipher::{self, letter_pos, pos_letter, ShiftLevel, ALPHABET_LEN};
use crate::dataset::{CipherExample, FrequencyTable};
use crate::prompt::{DemoFormat, PromptStyle};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("the simulator cannot answer {0} prompts")]
    UnsupportedStyle(String),
    #[error("invalid simulator parameter: {0}")]
    InvalidParams(String),
}

pub type Curve = Vec<(u8, f64)>;

pub fn curve_symbolic(shifts: &[ShiftLevel]) -> Curve {
    shifts.iter().map(|k| (k.get(), 1.0)).collect()
}

/// Word accuracy when each of `word_len` letters needs `k` (one-way) or
/// `min(k, 26 - k)` (two-way) operations that each succeed with probability `q`.
pub fn curve_noisy(q: f64, word_len: u32, shifts: &[ShiftLevel], two_way: bool) -> Curve {
    shifts
        .iter()
        .map(|&k| {
            let ops = if two_way { k.min_steps() } else { k.get() } as i32;
            (k.get(), q.powi(ops * word_len as i32))
        })
        .collect()
}

/// `ceiling` scaled by each shift's frequency relative to the most frequent one.
pub fn curve_memorization(freq: &FrequencyTable, shifts: &[ShiftLevel], ceiling: f64) -> Curve {
    shifts.iter().map(|k| (k.get(), ceiling * freq.relative(k.get()))).collect()
}

/// The base curve lifted and lowered by `delta`, clamped to `[0, 1]`.
pub fn curve_probabilistic(base: &Curve, delta: f64) -> (Curve, Curve) {
    let high = base.iter().map(|&(k, a)| (k, (a + delta).clamp(0.0, 1.0))).collect();
    let low = base.iter().map(|&(k, a)| (k, (a - delta).clamp(0.0, 1.0))).collect();
    (high, low)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Success probability of one implicit single-letter move.
    pub q: f64,
    /// Probability of decoding with the complement shift instead.
    pub eps_complement: f64,
    /// Memorization probability at the most frequent shift.
    pub memo_ceiling: f64,
    pub prior_strength: f64,
    /// Chance per unit temperature that a step's letter is resampled uniformly.
    pub sampling_noise: f64,
    /// Log probability given to chains outside the lexicon; defaults to the lexicon minimum.
    pub oov_logprob: Option<f64>,
    pub seed: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            q: 0.97,
            eps_complement: 0.1,
            memo_ceiling: 0.4,
            prior_strength: 1.0,
            sampling_noise: 0.05,
            oov_logprob: None,
            seed: 0,
        }
    }
}

impl SimParams {
    /// No noise, no memorization, no prior: every transcript is exact.
    pub fn noiseless() -> Self {
        Self {
            q: 1.0,
            eps_complement: 0.0,
            memo_ceiling: 0.0,
            prior_strength: 0.0,
            sampling_noise: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.to_string()));
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad("q must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.eps_complement) {
            return bad("eps_complement must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.memo_ceiling) {
            return bad("memo_ceiling must lie in [0, 1)");
        }
        if !(self.prior_strength >= 0.0 && self.prior_strength.is_finite()) {
            return bad("prior_strength must be finite and non-negative");
        }
        if !(self.sampling_noise >= 0.0) {
            return bad("sampling_noise must be non-negative");
        }
        Ok(())
    }
}

/// Simulator state: parameters plus the shift frequencies and the lexicon
/// that back the memorization and prior paths.
#[derive(Debug, Clone)]
pub struct Reasoner {
    params: SimParams,
    freq: FrequencyTable,
    lexicon: HashMap<usize, Vec<(String, f64)>>,
    lookup: HashMap<String, f64>,
    oov: f64,
}

impl Reasoner {
    pub fn new(params: SimParams, freq: FrequencyTable, lexicon: Vec<(String, f64)>) -> Result<Self, SimError> {
        params.validate()?;
        if params.prior_strength > 0.0 && lexicon.is_empty() {
            return Err(SimError::InvalidParams("lexicon must be nonempty when prior_strength > 0".into()));
        }
        let mut by_len: HashMap<usize, Vec<(String, f64)>> = HashMap::new();
        let mut lookup = HashMap::new();
        for (w, lp) in lexicon {
            let w = w.to_ascii_lowercase();
            if lookup.insert(w.clone(), lp).is_none() {
                by_len.entry(w.len()).or_default().push((w, lp));
            }
        }
        for words in by_len.values_mut() {
            words.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let min = lookup.values().copied().fold(f64::INFINITY, f64::min);
        let oov = params.oov_logprob.unwrap_or(if min.is_finite() { min } else { 0.0 });
        Ok(Self {
            params,
            freq,
            lexicon: by_len,
            lookup,
            oov,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn memo_weight(&self, k: ShiftLevel) -> f64 {
        if k.get() == 0 {
            return 0.0;
        }
        self.params.memo_ceiling * self.freq.relative(k.get())
    }

    /// Probability that a single letter is decoded with the right shift.
    pub fn letter_accuracy(&self, k: ShiftLevel) -> f64 {
        let p = &self.params;
        let mut acc = (1.0 - p.eps_complement) * p.q.powi(k.min_steps() as i32);
        if k.complement() == k {
            acc += p.eps_complement;
        }
        acc
    }

    fn rng_for(&self, example_id: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.params.seed.to_le_bytes());
        h.update(example_id.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }

    fn applied_shift(&self, k: ShiftLevel, rng: &mut ChaCha8Rng) -> ShiftLevel {
        let p = &self.params;
        let u: f64 = rng.random();
        if u < p.eps_complement {
            return k.complement();
        }
        if rng.random::<f64>() < p.q.powi(k.min_steps() as i32) {
            return k;
        }
        let r: u8 = rng.random_range(0..ALPHABET_LEN - 1);
        ShiftLevel::wrapping(if r >= k.get() { r + 1 } else { r } as i64)
    }

    /// Picks the stated answer given the written chain.
    fn final_answer(&self, chain: &str, truth: &str, k: ShiftLevel, rng: &mut ChaCha8Rng) -> String {
        if rng.random::<f64>() < self.memo_weight(k) {
            return truth.to_string();
        }
        let lambda = self.params.prior_strength;
        if lambda == 0.0 {
            return chain.to_string();
        }
        let p = self.letter_accuracy(k).clamp(1e-12, 1.0 - 1e-12);
        let per_mismatch = ((1.0 - p) / (ALPHABET_LEN as f64 - 1.0)).ln() - p.ln();
        let mut best = chain.to_string();
        let mut best_score = lambda * self.lookup.get(chain).copied().unwrap_or(self.oov);
        for (w, lp) in self.lexicon.get(&chain.len()).into_iter().flatten() {
            let mismatches = w.bytes().zip(chain.bytes()).filter(|(a, b)| a != b).count();
            if mismatches == 0 {
                continue;
            }
            let score = mismatches as f64 * per_mismatch + lambda * lp;
            if score > best_score {
                best_score = score;
                best = w.clone();
            }
        }
        best
    }

    /// Writes a full response for `example` under `style` at `temperature`.
    /// Prompts with altered demonstrations are answered in the demonstration's
    /// format, following the shift the prompt describes.
    pub fn simulate_transcript(&self, example: &CipherExample, style: PromptStyle, temperature: f64) -> Result<String, SimError> {
        let style = match style {
            PromptStyle::Standard | PromptStyle::TextCot | PromptStyle::MathCot => style,
            PromptStyle::RandomCorrupted { .. } | PromptStyle::MismatchedDemo { format: DemoFormat::Text, .. } => PromptStyle::TextCot,
            PromptStyle::MismatchedDemo { format: DemoFormat::Math, .. } => PromptStyle::MathCot,
            other => return Err(SimError::UnsupportedStyle(other.name().to_string())),
        };
        let k = example.shift;
        let mut rng = self.rng_for(&example.id);
        let flip = (self.params.sampling_noise * temperature).clamp(0.0, 1.0);
        let mut chain = String::with_capacity(example.encoded.len());
        let mut lines = Vec::new();
        for (i, c) in example.encoded.chars().enumerate() {
            let applied = self.applied_shift(k, &mut rng);
            let mut out = cipher::decode(&c.to_string(), applied).expect("encoded text is letters").chars().next().expect("one letter");
            if flip > 0.0 && rng.random::<f64>() < flip {
                out = pos_letter(rng.random_range(0..ALPHABET_LEN));
            }
            chain.push(out);
            let p = letter_pos(c).expect("letter");
            lines.push(match style {
                PromptStyle::MathCot => format!("{}. {c} -> ({p} - {k}) mod 26 = {} -> {out}", i + 1, letter_pos(out).expect("letter")),
                _ => format!("{}. {c} -> {out}", i + 1),
            });
        }
        let answer = self.final_answer(&chain, &example.plaintext, k, &mut rng);
        let last = format!("Original text: \"{answer}\"");
        Ok(match style {
            PromptStyle::Standard => last,
            PromptStyle::MathCot => format!(
                "Using this,\n{}\nTherefore, the original text is: \"{chain}\"\n\n{last}",
                lines.join("\n")
            ),
            _ => format!(
                "To decode this message, we shift each letter {k} positions backward:\n{}\n{last}",
                lines.join("\n")
            ),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{classify, parse_transcript, shift_histogram};
    use approx::assert_abs_diff_eq;

    fn k(v: u8) -> ShiftLevel {
        ShiftLevel::new(v).unwrap()
    }

    fn example(word: &str, shift: u8) -> CipherExample {
        CipherExample::new(word, k(shift), 1, None).unwrap()
    }

    fn reasoner(params: SimParams, lexicon: Vec<(String, f64)>) -> Reasoner {
        let freq = FrequencyTable::from_csv_str(crate::data::SHIFT_FREQ_CSV).unwrap();
        Reasoner::new(params, freq, lexicon).unwrap()
    }

    #[test]
    fn noisy_curve_values() {
        let all: Vec<ShiftLevel> = ShiftLevel::probe_range().collect();
        let two = curve_noisy(0.98, 7, &all, true);
        assert_abs_diff_eq!(two[12].1, 0.98f64.powi(91), epsilon = 1e-15);
        assert!((two[12].1 - 0.159).abs() < 1e-3);
        for i in 0..25 {
            assert_eq!(two[i].1, two[24 - i].1);
        }
        for w in two[..13].windows(2) {
            assert!(w[0].1 >= w[1].1);
        }
        assert!(curve_noisy(1.0, 7, &all, false).iter().all(|&(_, a)| a == 1.0));
        let one = curve_noisy(0.98, 7, &all, false);
        assert!(one[24].1 < one[0].1);
        assert!(curve_symbolic(&all).iter().all(|&(_, a)| a == 1.0));
    }

    #[test]
    fn memorization_and_probabilistic_curves() {
        let all: Vec<ShiftLevel> = ShiftLevel::probe_range().collect();
        let freq = FrequencyTable::from_csv_str(crate::data::SHIFT_FREQ_CSV).unwrap();
        let memo = curve_memorization(&freq, &all, 0.4);
        let peak = memo.iter().cloned().fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b });
        assert_eq!(peak, (13, 0.4));
        let flat = curve_memorization(&FrequencyTable::uniform(), &all, 0.4);
        assert!(flat.iter().all(|&(_, a)| a == 0.4));
        let doubled = FrequencyTable::new((1..=25).map(|s| (s, 2.0 * freq.raw(s)))).unwrap();
        assert_eq!(curve_memorization(&doubled, &all, 0.4), memo);
        let (hi, lo) = curve_probabilistic(&vec![(1, 0.5), (2, 0.95)], 0.2);
        assert_abs_diff_eq!(hi[0].1, 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(lo[0].1, 0.3, epsilon = 1e-15);
        assert_eq!(hi[1].1, 1.0);
        assert_abs_diff_eq!(lo[1].1, 0.75, epsilon = 1e-15);
        let (a, b) = curve_probabilistic(&memo, 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_is_exact_and_deterministic() {
        let r = reasoner(SimParams::noiseless(), vec![]);
        for style in [PromptStyle::TextCot, PromptStyle::MathCot, PromptStyle::Standard] {
            for s in 1..26 {
                let ex = example("stay", s);
                let text = r.simulate_transcript(&ex, style, 0.0).unwrap();
                assert!(text.ends_with("Original text: \"stay\""));
                let p = parse_transcript(&ex.id, &text, style);
                let q = classify(&p, "stay", false);
                assert!(q.final_correct);
                assert_eq!(q.chain_correct, style != PromptStyle::Standard);
            }
        }
        let r = reasoner(SimParams::default(), vec![("stay".into(), -5.0)]);
        let ex = example("stay", 7);
        assert_eq!(
            r.simulate_transcript(&ex, PromptStyle::TextCot, 0.0).unwrap(),
            r.simulate_transcript(&ex, PromptStyle::TextCot, 0.0).unwrap()
        );
        assert!(matches!(r.simulate_transcript(&ex, PromptStyle::HiddenCot, 0.0), Err(SimError::UnsupportedStyle(_))));
    }

    #[test]
    fn altered_demos_answer_in_the_demo_format() {
        let r = reasoner(SimParams::noiseless(), vec![]);
        let ex = example("stay", 13);
        let text = |format| PromptStyle::MismatchedDemo { demo_shift: k(14), format };
        assert_eq!(
            r.simulate_transcript(&ex, text(DemoFormat::Text), 0.0).unwrap(),
            r.simulate_transcript(&ex, PromptStyle::TextCot, 0.0).unwrap()
        );
        assert_eq!(
            r.simulate_transcript(&ex, text(DemoFormat::Math), 0.0).unwrap(),
            r.simulate_transcript(&ex, PromptStyle::MathCot, 0.0).unwrap()
        );
        let corrupted = r.simulate_transcript(&ex, PromptStyle::RandomCorrupted { seed: 1 }, 0.0).unwrap();
        assert!(corrupted.starts_with("To decode this message"));
    }

    #[test]
    fn prior_pulls_a_near_miss_to_a_probable_word() {
        let params = SimParams {
            prior_strength: 50.0,
            memo_ceiling: 0.0,
            oov_logprob: Some(-40.0),
            ..SimParams::default()
        };
        let r = reasoner(params, vec![("stay".into(), -3.0), ("play".into(), -4.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(r.final_answer("staz", "stay", k(13), &mut rng), "stay");
        let r0 = reasoner(SimParams { prior_strength: 0.0, memo_ceiling: 0.0, ..SimParams::default() }, vec![]);
        assert_eq!(r0.final_answer("staz", "stay", k(13), &mut rng), "staz");
    }

    #[test]
    fn complement_noise_gives_two_modes() {
        let params = SimParams {
            eps_complement: 0.3,
            ..SimParams::default()
        };
        let r = reasoner(params, vec![("example".into(), -10.0)]);
        for s in [6u8, 20] {
            let parsed: Vec<_> = (0..1500)
                .map(|i| {
                    let mut ex = example("example", s);
                    ex.id = format!("{}-{i}", ex.id);
                    parse_transcript(&ex.id, &r.simulate_transcript(&ex, PromptStyle::TextCot, 0.0).unwrap(), PromptStyle::TextCot)
                })
                .collect();
            let h = shift_histogram(&parsed);
            let modes = h.modes();
            let mut top = [modes[0], modes[1]];
            top.sort();
            let mut want = [s, 26 - s];
            want.sort();
            assert_eq!(top, want);
        }
    }

    #[test]
    fn temperature_adds_noise() {
        let params = SimParams {
            sampling_noise: 1.0,
            ..SimParams::noiseless()
        };
        let r = reasoner(params, vec![]);
        let wrong = (0..200)
            .filter(|i| {
                let mut ex = example("example", 3);
                ex.id = format!("t{i}");
                let text = r.simulate_transcript(&ex, PromptStyle::TextCot, 1.0).unwrap();
                !text.ends_with("\"example\"")
            })
            .count();
        assert!(wrong > 150);
    }

    #[test]
    fn rejects_bad_params() {
        let freq = FrequencyTable::uniform();
        assert!(Reasoner::new(SimParams { q: 0.0, ..SimParams::default() }, freq.clone(), vec![("a".into(), -1.0)]).is_err());
        assert!(Reasoner::new(SimParams::default(), freq, vec![]).is_err());
    }
}
