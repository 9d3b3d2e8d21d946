//! Probability bins, eval/heldout splits and cipher-example expansion.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cipher::{self, CipherError, ShiftLevel};

#[derive(Debug, Error)]
pub enum BinningError {
    #[error("need at least {need} scored words for binning, have {have}")]
    InsufficientCandidates { need: usize, have: usize },
    #[error("bin {bin} holds {have} words, expected {need}")]
    SplitSizeMismatch { bin: u8, have: usize, need: usize },
    #[error("non-finite log probability for {0:?}")]
    NonFinite(String),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Eval,
    Heldout,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Eval => "eval",
            Split::Heldout => "heldout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordRecord {
    pub word: String,
    pub logprob: f64,
    /// 1 is the highest-probability bin.
    pub bin: u8,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherExample {
    pub id: String,
    #[serde(rename = "word")]
    pub plaintext: String,
    pub bin: u8,
    pub split: Option<Split>,
    pub shift: ShiftLevel,
    pub encoded: String,
}

impl CipherExample {
    pub fn new(plaintext: &str, shift: ShiftLevel, bin: u8, split: Option<Split>) -> Result<Self, CipherError> {
        let plaintext = plaintext.to_ascii_lowercase();
        let encoded = cipher::encode(&plaintext, shift)?;
        Ok(Self {
            id: example_id(&plaintext, shift, bin),
            plaintext,
            bin,
            split,
            shift,
            encoded,
        })
    }
}

/// `b{bin}-{word}-k{shift:02}`; sorts by bin, then word, then shift.
pub fn example_id(word: &str, shift: ShiftLevel, bin: u8) -> String {
    format!("b{bin}-{word}-k{:02}", shift.get())
}

/// Descending by log probability, ties by word.
fn by_score_desc(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Equidistant centers from `max` down to `min`.
pub fn bin_centers(max: f64, min: f64, n_bins: usize) -> Vec<f64> {
    if n_bins <= 1 {
        return vec![max; n_bins];
    }
    let step = (max - min) / (n_bins - 1) as f64;
    (0..n_bins).map(|i| max - step * i as f64).collect()
}

/// Bin indices from the outside in: 0, n-1, 1, n-2, ...
pub fn fill_order(n_bins: usize) -> Vec<usize> {
    let (mut lo, mut hi) = (0, n_bins);
    let mut out = Vec::with_capacity(n_bins);
    while lo < hi {
        out.push(lo);
        lo += 1;
        if lo < hi {
            hi -= 1;
            out.push(hi);
        }
    }
    out
}

/// Each bin takes the `per_bin` unused words nearest its center (distance
/// ties broken by word). Bins are filled from the outside in, so the sparse
/// extreme bins are not left with words from the middle of the range.
pub fn bin_words(scored: &[(String, f64)], n_bins: usize, per_bin: usize) -> Result<Vec<WordRecord>, BinningError> {
    let need = n_bins * per_bin;
    if scored.len() < need {
        return Err(BinningError::InsufficientCandidates {
            need,
            have: scored.len(),
        });
    }
    if let Some((w, _)) = scored.iter().find(|(_, lp)| !lp.is_finite()) {
        return Err(BinningError::NonFinite(w.clone()));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(by_score_desc);
    let max = sorted.first().map(|s| s.1).unwrap_or(0.0);
    let min = sorted.last().map(|s| s.1).unwrap_or(0.0);

    let mut used = vec![false; sorted.len()];
    let mut out = Vec::with_capacity(need);
    let centers = bin_centers(max, min, n_bins);
    for b in fill_order(n_bins) {
        let center = centers[b];
        let mut pool: Vec<usize> = (0..sorted.len()).filter(|&i| !used[i]).collect();
        pool.sort_by(|&i, &j| {
            let di = (sorted[i].1 - center).abs();
            let dj = (sorted[j].1 - center).abs();
            di.total_cmp(&dj).then_with(|| sorted[i].0.cmp(&sorted[j].0))
        });
        let mut chosen: Vec<usize> = pool.into_iter().take(per_bin).collect();
        chosen.sort_unstable();
        for i in chosen {
            used[i] = true;
            out.push(WordRecord {
                word: sorted[i].0.clone(),
                logprob: sorted[i].1,
                bin: b as u8 + 1,
                split: None,
            });
        }
    }
    Ok(out)
}

fn split_key(word: &str) -> [u8; 32] {
    Sha256::digest(word.as_bytes()).into()
}

/// Within each bin, orders words by SHA-256 of the word and labels the first
/// `eval_per_bin` as eval and the rest as heldout.
pub fn split_bins(records: &[WordRecord], eval_per_bin: usize, heldout_per_bin: usize) -> Result<Vec<WordRecord>, BinningError> {
    let mut bins: Vec<u8> = records.iter().map(|r| r.bin).collect();
    bins.sort_unstable();
    bins.dedup();
    let need = eval_per_bin + heldout_per_bin;
    let mut out = Vec::with_capacity(records.len());
    for bin in bins {
        let mut members: Vec<&WordRecord> = records.iter().filter(|r| r.bin == bin).collect();
        if members.len() != need {
            return Err(BinningError::SplitSizeMismatch {
                bin,
                have: members.len(),
                need,
            });
        }
        members.sort_by(|a, b| split_key(&a.word).cmp(&split_key(&b.word)).then_with(|| a.word.cmp(&b.word)));
        for (i, r) in members.into_iter().enumerate() {
            let mut r = r.clone();
            r.split = Some(if i < eval_per_bin { Split::Eval } else { Split::Heldout });
            out.push(r);
        }
    }
    Ok(out)
}

/// One example per (record, shift), sorted by id.
pub fn build_examples(records: &[WordRecord], shifts: &[ShiftLevel]) -> Result<Vec<CipherExample>, BinningError> {
    let mut out = Vec::with_capacity(records.len() * shifts.len());
    for r in records {
        for &k in shifts {
            out.push(CipherExample::new(&r.word, k, r.bin, r.split)?);
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize) -> Vec<(String, f64)> {
        (0..n).map(|i| (format!("w{i:04}"), -(i as f64))).collect()
    }

    /// Independent oracle: repeated linear scans for the nearest unused word.
    fn oracle(scored: &[(String, f64)], n_bins: usize, per_bin: usize) -> Vec<(String, u8)> {
        let max = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let min = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let mut used = vec![false; scored.len()];
        let mut out = Vec::new();
        let mut order: Vec<usize> = (0..n_bins).collect();
        order.sort_by_key(|&b| b.min(n_bins - 1 - b) * 2 + usize::from(b >= n_bins - b));
        for b in order {
            let c = if n_bins == 1 { max } else { max - (max - min) * b as f64 / (n_bins - 1) as f64 };
            for _ in 0..per_bin {
                let mut best: Option<usize> = None;
                for i in 0..scored.len() {
                    if used[i] {
                        continue;
                    }
                    best = match best {
                        None => Some(i),
                        Some(j) => {
                            let (di, dj) = ((scored[i].1 - c).abs(), (scored[j].1 - c).abs());
                            if di < dj || (di == dj && scored[i].0 < scored[j].0) {
                                Some(i)
                            } else {
                                Some(j)
                            }
                        }
                    };
                }
                let i = best.unwrap();
                used[i] = true;
                out.push((scored[i].0.clone(), b as u8 + 1));
            }
        }
        out.sort();
        out
    }

    #[test]
    fn equidistant_centers() {
        let c = bin_centers(0.0, -749.0, 5);
        assert_eq!(c, vec![0.0, -187.25, -374.5, -561.75, -749.0]);
    }

    #[test]
    fn five_bins_of_150_match_oracle() {
        let scored = synthetic(750);
        let recs = bin_words(&scored, 5, 150).unwrap();
        assert_eq!(recs.len(), 750);
        for b in 1..=5 {
            assert_eq!(recs.iter().filter(|r| r.bin == b).count(), 150);
        }
        let mut got: Vec<(String, u8)> = recs.iter().map(|r| (r.word.clone(), r.bin)).collect();
        got.sort();
        assert_eq!(got, oracle(&scored, 5, 150));
    }

    #[test]
    fn oversupplied_pool_matches_oracle() {
        let scored: Vec<(String, f64)> = (0..1200)
            .map(|i| (format!("x{:04}", (i * 7919) % 1200), -((i as f64) * 0.37).powf(1.3)))
            .collect();
        let recs = bin_words(&scored, 5, 150).unwrap();
        let mut got: Vec<(String, u8)> = recs.iter().map(|r| (r.word.clone(), r.bin)).collect();
        got.sort();
        assert_eq!(got, oracle(&scored, 5, 150));
        // bin 1 holds the top-scoring word
        let top = scored.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(recs.iter().find(|r| r.word == top.0).unwrap().bin, 1);
    }

    #[test]
    fn identical_scores_use_word_order() {
        let scored: Vec<(String, f64)> = (0..750).map(|i| (format!("w{i:04}"), -3.0)).collect();
        let recs = bin_words(&scored, 5, 150).unwrap();
        for b in 1..=5u8 {
            let words: Vec<&str> = recs.iter().filter(|r| r.bin == b).map(|r| r.word.as_str()).collect();
            assert_eq!(words.len(), 150);
            let slot = [0, 2, 4, 3, 1][b as usize - 1];
            assert_eq!(words[0], format!("w{:04}", slot * 150));
        }
    }

    #[test]
    fn fill_order_alternates_ends() {
        assert_eq!(fill_order(5), vec![0, 4, 1, 3, 2]);
        assert_eq!(fill_order(4), vec![0, 3, 1, 2]);
        assert_eq!(fill_order(1), vec![0]);
    }

    #[test]
    fn sparse_tail_keeps_bins_ordered() {
        // a dense body with a thin low tail and one extreme outlier
        let mut scored: Vec<(String, f64)> = (0..1500).map(|i| (format!("d{i:04}"), -10.0 - (i as f64) * 0.02)).collect();
        scored.extend((0..200).map(|i| (format!("t{i:04}"), -45.0 - (i as f64) * 0.1)));
        scored.push(("zzzzzzz".into(), -100.0));
        let recs = bin_words(&scored, 5, 150).unwrap();
        let median = |b: u8| {
            let mut v: Vec<f64> = recs.iter().filter(|r| r.bin == b).map(|r| r.logprob).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        for b in 1..5 {
            assert!(median(b) > median(b + 1), "bin {b}");
        }
        let mut got: Vec<(String, u8)> = recs.iter().map(|r| (r.word.clone(), r.bin)).collect();
        got.sort();
        assert_eq!(got, oracle(&scored, 5, 150));
    }

    #[test]
    fn too_few_words() {
        let err = bin_words(&synthetic(749), 5, 150).unwrap_err();
        assert!(matches!(err, BinningError::InsufficientCandidates { need: 750, have: 749 }));
    }

    #[test]
    fn splits_partition_each_bin() {
        let recs = split_bins(&bin_words(&synthetic(750), 5, 150).unwrap(), 100, 50).unwrap();
        assert_eq!(recs.iter().filter(|r| r.split == Some(Split::Eval)).count(), 500);
        for b in 1..=5 {
            let eval = recs.iter().filter(|r| r.bin == b && r.split == Some(Split::Eval)).count();
            let held = recs.iter().filter(|r| r.bin == b && r.split == Some(Split::Heldout)).count();
            assert_eq!((eval, held), (100, 50));
        }
        let mut words: Vec<&str> = recs.iter().map(|r| r.word.as_str()).collect();
        words.sort();
        words.dedup();
        assert_eq!(words.len(), 750);
    }

    #[test]
    fn split_requires_exact_bin_size() {
        let recs = bin_words(&synthetic(750), 5, 150).unwrap();
        let err = split_bins(&recs[..749], 100, 50).unwrap_err();
        assert!(matches!(err, BinningError::SplitSizeMismatch { .. }));
    }

    #[test]
    fn examples_expand_and_round_trip() {
        let recs = vec![WordRecord {
            word: "stay".into(),
            logprob: -1.0,
            bin: 1,
            split: Some(Split::Eval),
        }];
        let shifts: Vec<ShiftLevel> = ShiftLevel::probe_range().collect();
        let ex = build_examples(&recs, &shifts).unwrap();
        assert_eq!(ex.len(), 25);
        let e13 = ex.iter().find(|e| e.shift.get() == 13).unwrap();
        assert_eq!(e13.encoded, "fgnl");
        assert_eq!(e13.id, "b1-stay-k13");
        for e in &ex {
            assert_eq!(cipher::decode(&e.encoded, e.shift).unwrap(), e.plaintext);
        }
    }

    #[test]
    fn example_json_field_names() {
        let e = CipherExample::new("stay", ShiftLevel::new(13).unwrap(), 2, Some(Split::Heldout)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        keys.sort();
        assert_eq!(keys, vec!["bin", "encoded", "id", "shift", "split", "word"]);
        assert_eq!(v["split"], "heldout");
        assert_eq!(v["shift"], 13);
    }

    proptest! {
        #[test]
        fn monotone_transform_keeps_bins(seed in 0u64..1000) {
            let scored: Vec<(String, f64)> = (0..60)
                .map(|i| (format!("w{i:02}"), -(((i as u64 * 31 + seed) % 97) as f64)))
                .collect();
            let a = bin_words(&scored, 3, 20).unwrap();
            let shifted: Vec<(String, f64)> = scored.iter().map(|(w, s)| (w.clone(), 2.0 * s - 5.0)).collect();
            let b = bin_words(&shifted, 3, 20).unwrap();
            let pa: Vec<(&str, u8)> = a.iter().map(|r| (r.word.as_str(), r.bin)).collect();
            let pb: Vec<(&str, u8)> = b.iter().map(|r| (r.word.as_str(), r.bin)).collect();
            prop_assert_eq!(pa, pb);
        }
    }
}
