//! Stand-in inputs compiled into the library so the pipeline runs offline.
//!
//! None of these are ground truth: the vocabulary is a small synthetic BPE
//! table, the word list trains a character n-gram scorer, and the shift
//! frequencies only preserve the ordering (13 first, then 1 and 3).
//! Regenerate with `scripts/make_data.py`.

pub const VOCAB_JSON: &str = include_str!("../../../data/vocab.json");
pub const MERGES_TXT: &str = include_str!("../../../data/merges.txt");
pub const WORDFREQ_TSV: &str = include_str!("../../../data/wordfreq_en.tsv");
pub const SHIFT_FREQ_CSV: &str = include_str!("../../../data/shift_freq.csv");
