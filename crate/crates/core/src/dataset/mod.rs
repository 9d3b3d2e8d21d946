//! Word dataset construction: candidate enumeration from a BPE vocabulary,
//! scoring, probability binning, eval/heldout splits and cipher examples.

pub mod binning;
pub mod frequency;
pub mod scorer;
pub mod tokenizer;

use std::collections::BTreeSet;

pub use binning::{bin_centers, bin_words, build_examples, example_id, split_bins, BinningError, CipherExample, Split, WordRecord};
pub use frequency::{FrequencyError, FrequencyTable};
pub use scorer::{score_word, score_words, CharNgramScorer, HttpScorer, Scorer, ScorerError, UniformScorer, SCORING_PREFIX};
pub use tokenizer::{Tokenizer, TokenizerError, DEFAULT_MARKER};

pub const PREFIX_LEN: usize = 3;
pub const SUFFIX_LEN: usize = 4;

fn lower_alpha(s: &str, len: usize) -> bool {
    s.len() == len && s.chars().all(|c| c.is_ascii_lowercase())
}

/// Seven-letter words made of a 3-letter word-initial token followed by a
/// 4-letter non-word-initial token, kept only if the word is exactly two
/// tokens right after the opening quote of the scoring context.
///
/// Sorted and deduplicated.
pub fn enumerate_candidates(tokenizer: &Tokenizer) -> Result<Vec<String>, TokenizerError> {
    if tokenizer.vocab_size() == 0 {
        return Err(TokenizerError::EmptyVocabulary);
    }
    let marker = tokenizer.marker();
    let mut heads = BTreeSet::new();
    let mut tails = BTreeSet::new();
    for (tok, _) in tokenizer.vocabulary() {
        if let Some(rest) = tok.strip_prefix(marker) {
            if lower_alpha(rest, PREFIX_LEN) {
                heads.insert(rest.to_string());
            }
        } else if lower_alpha(tok, SUFFIX_LEN) {
            tails.insert(tok.to_string());
        }
    }
    let mut out = Vec::new();
    for h in &heads {
        for t in &tails {
            let word = format!("{h}{t}");
            if tokenizer.count_in_context(SCORING_PREFIX, &word)? == Some(2) {
                out.push(word);
            }
        }
    }
    Ok(out)
}

/// Drops words found in a newline-separated blocklist (case-insensitive,
/// `#` comments allowed).
pub fn apply_blocklist(words: Vec<String>, blocklist: &str) -> Vec<String> {
    let blocked: BTreeSet<String> = blocklist
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim().to_ascii_lowercase())
        .filter(|l| !l.is_empty())
        .collect();
    words.into_iter().filter(|w| !blocked.contains(w)).collect()
}
