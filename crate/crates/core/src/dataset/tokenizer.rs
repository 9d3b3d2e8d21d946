//! File-driven byte-pair-encoding tokenizer.
//!
//! The vocabulary is a JSON object `token -> id`; merges are a plain-text list
//! of `left right` pairs in priority order (a `#version` header line is
//! skipped). Spaces are folded into a word-boundary marker that prefixes the
//! following token, GPT-2 style, so a token "carrying the marker" is a
//! word-initial token.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use thiserror::Error;

/// GPT-2's visible-space marker.
pub const DEFAULT_MARKER: &str = "\u{120}";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vocabulary is not a JSON object of token -> id: {0}")]
    BadVocabulary(#[from] serde_json::Error),
    #[error("merges line {line}: expected two space-separated symbols, got {text:?}")]
    BadMerge { line: usize, text: String },
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    id_to_token: HashMap<u32, String>,
    merge_ranks: HashMap<(String, String), usize>,
    marker: String,
    pretokenizer: Regex,
}

impl Tokenizer {
    pub fn from_files(
        vocab_path: impl AsRef<Path>,
        merges_path: impl AsRef<Path>,
        marker: &str,
    ) -> Result<Self, TokenizerError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| TokenizerError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let vocab = read(vocab_path.as_ref())?;
        let merges = read(merges_path.as_ref())?;
        Self::from_strs(&vocab, &merges, marker)
    }

    pub fn from_strs(vocab_json: &str, merges_txt: &str, marker: &str) -> Result<Self, TokenizerError> {
        let vocab: HashMap<String, u32> = serde_json::from_str(vocab_json)?;
        if vocab.is_empty() {
            return Err(TokenizerError::EmptyVocabulary);
        }
        let mut merge_ranks = HashMap::new();
        let mut rank = 0;
        for (i, line) in merges_txt.lines().enumerate() {
            if line.starts_with("#version") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merge_ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
                    rank += 1;
                }
                _ => {
                    return Err(TokenizerError::BadMerge {
                        line: i + 1,
                        text: line.to_string(),
                    })
                }
            }
        }
        let id_to_token = vocab.iter().map(|(t, &id)| (id, t.clone())).collect();
        Ok(Self {
            vocab,
            id_to_token,
            merge_ranks,
            marker: marker.to_string(),
            pretokenizer: Regex::new(r" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+").expect("static regex"),
        })
    }

    pub fn marker(&self) -> &str {
        &self.marker
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// All vocabulary entries, sorted by id.
    pub fn vocabulary(&self) -> Vec<(&str, u32)> {
        let mut v: Vec<_> = self.vocab.iter().map(|(t, &id)| (t.as_str(), id)).collect();
        v.sort_by_key(|&(_, id)| id);
        v
    }

    pub fn is_word_initial(&self, token: &str) -> bool {
        token.starts_with(&self.marker)
    }

    /// Splits text into pre-token chunks with spaces replaced by the marker.
    fn chunks<'a>(&'a self, text: &'a str) -> impl Iterator<Item = String> + 'a {
        self.pretokenizer
            .find_iter(text)
            .map(|m| m.as_str().replace(' ', &self.marker))
    }

    fn bpe(&self, chunk: &str) -> Vec<String> {
        let mut symbols: Vec<String> = chunk.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len()
                    && self.merge_ranks.get(&(symbols[i].clone(), symbols[i + 1].clone())) == Some(&rank)
                {
                    merged.push(format!("{}{}", symbols[i], symbols[i + 1]));
                    i += 2;
                } else {
                    merged.push(symbols[i].clone());
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }

    /// Token strings for `text`.
    pub fn tokens(&self, text: &str) -> Result<Vec<String>, TokenizerError> {
        let mut out = Vec::new();
        for chunk in self.chunks(text) {
            for sym in self.bpe(&chunk) {
                if !self.vocab.contains_key(&sym) {
                    return Err(TokenizerError::UnknownSymbol(sym));
                }
                out.push(sym);
            }
        }
        Ok(out)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>, TokenizerError> {
        Ok(self.tokens(text)?.iter().map(|t| self.vocab[t]).collect())
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut s = String::new();
        for id in ids {
            let t = self.id_to_token.get(id).ok_or(TokenizerError::UnknownId(*id))?;
            s.push_str(t);
        }
        Ok(s.replace(&self.marker, " "))
    }

    /// Number of tokens `word` contributes when appended to `prefix`.
    ///
    /// Returns `None` when the prefix's own tokenization does not survive the
    /// append (a merge crossed the boundary), since the word then has no
    /// well-defined token count in that context.
    pub fn count_in_context(&self, prefix: &str, word: &str) -> Result<Option<usize>, TokenizerError> {
        let head = self.tokenize(prefix)?;
        let full = self.tokenize(&format!("{prefix}{word}"))?;
        if full.len() < head.len() || full[..head.len()] != head[..] {
            return Ok(None);
        }
        Ok(Some(full.len() - head.len()))
    }
}
