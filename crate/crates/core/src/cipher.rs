//! Shift-cipher arithmetic over the 26-letter lowercase alphabet.
//!
//! Encoding moves every letter `k` positions forward, decoding moves it back.
//! Input is case-insensitive; output is always lowercase. Anything that is not
//! an ASCII letter is rejected.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ALPHABET_LEN: u8 = 26;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CipherError {
    #[error("invalid letter {0:?}: only ASCII a-z / A-Z are accepted")]
    InvalidLetter(char),
    #[error("shift level {0} is outside 0..=25")]
    InvalidShift(i64),
    #[error("empty text")]
    EmptyText,
}

/// A shift level in `0..=25`. Probes use `1..=25`; zero exists for identity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ShiftLevel(u8);

impl ShiftLevel {
    pub fn new(k: u8) -> Result<Self, CipherError> {
        if k < ALPHABET_LEN {
            Ok(Self(k))
        } else {
            Err(CipherError::InvalidShift(k as i64))
        }
    }

    /// Reduces any integer into `0..=25`.
    pub fn wrapping(k: i64) -> Self {
        Self(k.rem_euclid(ALPHABET_LEN as i64) as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// `26 - k`, reduced so that the complement of 0 is 0.
    pub fn complement(self) -> Self {
        Self::wrapping(ALPHABET_LEN as i64 - self.0 as i64)
    }

    pub fn min_steps(self) -> u8 {
        min_steps(self)
    }

    /// All probe shifts, 1 through 25.
    pub fn probe_range() -> impl Iterator<Item = ShiftLevel> {
        (1..ALPHABET_LEN).map(ShiftLevel)
    }
}

impl TryFrom<u8> for ShiftLevel {
    type Error = CipherError;
    fn try_from(k: u8) -> Result<Self, Self::Error> {
        Self::new(k)
    }
}

impl From<ShiftLevel> for u8 {
    fn from(k: ShiftLevel) -> u8 {
        k.0
    }
}

impl fmt::Display for ShiftLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// 0-based alphabet position: `a -> 0` ... `z -> 25`.
pub fn letter_pos(c: char) -> Result<u8, CipherError> {
    if c.is_ascii_alphabetic() {
        Ok(c.to_ascii_lowercase() as u8 - b'a')
    } else {
        Err(CipherError::InvalidLetter(c))
    }
}

/// Inverse of [`letter_pos`]; `pos` is reduced mod 26.
pub fn pos_letter(pos: u8) -> char {
    (b'a' + pos % ALPHABET_LEN) as char
}

fn shift_text(text: &str, delta: i64) -> Result<String, CipherError> {
    if text.is_empty() {
        return Err(CipherError::EmptyText);
    }
    text.chars()
        .map(|c| {
            let p = letter_pos(c)? as i64;
            Ok(pos_letter((p + delta).rem_euclid(ALPHABET_LEN as i64) as u8))
        })
        .collect()
}

pub fn encode(text: &str, k: ShiftLevel) -> Result<String, CipherError> {
    shift_text(text, k.0 as i64)
}

pub fn decode(text: &str, k: ShiftLevel) -> Result<String, CipherError> {
    shift_text(text, -(k.0 as i64))
}

/// The backward shift `b` that turns `input` into `output`,
/// i.e. `(pos(input) - pos(output)) mod 26`.
pub fn infer_step_shift(input: char, output: char) -> Result<ShiftLevel, CipherError> {
    let i = letter_pos(input)? as i64;
    let o = letter_pos(output)? as i64;
    Ok(ShiftLevel::wrapping(i - o))
}

/// Fewest single-letter moves needed per letter when decoding may go either way.
pub fn min_steps(k: ShiftLevel) -> u8 {
    k.0.min(ALPHABET_LEN - k.0)
}

/// Comma-separated alphabet positions, e.g. `"stay" -> "18,19,0,24"`.
pub fn positions_csv(word: &str) -> Result<String, CipherError> {
    let parts: Result<Vec<String>, _> = word.chars().map(|c| letter_pos(c).map(|p| p.to_string())).collect();
    Ok(parts?.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: u8) -> ShiftLevel {
        ShiftLevel::new(v).unwrap()
    }

    #[test]
    fn letter_positions() {
        assert_eq!(letter_pos('a').unwrap(), 0);
        assert_eq!(letter_pos('f').unwrap(), 5);
        assert_eq!(letter_pos('Z').unwrap(), 25);
        for p in 0..26 {
            assert_eq!(letter_pos(pos_letter(p)).unwrap(), p);
        }
        assert_eq!(letter_pos('!'), Err(CipherError::InvalidLetter('!')));
    }

    #[test]
    fn encode_decode_known_pairs() {
        assert_eq!(encode("stay", k(13)).unwrap(), "fgnl");
        assert_eq!(encode("stay", k(14)).unwrap(), "ghom");
        assert_eq!(encode("cat", k(0)).unwrap(), "cat");
        assert_eq!(decode("fdw", k(3)).unwrap(), "cat");
        assert_eq!(decode("FDW", k(3)).unwrap(), "cat");
        assert_eq!(encode("fgnl", k(13)).unwrap(), "stay");
    }

    #[test]
    fn rejects_non_letters() {
        assert_eq!(encode("st ay", k(1)), Err(CipherError::InvalidLetter(' ')));
        assert_eq!(decode("a1", k(1)), Err(CipherError::InvalidLetter('1')));
        assert_eq!(encode("", k(1)), Err(CipherError::EmptyText));
        assert!(ShiftLevel::new(26).is_err());
    }

    #[test]
    fn step_shift_inference() {
        assert_eq!(infer_step_shift('f', 's').unwrap(), k(13));
        assert_eq!(infer_step_shift('b', 'a').unwrap(), k(1));
        assert_eq!(infer_step_shift('a', 'b').unwrap(), k(25));
        // brute force: exactly one backward shift maps f to s
        let hits: Vec<u8> = (0..26).filter(|&b| decode("f", k(b)).unwrap() == "s").collect();
        assert_eq!(hits, vec![13]);
    }

    #[test]
    fn min_steps_values() {
        assert_eq!(min_steps(k(13)), 13);
        assert_eq!(min_steps(k(25)), 1);
        assert_eq!(min_steps(k(4)), 4);
        assert_eq!(min_steps(k(0)), 0);
    }

    #[test]
    fn positions() {
        assert_eq!(positions_csv("stay").unwrap(), "18,19,0,24");
        assert_eq!(positions_csv("fgnl").unwrap(), "5,6,13,11");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(w in "[a-zA-Z]{1,20}", s in 0u8..26) {
                let enc = encode(&w, k(s)).unwrap();
                prop_assert_eq!(decode(&enc, k(s)).unwrap(), w.to_ascii_lowercase());
            }

            #[test]
            fn encode_is_decode_by_complement(w in "[a-z]{1,20}", s in 0u8..26) {
                prop_assert_eq!(encode(&w, k(s)).unwrap(), decode(&w, k(s).complement()).unwrap());
            }

            #[test]
            fn min_steps_symmetric(s in 0u8..26) {
                prop_assert_eq!(min_steps(k(s)), min_steps(k(s).complement()));
            }

            #[test]
            fn inferred_shift_is_unique(i in 0u8..26, o in 0u8..26) {
                let (ci, co) = (pos_letter(i), pos_letter(o));
                let b = infer_step_shift(ci, co).unwrap();
                let all: Vec<u8> = (0..26)
                    .filter(|&x| decode(&ci.to_string(), k(x)).unwrap() == co.to_string())
                    .collect();
                prop_assert_eq!(all, vec![b.get()]);
            }
        }
    }
}
