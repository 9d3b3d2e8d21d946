#![allow(dead_code)]

use std::path::PathBuf;

use cotprobe::analysis::{self, Confusion, Judged};
use cotprobe::backend::{read_transcripts, Transcript};
use cotprobe::pipeline::example_from_id;
use cotprobe::prompt::PromptStyle;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn quadrant_store() -> PathBuf {
    fixture("quadrants/transcripts.jsonl")
}

/// (shift, group, cc, ci, ic, ii) for the four reference matrices.
pub const QUADRANTS: [(u8, &str, [usize; 4]); 4] = [
    (4, "high", [19, 7, 34, 40]),
    (13, "high", [15, 1, 55, 29]),
    (4, "low", [7, 14, 1, 78]),
    (13, "low", [7, 9, 19, 65]),
];

pub fn quadrant_transcripts() -> Vec<Transcript> {
    read_transcripts(&quadrant_store()).expect("fixture store")
}

pub fn quadrant_judged() -> Vec<Judged> {
    quadrant_transcripts()
        .iter()
        .map(|t| {
            let example = example_from_id(&t.example_id).expect("fixture id");
            let parsed = analysis::parse_transcript(&t.example_id, &t.raw_response, PromptStyle::TextCot);
            analysis::judge(&parsed, &example, PromptStyle::TextCot)
        })
        .collect()
}

pub fn confusion(counts: [usize; 4]) -> Confusion {
    Confusion {
        cc: counts[0],
        ci: counts[1],
        ic: counts[2],
        ii: counts[3],
    }
}
