use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn cotprobe(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotprobe"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cotprobe(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, "[dataset]\neval_per_bin = 8\nheldout_per_bin = 4\nshifts = [1, 4, 13, 14, 20, 25]\n").unwrap();
    path.display().to_string()
}

fn transcripts(path: &Path) -> Vec<serde_json::Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let text = ok(&out, &["--config", &cfg, "build-dataset"]);
    assert!(text.contains("60 words kept"), "{text}");
    let text = ok(&out, &["--config", &cfg, "probe", "--provider", "simulator", "--style", "text-cot"]);
    assert!(text.contains("text-cot t=0: 360 transcripts"), "{text}");
    let text = ok(&out, &["--config", &cfg, "analyze"]);
    assert!(text.contains("n=240"), "{text}");
    let text = ok(&out, &["--config", &cfg, "fit"]);
    assert!(text.contains("min_steps") && text.contains("heldout n=120"), "{text}");
    ok(&out, &["curves"]);
    assert!(out.join("curves/noisy_two_way.csv").exists());
    assert!(out.join("runs/text-cot/t0/fit_report.json").exists());
}

#[test]
fn resume_issues_only_missing_requests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    ok(&out, &["--config", &cfg, "build-dataset"]);
    ok(&out, &["--config", &cfg, "probe", "--shifts", "1,13"]);
    let store = out.join("runs/text-cot/t0/transcripts.jsonl");
    let all = fs::read_to_string(&store).unwrap();
    let kept: Vec<&str> = all.lines().take(100).collect();
    fs::write(&store, kept.join("\n") + "\n").unwrap();
    let text = ok(&out, &["--config", &cfg, "probe", "--shifts", "1,13", "--resume"]);
    assert!(text.contains("120 transcripts (20 requested, 100 reused)"), "{text}");
    let text = ok(&out, &["--config", &cfg, "probe", "--shifts", "1,13", "--no-resume"]);
    assert!(text.contains("(120 requested, 0 reused)"), "{text}");
}

#[test]
fn mismatched_style_sends_the_rot13_description_with_rot14_demo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    ok(&out, &["--config", &cfg, "build-dataset"]);
    ok(&out, &["--config", &cfg, "probe", "--style", "mismatched", "--demo-shift", "14", "--shifts", "13", "--bins", "1"]);
    let rows = transcripts(&out.join("runs/mismatched/t0/transcripts.jsonl"));
    assert_eq!(rows.len(), 12);
    let fixture = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/prompts/mismatched_text.txt")).unwrap();
    let examples = fs::read_to_string(out.join("dataset/examples_eval.jsonl")).unwrap();
    let mut checked = 0;
    for row in &rows {
        let id = row["example_id"].as_str().unwrap();
        let Some(line) = examples.lines().find(|l| l.contains(&format!("\"{id}\""))) else { continue };
        let ex: serde_json::Value = serde_json::from_str(line).unwrap();
        let prompt = fixture.replace("<test_input>", &format!("\"{}\"", ex["encoded"].as_str().unwrap()));
        assert_eq!(row["prompt_hash"], hex::encode(Sha256::digest(prompt.as_bytes())));
        checked += 1;
    }
    assert_eq!(checked, 8);
}

#[test]
fn errors_are_actionable_and_exit_non_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cotprobe(&out, &["probe"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("build-dataset"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[dataset]\nvocab = \"missing.json\"\nmerges = \"missing.txt\"\n").unwrap();
    let o = cotprobe(&out, &["--config", bad.to_str().unwrap(), "build-dataset"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dataset.vocab"));

    let o = cotprobe(&out, &["probe", "--style", "nonsense"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("probe.styles"));

    let o = cotprobe(&out, &["probe", "--shifts", "9-3"]);
    assert!(!o.status.success());
}

#[test]
fn replay_provider_serves_a_previous_store() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&a, &["--config", &cfg, "build-dataset"]);
    ok(&a, &["--config", &cfg, "probe", "--shifts", "4"]);
    ok(&b, &["--config", &cfg, "build-dataset"]);
    let cache = a.join("runs/text-cot/t0/transcripts.jsonl");
    ok(&b, &["--config", &cfg, "probe", "--shifts", "4", "--provider", "replay", "--cache", cache.to_str().unwrap()]);
    let key = |v: &serde_json::Value| (v["example_id"].to_string(), v["raw_response"].to_string());
    let mut left: Vec<_> = transcripts(&cache).iter().map(key).collect();
    let mut right: Vec<_> = transcripts(&b.join("runs/text-cot/t0/transcripts.jsonl")).iter().map(key).collect();
    left.sort();
    right.sort();
    assert_eq!(left, right);
}

#[test]
fn seed_flag_changes_simulated_responses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&out, &["--config", &cfg, "--seed", seed, "build-dataset"]);
        ok(&out, &["--config", &cfg, "--seed", seed, "probe", "--shifts", "13"]);
        let mut v: Vec<String> = transcripts(&out.join("runs/text-cot/t0/transcripts.jsonl"))
            .iter()
            .map(|t| t["raw_response"].to_string())
            .collect();
        v.sort();
        v
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_ne!(a, run("c", "2"));
}
