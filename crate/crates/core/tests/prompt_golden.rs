use cotprobe::cipher::ShiftLevel;
use cotprobe::prompt::{render, DemoFormat, PromptStyle, DEFAULT_CORRUPTION_SEED, TEST_INPUT_SLOT};

fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/prompts/{name}.txt", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn k(v: u8) -> ShiftLevel {
    ShiftLevel::new(v).unwrap()
}

fn check(name: &str, style: PromptStyle, input: &str) {
    let expected = fixture(name).replace(TEST_INPUT_SLOT, input);
    let got = render(style, k(13), input).unwrap().text;
    if got != expected {
        let first = got.lines().zip(expected.lines()).position(|(a, b)| a != b);
        panic!("{name} differs at line {first:?}\n--- got ---\n{got}\n--- expected ---\n{expected}");
    }
}

#[test]
fn every_style_matches_its_fixture_at_13() {
    let mismatched = |format| PromptStyle::MismatchedDemo {
        demo_shift: k(14),
        format,
    };
    let cases = [
        ("standard", PromptStyle::Standard, "\"uryyb\""),
        ("text_cot", PromptStyle::TextCot, "\"uryyb\""),
        ("math_cot", PromptStyle::MathCot, "\"uryyb\""),
        ("number_cot", PromptStyle::NumberCot, "\"20,17,24,24,1\""),
        ("hidden_cot", PromptStyle::HiddenCot, "\"uryyb\""),
        ("partially_hidden_cot", PromptStyle::PartiallyHiddenCot, "\"uryyb\""),
        ("random_corrupted", PromptStyle::RandomCorrupted { seed: DEFAULT_CORRUPTION_SEED }, "\"uryyb\""),
        ("mismatched_text", mismatched(DemoFormat::Text), "\"uryyb\""),
        ("mismatched_math", mismatched(DemoFormat::Math), "\"uryyb\""),
    ];
    for (name, style, input) in cases {
        check(name, style, input);
    }
}

#[test]
fn test_input_appears_once_at_the_end() {
    for style in PromptStyle::all_defaults() {
        let input = if style.is_number_domain() { "\"1,2,3\"" } else { "\"qqqqzz\"" };
        let p = render(style, k(5), input).unwrap();
        assert_eq!(p.text.matches(input).count(), 1, "{style}");
        assert!(p.text.ends_with(input));
        assert!(!p.text.contains(TEST_INPUT_SLOT));
    }
}
