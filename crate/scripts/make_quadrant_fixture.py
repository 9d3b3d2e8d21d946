#!/usr/bin/env python3
"""Write a Text-CoT transcript store whose confusion matrices are known.

Four cells of 100 examples each (rot-4 and rot-13, high and low probability
bins) with counts (chain correct & final correct, chain correct & final
incorrect, chain incorrect & final correct, chain incorrect & final incorrect).
Output: crates/core/tests/fixtures/quadrants/transcripts.jsonl
"""
import hashlib
import json
import pathlib
import random

ROOT = pathlib.Path(__file__).resolve().parent.parent
OUT = ROOT / "crates/core/tests/fixtures/quadrants/transcripts.jsonl"

# (shift, bin) -> (cc, ci, ic, ii); bin 1 is high probability, bin 5 low.
CELLS = {
    (4, 1): (19, 7, 34, 40),
    (13, 1): (15, 1, 55, 29),
    (4, 5): (7, 14, 1, 78),
    (13, 5): (7, 9, 19, 65),
}
A = ord("a")


def enc(word, k):
    return "".join(chr((ord(c) - A + k) % 26 + A) for c in word)


def bump(c, by=1):
    return chr((ord(c) - A + by) % 26 + A)


def words(bin_, n, rng):
    pool = [line.split("\t")[0] for line in (ROOT / "data/wordfreq_en.tsv").read_text().splitlines()]
    pool = [w for w in pool if len(w) == 7]
    pool = pool[:400] if bin_ == 1 else pool[-400:]
    return sorted(rng.sample(pool, n))


def response(word, k, chain_ok, final_ok, rng, variant):
    cipher = enc(word, k)
    outs = list(word)
    if not chain_ok:
        for i in rng.sample(range(len(word)), rng.randint(1, 3)):
            outs[i] = bump(outs[i], rng.randint(1, 25))
    chain = "".join(outs)
    if final_ok:
        final = word
    elif chain_ok:
        i = rng.randrange(len(word))
        final = word[:i] + bump(word[i]) + word[i + 1:]
    else:
        final = chain if rng.random() < 0.7 else chain[::-1]
        if final == word:
            final = bump(word[0]) + word[1:]
    lines = [f"To decode this message, we shift each letter {k} positions backward:"]
    for i, (c, o) in enumerate(zip(cipher, outs), 1):
        lines.append(f"{i}. {c} -> {o}" if variant != 1 else f"{i}.  {c.upper()} ->  {o.upper()}")
    if variant == 2:
        lines.append(f'Therefore, the original text is: "{chain}"')
        lines.append("")
    last = f'Original text: "{final}"' if variant != 3 else f"Original text: {final.upper()}"
    lines.append(last)
    return "\n".join(lines)


def main():
    rng = random.Random(20240601)
    rows = []
    for (k, b), counts in CELLS.items():
        ws = words(b, 100, rng)
        kinds = [(True, True)] * counts[0] + [(True, False)] * counts[1] + [(False, True)] * counts[2] + [(False, False)] * counts[3]
        assert len(kinds) == 100
        rng.shuffle(kinds)
        for w, (chain_ok, final_ok) in zip(ws, kinds):
            raw = response(w, k, chain_ok, final_ok, rng, rng.randrange(4))
            rows.append(
                {
                    "example_id": f"b{b}-{w}-k{k:02}",
                    "style": "text-cot",
                    "provider": "fixture",
                    "params": {"temperature": 0.0, "max_new_tokens": 200},
                    "prompt_hash": hashlib.sha256(f"{w}/{k}".encode()).hexdigest(),
                    "raw_response": raw,
                    "timestamp": "2024-06-01T00:00:00Z",
                    "expected": {"chain_correct": chain_ok, "final_correct": final_ok},
                }
            )
    rows.sort(key=lambda r: r["example_id"])
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w") as f:
        for r in rows:
            f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
