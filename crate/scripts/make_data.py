#!/usr/bin/env python3
"""Regenerate the bundled stand-in data under data/.

Outputs:
  data/wordfreq_en.tsv   word<TAB>count, trains the offline character n-gram scorer
  data/vocab.json        toy BPE vocabulary (token -> id), GPT-2 style space marker
  data/merges.txt        ordered BPE merges for data/vocab.json
  data/shift_freq.csv    stand-in shift-level frequency table (13 maximal)

Requires the `wordfreq` package. Output is deterministic for a fixed wordfreq release.
"""
import collections
import json
import pathlib

import wordfreq

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
MARKER = "Ġ"  # Ġ

N_WORDS = 20000
N_PREFIX = 46
N_SUFFIX = 46
# Rarer pieces sampled evenly from the tail of the frequency ranking, so the
# candidate scores reach into the low-probability range with no gaps.
N_TAIL = 30

# Tokens that must be present (example words used in the README and tests).
EXTRA_PREFIX = ["mar", "shr", "pay", "xcb", "jsx", "lev", "npm", "rgb", "tmp", "qwf"]
EXTRA_SUFFIX = ["iner", "ines", "wall", "jspx", "json", "ckzp", "vtxq"]


def words():
    out = []
    for w in wordfreq.top_n_list("en", 60000):
        if w.isascii() and w.isalpha() and w.islower():
            out.append(w)
        if len(out) == N_WORDS:
            break
    return out


def write_wordfreq(ws):
    with open(DATA / "wordfreq_en.tsv", "w") as f:
        for w in ws:
            count = max(1, round(10 ** wordfreq.zipf_frequency(w, "en")))
            f.write(f"{w}\t{count}\n")


def pick(counter, n, extra):
    ranked = [t for t, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]
    tail = ranked[n:]
    step = max(1, len(tail) // N_TAIL)
    chosen = ranked[:n] + tail[::step][:N_TAIL]
    return list(extra) + [t for t in chosen if t not in extra]


def chain(token):
    """Left-to-right merge chain producing `token` from single characters."""
    merges = []
    acc = token[0]
    for ch in token[1:]:
        merges.append((acc, ch))
        acc += ch
    return merges


def write_tokenizer(ws):
    seven = [w for w in ws if len(w) == 7][:3000]
    prefixes = pick(collections.Counter(w[:3] for w in seven), N_PREFIX, EXTRA_PREFIX)
    suffixes = pick(collections.Counter(w[3:] for w in seven), N_SUFFIX, EXTRA_SUFFIX)

    tokens = []
    for p in prefixes:
        tokens.append(MARKER + p)  # word-initial form
        tokens.append(p)  # same letters without the marker (after punctuation)
    tokens.extend(suffixes)
    tokens.extend(["The", MARKER + "word", MARKER + "is", MARKER + '"', "word", "is"])

    merges = []
    seen = set()
    # Word-initial pieces are learned before word-internal ones, and each
    # token's merge chain is kept contiguous so the listed tokens survive.
    groups = [tokens[: 2 * len(prefixes)], suffixes, tokens[2 * len(prefixes) + len(suffixes):]]
    for group in groups:
        for t in group:
            for m in chain(t):
                if m not in seen:
                    seen.add(m)
                    merges.append(m)

    base = [MARKER, '"', "'", ".", ",", ":", "-", "*", "(", ")", "=", "\n"]
    base += [chr(c) for c in range(ord("0"), ord("9") + 1)]
    base += [chr(c) for c in range(ord("A"), ord("Z") + 1)]
    base += [chr(c) for c in range(ord("a"), ord("z") + 1)]
    vocab = {}
    for t in base:
        vocab.setdefault(t, len(vocab))
    for a, b in merges:
        vocab.setdefault(a + b, len(vocab))

    with open(DATA / "vocab.json", "w") as f:
        json.dump(vocab, f, ensure_ascii=False, indent=0, sort_keys=False)
        f.write("\n")
    with open(DATA / "merges.txt", "w") as f:
        f.write("#version: 0.2\n")
        for a, b in merges:
            f.write(f"{a} {b}\n")


def write_shift_freq():
    # Stand-in counts: 13 dominant, 1 and 3 next.
    counts = {k: 40 for k in range(1, 26)}
    counts.update({13: 5000, 1: 900, 3: 700, 2: 160, 25: 120, 5: 90, 7: 70, 4: 80, 10: 60})
    with open(DATA / "shift_freq.csv", "w") as f:
        f.write("shift,frequency\n")
        for k in range(1, 26):
            f.write(f"{k},{counts[k]}\n")


def main():
    DATA.mkdir(exist_ok=True)
    ws = words()
    write_wordfreq(ws)
    write_tokenizer(ws)
    write_shift_freq()


if __name__ == "__main__":
    main()
