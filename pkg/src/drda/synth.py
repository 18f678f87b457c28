"""Deterministic synthetic corpora for tests, demos and the bundled toy data.

The synthetic language has syllable-built stems, a handful of
inflectional suffixes and Zipf-distributed word frequencies, which gives
BPE a realistic mix of frequent whole words and rare decomposable ones.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus_io import ParallelCorpus, make_rng

ONSETS = ["", "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "st", "tr", "gr", "pl", "sk"]
VOWELS = ["a", "e", "i", "o", "u", "ei", "au", "ä", "ö", "ü"]
CODAS = ["", "", "n", "r", "s", "l", "m", "nd", "ck", "ng"]
SUFFIXES = ["", "", "", "en", "er", "ung", "lich", "est", "s", "te"]
PUNCT = [".", ".", ".", "?", "!"]


def _syllable(rng: np.random.Generator) -> str:
    return ONSETS[rng.integers(len(ONSETS))] + VOWELS[rng.integers(len(VOWELS))] + CODAS[rng.integers(len(CODAS))]


def make_lexicon(n_stems: int, seed: int) -> list[str]:
    rng = make_rng([seed, 1])
    stems: list[str] = []
    seen = set()
    while len(stems) < n_stems:
        n_syl = int(rng.integers(1, 4))
        stem = "".join(_syllable(rng) for _ in range(n_syl))
        if stem and stem not in seen:
            seen.add(stem)
            stems.append(stem)
    return stems


def synthetic_sentences(n: int, seed: int = 0, n_stems: int = 3000, zipf_s: float = 1.1) -> list[str]:
    """``n`` sentences of 3 to 14 words, single-space separated."""
    stems = make_lexicon(n_stems, seed)
    rng = make_rng([seed, 2])
    weights = 1.0 / np.arange(1, n_stems + 1) ** zipf_s
    weights /= weights.sum()
    out = []
    for _ in range(n):
        n_words = int(rng.integers(3, 15))
        idx = rng.choice(n_stems, size=n_words, p=weights)
        words = [stems[i] + SUFFIXES[rng.integers(len(SUFFIXES))] for i in idx]
        words[0] = words[0][:1].upper() + words[0][1:]
        sentence = " ".join(words)
        if rng.random() < 0.8:
            sentence += PUNCT[rng.integers(len(PUNCT))]
        out.append(sentence)
    return out


def _translate_word(word: str) -> str:
    # Reversible toy "translation": reverse the letters, keep case of the first.
    rev = word[::-1]
    if word[:1].isupper():
        rev = rev[:1].upper() + rev[1:].lower()
    return rev


def synthetic_parallel(n: int, seed: int = 0, n_stems: int = 3000) -> ParallelCorpus:
    """Source sentences paired with a word-reversed target side."""
    src = synthetic_sentences(n, seed, n_stems)
    pairs = []
    for s in src:
        punct = s[-1] if s[-1] in ".?!" else ""
        body = s[:-1] if punct else s
        tgt = " ".join(_translate_word(w) for w in body.split(" ")) + punct
        pairs.append((s, tgt))
    return pairs


def copy_task(n: int, seed: int = 0, alphabet: str = "abcdef", min_len: int = 4, max_len: int = 12) -> ParallelCorpus:
    """Random strings over ``alphabet`` (with occasional spaces); target = source."""
    rng = make_rng([seed, 3])
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        chars = [alphabet[rng.integers(len(alphabet))] for _ in range(length)]
        # at most two spaces, never leading, trailing or doubled
        for _ in range(int(rng.integers(0, 3))):
            pos = int(rng.integers(1, length - 1))
            if chars[pos - 1] != " " and chars[pos + 1] != " ":
                chars[pos] = " "
        s = "".join(chars)
        pairs.append((s, s))
    return pairs


def bundled_corpus() -> tuple[Path, Path]:
    """Paths of the small parallel corpus shipped with the package."""
    base = Path(__file__).parent / "data"
    return base / "toy.src.txt", base / "toy.tgt.txt"
