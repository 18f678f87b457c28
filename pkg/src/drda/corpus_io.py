"""Corpus ingestion, length/ratio cleaning and synthetic character noise.

Sentences are plain ``str`` objects (one line, no newline); a parallel
corpus is a list of ``(source, target)`` tuples.

Randomness: every stochastic routine builds a ``numpy.random.Generator``
on the PCG64 bit generator from the caller's integer seed, so the same
seed gives the same output on every platform numpy supports.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, ConfigError, EncodingError

ParallelCorpus = list[tuple[str, str]]


def make_rng(seed: int | Sequence[int]) -> np.random.Generator:
    """PCG64 generator seeded from an int or a sequence of ints."""
    return np.random.Generator(np.random.PCG64(seed))


def read_lines(path: str | Path) -> list[str]:
    """Read a UTF-8 file as a list of lines with the trailing LF removed.

    Raises EncodingError carrying the 1-based line number of the first
    undecodable line.
    """
    path = Path(path)
    raw = path.read_bytes()
    lines = []
    if not raw:
        return lines
    chunks = raw.split(b"\n")
    if chunks[-1] == b"":
        chunks.pop()
    for i, chunk in enumerate(chunks, start=1):
        try:
            lines.append(chunk.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise EncodingError(path, i, f"({exc.reason})") from None
    return lines


def write_lines(path: str | Path, lines: Iterable[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def load_parallel(src_path: str | Path, tgt_path: str | Path) -> ParallelCorpus:
    src = read_lines(src_path)
    tgt = read_lines(tgt_path)
    if len(src) != len(tgt):
        raise AlignmentError(
            f"{src_path} has {len(src)} lines but {tgt_path} has {len(tgt)}"
        )
    return list(zip(src, tgt))


def save_parallel(corpus: ParallelCorpus, src_path: str | Path, tgt_path: str | Path) -> None:
    write_lines(src_path, (s for s, _ in corpus))
    write_lines(tgt_path, (t for _, t in corpus))


@dataclass(frozen=True)
class CleaningPolicy:
    """Length filter in whitespace tokens, as in Moses ``clean-corpus-n``."""

    min_len: int = 1
    max_len: int = 175
    ratio: float = 1.5

    def __post_init__(self):
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f"need 1 <= min_len <= max_len, got {self.min_len}, {self.max_len}")
        if self.ratio < 1:
            raise ConfigError(f"ratio must be >= 1, got {self.ratio}")

    def keeps(self, source: str, target: str) -> bool:
        ns = len(source.split())
        nt = len(target.split())
        for n in (ns, nt):
            if n < self.min_len or n > self.max_len:
                return False
        return max(ns, nt) / min(ns, nt) <= self.ratio


def clean(corpus: ParallelCorpus, policy: CleaningPolicy) -> ParallelCorpus:
    return [pair for pair in corpus if policy.keeps(*pair)]


def is_eligible(ch: str) -> bool:
    """Noise targets every character except whitespace and punctuation."""
    if ch == "\t" or ch.isspace():
        return False
    cat = unicodedata.category(ch)
    return not (cat.startswith("P") or cat.startswith("Z"))


def noise_alphabet(sentences: Iterable[str]) -> list[str]:
    """Multiset of eligible characters, in order of appearance."""
    return [ch for s in sentences for ch in s if is_eligible(ch)]


def perturb_with_count(
    sentence: str,
    p: float,
    rng: np.random.Generator,
    alphabet: Sequence[str] | None = None,
) -> tuple[str, int]:
    """Apply character noise and return ``(noisy, n_perturbed)``.

    Each eligible character of the input is, with probability ``p``,
    deleted, followed by an inserted random character, or replaced by a
    random character (uniform choice among the three). Inserted
    characters are not themselves visited. Random characters are drawn
    uniformly from ``alphabet``, which defaults to the eligible
    characters of ``sentence``.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"noise probability must lie in [0, 1], got {p}")
    if alphabet is None:
        alphabet = noise_alphabet([sentence])
    if p == 0.0 or not alphabet:
        return sentence, 0
    out = []
    count = 0
    for ch in sentence:
        if not is_eligible(ch) or rng.random() >= p:
            out.append(ch)
            continue
        count += 1
        op = int(rng.integers(3))
        if op == 0:
            continue
        rand_ch = alphabet[int(rng.integers(len(alphabet)))]
        if op == 1:
            out.append(ch)
            out.append(rand_ch)
        else:
            out.append(rand_ch)
    return "".join(out), count


def perturb(sentence: str, p: float, seed: int, alphabet: Sequence[str] | None = None) -> str:
    return perturb_with_count(sentence, p, make_rng(seed), alphabet)[0]


def perturb_corpus(
    sentences: Sequence[str], p: float, seed: int
) -> tuple[list[str], int]:
    """Perturb every line with a corpus-wide alphabet.

    Line ``i`` draws from its own generator seeded with ``(seed, i)`` so
    output lines do not depend on one another.
    """
    alphabet = noise_alphabet(sentences)
    out = []
    total = 0
    for i, s in enumerate(sentences):
        noisy, n = perturb_with_count(s, p, make_rng([seed, i]), alphabet)
        out.append(noisy)
        total += n
    return out, total
