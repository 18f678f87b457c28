"""Frequency drop, embedding nearest neighbours and subword semantic composition."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bpe import SPECIALS, BpeModel, Vocabulary, vocab_at
from .errors import DomainError, ParseError
from .segmenter import segment_greedy


@dataclass(frozen=True)
class EmbeddingMatrix:
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=np.float64))
        if self.vectors.ndim != 2:
            raise DomainError("embedding matrix must be 2-D")

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def for_size(self, size: int) -> np.ndarray:
        return self.vectors[:size]


@dataclass(frozen=True)
class FreqDropRecord:
    token: str
    token_id: int
    freq_small: int
    freq_large: int

    @property
    def drop_rate(self) -> float:
        return (self.freq_small - self.freq_large) / self.freq_small


@dataclass(frozen=True)
class SscRecord:
    compound: str
    parts: tuple[str, str]
    similarity: float


def count_ids(corpus: Iterable[str], model: BpeModel, size: int) -> Counter:
    counts: Counter = Counter()
    for s in corpus:
        counts.update(segment_greedy(s, model, size).ids)
    return counts


def freq_drop(
    corpus: Sequence[str], model: BpeModel, small: int, large: int, min_freq: int = 1
) -> list[FreqDropRecord]:
    """Per small-vocabulary token, how many occurrences the larger vocabulary absorbs.

    Counts are per token id, so a merged token never shares counts with
    an equal string produced by a different merge. Sorted by drop rate
    (descending), then id.
    """
    if small > large:
        raise DomainError(f"small size {small} exceeds large size {large}")
    small_vocab = vocab_at(model, small)
    fs = count_ids(corpus, model, small)
    fl = count_ids(corpus, model, large) if large != small else fs
    records = [
        FreqDropRecord(tok, i, fs[i], fl.get(i, 0))
        for i, tok in enumerate(small_vocab.tokens)
        if fs.get(i, 0) >= max(min_freq, 1)
    ]
    records.sort(key=lambda r: (-r.drop_rate, r.token_id))
    return records


def write_freq_drop_csv(records: Sequence[FreqDropRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["token", "id", "freq_small", "freq_large", "drop_rate"])
        for r in records:
            w.writerow([r.token, r.token_id, r.freq_small, r.freq_large, repr(r.drop_rate)])


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _vector(emb: EmbeddingMatrix, vocab: Vocabulary, token: str) -> np.ndarray:
    i = vocab.id_of.get(token)
    if i is None:
        raise DomainError(f"token {token!r} not in vocabulary")
    if i >= len(emb):
        raise DomainError(f"token {token!r} (id {i}) has no embedding row")
    return emb.vectors[i]


def nearest_neighbors(emb: EmbeddingMatrix, token: str, vocab: Vocabulary, n: int) -> list[tuple[str, float]]:
    """Top-``n`` non-special tokens by cosine similarity (ties by id)."""
    q = _vector(emb, vocab, token)
    qi = vocab.id_of[token]
    if np.linalg.norm(q) == 0.0:
        raise DomainError(f"embedding of {token!r} is the zero vector")
    rows = min(vocab.size, len(emb))
    ids = [i for i in range(rows) if i != qi and vocab.tokens[i] not in SPECIALS]
    if n < 1 or n > len(ids):
        raise DomainError(f"n must lie in [1, {len(ids)}], got {n}")
    mat = emb.vectors[ids]
    norms = np.linalg.norm(mat, axis=1)
    if np.any(norms == 0.0):
        bad = vocab.tokens[ids[int(np.argmin(norms))]]
        raise DomainError(f"embedding of {bad!r} is the zero vector")
    sims = mat @ q / (norms * np.linalg.norm(q))
    order = sorted(range(len(ids)), key=lambda j: (-sims[j], ids[j]))[:n]
    return [(vocab.tokens[ids[j]], float(sims[j])) for j in order]


def ssc_similarity(emb: EmbeddingMatrix, a: str, b: str, vocab: Vocabulary) -> float:
    """cos(e[a+b], e[a] + e[b])."""
    compound = _vector(emb, vocab, a + b)
    return cosine(compound, _vector(emb, vocab, a) + _vector(emb, vocab, b))


def ssc_records(emb: EmbeddingMatrix, vocab: Vocabulary) -> list[SscRecord]:
    """Every (compound, a, b) with all three in the vocabulary.

    Compounds exclude special tokens and single characters.
    """
    out = []
    seen = set()
    for tok in vocab.tokens:
        if tok in seen or tok in SPECIALS or len(tok) < 2:
            continue
        seen.add(tok)
        for cut in range(1, len(tok)):
            a, b = tok[:cut], tok[cut:]
            if a in vocab and b in vocab:
                out.append(SscRecord(tok, (a, b), ssc_similarity(emb, a, b, vocab)))
    return out


def ssc_average(emb: EmbeddingMatrix, vocab: Vocabulary) -> float | None:
    """Mean compositional similarity; ``None`` when no compound decomposes.

    Compounds with several valid splits contribute the mean over their
    splits, so each compound carries equal weight.
    """
    per_compound: dict[str, list[float]] = {}
    for rec in ssc_records(emb, vocab):
        per_compound.setdefault(rec.compound, []).append(rec.similarity)
    if not per_compound:
        return None
    return math.fsum(math.fsum(v) / len(v) for v in per_compound.values()) / len(per_compound)


def write_embeddings(path, emb: EmbeddingMatrix, tokens: Sequence[str]) -> None:
    if len(tokens) != len(emb):
        raise DomainError(f"{len(tokens)} tokens for {len(emb)} embedding rows")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(emb)} {emb.d}\n")
        for tok, row in zip(tokens, emb.vectors):
            if not tok or any(ch.isspace() for ch in tok):
                raise DomainError(f"token {tok!r} cannot be written to the embedding file")
            fh.write(tok + " " + " ".join(repr(float(x)) for x in row) + "\n")


def read_embeddings(path) -> tuple[EmbeddingMatrix, Vocabulary]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2 or not all(h.isdigit() for h in header):
            raise ParseError("expected 'V d' header", 1, path)
        V, d = map(int, header)
        tokens = []
        rows = np.zeros((V, d))
        for i in range(V):
            parts = fh.readline().rstrip("\n").split(" ")
            if len(parts) != d + 1:
                raise ParseError(f"expected token and {d} values", i + 2, path)
            tokens.append(parts[0])
            try:
                rows[i] = [float(x) for x in parts[1:]]
            except ValueError:
                raise ParseError("non-numeric embedding value", i + 2, path) from None
    return EmbeddingMatrix(rows), Vocabulary.from_tokens(tokens)
