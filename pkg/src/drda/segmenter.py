"""Sentence segmentation at a chosen granularity, and its inverse.

Words are the pieces of ``sentence.split(" ")``; each gets a leading
word marker, so runs of spaces and leading/trailing spaces survive the
round trip through :func:`detokenize`.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bpe import UNK, UNK_ID, WORD_MARKER, BpeModel, Vocabulary, vocab_at
from .corpus_io import make_rng
from .errors import ConfigError, DomainError


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    tokens: tuple[str, ...] | None = field(default=None, compare=False)
    vocab_size: int = 0

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def has_unk(self) -> bool:
        return UNK_ID in self.ids


def _segment_word(model: BpeModel, word: str, n_merges: int) -> list[tuple[str, int]]:
    """Greedy merge application: always the lowest-rank applicable pair, leftmost first."""
    key = (word, n_merges)
    cached = model._cache.get(key)
    if cached is not None:
        return cached
    syms = [WORD_MARKER, *word]
    ids = [model.base_id(s) for s in syms]
    ranks = model.ranks
    while len(syms) > 1:
        best = None
        best_pos = -1
        for i in range(len(syms) - 1):
            if ids[i] == UNK_ID or ids[i + 1] == UNK_ID:
                continue
            r = ranks.get((syms[i], syms[i + 1]))
            if r is not None and r < n_merges and (best is None or r < best):
                best, best_pos = r, i
        if best is None:
            break
        syms[best_pos: best_pos + 2] = [syms[best_pos] + syms[best_pos + 1]]
        ids[best_pos: best_pos + 2] = [model.merge_id(best)]
    out = [(UNK if i == UNK_ID else s, i) for s, i in zip(syms, ids)]
    model._cache[key] = out
    return out


def segment_greedy(sentence: str, model: BpeModel, vocab_size: int) -> TokenSequence:
    n = model.n_merges_for(vocab_size)
    size = model.n_fixed + n
    if sentence == "":
        return TokenSequence((), (), size)
    toks: list[str] = []
    ids: list[int] = []
    for word in sentence.split(" "):
        for t, i in _segment_word(model, word, n):
            toks.append(t)
            ids.append(i)
    return TokenSequence(tuple(ids), tuple(toks), size)


def segment_multi(
    sentence: str, model: BpeModel, prime: int, augs: Sequence[int]
) -> list[TokenSequence]:
    return [segment_greedy(sentence, model, size) for size in (prime, *augs)]


def segment_dropout(
    sentence: str, model: BpeModel, vocab_size: int, drop_p: float, seed: int | np.random.Generator
) -> TokenSequence:
    """BPE-dropout: every candidate merge application is skipped with prob ``drop_p``.

    Candidates sit in a priority queue ordered by (rank, position). A
    popped candidate is either applied or discarded; applying it queues
    the new pairs it forms with its neighbours.
    """
    if not 0.0 <= drop_p <= 1.0:
        raise ConfigError(f"drop_p must lie in [0, 1], got {drop_p}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    n = model.n_merges_for(vocab_size)
    size = model.n_fixed + n
    if sentence == "":
        return TokenSequence((), (), size)
    toks: list[str] = []
    ids: list[int] = []
    for word in sentence.split(" "):
        for t, i in _dropout_word(model, word, n, drop_p, rng):
            toks.append(t)
            ids.append(i)
    return TokenSequence(tuple(ids), tuple(toks), size)


def _dropout_word(model, word, n_merges, drop_p, rng):
    syms = [WORD_MARKER, *word]
    ids = [model.base_id(s) for s in syms]
    alive = [True] * len(syms)
    nxt = list(range(1, len(syms))) + [-1]
    prv = list(range(-1, len(syms) - 1))
    ranks = model.ranks
    heap = []

    def push(i):
        j = nxt[i]
        if j < 0 or ids[i] == UNK_ID or ids[j] == UNK_ID:
            return
        r = ranks.get((syms[i], syms[j]))
        if r is not None and r < n_merges:
            heapq.heappush(heap, (r, i, syms[i], syms[j]))

    for i in range(len(syms)):
        push(i)
    while heap:
        r, i, left, right = heapq.heappop(heap)
        j = nxt[i] if alive[i] else -1
        if j < 0 or syms[i] != left or syms[j] != right:
            continue  # stale
        if drop_p > 0.0 and rng.random() < drop_p:
            continue
        syms[i] = left + right
        ids[i] = model.merge_id(r)
        alive[j] = False
        nxt[i] = nxt[j]
        if nxt[j] >= 0:
            prv[nxt[j]] = i
        if prv[i] >= 0:
            push(prv[i])
        push(i)
    return [(UNK if ids[i] == UNK_ID else syms[i], ids[i]) for i in range(len(syms)) if alive[i]]


def detokenize(seq: TokenSequence | Sequence[str]) -> str:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    if tokens is None:
        raise DomainError("token strings unavailable; attach a vocabulary first")
    text = "".join(tokens).replace(WORD_MARKER, " ")
    return text[1:] if text.startswith(" ") else text


def attach_tokens(seq: TokenSequence, vocab: Vocabulary) -> TokenSequence:
    try:
        toks = tuple(vocab.tokens[i] for i in seq.ids)
    except IndexError:
        raise DomainError(f"id outside vocabulary of size {vocab.size}") from None
    return TokenSequence(seq.ids, toks, seq.vocab_size)


# ---------------------------------------------------------------------------
# Unigram LM segmentation (validation harness for argmax-vs-sampling)
# ---------------------------------------------------------------------------

# Scores closer than this are treated as equal by unigram_viterbi.
TIE_TOL = 1e-12


@dataclass(frozen=True)
class UnigramModel:
    """Unigram token model.

    ``marked`` models (built from BPE output) segment the sentence with a
    word marker in front of every word; unmarked ones segment the raw string.
    """

    log_prob: Mapping[str, float]
    token_ids: Mapping[str, int] = field(default_factory=dict, compare=False)
    marked: bool = False

    def __post_init__(self):
        if not self.log_prob:
            raise DomainError("empty unigram support")
        total = math.fsum(math.exp(v) for v in self.log_prob.values())
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"unigram probabilities sum to {total}, not 1")
        object.__setattr__(self, "_max_len", max(len(t) for t in self.log_prob))

    @property
    def support(self) -> frozenset:
        return frozenset(self.log_prob)

    @classmethod
    def from_counts(cls, counts: Mapping[str, float], token_ids: Mapping[str, int] | None = None, marked: bool = False):
        total = math.fsum(counts.values())
        lp = {t: math.log(c / total) for t, c in counts.items() if c > 0}
        if token_ids is None:
            token_ids = {t: i for i, t in enumerate(sorted(lp))}
        return cls(lp, token_ids, marked)

    @classmethod
    def from_bpe(cls, corpus: Iterable[str], model: BpeModel, vocab_size: int) -> "UnigramModel":
        """ML unigram estimate over the greedy segmentation of ``corpus``.

        Base symbols get one extra count so every character stays coverable.
        """
        counts: Counter = Counter()
        for s in corpus:
            seq = segment_greedy(s, model, vocab_size)
            counts.update(t for t in seq.tokens if t != UNK)
        for sym in model.base_symbols:
            counts[sym] += 1
        vocab = vocab_at(model, vocab_size)
        return cls.from_counts(counts, dict(vocab.id_of), marked=True)

    def id(self, token: str) -> int:
        return self.token_ids.get(token, UNK_ID)


def _surface(sentence: str, um: UnigramModel) -> str:
    if not um.marked or sentence == "":
        return sentence
    return "".join(WORD_MARKER + w for w in sentence.split(" "))


def _to_seq(um: UnigramModel, pieces: list[str]) -> TokenSequence:
    return TokenSequence(tuple(um.id(t) for t in pieces), tuple(pieces), len(um.log_prob))


def unigram_logprob(seq: TokenSequence | Sequence[str], um: UnigramModel) -> float:
    tokens = seq.tokens if isinstance(seq, TokenSequence) else seq
    total = 0.0
    for t in tokens:
        lp = um.log_prob.get(t)
        if lp is None:
            raise DomainError(f"token {t!r} outside unigram support")
        total += lp
    return total


def _check_coverable(text: str, um: UnigramModel) -> None:
    for ch in set(text):
        if ch not in um.log_prob:
            raise DomainError(f"character {ch!r} is not a single-character token of the model")


def unigram_viterbi(sentence: str, um: UnigramModel) -> TokenSequence:
    """Most probable segmentation; ties go to fewer tokens, then leftmost-longest."""
    text = _surface(sentence, um)
    _check_coverable(text, um)
    n = len(text)
    lp = um.log_prob
    # best[i]: (score, n_tokens, end of first token) for the suffix text[i:]
    best: list[tuple[float, int, int]] = [(0.0, 0, n)] * (n + 1)
    for i in range(n - 1, -1, -1):
        cand = None
        for j in range(min(n, i + um._max_len), i, -1):
            p = lp.get(text[i:j])
            if p is None:
                continue
            score = p + best[j][0]
            ntok = best[j][1] + 1
            if cand is None or score > cand[0] + TIE_TOL:
                cand = (score, ntok, j)
            elif abs(score - cand[0]) <= TIE_TOL and ntok < cand[1]:
                cand = (score, ntok, j)
        best[i] = cand
    pieces = []
    i = 0
    while i < n:
        j = best[i][2]
        pieces.append(text[i:j])
        i = j
    return _to_seq(um, pieces)


def unigram_sample(sentence: str, um: UnigramModel, seed: int | np.random.Generator) -> TokenSequence:
    """Draw a segmentation with probability proportional to its unigram likelihood."""
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    text = _surface(sentence, um)
    _check_coverable(text, um)
    n = len(text)
    lp = um.log_prob
    alpha = np.full(n + 1, -np.inf)
    alpha[0] = 0.0
    for j in range(1, n + 1):
        terms = [alpha[i] + lp[text[i:j]] for i in range(max(0, j - um._max_len), j) if text[i:j] in lp]
        alpha[j] = np.logaddexp.reduce(terms)
    pieces = []
    j = n
    while j > 0:
        starts = [i for i in range(max(0, j - um._max_len), j) if text[i:j] in lp]
        logw = np.array([alpha[i] + lp[text[i:j]] for i in starts])
        w = np.exp(logw - logw.max())
        i = starts[int(rng.choice(len(starts), p=w / w.sum()))]
        pieces.append(text[i:j])
        j = i
    pieces.reverse()
    return _to_seq(um, pieces)
