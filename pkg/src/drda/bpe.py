"""Greedy BPE training and prefix-chained vocabularies.

Vocabulary layout for a model with ``B`` base symbols and ``M`` merges::

    id 0..3        <pad> <unk> <s> </s>
    id 4..4+B-1    base symbols (word marker first, then code-point order)
    id 4+B+r       token produced by merge rank r

Any vocabulary of size ``n`` is therefore the first ``n`` rows of the
maximal one, and token ids never change between granularities.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ParseError, SizeError, TrainingError

logger = logging.getLogger(__name__)

WORD_MARKER = "▁"
PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"
SPECIALS = (PAD, UNK, BOS, EOS)
PAD_ID, UNK_ID, BOS_ID, EOS_ID = range(4)

MODEL_HEADER = "#drda-bpe v1"


@dataclass(frozen=True)
class MergeRule:
    left: str
    right: str
    rank: int

    @property
    def token(self) -> str:
        return self.left + self.right


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    id_of: dict = field(compare=False, repr=False)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        id_of = {}
        for i, tok in enumerate(tokens):
            id_of.setdefault(tok, i)
        return cls(tuple(tokens), id_of)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.id_of

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, tok in enumerate(self.tokens):
                fh.write(f"{tok}\t{i}\n")

    @classmethod
    def read(cls, path: str | Path) -> "Vocabulary":
        tokens = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                tok, sep, idx = line.rpartition("\t")
                if not sep or not idx.isdigit() or int(idx) != len(tokens):
                    raise ParseError(f"expected 'token<TAB>{len(tokens)}'", line_no, path)
                tokens.append(tok)
        return cls.from_tokens(tokens)


def _tie_key(sym: str) -> str:
    # Marker sorts below every printable character, as a space would.
    return sym.replace(WORD_MARKER, " ")


def _split_words(sentence: str) -> list[str]:
    return sentence.split(" ")


def word_symbols(word: str) -> list[str]:
    return [WORD_MARKER, *word]


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[MergeRule, ...]
    base_symbols: tuple[str, ...]
    specials: tuple[str, ...] = SPECIALS
    word_marker: str = WORD_MARKER
    corpus_digest: str = ""

    def __post_init__(self):
        ranks = {}
        for i, m in enumerate(self.merges):
            if m.rank != i:
                raise ValueError(f"merge ranks must be consecutive from 0, got {m.rank} at {i}")
            ranks[(m.left, m.right)] = i
        object.__setattr__(self, "_ranks", ranks)
        object.__setattr__(self, "_base_index", {s: i for i, s in enumerate(self.base_symbols)})
        object.__setattr__(self, "_cache", {})

    @property
    def n_fixed(self) -> int:
        return len(self.specials) + len(self.base_symbols)

    @property
    def max_size(self) -> int:
        return self.n_fixed + len(self.merges)

    @property
    def ranks(self) -> dict:
        return self._ranks

    def base_id(self, sym: str) -> int:
        idx = self._base_index.get(sym)
        return 1 if idx is None else len(self.specials) + idx

    def merge_id(self, rank: int) -> int:
        return self.n_fixed + rank

    def n_merges_for(self, size: int) -> int:
        """Number of merges usable under a vocabulary of ``size`` tokens."""
        if size < self.n_fixed:
            raise SizeError(
                f"vocabulary size {size} is below the {self.n_fixed} special+base symbols"
            )
        return min(size - self.n_fixed, len(self.merges))

    def all_tokens(self) -> list[str]:
        return [*self.specials, *self.base_symbols, *(m.token for m in self.merges)]


def vocab_at(model: BpeModel, size: int) -> Vocabulary:
    """Vocabulary of ``size`` tokens; clipped to the model maximum with a warning."""
    n = model.n_merges_for(size)
    if size > model.max_size:
        logger.warning("requested vocab size %d exceeds model maximum; using %d", size, model.max_size)
    return Vocabulary.from_tokens(model.all_tokens()[: model.n_fixed + n])


def _corpus_digest(lines: Iterable[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()[:16]


def _pairs(symbols: Sequence[str]):
    return zip(symbols, symbols[1:])


def _merge_word(symbols: tuple[str, ...], left: str, right: str) -> tuple[str, ...]:
    out = []
    i = 0
    n = len(symbols)
    while i < n:
        if i < n - 1 and symbols[i] == left and symbols[i + 1] == right:
            out.append(left + right)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def train_bpe(
    corpora: Sequence[Sequence[str]], max_merges: int, joint: bool = True, min_count: int = 1
) -> BpeModel:
    """Learn up to ``max_merges`` merges by greedy pair counting.

    ``corpora`` is a list of line lists. With ``joint`` (default) all of
    them feed one model. Without it only the first corpus is used; call
    once per side to get separate models.

    Ties between equally frequent pairs go to the smaller
    ``(left, right)`` in code-point order, with the word marker ranked
    below every other character. Training stops early once no pair
    occurs at least ``min_count`` times.
    """
    if max_merges < 0:
        raise TrainingError(f"max_merges must be >= 0, got {max_merges}")
    if not corpora:
        raise TrainingError("no corpora given")
    if min_count < 1:
        raise TrainingError(f"min_count must be >= 1, got {min_count}")
    used = corpora if joint else corpora[:1]
    lines = [line for corpus in used for line in corpus]

    word_freq: Counter = Counter()
    for line in lines:
        for w in _split_words(line):
            if w:
                word_freq[w] += 1
    if not word_freq:
        raise TrainingError("training corpus contains no words")

    chars = sorted({ch for w in word_freq for ch in w} - {WORD_MARKER})
    base = (WORD_MARKER, *chars)

    words = [tuple(word_symbols(w)) for w in sorted(word_freq)]
    freqs = [word_freq[w] for w in sorted(word_freq)]

    stats: Counter = Counter()
    where: dict = defaultdict(set)
    for idx, (sym, f) in enumerate(zip(words, freqs)):
        for pair in _pairs(sym):
            stats[pair] += f
            where[pair].add(idx)

    def entry(pair, count):
        return (-count, _tie_key(pair[0]), _tie_key(pair[1]), pair)

    heap = [entry(pair, c) for pair, c in stats.items()]
    heapq.heapify(heap)

    merges: list[MergeRule] = []
    seen = set()
    while len(merges) < max_merges and heap:
        neg, _, _, pair = heapq.heappop(heap)
        count = stats.get(pair, 0)
        if count != -neg or pair in seen:
            continue
        if count < min_count:
            break
        left, right = pair
        merges.append(MergeRule(left, right, len(merges)))
        seen.add(pair)

        touched = set()
        for idx in sorted(where.pop(pair, ())):
            old = words[idx]
            new = _merge_word(old, left, right)
            if new == old:
                continue
            f = freqs[idx]
            for p in _pairs(old):
                stats[p] -= f
                touched.add(p)
                where[p].discard(idx)
            for p in _pairs(new):
                stats[p] += f
                touched.add(p)
                where[p].add(idx)
            words[idx] = new
        for p in touched:
            c = stats[p]
            if c <= 0:
                del stats[p]
                where.pop(p, None)
            elif p not in seen:
                heapq.heappush(heap, entry(p, c))

    return BpeModel(tuple(merges), base, corpus_digest=_corpus_digest(lines))


def save_model(model: BpeModel, path: str | Path) -> None:
    """Write the merges file.

    Format: the header line, an optional ``#base <json list>`` line, an
    optional ``#corpus <digest>`` line, then ``left right`` per merge.
    """
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(MODEL_HEADER + "\n")
        fh.write("#base " + json.dumps(list(model.base_symbols), ensure_ascii=False) + "\n")
        if model.corpus_digest:
            fh.write(f"#corpus {model.corpus_digest}\n")
        for m in model.merges:
            fh.write(f"{m.left} {m.right}\n")


def load_model(path: str | Path) -> BpeModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MODEL_HEADER:
        raise ParseError(f"missing '{MODEL_HEADER}' header", 1, path)
    base = None
    digest = ""
    merges: list[MergeRule] = []
    seen = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not merges and line.startswith("#base [") and base is None:
            try:
                base = tuple(json.loads(line[len("#base "):]))
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad base symbol list: {exc}", line_no, path) from None
            continue
        if not merges and line.startswith("#corpus ") and not digest:
            digest = line.split(" ", 1)[1]
            continue
        parts = line.split(" ")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"expected 'left right', got {line!r}", line_no, path)
        pair = (parts[0], parts[1])
        if pair in seen:
            raise ParseError(f"duplicate merge {line!r} (first at line {seen[pair]})", line_no, path)
        seen[pair] = line_no
        merges.append(MergeRule(pair[0], pair[1], len(merges)))
    if base is None:
        chars = sorted({ch for m in merges for ch in m.token} - {WORD_MARKER})
        base = (WORD_MARKER, *chars)
    return BpeModel(tuple(merges), base, corpus_digest=digest)
