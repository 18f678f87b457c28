"""Expand a parallel corpus into multi-granularity training examples.

JSON-lines record::

    {"src_pri": [ids], "src_augs": [[ids], ...], "tgt": [ids],
     "sizes": {"pri": p, "augs": [q1, ...]}}

Token strings are not stored; pass a ``BpeModel`` to ``read_jsonl`` to
recover them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .bpe import BpeModel, vocab_at
from .corpus_io import ParallelCorpus
from .errors import ParseError
from .segmenter import TokenSequence, attach_tokens, segment_greedy


@dataclass(frozen=True)
class AugmentedExample:
    src_prime: TokenSequence
    src_augs: tuple[TokenSequence, ...]
    tgt: TokenSequence

    @property
    def k(self) -> int:
        return len(self.src_augs)


def build_example(source: str, target: str, model: BpeModel, prime: int, augs: Sequence[int]) -> AugmentedExample:
    return AugmentedExample(
        segment_greedy(source, model, prime),
        tuple(segment_greedy(source, model, q) for q in augs),
        segment_greedy(target, model, prime),
    )


def build_dataset(
    corpus: ParallelCorpus, model: BpeModel, prime: int, augs: Sequence[int]
) -> list[AugmentedExample]:
    return [build_example(s, t, model, prime, augs) for s, t in corpus]


def example_to_record(ex: AugmentedExample) -> dict:
    return {
        "src_pri": list(ex.src_prime.ids),
        "src_augs": [list(a.ids) for a in ex.src_augs],
        "tgt": list(ex.tgt.ids),
        "sizes": {"pri": ex.src_prime.vocab_size, "augs": [a.vocab_size for a in ex.src_augs]},
    }


def _int_list(value, name, idx):
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise ParseError(f"record {idx}: '{name}' must be a list of integers", idx)
    return tuple(value)


def record_to_example(rec: dict, idx: int = 0) -> AugmentedExample:
    if not isinstance(rec, dict):
        raise ParseError(f"record {idx}: expected a JSON object", idx)
    for key in ("src_pri", "src_augs", "tgt", "sizes"):
        if key not in rec:
            raise ParseError(f"record {idx}: missing '{key}'", idx)
    sizes = rec["sizes"]
    if not isinstance(sizes, dict) or "pri" not in sizes or "augs" not in sizes:
        raise ParseError(f"record {idx}: 'sizes' needs 'pri' and 'augs'", idx)
    pri = sizes["pri"]
    aug_sizes = sizes["augs"]
    if not isinstance(rec["src_augs"], list) or not isinstance(aug_sizes, list) or len(aug_sizes) != len(rec["src_augs"]):
        raise ParseError(f"record {idx}: 'src_augs' and 'sizes.augs' lengths differ", idx)
    return AugmentedExample(
        TokenSequence(_int_list(rec["src_pri"], "src_pri", idx), None, pri),
        tuple(
            TokenSequence(_int_list(a, "src_augs", idx), None, q)
            for a, q in zip(rec["src_augs"], aug_sizes)
        ),
        TokenSequence(_int_list(rec["tgt"], "tgt", idx), None, pri),
    )


def write_jsonl(dataset: Sequence[AugmentedExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in dataset:
            fh.write(json.dumps(example_to_record(ex), separators=(",", ":")))
            fh.write("\n")


def read_jsonl(path: str | Path, model: BpeModel | None = None) -> list[AugmentedExample]:
    """Load a dataset. Errors carry the 0-based record index as ``line_no``."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"record {idx}: {exc.msg}", idx, path) from None
            ex = record_to_example(rec, idx)
            if model is not None:
                ex = with_tokens(ex, model)
            out.append(ex)
    return out


def with_tokens(ex: AugmentedExample, model: BpeModel) -> AugmentedExample:
    def attach(seq):
        return attach_tokens(seq, vocab_at(model, seq.vocab_size))

    return AugmentedExample(attach(ex.src_prime), tuple(attach(a) for a in ex.src_augs), attach(ex.tgt))
