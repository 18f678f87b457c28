"""Multi-granularity BPE data augmentation for machine translation."""

__version__ = "0.1.0"

from .bpe import BpeModel, MergeRule, Vocabulary, load_model, save_model, train_bpe, vocab_at
from .corpus_io import CleaningPolicy, clean, load_parallel, perturb
from .segmenter import (
    TokenSequence,
    UnigramModel,
    detokenize,
    segment_dropout,
    segment_greedy,
    segment_multi,
    unigram_logprob,
    unigram_sample,
    unigram_viterbi,
)
from .augment import AugmentedExample, build_dataset, read_jsonl, write_jsonl
from .loss import LossBreakdown, drda_loss, nll, sym_kl

__all__ = [
    "AugmentedExample", "BpeModel", "CleaningPolicy", "LossBreakdown", "MergeRule", "TokenSequence",
    "UnigramModel", "Vocabulary", "build_dataset", "clean", "detokenize", "drda_loss", "load_model",
    "load_parallel", "nll", "perturb", "read_jsonl", "save_model", "segment_dropout", "segment_greedy",
    "segment_multi", "sym_kl", "train_bpe", "unigram_logprob", "unigram_sample", "unigram_viterbi",
    "vocab_at", "write_jsonl",
]
