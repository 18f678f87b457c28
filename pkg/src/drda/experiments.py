"""Desk-scale copy-task comparison of the baseline and multi-view trainers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .analysis import EmbeddingMatrix, ssc_average
from .augment import build_dataset
from .bpe import train_bpe, vocab_at
from .synth import copy_task
from .toy_nmt import ModelConfig, build_model, embedding_array, evaluate, objective_terms, train


@dataclass(frozen=True)
class CopyTaskSetup:
    n_train: int = 512
    n_heldout: int = 128
    bpe_merges: int = 200
    prime_merges: int = 40
    aug_merges: int = 35
    seed: int = 0


# Trainer settings used for the desk-scale comparison.
DESK_CONFIG = {"lr": 3e-3, "max_steps": 2000}


@dataclass
class RunSummary:
    alpha: float
    accuracy: float
    view_accuracy: list[float]
    objective_agreement_init: float
    objective_agreement_final: float
    agreement_init: float
    agreement_final: float
    agreement_init_train: float
    agreement_final_train: float
    ssc: float | None
    seconds: float
    loss_curve: list[float] = field(repr=False, default_factory=list)


def copy_task_runs(setup: CopyTaskSetup = CopyTaskSetup(), **overrides) -> dict[str, RunSummary]:
    """Train the baseline (alpha=0, prime view only) and the two-view model on one copy task.

    ``objective_agreement_*`` is the agreement term of the training
    loss (train mode, dropout on) averaged over the training pairs, at
    initialization and after training. ``agreement_*`` is the same
    divergence for the deterministic eval-mode model, on held-out and on
    training pairs. The baseline never trains on the augmented view, but
    its agreement is still measured on the same two-view data.
    """
    train_pairs = copy_task(setup.n_train, seed=setup.seed)
    held_pairs = copy_task(setup.n_heldout, seed=setup.seed + 1)
    bpe = train_bpe([[s for s, _ in train_pairs]], setup.bpe_merges)
    prime = bpe.n_fixed + setup.prime_merges
    aug = bpe.n_fixed + setup.aug_merges
    two_view_train = build_dataset(train_pairs, bpe, prime, [aug])
    two_view_held = build_dataset(held_pairs, bpe, prime, [aug])
    base = ModelConfig(prime_size=prime, aug_sizes=(aug,), embed_rows=max(prime, aug), seed=setup.seed, **overrides)
    runs = {
        "baseline": (replace(base, aug_sizes=(), alpha=0.0), build_dataset(train_pairs, bpe, prime, [])),
        "drda": (base, two_view_train),
    }
    out = {}
    for name, (config, data) in runs.items():
        start = time.perf_counter()
        init = build_model(config)
        init.eval()
        result = train(data, config)
        seconds = time.perf_counter() - start
        held = evaluate(result.model, two_view_held)
        emb = EmbeddingMatrix(embedding_array(result.model)[:prime])
        out[name] = RunSummary(
            alpha=config.alpha,
            accuracy=float(held["accuracy"]),
            view_accuracy=held["view_accuracy"],
            objective_agreement_init=objective_terms(init, two_view_train, setup.seed).agreement_mean,
            objective_agreement_final=objective_terms(result.model, two_view_train, setup.seed).agreement_mean,
            agreement_init=evaluate(init, two_view_held)["agreement"],
            agreement_final=held["agreement"],
            agreement_init_train=evaluate(init, two_view_train)["agreement"],
            agreement_final_train=evaluate(result.model, two_view_train)["agreement"],
            ssc=ssc_average(emb, vocab_at(bpe, prime)),
            seconds=seconds,
            loss_curve=result.loss_curve,
        )
    return out
