"""Desk-scale Transformer for the multi-granularity training objective.

One embedding table serves every granularity: the table for vocabulary
size ``q`` is the view ``weight[:q]``, so adding augmented vocabularies
never adds parameters. The decoder predicts over the prime vocabulary.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .augment import AugmentedExample
from .bpe import BOS_ID, EOS_ID, PAD_ID, BpeModel, vocab_at
from .corpus_io import make_rng
from .errors import ConfigError, TrainingError, VocabularyError
from .loss import LossBreakdown, torch_drda_loss, torch_sym_kl
from .segmenter import TokenSequence, detokenize, segment_greedy

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    prime_size: int
    aug_sizes: tuple[int, ...] = ()
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    ffn_dim: int = 128
    dropout: float = 0.1
    alpha: float = 5.0
    smoothing: float = 0.1
    kl_mode: str = "mean"
    seed: int = 0
    # embedding rows; defaults to the largest granularity in use
    embed_rows: int = 0
    max_positions: int = 256
    output_init: str = "default"  # or "zero": uniform predictions at step 0
    # optimisation
    lr: float = 1e-3
    warmup: int = 100
    betas: tuple[float, float] = (0.9, 0.98)
    weight_decay: float = 0.0
    clip_norm: float = 1.0
    batch_size: int = 32
    max_tokens: int = 0  # >0: token-budget batching over all views
    max_steps: int = 1000
    dtype: str = "float32"

    def __post_init__(self):
        self.aug_sizes = tuple(int(q) for q in self.aug_sizes)
        self.betas = tuple(self.betas)
        if not self.embed_rows:
            self.embed_rows = max((self.prime_size, *self.aug_sizes))
        if self.embed_rows < max((self.prime_size, *self.aug_sizes)):
            raise ConfigError("embed_rows is smaller than a configured granularity")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")
        if not self.aug_sizes and self.alpha > 0:
            raise ConfigError("alpha > 0 needs at least one augmented granularity")
        if self.output_init not in ("default", "zero"):
            raise ConfigError(f"unknown output_init {self.output_init!r}")
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be a positive finite number, got {self.lr}")
        if self.alpha < 0 or not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("alpha must be >= 0 and smoothing in [0, 1)")

    @property
    def k(self) -> int:
        return len(self.aug_sizes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aug_sizes"] = list(self.aug_sizes)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Hypothesis:
    tokens: TokenSequence
    log_prob: float
    source_granularity: int
    finished: bool = True

    def text(self) -> str:
        toks = self.tokens.tokens or ()
        return detokenize([t for t, i in zip(toks, self.tokens.ids) if i >= 4])


def _sinusoids(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d // 2]
    return pe


class ToyTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.embedding = nn.Embedding(config.embed_rows, d, padding_idx=PAD_ID)
        nn.init.normal_(self.embedding.weight, mean=0.0, std=d ** -0.5)
        with torch.no_grad():
            self.embedding.weight[PAD_ID].zero_()
        self.register_buffer("positions", _sinusoids(config.max_positions, d).float(), persistent=False)
        self.drop = nn.Dropout(config.dropout)
        enc_layer = nn.TransformerEncoderLayer(
            d, config.n_heads, config.ffn_dim, config.dropout, batch_first=True, norm_first=True
        )
        dec_layer = nn.TransformerDecoderLayer(
            d, config.n_heads, config.ffn_dim, config.dropout, batch_first=True, norm_first=True
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, config.n_layers, norm=nn.LayerNorm(d), enable_nested_tensor=False
        )
        self.decoder = nn.TransformerDecoder(dec_layer, config.n_layers, norm=nn.LayerNorm(d))
        self.out_proj = nn.Linear(d, config.prime_size)
        if config.output_init == "zero":
            nn.init.zeros_(self.out_proj.weight)
            nn.init.zeros_(self.out_proj.bias)
        if config.dtype == "float64":
            self.double()

    def embedding_for(self, size: int) -> torch.Tensor:
        """Rows ``0..size-1`` of the shared table (a view, not a copy)."""
        if size > self.embedding.num_embeddings:
            raise VocabularyError(f"granularity {size} exceeds {self.embedding.num_embeddings} embedding rows")
        return self.embedding.weight[:size]

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and int(ids.max()) >= self.embedding.num_embeddings:
            raise VocabularyError(f"token id {int(ids.max())} outside {self.embedding.num_embeddings} embedding rows")
        x = self.embedding(ids) * math.sqrt(self.config.d_model)
        x = x + self.positions[: ids.shape[1]].to(x.dtype)
        return self.drop(x)

    def encode(self, src: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        pad = src.eq(PAD_ID)
        return self.encoder(self._embed(src), src_key_padding_mask=pad), pad

    def decode_logits(self, memory, src_pad, tgt_in: torch.Tensor) -> torch.Tensor:
        if int(tgt_in.max()) >= self.config.prime_size:
            raise VocabularyError("target id outside the prime vocabulary")
        T = tgt_in.shape[1]
        causal = torch.triu(torch.ones(T, T, dtype=torch.bool), diagonal=1)
        h = self.decoder(
            self._embed(tgt_in),
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=tgt_in.eq(PAD_ID),
            memory_key_padding_mask=src_pad,
        )
        return self.out_proj(h)

    def forward(self, src: torch.Tensor, tgt_in: torch.Tensor) -> torch.Tensor:
        """Log-probabilities ``(B, T, prime_size)``."""
        memory, pad = self.encode(src)
        return torch.log_softmax(self.decode_logits(memory, pad, tgt_in), dim=-1)

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_model(config: ModelConfig) -> ToyTransformer:
    torch.manual_seed(config.seed)
    return ToyTransformer(config)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def _pad(seqs: Sequence[Sequence[int]], dtype=torch.long) -> torch.Tensor:
    width = max(1, max(len(s) for s in seqs))
    out = torch.full((len(seqs), width), PAD_ID, dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(list(s), dtype=dtype)
    return out


def source_ids(seq: TokenSequence) -> list[int]:
    return [*seq.ids, EOS_ID]


def make_batch(examples: Sequence[AugmentedExample]):
    """Tensors for one batch: ``srcs`` (one per view), ``tgt_in``, ``tgt_out``, ``mask``."""
    k = examples[0].k
    srcs = [_pad([source_ids(ex.src_prime) for ex in examples])]
    for i in range(k):
        srcs.append(_pad([source_ids(ex.src_augs[i]) for ex in examples]))
    tgt_in = _pad([[BOS_ID, *ex.tgt.ids] for ex in examples])
    tgt_out = _pad([[*ex.tgt.ids, EOS_ID] for ex in examples])
    return srcs, tgt_in, tgt_out, tgt_out.ne(PAD_ID)


def _batches(dataset, config: ModelConfig, rng: np.random.Generator):
    """Endless stream of batches, reshuffled every epoch.

    With ``max_tokens`` a batch holds as many examples as fit the budget,
    counting the tokens of every source view plus the target, so adding
    views shrinks the number of sentences per batch.
    """
    n = len(dataset)
    epoch = 0
    while True:
        order = rng.permutation(n)
        if config.max_tokens > 0:
            batch, used = [], 0
            for i in order:
                ex = dataset[i]
                cost = len(ex.src_prime) + sum(len(a) for a in ex.src_augs) + len(ex.tgt) + 2 + ex.k
                if batch and used + cost > config.max_tokens:
                    yield epoch, batch
                    batch, used = [], 0
                batch.append(ex)
                used += cost
            if batch:
                yield epoch, batch
        else:
            for start in range(0, n, config.batch_size):
                yield epoch, [dataset[i] for i in order[start: start + config.batch_size]]
        epoch += 1


def _check_dataset(dataset: Sequence[AugmentedExample], config: ModelConfig) -> None:
    if not dataset:
        raise TrainingError("empty training set")
    for idx, ex in enumerate(dataset):
        if ex.k != config.k:
            raise TrainingError(f"example {idx} has {ex.k} augmented views, config expects {config.k}")


def inverse_sqrt(step: int, warmup: int) -> float:
    """Multiplier on the base learning rate: linear warmup, then 1/sqrt decay."""
    step = max(step, 1)
    if warmup <= 0:
        return 1.0 / math.sqrt(step)
    return min(step / warmup, math.sqrt(warmup / step))


def batch_loss(model: ToyTransformer, examples, config: ModelConfig):
    srcs, tgt_in, tgt_out, mask = make_batch(examples)
    logps = [model(src, tgt_in) for src in srcs]
    return torch_drda_loss(logps[0], logps[1:], tgt_out, mask, config.alpha, config.smoothing, config.kl_mode)


@dataclass
class TrainResult:
    model: ToyTransformer
    loss_curve: list[float]
    epochs: list[LossBreakdown] = field(default_factory=list)


def train(dataset: Sequence[AugmentedExample], config: ModelConfig, log_every: int = 0) -> TrainResult:
    """Minimise the mean multi-view loss with Adam and an inverse-sqrt schedule.

    Every view of an example goes through the same parameters in the
    same step. Fixed ``config.seed`` gives an identical loss curve.
    """
    _check_dataset(dataset, config)
    model = build_model(config)
    model.train()
    opt = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=config.betas, weight_decay=config.weight_decay
    )
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: inverse_sqrt(s + 1, config.warmup))
    rng = make_rng([config.seed, 17])

    curve: list[float] = []
    epochs: list[LossBreakdown] = []
    acc = np.zeros(4)
    n_in_epoch = 0
    current_epoch = 0

    def close_epoch():
        if n_in_epoch:
            m = acc / n_in_epoch
            epochs.append(LossBreakdown(m[0], m[1], m[2], m[3], config.alpha, config.k))

    for step, (epoch, batch) in enumerate(_batches(dataset, config, rng)):
        if step >= config.max_steps:
            break
        if epoch != current_epoch:
            close_epoch()
            acc[:] = 0
            n_in_epoch = 0
            current_epoch = epoch
        total, parts = batch_loss(model, batch, config)
        if not torch.isfinite(total):
            raise TrainingError(
                f"non-finite loss at step {step} (lr={sched.get_last_lr()[0]:.2e}, parts={parts.as_dict()}); "
                "lower lr, lengthen warmup or tighten clip_norm"
            )
        opt.zero_grad()
        total.backward()
        if config.clip_norm > 0:
            nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
        opt.step()
        sched.step()
        curve.append(parts.total)
        acc += (parts.prime_nll, parts.aug_nll_mean, parts.agreement_mean, parts.total)
        n_in_epoch += 1
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.4f %s", step, parts.total, parts.as_dict())
    close_epoch()
    model.eval()
    return TrainResult(model, curve, epochs)


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def forward(model: ToyTransformer, src: TokenSequence, tgt_prefix: TokenSequence) -> np.ndarray:
    """Teacher-forced distributions ``(len(tgt_prefix)+1, prime_size)``.

    Row ``t`` is the prediction after ``<s>`` and the first ``t`` prefix tokens.
    """
    with torch.no_grad():
        s = torch.tensor([source_ids(src)])
        t = torch.tensor([[BOS_ID, *tgt_prefix.ids]])
        return model(s, t)[0].exp().double().numpy()


@torch.no_grad()
def evaluate(model: ToyTransformer, dataset: Sequence[AugmentedExample], batch_size: int = 64) -> dict:
    """Teacher-forced token accuracy per view and mean agreement, eval mode."""
    was_training = model.training
    model.eval()
    k = dataset[0].k
    correct = np.zeros(k + 1)
    total = 0
    agree_sum = 0.0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start: start + batch_size]
        srcs, tgt_in, tgt_out, mask = make_batch(chunk)
        logps = [model(src, tgt_in) for src in srcs]
        for v, lp in enumerate(logps):
            correct[v] += ((lp.argmax(-1) == tgt_out) & mask).sum().item()
        total += mask.sum().item()
        if k:
            per = sum(torch_sym_kl(logps[0], lq, mask, model.config.kl_mode) for lq in logps[1:]) / k
            agree_sum += per.sum().item()
    model.train(was_training)
    out = {"accuracy": correct[0] / total, "view_accuracy": (correct / total).tolist()}
    out["agreement"] = agree_sum / len(dataset) if k else 0.0
    return out


@torch.no_grad()
def objective_terms(model: ToyTransformer, dataset: Sequence[AugmentedExample], seed: int = 0,
                    batch_size: int = 64) -> LossBreakdown:
    """Example-weighted mean of the training loss terms, computed in train mode.

    Dropout is active exactly as during training; ``seed`` fixes its masks.
    """
    config = model.config
    was_training = model.training
    model.train()
    torch.manual_seed(seed)
    acc = np.zeros(4)
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start: start + batch_size]
        _, parts = batch_loss(model, chunk, config)
        acc += len(chunk) * np.array([parts.prime_nll, parts.aug_nll_mean, parts.agreement_mean, parts.total])
    model.train(was_training)
    m = acc / len(dataset)
    return LossBreakdown(m[0], m[1], m[2], m[3], config.alpha, config.k)


@torch.no_grad()
def mean_agreement(model: ToyTransformer, dataset: Sequence[AugmentedExample]) -> float:
    return evaluate(model, dataset)["agreement"]


def _step_logprobs(model, memory, pad, prefixes: list[list[int]]) -> torch.Tensor:
    tgt = torch.tensor(prefixes)
    logits = model.decode_logits(memory.expand(len(prefixes), -1, -1), pad.expand(len(prefixes), -1), tgt)[:, -1]
    logits[:, PAD_ID] = float("-inf")
    logits[:, BOS_ID] = float("-inf")
    return torch.log_softmax(logits.double(), dim=-1)


@torch.no_grad()
def decode(model: ToyTransformer, src: TokenSequence, beam: int = 1, max_len: int = 64) -> Hypothesis:
    """Beam search; ``beam=1`` is greedy argmax. Returns the best finished hypothesis by log-prob.

    Emitted tokens (including a final ``</s>``) make up ``tokens``; if
    nothing finishes within ``max_len`` steps the best capped hypothesis
    is returned with ``finished=False``.
    """
    if beam < 1 or max_len < 1:
        raise ConfigError("beam and max_len must be >= 1")
    model.eval()
    memory, pad = model.encode(torch.tensor([source_ids(src)]))
    live: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        lp = _step_logprobs(model, memory, pad, [[BOS_ID, *toks] for _, toks in live])
        cands = []
        for (score, toks), row in zip(live, lp):
            top = torch.topk(row, min(beam, row.numel()))
            for v, i in zip(top.values.tolist(), top.indices.tolist()):
                cands.append((score + v, toks + [i]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for score, toks in cands:
            if toks[-1] == EOS_ID:
                finished.append((score, toks))
            else:
                live.append((score, toks))
            if len(live) == beam:
                break
        if len(finished) >= beam or not live:
            break
    pool = finished or live
    best_score, best = max(pool, key=lambda c: (c[0], [-t for t in c[1]]))
    vocab = vocab_at_cache(model)
    seq = TokenSequence(tuple(best), tuple(vocab[i] for i in best), model.config.prime_size)
    return Hypothesis(seq, best_score, src.vocab_size, bool(finished))


def vocab_at_cache(model: ToyTransformer) -> tuple[str, ...]:
    toks = getattr(model, "_vocab_tokens", None)
    if toks is None:
        return tuple(str(i) for i in range(model.config.prime_size))
    return toks


def attach_bpe(model: ToyTransformer, bpe: BpeModel) -> ToyTransformer:
    """Let decoded hypotheses carry token strings from ``bpe``."""
    model._vocab_tokens = vocab_at(bpe, model.config.prime_size).tokens
    return model


def eq7_score(hyp: Hypothesis) -> float:
    """Length-normalised log-probability ``log P(y|x) / |y|``."""
    n = len(hyp.tokens.ids)
    if n < 1:
        raise ConfigError("cannot score an empty hypothesis")
    return hyp.log_prob / n


def _candidates(model, sentence, bpe, sizes, beam, max_len):
    if not sizes:
        raise ConfigError("need at least one granularity")
    out = []
    for q in sizes:
        src = segment_greedy(sentence, bpe, q)
        out.append((q, decode(model, src, beam, max_len)))
    return out


def _pick(cands: list[tuple[int, Hypothesis]], score_fn, prime: int) -> Hypothesis:
    # highest score; ties prefer the prime granularity, then the smaller size
    best = max(cands, key=lambda c: (score_fn(c[1]), c[0] == prime, -c[0]))
    return best[1]


def dynamic_select(model, sentence: str, bpe: BpeModel, sizes: Sequence[int], beam: int = 1, max_len: int = 64) -> Hypothesis:
    cands = _candidates(model, sentence, bpe, sizes, beam, max_len)
    return _pick(cands, eq7_score, model.config.prime_size)


def oracle_select(
    model, sentence: str, reference: str, bpe: BpeModel, sizes: Sequence[int], beam: int = 1, max_len: int = 64
) -> Hypothesis:
    """Candidate with the highest sentence BLEU against ``reference`` (analysis only)."""
    cands = _candidates(model, sentence, bpe, sizes, beam, max_len)
    return _pick(cands, lambda h: sentence_bleu(h.text(), reference), model.config.prime_size)


def _ngrams(words: list[str], n: int) -> dict:
    counts: dict = {}
    for i in range(len(words) - n + 1):
        g = tuple(words[i: i + n])
        counts[g] = counts.get(g, 0) + 1
    return counts


def sentence_bleu(hypothesis: str, reference: str, max_n: int = 4) -> float:
    """Whitespace-token BLEU with add-one smoothing for n > 1 and brevity penalty."""
    hyp = hypothesis.split()
    ref = reference.split()
    if not hyp:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        r = _ngrams(ref, n)
        match = sum(min(c, r.get(g, 0)) for g, c in h.items())
        total = max(len(hyp) - n + 1, 0)
        if n == 1:
            if match == 0:
                return 0.0
            log_p += math.log(match / total)
        else:
            log_p += math.log((match + 1) / (total + 1))
    bp = 1.0 if len(hyp) > len(ref) else math.exp(1 - len(ref) / len(hyp))
    return bp * math.exp(log_p / max_n)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: ToyTransformer, directory: str | Path, extra: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"version": CHECKPOINT_VERSION, "config": model.config.to_dict(), **(extra or {})}
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    torch.save(model.state_dict(), directory / "weights.pt")


def load_checkpoint(directory: str | Path) -> tuple[ToyTransformer, dict]:
    directory = Path(directory)
    meta = json.loads((directory / "config.json").read_text(encoding="utf-8"))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
    model = ToyTransformer(ModelConfig.from_dict(meta["config"]))
    model.load_state_dict(torch.load(directory / "weights.pt", weights_only=True))
    model.eval()
    return model, meta


def embedding_array(model: ToyTransformer) -> np.ndarray:
    return model.embedding.weight.detach().double().numpy().copy()
