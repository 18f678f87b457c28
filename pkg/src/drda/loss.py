"""Multi-view training objective.

    total = NLL(prime) + mean_i NLL(aug_i) + alpha * mean_i symKL(prime, aug_i)

Distributions are ``(positions, classes)`` arrays. All reductions are a
mean over unmasked positions, so ``alpha`` does not scale with sentence
length. Two implementations live here: a float64 numpy reference with a
hand-derived gradient, and a torch version used by the trainer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError

KL_MODES = ("mean", "sum")


@dataclass(frozen=True)
class LossBreakdown:
    prime_nll: float
    aug_nll_mean: float
    agreement_mean: float
    total: float
    alpha: float
    k: int

    def as_dict(self) -> dict:
        return {
            "prime_nll": self.prime_nll,
            "aug_nll_mean": self.aug_nll_mean,
            "agreement_mean": self.agreement_mean,
            "total": self.total,
        }


def _mask(n: int, mask) -> np.ndarray:
    if mask is None:
        return np.ones(n, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape} does not match {n} positions")
    return mask


def _target_ids(target) -> np.ndarray:
    ids = getattr(target, "ids", target)
    return np.asarray(ids, dtype=np.int64)


def nll(dist, target, smoothing: float = 0.0, mask=None) -> float:
    """Label-smoothed negative log-likelihood, averaged over positions.

    Per position: ``(1-eps) * -log p[y] + eps * mean_c(-log p[c])``.
    Returns ``inf`` when a needed probability is zero.
    """
    p = np.asarray(dist, dtype=np.float64)
    y = _target_ids(target)
    if p.ndim != 2 or p.shape[0] != len(y):
        raise ShapeError(f"distribution shape {p.shape} does not match target length {len(y)}")
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"smoothing must lie in [0, 1), got {smoothing}")
    m = _mask(len(y), mask)
    if not m.any():
        return 0.0
    with np.errstate(divide="ignore"):
        logp = np.log(p[m])
    ym = y[m]
    tgt_term = -logp[np.arange(len(ym)), ym]
    if smoothing > 0.0:
        per_pos = (1.0 - smoothing) * tgt_term - smoothing * logp.mean(axis=1)
    else:
        per_pos = tgt_term
    return float(per_pos.mean())


def _kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.sum(p * (np.log(p) - np.log(q)), axis=1)


def sym_kl(p, q, mask=None, mode: str = "mean") -> float:
    """Symmetric KL per position, averaged over positions.

    ``mode="mean"`` uses ``(KL(p||q) + KL(q||p)) / 2``; ``"sum"`` drops the 1/2.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise ShapeError(f"shape mismatch: {p.shape} vs {q.shape}")
    if mode not in KL_MODES:
        raise ConfigError(f"kl mode must be one of {KL_MODES}, got {mode!r}")
    m = _mask(p.shape[0], mask)
    if not m.any():
        return 0.0
    both = _kl_rows(p[m], q[m]) + _kl_rows(q[m], p[m])
    if mode == "mean":
        both = 0.5 * both
    return float(both.mean())


def drda_loss(
    prime,
    augs: Sequence,
    target,
    alpha: float = 5.0,
    smoothing: float = 0.1,
    mask=None,
    kl_mode: str = "mean",
) -> LossBreakdown:
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    k = len(augs)
    if k == 0 and alpha > 0:
        raise ConfigError("agreement weight alpha > 0 needs at least one augmented view")
    prime = np.asarray(prime, dtype=np.float64)
    for a in augs:
        if np.shape(a) != prime.shape:
            raise ShapeError(f"augmented view shape {np.shape(a)} differs from prime {prime.shape}")
    prime_nll = nll(prime, target, smoothing, mask)
    if k:
        aug_nll_mean = sum(nll(a, target, smoothing, mask) for a in augs) / k
        agreement_mean = sum(sym_kl(prime, a, mask, kl_mode) for a in augs) / k
    else:
        aug_nll_mean = agreement_mean = 0.0
    total = prime_nll + aug_nll_mean + alpha * agreement_mean
    return LossBreakdown(prime_nll, aug_nll_mean, agreement_mean, total, alpha, k)


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def drda_loss_from_logits(prime_logits, aug_logits, target, alpha=5.0, smoothing=0.1, mask=None, kl_mode="mean") -> float:
    return drda_loss(
        softmax(prime_logits), [softmax(a) for a in aug_logits], target, alpha, smoothing, mask, kl_mode
    ).total


def drda_loss_grad(prime_logits, aug_logits, target, alpha=5.0, smoothing=0.1, mask=None, kl_mode="mean"):
    """Analytic gradient of the total loss w.r.t. prime and augmented logits.

    With ``p = softmax(a)``, ``q = softmax(b)``:
      d NLL / d a       = p - ((1-eps) * onehot(y) + eps / V)
      d KL(p||q) / d a  = p * (log p - log q - KL(p||q))
      d KL(q||p) / d a  = p - q
    each divided by the number of unmasked positions.
    """
    a = np.asarray(prime_logits, dtype=np.float64)
    bs = [np.asarray(b, dtype=np.float64) for b in aug_logits]
    y = _target_ids(target)
    T, V = a.shape
    k = len(bs)
    m = _mask(T, mask).astype(np.float64)[:, None]
    n_pos = m.sum()
    if n_pos == 0:
        return np.zeros_like(a), [np.zeros_like(b) for b in bs]
    scale = 0.5 if kl_mode == "mean" else 1.0

    target_dist = np.full((T, V), smoothing / V)
    target_dist[np.arange(T), y] += 1.0 - smoothing

    p = softmax(a)
    logp = np.log(p)
    grad_a = p - target_dist
    grad_bs = []
    for b in bs:
        q = softmax(b)
        logq = np.log(q)
        kl_pq = np.sum(p * (logp - logq), axis=1, keepdims=True)
        kl_qp = np.sum(q * (logq - logp), axis=1, keepdims=True)
        g_a = p * (logp - logq - kl_pq) + (p - q)
        g_b = q * (logq - logp - kl_qp) + (q - p)
        grad_a = grad_a + (alpha / k) * scale * g_a
        grad_bs.append((q - target_dist) / k + (alpha / k) * scale * g_b)
    return grad_a * m / n_pos, [g * m / n_pos for g in grad_bs]


def finite_difference_grad(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn(x)
        x[idx] = orig - step
        lo = fn(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-8) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


# ---------------------------------------------------------------------------
# torch implementation (training path)
# ---------------------------------------------------------------------------

def torch_nll(logp, target, mask, smoothing: float):
    """``logp``: (B, T, V) log-probs; ``target``: (B, T); ``mask``: (B, T) bool.

    Returns a (B,) tensor of per-sentence mean NLL.
    """
    tgt = -logp.gather(-1, target.unsqueeze(-1)).squeeze(-1)
    if smoothing > 0:
        per_pos = (1.0 - smoothing) * tgt - smoothing * logp.mean(dim=-1)
    else:
        per_pos = tgt
    maskf = mask.to(logp.dtype)
    return (per_pos * maskf).sum(-1) / maskf.sum(-1).clamp_min(1.0)


def torch_sym_kl(logp, logq, mask, mode: str = "mean"):
    p = logp.exp()
    q = logq.exp()
    both = (p * (logp - logq)).sum(-1) + (q * (logq - logp)).sum(-1)
    if mode == "mean":
        both = 0.5 * both
    maskf = mask.to(logp.dtype)
    return (both * maskf).sum(-1) / maskf.sum(-1).clamp_min(1.0)


def torch_drda_loss(prime_logp, aug_logps, target, mask, alpha: float, smoothing: float, kl_mode: str = "mean"):
    """Batch-mean loss. Returns ``(total, parts)`` with float parts for logging."""
    k = len(aug_logps)
    if k == 0 and alpha > 0:
        raise ConfigError("agreement weight alpha > 0 needs at least one augmented view")
    prime_nll = torch_nll(prime_logp, target, mask, smoothing).mean()
    total = prime_nll
    aug_nll = agree = prime_nll.new_zeros(())
    if k:
        aug_nll = sum(torch_nll(lq, target, mask, smoothing).mean() for lq in aug_logps) / k
        agree = sum(torch_sym_kl(prime_logp, lq, mask, kl_mode).mean() for lq in aug_logps) / k
        total = total + aug_nll + alpha * agree
    return total, LossBreakdown(
        float(prime_nll.detach()), float(aug_nll.detach()), float(agree.detach()),
        float(total.detach()), float(alpha), k,
    )
