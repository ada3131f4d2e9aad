"""Contrastive objectives and the cosine-similarity kernel.

The default training loss is the symmetric normalized temperature-scaled
cross-entropy over in-batch pairs; a margin-based triplet loss with
hardest-in-batch negative mining is kept as an ablation.  Both exist in two
forms: a plain numpy evaluation and a graph builder used during training.
The numpy form delegates to the graph so there is exactly one implementation
of the math.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DomainError, ValidationError

NEG_MASK = -1e9  # additive mask; exp(NEG_MASK - rowmax) underflows to exactly 0


@dataclass
class LossConfig:
    temperature: float = 0.1
    triplet_margin: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise DomainError("temperature must be > 0")
        if self.triplet_margin < 0:
            raise DomainError("triplet margin must be >= 0")


@dataclass
class ContrastiveBatch:
    """2N embeddings plus the perfect matching that pairs positives."""

    embeddings: np.ndarray
    pair_of: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        p = np.asarray(self.pair_of, dtype=np.int64)
        n = z.shape[0]
        if z.ndim != 2 or n < 2 or n % 2 != 0:
            raise ValidationError("batch must hold an even number (>= 2) of embeddings")
        if p.shape != (n,):
            raise ValidationError("pair_of must map every batch index")
        if np.any(p == np.arange(n)) or np.any(p[p] != np.arange(n)):
            raise ValidationError("pair_of must be a fixed-point-free involution")
        if not np.all(np.isfinite(z)):
            raise ValidationError("embeddings contain non-finite values")
        if np.any(np.linalg.norm(z, axis=1) == 0):
            raise ValidationError("embeddings must be nonzero")
        self.embeddings = z
        self.pair_of = p


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise DomainError("cosine similarity is undefined for the zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def _normalize_rows(z: ad.Tensor) -> ad.Tensor:
    norms = ad.power(ad.reduce_sum(ad.mul(z, z), axis=1, keepdims=True), 0.5)
    return ad.div(z, norms)


def nt_xent_graph(z: ad.Tensor, pair_of: np.ndarray, tau: float) -> ad.Tensor:
    """NT-Xent loss over a (2N, d) embedding tensor.

    For each anchor i the positive is pair_of[i] and the denominator runs
    over every other batch item; log-sum-exp is stabilized by per-row max
    subtraction after the division by tau.
    """
    n = z.shape[0]
    if n < 2:
        raise DomainError("NT-Xent needs at least one pair")
    if tau <= 0:
        raise DomainError("temperature must be > 0")
    zn = _normalize_rows(z)
    sims = ad.matmul(zn, ad.transpose(zn, (1, 0)))
    logits = ad.shift(ad.scale(sims, 1.0 / tau), np.diag(np.full(n, NEG_MASK)))
    rowmax = logits.value.max(axis=1, keepdims=True)
    lse = ad.shift(
        ad.log(ad.reduce_sum(ad.exp(ad.shift(logits, -rowmax)), axis=1)),
        rowmax[:, 0],
    )
    pos = ad.gather_rows(logits, np.asarray(pair_of, dtype=np.int64))
    return ad.reduce_mean(ad.sub(lse, pos), axis=0)


def nt_xent(batch: ContrastiveBatch, tau: float = 0.1) -> float:
    """Evaluate the NT-Xent loss for a validated batch."""
    return float(nt_xent_graph(ad.Tensor(batch.embeddings), batch.pair_of, tau).value)


def triplet_loss(
    anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray, margin: float = 0.3
) -> float:
    """Single-triplet hinge on cosine distance: max(0, d(a,p) - d(a,n) + margin)."""
    d_ap = 1.0 - cosine_sim(anchor, positive)
    d_an = 1.0 - cosine_sim(anchor, negative)
    return max(0.0, d_ap - d_an + margin)


def triplet_graph(z: ad.Tensor, pair_of: np.ndarray, margin: float = 0.3) -> ad.Tensor:
    """Batch triplet loss with hardest in-batch negative mining.

    Every item anchors one triplet: positive = its pair, negative = the
    closest other item (cosine distance), chosen on current values.
    """
    n = z.shape[0]
    if n < 4:
        raise DomainError("batch triplet loss needs at least two pairs")
    pair_of = np.asarray(pair_of, dtype=np.int64)
    zn = _normalize_rows(z)
    sims = ad.matmul(zn, ad.transpose(zn, (1, 0)))
    dists = ad.shift(ad.scale(sims, -1.0), 1.0)

    masked = dists.value.copy()
    rows = np.arange(n)
    masked[rows, rows] = np.inf
    masked[rows, pair_of] = np.inf
    hardest = masked.argmin(axis=1)

    d_ap = ad.gather_rows(dists, pair_of)
    d_an = ad.gather_rows(dists, hardest)
    hinge = ad.clamp_min(ad.shift(ad.sub(d_ap, d_an), margin), 0.0)
    return ad.reduce_mean(hinge, axis=0)


def batch_triplet_loss(batch: ContrastiveBatch, margin: float = 0.3) -> float:
    return float(triplet_graph(ad.Tensor(batch.embeddings), batch.pair_of, margin).value)
