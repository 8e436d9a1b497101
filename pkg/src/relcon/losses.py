"""Relative contrastive loss and the binary / log-ratio alternatives.

Batched entry points take anchor embeddings (B, d), candidate embeddings
(B, n, d) and frozen anchor-to-candidate distances (B, n).  Per-anchor
losses are summed over candidates and averaged over anchors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import ndtensor as nd
from .ndtensor import Tensor

VARIANTS = ("relcon", "binary", "log_ratio")
WITHIN_USER, BETWEEN_USER, AUGMENTED_SELF = "within_user", "between_user", "augmented_self"


@dataclass
class LossConfig:
    temperature: float = 1.0
    variant: str = "relcon"
    normalize_embeddings: bool = False
    eps: float = 1e-8

    def __post_init__(self):
        if self.temperature <= 0:
            raise nd.ConfigError("temperature must be positive")
        if self.variant not in VARIANTS:
            raise nd.ConfigError(f"loss variant must be one of {VARIANTS}, got {self.variant!r}")


@dataclass
class ScoredCandidate:
    window_id: Hashable
    embedding: object  # Tensor or array of shape (d,)
    dist_to_anchor: float
    source: str = WITHIN_USER

    def __post_init__(self):
        if not np.isfinite(self.dist_to_anchor) or self.dist_to_anchor < 0:
            raise ValueError(f"candidate {self.window_id!r}: distance must be finite and >= 0")


# ------------------------------------------------------------ similarity
def _unit(x: Tensor) -> Tensor:
    return x / nd.l2_norm(x, axis=-1, keepdims=True)


def similarity(a, b, config: LossConfig | None = None) -> Tensor:
    """Inner product of two embeddings, cosine when ``normalize_embeddings``."""
    config = config or LossConfig()
    a, b = nd.as_tensor(a), nd.as_tensor(b)
    if a.shape != b.shape:
        raise nd.ShapeError(f"similarity: embedding shapes differ {a.shape} vs {b.shape}")
    if config.normalize_embeddings:
        a, b = _unit(a), _unit(b)
    return nd.tsum(a * b, axis=-1)


def candidate_similarities(anchors, cands, config: LossConfig) -> Tensor:
    """(B, d) x (B, n, d) -> (B, n) similarities."""
    a, c = nd.as_tensor(anchors), nd.as_tensor(cands)
    if a.ndim != 2 or c.ndim != 3 or c.shape[0] != a.shape[0] or c.shape[2] != a.shape[1]:
        raise nd.ShapeError(f"expected anchors (B, d) and candidates (B, n, d), got {a.shape}, {c.shape}")
    if config.normalize_embeddings:
        a, c = _unit(a), _unit(c)
    B, n, d = c.shape
    return nd.reshape(nd.matmul(nd.reshape(a, (B, 1, d)), nd.swapaxes(c)), (B, n))


def _logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    return nd.log(nd.tsum(nd.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)


# ----------------------------------------------------------------- NT-Xent
def nt_xent(anchor, pos, negs: Sequence, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    s_pos = similarity(anchor, pos, config) * (1.0 / config.temperature)
    logits = [nd.reshape(s_pos, (1,))]
    for neg in negs:
        logits.append(nd.reshape(similarity(anchor, neg, config) * (1.0 / config.temperature), (1,)))
    return _logsumexp(nd.concat(logits)) - s_pos


def negative_set(anchor_dists: Mapping, pos) -> set:
    """Candidates whose distance strictly exceeds the positive's."""
    if pos not in anchor_dists:
        raise KeyError(f"positive {pos!r} has no distance in the map")
    ref = anchor_dists[pos]
    return {c for c, d in anchor_dists.items() if d > ref}


def negative_mask(dists: np.ndarray) -> np.ndarray:
    """mask[..., i, j] is True when candidate j is a negative for positive i."""
    d = np.asarray(dists, dtype=np.float64)
    return d[..., None, :] > d[..., :, None]


# ---------------------------------------------------------------- batched
def relcon_loss_batch(anchors, cands, dists, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    s = candidate_similarities(anchors, cands, config) * (1.0 / config.temperature)
    B, n = s.shape
    mask = negative_mask(dists) | np.eye(n, dtype=bool)
    grid = nd.reshape(s, (B, 1, n))
    m = np.where(mask, np.broadcast_to(s.data[:, None, :], (B, n, n)), -np.inf).max(axis=-1)
    # masked-out logits pushed to exp(-1000) = 0 without ever overflowing
    shifted = (grid - m[..., None]) * mask - 1000.0 * ~mask
    denom = nd.tsum(nd.exp(shifted) * mask, axis=-1)
    per_term = nd.log(denom) + m - s
    return nd.mean(nd.tsum(per_term, axis=-1))


def binary_loss_batch(anchors, cands, dists, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    s = candidate_similarities(anchors, cands, config) * (1.0 / config.temperature)
    B, n = s.shape
    if n < 2:
        raise ValueError("binary contrastive loss needs at least two candidates")
    pos = np.argmin(np.asarray(dists), axis=-1)  # first index wins ties
    onehot = np.zeros((B, n))
    onehot[np.arange(B), pos] = 1.0
    s_pos = nd.tsum(s * onehot, axis=-1)
    return nd.mean(_logsumexp(s, axis=-1) - s_pos)


def log_ratio_loss_batch(anchors, cands, dists, config: LossConfig | None = None) -> Tensor:
    config = config or LossConfig()
    a, c = nd.as_tensor(anchors), nd.as_tensor(cands)
    d = np.asarray(dists, dtype=np.float64)
    B, n, dim = c.shape
    sq = nd.tsum(nd.square(c - nd.reshape(a, (B, 1, dim))), axis=-1)
    if config.eps > 0:
        log_e = 0.5 * nd.log(nd.clamp_min(sq, config.eps ** 2))
        log_d = np.log(np.maximum(d, config.eps))
    else:
        if (sq.data <= 0).any() or (d <= 0).any():
            raise nd.NonFiniteError("log-ratio loss met a zero distance with flooring disabled")
        log_e = 0.5 * nd.log(sq)
        log_d = np.log(d)
    pairs = negative_mask(d)  # [p, n]: d_p < d_n
    if not pairs.any():
        return nd.tsum(log_e * 0.0)
    diff_e = nd.reshape(log_e, (B, n, 1)) - nd.reshape(log_e, (B, 1, n))
    diff_d = log_d[:, :, None] - log_d[:, None, :]
    resid = (diff_e - diff_d) * pairs
    return nd.mean(nd.tsum(nd.square(resid), axis=(-2, -1)))


BATCH_LOSSES = {"relcon": relcon_loss_batch, "binary": binary_loss_batch, "log_ratio": log_ratio_loss_batch}


def batch_loss(anchors, cands, dists, config: LossConfig) -> Tensor:
    return BATCH_LOSSES[config.variant](anchors, cands, dists, config)


# ------------------------------------------------------------ per-anchor
def _single(anchor, candidates: Sequence[ScoredCandidate]):
    a = nd.reshape(nd.as_tensor(anchor), (1, -1))
    c = nd.stack([nd.as_tensor(x.embedding) for x in candidates])
    c = nd.reshape(c, (1,) + c.shape)
    d = np.array([[x.dist_to_anchor for x in candidates]])
    return a, c, d


def relcon_loss(anchor, candidates: Sequence[ScoredCandidate], config: LossConfig | None = None) -> Tensor:
    if not candidates:
        raise ValueError("relcon_loss needs at least one candidate")
    return relcon_loss_batch(*_single(anchor, candidates), config)


def binary_contrastive_loss(anchor, candidates: Sequence[ScoredCandidate], config: LossConfig | None = None) -> Tensor:
    return binary_loss_batch(*_single(anchor, candidates), config)


def log_ratio_metric_loss(anchor, candidates: Sequence[ScoredCandidate], config: LossConfig | None = None) -> Tensor:
    if not candidates:
        raise ValueError("log_ratio_metric_loss needs at least one candidate")
    return log_ratio_loss_batch(*_single(anchor, candidates), config)
