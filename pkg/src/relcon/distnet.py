"""Learnable motif distance: reconstruct an anchor from a candidate by cross-attention.

The anchor and candidate are both normalized with the candidate's per-channel
statistics, embedded by three dilated conv stacks (query from the anchor,
key/value from the candidate), and each anchor step attends over all
candidate steps.  The attended values are projected back to 3 channels and
un-normalized with the same candidate statistics.  The distance is the
squared reconstruction error.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .augment import AugmentationPipeline, apply_pipeline
from .dataio import Dataset, Window, sample_random_windows
from .ndtensor import Tensor

logger = logging.getLogger(__name__)

NORMALIZERS = ("sparsemax", "softmax")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class DistanceNetHyper:
    embed_dim: int = 16
    kernel_size: int = 7
    dilations: tuple = (1, 2)
    attention_normalizer: str = "sparsemax"
    use_revin: bool = True
    revin_literal: bool = False  # (out + mu) * sigma instead of out * sigma + mu
    eps: float = 1e-5

    def __post_init__(self):
        self.dilations = tuple(int(d) for d in self.dilations)
        if self.attention_normalizer not in NORMALIZERS:
            raise nd.ConfigError(f"attention_normalizer must be one of {NORMALIZERS}")
        if self.kernel_size % 2 == 0:
            raise nd.ConfigError("kernel_size must be odd")
        if not self.dilations or min(self.dilations) < 1:
            raise nd.ConfigError("dilations must be a non-empty list of positive ints")
        if self.embed_dim < 1 or self.eps <= 0:
            raise nd.ConfigError("embed_dim and eps must be positive")

    @property
    def n_layers(self) -> int:
        return len(self.dilations)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["dilations"] = list(self.dilations)
        return d

    @classmethod
    def full(cls) -> "DistanceNetHyper":
        return cls(embed_dim=64, kernel_size=15, dilations=(1, 2, 4, 8))


@dataclass
class CandidateStats:
    mu: np.ndarray  # (..., 1, 3)
    sigma: np.ndarray  # (..., 1, 3), floored at eps


class DistanceNetParams(nd.ParamSet):
    """q/k/v conv stacks (``{q,k,v}.{layer}.{w,b}``) plus the output projection ``w_o``, ``b_o``."""

    kind = "distnet"
    hyper_cls = DistanceNetHyper


def init_params(hyper: DistanceNetHyper, seed: int = 0) -> DistanceNetParams:
    rng = np.random.default_rng(seed)
    d, k = hyper.embed_dim, hyper.kernel_size
    tensors: dict[str, Tensor] = {}
    for net in ("q", "k", "v"):
        cin = 3
        for i in range(hyper.n_layers):
            std = math.sqrt(2.0 / (k * cin))
            tensors[f"{net}.{i}.w"] = Tensor(rng.normal(0, std, size=(k, cin, d)), True)
            tensors[f"{net}.{i}.b"] = Tensor(np.zeros(d), True)
            cin = d
    tensors["w_o"] = Tensor(rng.normal(0, 1 / math.sqrt(d), size=(d, 3)), True)
    tensors["b_o"] = Tensor(np.zeros(3), True)
    return DistanceNetParams(hyper, tensors)


# --------------------------------------------------------------- forward
def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Window) else np.asarray(x, dtype=np.float64)


def candidate_stats(cand, eps: float = 1e-5) -> CandidateStats:
    """Per-channel mean and (population) std over the time axis, std floored at ``eps``."""
    x = _as_array(cand)
    if x.shape[-2] < 2:
        raise nd.ShapeError("candidate_stats needs at least two time steps")
    mu = x.mean(axis=-2, keepdims=True)
    sigma = np.maximum(x.std(axis=-2, keepdims=True), eps)
    return CandidateStats(mu, sigma)


def revin_normalize(x, stats: CandidateStats):
    return (x - stats.mu) / stats.sigma


def revin_unnormalize(y, stats: CandidateStats, literal: bool = False):
    if literal:
        return (y + stats.mu) * stats.sigma
    return y * stats.sigma + stats.mu


def _stats_for(cand: np.ndarray, hyper: DistanceNetHyper) -> CandidateStats:
    if hyper.use_revin:
        return candidate_stats(cand, hyper.eps)
    shape = cand.shape[:-2] + (1, 3)
    return CandidateStats(np.zeros(shape), np.ones(shape))


def dilated_convnet(x, params: DistanceNetParams, net: str) -> Tensor:
    h = x
    for i, dil in enumerate(params.hyper.dilations):
        h = nd.conv1d(h, params.tensors[f"{net}.{i}.w"], dilation=dil) + params.tensors[f"{net}.{i}.b"]
        if i < params.hyper.n_layers - 1:
            h = nd.relu(h)
    return h


def _check_pair(anchor: np.ndarray, cand: np.ndarray) -> None:
    if anchor.shape != cand.shape:
        raise nd.ShapeError(f"anchor {anchor.shape} and candidate {cand.shape} must have equal shape")
    if anchor.shape[-1] != 3:
        raise nd.ShapeError("windows must have 3 channels")


def embed_qkv(anchor, cand, params: DistanceNetParams, stats: CandidateStats | None = None):
    a, c = _as_array(anchor), _as_array(cand)
    _check_pair(a, c)
    stats = stats if stats is not None else _stats_for(c, params.hyper)
    a_n = Tensor(revin_normalize(a, stats))
    c_n = Tensor(revin_normalize(c, stats))
    return dilated_convnet(a_n, params, "q"), dilated_convnet(c_n, params, "k"), dilated_convnet(c_n, params, "v")


def attention_weights(Q: Tensor, K: Tensor, normalizer: str) -> Tensor:
    scores = nd.matmul(Q, nd.swapaxes(K)) * (1.0 / math.sqrt(Q.shape[-1]))
    if normalizer == "sparsemax":
        return nd.sparsemax(scores)
    return nd.softmax(scores)


def reconstruct(anchor, cand, params: DistanceNetParams, return_attention: bool = False):
    """Reconstruction of the anchor from the candidate, shape (..., T, 3)."""
    a, c = _as_array(anchor), _as_array(cand)
    _check_pair(a, c)
    stats = _stats_for(c, params.hyper)
    Q, K, V = embed_qkv(a, c, params, stats)
    attn = attention_weights(Q, K, params.hyper.attention_normalizer)
    out = nd.matmul(nd.matmul(attn, V), params.tensors["w_o"]) + params.tensors["b_o"]
    out = revin_unnormalize(out, stats, params.hyper.revin_literal)
    return (out, attn) if return_attention else out


def cross_attention_recon(anchor, cand, params: DistanceNetParams) -> Tensor:
    return reconstruct(anchor, cand, params)


def distance_tensor(anchor, cand, params: DistanceNetParams) -> Tensor:
    """Squared reconstruction error per pair; shape (...,) for batched input."""
    a = _as_array(anchor)
    err = reconstruct(a, cand, params) - a
    return nd.tsum(nd.square(err), axis=(-2, -1))


def distance(anchor, cand, params: DistanceNetParams) -> float:
    with nd.no_grad():
        return distance_tensor(anchor, cand, params).item()


def distance_batch(anchors: np.ndarray, cands: np.ndarray, params: DistanceNetParams, chunk: int = 256) -> np.ndarray:
    """Distances for stacked (B, T, 3) anchor/candidate pairs."""
    anchors = np.asarray(anchors, dtype=np.float64)
    cands = np.asarray(cands, dtype=np.float64)
    out = np.empty(len(anchors))
    with nd.no_grad():
        for s in range(0, len(anchors), chunk):
            out[s:s + chunk] = distance_tensor(anchors[s:s + chunk], cands[s:s + chunk], params).data
    return out


# --------------------------------------------------------------- training
@dataclass
class DistanceTrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-3
    window_length: int = 64
    seed: int = 0
    log_every: int = 50


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        return "step,loss\n" + "".join(f"{s},{l!r}\n" for s, l in zip(self.steps, self.losses))


def train_distance(dataset: Dataset, pipeline: AugmentationPipeline, config: DistanceTrainConfig,
                   hyper: DistanceNetHyper | None = None) -> tuple[DistanceNetParams, TrainLog]:
    """Fit the net to rebuild each anchor from an augmented copy of itself.

    Returns frozen parameters and the per-step loss log.
    """
    hyper = hyper or DistanceNetHyper()
    params = init_params(hyper, config.seed)
    opt = nd.Adam(params.parameters(), lr=config.lr)
    rng = np.random.default_rng([config.seed, 11])
    aug_rng = np.random.default_rng([pipeline.rng_seed, 12])
    log = TrainLog()
    T = config.window_length
    for step in range(config.steps):
        anchors = sample_random_windows(dataset, config.batch_size, T, rng)
        cands = [apply_pipeline(pipeline, w, aug_rng, T) for w in anchors]
        a = np.stack([w.data for w in anchors])
        c = np.stack([w.data for w in cands])
        try:
            loss = nd.mean(distance_tensor(a, c, params))
            opt.zero_grad()
            loss.backward()
            opt.step()
        except nd.NonFiniteError as exc:
            raise TrainingDiverged(f"distance training diverged at step {step}: {exc}") from exc
        log.steps.append(step)
        log.losses.append(loss.item())
        if config.log_every and step % config.log_every == 0:
            logger.info("distnet step %d loss %.5f", step, loss.item())
    return params.freeze(), log


def rotation_triplets(dataset: Dataset, params: DistanceNetParams, n: int = 500, T: int = 64,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Distances d(X, rot(X)) and d(X, Y) over ``n`` sampled triplets.

    X is a random window, rot(X) a uniformly random 3D rotation of it and Y
    a random window whose label differs from X's.
    """
    from .augment import random_unit_vector, rotation3d

    rng = np.random.default_rng([seed, 21])
    anchors, rotated, others = [], [], []
    while len(anchors) < n:
        x, y = sample_random_windows(dataset, 2, T, rng)
        if x.label is None or x.label == y.label:
            continue
        anchors.append(x.data)
        rotated.append(rotation3d(x, random_unit_vector(rng), rng.uniform(0, 2 * np.pi)).data)
        others.append(y.data)
    a = np.stack(anchors)
    return distance_batch(a, np.stack(rotated), params), distance_batch(a, np.stack(others), params)
