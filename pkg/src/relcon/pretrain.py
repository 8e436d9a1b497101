"""Encoder pre-training with a frozen distance network ranking each anchor's candidates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nd
from .augment import AugmentationPipeline
from .dataio import Dataset
from .distnet import DistanceNetParams, TrainingDiverged, TrainLog
from .encoder import EncoderHyper, EncoderParams, encode_tensor, init_encoder
from .losses import LossConfig, batch_loss
from .sampler import AnchorBatch, AnchorStream, SamplerConfig, UserIndex, sample_batch

logger = logging.getLogger(__name__)


@dataclass
class EncoderTrainConfig:
    steps: int = 5000
    batch_size: int = 16
    lr: float = 3e-3
    window_length: int = 64
    seed: int = 0
    log_every: int = 100


def batch_embeddings(batch: AnchorBatch, params: EncoderParams):
    """Encode each distinct window once; return anchor (B, E) and candidate (B, n, E) tensors."""
    slot: dict[tuple, int] = {}
    arrays = []

    def idx(w) -> int:
        key = (w.user_id,) + w.key
        if key not in slot:
            slot[key] = len(arrays)
            arrays.append(w.data)
        return slot[key]

    a_idx = np.array([idx(a) for a in batch.anchors])
    c_idx = np.array([[idx(c.window) for c in cs.candidates] for cs in batch.candidate_sets])
    emb = encode_tensor(np.stack(arrays), params)
    return emb[a_idx], emb[c_idx]


def train_encoder(dataset: Dataset, dist_params: DistanceNetParams, sampler_cfg: SamplerConfig,
                  loss_cfg: LossConfig, config: EncoderTrainConfig, hyper: EncoderHyper | None = None,
                  pipeline: AugmentationPipeline | None = None) -> tuple[EncoderParams, TrainLog]:
    if not dist_params.frozen:
        raise ValueError("the distance network must be frozen before encoder training")
    params = init_encoder(hyper or EncoderHyper(), config.seed)
    opt = nd.Adam(params.parameters(), lr=config.lr)
    rng = np.random.default_rng([config.seed, sampler_cfg.rng_seed, 41])
    stream = AnchorStream(UserIndex(dataset, config.window_length), config.batch_size, rng)
    log = TrainLog()
    for step in range(config.steps):
        batch = sample_batch(stream, sampler_cfg, rng, dist_params, pipeline)
        dists = np.stack([cs.dists() for cs in batch.candidate_sets])
        try:
            anchors, cands = batch_embeddings(batch, params)
            loss = batch_loss(anchors, cands, dists, loss_cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
        except nd.NonFiniteError as exc:
            raise TrainingDiverged(f"encoder training diverged at step {step}: {exc}") from exc
        log.steps.append(step)
        log.losses.append(loss.item())
        if config.log_every and step % config.log_every == 0:
            logger.info("encoder step %d loss %.5f", step, loss.item())
    return params, log
