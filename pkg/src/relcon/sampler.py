"""Candidate pools: within-user windows across time plus other users' batch anchors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distnet
from .augment import AugmentationPipeline, apply_pipeline
from .dataio import DataError, Dataset, Recording, Window
from .losses import AUGMENTED_SELF, BETWEEN_USER, WITHIN_USER


@dataclass
class SamplerConfig:
    candidate_count: int = 8
    within_user_count: int = 4
    include_augmented_self: bool = False
    rng_seed: int = 0

    def __post_init__(self):
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be positive")
        if not 0 <= self.within_user_count <= self.candidate_count:
            raise ValueError("within_user_count must lie in [0, candidate_count]")
        if self.between_user_count < 0:
            raise ValueError("no slot left for the augmented self candidate")

    @property
    def between_user_count(self) -> int:
        return self.candidate_count - self.within_user_count - int(self.include_augmented_self)


@dataclass
class Candidate:
    window: Window
    source: str
    dist_to_anchor: float | None = None

    @property
    def key(self) -> tuple:
        return (self.window.user_id,) + self.window.key


@dataclass
class CandidateSet:
    anchor: Window
    candidates: list[Candidate] = field(default_factory=list)

    def dists(self) -> np.ndarray:
        if any(c.dist_to_anchor is None for c in self.candidates):
            raise ValueError("candidate set has not been scored")
        return np.array([c.dist_to_anchor for c in self.candidates])

    def count(self, source: str) -> int:
        return sum(c.source == source for c in self.candidates)


@dataclass
class AnchorBatch:
    anchors: list[Window]
    candidate_sets: list[CandidateSet]


class UserIndex:
    """Per-user list of recordings long enough to hold a window of length T."""

    def __init__(self, dataset: Dataset, T: int):
        self.T = T
        self.recordings: dict[str, list[Recording]] = {}
        for rec in dataset.recordings:
            if len(rec) >= T:
                self.recordings.setdefault(rec.user_id, []).append(rec)
        self.n_windows = {u: sum(len(r) - T + 1 for r in recs) for u, recs in self.recordings.items()}

    def users(self) -> list[str]:
        return sorted(self.recordings)

    def all_recordings(self) -> list[Recording]:
        return [r for u in self.users() for r in self.recordings[u]]

    def draw(self, user: str, rng: np.random.Generator) -> Window:
        """A uniformly random window of ``user`` over all (recording, offset) pairs."""
        recs = self.recordings[user]
        counts = np.array([len(r) - self.T + 1 for r in recs])
        flat = int(rng.integers(counts.sum()))
        i = int(np.searchsorted(np.cumsum(counts), flat, side="right"))
        offset = flat - int(counts[:i].sum())
        return recs[i].window_at(offset, self.T)


def sample_candidates(anchor: Window, batch: list[Window], index: UserIndex, config: SamplerConfig,
                      rng: np.random.Generator, pipeline: AugmentationPipeline | None = None) -> CandidateSet:
    c = config.within_user_count
    available = index.n_windows.get(anchor.user_id, 0) - 1
    if c > available:
        raise DataError(f"user {anchor.user_id!r} has {max(available, 0)} other windows, {c} requested")
    cset = CandidateSet(anchor)
    seen = {(anchor.user_id,) + anchor.key}
    while cset.count(WITHIN_USER) < c:
        w = index.draw(anchor.user_id, rng)
        key = (w.user_id,) + w.key
        if key in seen:
            continue
        seen.add(key)
        cset.candidates.append(Candidate(w, WITHIN_USER))
    others = [w for w in batch if w.user_id != anchor.user_id]
    n_between = config.between_user_count
    if n_between > len(others):
        raise DataError(f"batch holds {len(others)} windows from users other than {anchor.user_id!r}, "
                        f"{n_between} between-user candidates requested")
    for i in sorted(rng.choice(len(others), size=n_between, replace=False)) if n_between else []:
        cset.candidates.append(Candidate(others[int(i)], BETWEEN_USER))
    if config.include_augmented_self:
        if pipeline is None:
            raise ValueError("include_augmented_self needs an augmentation pipeline")
        cset.candidates.append(Candidate(apply_pipeline(pipeline, anchor, rng), AUGMENTED_SELF))
    return cset


def score_candidates(cset: CandidateSet, params: distnet.DistanceNetParams) -> CandidateSet:
    return score_batch([cset], params)[0]


def score_batch(sets: list[CandidateSet], params: distnet.DistanceNetParams) -> list[CandidateSet]:
    """Fill ``dist_to_anchor`` for every candidate with the frozen distance."""
    if not params.frozen:
        raise ValueError("candidates must be scored with a frozen distance network")
    anchors, cands = [], []
    for cs in sets:
        for c in cs.candidates:
            anchors.append(cs.anchor.data)
            cands.append(c.window.data)
    if not anchors:
        return sets
    d = distnet.distance_batch(np.stack(anchors), np.stack(cands), params)
    k = 0
    for cs in sets:
        for c in cs.candidates:
            c.dist_to_anchor = float(d[k])
            k += 1
    return sets


class AnchorStream:
    """Epochs over recordings in shuffled order, one random-offset anchor per recording."""

    def __init__(self, index: UserIndex, batch_size: int, rng: np.random.Generator):
        self.index = index
        self.batch_size = batch_size
        self.rng = rng
        self.recs = index.all_recordings()
        if len(self.recs) < batch_size:
            raise DataError(f"{len(self.recs)} recordings cannot fill a batch of {batch_size}")
        self._order: list[int] = []

    def next_batch(self) -> list[Window]:
        if len(self._order) < self.batch_size:
            self._order = list(self.rng.permutation(len(self.recs)))
        picked, self._order = self._order[:self.batch_size], self._order[self.batch_size:]
        T = self.index.T
        return [self.recs[i].window_at(int(self.rng.integers(len(self.recs[i]) - T + 1)), T) for i in picked]


def sample_batch(stream: AnchorStream, config: SamplerConfig, rng: np.random.Generator,
                 params: distnet.DistanceNetParams | None = None,
                 pipeline: AugmentationPipeline | None = None) -> AnchorBatch:
    anchors = stream.next_batch()
    sets = [sample_candidates(a, anchors, stream.index, config, rng, pipeline) for a in anchors]
    if params is not None:
        score_batch(sets, params)
    return AnchorBatch(anchors, sets)
