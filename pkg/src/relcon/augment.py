"""Accelerometry augmentations that keep a window's semantics.

All ops map a T x 3 window to a T x 3 window.  Ops that need randomness
take explicit parameters; the pipeline draws those parameters from a
seeded generator so (seed, input, pipeline) fixes the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import Window

KINDS = ("rotation3d", "jitter", "scale", "invert", "time_reverse", "channel_shuffle", "time_warp")


class AugmentationError(ValueError):
    pass


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit ``axis`` (right-hand rule)."""
    axis = np.asarray(axis, dtype=np.float64)
    if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise AugmentationError(f"rotation axis must be a unit 3-vector, got {axis}")
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def rotation3d(window: Window, axis, angle: float) -> Window:
    R = rotation_matrix(axis, angle)
    return window.with_data(window.data @ R.T, augmented=True)


def jitter(window: Window, sigma: float, rng: np.random.Generator | None = None) -> Window:
    if sigma < 0:
        raise AugmentationError("jitter sigma must be non-negative")
    if sigma == 0:
        return window.with_data(window.data.copy(), augmented=True)
    rng = rng if rng is not None else np.random.default_rng(0)
    return window.with_data(window.data + rng.normal(0.0, sigma, size=window.data.shape), augmented=True)


def scale(window: Window, factor: float) -> Window:
    if factor <= 0:
        raise AugmentationError(f"scale factor must be positive, got {factor}")
    return window.with_data(window.data * factor, augmented=True)


def invert(window: Window) -> Window:
    return window.with_data(-window.data, augmented=True)


def time_reverse(window: Window) -> Window:
    return window.with_data(window.data[::-1].copy(), augmented=True)


def channel_shuffle(window: Window, perm) -> Window:
    perm = [int(p) for p in perm]
    if sorted(perm) != [0, 1, 2]:
        raise AugmentationError(f"channel permutation must reorder (0, 1, 2), got {perm}")
    return window.with_data(window.data[:, perm].copy(), augmented=True)


def time_warp(window: Window, knots: int, max_speed_ratio: float, rng: np.random.Generator | None = None) -> Window:
    """Smoothly vary playback speed, then resample back to the original length.

    Speeds at ``knots + 2`` evenly spaced points are drawn from
    [1 / max_speed_ratio, max_speed_ratio] and linearly interpolated; the
    cumulative speed becomes the read position into the original signal.
    """
    if knots < 0 or max_speed_ratio < 1:
        raise AugmentationError("time_warp needs knots >= 0 and max_speed_ratio >= 1")
    rng = rng if rng is not None else np.random.default_rng(0)
    T = window.length
    knot_speed = np.exp(rng.uniform(-math.log(max_speed_ratio), math.log(max_speed_ratio), size=knots + 2))
    speed = np.interp(np.linspace(0, 1, T), np.linspace(0, 1, knots + 2), knot_speed)
    pos = np.concatenate([[0.0], np.cumsum(speed[:-1])])
    pos *= (T - 1) / pos[-1] if pos[-1] > 0 else 0.0
    src = np.arange(T)
    out = np.stack([np.interp(pos, src, window.data[:, c]) for c in range(3)], axis=1)
    return window.with_data(out, augmented=True)


# ---------------------------------------------------------------- pipeline
_DEFAULT_PARAMS = {
    "rotation3d": {"max_angle": 2 * math.pi},
    "jitter": {"sigma": 0.05, "relative": True},
    "scale": {"low": 0.8, "high": 1.2},
    "invert": {},
    "time_reverse": {},
    "channel_shuffle": {},
    "time_warp": {"knots": 4, "max_speed_ratio": 1.2},
}


@dataclass
class AugmentationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    probability: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AugmentationError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise AugmentationError(f"probability must lie in [0, 1], got {self.probability}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        merged.update(self.params)
        self.params = merged
        p = self.params
        if self.kind == "jitter" and p["sigma"] < 0:
            raise AugmentationError("jitter sigma must be non-negative")
        if self.kind == "scale" and not 0 < p["low"] <= p["high"]:
            raise AugmentationError("scale range must be positive and ordered")
        if self.kind == "time_warp" and (p["knots"] < 0 or p["max_speed_ratio"] < 1):
            raise AugmentationError("invalid time_warp parameters")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "probability": self.probability}


@dataclass
class AugmentationPipeline:
    specs: list[AugmentationSpec] = field(default_factory=list)
    rng_seed: int = 0

    def to_dict(self) -> dict:
        return {"specs": [s.to_dict() for s in self.specs], "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentationPipeline":
        return cls([AugmentationSpec(**s) for s in d.get("specs", [])], int(d.get("rng_seed", 0)))

    def is_identity(self) -> bool:
        return all(s.probability == 0 for s in self.specs)


def default_pipeline(seed: int = 0) -> AugmentationPipeline:
    return AugmentationPipeline([
        AugmentationSpec("rotation3d", probability=1.0),
        AugmentationSpec("jitter", probability=0.8),
        AugmentationSpec("scale", probability=0.5),
    ], seed)


def identity_pipeline(seed: int = 0) -> AugmentationPipeline:
    return AugmentationPipeline([], seed)


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _apply_one(spec: AugmentationSpec, w: Window, rng: np.random.Generator) -> Window:
    p = spec.params
    if spec.kind == "rotation3d":
        return rotation3d(w, random_unit_vector(rng), rng.uniform(0.0, p["max_angle"]))
    if spec.kind == "jitter":
        sigma = p["sigma"] * (float(w.data.std()) if p.get("relative", False) else 1.0)
        return jitter(w, sigma, rng)
    if spec.kind == "scale":
        return scale(w, rng.uniform(p["low"], p["high"]))
    if spec.kind == "invert":
        return invert(w)
    if spec.kind == "time_reverse":
        return time_reverse(w)
    if spec.kind == "channel_shuffle":
        return channel_shuffle(w, rng.permutation(3))
    return time_warp(w, int(p["knots"]), float(p["max_speed_ratio"]), rng)


def apply_pipeline(pipeline: AugmentationPipeline, window: Window, rng: np.random.Generator | None = None,
                   length: int | None = None) -> Window:
    """Apply each spec in order with its probability.

    Without ``rng`` the pipeline's own seed starts a fresh stream, so the
    same (pipeline, window) always yields the same output.  Training loops
    pass one long-lived generator seeded from ``pipeline.rng_seed``.
    """
    if length is not None and window.length != length:
        raise AugmentationError(f"window length {window.length} != configured length {length}")
    rng = rng if rng is not None else np.random.default_rng(pipeline.rng_seed)
    out = window
    for spec in pipeline.specs:
        if rng.random() < spec.probability:
            out = _apply_one(spec, out, rng)
    return out
