"""Recordings, windows, on-disk CSV datasets, user splits and the synthetic generator."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

TARGET_NAMES = ("stride_velocity", "double_support_time")


class DataError(ValueError):
    """Malformed or insufficient data."""


@dataclass(frozen=True)
class Window:
    data: np.ndarray  # (T, 3)
    user_id: str
    recording_id: str
    offset: int
    label: int | None = None
    targets: dict = field(default_factory=dict)
    augmented: bool = False

    @property
    def key(self) -> tuple:
        return (self.recording_id, self.offset, self.augmented)

    @property
    def length(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, augmented: bool | None = None) -> "Window":
        return replace(self, data=data, augmented=self.augmented if augmented is None else augmented)


@dataclass
class Recording:
    user_id: str
    recording_id: str
    sample_rate_hz: float
    samples: np.ndarray  # (N, 3)
    labels: np.ndarray | None = None  # per-sample class ids
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 3:
            raise DataError(f"{self.recording_id}: samples must be N x 3, got {self.samples.shape}")
        if self.sample_rate_hz <= 0:
            raise DataError(f"{self.recording_id}: sample rate must be positive")
        if not np.isfinite(self.samples).all():
            raise DataError(f"{self.recording_id}: non-finite samples")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.samples),):
                raise DataError(f"{self.recording_id}: labels do not align with samples")

    def __len__(self) -> int:
        return len(self.samples)

    def window_at(self, offset: int, T: int) -> Window:
        if offset < 0 or offset + T > len(self):
            raise DataError(f"{self.recording_id}: window [{offset}, {offset + T}) outside recording of length {len(self)}")
        label = None
        if self.labels is not None:
            label = majority_label(self.labels[offset:offset + T])
        return Window(self.samples[offset:offset + T].copy(), self.user_id, self.recording_id,
                      offset, label, dict(self.targets))


@dataclass
class Dataset:
    recordings: list[Recording]
    sample_rate_hz: float
    label_names: list[str] = field(default_factory=list)

    def users(self) -> list[str]:
        return sorted({r.user_id for r in self.recordings})

    def by_user(self) -> dict[str, list[Recording]]:
        out: dict[str, list[Recording]] = {}
        for r in self.recordings:
            out.setdefault(r.user_id, []).append(r)
        return out

    def subset(self, users) -> "Dataset":
        keep = set(users)
        return Dataset([r for r in self.recordings if r.user_id in keep], self.sample_rate_hz, list(self.label_names))


@dataclass
class SplitManifest:
    assignment: dict[str, str]  # user_id -> train | val | test

    def users(self, split: str) -> list[str]:
        return sorted(u for u, s in self.assignment.items() if s == split)

    def to_dict(self) -> dict:
        return {"assignment": dict(sorted(self.assignment.items()))}


def majority_label(labels: np.ndarray) -> int:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() >= 0:
        return int(np.argmax(np.bincount(labels)))  # argmax takes the smallest id on ties
    counts = Counter(int(x) for x in labels)
    best = max(counts.values())
    return min(c for c, n in counts.items() if n == best)


def window(recording: Recording, T: int, stride: int) -> list[Window]:
    if stride <= 0:
        raise DataError(f"stride must be positive, got {stride}")
    if T > len(recording):
        raise DataError(f"{recording.recording_id}: window length {T} exceeds recording length {len(recording)}")
    return [recording.window_at(off, T) for off in range(0, len(recording) - T + 1, stride)]


def window_dataset(dataset: Dataset, T: int, stride: int) -> list[Window]:
    out: list[Window] = []
    for rec in dataset.recordings:
        if len(rec) >= T:
            out.extend(window(rec, T, stride))
    return out


def sample_random_windows(dataset: Dataset, n: int, T: int, rng: np.random.Generator) -> list[Window]:
    """``n`` windows at uniformly random (recording, offset) positions."""
    recs = [r for r in dataset.recordings if len(r) >= T]
    if not recs:
        raise DataError(f"no recording holds a window of length {T}")
    out = []
    for _ in range(n):
        rec = recs[int(rng.integers(len(recs)))]
        out.append(rec.window_at(int(rng.integers(len(rec) - T + 1)), T))
    return out


# ------------------------------------------------------------------ splits
def split_by_user(users, ratios=(0.5, 0.0, 0.5), seed: int = 0) -> SplitManifest:
    """Random participant-level assignment to train/val/test."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    users = sorted(set(users))
    order = np.random.default_rng(seed).permutation(len(users))
    n = len(users)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_train = min(n_train, n)
    n_val = min(n_val, n - n_train)
    assignment = {}
    for rank, idx in enumerate(order):
        split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
        assignment[users[idx]] = split
    return SplitManifest(assignment)


# ------------------------------------------------------------------- CSV I/O
@dataclass
class LoadReport:
    n_recordings: int = 0
    n_excluded_short: int = 0
    excluded: list[str] = field(default_factory=list)


def write_csv_dataset(dataset: Dataset, root, split: SplitManifest | None = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in dataset.recordings:
        fname = f"{rec.recording_id}.csv"
        has_label = rec.labels is not None
        lines = ["t,x,y,z,label" if has_label else "t,x,y,z"]
        for i, row in enumerate(rec.samples):
            t = i / rec.sample_rate_hz
            vals = [repr(float(t))] + [repr(float(v)) for v in row]
            if has_label:
                vals.append(str(int(rec.labels[i])))
            lines.append(",".join(vals))
        (root / fname).write_text("\n".join(lines) + "\n")
        entries.append({"file": fname, "user_id": rec.user_id, "recording_id": rec.recording_id,
                        "targets": {k: float(v) for k, v in sorted(rec.targets.items())}})
    manifest = {"sample_rate_hz": float(dataset.sample_rate_hz), "recordings": entries,
                "label_names": list(dataset.label_names)}
    if split is not None:
        manifest["split"] = split.to_dict()["assignment"]
    (root / "dataset.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _parse_recording_csv(path: Path, sample_rate: float, user_id: str, recording_id: str, targets: dict) -> Recording:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if header not in (["t", "x", "y", "z"], ["t", "x", "y", "z", "label"]):
            raise DataError(f"{path}: header must be t,x,y,z[,label], got {','.join(header)}")
        ncol = len(header)
        rows, labels = [], []
        last_t = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != ncol:
                raise DataError(f"{path}, line {lineno}: expected {ncol} columns, got {len(row)}")
            try:
                t, x, y, z = (float(v) for v in row[:4])
                lab = int(row[4]) if ncol == 5 else None
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in (t, x, y, z)):
                raise DataError(f"{path}, line {lineno}: non-finite value")
            if t <= last_t:
                raise DataError(f"{path}, line {lineno}: time is not strictly increasing")
            last_t = t
            rows.append((x, y, z))
            if lab is not None:
                labels.append(lab)
    samples = np.array(rows, dtype=np.float64).reshape(-1, 3)
    return Recording(user_id, recording_id, sample_rate, samples,
                     np.array(labels) if ncol == 5 else None, dict(targets))


def load_csv_dataset(root, min_length: int = 1) -> tuple[Dataset, SplitManifest | None, LoadReport]:
    """Load ``dataset.json`` plus per-recording CSVs.

    Recordings shorter than ``min_length`` samples are skipped and counted in
    the report.  The split is returned when the manifest carries one.
    """
    root = Path(root)
    mpath = root / "dataset.json"
    if not mpath.exists():
        raise DataError(f"{root}: missing dataset.json manifest")
    manifest = json.loads(mpath.read_text())
    try:
        rate = float(manifest["sample_rate_hz"])
        entries = manifest["recordings"]
    except KeyError as exc:
        raise DataError(f"{mpath}: missing field {exc}") from None
    if not entries:
        raise DataError(f"{mpath}: no recordings listed")
    report = LoadReport()
    recs = []
    for e in entries:
        rec = _parse_recording_csv(root / e["file"], rate, str(e["user_id"]), str(e["recording_id"]),
                                   e.get("targets", {}))
        if len(rec) < min_length:
            report.n_excluded_short += 1
            report.excluded.append(rec.recording_id)
            continue
        recs.append(rec)
    report.n_recordings = len(recs)
    if report.n_excluded_short:
        logger.warning("excluded %d recordings shorter than %d samples", report.n_excluded_short, min_length)
    split = SplitManifest(dict(manifest["split"])) if "split" in manifest else None
    return Dataset(recs, rate, list(manifest.get("label_names", []))), split, report


# ----------------------------------------------------------------- synthetic
@dataclass
class SyntheticSpec:
    n_users: int = 20
    n_classes: int = 5
    motifs_per_class: int = 3
    n_harmonics: int = 3
    windows_per_recording: int = 16
    window_length: int = 64
    sample_rate_hz: float = 25.0
    base_freq_hz: float = 0.9
    freq_step_hz: float = 0.55
    class_separation: float = 1.0
    intensity_range: tuple = (0.4, 2.5)
    user_gain_range: tuple = (0.8, 1.25)
    user_speed_range: tuple = (0.85, 1.15)
    user_phase_jitter: float = 0.6
    user_rotation: bool = True
    user_rotation_max_deg: float = 30.0
    segment_seconds: tuple = (2.0, 5.0)
    noise_sigma: float = 0.05
    split_ratios: tuple = (0.5, 0.0, 0.5)
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 1 or self.n_classes < 2 or self.motifs_per_class < 1 or self.n_harmonics < 1:
            raise DataError("synthetic spec needs >=1 user, >=2 classes, >=1 motif and >=1 harmonic")
        if self.class_separation <= 0 or self.freq_step_hz <= 0:
            raise DataError("class separation must be positive")
        if self.windows_per_recording < 1 or self.window_length < 2 or self.sample_rate_hz <= 0:
            raise DataError("degenerate recording geometry")
        lo, hi = self.user_gain_range
        if not 0 < lo <= hi:
            raise DataError("user gain range must be positive")
        lo, hi = self.user_speed_range
        if not 0 < lo <= hi:
            raise DataError("user speed range must be positive")
        if self.noise_sigma < 0:
            raise DataError("noise sigma must be non-negative")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("user_gain_range", "user_speed_range", "segment_seconds", "split_ratios", "intensity_range"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for k in ("user_gain_range", "user_speed_range", "segment_seconds", "split_ratios", "intensity_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ClassBank:
    freq_hz: np.ndarray  # (C,)
    amplitude: np.ndarray  # (C, M, 3, H)
    phase: np.ndarray  # (C, M, 3, H)
    intensity: np.ndarray  # (C,)


def class_bank(spec: SyntheticSpec) -> ClassBank:
    rng = np.random.default_rng([spec.seed, 1])
    C, M, H = spec.n_classes, spec.motifs_per_class, spec.n_harmonics
    freq = spec.base_freq_hz + spec.freq_step_hz * spec.class_separation * np.arange(C)
    # each class shares a harmonic profile across its motifs; motifs perturb it
    profile = rng.uniform(0.2, 1.0, size=(C, 1, 3, H)) / np.arange(1, H + 1)
    amp = profile * rng.uniform(0.7, 1.3, size=(C, M, 3, H))
    phase = rng.uniform(0, 2 * np.pi, size=(C, 1, 3, H)) + rng.normal(0, 0.3, size=(C, M, 3, H))
    lo, hi = spec.intensity_range
    intensity = np.geomspace(lo, hi, C)[rng.permutation(C)]
    return ClassBank(freq, amp, phase, intensity)


def _rotation_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * K + (1 - math.cos(angle)) * K @ K


def class_template(spec: SyntheticSpec, bank: ClassBank, cls: int, motif: int, n: int,
                   speed: float = 1.0, t0: float = 0.0) -> np.ndarray:
    """Noise-free, unrotated motif signal of ``n`` samples."""
    t = t0 + np.arange(n) / spec.sample_rate_hz
    f = bank.freq_hz[cls] * speed
    h = np.arange(1, spec.n_harmonics + 1)
    arg = 2 * np.pi * f * t[:, None, None] * h[None, None, :] + bank.phase[cls, motif][None]
    return bank.intensity[cls] * (bank.amplitude[cls, motif][None] * np.sin(arg)).sum(axis=-1)


def stride_velocity(freq_hz: float, gain: float) -> float:
    # cadence times stride length, with stride length growing with the user's gain
    return 0.55 * freq_hz * gain


def double_support_time(freq_hz: float, gain: float) -> float:
    return 0.12 + 0.18 / (freq_hz * gain)


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SplitManifest, dict]:
    """Seeded multi-user motif dataset.

    Each user records one session per class.  A session strings together
    segments whose motif is drawn from the class bank; the user's speed
    factor scales the class frequency, their gain scales amplitude and a
    fixed per-user device orientation rotates every sample.  Targets are
    noiseless functions of the effective frequency (and gain).  Returns the
    dataset, a user split and a per-recording parameter table.
    """
    spec.validate()
    bank = class_bank(spec)
    rng = np.random.default_rng([spec.seed, 2])
    n = spec.windows_per_recording * spec.window_length
    recs, params = [], {}
    width = max(2, len(str(spec.n_users - 1)))
    for u in range(spec.n_users):
        uid = f"u{u:0{width}d}"
        gain = rng.uniform(*spec.user_gain_range)
        speed = rng.uniform(*spec.user_speed_range)
        if spec.user_rotation:
            axis = rng.normal(size=3)
            R = _rotation_matrix(axis, math.radians(spec.user_rotation_max_deg) * rng.uniform(-1, 1))
        else:
            R = np.eye(3)
        for c in range(spec.n_classes):
            rid = f"{uid}_c{c}"
            t0 = rng.uniform(0, 10) + rng.normal(0, spec.user_phase_jitter)
            sig = np.empty((n, 3))
            pos = 0
            while pos < n:
                seg = int(rng.uniform(*spec.segment_seconds) * spec.sample_rate_hz)
                seg = max(1, min(seg, n - pos))
                motif = int(rng.integers(spec.motifs_per_class))
                sig[pos:pos + seg] = class_template(spec, bank, c, motif, seg, speed,
                                                    t0 + pos / spec.sample_rate_hz)
                pos += seg
            sig = gain * sig @ R.T + rng.normal(0, spec.noise_sigma, size=(n, 3))
            f_eff = float(bank.freq_hz[c] * speed)
            targets = {"stride_velocity": stride_velocity(f_eff, gain),
                       "double_support_time": double_support_time(f_eff, gain)}
            recs.append(Recording(uid, rid, spec.sample_rate_hz, sig, np.full(n, c), targets))
            params[rid] = {"user_id": uid, "class": c, "freq_hz": f_eff, "gain": float(gain),
                           "speed": float(speed)}
    names = [f"class_{c}" for c in range(spec.n_classes)]
    dataset = Dataset(recs, spec.sample_rate_hz, names)
    return dataset, split_by_user(dataset.users(), spec.split_ratios, spec.seed), params
