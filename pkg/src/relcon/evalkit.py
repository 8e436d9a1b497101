"""Downstream evaluation: probes on frozen embeddings, fine-tuning, voting and metrics."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .encoder import EncoderParams, encode_tensor, stack_windows
from .ndtensor import Tensor

logger = logging.getLogger(__name__)

PROBE_KINDS = ("linear_reg", "linear_clf", "mlp_clf", "finetune")


@dataclass
class ProbeConfig:
    steps: int = 500
    lr: float = 1e-2
    hidden: int = 64
    weight_decay: float = 1e-4
    batch_size: int = 32  # fine-tuning minibatch
    seed: int = 0


@dataclass
class ProbeModel:
    kind: str
    weights: dict = field(default_factory=dict)
    classes: int = 0
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    hyper: dict = field(default_factory=dict)

    def _features(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.feature_mean is not None:
            X = (X - self.feature_mean) / self.feature_std
        return X

    def predict(self, X) -> np.ndarray:
        if self.kind == "linear_reg":
            return np.asarray(X, dtype=np.float64) @ self.weights["w"] + self.weights["b"]
        return np.argmax(self.predict_proba(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        if self.kind == "linear_reg":
            raise ValueError("regression probes have no class probabilities")
        with nd.no_grad():
            logits = _classifier_logits(Tensor(self._features(X)), {k: Tensor(v) for k, v in self.weights.items()})
        z = logits.data
        e = np.exp(z - z.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- regression
def fit_linear_regression(X, y, ridge: float = 1e-3) -> ProbeModel:
    """Closed-form ridge regression with an unpenalized bias."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise nd.ShapeError(f"expected X (B, d) and y (B,), got {X.shape}, {y.shape}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    xm, ym = X.mean(axis=0), y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    if ridge == 0 and np.linalg.matrix_rank(A) < X.shape[1]:
        raise np.linalg.LinAlgError("normal equations are singular; use ridge > 0")
    w = np.linalg.solve(A, Xc.T @ (y - ym))
    return ProbeModel("linear_reg", {"w": w, "b": float(ym - xm @ w)}, hyper={"ridge": ridge})


# ------------------------------------------------------------ classification
def _classifier_logits(x: Tensor, w: dict) -> Tensor:
    if "w1" in w:
        x = nd.relu(nd.matmul(x, w["w1"]) + w["b1"])
    return nd.matmul(x, w["w"]) + w["b"]


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    m = logits.data.max(axis=1, keepdims=True)
    lse = nd.log(nd.tsum(nd.exp(logits - m), axis=1)) + m[:, 0]
    return nd.mean(lse - nd.tsum(logits * onehot, axis=1))


def fit_classifier(X, labels, kind: str = "linear_clf", config: ProbeConfig | None = None,
                   n_classes: int | None = None) -> ProbeModel:
    """Softmax cross-entropy probe on standardized frozen embeddings (full-batch Adam)."""
    config = config or ProbeConfig()
    if kind not in ("linear_clf", "mlp_clf"):
        raise ValueError(f"unknown classifier kind {kind!r}")
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("classifier probes need at least two classes in the training labels")
    K = int(n_classes if n_classes is not None else labels.max() + 1)
    mu, sd = X.mean(axis=0), X.std(axis=0) + 1e-8
    Xs = Tensor((X - mu) / sd)
    rng = np.random.default_rng([config.seed, 51])
    d = X.shape[1]
    w: dict[str, Tensor] = {}
    if kind == "mlp_clf":
        w["w1"] = Tensor(rng.normal(0, math.sqrt(2.0 / d), size=(d, config.hidden)), True)
        w["b1"] = Tensor(np.zeros(config.hidden), True)
        d = config.hidden
    w["w"] = Tensor(rng.normal(0, 1.0 / math.sqrt(d), size=(d, K)) * 0.1, True)
    w["b"] = Tensor(np.zeros(K), True)
    opt = nd.Adam(w.values(), lr=config.lr)
    for _ in range(config.steps):
        loss = cross_entropy(_classifier_logits(Xs, w), labels)
        if config.weight_decay:
            loss = loss + config.weight_decay * nd.tsum(nd.square(w["w"]))
        opt.zero_grad()
        loss.backward()
        opt.step()
    return ProbeModel(kind, {k: v.data.copy() for k, v in w.items()}, K, mu, sd,
                      hyper={"steps": config.steps, "lr": config.lr, "seed": config.seed})


def finetune(encoder_params: EncoderParams, windows, labels, config: ProbeConfig | None = None,
             n_classes: int | None = None) -> tuple[EncoderParams, ProbeModel, list[float]]:
    """Jointly train a copy of the encoder and a linear head with minibatch Adam."""
    config = config or ProbeConfig(steps=300, lr=1e-3)
    X = stack_windows(windows)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("fine-tuning needs at least two classes")
    K = int(n_classes if n_classes is not None else labels.max() + 1)
    enc = encoder_params.copy(trainable=True)
    rng = np.random.default_rng([config.seed, 52])
    E = enc.embed_dim
    head = {"w": Tensor(rng.normal(0, 0.1 / math.sqrt(E), size=(E, K)), True), "b": Tensor(np.zeros(K), True)}
    opt = nd.Adam(enc.parameters() + list(head.values()), lr=config.lr)
    losses = []
    for _ in range(config.steps):
        idx = rng.choice(len(X), size=min(config.batch_size, len(X)), replace=False)
        loss = cross_entropy(_classifier_logits(encode_tensor(X[idx], enc), head), labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    probe = ProbeModel("finetune", {k: v.data.copy() for k, v in head.items()}, K,
                       hyper={"steps": config.steps, "lr": config.lr, "seed": config.seed})
    return enc, probe, losses


# -------------------------------------------------------------------- voting
def majority_vote(window_predictions) -> int:
    preds = np.asarray(window_predictions, dtype=np.int64)
    if preds.size == 0:
        raise ValueError("majority_vote needs at least one prediction")
    values, counts = np.unique(preds, return_counts=True)
    return int(values[np.argmax(counts)])  # unique() sorts, so ties go to the smallest id


def workout_level(recording_ids, preds, scores, labels):
    """Aggregate window predictions per recording: vote for the class, average the scores."""
    recording_ids = np.asarray(recording_ids)
    preds, scores, labels = np.asarray(preds), np.asarray(scores), np.asarray(labels)
    out_pred, out_score, out_label, out_ids = [], [], [], []
    for rid in sorted(set(recording_ids.tolist())):
        m = recording_ids == rid
        out_ids.append(rid)
        out_pred.append(majority_vote(preds[m]))
        out_score.append(scores[m].mean(axis=0))
        out_label.append(majority_vote(labels[m]))
    return out_ids, np.array(out_pred), np.array(out_score), np.array(out_label)


# ------------------------------------------------------------------- metrics
@dataclass
class MetricsReport:
    scalars: dict = field(default_factory=dict)
    per_class: list = field(default_factory=list)
    per_user: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"scalars": dict(sorted(self.scalars.items())), "per_class": self.per_class,
                "per_user": self.per_user}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def csv_header(self, prefix: str = "") -> list[str]:
        return [prefix + k for k in sorted(self.scalars)]

    def csv_row(self) -> list[str]:
        return [repr(float(self.scalars[k])) for k in sorted(self.scalars)]


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0:
        return 0.0
    return float(np.clip(xc @ yc / denom, -1.0, 1.0))


def regression_metrics(preds, targets, user_ids) -> MetricsReport:
    """Per-user mean errors, then mean and sample std across users.

    Correlation compares each user's mean prediction with their mean target.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    user_ids = np.asarray(user_ids)
    if not (preds.shape == targets.shape == user_ids.shape):
        raise nd.ShapeError("preds, targets and user_ids must have equal length")
    users = sorted(set(user_ids.tolist()))
    if len(users) < 2:
        raise ValueError("regression metrics need at least two users")
    rows = []
    for u in users:
        m = user_ids == u
        err = preds[m] - targets[m]
        rows.append({"user_id": u, "n": int(m.sum()), "se": float(np.mean(err ** 2)),
                     "ae": float(np.mean(np.abs(err))), "pred_mean": float(preds[m].mean()),
                     "target_mean": float(targets[m].mean())})
    se = np.array([r["se"] for r in rows])
    ae = np.array([r["ae"] for r in rows])
    scalars = {"mse": float(se.mean()), "sdse": float(se.std(ddof=1)), "mae": float(ae.mean()),
               "sdae": float(ae.std(ddof=1)),
               "pearson_corr": pearson([r["pred_mean"] for r in rows], [r["target_mean"] for r in rows])}
    return MetricsReport(scalars, [], rows)


def roc_auc(y_true, score) -> float:
    """Area under the ROC curve by the trapezoid rule; tied scores share one threshold."""
    y = np.asarray(y_true, dtype=bool)
    s = np.asarray(score, dtype=np.float64)
    P, N = int(y.sum()), int((~y).sum())
    if P == 0 or N == 0:
        raise ValueError("ROC AUC needs both positive and negative examples")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / P]
    fpr = np.r_[0.0, fps / N]
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def confusion_matrix(labels, preds, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


def cohen_kappa(cm: np.ndarray) -> float:
    # count form (n*agree - chance) / (n^2 - chance): exact numerators for integer matrices
    cm = np.asarray(cm, dtype=np.float64)
    n = cm.sum()
    agree = np.trace(cm)
    chance = float(cm.sum(axis=1) @ cm.sum(axis=0))
    if chance == n * n:
        return 1.0 if agree == n else 0.0
    return float((n * agree - chance) / (n * n - chance))


def classification_metrics(preds, scores, labels, n_classes: int | None = None) -> MetricsReport:
    """Macro F1, Cohen's kappa, accuracy and one-vs-rest macro AUC.

    Classes missing from ``labels`` are left out of the macro averages.
    """
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if preds.shape != labels.shape or scores.shape[0] != labels.shape[0]:
        raise nd.ShapeError("preds, scores and labels must align")
    K = int(n_classes if n_classes is not None else max(scores.shape[1], labels.max() + 1, preds.max() + 1))
    cm = confusion_matrix(labels, preds, K)
    present = [c for c in range(K) if cm[c].sum() > 0]
    missing = [c for c in range(K) if c not in present]
    if missing:
        logger.warning("classes %s absent from labels; excluded from macro averages", missing)
    per_class = []
    f1s, aucs = [], []
    for c in present:
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c].sum() - tp
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        row = {"class": c, "support": int(cm[c].sum()), "f1": float(f1)}
        if c < scores.shape[1] and len(present) > 1:
            row["auc"] = roc_auc(labels == c, scores[:, c])
            aucs.append(row["auc"])
        f1s.append(f1)
        per_class.append(row)
    scalars = {"accuracy": float(np.trace(cm) / cm.sum()), "f1_macro": float(np.mean(f1s)),
               "kappa": cohen_kappa(cm)}
    if aucs:
        scalars["auc_macro"] = float(np.mean(aucs))
    return MetricsReport(scalars, per_class, [])


def summarize_repeats(reports: list[MetricsReport]) -> dict:
    """Mean and sample std of each scalar over probe repetitions."""
    keys = sorted(reports[0].scalars)
    out = {}
    for k in keys:
        vals = np.array([r.scalars[k] for r in reports])
        out[k] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0}
    return out
