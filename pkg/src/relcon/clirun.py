"""Run configuration, stage orchestration, the ablation report and the command line."""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import augment, dataio, distnet, encoder, evalkit, losses, pretrain, sampler
from . import ndtensor as nd

logger = logging.getLogger("relcon")

ABLATIONS = ("no_augmentations", "no_revin", "no_sparsemax", "no_within_subject")

# (row label, ablation flags, loss variant) for the seven-row ablation report
ABLATION_ROWS = (
    ("RelCon", (), "relcon"),
    ("w/o Augmentations", ("no_augmentations",), "relcon"),
    ("w/o RevIN", ("no_revin",), "relcon"),
    ("w/o SparseMax", ("no_sparsemax",), "relcon"),
    ("w/o Sampling Within-Subject", ("no_within_subject",), "relcon"),
    ("w/ Softer Metric Loss", (), "log_ratio"),
    ("w/ Harder Binary Contrastive Loss", (), "binary"),
)

REPORT_COLUMNS = (
    ("stride_velocity_corr", ("regression", "stride_velocity", "pearson_corr")),
    ("double_support_time_corr", ("regression", "double_support_time", "pearson_corr")),
    ("subseq_f1", ("classification", "window", "f1_macro")),
    ("workout_f1", ("classification", "workout", "f1_macro")),
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(nd.ConfigError):
    pass


# ------------------------------------------------------------------ config
@dataclass
class EvalConfig:
    ridge: float = 1e-3
    probe_kind: str = "linear_clf"
    probe_repeats: int = 5
    probe_steps: int = 500
    probe_lr: float = 1e-2
    mlp_hidden: int = 64
    finetune_steps: int = 300
    finetune_lr: float = 1e-3
    finetune_batch: int = 32


def _desk_sampler() -> dict:
    return asdict(sampler.SamplerConfig(candidate_count=8, within_user_count=4))


@dataclass
class RunConfig:
    """Everything one pipeline run depends on; stage sections are plain dicts."""

    name: str = "relcon"
    preset: str = "desk"
    seed: int = 0
    data_path: str | None = None
    synthetic: dict = field(default_factory=lambda: dataio.SyntheticSpec().to_dict())
    augmentations: list = field(default_factory=lambda: augment.default_pipeline().to_dict()["specs"])
    distnet: dict = field(default_factory=lambda: distnet.DistanceNetHyper().to_dict())
    distnet_train: dict = field(default_factory=lambda: asdict(distnet.DistanceTrainConfig()))
    sampler: dict = field(default_factory=_desk_sampler)
    encoder: dict = field(default_factory=lambda: encoder.EncoderHyper.desk().to_dict())
    encoder_train: dict = field(default_factory=lambda: asdict(pretrain.EncoderTrainConfig()))
    loss: dict = field(default_factory=lambda: asdict(losses.LossConfig()))
    eval: dict = field(default_factory=lambda: asdict(EvalConfig()))
    ablations: list = field(default_factory=list)

    @classmethod
    def full(cls) -> "RunConfig":
        cfg = cls(preset="full")
        cfg.distnet = distnet.DistanceNetHyper.full().to_dict()
        cfg.encoder = encoder.EncoderHyper.full().to_dict()
        cfg.sampler = asdict(sampler.SamplerConfig(candidate_count=20, within_user_count=10))
        cfg.encoder_train.update(batch_size=64, steps=100_000)
        cfg.distnet_train.update(batch_size=64)
        cfg.eval["probe_repeats"] = 5
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        preset = d.get("preset", "desk")
        if preset not in ("desk", "full"):
            raise ConfigError(f"unknown preset {preset!r}")
        base = cls.full() if preset == "full" else cls()
        unknown = set(d) - set(base.__dict__)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key, value in d.items():
            current = getattr(base, key)
            if isinstance(current, dict):
                if not isinstance(value, dict):
                    raise ConfigError(f"config section {key!r} must be an object")
                merged = dict(current)
                merged.update(value)
                setattr(base, key, merged)
            else:
                setattr(base, key, value)
        return base

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            return cls.from_dict(json.loads(p.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        return copy.deepcopy(self.__dict__)

    def effective(self) -> "RunConfig":
        """Propagate the run seed into every stage and apply the ablation flags."""
        cfg = RunConfig(**self.to_dict())
        bad = [a for a in cfg.ablations if a not in ABLATIONS]
        if bad:
            raise ConfigError(f"unknown ablation(s) {bad}; choose from {ABLATIONS}")
        cfg.ablations = sorted(set(cfg.ablations))
        s = int(cfg.seed)
        if s < 0:
            raise ConfigError("seed must be a non-negative integer")
        cfg.synthetic["seed"] = s
        cfg.distnet_train["seed"] = s
        cfg.encoder_train["seed"] = s
        cfg.sampler["rng_seed"] = s
        if "no_augmentations" in cfg.ablations:
            cfg.augmentations = []
        if "no_revin" in cfg.ablations:
            cfg.distnet["use_revin"] = False
        if "no_sparsemax" in cfg.ablations:
            cfg.distnet["attention_normalizer"] = "softmax"
        if "no_within_subject" in cfg.ablations:
            cfg.sampler["within_user_count"] = 0
            cfg.sampler["include_augmented_self"] = True
        return cfg

    def validate(self) -> None:
        """Build every typed stage object once so bad values fail before any training."""
        if self.data_path is not None and not Path(self.data_path).is_dir():
            raise ConfigError(f"data_path {self.data_path} does not exist")
        try:
            self.stages()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def stages(self) -> dict:
        window_length = self.encoder_train["window_length"]
        if self.distnet_train["window_length"] != window_length:
            raise ConfigError("distnet and encoder window lengths differ")
        ev = EvalConfig(**self.eval)
        if ev.probe_kind not in ("linear_clf", "mlp_clf"):
            raise ConfigError(f"probe_kind must be linear_clf or mlp_clf, got {ev.probe_kind!r}")
        if ev.probe_repeats < 1:
            raise ConfigError("probe_repeats must be at least 1")
        return {
            "synthetic": dataio.SyntheticSpec.from_dict(self.synthetic),
            "pipeline": augment.AugmentationPipeline.from_dict({"specs": self.augmentations, "rng_seed": self.seed}),
            "distnet": distnet.DistanceNetHyper(**self.distnet),
            "distnet_train": distnet.DistanceTrainConfig(**self.distnet_train),
            "sampler": sampler.SamplerConfig(**self.sampler),
            "encoder": encoder.EncoderHyper(**self.encoder),
            "encoder_train": pretrain.EncoderTrainConfig(**self.encoder_train),
            "loss": losses.LossConfig(**self.loss),
            "eval": ev,
        }


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_effective_config(cfg: RunConfig, out: Path) -> None:
    _dump_json(out / "effective_config.json", cfg.to_dict())


# -------------------------------------------------------------- run record
@dataclass(frozen=True)
class RunRecord:
    name: str
    config: dict
    source_revision: str
    checkpoints: dict
    metrics: dict
    timings: dict

    def save(self, path) -> None:
        _dump_json(Path(path), asdict(self))

    @classmethod
    def load(cls, path) -> "RunRecord":
        p = Path(path)
        if p.is_dir():
            p = p / "run_record.json"
        if not p.is_file():
            raise ConfigError(f"no run record at {p}")
        return cls(**json.loads(p.read_text()))


def source_revision() -> str:
    """Hash of this package's source files, so records pin the code that produced them."""
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return "src-sha256:" + h.hexdigest()[:16]


# ------------------------------------------------------------------- stages
def load_data(cfg: RunConfig) -> tuple[dataio.Dataset, dataio.SplitManifest]:
    if cfg.data_path is None:
        ds, split, _ = dataio.generate_synthetic(dataio.SyntheticSpec.from_dict(cfg.synthetic))
        return ds, split
    ds, split, _ = dataio.load_csv_dataset(cfg.data_path)
    if split is None:
        split = dataio.split_by_user(ds.users(), tuple(cfg.synthetic.get("split_ratios", (0.5, 0.0, 0.5))), cfg.seed)
    return ds, split


def cmd_gen_synth(cfg: RunConfig, out: Path) -> Path:
    spec = dataio.SyntheticSpec.from_dict(cfg.synthetic)
    ds, split, _ = dataio.generate_synthetic(spec)
    dataio.write_csv_dataset(ds, out, split)
    write_effective_config(cfg, out)
    return out


def cmd_train_distance(cfg: RunConfig, out: Path) -> Path:
    st = cfg.stages()
    ds, split = load_data(cfg)
    params, log = distnet.train_distance(ds.subset(split.users("train")), st["pipeline"], st["distnet_train"],
                                         st["distnet"])
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "distnet.ckpt")
    (out / "loss.csv").write_text(log.to_csv())
    write_effective_config(cfg, out)
    return out / "distnet.ckpt"


def cmd_train_encoder(cfg: RunConfig, distnet_ckpt, out: Path) -> Path:
    if distnet_ckpt is None or not Path(distnet_ckpt).is_file():
        raise ConfigError(f"encoder training needs a distance-network checkpoint, got {distnet_ckpt}")
    st = cfg.stages()
    dparams = distnet.DistanceNetParams.load(distnet_ckpt)
    ds, split = load_data(cfg)
    params, log = pretrain.train_encoder(ds.subset(split.users("train")), dparams, st["sampler"], st["loss"],
                                         st["encoder_train"], st["encoder"], st["pipeline"])
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "encoder.ckpt")
    (out / "loss.csv").write_text(log.to_csv())
    write_effective_config(cfg, out)
    return out / "encoder.ckpt"


def window_id(w: dataio.Window) -> str:
    return f"{w.recording_id}:{w.offset}"


def eval_windows(ds: dataio.Dataset, T: int) -> list[dataio.Window]:
    """Non-overlapping windows, as consumed by both window- and workout-level evaluation."""
    return dataio.window_dataset(ds, T, T)


def cmd_embed(encoder_ckpt, ds: dataio.Dataset, out_csv: Path, T: int) -> Path:
    params = encoder.EncoderParams.load(encoder_ckpt)
    wins = eval_windows(ds, T)
    emb = encoder.encode_batch(wins, params)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id"] + [f"e{i}" for i in range(params.embed_dim)])
        for w, row in zip(wins, emb):
            wr.writerow([window_id(w)] + [repr(float(v)) for v in row])
    return out_csv


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "id":
        raise dataio.DataError(f"{path}: not an embeddings file")
    return [r[0] for r in rows[1:]], np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def _summ(reports: list[evalkit.MetricsReport]) -> dict:
    return evalkit.summarize_repeats(reports)


def evaluate(train_w, Xtr, test_w, Xte, ev: EvalConfig, seed: int) -> dict:
    """Frozen-embedding probes: classifier repeats plus ridge regression per target."""
    ytr = np.array([w.label for w in train_w])
    yte = np.array([w.label for w in test_w])
    K = int(max(ytr.max(), yte.max()) + 1)
    win_reports, wk_reports = [], []
    for r in range(ev.probe_repeats):
        pc = evalkit.ProbeConfig(steps=ev.probe_steps, lr=ev.probe_lr, hidden=ev.mlp_hidden, seed=seed * 1000 + r)
        model = evalkit.fit_classifier(Xtr, ytr, ev.probe_kind, pc, n_classes=K)
        proba = model.predict_proba(Xte)
        pred = np.argmax(proba, axis=1)
        win_reports.append(evalkit.classification_metrics(pred, proba, yte, K))
        _, wp, ws, wl = evalkit.workout_level([w.recording_id for w in test_w], pred, proba, yte)
        wk_reports.append(evalkit.classification_metrics(wp, ws, wl, K))
    out = {"classification": {"window": _summ(win_reports), "workout": _summ(wk_reports)},
           "regression": {}, "n_train_windows": len(train_w), "n_test_windows": len(test_w)}
    users = [w.user_id for w in test_w]
    for target in dataio.TARGET_NAMES:
        if not all(target in w.targets for w in train_w + test_w):
            continue
        model = evalkit.fit_linear_regression(Xtr, [w.targets[target] for w in train_w], ev.ridge)
        rep = evalkit.regression_metrics(model.predict(Xte), [w.targets[target] for w in test_w], users)
        # the closed-form ridge has no seed, so every repetition would be identical
        out["regression"][target] = _summ([rep])
    return out


def cmd_probe(cfg: RunConfig, encoder_ckpt, out: Path, embeddings=None) -> dict:
    st = cfg.stages()
    params = encoder.EncoderParams.load(encoder_ckpt)
    ds, split = load_data(cfg)
    T = st["encoder_train"].window_length
    train_w = eval_windows(ds.subset(split.users("train")), T)
    test_w = eval_windows(ds.subset(split.users("test")), T)
    if embeddings is not None:
        ids, E = read_embeddings(embeddings)
        if E.shape[1] != params.embed_dim:
            raise ConfigError(f"embeddings have {E.shape[1]} dims, the encoder checkpoint {params.embed_dim}")
        lookup = dict(zip(ids, E))
        try:
            Xtr = np.stack([lookup[window_id(w)] for w in train_w])
            Xte = np.stack([lookup[window_id(w)] for w in test_w])
        except KeyError as exc:
            raise dataio.DataError(f"embeddings file lacks window {exc}") from exc
    else:
        Xtr, Xte = encoder.encode_batch(train_w, params), encoder.encode_batch(test_w, params)
    metrics = evaluate(train_w, Xtr, test_w, Xte, st["eval"], cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(out / "metrics.json", metrics)
    write_effective_config(cfg, out)
    return metrics


def cmd_finetune(cfg: RunConfig, encoder_ckpt, out: Path) -> dict:
    st = cfg.stages()
    ev = st["eval"]
    params = encoder.EncoderParams.load(encoder_ckpt)
    ds, split = load_data(cfg)
    T = st["encoder_train"].window_length
    train_w = eval_windows(ds.subset(split.users("train")), T)
    test_w = eval_windows(ds.subset(split.users("test")), T)
    ytr = np.array([w.label for w in train_w])
    yte = np.array([w.label for w in test_w])
    K = int(max(ytr.max(), yte.max()) + 1)
    pc = evalkit.ProbeConfig(steps=ev.finetune_steps, lr=ev.finetune_lr, batch_size=ev.finetune_batch, seed=cfg.seed)
    tuned, head, log = evalkit.finetune(params, train_w, ytr, pc, n_classes=K)
    proba = head.predict_proba(encoder.encode_batch(test_w, tuned))
    pred = np.argmax(proba, axis=1)
    _, wp, ws, wl = evalkit.workout_level([w.recording_id for w in test_w], pred, proba, yte)
    metrics = {"classification": {"window": evalkit.classification_metrics(pred, proba, yte, K).to_dict()["scalars"],
                                  "workout": evalkit.classification_metrics(wp, ws, wl, K).to_dict()["scalars"]}}
    out.mkdir(parents=True, exist_ok=True)
    tuned.save(out / "encoder_finetuned.ckpt")
    (out / "loss.csv").write_text(distnet.TrainLog(list(range(len(log))), log).to_csv())
    _dump_json(out / "metrics.json", metrics)
    write_effective_config(cfg, out)
    return metrics


def run_pipeline(cfg: RunConfig, out: Path) -> RunRecord:
    """Distance net, encoder pre-training, then frozen probes; writes one run record."""
    cfg = cfg.effective()
    cfg.validate()
    out.mkdir(parents=True, exist_ok=True)
    write_effective_config(cfg, out)
    timings = {}
    t = time.perf_counter()
    d_ckpt = _stage("train-distance", cmd_train_distance, cfg, out / "distnet")
    timings["train_distance_s"] = time.perf_counter() - t
    t = time.perf_counter()
    e_ckpt = _stage("train-encoder", cmd_train_encoder, cfg, d_ckpt, out / "encoder")
    timings["train_encoder_s"] = time.perf_counter() - t
    t = time.perf_counter()
    metrics = _stage("probe", cmd_probe, cfg, e_ckpt, out / "probe")
    timings["probe_s"] = time.perf_counter() - t
    # metrics.json stays free of timings so reruns compare byte-for-byte
    _dump_json(out / "metrics.json", metrics)
    record = RunRecord(cfg.name, cfg.to_dict(), source_revision(),
                       {"distnet": str(d_ckpt), "encoder": str(e_ckpt)}, metrics, timings)
    record.save(out / "run_record.json")
    return record


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except (nd.NonFiniteError, distnet.TrainingDiverged, dataio.DataError, ConfigError) as exc:
        exc.args = (f"[{name}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise


def _metric(metrics: dict, path: tuple) -> tuple[float, float]:
    node = metrics
    for key in path:
        if key not in node:
            return float("nan"), float("nan")
        node = node[key]
    return float(node["mean"]), float(node["std"])


def build_report(records: list[RunRecord], baseline: str | None = None) -> list[dict]:
    """One row per run with mean, std and percentage change against the baseline run."""
    if not records:
        raise ConfigError("report needs at least one run record")
    names = [r.name for r in records]
    base_name = baseline if baseline is not None else names[0]
    if base_name not in names:
        raise ConfigError(f"baseline run {base_name!r} not among {names}")
    base = records[names.index(base_name)]
    rows = []
    for rec in records:
        row = {"run": rec.name}
        for col, path in REPORT_COLUMNS:
            mean, std = _metric(rec.metrics, path)
            b, _ = _metric(base.metrics, path)
            row[col] = mean
            row[col + "_std"] = std
            row[col + "_delta_pct"] = 100.0 * (mean - b) / abs(b) if b not in (0.0,) and np.isfinite(b) else float("nan")
        rows.append(row)
    return rows


def write_report(rows: list[dict], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = list(rows[0])
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in rows:
            wr.writerow([r[c] if c == "run" else f"{r[c]:.6g}" for c in cols])
    return path


def format_report(rows: list[dict]) -> str:
    lines = [f"{'run':36s}" + "".join(f"{c:>28s}" for c, _ in REPORT_COLUMNS)]
    for r in rows:
        cells = "".join(f"{r[c]:>12.4f} ({r[c + '_delta_pct']:+7.2f}%)   " for c, _ in REPORT_COLUMNS)
        lines.append(f"{r['run']:36s}{cells}")
    return "\n".join(lines)


def slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label.lower()).strip("_")


def run_ablations(cfg: RunConfig, out: Path, rows=ABLATION_ROWS) -> list[dict]:
    records = []
    for label, flags, variant in rows:
        c = RunConfig(**cfg.to_dict())
        c.name = label
        c.ablations = sorted(set(c.ablations) | set(flags))
        c.loss = dict(c.loss, variant=variant)
        records.append(run_pipeline(c, out / slug(label)))
    table = build_report(records, rows[0][0])
    write_report(table, out / "report.csv")
    return table


# ---------------------------------------------------------------------- CLI
def _base_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "preset", None) == "full" and not args.config:
        cfg = RunConfig.full()
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "data", None):
        cfg.data_path = args.data
    for flag in getattr(args, "ablate", None) or []:
        if flag not in cfg.ablations:
            cfg.ablations.append(flag)
    if getattr(args, "loss", None):
        cfg.loss["variant"] = args.loss
    if getattr(args, "steps", None) is not None:
        key = "distnet_train" if args.command == "train-distance" else "encoder_train"
        getattr(cfg, key)["steps"] = args.steps
    cfg = cfg.effective()
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relcon", description="Relative contrastive learning for motion time series.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ablate=False):
        p.add_argument("--config", help="JSON run config; flags override its fields")
        p.add_argument("--seed", type=int, help="run seed shared by all stages")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--data", help="CSV dataset directory (default: synthetic from the config)")
        p.add_argument("--preset", choices=("desk", "full"), default="desk")
        if ablate:
            p.add_argument("--ablate", action="append", choices=ABLATIONS, help="repeatable ablation flag")
            p.add_argument("--loss", choices=losses.VARIANTS)
        return p

    common(sub.add_parser("gen-synth", help="write the synthetic dataset as CSV"))
    p = common(sub.add_parser("train-distance", help="train and freeze the distance network"), ablate=True)
    p.add_argument("--steps", type=int)
    p = common(sub.add_parser("train-encoder", help="pre-train the encoder against a frozen distance"), ablate=True)
    p.add_argument("--distnet", required=True, help="distance-network checkpoint")
    p.add_argument("--steps", type=int)
    p = common(sub.add_parser("embed", help="write one embedding row per non-overlapping window"))
    p.add_argument("--encoder", required=True)
    p = common(sub.add_parser("probe", help="frozen-embedding probes and metrics.json"))
    p.add_argument("--encoder", required=True)
    p.add_argument("--embeddings", help="precomputed embeddings CSV from `embed`")
    p = common(sub.add_parser("finetune", help="fine-tune encoder plus linear head"))
    p.add_argument("--encoder", required=True)
    common(sub.add_parser("run", help="full pipeline: distance, encoder, probes"), ablate=True)
    common(sub.add_parser("ablate", help="run the seven ablation rows and write report.csv"))
    p = sub.add_parser("report", help="join run records into report.csv")
    p.add_argument("--runs", nargs="+", required=True, help="run directories or run_record.json files")
    p.add_argument("--baseline", help="name of the baseline run (default: first)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    return parser


def dispatch(args) -> None:
    out = Path(args.out)
    if args.command == "report":
        rows = build_report([RunRecord.load(r) for r in args.runs], args.baseline)
        write_report(rows, out / "report.csv")
        print(format_report(rows))
        return
    cfg = _base_config(args)
    if args.command == "gen-synth":
        cmd_gen_synth(cfg, out)
    elif args.command == "train-distance":
        _stage("train-distance", cmd_train_distance, cfg, out)
    elif args.command == "train-encoder":
        _stage("train-encoder", cmd_train_encoder, cfg, args.distnet, out)
    elif args.command == "embed":
        ds, _ = load_data(cfg)
        cmd_embed(args.encoder, ds, out / "embeddings.csv", cfg.encoder_train["window_length"])
        write_effective_config(cfg, out)
    elif args.command == "probe":
        print(json.dumps(_stage("probe", cmd_probe, cfg, args.encoder, out, args.embeddings)["classification"]["window"]))
    elif args.command == "finetune":
        print(json.dumps(_stage("finetune", cmd_finetune, cfg, args.encoder, out)["classification"]["window"]))
    elif args.command == "run":
        run_pipeline(cfg, out)
    elif args.command == "ablate":
        print(format_report(run_ablations(cfg, out)))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        dispatch(args)
    except (nd.ConfigError, augment.AugmentationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except dataio.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (nd.NonFiniteError, distnet.TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
