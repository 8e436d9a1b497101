"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line that is echoed in the pytest
terminal summary.  The full-pipeline run is shared by criteria 6, 7, 8 and 10
through a session fixture.
"""

import json
import math
import time

import numpy as np
import pytest

from relcon import augment, clirun, dataio, distnet, encoder, evalkit, losses
from relcon import ndtensor as nd
from relcon.clirun import RunConfig
from relcon.losses import LossConfig, ScoredCandidate

from conftest import ACCEPTANCE_LINES
from oracles import relcon_bruteforce, simplex_projection_sort


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full") / "relcon"
    t = time.perf_counter()
    rec = clirun.run_pipeline(RunConfig(name="RelCon"), out)
    return out, rec, time.perf_counter() - t


def _rand(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    return nd.Tensor(np.abs(x) + 0.5 if positive else x, requires_grad=True)


def _op_checks(rng):
    """(name, loss closure, params) for every differentiable primitive."""
    a, b = _rand(rng, 3, 4), _rand(rng, 3, 4)
    pos = _rand(rng, 3, 4, positive=True)
    v = _rand(rng, 4)
    m = _rand(rng, 4, 2)
    x, k = _rand(rng, 2, 15, 2), _rand(rng, 3, 2, 3)
    r = _rand(rng, 3, 4)
    r.data[np.abs(r.data) < 0.05] += 0.2
    w = rng.normal(size=(3, 4))
    unary = {
        "neg": lambda: nd.neg(a), "relu": lambda: nd.relu(r), "square": lambda: nd.square(a),
        "sqrt": lambda: nd.sqrt(pos), "log": lambda: nd.log(pos), "exp": lambda: nd.exp(a),
        "clamp_min": lambda: nd.clamp_min(pos, 0.9), "softmax": lambda: nd.softmax(a, temperature=0.7),
        "sparsemax": lambda: nd.sparsemax(a),
    }
    checks = [(n, (lambda f=f: nd.tsum(f() * w)), [a, r, pos]) for n, f in unary.items()]
    checks += [
        ("add", lambda: nd.tsum((a + b) * w), [a, b]),
        ("sub", lambda: nd.tsum((a - b) * w), [a, b]),
        ("mul", lambda: nd.tsum(a * b * w), [a, b]),
        ("div", lambda: nd.tsum(a / pos * w), [a, pos]),
        ("broadcast", lambda: nd.tsum(nd.square(a * v + v)), [a, v]),
        ("sum", lambda: nd.tsum(nd.square(nd.tsum(a, axis=1))), [a]),
        ("mean", lambda: nd.tsum(nd.square(nd.mean(a, axis=0))), [a]),
        ("l2_norm", lambda: nd.tsum(nd.l2_norm(a, axis=-1)), [a]),
        ("reshape", lambda: nd.tsum(nd.reshape(a, (4, 3)) * w.reshape(4, 3)), [a]),
        ("swapaxes", lambda: nd.tsum(nd.swapaxes(a, 0, 1) * w.T), [a]),
        ("index", lambda: nd.tsum(nd.square(nd.index(a, (slice(None), [0, 2, 2])))), [a]),
        ("concat", lambda: nd.tsum(nd.square(nd.concat([a, b], axis=0))), [a, b]),
        ("stack", lambda: nd.tsum(nd.square(nd.stack([a, b], axis=1))), [a, b]),
        ("matmul", lambda: nd.tsum(nd.square(nd.matmul(a, m))), [a, m]),
        ("conv1d", lambda: nd.tsum(nd.square(nd.conv1d(x, k, dilation=2))), [x, k]),
        ("conv1d_stride", lambda: nd.tsum(nd.square(nd.conv1d(x, k, stride=2))), [x, k]),
    ]
    return checks


def _composite(seed):
    """A random chain of primitives ending in a scalar."""
    rng = np.random.default_rng(seed)
    x, W1, W2 = _rand(rng, 5, 4), _rand(rng, 4, 6), _rand(rng, 6, 3)
    order = rng.permutation(3)

    def f():
        h = nd.matmul(x, W1)
        for o in order:
            if o == 0:
                h = nd.exp(nd.mul(h, 0.3))
            elif o == 1:
                h = nd.softmax(h) + nd.sparsemax(h)
            else:
                h = nd.sqrt(nd.square(h) + 1.0)
        return nd.tsum(nd.log(nd.l2_norm(nd.matmul(h, W2), axis=-1) + 1.0))

    return f, [x, W1, W2]


def test_criterion_1_autodiff():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_op = max(nd.gradcheck(f, ps) for _, f, ps in _op_checks(rng))
    worst_comp = max(nd.gradcheck(*_composite(s)) for s in range(3))
    dp = distnet.init_params(distnet.DistanceNetHyper(embed_dim=8, kernel_size=3, dilations=(1, 2)), 1)
    a, c = rng.normal(size=(2, 16, 3)), rng.normal(size=(2, 16, 3))
    err_dist = nd.gradcheck(lambda: nd.mean(distnet.distance_tensor(a, c, dp)), dp.parameters())
    hyper = encoder.EncoderHyper(stem_width=4, stage_widths=(4, 6), stage_blocks=(1, 1), stage_strides=(1, 2),
                                 embed_dim=5)
    ep = encoder.init_encoder(hyper, 5)
    xs = rng.normal(size=(3, 8, 3))
    dists = rng.uniform(0.1, 1.0, size=(1, 2))

    def enc_loss():
        e = encoder.encode_tensor(xs, ep)
        return losses.relcon_loss_batch(e[np.array([0])], nd.reshape(e[np.array([1, 2])], (1, 2, 5)), dists)

    err_enc = nd.gradcheck(enc_loss, ep.parameters())
    elapsed = time.perf_counter() - t
    ok = worst_op < 1e-4 and worst_comp < 1e-4 and max(err_dist, err_enc) < 1e-3 and elapsed < 60
    record(1, ok, f"ops {worst_op:.1e}, composites {worst_comp:.1e}, distnet {err_dist:.1e}, "
                  f"encoder+loss {err_enc:.1e}, {elapsed:.1f}s")


def test_criterion_2_sparsemax():
    rng = np.random.default_rng(1)
    worst, worst_shift = 0.0, 0.0
    for _ in range(1000):
        z = rng.normal(scale=rng.uniform(0.1, 5), size=int(rng.integers(2, 33)))
        p = nd.sparsemax(z).data
        worst = max(worst, np.abs(p - simplex_projection_sort(z)).max())
        worst_shift = max(worst_shift, np.abs(p - nd.sparsemax(z + rng.normal(scale=10)).data).max())
    e1 = np.abs(nd.sparsemax([2.0, 0.0]).data - [1.0, 0.0]).max()
    e2 = np.abs(nd.sparsemax([0.5, 0.3, -1.0]).data - [0.6, 0.4, 0.0]).max()
    ok = max(worst, worst_shift, e1, e2) < 1e-9
    record(2, ok, f"oracle {worst:.1e}, shift {worst_shift:.1e}, examples {max(e1, e2):.1e}")


def test_criterion_3_losses():
    errs = [
        abs(losses.nt_xent([1.0, 2.0], [0.5, 0.1], []).item() - 0.0),
        abs(losses.nt_xent([1.0, 0.0], [0.3, 1.0], [[0.3, -2.0]]).item() - math.log(2)),
        abs(losses.nt_xent([1.0, 0.0], [1.0, 0.0], [[0.0, 1.0]]).item() - math.log1p(math.exp(-1))),
        abs(losses.relcon_loss([1.0, 1.0], [ScoredCandidate(i, [1.0, 0.0], d) for i, d in enumerate([0.1, 0.5, 0.9])])
            .item() - (math.log(3) + math.log(2))),
    ]
    rng = np.random.default_rng(3)
    for _ in range(100):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 6))
        a, e = rng.normal(size=d), rng.normal(size=(n, d))
        dist = rng.integers(0, 4, size=n) * 0.5
        tau = float(rng.uniform(0.2, 2.0))
        cs = [ScoredCandidate(i, e[i], dist[i]) for i in range(n)]
        errs.append(abs(losses.relcon_loss(a, cs, LossConfig(temperature=tau)).item()
                        - relcon_bruteforce(a, e, dist, tau)))
    worst = max(errs)
    record(3, worst < 1e-9, f"closed forms and 100 brute-force instances, max error {worst:.1e}")


def test_criterion_4_negative_set():
    d = {"c1": 0.1, "c2": 0.5, "c3": 0.9}
    ok = losses.negative_set(d, "c3") == set() and losses.negative_set(d, "c2") == {"c3"}
    ok &= all(losses.negative_set({k: 0.4 for k in "abc"}, k) == set() for k in "abc")
    rng = np.random.default_rng(4)
    violations = 0
    for _ in range(1000):
        n = int(rng.integers(2, 12))
        dist = dict(enumerate(np.round(rng.uniform(0, 1, size=n), 1)))
        count = {c: sum(c in losses.negative_set(dist, p) for p in dist) for c in dist}
        for i in dist:
            for j in dist:
                if dist[j] > dist[i] and count[j] < count[i]:
                    violations += 1
                if j in losses.negative_set(dist, i) and not dist[j] > dist[i]:
                    violations += 1
    record(4, ok and violations == 0, f"examples {'ok' if ok else 'wrong'}, 1000 maps, {violations} violations")


def test_criterion_5_revin():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(loc=rng.normal(scale=3, size=3), scale=rng.uniform(0.1, 4, size=3), size=(64, 3))
        cand = rng.normal(loc=rng.normal(scale=3, size=3), scale=rng.uniform(0.1, 4, size=3), size=(64, 3))
        st = distnet.candidate_stats(cand)
        back = distnet.revin_unnormalize(distnet.revin_normalize(x, st), st)
        worst = max(worst, np.abs(np.asarray(getattr(back, "data", back)) - x).max())
    record(5, worst < 1e-9, f"1000 windows, max round-trip error {worst:.1e}")


def test_criterion_6_distance_invariance(full_run):
    out, rec, _ = full_run
    cfg = RunConfig().effective()
    st = cfg.stages()
    ds, split = clirun.load_data(cfg)
    train = ds.subset(split.users("train"))
    aug = distnet.DistanceNetParams.load(out / "distnet" / "distnet.ckpt").freeze()
    t = time.perf_counter()
    none, _ = distnet.train_distance(train, augment.identity_pipeline(), st["distnet_train"], st["distnet"])
    none_s = time.perf_counter() - t
    d_rot, d_other = distnet.rotation_triplets(train, aug, n=500)
    win_aug = float(np.mean(d_rot < d_other))
    n_rot, n_other = distnet.rotation_triplets(train, none, n=500)
    win_none = float(np.mean(n_rot < n_other))
    aug_s = rec.timings["train_distance_s"]
    ok = (np.median(d_rot) < np.median(d_other) and win_aug >= 0.85 and win_none < win_aug
          and max(aug_s, none_s) <= 300)
    record(6, ok, f"win-rate aug {win_aug:.3f} vs none {win_none:.3f}, median rot {np.median(d_rot):.3f} "
                  f"< other {np.median(d_other):.3f}, train {aug_s:.0f}s/{none_s:.0f}s")


def test_criterion_7_end_to_end(full_run):
    _, rec, elapsed = full_run
    m = rec.metrics
    acc = m["classification"]["window"]["accuracy"]["mean"]
    corr = {t: m["regression"][t]["pearson_corr"]["mean"] for t in m["regression"]}
    ok = acc >= 0.80 and all(c >= 0.7 for c in corr.values()) and elapsed <= 1800
    detail = ", ".join(f"{t} r={c:.3f}" for t, c in corr.items())
    record(7, ok, f"probe accuracy {acc:.3f}, {detail}, {elapsed:.0f}s")


def test_criterion_8_workout_level(full_run):
    out, _, _ = full_run
    cfg = RunConfig().effective()
    spec = dataio.SyntheticSpec.from_dict(dict(cfg.synthetic, windows_per_recording=50))
    ds, split, _ = dataio.generate_synthetic(spec)
    params = encoder.EncoderParams.load(out / "encoder" / "encoder.ckpt")
    T = spec.window_length
    train_w = clirun.eval_windows(ds.subset(split.users("train")), T)
    test_w = clirun.eval_windows(ds.subset(split.users("test")), T)
    ytr = np.array([w.label for w in train_w])
    yte = np.array([w.label for w in test_w])
    model = evalkit.fit_classifier(encoder.encode_batch(train_w, params), ytr)
    proba = model.predict_proba(encoder.encode_batch(test_w, params))
    pred = proba.argmax(axis=1)
    rids = [w.recording_id for w in test_w]
    _, wp, _, wl = evalkit.workout_level(rids, pred, proba, yte)
    window_acc, workout_acc = float(np.mean(pred == yte)), float(np.mean(wp == wl))
    rng = np.random.default_rng(8)
    tied = np.repeat([3, 1, 4, 2], 5)
    ties_ok = all(evalkit.majority_vote(rng.permutation(tied)) == 1 for _ in range(20))
    ok = all(np.sum(np.array(rids) == r) == 50 for r in set(rids)) and workout_acc >= window_acc and ties_ok
    record(8, ok, f"workout accuracy {workout_acc:.3f} >= window accuracy {window_acc:.3f} "
                  f"over {len(set(rids))} recordings, ties {'deterministic' if ties_ok else 'unstable'}")


def test_criterion_9_ablation_report(tmp_path):
    cfg = RunConfig.from_dict({
        "distnet_train": {"steps": 150},
        "encoder_train": {"steps": 100},
        "eval": {"probe_repeats": 2, "probe_steps": 200},
    })
    table = clirun.run_ablations(cfg, tmp_path)
    labels = [r["run"] for r in table]
    cols = [c for c, _ in clirun.REPORT_COLUMNS]
    finite = all(np.isfinite(r[c]) and np.isfinite(r[c + "_delta_pct"]) for r in table for c in cols)
    base_zero = all(table[0][c + "_delta_pct"] == 0.0 for c in cols)
    code = clirun.main(["report", "--runs", *[str(tmp_path / clirun.slug(lbl)) for lbl in labels],
                        "--out", str(tmp_path / "cli")])
    ok = (labels == [r[0] for r in clirun.ABLATION_ROWS] and finite and base_zero and code == 0
          and (tmp_path / "report.csv").is_file())
    record(9, ok, f"{len(table)} rows, deltas {'finite' if finite else 'non-finite'}, report exit {code}")


def test_criterion_10_determinism(full_run, tmp_path):
    out, _, _ = full_run
    again = clirun.run_pipeline(RunConfig(name="RelCon"), tmp_path / "relcon")
    a = (out / "metrics.json").read_bytes()
    b = (tmp_path / "relcon" / "metrics.json").read_bytes()
    same_ckpt = (out / "encoder" / "encoder.ckpt").read_bytes() == (tmp_path / "relcon" / "encoder" /
                                                                    "encoder.ckpt").read_bytes()
    ok = a == b and json.loads(a) == again.metrics
    record(10, ok, f"metrics.json {'identical' if a == b else 'differs'} ({len(a)} bytes), "
                   f"encoder checkpoint {'identical' if same_ckpt else 'differs'}")


def test_criterion_11_metric_oracles():
    kappa = evalkit.cohen_kappa(np.array([[40, 10], [20, 30]]))
    rng = np.random.default_rng(11)
    y = rng.integers(0, 2, size=500)
    s = rng.uniform(size=500)
    auc_shift = max(abs(evalkit.roc_auc(y, s) - evalkit.roc_auc(y, f(s)))
                    for f in (lambda v: np.exp(3 * v) - 7, lambda v: v ** 3, lambda v: np.log(v + 1e-3)))
    preds = np.array([2.0, 0.0, 5.0, 4.0])
    targets = np.array([1.0, 3.0, 3.0, 4.0])
    r = evalkit.regression_metrics(preds, targets, ["a", "a", "b", "b"]).scalars
    want = {"mse": 3.5, "sdse": math.sqrt(4.5), "mae": 1.5, "sdae": math.sqrt(0.5), "pearson_corr": 1.0}
    reg_err = max(abs(r[k] - v) for k, v in want.items())
    ok = kappa == 0.4 and auc_shift < 1e-12 and reg_err < 1e-12
    record(11, ok, f"kappa {kappa!r}, AUC transform drift {auc_shift:.1e}, regression error {reg_err:.1e}")
