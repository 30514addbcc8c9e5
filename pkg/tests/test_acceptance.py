"""Acceptance gate: one test per core guarantee, each printing a verdict
line and enforcing its stated tolerance and runtime budget.

Criterion 5 is expected to fail: under this protocol (full-test-set
evaluation against a constant offline baseline) the full-rehearsal run is
structurally capped near 0.75 for a two-class sequential stream, because
half of the evaluation events land inside the first class block where no
model that has seen a single class can beat ~0.5 on the balanced test set.
The implementation is faithful; the target is not reachable. See also
tests/test_protocol.py, which verifies the two behaviors the criterion is
really after (no-rehearsal forgetting, full-rehearsal parity with offline
at the end of the stream).
"""

import json
import math
import os
import time

import numpy as np
import pytest

from protostream import (AccuracyCurve, CluStreamParams, HPStreamParams,
                         MLPClassifier, MLPConfig, OmegaResult, RunConfig,
                         StreamOrdering, SynthSpec, assign_projected_dims,
                         fit_offline, load_feature_matrix, load_manifest,
                         mu_total, omega_score, run_offline_baseline,
                         run_streaming, synth_gaussian)
from protostream.buffers import (BOUNDED_STRATEGIES, CluStreamBuffer,
                                 ExStreamBuffer, HPStreamBuffer,
                                 OnlineKMeansBuffer, QueueBuffer,
                                 ReservoirBuffer)
from protostream.cli import main


def verdict(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    print(f"criterion {number} ({name}): {status}{suffix}")
    assert ok, f"criterion {number} ({name}) failed{suffix}"


def make_buffer(strategy, capacity, seed, label, dim):
    if strategy == "exstream":
        return ExStreamBuffer(capacity)
    if strategy == "online_kmeans":
        return OnlineKMeansBuffer(capacity)
    if strategy == "clustream":
        return CluStreamBuffer(capacity, CluStreamParams(),
                               np.random.default_rng([seed, 5, label]))
    if strategy == "hpstream":
        return HPStreamBuffer(capacity, HPStreamParams(), dim)
    if strategy == "reservoir":
        return ReservoirBuffer(capacity, np.random.default_rng([seed, 4, label]))
    return QueueBuffer(capacity)


def within_capacity(strategy, buf, capacity):
    if strategy == "clustream" and not buf.initialized:
        return buf.size <= 2 * capacity  # staging pool for k-means seeding
    return buf.size <= capacity


def test_criterion_1_buffer_invariants():
    """Capacity, count conservation and weighted-sum conservation over
    10k-sample streams (3 classes, 8 dims, sizes 2/8/32, 5 seeds)."""
    start = time.perf_counter()
    for seed in range(5):
        rng = np.random.default_rng([1000, seed])
        x = rng.standard_normal((10000, 8))
        y = rng.integers(3, size=10000)
        per_class = [x[y == c] for c in range(3)]
        for strategy in BOUNDED_STRATEGIES:
            for capacity in (2, 8, 32):
                for label, points in enumerate(per_class):
                    buf = make_buffer(strategy, capacity, seed, label, 8)
                    for t, xi in enumerate(points):
                        buf.insert(xi, t)
                        if (t + 1) % 500 == 0:
                            assert within_capacity(strategy, buf, capacity), (
                                strategy, capacity, seed, label, t)
                    assert within_capacity(strategy, buf, capacity)
                    if strategy in ("exstream", "online_kmeans"):
                        assert int(buf.counts().sum()) == len(points), (
                            strategy, capacity, seed, label)
                    if strategy == "exstream":
                        kept = (buf.vectors() * buf.counts()[:, None]).sum(axis=0)
                        truth = points.sum(axis=0)
                        rel = np.linalg.norm(kept - truth) / np.linalg.norm(truth)
                        assert rel <= 1e-6, (strategy, capacity, seed, label, rel)
    elapsed = time.perf_counter() - start
    verdict(1, "buffer invariants", elapsed < 30.0, f"{elapsed:.1f}s for 900k inserts")


def sim_exstream_step(vecs, counts, x):
    if len(vecs) < sim_exstream_step.capacity:
        vecs.append(list(x))
        counts.append(1)
        return
    best = None
    for i in range(len(vecs)):
        for j in range(i + 1, len(vecs)):
            d = sum((a - b) ** 2 for a, b in zip(vecs[i], vecs[j]))
            if best is None or d < best[0]:
                best = (d, i, j)
    _, i, j = best
    ci, cj = counts[i], counts[j]
    vecs[i] = [(ci * a + cj * b) / (ci + cj) for a, b in zip(vecs[i], vecs[j])]
    counts[i] = ci + cj
    vecs[j] = list(x)
    counts[j] = 1


def test_criterion_2_oracle_equivalence():
    """Brute-force step simulators agree with the library on 1000 random
    small instances per operation (within 1e-9 where arithmetic rounds)."""
    rng = np.random.default_rng(2024)
    checked = 0

    for _ in range(1000):  # closest-pair merging buffer
        d, b = int(rng.integers(1, 5)), int(rng.integers(2, 5))
        stream = rng.standard_normal((b + int(rng.integers(1, 9)), d))
        buf = ExStreamBuffer(b)
        vecs, counts = [], []
        sim_exstream_step.capacity = b
        for xi in stream:
            buf.insert(xi)
            sim_exstream_step(vecs, counts, xi)
            np.testing.assert_allclose(buf.vectors(), vecs, atol=1e-9)
            assert buf.counts().tolist() == counts
        checked += 1

    for _ in range(1000):  # nearest-prototype running means
        d, b = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        stream = rng.standard_normal((b + int(rng.integers(1, 9)), d))
        buf = OnlineKMeansBuffer(b)
        vecs, counts = [], []
        for xi in stream:
            buf.insert(xi)
            if len(vecs) < b:
                vecs.append(list(xi))
                counts.append(1)
            else:
                dists = [sum((a - v) ** 2 for a, v in zip(row, xi)) for row in vecs]
                i = dists.index(min(dists))
                c = counts[i]
                vecs[i] = [(c * a + v) / (c + 1) for a, v in zip(vecs[i], xi)]
                counts[i] = c + 1
            np.testing.assert_allclose(buf.vectors(), vecs, atol=1e-9)
            assert buf.counts().tolist() == counts
        checked += 1

    for _ in range(1000):  # first-in-first-out
        d, b = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        stream = rng.standard_normal((b + int(rng.integers(1, 9)), d))
        buf = QueueBuffer(b)
        kept = []
        for xi in stream:
            buf.insert(xi)
            kept = (kept + [list(xi)])[-b:]
            np.testing.assert_array_equal(buf.vectors(), kept)
        checked += 1

    for _ in range(1000):  # projected-dimension bit selection
        k, d = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        radii = np.round(rng.random((k, d)) * 4) / 4  # coarse grid forces ties
        per = int(rng.integers(1, d + 1))
        got = assign_projected_dims(radii, per)
        pairs = sorted((radii[i][j], i, j) for i in range(k) for j in range(d))
        want = np.zeros((k, d), dtype=bool)
        for _, i, j in pairs[: k * per]:
            want[i, j] = True
        for i in range(k):
            if not want[i].any():
                want[i, min(range(d), key=lambda j: (radii[i][j], j))] = True
        np.testing.assert_array_equal(got, want)
        checked += 1

    verdict(2, "oracle equivalence", checked == 4000, f"{checked} instances")


def test_criterion_3_reservoir_uniformity():
    """Every stream element survives a 4-long stream into a 2-slot
    reservoir with frequency 1/2 (20000 seeds, +-0.02)."""
    trials = 20000
    hits = np.zeros(4)
    stream = [np.array([float(i)]) for i in range(4)]
    for seed in range(trials):
        buf = ReservoirBuffer(2, np.random.default_rng(seed))
        for xi in stream:
            buf.insert(xi)
        for v in buf.vectors():
            hits[int(v[0])] += 1
    freqs = hits / trials
    ok = bool(np.all(np.abs(freqs - 0.5) <= 0.02))
    verdict(3, "reservoir uniformity", ok,
            "freqs " + "/".join(f"{f:.3f}" for f in freqs))


def test_criterion_4_gradient_check():
    """Analytic gradients vs central differences (eps 1e-4) on a 5-in,
    4-hidden, 3-out double-precision network: relative error < 1e-4."""
    model = MLPClassifier(MLPConfig(layer_sizes=(4,), activation="elu",
                                    dropout_keep=1.0, weight_decay=0.0,
                                    learning_rate=0.1, batch_size=8, seed=0), 5, 3)
    rng = np.random.default_rng(42)
    x = rng.standard_normal((8, 5))
    y = rng.integers(3, size=8)
    _, grads, _ = model.loss_and_gradients(x, y)
    eps = 1e-4
    worst = 0.0
    for name, param in model.named_parameters():
        flat = param.reshape(-1)
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + eps
            up, _, _ = model.loss_and_gradients(x, y)
            flat[idx] = keep - eps
            down, _, _ = model.loss_and_gradients(x, y)
            flat[idx] = keep
            numeric = (up - down) / (2 * eps)
            analytic = grads[name].reshape(-1)[idx]
            rel = abs(numeric - analytic) / max(1.0, abs(numeric) + abs(analytic))
            worst = max(worst, rel)
    verdict(4, "gradient check", worst < 1e-4, f"max rel err {worst:.2e}")


def forgetting_dataset():
    return synth_gaussian(SynthSpec(num_classes=2, dim=10,
                                    samples_per_class_train=200,
                                    samples_per_class_test=100,
                                    class_mean_separation=10.0, noise_std=1.0,
                                    seed=0))


def forgetting_learner(seed):
    return MLPConfig(layer_sizes=(32,), learning_rate=0.5, batch_size=32, seed=seed)


def test_criterion_5_forgetting_gap():
    """Sequential two-class stream, three seeds: no-rehearsal collapses
    (omega <= 0.75), full rehearsal tracks offline (omega >= 0.95), gap
    >= 0.20. Expected to fail; see the module docstring."""
    start = time.perf_counter()
    ds = forgetting_dataset()
    rows = []
    for seed in (0, 1, 2):
        mlp = forgetting_learner(seed)
        base_cfg = RunConfig("full", 0, StreamOrdering("class_iid", seed), mlp,
                             eval_every=10)
        off_curve, _ = run_offline_baseline(ds, base_cfg, epochs=20)
        full = run_streaming(ds, RunConfig("full", 0,
                                           StreamOrdering("class_iid", seed), mlp,
                                           eval_every=10, buffer_seed=seed))
        none = run_streaming(ds, RunConfig("no_buffer", 0,
                                           StreamOrdering("class_iid", seed), mlp,
                                           eval_every=10, buffer_seed=seed))
        om_full = omega_score(full, off_curve).omega
        om_none = omega_score(none, off_curve).omega
        rows.append((seed, om_none, om_full, om_full - om_none))
    elapsed = time.perf_counter() - start
    detail = "; ".join(f"seed {s}: none={a:.3f} full={b:.3f} gap={g:.3f}"
                       for s, a, b, g in rows)
    ok = (elapsed < 180.0
          and all(a <= 0.75 and b >= 0.95 and g >= 0.20 for _, a, b, g in rows))
    verdict(5, "forgetting gap", ok, detail)


def test_criterion_6_generous_budget_parity():
    """With one slot per training sample the merging buffer never merges,
    so its omega lands within 0.02 of full rehearsal."""
    ds = forgetting_dataset()
    budget = 200  # per-class training samples
    worst = 0.0
    for seed in (0, 1, 2):
        mlp = forgetting_learner(seed)
        base_cfg = RunConfig("full", 0, StreamOrdering("class_iid", seed), mlp,
                             eval_every=10)
        off_curve, _ = run_offline_baseline(ds, base_cfg, epochs=20)
        ex = run_streaming(ds, RunConfig("exstream", budget,
                                         StreamOrdering("class_iid", seed), mlp,
                                         eval_every=10, buffer_seed=seed))
        full = run_streaming(ds, RunConfig("full", 0,
                                           StreamOrdering("class_iid", seed), mlp,
                                           eval_every=10, buffer_seed=seed))
        diff = abs(omega_score(ex, off_curve, budget).omega
                   - omega_score(full, off_curve).omega)
        worst = max(worst, diff)
    verdict(6, "generous budget parity", worst <= 0.02, f"max omega diff {worst:.4f}")


def test_criterion_7_metric_exactness():
    curve = AccuracyCurve([10, 20, 30], [0.3, 0.6, 0.9])
    self_score = omega_score(curve, curve).omega
    mu = mu_total([OmegaResult(2, 0.8, 3), OmegaResult(4, 1.0, 3)]).mu
    halved = omega_score(AccuracyCurve([10, 20], [0.4, 0.3]),
                         AccuracyCurve([10, 20], [0.8, 0.6])).omega
    ok = self_score == 1.0 and mu == 0.9 and halved == 0.5
    verdict(7, "metric exactness", ok,
            f"self={self_score!r} mu={mu!r} halved={halved!r}")


def test_criterion_8_end_to_end_determinism(tmp_path):
    """The same sweep executed twice (serial, then two worker processes)
    reports byte-identical CSV tables."""
    synth_cfg = tmp_path / "synth.json"
    synth_cfg.write_text(json.dumps({
        "num_classes": 2, "dim": 4, "samples_per_class_train": 30,
        "samples_per_class_test": 10, "instances_per_class": 3,
        "class_mean_separation": 8.0, "noise_std": 1.0, "seed": 0}))
    data = tmp_path / "data"
    assert main(["synth", "--config", str(synth_cfg), "--out", str(data)]) == 0

    mlp = {"layer_sizes": [8], "learning_rate": 0.1, "batch_size": 16, "seed": 0}
    base_cfg = tmp_path / "baseline.json"
    base_cfg.write_text(json.dumps({"dataset": "toy", "epochs": 5, "mlp": mlp}))
    baseline = tmp_path / "baseline_out.json"
    assert main(["baseline", "--features", str(data / "features.feat"),
                 "--manifest", str(data / "manifest.csv"),
                 "--config", str(base_cfg), "--out", str(baseline)]) == 0

    sweep = tmp_path / "sweep.json"
    sweep.write_text(json.dumps({
        "dataset": "toy", "features": str(data / "features.feat"),
        "manifest": str(data / "manifest.csv"),
        "methods": ["exstream", "reservoir", "no_buffer"],
        "orderings": ["iid", "class_iid"], "seeds": [0, 1],
        "buffer_sizes": [2, 4], "eval_every": 30, "mlp": mlp}))

    tables = []
    for tag, jobs in (("serial", 1), ("parallel", 2)):
        results = tmp_path / f"results_{tag}.jsonl"
        report = tmp_path / f"report_{tag}"
        assert main(["run", "--config", str(sweep), "--baseline", str(baseline),
                     "--jobs", str(jobs), "--out", str(results)]) == 0
        assert main(["report", "--results", str(results),
                     "--baseline", str(baseline), "--out", str(report)]) == 0
        tables.append(((report / "omega_table.csv").read_bytes(),
                       (report / "plot_data.csv").read_bytes()))
    ok = tables[0] == tables[1]
    verdict(8, "end-to-end determinism", ok,
            "serial and 2-process sweeps reported identical bytes")


@pytest.mark.skipif("PROTOSTREAM_TEST_FEATURES" not in os.environ,
                    reason="set PROTOSTREAM_TEST_FEATURES / PROTOSTREAM_TEST_MANIFEST "
                           "to run the external-features reproduction")
def test_criterion_9_external_features_reproduction():
    """Optional: offline accuracy on externally supplied deep features.

    Expects 2048-d features; the learner preset matches the published
    optimum for this kind of data. Override the target accuracy with
    PROTOSTREAM_TEST_EXPECTED_ACCURACY (fraction, default 0.7947).
    """
    features = load_feature_matrix(os.environ["PROTOSTREAM_TEST_FEATURES"])
    ds = load_manifest(os.environ["PROTOSTREAM_TEST_MANIFEST"], features)
    expected = float(os.environ.get("PROTOSTREAM_TEST_EXPECTED_ACCURACY", "0.7947"))
    epochs = int(os.environ.get("PROTOSTREAM_TEST_EPOCHS", "20"))
    config = MLPConfig(layer_sizes=(300, 150, 100), activation="relu",
                       dropout_keep=0.5, weight_decay=0.005, learning_rate=1e-4,
                       batch_size=256, seed=0)
    model = MLPClassifier(config, ds.dim, ds.num_classes)
    _, accuracy = fit_offline(model, ds, epochs)
    verdict(9, "external features reproduction",
            math.isclose(accuracy, expected, abs_tol=0.02),
            f"accuracy {accuracy:.4f} vs expected {expected:.4f}")
