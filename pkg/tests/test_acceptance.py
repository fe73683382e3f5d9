"""Acceptance criteria, one test per criterion.

Each test prints ``criterion N: PASS|FAIL ...`` with its runtime; the lines are
also collected into an "acceptance criteria" section at the end of the run.
"""

import json
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from hssnb.cli import main
from hssnb.data import HsiCube, extract_patches, pca_apply, pca_fit, stratified_split, synth_generate
from hssnb.metrics import ConfusionMatrix, average_accuracy, kappa, overall_accuracy
from hssnb.network import (TrainConfig, build_model, grad_check, jitter_for_check, predict, preset,
                           seed_for, train)
from hssnb.tensor import make_rng

from test_metrics import brute_force
from test_recurrent import lstm_fd_errors, random_params

FULL_COUNTS = [512, 5776, 13856, 331840, 73856, 1016320, 98816, 2064]
FULL_SHAPES = [
    ("input_1", (25, 25, 30, 1)), ("conv3d_1", (23, 23, 24, 8)), ("conv3d_2", (21, 21, 20, 16)),
    ("conv3d_3", (19, 19, 18, 32)), ("reshape_1", (19, 19, 576)), ("conv2d_1", (17, 17, 64)),
    ("conv2d_2", (15, 15, 128)), ("reshape_2", (15, 1920)), ("bidirectional_1", (15, 128)),
    ("dropout_1", (15, 128)), ("bidirectional_2", (128,)), ("dense_1", (16,)),
]


@contextmanager
def criterion(log, number, title, limit=None):
    """Times the body, checks the runtime limit and records one PASS/FAIL line."""
    info = {}
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield info
        elapsed = time.perf_counter() - start
        if limit is not None:
            assert elapsed < limit, f"runtime {elapsed:.1f}s exceeds {limit}s"
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        detail = "".join(f", {k}={v}" for k, v in info.items())
        line = f"criterion {number}: {status} {title} ({elapsed:.2f}s{detail})"
        log.append(line)
        print(line)


def test_criterion_1_parameter_counts(acceptance_log):
    with criterion(acceptance_log, 1, "parameter counts match the reference layer summary", limit=1.0) as info:
        model = build_model()
        counts = list(model.parameter_counts().values())
        info["total"] = model.parameter_count
        assert counts == FULL_COUNTS
        assert model.parameter_count == 1543040


def test_criterion_2_shape_chain(acceptance_log):
    with criterion(acceptance_log, 2, "forward shapes match the reference layer summary", limit=10.0):
        model = build_model(rng=make_rng(0))
        patch = make_rng(1).normal(size=(1, 25, 25, 30))
        probs, cache = model.forward(patch, training=False)
        assert model.shape_chain() == FULL_SHAPES
        assert [tuple(s) for s in cache["shapes"]] == [s for _, s in FULL_SHAPES]
        assert np.isclose(probs.sum(), 1.0)


def test_criterion_3_network_gradient(acceptance_log):
    with criterion(acceptance_log, 3, "network gradient check, both peephole modes", limit=300.0) as info:
        worst = 0.0
        for peep in (False, True):
            arch = preset("gradcheck", peepholes=peep)
            rng = make_rng(0)
            model = build_model(arch, rng)
            jitter_for_check(model, rng)
            patch = rng.normal(size=model.input_shape)
            one_hot = np.eye(arch.classes)[1]
            rep = grad_check(model, patch, one_hot, epsilon=1e-5, tolerance=1e-4)
            worst = max(worst, rep.max_error)
            assert rep.passed, rep.summary()
        info["max_rel_err"] = f"{worst:.2e}"


def test_criterion_4_lstm_unit(acceptance_log):
    with criterion(acceptance_log, 4, "isolated LSTM BPTT vs finite differences", limit=5.0) as info:
        worst = 0.0
        for peep in (False, True):
            p = random_params(3, 5, peep, seed=40 + peep)
            errs = lstm_fd_errors(p, make_rng(50 + peep).normal(size=(4, 3)))
            worst = max(worst, max(errs.values()))
        info["max_rel_err"] = f"{worst:.2e}"
        assert worst < 1e-6


def test_criterion_5_metrics(acceptance_log):
    with criterion(acceptance_log, 5, "metrics vs brute force and hand cases"):
        cm = ConfusionMatrix(2)
        cm.counts[...] = [[40, 10], [20, 30]]
        assert overall_accuracy(cm) == pytest.approx(0.70, abs=1e-15)
        assert average_accuracy(cm) == pytest.approx(0.70, abs=1e-15)
        assert kappa(cm) == pytest.approx(0.40, abs=1e-15)
        rng = make_rng(5)
        for _ in range(1000):
            n = int(rng.integers(2, 6))
            size = int(rng.integers(n * 3, 60))
            true = np.concatenate([np.arange(1, n + 1), rng.integers(1, n + 1, size - n)])
            pred = np.where(rng.random(size) < 0.6, true, rng.integers(1, n + 1, size))
            if len(set(pred)) == 1 and len(set(true)) == 1:
                continue
            cm = ConfusionMatrix.from_labels(true, pred, n)
            oa, aa, k = brute_force(list(true), list(pred), n)
            assert abs(overall_accuracy(cm) - oa) <= 1e-12
            assert abs(average_accuracy(cm) - aa) <= 1e-12
            assert abs(kappa(cm) - k) <= 1e-12


def test_criterion_6_desk_scale_learning(acceptance_log):
    with criterion(acceptance_log, 6, "desk-scale learning on synthetic data", limit=900.0) as info:
        cube, labels = synth_generate(32, 32, 16, 3, 0.05, make_rng(7))
        arch = preset("reduced", classes=3)
        reduced = pca_apply(pca_fit(cube, arch.bands), cube)
        patches = extract_patches(reduced, labels, arch.window)
        tr, te = stratified_split(patches, 0.3, make_rng(seed_for(7, "split")))
        model = build_model(arch, make_rng(seed_for(7, "init")))
        history = train(model, tr, TrainConfig(epochs=100, seed=7, window=arch.window, pca=arch.bands))
        train_acc = float(np.mean(predict(model, tr.patches) == tr.class_indices))
        cm = ConfusionMatrix.from_labels(te.class_indices, predict(model, te.patches), 3)
        info["train_acc"] = f"{100 * train_acc:.2f}%"
        info["test_oa"] = f"{100 * overall_accuracy(cm):.2f}%"
        assert len(history) == 100
        assert train_acc >= 0.99
        assert overall_accuracy(cm) >= 0.95


def test_criterion_7_determinism(acceptance_log, tmp_path):
    with criterion(acceptance_log, 7, "serial training is bit-identical"):
        ds = tmp_path / "ds"
        assert main(["synth", "--out", str(ds), "--size", "24x24x12", "--classes", "3", "--seed", "1"]) == 0
        for name in ("a", "b"):
            assert main(["train", "--serial", "--dataset", str(ds), "--out", str(tmp_path / name),
                         "--preset", "reduced", "--epochs", "3", "--seed", "4", "--runs", "1"]) == 0
        for f in ("history.csv", "checkpoint.bin"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_criterion_8_pca_properties(acceptance_log):
    with criterion(acceptance_log, 8, "PCA orthonormality, ordering, rank one"):
        rng = make_rng(8)
        cube, _ = synth_generate(20, 20, 16, 4, 0.1, rng)
        pca = pca_fit(cube, 10)
        c = pca.components
        assert np.abs(c.T @ c - np.eye(10)).max() <= 1e-8
        assert np.all(np.diff(pca.explained_variance) <= 0)
        direction = rng.normal(size=12)
        rank1 = rng.normal(size=(15, 15, 1)) * direction
        p1 = pca_fit(HsiCube(rank1), 3)
        ratio = p1.explained_variance[0] / p1.explained_variance.sum()
        assert ratio == pytest.approx(1.0, abs=1e-12)


def test_criterion_9_window_sweep(acceptance_log, tmp_path, capsys):
    with criterion(acceptance_log, 9, "window sweep emits a 4-row OA table") as info:
        ds = tmp_path / "ds"
        main(["synth", "--out", str(ds), "--size", "32x32x16", "--classes", "3", "--noise", "0.05",
              "--seed", "7"])
        out = tmp_path / "sweep"
        code = main(["sweep", "--dataset", str(ds), "--out", str(out), "--preset", "reduced",
                     "--epochs", "5", "--windows", "25,19,23,21"])
        rows = json.loads((out / "sweep.json").read_text())
        table = (out / "sweep.txt").read_text().splitlines()
        info["oa"] = "/".join(f"{100 * r['oa']:.1f}" for r in rows)
        assert code == 0
        assert [r["window"] for r in rows] == [19, 21, 23, 25]
        assert len(table) == 2 + 4
        assert all(0.0 <= r["oa"] <= 1.0 for r in rows)


INDIAN_PINES = os.environ.get("HSSNB_INDIAN_PINES")


@pytest.mark.skipif(not INDIAN_PINES, reason="set HSSNB_INDIAN_PINES to a converted dataset directory")
def test_criterion_10_indian_pines(acceptance_log, tmp_path):
    with criterion(acceptance_log, 10, "Indian Pines defaults reach OA >= 95% (overnight)") as info:
        out = tmp_path / "ip"
        assert main(["train", "--dataset", INDIAN_PINES, "--out", str(out), "--dtype", "float32"]) == 0
        metrics = json.loads((out / "metrics.json").read_text())
        info["oa"] = f"{100 * metrics['oa']:.2f}%"
        assert metrics["oa"] >= 0.95
