"""Acceptance gate: one test per release criterion, one PASS/FAIL line each.

The desk-scale training runs use a deterministic 2,000-image synthetic
grayscale corpus as a stand-in for the usual 28x28 benchmark downloads
(this environment has no network access); the image pipeline, geometry,
and training configuration are identical.

Run with `pytest tests/test_acceptance.py -v -s` to see the report lines.
"""

import math
import struct
import time

import numpy as np
import pytest

from bsdegen import nn
from bsdegen.cli import main
from bsdegen.data import export_pgm, parse_idx_images
from bsdegen.mmd import KernelSpec, mmd2_value
from bsdegen.rng import Rng
from bsdegen.sde import lyapunov_residual, ou_stationary_covariance, scalar_ou_strong_errors
from bsdegen.trainer import evaluate
from bsdegen.verify import (
    gelu_fixture,
    linear_bsde_check,
    mlp_gradient_check,
    mmd_fixture,
    ou_stationarity_check,
    rollout_gradient_check,
)
from synthdata import synthetic_idx_bytes


def _report(criterion, passed, detail):
    print(f"\n{'PASS' if passed else 'FAIL'} criterion-{criterion}: {detail}")
    assert passed, f"criterion-{criterion}: {detail}"


DESK_TRAIN_ARGS = [
    "--downsample", "8x8",
    "--dx", "16", "--dw", "16",
    "--grid-n", "20", "--grid-t", "1.0",
    "--batch-size", "128",
    "--kernel", "multiscale",
    "--lr", "1e-4",
    "--iterations", "500",
    "--strategy", "decoder_only",
    "--seed", "7",
]


@pytest.fixture(scope="session")
def desk_idx_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("desk") / "images2000.idx"
    path.write_bytes(synthetic_idx_bytes(2000, 28, 28, seed=2026))
    return path


@pytest.fixture(scope="session")
def desk_run(desk_idx_file, tmp_path_factory):
    """The reference desk-scale training run (1 worker); shared by criteria 7 and 8."""
    out = tmp_path_factory.mktemp("desk") / "runA"
    t0 = time.perf_counter()
    code = main([
        "train", "--data", str(desk_idx_file), "--out", str(out),
        "--workers", "1", *DESK_TRAIN_ARGS,
    ])
    seconds = time.perf_counter() - t0
    assert code == 0
    return {"out": out, "seconds": seconds}


class TestCriterion1GradientFidelity:
    def test_reverse_mode_matches_finite_differences(self):
        t0 = time.perf_counter()
        mlps = mlp_gradient_check(n_models=20, tol=1e-4)
        rollout = rollout_gradient_check(tol=1e-4)
        elapsed = time.perf_counter() - t0
        ok = mlps.passed and rollout.passed and elapsed < 10.0
        _report(1, ok, f"{mlps.detail}; {rollout.detail}; {elapsed:.1f}s < 10s")


class TestCriterion2OuCorrectness:
    def test_stationary_covariance_and_lyapunov_residual(self):
        lam = np.eye(32)
        sigma = math.sqrt(2.0) * np.eye(32)
        resid = lyapunov_residual(lam, sigma, ou_stationary_covariance(lam, sigma))
        t0 = time.perf_counter()
        mc = ou_stationarity_check(n_paths=100_000, d_x=32, steps=200, rel_tol=0.05)
        elapsed = time.perf_counter() - t0
        ok = mc.passed and resid <= 1e-10 and elapsed < 30.0
        _report(2, ok, f"{mc.detail}; residual {resid:.1e} <= 1e-10; {elapsed:.1f}s < 30s")


class TestCriterion3EulerOrder:
    def test_strong_error_halves_per_doubling(self):
        t0 = time.perf_counter()
        curve = scalar_ou_strong_errors(seed=13, n_paths=10_000)
        elapsed = time.perf_counter() - t0
        ratios = curve.ratios()
        ok = all(1.5 <= r <= 2.5 for r in ratios) and elapsed < 60.0
        pretty = ", ".join(f"{r:.2f}" for r in ratios)
        _report(3, ok, f"N={curve.levels} ratios [{pretty}] in [1.5, 2.5]; {elapsed:.1f}s < 60s")


class TestCriterion4LinearBackwardOracle:
    def test_closed_form_recovery_and_halving(self):
        res = linear_bsde_check(levels=(50, 100, 200))
        _report(4, res.passed, res.detail)


class TestCriterion5MmdFixtures:
    def test_hand_values_unbiasedness_discrimination(self):
        fix = mmd_fixture()

        rbf = KernelSpec("rbf", (1.0,))
        zz = np.zeros((2, 1))
        exact_zero = mmd2_value(zz, zz, rbf) == 0.0
        want = 2.0 - 2.0 * math.exp(-2.0)
        hand_ok = abs(mmd2_value(zz, np.full((2, 1), 2.0), rbf) - want) <= 1e-12

        spec2 = KernelSpec("multiscale", (1.0, 2.0))
        r = Rng(777)
        estimates = np.array([
            mmd2_value(r.normal_matrix(100, 2), r.normal_matrix(100, 2), spec2)
            for _ in range(200)
        ])
        se = estimates.std(ddof=1) / math.sqrt(len(estimates))
        unbiased_ok = abs(estimates.mean()) <= 3.0 * se

        spec_disc = KernelSpec("multiscale", (1.0, 2.0, 4.0, 8.0))
        rd = Rng(778)
        x = rd.normal_matrix(500, 2)
        y = rd.normal_matrix(500, 2) + np.array([3.0, 0.0])
        observed = mmd2_value(x, y, spec_disc)
        pool = np.vstack([x, y])
        perm_rng = Rng(779)
        null = np.array([
            mmd2_value(pool[p[:500]], pool[p[500:]], spec_disc)
            for p in (perm_rng.permutation(1000) for _ in range(100))
        ])
        disc_ok = observed > 10.0 * null.std(ddof=1)

        ok = fix.passed and exact_zero and hand_ok and unbiased_ok and disc_ok
        _report(
            5,
            ok,
            f"{fix.detail}; null mean {estimates.mean():.2e} within 3SE={3*se:.2e}; "
            f"separated MMD^2 {observed:.3f} > 10x null SD {null.std(ddof=1):.2e}",
        )


class TestCriterion6OptimizerAndGeluFixtures:
    def test_hand_computed_values(self):
        p = [np.array([0.0])]
        state = nn.RMSPropState.zeros_like(p)
        p, state = nn.rmsprop_step(p, [np.array([1.0])], state, 0.1, 0.9, 0.0)
        first_ok = abs(p[0][0] - (-0.1 / math.sqrt(0.1))) <= 1e-12
        p, state = nn.rmsprop_step(p, [np.array([1.0])], state, 0.1, 0.9, 0.0)
        second = -0.1 / math.sqrt(0.1) - 0.1 / math.sqrt(0.19)
        second_ok = abs(p[0][0] - second) <= 1e-12
        gelu = gelu_fixture(tol=1e-6)
        ok = first_ok and second_ok and gelu.passed
        _report(
            6,
            ok,
            f"rmsprop steps ({-0.1 / math.sqrt(0.1):.6f}, {second:.6f}) to 1e-12; {gelu.detail}",
        )


class TestCriterion7DeskScaleTraining:
    def test_loss_halves_and_samples_render(self, desk_run, tmp_path):
        losses = []
        for line in (desk_run["out"] / "loss.csv").read_text().splitlines()[1:]:
            losses.append(float(line.split(",")[1]))
        assert len(losses) == 500
        head = float(np.mean(losses[:50]))
        tail = float(np.mean(losses[450:500]))
        loss_ok = tail <= 0.5 * head and all(math.isfinite(l) for l in losses)

        gen = tmp_path / "gen"
        code = main([
            "generate", "--checkpoint", str(desk_run["out"] / "checkpoint.bsdg"),
            "--count", "16", "--out", str(gen), "--seed", "1",
        ])
        images = [
            (gen / f"img_{i:03d}.pgm").read_bytes()[len(b"P5\n8 8\n255\n"):]
            for i in range(16)
        ]
        sample_ok = (
            code == 0
            and all(len(img) == 64 for img in images)
            and any(len(set(img)) > 1 for img in images)
            and len(set(images)) > 1
        )
        time_ok = desk_run["seconds"] <= 900.0
        ok = loss_ok and sample_ok and time_ok
        _report(
            7,
            ok,
            f"mean loss iters 451-500 = {tail:.5f} <= 0.5 * {head:.5f} (first 50); "
            f"16 PGM samples non-constant; run took {desk_run['seconds']:.0f}s <= 900s",
        )


class TestCriterion8Determinism:
    def test_byte_identical_loss_csv_across_repeats_and_workers(
        self, desk_idx_file, desk_run, tmp_path
    ):
        ref = (desk_run["out"] / "loss.csv").read_bytes()
        out_b = tmp_path / "runB"
        assert main([
            "train", "--data", str(desk_idx_file), "--out", str(out_b),
            "--workers", "1", *DESK_TRAIN_ARGS,
        ]) == 0
        out_c = tmp_path / "runC"
        assert main([
            "train", "--data", str(desk_idx_file), "--out", str(out_c),
            "--workers", "4", *DESK_TRAIN_ARGS,
        ]) == 0
        same_repeat = (out_b / "loss.csv").read_bytes() == ref
        same_workers = (out_c / "loss.csv").read_bytes() == ref
        ok = same_repeat and same_workers
        _report(
            8,
            ok,
            f"repeat run byte-identical: {same_repeat}; 4-worker run byte-identical: {same_workers}",
        )


class TestCriterion9Io:
    def test_idx_and_pgm_fixtures(self):
        # full-geometry file: magic 2051, 60000 x 28 x 28
        payload = np.zeros(60_000 * 28 * 28, dtype=np.uint8)
        payload[:3] = [7, 128, 255]
        big = struct.pack(">IIII", 2051, 60_000, 28, 28) + payload.tobytes()
        ds_big = parse_idx_images(big)
        big_ok = (
            (ds_big.count, ds_big.rows, ds_big.cols) == (60_000, 28, 28)
            and ds_big.pixels[0, 2] == 1.0
        )

        tiny = struct.pack(">IIII", 2051, 1, 2, 2) + bytes([0, 128, 255, 64])
        assert len(tiny) == 20
        ds_tiny = parse_idx_images(tiny)
        tiny_ok = np.allclose(
            ds_tiny.pixels[0], [0.0, 128 / 255, 1.0, 64 / 255], atol=1e-12
        )

        pgm = export_pgm(np.array([0.0, 0.5, 1.0, 1.2]), 2, 2)
        pgm_ok = pgm == b"P5\n2 2\n255\n" + bytes([0, 128, 255, 255])

        ok = big_ok and tiny_ok and pgm_ok
        _report(
            9,
            ok,
            f"60000x28x28 IDX parsed: {big_ok}; 20-byte fixture parsed: {tiny_ok}; "
            f"PGM byte-exact: {pgm_ok}",
        )


class TestTrainedModelOrdering:
    def test_trained_beats_untrained_on_held_out_score(self, desk_idx_file, desk_run):
        """Training must shrink the generated-vs-real discrepancy."""
        from bsdegen.data import downsample_mean, subset

        ds = downsample_mean(parse_idx_images(desk_idx_file.read_bytes()), 8, 8)
        trained = (desk_run["out"] / "checkpoint.bsdg").read_bytes()
        untrained_out = desk_run["out"].parent / "untrained"
        assert main([
            "train", "--data", str(desk_idx_file), "--out", str(untrained_out),
            "--workers", "1", *DESK_TRAIN_ARGS, "--iterations", "0",
        ]) == 0
        untrained = (untrained_out / "checkpoint.bsdg").read_bytes()
        s_trained = evaluate(trained, ds, 256, Rng(5))
        s_untrained = evaluate(untrained, ds, 256, Rng(5))
        assert s_trained < s_untrained
