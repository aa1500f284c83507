"""The numba kernels and the numpy fallback must agree on every kernel."""

import os
import subprocess
import sys

import numpy as np
import pytest

from bsdegen.backends import available_backends, get_kernels

pytestmark = pytest.mark.skipif(
    sorted(available_backends()) != ["numba", "numpy"],
    reason="both backends required for cross-checks",
)


def _pair():
    return get_kernels("numba"), get_kernels("numpy")


class TestStreamKernels:
    def test_splitmix_outputs_bitwise_equal(self):
        nb, npk = _pair()
        for seed, start in [(0, 0), (12345, 7), (2**64 - 1, 1000)]:
            a = nb.splitmix_outputs(np.uint64(seed), start, 257)
            b = npk.splitmix_outputs(np.uint64(seed), start, 257)
            np.testing.assert_array_equal(a, b)

    def test_uniforms_bitwise_equal(self):
        nb, npk = _pair()
        np.testing.assert_array_equal(
            nb.uniforms(np.uint64(9), 3, 1001), npk.uniforms(np.uint64(9), 3, 1001)
        )

    def test_normals_agree_to_ulp(self):
        nb, npk = _pair()
        a = nb.normals(np.uint64(4), 0, 10_001)
        b = npk.normals(np.uint64(4), 0, 10_001)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)

    def test_row_kernels_agree(self):
        nb, npk = _pair()
        seeds = np.arange(17, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        np.testing.assert_array_equal(
            nb.uniforms_rows(seeds, 5, 33), npk.uniforms_rows(seeds, 5, 33)
        )
        np.testing.assert_allclose(
            nb.normals_rows(seeds, 5, 33), npk.normals_rows(seeds, 5, 33),
            rtol=1e-12, atol=1e-13,
        )


class TestMathKernels:
    def test_gelu_agrees(self):
        nb, npk = _pair()
        x = np.linspace(-12, 12, 5000).reshape(50, 100)
        np.testing.assert_allclose(nb.gelu(x), npk.gelu(x), rtol=1e-13, atol=1e-300)
        np.testing.assert_allclose(nb.gelu_grad(x), npk.gelu_grad(x), rtol=1e-13, atol=1e-300)

    def test_sqdist_agrees(self):
        nb, npk = _pair()
        rng = np.random.default_rng(0)
        a = rng.normal(size=(40, 7))
        b = rng.normal(size=(31, 7))
        np.testing.assert_allclose(nb.sqdist(a, b), npk.sqdist(a, b), rtol=1e-10, atol=1e-12)

    def test_kernel_mix_agrees(self):
        nb, npk = _pair()
        rng = np.random.default_rng(1)
        d2 = rng.uniform(0, 50, size=(20, 25))
        sig = np.array([1.0, 2.0, 4.0])
        np.testing.assert_allclose(
            nb.kernel_mix(d2, sig), npk.kernel_mix(d2, sig), rtol=1e-13, atol=0
        )
        np.testing.assert_allclose(
            nb.kernel_mix_grad(d2, sig), npk.kernel_mix_grad(d2, sig), rtol=1e-12, atol=1e-16
        )

    def test_ou_terminal_agrees(self):
        nb, npk = _pair()
        seeds = np.arange(500, dtype=np.uint64) + np.uint64(3)
        args = (seeds, np.full(3, 0.995), np.full(3, 0.1), np.ones(3), 50)
        np.testing.assert_allclose(
            nb.ou_diag_terminal(*args), npk.ou_diag_terminal(*args), rtol=1e-11, atol=1e-12
        )


class TestEnvSelection:
    @pytest.mark.parametrize("name", ["numba", "numpy"])
    def test_env_var_picks_backend(self, name):
        env = dict(os.environ, BSDEGEN_BACKEND=name)
        out = subprocess.run(
            [sys.executable, "-c", "import bsdegen; print(bsdegen.active_backend())"],
            env=env, capture_output=True, text=True, check=True,
        ).stdout.strip()
        assert out == name

    def test_bad_backend_name_rejected(self):
        env = dict(os.environ, BSDEGEN_BACKEND="cuda")
        proc = subprocess.run(
            [sys.executable, "-c", "import bsdegen"],
            env=env, capture_output=True, text=True,
        )
        assert proc.returncode != 0 and "BSDEGEN_BACKEND" in proc.stderr


class TestDeterminism:
    @pytest.mark.parametrize("name", ["numba", "numpy"])
    def test_repeat_calls_bitwise_identical(self, name):
        k = get_kernels(name)
        a = k.normals(np.uint64(10), 0, 4097)
        b = k.normals(np.uint64(10), 0, 4097)
        np.testing.assert_array_equal(a, b)
        seeds = np.arange(64, dtype=np.uint64)
        m1 = k.ou_diag_terminal(seeds, np.full(4, 0.99), np.full(4, 0.14), np.ones(4), 25)
        m2 = k.ou_diag_terminal(seeds, np.full(4, 0.99), np.full(4, 0.14), np.ones(4), 25)
        np.testing.assert_array_equal(m1, m2)
