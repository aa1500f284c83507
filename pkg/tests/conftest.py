import numpy as np
import pytest

from bsdegen.backends import get_kernels, available_backends


@pytest.fixture(scope="session", autouse=True)
def warm_backends():
    """Trigger JIT compilation up front so timed checks measure the math."""
    for name in available_backends():
        k = get_kernels(name)
        k.splitmix_outputs(np.uint64(1), 0, 4)
        k.uniforms(np.uint64(1), 0, 4)
        k.normals(np.uint64(1), 0, 5)
        seeds = np.arange(3, dtype=np.uint64)
        k.uniforms_rows(seeds, 0, 4)
        k.normals_rows(seeds, 0, 5)
        k.gelu(np.linspace(-2, 2, 8))
        k.gelu_grad(np.linspace(-2, 2, 8))
        a = np.arange(6.0).reshape(3, 2)
        d2 = k.sqdist(a, a)
        k.kernel_mix(d2, np.array([1.0, 2.0]))
        k.kernel_mix_grad(d2, np.array([1.0, 2.0]))
        k.ou_diag_terminal(seeds, np.full(2, 0.9), np.full(2, 0.1), np.ones(2), 3)
