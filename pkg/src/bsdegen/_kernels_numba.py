"""Numba-compiled twins of the kernels in ``_kernels_numpy``.

Same names, same signatures, same stream-consumption rules. No fastmath
anywhere: results must be reproducible bit-for-bit run to run. The Monte
Carlo path kernel uses prange; that stays deterministic because each path
writes only its own row.
"""

import math

import numba as nb
import numpy as np

# prefer omp for prange: probing stale TBB installs only emits warnings
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

U64 = np.uint64
GAMMA = U64(0x9E3779B97F4A7C15)
MIX_M1 = U64(0xBF58476D1CE4E5B9)
MIX_M2 = U64(0x94D049BB133111EB)
TWO_NEG53 = 2.0**-53
TWO_PI = 2.0 * math.pi
INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

_JIT = dict(cache=True, nogil=True)


@nb.njit(**_JIT)
def _mix64(z):
    z = (z ^ (z >> U64(30))) * MIX_M1
    z = (z ^ (z >> U64(27))) * MIX_M2
    return z ^ (z >> U64(31))


@nb.njit(**_JIT)
def _output(seed, i):
    # output index i -> counter i+1, so cursor 0 maps to seed + GAMMA
    return _mix64(seed + U64(i + 1) * GAMMA)


@nb.njit(**_JIT)
def splitmix_outputs(seed, start, count):
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = _output(U64(seed), start + i)
    return out


@nb.njit(**_JIT)
def uniforms(seed, start, count):
    out = np.empty(count)
    for i in range(count):
        out[i] = float(_output(U64(seed), start + i) >> U64(11)) * TWO_NEG53
    return out


@nb.njit(**_JIT)
def _fill_normals(seed, start, out):
    n = out.shape[0]
    npairs = (n + 1) // 2
    for k in range(npairs):
        u1 = float(_output(seed, start + 2 * k) >> U64(11)) * TWO_NEG53
        u2 = float(_output(seed, start + 2 * k + 1) >> U64(11)) * TWO_NEG53
        r = math.sqrt(-2.0 * math.log1p(-u1))
        th = TWO_PI * u2
        out[2 * k] = r * math.cos(th)
        if 2 * k + 1 < n:
            out[2 * k + 1] = r * math.sin(th)


@nb.njit(**_JIT)
def normals(seed, start, n):
    out = np.empty(n)
    _fill_normals(U64(seed), start, out)
    return out


@nb.njit(**_JIT)
def uniforms_rows(seeds, start, n):
    out = np.empty((seeds.shape[0], n))
    for r in range(seeds.shape[0]):
        s = seeds[r]
        for i in range(n):
            out[r, i] = float(_output(s, start + i) >> U64(11)) * TWO_NEG53
    return out


@nb.njit(**_JIT)
def normals_rows(seeds, start, n):
    out = np.empty((seeds.shape[0], n))
    for r in range(seeds.shape[0]):
        _fill_normals(seeds[r], start, out[r])
    return out


@nb.njit(**_JIT)
def gelu(x):
    # Phi via erfc keeps the negative tail from rounding to zero.
    flat = np.ascontiguousarray(x).ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        out[i] = v * (0.5 * math.erfc(v * -INV_SQRT2))
    return out.reshape(x.shape)


@nb.njit(**_JIT)
def gelu_grad(x):
    flat = np.ascontiguousarray(x).ravel()
    out = np.empty_like(flat)
    for i in range(flat.shape[0]):
        v = flat[i]
        phi = math.exp(-0.5 * v * v) * INV_SQRT_2PI
        out[i] = 0.5 * math.erfc(v * -INV_SQRT2) + v * phi
    return out.reshape(x.shape)


@nb.njit(**_JIT)
def sqdist(a, b):
    m, d = a.shape
    n = b.shape[0]
    out = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


@nb.njit(**_JIT)
def kernel_mix(d2, sigmas):
    m, n = d2.shape
    ns = sigmas.shape[0]
    out = np.zeros((m, n))
    for s in range(ns):
        c = -0.5 / (sigmas[s] * sigmas[s])
        for i in range(m):
            for j in range(n):
                out[i, j] += math.exp(d2[i, j] * c)
    return out / ns


@nb.njit(**_JIT)
def kernel_mix_grad(d2, sigmas):
    m, n = d2.shape
    ns = sigmas.shape[0]
    out = np.zeros((m, n))
    for s in range(ns):
        c = -0.5 / (sigmas[s] * sigmas[s])
        for i in range(m):
            for j in range(n):
                out[i, j] += c * math.exp(d2[i, j] * c)
    return out / ns


@nb.njit(cache=True, nogil=True, parallel=True)
def ou_diag_terminal(seeds, step_mult, step_noise, init_scale, n_steps):
    n_paths = seeds.shape[0]
    d = step_mult.shape[0]
    per_call = 2 * ((d + 1) // 2)
    out = np.empty((n_paths, d))
    for p in nb.prange(n_paths):
        seed = seeds[p]
        x = np.empty(d)
        z = np.empty(d)
        _fill_normals(seed, 0, x)
        for k in range(d):
            x[k] *= init_scale[k]
        cur = per_call
        for _ in range(n_steps):
            _fill_normals(seed, cur, z)
            for k in range(d):
                x[k] = x[k] * step_mult[k] + z[k] * step_noise[k]
            cur += per_call
        out[p] = x
    return out
