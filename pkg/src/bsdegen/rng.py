"""Deterministic, counter-based random streams.

A stream is identified by a 64-bit seed; output ``i`` is
``mix64(seed + (i+1)*GAMMA) mod 2**64`` with the splitmix64 finalizer
``mix64``, so any slice of a stream can be produced without generating its
prefix. Uniforms keep the top 53 bits; normals are Box-Muller pairs over
consecutive outputs (see ``_kernels_numpy`` for the exact formulas). Every
call that asks for ``n`` normals advances the cursor by ``2*ceil(n/2)``
outputs; uniforms advance by ``n``.

Substreams come from ``derive``: independent child seeds hashed from a
parent seed and integer keys. Training code keys substreams by purpose,
iteration and sample slot, which makes draws independent of how a batch is
chunked across workers.
"""

import numpy as np

from .backends import kernels as _K

_MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z):
    """splitmix64 finalizer on python ints (avoids numpy scalar overflow warnings)."""
    z &= _MASK
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive(seed, *keys):
    """Hash a parent seed and integer keys into an independent child seed.

    h starts at mix64(seed + GAMMA); each key folds in as
    h = mix64(h XOR mix64((key+1)*GAMMA)).
    """
    h = mix64((int(seed) + GAMMA) & _MASK)
    for k in keys:
        h = mix64(h ^ mix64(((int(k) + 1) * GAMMA) & _MASK))
    return h


def derive_many(seed, *keys, count):
    """Child seeds derive(seed, *keys, i) for i in range(count), as uint64 array."""
    base = derive(seed, *keys)
    out = np.empty(count, dtype=np.uint64)
    for i in range(count):
        out[i] = mix64(base ^ mix64(((i + 1) * GAMMA) & _MASK))
    return out


class Rng:
    """One sequentially-consumed stream: a seed plus an output cursor."""

    __slots__ = ("seed", "cursor")

    def __init__(self, seed, cursor=0):
        self.seed = int(seed) & _MASK
        self.cursor = int(cursor)

    def spawn(self, *keys):
        """Fresh child stream; does not consume from this one."""
        return Rng(derive(self.seed, *keys))

    def outputs(self, n):
        o = _K.splitmix_outputs(np.uint64(self.seed), self.cursor, int(n))
        self.cursor += int(n)
        return o

    def uniforms(self, n):
        u = _K.uniforms(np.uint64(self.seed), self.cursor, int(n))
        self.cursor += int(n)
        return u

    def normals(self, n):
        z = _K.normals(np.uint64(self.seed), self.cursor, int(n))
        self.cursor += 2 * ((int(n) + 1) // 2)
        return z

    def normal_matrix(self, rows, cols):
        return self.normals(rows * cols).reshape(rows, cols)

    def permutation(self, n):
        """Fisher-Yates shuffle of range(n); consumes n-1 uniforms.

        Swap index for position i is floor(u*(i+1)), i from n-1 down to 1.
        """
        perm = np.arange(n, dtype=np.int64)
        if n < 2:
            return perm
        u = self.uniforms(n - 1)
        for k, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[k] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


class RowStreams:
    """Per-row counter streams sharing one cursor; rows never interact.

    Used for per-sample draws inside a batch: row r comes from seeds[r], so
    values do not depend on how rows are grouped into chunks or threads.
    """

    __slots__ = ("seeds", "cursor")

    def __init__(self, seeds, cursor=0):
        self.seeds = np.ascontiguousarray(seeds, dtype=np.uint64)
        self.cursor = int(cursor)

    def __len__(self):
        return len(self.seeds)

    def select(self, idx):
        """Sub-view over rows idx, keeping the shared cursor."""
        return RowStreams(self.seeds[idx], self.cursor)

    def uniforms(self, n):
        u = _K.uniforms_rows(self.seeds, self.cursor, int(n))
        self.cursor += int(n)
        return u

    def normals(self, n):
        z = _K.normals_rows(self.seeds, self.cursor, int(n))
        self.cursor += 2 * ((int(n) + 1) // 2)
        return z
