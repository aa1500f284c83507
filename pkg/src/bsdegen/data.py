"""Dataset ingestion and image export.

Images travel in the IDX container (big-endian magic 0x00000803, three u32
extents, u8 pixels); pixels are normalized to [0, 1] by dividing by 255.
Generated samples leave as binary PGM (P5) with round-half-away-from-zero
quantization so output bytes are identical across platforms.
"""

import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803


class IdxFormatError(ValueError):
    """Malformed IDX container."""


@dataclass
class ImageDataset:
    count: int
    rows: int
    cols: int
    pixels: np.ndarray  # [count, rows*cols], float64 in [0, 1]

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("dataset must hold at least one image")
        expected = (self.count, self.rows * self.cols)
        if self.pixels.shape != expected:
            raise ValueError(f"pixels shaped {self.pixels.shape}, expected {expected}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")

    @property
    def dim(self):
        return self.rows * self.cols


def parse_idx_images(data):
    """Parse IDX image bytes into a normalized ImageDataset."""
    if len(data) < 4:
        raise IdxFormatError("shorter than the 4-byte magic")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise IdxFormatError(
            f"bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x} (u8 image file)"
        )
    if len(data) < 16:
        raise IdxFormatError("missing dimension fields (need 3 u32 extents)")
    count, rows, cols = struct.unpack_from(">III", data, 4)
    expected = 16 + count * rows * cols
    if len(data) != expected:
        raise IdxFormatError(
            f"payload length mismatch: {count}x{rows}x{cols} images need "
            f"{expected} bytes total, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype=np.uint8, offset=16)
    pixels = raw.astype(np.float64).reshape(count, rows * cols) / 255.0
    return ImageDataset(count=count, rows=rows, cols=cols, pixels=pixels)


def serialize_idx(dataset):
    """Inverse of parse_idx_images; byte-exact round trip."""
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, dataset.count, dataset.rows, dataset.cols)
    quantized = np.round(dataset.pixels * 255.0).astype(np.uint8)
    return header + quantized.tobytes()


def subset(dataset, n):
    """First n images."""
    if not 1 <= n <= dataset.count:
        raise ValueError(f"subset size {n} outside [1, {dataset.count}]")
    return ImageDataset(n, dataset.rows, dataset.cols, dataset.pixels[:n].copy())


def _area_weights(src, dst):
    """dst x src row-stochastic matrix averaging fractional source spans."""
    w = np.zeros((dst, src))
    ratio = src / dst
    for i in range(dst):
        lo, hi = i * ratio, (i + 1) * ratio
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                w[i, j] = overlap
    return w / ratio


def downsample_mean(dataset, rows, cols):
    """Area-mean resampling to rows x cols; values stay in [0, 1]."""
    wr = _area_weights(dataset.rows, rows)
    wc = _area_weights(dataset.cols, cols)
    imgs = dataset.pixels.reshape(dataset.count, dataset.rows, dataset.cols)
    out = np.einsum("rk,nkl,cl->nrc", wr, imgs, wc)
    out = np.clip(out, 0.0, 1.0)
    return ImageDataset(dataset.count, rows, cols, out.reshape(dataset.count, rows * cols))


def noisy_mix(images, alpha, rng):
    """alpha * images + (1 - alpha) * eps with fresh standard-normal eps.

    images may be one flat image or a [count, dim] batch; eps is drawn
    row-major over the whole array in one call.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    images = np.asarray(images, dtype=np.float64)
    eps = rng.normals(images.size).reshape(images.shape)
    return alpha * images + (1.0 - alpha) * eps


def batch_iter(dataset, batch_size, rng):
    """Endless index batches: per epoch, a seeded permutation chunked with drop-last."""
    if not 1 <= batch_size <= dataset.count:
        raise ValueError(f"batch size {batch_size} outside [1, {dataset.count}]")
    full = dataset.count - dataset.count % batch_size
    while True:
        perm = rng.permutation(dataset.count)
        for lo in range(0, full, batch_size):
            yield perm[lo : lo + batch_size]


def export_pgm(image, rows, cols):
    """Binary PGM bytes: clamp to [0,1], scale by 255, round half away from zero."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    if image.size != rows * cols:
        raise ValueError(f"image size {image.size} != {rows}x{cols}")
    level = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    return header + level.reshape(rows, cols).tobytes()
