"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  b"BSDG"
    version u32      currently 1
    hlen    u32      byte length of the JSON header
    header  hlen bytes of UTF-8 JSON:
            {"configs": {...}, "train_meta": {...},
             "params": [{"name": str, "shape": [int, ...]}, ...]}
    payload raw little-endian float64 arrays, concatenated in header order

Round-tripping parameters is bit-exact. Malformed inputs raise a distinct
error per failure mode so callers can tell a wrong file apart from a
truncated one.
"""

import json
import struct

import numpy as np

MAGIC = b"BSDG"
VERSION = 1


class CheckpointError(ValueError):
    """Base class for malformed checkpoint data."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class HeaderMismatchError(CheckpointError):
    pass


def save_checkpoint(configs, train_meta, params):
    """Serialize (configs, train_meta, [(name, array), ...]) to bytes."""
    entries = []
    blobs = []
    for name, arr in params:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        entries.append({"name": str(name), "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8", copy=False).tobytes())
    header = json.dumps(
        {"configs": configs, "train_meta": train_meta, "params": entries},
        sort_keys=True,
    ).encode("utf-8")
    return b"".join(
        [MAGIC, struct.pack("<II", VERSION, len(header)), header, *blobs]
    )


def load_checkpoint(data):
    """Parse checkpoint bytes into (configs, train_meta, {name: array})."""
    if len(data) < 4:
        raise TruncatedCheckpointError("shorter than the 4-byte magic")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    if len(data) < 12:
        raise TruncatedCheckpointError("missing version/header-length fields")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise UnsupportedVersionError(f"format version {version}, expected {VERSION}")
    if len(data) < 12 + hlen:
        raise TruncatedCheckpointError(
            f"header declares {hlen} bytes, only {len(data) - 12} present"
        )
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderMismatchError(f"header is not valid JSON: {exc}") from exc
    for key in ("configs", "train_meta", "params"):
        if key not in header:
            raise HeaderMismatchError(f"header missing {key!r}")
    offset = 12 + hlen
    params = {}
    for entry in header["params"]:
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
        except (KeyError, TypeError, ValueError) as exc:
            raise HeaderMismatchError(f"malformed parameter entry {entry!r}") from exc
        count = 1
        for s in shape:
            if s < 0:
                raise HeaderMismatchError(f"negative extent in shape {shape}")
            count *= s
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise TruncatedCheckpointError(
                f"parameter {name!r} declares {count} floats, payload runs out"
            )
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        params[name] = arr.astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(data):
        raise HeaderMismatchError(f"{len(data) - offset} trailing bytes after payload")
    return header["configs"], header["train_meta"], params
