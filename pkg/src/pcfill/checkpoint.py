"""Binary checkpoint format.

Little-endian layout:

    magic "PCCK" | u32 format version
    u32 config length   | config text (the canonical key = value rendering)
    u32 rng length      | training RNG state as JSON (sorted keys)
    u32 entry count
    per entry: u16 name length, name, u8 dtype code, u8 ndim, u32 per dim,
               u64 payload offset
    payload bytes, entries packed in table order

Entry names are sorted before writing and offsets are assigned greedily, so
identical (config, rng, arrays) always serialize to identical bytes.
"""

import json
import struct
from pathlib import Path

import numpy as np

from . import config as config_mod

MAGIC = b"PCCK"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("<i8"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(Exception):
    pass


def save_checkpoint(path, cfg, arrays, rng_state=None):
    """Write config + named arrays (+ optional RNG state dict) to path."""
    cfg_bytes = config_mod.to_text(cfg).encode()
    rng_bytes = json.dumps(rng_state or {}, sort_keys=True).encode()
    names = sorted(arrays)
    table = []
    payload = bytearray()
    for name in names:
        arr = np.asarray(arrays[name])
        if arr.ndim:  # ascontiguousarray would turn 0-d into 1-d
            arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointError(
                f"entry '{name}': dtype {arr.dtype} not storable "
                "(float32, float64 and int64 only)")
        table.append((name, _DTYPE_CODES[dt], arr.shape, len(payload)))
        payload.extend(arr.astype(dt, copy=False).tobytes())

    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", FORMAT_VERSION)
    blob += struct.pack("<I", len(cfg_bytes)) + cfg_bytes
    blob += struct.pack("<I", len(rng_bytes)) + rng_bytes
    blob += struct.pack("<I", len(table))
    for name, code, shape, offset in table:
        nb = name.encode()
        blob += struct.pack("<H", len(nb)) + nb
        blob += struct.pack("<BB", code, len(shape))
        blob += struct.pack(f"<{len(shape)}I", *shape)
        blob += struct.pack("<Q", offset)
    blob += payload
    Path(path).write_bytes(bytes(blob))


class _Reader:
    def __init__(self, raw, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated while reading {what}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path):
    """Read a checkpoint; returns (config, arrays dict, rng state dict)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    r = _Reader(raw, path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (clen,) = r.unpack("<I", "config length")
    try:
        cfg = config_mod.from_text(r.take(clen, "config").decode())
    except Exception as exc:
        raise CheckpointError(f"{path}: embedded config invalid: {exc}") from None
    (rlen,) = r.unpack("<I", "rng length")
    rng_state = json.loads(r.take(rlen, "rng state").decode())
    (count,) = r.unpack("<I", "entry count")
    table = []
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "name").decode()
        code, ndim = r.unpack("<BB", "dtype/ndim")
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"{path}: entry '{name}' has unknown "
                                  f"dtype code {code}")
        shape = r.unpack(f"<{ndim}I", "shape") if ndim else ()
        (offset,) = r.unpack("<Q", "offset")
        table.append((name, code, shape, offset))
    base = r.pos
    arrays = {}
    for name, code, shape, offset in table:
        dt = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize if shape \
            else dt.itemsize
        start = base + offset
        if start + nbytes > len(raw):
            raise CheckpointError(f"{path}: entry '{name}' payload truncated")
        arrays[name] = np.frombuffer(
            raw[start:start + nbytes], dtype=dt).reshape(shape).copy()
    return cfg, arrays, rng_state
