"""Checkpoint format: magic, config block, f32 parameter blob, 64-bit checksum.

Layout, all little-endian:

    bytes 0..4   magic "ELAN1"
    config       num_blocks, channels, K, K window sizes, K group widths,
                 heads, share_depth, scale, expansion  (uint32 each)
    blob length  uint64, always 4 * count_params(config)
    blob         every stored scalar as float32, in iter_arrays order
    checksum     uint64 FNV-1a over the blob bytes

The deterministic enumeration doubles as the parameter-count oracle.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .model import ElanConfig, ElanWeights, build, count_params, iter_arrays
from .ops import GmsaConfig

MAGIC = b"ELAN1"


class CheckpointError(Exception):
    """Base class for checkpoint failures."""


class BadMagicError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def checksum64(data: bytes) -> int:
    """64-bit blob checksum (blake2b truncated digest)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _pack_config(cfg: ElanConfig) -> bytes:
    k = cfg.gmsa.num_groups
    vals = [cfg.num_blocks, cfg.channels, k]
    vals += list(cfg.gmsa.window_sizes)
    vals += list(cfg.gmsa.group_channels)
    vals += [cfg.gmsa.heads_per_group, cfg.share_depth, cfg.scale, cfg.expansion]
    return struct.pack(f"<{len(vals)}I", *vals)


def _unpack_config(buf: bytes, pos: int) -> tuple[ElanConfig, int]:
    def take(n):
        nonlocal pos
        if pos + 4 * n > len(buf):
            raise TruncatedError("checkpoint ends inside the config block")
        vals = struct.unpack_from(f"<{n}I", buf, pos)
        pos += 4 * n
        return vals

    num_blocks, channels, k = take(3)
    windows = take(k)
    groups = take(k)
    heads, share_depth, scale, expansion = take(4)
    cfg = ElanConfig(
        num_blocks=num_blocks,
        channels=channels,
        gmsa=GmsaConfig(tuple(windows), tuple(groups), heads),
        share_depth=share_depth,
        scale=scale,
        expansion=expansion,
    )
    return cfg, pos


def save_checkpoint(w: ElanWeights, cfg: ElanConfig, path) -> None:
    """Serialize weights; load_checkpoint reproduces them bit-exactly for f32 models."""
    parts = [np.ascontiguousarray(arr, dtype="<f4").tobytes() for _, arr in iter_arrays(w)]
    blob = b"".join(parts)
    expected = 4 * count_params(cfg)
    if len(blob) != expected:
        raise CheckpointError(
            f"weights hold {len(blob) // 4} scalars but config counts {expected // 4}"
        )
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_pack_config(cfg))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", checksum64(blob)))


def load_checkpoint(path) -> tuple[ElanWeights, ElanConfig]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < len(MAGIC):
        raise TruncatedError("file shorter than the magic string")
    if buf[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}")
    cfg, pos = _unpack_config(buf, len(MAGIC))
    if pos + 8 > len(buf):
        raise TruncatedError("checkpoint ends before the blob length")
    (blob_len,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    expected = 4 * count_params(cfg)
    if blob_len != expected:
        raise CheckpointError(
            f"blob length {blob_len} does not match config ({expected} bytes)"
        )
    blob = buf[pos : pos + blob_len]
    if len(blob) != blob_len:
        raise TruncatedError(
            f"truncated blob: expected {blob_len} bytes, found {len(blob)}"
        )
    pos += blob_len
    if pos + 8 > len(buf):
        raise TruncatedError("checkpoint ends before the checksum")
    (stored,) = struct.unpack_from("<Q", buf, pos)
    actual = checksum64(blob)
    if stored != actual:
        raise ChecksumError(f"checksum mismatch: stored {stored:#x}, computed {actual:#x}")
    w = build(cfg, seed=0, dtype=np.float32)
    flat = np.frombuffer(blob, dtype="<f4")
    offset = 0
    for _, arr in iter_arrays(w):
        n = arr.size
        arr[...] = flat[offset : offset + n].reshape(arr.shape).astype(arr.dtype)
        offset += n
    return w, cfg
