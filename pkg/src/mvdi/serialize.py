"""Binary container formats.

Block files hold model-like artifacts (CNN checkpoints, PCA and SVM
models): an 8-byte magic, a little-endian uint32 version, a uint32
JSON-header length, the UTF-8 JSON header (which records each block's
shape), then the raw parameter blocks as little-endian 64-bit floats in
declaration order. Feature files are a (n, d) little-endian uint64
header followed by row-major 64-bit floats. All round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"MVDIBLK\x00"
VERSION = 1


def write_blocks(path, meta: dict, blocks: list[np.ndarray]) -> None:
    meta = dict(meta)
    meta["shapes"] = [list(np.asarray(b).shape) for b in blocks]
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def read_blocks(path) -> tuple[dict, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DataError(f"{path}: not a block file")
    version, header_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported block-file version {version}")
    header_end = 16 + header_len
    meta = json.loads(data[16:header_end].decode("utf-8"))
    blocks = []
    offset = header_end
    for shape in meta["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(data):
            raise DataError(f"{path}: truncated block data")
        block = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        blocks.append(block.reshape(shape).astype(np.float64))
        offset += nbytes
    return meta, blocks


def write_features(path, features: np.ndarray) -> None:
    """Feature matrix file: uint64 (n, d) header + row-major float64."""
    features = np.ascontiguousarray(features, dtype="<f8")
    if features.ndim != 2:
        raise ValueError("features must be a 2-D (n, d) matrix")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", features.shape[0], features.shape[1]))
        fh.write(features.tobytes())


def read_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise DataError(f"{path}: truncated feature file")
    n, d = struct.unpack_from("<QQ", data, 0)
    expected = 16 + n * d * 8
    if len(data) != expected:
        raise DataError(f"{path}: feature file size mismatch")
    return np.frombuffer(data, dtype="<f8", offset=16).reshape(n, d).astype(np.float64)


def write_ranking_vector(path, u: np.ndarray, width: int, height: int) -> None:
    """Raw pooled vector: uint32 (width, height) prefix + float64 entries,
    all little-endian; for external oracle tooling."""
    u = np.ascontiguousarray(u, dtype="<f8").ravel()
    if u.size != width * height:
        raise ValueError("vector length does not match width*height")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", width, height))
        fh.write(u.tobytes())


def read_ranking_vector(path) -> tuple[np.ndarray, int, int]:
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise DataError(f"{path}: truncated vector file")
    width, height = struct.unpack_from("<II", data, 0)
    expected = 8 + width * height * 8
    if len(data) != expected:
        raise DataError(f"{path}: vector file size mismatch")
    u = np.frombuffer(data, dtype="<f8", offset=8).astype(np.float64)
    return u, width, height
