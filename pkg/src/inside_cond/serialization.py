"""On-disk formats: TNSR tensors, checkpoint directories, PGM heatmaps."""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"TNSR"


def write_tensor(path, array):
    """Write an array as little-endian TNSR: magic, u32 rank, u32 extents, f32 data."""
    array = np.asarray(array.data if isinstance(array, Tensor) else array)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def read_tensor(path):
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a TNSR file")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        data = np.frombuffer(fh.read(), dtype="<f4").reshape(shape)
    return np.array(data)


def save_checkpoint(directory, weights, config_hash=""):
    """Write named tensors plus a manifest (names, shapes, config hash)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": config_hash, "tensors": {}}
    for name, tensor in weights.items():
        fname = name.replace("/", "__") + ".tnsr"
        write_tensor(directory / fname, tensor)
        manifest["tensors"][name] = {
            "file": fname,
            "shape": list(np.asarray(tensor.data if isinstance(tensor, Tensor) else tensor).shape),
        }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory):
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    weights = {}
    for name, entry in manifest["tensors"].items():
        weights[name] = read_tensor(directory / entry["file"])
    return weights, manifest


def write_pgm(path, array):
    """8-bit max-normalized PGM plus a raw float32 sidecar (<path>.f32)."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2:
        raise ValueError(f"PGM export expects a 2-D map, got shape {array.shape}")
    peak = array.max()
    scaled = np.zeros_like(array) if peak <= 0 else array / peak
    byte = np.round(scaled * 255).astype(np.uint8)
    h, w = array.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(byte.tobytes())
    with open(str(path) + ".f32", "wb") as fh:
        fh.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def content_hash(path):
    """Stable hash of a file tree (relative names + bytes)."""
    path = Path(path)
    digest = hashlib.sha256()
    if path.is_file():
        digest.update(path.read_bytes())
    else:
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(sub.relative_to(path)).encode())
            digest.update(sub.read_bytes())
    return digest.hexdigest()
