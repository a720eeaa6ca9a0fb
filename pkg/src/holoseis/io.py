"""Binary and JSON file formats shared across the package.

Two binary formats, both little-endian:

grid-matrix file (complex128 arrays, any rank)
    bytes 0..11   magic  b"HOLOSEISGRID"
    bytes 12..15  u32    format version (currently 1)
    u64           rank
    u64 * rank    dimensions
    payload       row-major complex128

realization archive (per-frequency surface wavefield samples)
    bytes 0..11   magic  b"HOLOSEISRLZN"
    bytes 12..15  u32    format version (currently 1)
    32 bytes      sha256 digest of the grid
    f64           angular frequency omega
    u64           N realizations
    u64           base RNG seed
    u64           receiver count
    payload       (N, n_rec) row-major complex128

Everything can be re-derived from (config, seed); archives exist so expensive
syntheses can be shared between the synth / hologram / invert stages.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import UsageError

MATRIX_MAGIC = b"HOLOSEISGRID"
ARCHIVE_MAGIC = b"HOLOSEISRLZN"
FORMAT_VERSION = 1

__all__ = [
    "write_matrix",
    "read_matrix",
    "RealizationArchive",
    "write_realizations",
    "read_realizations",
    "write_manifest",
    "config_hash",
    "write_csv",
]


def write_matrix(path, array: np.ndarray) -> None:
    """Write a complex array in the binary grid-matrix format."""
    arr = np.ascontiguousarray(array, dtype=np.complex128)
    with open(path, "wb") as f:
        f.write(MATRIX_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<Q", d))
        f.write(arr.tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a binary grid-matrix file back into a complex128 array."""
    with open(path, "rb") as f:
        magic = f.read(12)
        if magic != MATRIX_MAGIC:
            raise UsageError(f"{path}: not a grid-matrix file (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise UsageError(f"{path}: unsupported version {version}")
        (rank,) = struct.unpack("<Q", f.read(8))
        shape = struct.unpack("<" + "Q" * rank, f.read(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(f.read(16 * count), dtype=np.complex128)
        if data.size != count:
            raise UsageError(f"{path}: truncated payload")
        return data.reshape(shape).copy()


@dataclass
class RealizationArchive:
    """Header + sample block of one per-frequency realization archive."""

    grid_hash: str
    omega: float
    n_realizations: int
    seed: int
    fields: np.ndarray  # (N, n_rec) complex128


def write_realizations(
    path,
    fields: np.ndarray,
    grid_hash: str,
    omega: float,
    seed: int,
) -> None:
    arr = np.ascontiguousarray(fields, dtype=np.complex128)
    if arr.ndim != 2:
        raise UsageError("realization block must be (N, n_receivers)")
    digest = bytes.fromhex(grid_hash)
    if len(digest) != 32:
        raise UsageError("grid_hash must be a sha256 hex digest")
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(digest)
        f.write(struct.pack("<d", float(omega)))
        f.write(struct.pack("<Q", arr.shape[0]))
        f.write(struct.pack("<Q", int(seed)))
        f.write(struct.pack("<Q", arr.shape[1]))
        f.write(arr.tobytes())


def read_realizations(path) -> RealizationArchive:
    with open(path, "rb") as f:
        magic = f.read(12)
        if magic != ARCHIVE_MAGIC:
            raise UsageError(f"{path}: not a realization archive (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != FORMAT_VERSION:
            raise UsageError(f"{path}: unsupported version {version}")
        digest = f.read(32)
        (omega,) = struct.unpack("<d", f.read(8))
        (n_real,) = struct.unpack("<Q", f.read(8))
        (seed,) = struct.unpack("<Q", f.read(8))
        (n_rec,) = struct.unpack("<Q", f.read(8))
        data = np.frombuffer(f.read(16 * n_real * n_rec), dtype=np.complex128)
        if data.size != n_real * n_rec:
            raise UsageError(f"{path}: truncated payload")
        return RealizationArchive(
            grid_hash=digest.hex(),
            omega=omega,
            n_realizations=n_real,
            seed=seed,
            fields=data.reshape(n_real, n_rec).copy(),
        )


def config_hash(config: dict) -> str:
    """Stable hash of a JSON-serializable configuration document."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, config: dict, outputs: Sequence[str], extra: Optional[dict] = None) -> None:
    """Run manifest: config + hash + produced files, enough to reproduce."""
    from . import __version__

    doc = {
        "config": config,
        "config_hash": config_hash(config),
        "package_version": __version__,
        "outputs": list(outputs),
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True))


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
