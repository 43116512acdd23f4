"""Bit-stable persistence for matrices, datasets and dictionary bundles.

Two matrix carriers are provided: a small binary format (magic ``SPMX1\\n``,
explicit dimensions, column-major little-endian float64 payload) and a plain
CSV form with 17 significant digits so values round-trip exactly.  Bundles
pair a matrix file with a ``.manifest.json`` sidecar carrying labels,
geometry and a config hash.  See ``docs/formats.md`` for the byte-level
layout.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SPMX1\n"
SCHEMA_VERSION = 1
MANIFEST_KINDS = ("dataset", "dictionary", "model", "sweep")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = (1 << 64) - 1


class MatrixFormatError(ValueError):
    """Raised for malformed matrix files (bad magic, truncation, ...)."""


class BundleError(ValueError):
    """Raised for inconsistent bundle/manifest pairs."""


class StaleBundleError(BundleError):
    """Raised when a manifest's stored config hash does not match its config."""


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _U64
    return h


def canonical_json(obj) -> str:
    """Deterministic JSON used for config hashing (sorted keys, no spaces)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> int:
    """Hash of the canonical serialization of a config mapping."""
    return fnv1a64(canonical_json(config).encode("utf-8"))


def write_matrix(path, matrix) -> None:
    """Write a 2-D float array in the binary matrix format."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D array, got ndim={m.ndim}")
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.ascontiguousarray(m.T, dtype="<f8").tobytes())


def read_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 16:
        raise MatrixFormatError("truncated header")
    if raw[: len(MAGIC)] != MAGIC:
        raise MatrixFormatError("bad magic")
    rows, cols = struct.unpack_from("<QQ", raw, len(MAGIC))
    payload = raw[len(MAGIC) + 16 :]
    expected = rows * cols * 8
    if rows > (1 << 40) or cols > (1 << 40):
        raise MatrixFormatError("dimension overflow")
    if len(payload) != expected:
        raise MatrixFormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}"
        )
    flat = np.frombuffer(payload, dtype="<f8")
    return flat.reshape((cols, rows)).T.copy()


def write_csv_matrix(path, matrix) -> None:
    """Write a matrix as comma-separated decimal text (17 significant digits)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise MatrixFormatError(f"expected a 2-D array, got ndim={m.ndim}")
    with open(path, "w") as fh:
        for row in m:
            fh.write(",".join(format(v, ".17g") for v in row))
            fh.write("\n")


def read_csv_matrix(path) -> np.ndarray:
    """Read a CSV matrix, enforcing rectangular rows."""
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise MatrixFormatError(f"ragged row at line {lineno}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise MatrixFormatError(f"bad value at line {lineno}: {exc}") from exc
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def _validate_manifest(manifest: dict) -> None:
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise BundleError(f"unsupported schema version {manifest.get('schema_version')!r}")
    if manifest.get("kind") not in MANIFEST_KINDS:
        raise BundleError(f"unknown bundle kind {manifest.get('kind')!r}")
    cfg = manifest.get("config")
    stored = manifest.get("config_hash")
    if cfg is not None and stored is not None and config_hash(cfg) != stored:
        raise StaleBundleError("stale bundle: config hash mismatch")


def save_bundle(prefix, matrix, manifest: dict) -> None:
    """Write ``<prefix>.spmx`` plus ``<prefix>.manifest.json``.

    The manifest must carry ``kind`` plus whatever sidecar payload the kind
    needs; ``schema_version``, dimensions and (when a ``config`` mapping is
    present) ``config_hash`` are filled in here.
    """
    m = np.asarray(matrix, dtype=np.float64)
    manifest = dict(manifest)
    manifest.setdefault("schema_version", SCHEMA_VERSION)
    manifest["rows"], manifest["cols"] = m.shape
    if manifest.get("config") is not None:
        manifest["config_hash"] = config_hash(manifest["config"])
    _validate_manifest(manifest)
    prefix = str(prefix)
    write_matrix(prefix + ".spmx", m)
    with open(prefix + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_bundle(prefix) -> tuple[np.ndarray, dict]:
    """Load a bundle, verifying dimensions and the stored config hash."""
    prefix = str(prefix)
    matrix = read_matrix(prefix + ".spmx")
    with open(prefix + ".manifest.json") as fh:
        manifest = json.load(fh)
    _validate_manifest(manifest)
    if (manifest["rows"], manifest["cols"]) != matrix.shape:
        raise BundleError(
            f"manifest dimensions {(manifest['rows'], manifest['cols'])} "
            f"do not match matrix {matrix.shape}"
        )
    return matrix, manifest
