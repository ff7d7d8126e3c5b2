"""Embedding file formats and canonical JSON serialization.

Binary layout (little-endian throughout): 8-byte ASCII magic "IGAMEMB1",
u32 embedding dimension p, u64 record count, then per record a u32
category id followed by p IEEE-754 32-bit floats. The CSV alternative is
headered `category,e0,...,e{p-1}`; the JSON alternative mirrors the same
records as {"p": int, "records": [{"category": int, "vector": [...]}]}.

Embeddings are stored at 32-bit precision on disk regardless of in-memory
precision; readers promote to float64. Malformed binary input is reported
with the byte offset of the problem.

JSON emitted here is canonical: sorted keys, two-space indent, shortest
round-trip float formatting, no NaN/Infinity, trailing newline — so that
reading an emitted document and re-emitting it is byte-identical.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

__all__ = [
    "MAGIC",
    "read_embeddings",
    "write_embeddings",
    "read_embeddings_binary",
    "write_embeddings_binary",
    "read_embeddings_csv",
    "write_embeddings_csv",
    "read_embeddings_json",
    "write_embeddings_json",
    "detect_format",
    "canonical_dumps",
    "write_json",
    "read_json",
]

MAGIC = b"IGAMEMB1"
_HEADER = struct.Struct("<8sIQ")

FORMATS = ("bin", "csv", "json")

_EXTENSIONS = {".bin": "bin", ".csv": "csv", ".json": "json"}


def detect_format(path, fmt: str | None = None) -> str:
    """Resolve an embedding-file format from an explicit flag or extension."""
    if fmt is not None:
        if fmt not in FORMATS:
            raise InputError(f"format must be one of {FORMATS}, got {fmt!r}")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix in _EXTENSIONS:
        return _EXTENSIONS[suffix]
    raise InputError(
        f"cannot infer embedding format from {Path(path).name!r}; pass --format bin|csv|json"
    )


def _validate_arrays(X: np.ndarray, categories: np.ndarray, where: str):
    if X.ndim != 2:
        raise InputError(f"{where}: embeddings must be (n, p), got shape {X.shape}")
    if categories.shape != (X.shape[0],):
        raise InputError(
            f"{where}: {categories.shape[0]} categories for {X.shape[0]} records"
        )
    if not np.all(np.isfinite(X)):
        bad = int(np.argwhere(~np.isfinite(X).all(axis=1))[0, 0])
        raise InputError(f"{where}: non-finite coordinate in record {bad}")
    if np.any(categories < 0):
        bad = int(np.argmin(categories))
        raise InputError(f"{where}: negative category id in record {bad}")


def read_embeddings_binary(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a binary embedding file; returns (X float64 (n, p), categories int64)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(
            f"{path}: truncated header, {len(raw)} bytes at byte offset 0 "
            f"(need {_HEADER.size})"
        )
    magic, p, count = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r} at byte offset 0 (expected {MAGIC!r})")
    if p < 1:
        raise InputError(f"{path}: embedding dimension {p} at byte offset 8 must be >= 1")
    record_size = 4 + 4 * p
    expected = _HEADER.size + count * record_size
    if len(raw) != expected:
        raise InputError(
            f"{path}: declared {count} records of {record_size} bytes, expected file "
            f"size {expected}, got {len(raw)} (mismatch at byte offset "
            f"{min(expected, len(raw))})"
        )
    if count == 0:
        raise InputError(f"{path}: no records after the header")
    dtype = np.dtype([("category", "<u4"), ("vector", "<f4", (p,))])
    records = np.frombuffer(raw, dtype=dtype, count=count, offset=_HEADER.size)
    X = records["vector"].astype(np.float64)
    categories = records["category"].astype(np.int64)
    finite = np.isfinite(X).all(axis=1)
    if not finite.all():
        bad = int(np.argmin(finite))
        offset = _HEADER.size + bad * record_size + 4
        raise InputError(
            f"{path}: non-finite coordinate in record {bad} at byte offset {offset}"
        )
    return X, categories


def write_embeddings_binary(path, X: np.ndarray, categories: np.ndarray) -> None:
    X = np.asarray(X, dtype=np.float64)
    categories = np.asarray(categories, dtype=np.int64)
    _validate_arrays(X, categories, str(path))
    if np.any(categories > np.iinfo(np.uint32).max):
        raise InputError(f"{path}: category id exceeds the u32 range")
    n, p = X.shape
    dtype = np.dtype([("category", "<u4"), ("vector", "<f4", (p,))])
    records = np.empty(n, dtype=dtype)
    records["category"] = categories
    records["vector"] = X.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, p, n))
        fh.write(records.tobytes())


def _csv_header(p: int) -> list[str]:
    return ["category"] + [f"e{i}" for i in range(p)]


def read_embeddings_csv(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected a CSV header") from None
        p = len(header) - 1
        if p < 1 or header != _csv_header(p):
            raise InputError(
                f"{path}: line 1: bad header {header!r}, expected 'category,e0,...'"
            )
        cats, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 1:
                raise InputError(
                    f"{path}: line {lineno}: expected {p + 1} fields, got {len(row)}"
                )
            try:
                cat = int(row[0])
                vec = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from exc
            if cat < 0:
                raise InputError(f"{path}: line {lineno}: negative category id {cat}")
            if not all(np.isfinite(vec)):
                raise InputError(f"{path}: line {lineno}: non-finite coordinate")
            cats.append(cat)
            rows.append(vec)
    if not rows:
        raise InputError(f"{path}: no records after the header")
    return np.asarray(rows, dtype=np.float64), np.asarray(cats, dtype=np.int64)


def write_embeddings_csv(path, X: np.ndarray, categories: np.ndarray) -> None:
    X = np.asarray(X, dtype=np.float64)
    categories = np.asarray(categories, dtype=np.int64)
    _validate_arrays(X, categories, str(path))
    # Round-trip through the on-disk f32 precision so CSV and binary
    # encodings of the same data load identically.
    X32 = X.astype(np.float32)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(X.shape[1]))
        for cat, row in zip(categories, X32):
            writer.writerow([int(cat)] + [repr(float(v)) for v in row])


def read_embeddings_json(path) -> tuple[np.ndarray, np.ndarray]:
    doc = read_json(path)
    try:
        p = int(doc["p"])
        entries = doc["records"]
        cats = [int(r["category"]) for r in entries]
        rows = [r["vector"] for r in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed embedding document: {exc}") from exc
    if not entries:
        raise InputError(f"{path}: no records")
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p:
        raise InputError(f"{path}: vectors do not all have declared length p={p}")
    categories = np.asarray(cats, dtype=np.int64)
    _validate_arrays(X, categories, str(path))
    return X, categories


def write_embeddings_json(path, X: np.ndarray, categories: np.ndarray) -> None:
    X = np.asarray(X, dtype=np.float64)
    categories = np.asarray(categories, dtype=np.int64)
    _validate_arrays(X, categories, str(path))
    X32 = X.astype(np.float32)
    doc = {
        "p": int(X.shape[1]),
        "records": [
            {"category": int(cat), "vector": [float(v) for v in row]}
            for cat, row in zip(categories, X32)
        ],
    }
    write_json(path, doc)


_READERS = {
    "bin": read_embeddings_binary,
    "csv": read_embeddings_csv,
    "json": read_embeddings_json,
}
_WRITERS = {
    "bin": write_embeddings_binary,
    "csv": write_embeddings_csv,
    "json": write_embeddings_json,
}


def read_embeddings(path, fmt: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Read (X, categories) from any supported embedding format."""
    return _READERS[detect_format(path, fmt)](path)


def write_embeddings(path, X: np.ndarray, categories: np.ndarray, fmt: str | None = None) -> None:
    _WRITERS[detect_format(path, fmt)](path, X, categories)


def canonical_dumps(obj) -> str:
    """Deterministic JSON: sorted keys, 2-space indent, shortest-round-trip floats."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(canonical_dumps(obj))


def read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror or exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
                         f"{exc.msg}") from exc
