"""Fixed word vectors: deterministic hashed fallback and sidecar files.

The sidecar format stores one vector per (document id, token index).
Text mode:  a header line ``emb-text DIM COUNT`` followed by records
``DOCID TOKEN v1 .. vDIM`` in decimal.  Binary mode: magic, a packed
header, then per-record a length-prefixed doc id, the token index, and
DIM little-endian float32 values.
"""

from __future__ import annotations

import hashlib
import re
import struct
from pathlib import Path

import numpy as np

from .corpus import Document
from .errors import DataError

_BIN_MAGIC = b"EMBBIN1\n"
_DESCRIPTOR = re.compile(r"^iv(\d+)x(\d+)$")


def hashed_vector(token: str, dim: int) -> np.ndarray:
    """Pseudo-random unit vector derived from the token string alone."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    seed = int.from_bytes(digest, "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(dim)
    norm = np.linalg.norm(v)
    if norm == 0.0:  # cannot happen in practice; keep the contract total
        v[0] = 1.0
        norm = 1.0
    return v / norm


class HashedEmbeddings:
    """Vector source that needs no file: hash of the token string."""

    def __init__(self, dim: int):
        if dim <= 0:
            raise DataError("embedding dimension must be positive")
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def vectors_for(self, doc: Document) -> np.ndarray:
        out = np.empty((len(doc.tokens), self.dim), dtype=np.float64)
        for k, tok in enumerate(doc.tokens):
            v = self._cache.get(tok)
            if v is None:
                v = hashed_vector(tok, self.dim)
                self._cache[tok] = v
            out[k] = v
        return out


class NumericEmbeddings:
    """Descriptor-aware vectors for interval-named tokens.

    A token shaped like ``iv3x7`` is embedded as two thermometer codes
    (start > k and end > k per integer threshold) plus scaled endpoint
    values; any other token falls back to the hashed source.  Endpoint
    comparisons, including exact equality, are linearly recoverable
    coordinate by coordinate, which makes clean synthetic corpora
    learnable to high accuracy and leaves corpus noise as the sole
    difficulty control.
    """

    _SCALE = 16.0   # largest representable endpoint

    def __init__(self, dim: int):
        # two thermometer halves covering endpoints up to 16, plus tail
        if (dim - 4) // 2 < 17:
            raise DataError("numeric embeddings need dimension >= 38")
        self.dim = dim
        self._levels = (dim - 4) // 2
        self._cache: dict[str, np.ndarray] = {}

    def _descriptor_vector(self, start: int, end: int) -> np.ndarray:
        v = np.zeros(self.dim)
        steps = np.arange(self._levels)
        v[:self._levels] = (start > steps).astype(float)
        v[self._levels:2 * self._levels] = (end > steps).astype(float)
        v[-4:] = (start / self._SCALE, end / self._SCALE,
                  (end - start) / self._SCALE, 1.0)
        return v

    def vectors_for(self, doc: Document) -> np.ndarray:
        out = np.empty((len(doc.tokens), self.dim), dtype=np.float64)
        for k, tok in enumerate(doc.tokens):
            v = self._cache.get(tok)
            if v is None:
                m = _DESCRIPTOR.match(tok)
                if m:
                    v = self._descriptor_vector(int(m.group(1)),
                                                int(m.group(2)))
                else:
                    v = hashed_vector(tok, self.dim)
                self._cache[tok] = v
            out[k] = v
        return out


class SidecarEmbeddings:
    """Vector source backed by a sidecar file keyed by (doc id, token)."""

    def __init__(self, dim: int, table: dict[tuple[str, int], np.ndarray]):
        self.dim = dim
        self.table = table

    def vectors_for(self, doc: Document) -> np.ndarray:
        out = np.empty((len(doc.tokens), self.dim), dtype=np.float64)
        for k in range(len(doc.tokens)):
            try:
                out[k] = self.table[(doc.id, k)]
            except KeyError:
                raise DataError(
                    f"sidecar has no vector for document {doc.id!r} token {k}"
                ) from None
        return out


def write_sidecar(table: dict[tuple[str, int], np.ndarray], dim: int,
                  path: str | Path, mode: str = "binary") -> None:
    items = list(table.items())
    if mode == "text":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"emb-text {dim} {len(items)}\n")
            for (doc_id, tok), vec in items:
                vals = " ".join(repr(float(np.float32(x))) for x in vec)
                fh.write(f"{doc_id} {tok} {vals}\n")
    elif mode == "binary":
        with open(path, "wb") as fh:
            fh.write(_BIN_MAGIC)
            fh.write(struct.pack("<II", dim, len(items)))
            for (doc_id, tok), vec in items:
                raw = doc_id.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", tok))
                fh.write(np.asarray(vec, dtype="<f4").tobytes())
    else:
        raise DataError(f"unknown sidecar mode {mode!r}")


def read_sidecar(path: str | Path) -> SidecarEmbeddings:
    """Load a sidecar file, auto-detecting text versus binary mode."""
    with open(path, "rb") as fh:
        head = fh.read(len(_BIN_MAGIC))
        if head == _BIN_MAGIC:
            return _read_binary(fh, path)
    return _read_text(path)


def _read_binary(fh, path) -> SidecarEmbeddings:
    def need(n: int, what: str) -> bytes:
        buf = fh.read(n)
        if len(buf) != n:
            raise DataError(f"{path}: truncated sidecar ({what})")
        return buf

    dim, count = struct.unpack("<II", need(8, "header"))
    table: dict[tuple[str, int], np.ndarray] = {}
    for i in range(count):
        (idlen,) = struct.unpack("<H", need(2, f"record {i}"))
        doc_id = need(idlen, f"record {i}").decode("utf-8")
        (tok,) = struct.unpack("<I", need(4, f"record {i}"))
        vec = np.frombuffer(need(4 * dim, f"record {i}"), dtype="<f4")
        table[(doc_id, tok)] = vec.astype(np.float64)
    return SidecarEmbeddings(dim=dim, table=table)


def _read_text(path) -> SidecarEmbeddings:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "emb-text":
            raise DataError(f"{path}: not a sidecar file (bad header)")
        try:
            dim, count = int(header[1]), int(header[2])
        except ValueError:
            raise DataError(f"{path}: bad sidecar header") from None
        table: dict[tuple[str, int], np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2 + dim:
                raise DataError(f"{path}:{lineno}: expected {2 + dim} fields")
            try:
                tok = int(parts[1])
                vec = np.array([float(x) for x in parts[2:]], dtype=np.float64)
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad numeric field") from None
            table[(parts[0], tok)] = vec
    if len(table) != count:
        raise DataError(f"{path}: header promises {count} records, found {len(table)}")
    return SidecarEmbeddings(dim=dim, table=table)


def resolve_embeddings(spec: str, dim: int):
    """Map the config value: ``hashed``, ``numeric``, or a sidecar path."""
    if spec == "hashed":
        return HashedEmbeddings(dim)
    if spec == "numeric":
        return NumericEmbeddings(dim)
    source = read_sidecar(spec)
    if source.dim != dim:
        raise DataError(
            f"sidecar dimension {source.dim} conflicts with configured {dim}"
        )
    return source
