"""Versioned, checksummed model checkpoints.

Layout: an ascii magic+version line, a 4-byte little-endian header
length, a JSON header (scheme name, config snapshot, tensor directory
with shapes/dtypes/offsets), the concatenated row-major tensor bytes,
and a trailing sha256 over everything before it.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, ModelParams

_MAGIC = b"TRELCKPT v1\n"


def save_checkpoint(params: ModelParams, path: str | Path, scheme_name: str,
                    extra: dict | None = None) -> None:
    names = sorted(params.tensors)
    directory = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        raw = arr.tobytes()
        directory.append({"name": name, "shape": list(arr.shape),
                          "dtype": "<f8", "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "scheme": scheme_name,
        "model_config": params.config.to_dict(),
        "extra": extra or {},
        "tensors": directory,
    }
    head_raw = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _MAGIC + struct.pack("<I", len(head_raw)) + head_raw + b"".join(blobs)
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path: str | Path, expect_scheme: str | None = None
                    ) -> tuple[ModelParams, dict]:
    """Read a checkpoint; returns (params, header extra dict)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not raw.startswith(b"TRELCKPT"):
        raise CheckpointError(f"{path}: not a checkpoint file")
    if not raw.startswith(_MAGIC):
        got = raw.split(b"\n", 1)[0].decode("ascii", "replace")
        want = _MAGIC.strip().decode("ascii")
        raise CheckpointError(f"{path}: version mismatch ({got!r}, need {want!r})")
    if len(raw) < len(_MAGIC) + 4 + 32:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch (corrupt or truncated)")
    pos = len(_MAGIC)
    (head_len,) = struct.unpack("<I", body[pos:pos + 4])
    pos += 4
    try:
        header = json.loads(body[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad header ({exc})") from exc
    pos += head_len
    if expect_scheme is not None and header["scheme"] != expect_scheme:
        raise CheckpointError(
            f"{path}: checkpoint was trained under scheme "
            f"{header['scheme']!r}, requested {expect_scheme!r}"
        )
    tensors = {}
    blob = body[pos:]
    for entry in header["tensors"]:
        lo = entry["offset"]
        hi = lo + entry["nbytes"]
        if hi > len(blob):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} out of range")
        arr = np.frombuffer(blob[lo:hi], dtype=entry["dtype"]).astype(np.float64)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    config = ModelConfig(**header["model_config"])
    return ModelParams(config=config, tensors=tensors), header.get("extra", {})
