"""Binary persistence for row-per-document matrices.

Layout: ``magic(4s) version(u16) stage(u8) n(u64) dim(u64) provider_len(u16)``, the
UTF-8 provider id, the 32-byte corpus hash, then ``n * dim`` little-endian
``float32`` values in row-major order. Document ids are kept in the JSON sidecar
``<path>.ids.json``.
"""
from __future__ import annotations
import json
import struct
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
import torch

__all__ = ["StoredMatrix", "save_matrix", "load_matrix"]

MAGIC = b"STMX"
FORMAT_VERSION = 1
STAGES = ("embed", "reduce")
_HEADER = struct.Struct("<4sHBQQH")


class StoredMatrix(NamedTuple):
    doc_ids: tuple[str, ...]
    rows: torch.Tensor
    provider_id: str
    corpus_hash: str
    stage: str


def save_matrix(
    path: str | Path,
    doc_ids: Sequence[str],
    rows: torch.Tensor,
    provider_id: str,
    corpus_hash: str = "",
    stage: str = "embed",
) -> Path:
    """Writes ``rows`` (cast to ``float32``) with its ids and provenance.

    Raises:
        ValueError: If the row count and id count differ, or ``stage`` is unknown.
    """
    if stage not in STAGES:
        raise ValueError(f"Unknown matrix stage '{stage}'; use one of {STAGES}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(rows.detach().cpu().numpy().astype("<f4"))
    n, dim = data.shape
    if n != len(doc_ids):
        raise ValueError(f"{n} rows but {len(doc_ids)} document ids")
    provider = provider_id.encode("utf-8")
    digest = bytes.fromhex(corpus_hash) if corpus_hash else bytes(32)

    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, STAGES.index(stage), n, dim, len(provider)))
        f.write(provider)
        f.write(digest)
        f.write(data.tobytes())
    Path(f"{path}.ids.json").write_text(json.dumps(list(doc_ids)), encoding="utf-8")
    return path


def load_matrix(path: str | Path) -> StoredMatrix:
    """Reads a matrix written by :func:`save_matrix`.

    Raises:
        ValueError: If the file is not a matrix file or has another version.
    """
    path = Path(path)
    raw = path.read_bytes()
    magic, version, stage, n, dim, plen = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path} is not a sumtopic matrix file")
    if version != FORMAT_VERSION:
        raise ValueError(f"Unsupported matrix format version {version}")
    offset = _HEADER.size
    provider_id = raw[offset : offset + plen].decode("utf-8")
    offset += plen
    digest = raw[offset : offset + 32]
    offset += 32
    data = np.frombuffer(raw, dtype="<f4", count=n * dim, offset=offset).reshape(n, dim)
    doc_ids = tuple(json.loads(Path(f"{path}.ids.json").read_text(encoding="utf-8")))
    return StoredMatrix(
        doc_ids=doc_ids,
        rows=torch.from_numpy(data.astype(np.float32)),
        provider_id=provider_id,
        corpus_hash=digest.hex() if any(digest) else "",
        stage=STAGES[stage],
    )
