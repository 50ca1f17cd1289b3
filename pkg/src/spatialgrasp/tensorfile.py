"""Flat little-endian float64 tensor files with a JSON sidecar.

``save_tensors("p.bin", {...}, kind="denoiser", config={...})`` writes the
concatenated C-order payload to ``p.bin`` and a sidecar ``p.json``::

    {"format": "spatialgrasp-tensors", "version": 1, "kind": "denoiser",
     "config": {...},
     "tensors": [{"name": "w1", "shape": [64, 82], "offset": 0}, ...]}

``offset`` counts float64 elements, not bytes.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import FormatError

FORMAT_NAME = "spatialgrasp-tensors"


def sidecar_path(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".json")


def save_tensors(path: str | os.PathLike, tensors: dict[str, np.ndarray], *, kind: str, config: dict) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.ravel().tobytes())
        offset += a.size
    meta = {"format": FORMAT_NAME, "version": 1, "kind": kind, "config": config, "tensors": entries}
    Path(path).write_bytes(b"".join(chunks))
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_tensors(path: str | os.PathLike, *, kind: str | None = None) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, config)``; raises FormatError on any inconsistency."""
    try:
        meta = json.loads(sidecar_path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable tensor sidecar for {path}: {exc}") from exc
    if meta.get("format") != FORMAT_NAME:
        raise FormatError(f"sidecar format is {meta.get('format')!r}, expected {FORMAT_NAME!r}")
    if kind is not None and meta.get("kind") != kind:
        raise FormatError(f"tensor file holds {meta.get('kind')!r} parameters, expected {kind!r}")
    data = Path(path).read_bytes()
    if len(data) % 8:
        raise FormatError("payload length is not a multiple of 8 bytes", len(data))
    flat = np.frombuffer(data, dtype="<f8")
    tensors = {}
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        start = entry["offset"]
        stop = start + int(np.prod(shape, dtype=np.int64))
        if stop > flat.size:
            raise FormatError(f"tensor {entry['name']!r} runs past end of payload", 8 * flat.size)
        tensors[entry["name"]] = flat[start:stop].astype(np.float64).reshape(shape)
    return tensors, meta.get("config", {})
