"""Manifest + flat binary container shared by checkpoints and datasets.

A container named ``stem`` is two files: ``stem.json`` (names, shapes,
dtypes, byte offsets, plus free-form metadata) and ``stem.bin`` (the
little-endian payloads concatenated in manifest order). Output is a pure
function of the inputs, so identical arrays and metadata give identical
bytes.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

FORMAT = "edgevtp-container"
VERSION = 1

_DTYPES = {"f64": "<f8", "f32": "<f4", "i64": "<i8"}
_NAMES = {np.dtype("<f8"): "f64", np.dtype("<f4"): "f32", np.dtype("<i8"): "i64"}


class ContainerError(ValueError):
    """Malformed or mismatched container files."""


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


def save(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> Path:
    """Write ``arrays`` (in mapping order) and ``meta``; returns the manifest path."""
    manifest_path, payload_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    with open(payload_path, "wb") as fh:
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype.kind == "f":
                arr = arr.astype("<f4" if arr.dtype.itemsize == 4 else "<f8", copy=False)
            elif arr.dtype.kind in "iub":
                arr = arr.astype("<i8", copy=False)
            else:
                raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
            raw = np.ascontiguousarray(arr).tobytes()
            fh.write(raw)
            entries.append({
                "name": name,
                "shape": list(arr.shape),
                "dtype": _NAMES[arr.dtype],
                "offset": offset,
                "nbytes": len(raw),
            })
            offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "payload": payload_path.name,
        "tensors": entries,
        "meta": dict(meta or {}),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back as ``(arrays, meta)``."""
    manifest_path, payload_path = _paths(path)
    if not manifest_path.exists():
        raise ContainerError(f"no manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != FORMAT:
        raise ContainerError(f"{manifest_path} is not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise ContainerError(f"unsupported container version {manifest.get('version')}")
    blob = payload_path.read_bytes()
    arrays = {}
    for e in manifest["tensors"]:
        dt = np.dtype(_DTYPES[e["dtype"]])
        end = e["offset"] + e["nbytes"]
        if end > len(blob):
            raise ContainerError(f"payload truncated while reading {e['name']!r}")
        arr = np.frombuffer(blob[e["offset"]:end], dtype=dt).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
    return arrays, manifest["meta"]


def manifest_path(path) -> Path:
    return _paths(path)[0]
