"""Parameter checkpoints: a JSON manifest plus one raw little-endian float64 blob.

Layout for ``<stem>``::

    <stem>.json   {"format": "graspda-checkpoint/1", "tag": ..., "parameters":
                   [{"name", "shape", "offset"}...], "meta": {...}}
    <stem>.bin    concatenated row-major '<f8' arrays, in manifest order

Writes go to temporary names and are renamed into place.
"""
from __future__ import annotations

import json
import os
from collections import OrderedDict
from pathlib import Path

import numpy as np

FORMAT = "graspda-checkpoint/1"


def save_checkpoint(stem, arrays: dict[str, np.ndarray], tag: str, meta: dict | None = None) -> Path:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.size
    manifest = {"format": FORMAT, "tag": tag, "parameters": entries, "meta": meta or {}}
    bin_path, json_path = stem.with_suffix(".bin"), stem.with_suffix(".json")
    tmp_bin, tmp_json = bin_path.with_name(bin_path.name + ".tmp"), json_path.with_name(json_path.name + ".tmp")
    tmp_bin.write_bytes(b"".join(blobs))
    tmp_json.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(tmp_bin, bin_path)
    os.replace(tmp_json, json_path)
    return json_path


def load_checkpoint(stem) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    """Return (arrays, manifest)."""
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != FORMAT:
        raise ValueError(f"{stem}: unknown checkpoint format {manifest.get('format')!r}")
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
    arrays: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in manifest["parameters"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        off = entry["offset"]
        if off + n > flat.size:
            raise ValueError(f"{stem}: parameter {entry['name']!r} runs past the end of the blob")
        arrays[entry["name"]] = flat[off:off + n].reshape(entry["shape"]).astype(np.float64)
    return arrays, manifest
