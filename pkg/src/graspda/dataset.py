"""Dual-domain dataset assembly and its on-disk format.

Directory layout::

    manifest.json              schema version, config echo, scene index
    scene_<id>.bin             '<f4' C x H x W, rgb channels then depth
    scene_<id>.labels.json     list of grasp dicts
    scene_<id>.mask.bin        uint8 H x W instance ids (0 = table)
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import GraspRect
from .scenes import DEFAULT_SHIFT, Domain, Scene, SceneConfig, ShiftKnobs, generate_scene

SCHEMA_VERSION = 1
LABEL_CONVENTION = {"sim": 1.0, "real": 0.0}
SPLITS = ("sim_train", "real_train", "real_eval")


class DatasetError(ValueError):
    """A dataset directory is missing or malformed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class DatasetConfig:
    seed: int = 0
    n_sim_train: int = 400
    n_real_train: int = 400
    n_real_eval: int = 100
    knobs: ShiftKnobs = DEFAULT_SHIFT
    scene: SceneConfig = field(default_factory=SceneConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        knobs = ShiftKnobs(**d.pop("knobs", {}))
        scene = SceneConfig(**d.pop("scene", {}))
        return cls(knobs=knobs, scene=scene, **d)


@dataclass
class Dataset:
    scenes: list[Scene]
    config: DatasetConfig

    def split(self, name: str) -> list[Scene]:
        return [s for s in self.scenes if s.meta.get("split") == name]

    @property
    def sim_train(self) -> list[Scene]:
        return self.split("sim_train")

    @property
    def real_train(self) -> list[Scene]:
        return self.split("real_train")

    @property
    def real_eval(self) -> list[Scene]:
        return self.split("real_eval")


def scene_seed(global_seed: int, split: str, index: int) -> int:
    ss = np.random.SeedSequence([global_seed, SPLITS.index(split), index])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def build_dataset(cfg: DatasetConfig | None = None) -> Dataset:
    """Generate every split; a pure function of ``cfg``.

    Real training scenes have their labels stripped; only ``real_eval``
    keeps real-domain labels.
    """
    cfg = cfg or DatasetConfig()
    plan = [("sim_train", Domain.SIM, cfg.n_sim_train), ("real_train", Domain.REAL, cfg.n_real_train),
            ("real_eval", Domain.REAL, cfg.n_real_eval)]
    scenes = []
    for split, domain, count in plan:
        for i in range(count):
            sc = generate_scene(scene_seed(cfg.seed, split, i), domain, cfg.knobs, cfg=cfg.scene)
            sc.meta["split"] = split
            sc.meta["index"] = len(scenes)
            if split == "real_train":
                sc.grasps = []
            scenes.append(sc)
    return Dataset(scenes, cfg)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_dataset(dataset: Dataset, directory, run: dict | None = None) -> Path:
    """Write every scene plus ``manifest.json``; ``run`` is provenance stored under its own key."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    index = []
    for i, sc in enumerate(dataset.scenes):
        stem = f"scene_{i:05d}"
        arr = np.concatenate([sc.rgb, sc.depth], axis=0).astype("<f4")
        _atomic_write(directory / f"{stem}.bin", arr.tobytes())
        labels = json.dumps([g.to_dict() for g in sc.grasps], indent=0)
        _atomic_write(directory / f"{stem}.labels.json", labels.encode())
        entry = {"id": i, "file": f"{stem}.bin", "labels": f"{stem}.labels.json", "domain": sc.domain.value,
                 "seed": sc.seed, "channels": int(arr.shape[0]), "height": int(arr.shape[1]),
                 "width": int(arr.shape[2]), "meta": sc.meta}
        if sc.instance_mask is not None:
            _atomic_write(directory / f"{stem}.mask.bin", sc.instance_mask.astype(np.uint8).tobytes())
            entry["mask"] = f"{stem}.mask.bin"
        index.append(entry)
    manifest = {"schema_version": SCHEMA_VERSION, "domain_labels": LABEL_CONVENTION,
                "config": dataset.config.to_dict(), "scenes": index}
    if run is not None:
        manifest["run"] = run
    _atomic_write(directory / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
    return directory / "manifest.json"


def _require(d: dict, key: str, where: str, kind=None):
    if key not in d:
        raise DatasetError(f"{where}.{key}", "missing")
    if kind is not None and not isinstance(d[key], kind):
        raise DatasetError(f"{where}.{key}", f"expected {kind.__name__ if isinstance(kind, type) else kind}")
    return d[key]


def read_dataset(directory) -> Dataset:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.exists():
        raise DatasetError("manifest.json", f"not found in {directory}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError("manifest.json", f"invalid JSON ({exc})") from None
    version = _require(manifest, "schema_version", "manifest", int)
    if version != SCHEMA_VERSION:
        raise DatasetError("manifest.schema_version", f"unsupported version {version}")
    if _require(manifest, "domain_labels", "manifest", dict) != LABEL_CONVENTION:
        raise DatasetError("manifest.domain_labels", f"expected {LABEL_CONVENTION}")
    try:
        cfg = DatasetConfig.from_dict(_require(manifest, "config", "manifest", dict))
    except (TypeError, ValueError) as exc:
        raise DatasetError("manifest.config", str(exc)) from None
    scenes = []
    for k, entry in enumerate(_require(manifest, "scenes", "manifest", list)):
        where = f"manifest.scenes[{k}]"
        c, h, w = (_require(entry, key, where, int) for key in ("channels", "height", "width"))
        try:
            domain = Domain(_require(entry, "domain", where, str))
        except ValueError:
            raise DatasetError(f"{where}.domain", f"unknown domain {entry['domain']!r}") from None
        raw = np.frombuffer((directory / _require(entry, "file", where, str)).read_bytes(), dtype="<f4")
        if raw.size != c * h * w or c != 4:
            raise DatasetError(f"{where}.file", f"expected 4x{h}x{w} floats, found {raw.size}")
        arr = raw.reshape(c, h, w).astype(np.float32)
        grasps = [GraspRect.from_dict(g) for g in json.loads((directory / _require(entry, "labels", where, str)).read_text())]
        mask = None
        if "mask" in entry:
            mask = np.frombuffer((directory / entry["mask"]).read_bytes(), dtype=np.uint8).reshape(h, w).copy()
        scenes.append(Scene(arr[:3].copy(), arr[3:].copy(), grasps, domain, int(_require(entry, "seed", where, int)),
                            mask, dict(_require(entry, "meta", where, dict))))
    return Dataset(scenes, cfg)


def dataset_hash(directory) -> str:
    """Content hash over the manifest (minus run provenance) and every file it references."""
    directory = Path(directory)
    h = hashlib.sha256()
    manifest = json.loads((directory / "manifest.json").read_bytes())
    manifest.pop("run", None)
    h.update(json.dumps(manifest, sort_keys=True).encode())
    for entry in manifest["scenes"]:
        for key in ("file", "labels", "mask"):
            if key in entry:
                h.update((directory / entry[key]).read_bytes())
    return h.hexdigest()
