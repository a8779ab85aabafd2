"""Run configuration: one JSON document with dataset, network, training and ablation sections.

Validated against :data:`SCHEMA`; unknown keys anywhere are rejected.
"""
from __future__ import annotations

import copy
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .dataset import DatasetConfig
from .detector import NetConfig
from .scenes import DEFAULT_SHIFT, SceneConfig, ShiftKnobs
from .trainer import FLAGS, VARIANTS, TrainConfig


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_NONNEG = {"type": "number", "minimum": 0}
_INT = {"type": "integer"}
_POSINT = {"type": "integer", "minimum": 1}
_BOOL = {"type": "boolean"}
_FRACTION = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}


def _obj(props: dict) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False}


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "graspda run configuration",
    **_obj({
        "dataset": _obj({
            "seed": {"type": "integer", "minimum": 0},
            "n_sim_train": _POSINT,
            "n_real_train": _POSINT,
            "n_real_eval": _POSINT,
            "knobs": _obj({
                "rgb_brightness_delta": _NONNEG,
                "rgb_hue_delta": _NONNEG,
                "rgb_texture_noise_sigma": _NONNEG,
                "depth_gaussian_sigma": _NONNEG,
                "depth_salt_pepper_rate": {"type": "number", "minimum": 0, "maximum": 0.2},
            }),
            "scene": _obj({
                "image_size": {"type": "integer", "minimum": 16},
                "n_bins": _POSINT,
                "min_objects": {"type": "integer", "minimum": 1, "maximum": 8},
                "max_objects": {"type": "integer", "minimum": 1, "maximum": 8},
                "max_opening": _NONNEG,
                "jaw_height": _NONNEG,
                "jaw_margin": _NONNEG,
                "friction": _NONNEG,
                "max_attempts": _POSINT,
                "max_overlap": {"type": "number", "minimum": 0, "maximum": 1},
            }),
        }),
        "net": _obj({
            "image_size": {"type": "integer", "minimum": 16},
            "channels": {"type": "array", "items": _POSINT, "minItems": 4, "maxItems": 4},
            "anchor_size": _NONNEG,
            "pool_size": _POSINT,
            "roi_hidden": _POSINT,
            "gpn_hidden": _POSINT,
            "n_bins": _POSINT,
            "top_k": _POSINT,
            "nms_iou": _FRACTION,
            "pos_iou": _FRACTION,
            "neg_iou": _FRACTION,
            "gpn_samples": _POSINT,
            "roi_samples": _POSINT,
            "pos_fraction": _FRACTION,
            "max_opening": _NONNEG,
            "jaw_height": _NONNEG,
            "angles_per_region": _POSINT,
        }),
        "train": _obj({
            "alpha": _NONNEG, "beta": _NONNEG, "gamma": _NONNEG, "gpa_weight": _NONNEG,
            "lambda": _NONNEG,
            "n_bins": _POSINT,
            "lr": _NONNEG, "lr_decay_fraction": _FRACTION, "lr_decay_factor": _NONNEG,
            "momentum": _NONNEG, "weight_decay": _NONNEG,
            "grad_clip": {"type": ["number", "null"], "exclusiveMinimum": 0},
            "total_steps": _POSINT,
            "gpa_start_fraction": _FRACTION,
            "seed": {"type": "integer", "minimum": 0},
            "sim_per_step": _POSINT, "real_per_step": _POSINT,
            "grl_coeff": _NONNEG, "grl_warmup_steps": {"type": "integer", "minimum": 0},
            "quality_threshold": {"type": "number", "minimum": 0, "maximum": 1},
            "local_regions": _POSINT,
            "checkpoint_every": {"type": "integer", "minimum": 0},
            "pretrain_steps": _POSINT,
            "pretrain_batch": _POSINT,
            **{f: _BOOL for f in FLAGS},
        }),
        "ablation": _obj({
            "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            "variants": {"type": "array", "items": {"enum": list(VARIANTS)}, "minItems": 1, "uniqueItems": True},
        }),
    }),
}


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train["lambda"] = train.pop("lam")
        net = dataclasses.asdict(self.net)
        net["channels"] = list(net["channels"])
        return {"dataset": self.dataset.to_dict(), "net": net, "train": train,
                "ablation": {"seeds": list(self.seeds), "variants": list(self.variants)}}


def validate(doc: dict) -> None:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def from_dict(doc: dict) -> RunConfig:
    validate(doc)
    doc = copy.deepcopy(doc)
    try:
        ds = doc.get("dataset", {})
        knobs = {**dataclasses.asdict(DEFAULT_SHIFT), **ds.pop("knobs", {})}
        dataset = DatasetConfig(knobs=ShiftKnobs(**knobs), scene=SceneConfig(**ds.pop("scene", {})), **ds)
        net_d = doc.get("net", {})
        if "channels" in net_d:
            net_d["channels"] = tuple(net_d["channels"])
        train_d = doc.get("train", {})
        if "lambda" in train_d:
            train_d["lam"] = train_d.pop("lambda")
        train = TrainConfig(**train_d)
        net = NetConfig(**{"n_bins": train.n_bins, **net_d})
        if net.n_bins != train.n_bins:
            raise ConfigError("net/n_bins: must equal train/n_bins")
        abl = doc.get("ablation", {})
        return RunConfig(dataset, net, train, list(abl.get("seeds", [0, 1, 2, 3, 4])),
                         list(abl.get("variants", list(VARIANTS))))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(doc)


def override(doc: dict, section: str, **values) -> dict:
    """Return a copy of ``doc`` with ``values`` (None entries skipped) set in ``section``."""
    doc = copy.deepcopy(doc)
    for k, v in values.items():
        if v is not None:
            doc.setdefault(section, {})[k] = v
    return doc
