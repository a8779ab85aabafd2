"""Adaptation training: weighted loss, schedules, training loop and ablation grid.

One step draws ``sim_per_step`` labelled sim scenes and ``real_per_step``
unlabelled real scenes, runs them through the detector as one batch and sums

    L_grasp + alpha (L_I_DC + L_D_DC) + beta L_G_DC + gamma (L_I_CR + L_D_CR) + gpa_weight L_GPA

where only the grasp loss sees labels, and only sim labels.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .alignment import (GlobalDomainClassifier, LocalDomainClassifier, accuracy, consistency_loss,
                        global_dc_loss, local_dc_loss)
from .autodiff import Module, Tape, Tensor
from .dataset import Dataset, scene_seed
from .detector import GraspNet, NetConfig, label_boxes
from .geometry import bin_center
from .metrics import toy_ap
from .optim import SGD
from .pretext import PretextConfig, pretrain_encoder
from .prototypes import PrototypeBank, batch_prototypes, gpa_loss, update_global
from .scenes import Domain, Scene, generate_scene

log = logging.getLogger(__name__)

COMPONENTS = ("L_grasp", "L_I_DC", "L_D_DC", "L_G_DC", "L_I_CR", "L_D_CR", "L_GPA")
METRIC_COLUMNS = ("step", "lr") + COMPONENTS + ("total", "domain_acc_global", "domain_acc_local")
FLAGS = ("pretrain", "global_dc", "local_dc", "consistency", "gpa")

VARIANTS = {
    "source_only": {"pretrain": False, "global_dc": False, "local_dc": False, "consistency": False, "gpa": False},
    "pretrain+global": {"pretrain": True, "global_dc": True, "local_dc": False, "consistency": False, "gpa": False},
    "pretrain+local": {"pretrain": True, "global_dc": False, "local_dc": True, "consistency": False, "gpa": False},
    "global+local": {"pretrain": False, "global_dc": True, "local_dc": True, "consistency": True, "gpa": False},
    "pretrain+global+local": {"pretrain": True, "global_dc": True, "local_dc": True, "consistency": True,
                              "gpa": False},
    "full": {"pretrain": True, "global_dc": True, "local_dc": True, "consistency": True, "gpa": True},
}


class NumericalError(RuntimeError):
    def __init__(self, component: str, step: int, value: float):
        super().__init__(f"non-finite {component} at step {step}: {value}")
        self.component = component
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.1
    gpa_weight: float = 1000.0
    lam: float = 0.001
    n_bins: int = 12
    lr: float = 0.005
    lr_decay_fraction: float = 2 / 3
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    grad_clip: float | None = 10.0
    total_steps: int = 5000
    gpa_start_fraction: float = 7 / 12
    seed: int = 0
    sim_per_step: int = 1
    real_per_step: int = 1
    grl_coeff: float = 1.0
    grl_warmup_steps: int = 0
    quality_threshold: float = 0.7
    local_regions: int = 32
    checkpoint_every: int = 0
    pretrain_steps: int = 2000
    pretrain_batch: int = 4
    pretrain: bool = True
    global_dc: bool = True
    local_dc: bool = True
    consistency: bool = True
    gpa: bool = True

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "gpa_weight", "lam", "lr", "momentum", "weight_decay", "grl_coeff"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("gpa_start_fraction", "lr_decay_fraction"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.total_steps < 1 or self.sim_per_step < 1 or self.real_per_step < 1:
            raise ValueError("total_steps, sim_per_step and real_per_step must be positive")
        if self.consistency and not (self.global_dc and self.local_dc):
            raise ValueError("consistency needs both global_dc and local_dc")

    @property
    def decay_step(self) -> int:
        return int(round(self.lr_decay_fraction * self.total_steps))

    @property
    def gpa_start(self) -> int:
        return int(round(self.gpa_start_fraction * self.total_steps))

    @property
    def adapts(self) -> bool:
        return self.global_dc or self.local_dc or self.gpa

    def flags(self) -> dict[str, bool]:
        return {f: getattr(self, f) for f in FLAGS}

    def with_flags(self, **flags) -> "TrainConfig":
        return dataclasses.replace(self, **flags)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(cfg: TrainConfig, step: int) -> float:
    return cfg.lr if step < cfg.decay_step else cfg.lr * cfg.lr_decay_factor


def grl_coefficient(cfg: TrainConfig, step: int) -> float:
    if cfg.grl_warmup_steps <= 0:
        return cfg.grl_coeff
    return cfg.grl_coeff * min(1.0, step / cfg.grl_warmup_steps)


def total_loss(components: dict, cfg: TrainConfig, step: int | None = None):
    """Weighted sum of the loss components; L_GPA counts only from the GPA start step.

    Components may be Tensors or floats; missing components count as 0.
    """
    weights = {
        "L_grasp": 1.0,
        "L_I_DC": cfg.alpha, "L_D_DC": cfg.alpha,
        "L_G_DC": cfg.beta,
        "L_I_CR": cfg.gamma, "L_D_CR": cfg.gamma,
        "L_GPA": cfg.gpa_weight if step is None or step >= cfg.gpa_start else 0.0,
    }
    total = None
    for name in COMPONENTS:
        value = components.get(name)
        if value is None or weights[name] == 0.0:
            continue
        term = ad.mul(value, weights[name]) if isinstance(value, Tensor) else weights[name] * float(value)
        if total is None:
            total = term
        else:
            total = ad.add(total, term) if isinstance(total, Tensor) or isinstance(term, Tensor) else total + term
    return 0.0 if total is None else total


class DomainHeads(Module):
    """The three domain classifiers; present even when unused so source-only runs keep them."""

    def __init__(self, c_feat: int, region_dim: int, seed: int):
        rng = np.random.default_rng([seed, 2])
        self.rgb = GlobalDomainClassifier(c_feat, rng)
        self.depth = GlobalDomainClassifier(c_feat, rng)
        self.local = LocalDomainClassifier(region_dim, rng)


@dataclass
class TrainResult:
    net: GraspNet
    heads: DomainHeads
    bank: PrototypeBank
    config: TrainConfig
    metrics: list[dict]
    grasp_calls: list[list[int]] = field(default_factory=list)

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)


def metrics_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(r[k])) if k not in ("step",) else r[k]) for k in METRIC_COLUMNS})
    return buf.getvalue()


def pretrain_encoders(dataset: Dataset, net_cfg: NetConfig, steps: int, seed: int, batch: int = 4) -> dict:
    """Relative-rotation pretraining of both encoders on mixed sim + real training images.

    Returns {"rgb": arrays, "depth": arrays} of encoder weights only.
    """
    scenes = dataset.sim_train + dataset.real_train
    out = {}
    for i, (name, attr, c_in) in enumerate((("rgb", "rgb", 3), ("depth", "depth", 1))):
        images = np.stack([getattr(s, attr) for s in scenes])
        pcfg = PretextConfig(steps=steps, batch=batch, seed=seed * 2 + i)
        enc, _, losses = pretrain_encoder(images, c_in, net_cfg.channels, pcfg, encoder_seed=seed * 2 + i)
        log.info("pretrained %s encoder: final loss %.4f", name, losses[-100:].mean())
        out[name] = enc.arrays()
    return out


def _stack(scenes: list[Scene]):
    return np.stack([s.rgb for s in scenes]), np.stack([s.depth for s in scenes])


def _check_finite(values: dict[str, float], step: int) -> None:
    for k, v in values.items():
        if not math.isfinite(v):
            raise NumericalError(k, step, v)


def train(cfg: TrainConfig, dataset: Dataset, init: dict | None = None, net_cfg: NetConfig | None = None,
          out_dir=None, log_every: int = 0) -> TrainResult:
    """Train the detector with the enabled adaptation components.

    ``init`` holds pretrained encoder arrays ({"rgb": ..., "depth": ...}); when
    the pretrain flag is set and ``init`` is None, pretraining runs first.
    """
    net_cfg = net_cfg or NetConfig(n_bins=cfg.n_bins)
    net = GraspNet(net_cfg, seed=cfg.seed)
    heads = DomainHeads(net_cfg.channels[-1], net_cfg.roi_hidden, cfg.seed)
    bank = PrototypeBank(cfg.n_bins, net_cfg.roi_hidden)
    if cfg.pretrain:
        if init is None:
            init = pretrain_encoders(dataset, net_cfg, cfg.pretrain_steps, cfg.seed, cfg.pretrain_batch)
        net.rgb_encoder.load_arrays(init["rgb"])
        net.depth_encoder.load_arrays(init["depth"])

    params = net.parameters()
    if cfg.global_dc:
        params += heads.rgb.parameters() + heads.depth.parameters()
    if cfg.local_dc:
        params += heads.local.parameters()
    opt = SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)

    sim, real = dataset.sim_train, dataset.real_train
    if not sim or not real:
        raise ValueError("training needs both sim_train and real_train scenes")
    rng = np.random.default_rng([cfg.seed, 1])
    result = TrainResult(net, heads, bank, cfg, [])
    out_dir = Path(out_dir) if out_dir is not None else None

    for step in range(cfg.total_steps):
        sims = [sim[i] for i in rng.integers(0, len(sim), cfg.sim_per_step)]
        reals = [real[i] for i in rng.integers(0, len(real), cfg.real_per_step)]
        row = train_step(net, heads, bank, opt, cfg, step, sims, reals, rng, result)
        result.metrics.append(row)
        if log_every and step % log_every == 0:
            log.info("step %d lr %.4g total %.4f grasp %.4f", step, row["lr"], row["total"], row["L_grasp"])
        if out_dir is not None and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_model(result, out_dir, tag=f"step_{step + 1:06d}")
    if out_dir is not None:
        save_model(result, out_dir)
        (out_dir / "metrics.csv").write_text(result.metrics_csv())
    return result


def train_step(net: GraspNet, heads: DomainHeads, bank: PrototypeBank, opt: SGD, cfg: TrainConfig, step: int,
               sims: list[Scene], reals: list[Scene], rng: np.random.Generator,
               result: TrainResult | None = None) -> dict:
    lr = learning_rate(cfg, step)
    opt.lr = lr
    with Tape() as tape:
        comps, acc_g, acc_l = step_components(net, heads, bank, cfg, step, sims, reals, rng, result)
        total = total_loss(comps, cfg, step)
        values = {k: v.item() for k, v in comps.items()}
        _check_finite(values, step)
        _check_finite({"total": total.item()}, step)
        grads = tape.backward(total)
    opt.step(grads, cfg.grad_clip)
    bank.end_step()
    return {"step": step, "lr": lr, **{k: values.get(k, 0.0) for k in COMPONENTS}, "total": total.item(),
            "domain_acc_global": acc_g, "domain_acc_local": acc_l}


def step_components(net: GraspNet, heads: DomainHeads, bank: PrototypeBank, cfg: TrainConfig, step: int,
                    sims: list[Scene], reals: list[Scene], rng: np.random.Generator,
                    result: TrainResult | None = None) -> tuple[dict[str, Tensor], float, float]:
    """Loss components of one step on the active tape, plus global/local domain accuracies.

    Updates the prototype bank as a side effect when GPA is active.
    """
    for s in sims:
        if s.domain is not Domain.SIM:
            raise ValueError("grasp supervision offered a non-sim scene")
    n_sim = len(sims)
    batch = sims + reals
    q = np.array([s.domain.label for s in batch])
    coeff = grl_coefficient(cfg, step)
    comps: dict[str, Tensor] = {}
    acc_g = acc_l = 0.0

    f_rgb, f_d = net.encode(*_stack(batch))
    fused = net.fuse(f_rgb, f_d)
    logits, deltas = net.gpn(fused)
    if result is not None:
        result.grasp_calls.append([s.meta.get("index", -1) for s in sims])
    comps["L_grasp"], _, _, _ = net.grasp_loss(fused, logits, deltas, sims, list(range(n_sim)), rng)

    p_maps = {}
    if cfg.global_dc:
        p_maps["I"] = heads.rgb(f_rgb, coeff)
        p_maps["D"] = heads.depth(f_d, coeff)
        comps["L_I_DC"] = global_dc_loss(p_maps["I"], q)
        comps["L_D_DC"] = global_dc_loss(p_maps["D"], q)
        acc_g = 0.5 * (accuracy(p_maps["I"], q) + accuracy(p_maps["D"], q))

    region_feats, bidx = None, np.zeros(0, dtype=np.int64)
    if cfg.local_dc or cfg.gpa:
        props = net.propose(logits.data, deltas.data)
        boxes = [p[0][:cfg.local_regions] for p in props]
        bidx = np.concatenate([np.full(len(b), n) for n, b in enumerate(boxes)]).astype(np.int64)
        if len(bidx):
            region_feats = net.region_features(fused, np.concatenate(boxes), bidx)

    if cfg.local_dc:
        p_n = heads.local(region_feats, coeff) if region_feats is not None else None
        comps["L_G_DC"] = local_dc_loss(p_n, q[bidx])
        if p_n is not None:
            acc_l = accuracy(p_n, q[bidx])
        if cfg.consistency:
            comps["L_I_CR"] = consistency_loss(p_maps["I"], p_n, bidx)
            comps["L_D_CR"] = consistency_loss(p_maps["D"], p_n, bidx)

    if cfg.gpa and step >= cfg.gpa_start:
        _update_prototypes(net, bank, cfg, fused, sims, region_feats, bidx, n_sim)
        comps["L_GPA"] = gpa_loss(bank)
    return comps, acc_g, acc_l


def _update_prototypes(net, bank, cfg, fused, sims, region_feats, bidx, n_sim) -> None:
    """Sim prototypes from ground-truth regions; real ones from confident head predictions."""
    gt = [label_boxes(s.grasps, net.cfg.jaw_height) for s in sims]
    gt_idx = np.concatenate([np.full(len(g), n) for n, g in enumerate(gt)]).astype(np.int64)
    if len(gt_idx):
        feats = net.region_features(fused, np.concatenate(gt), gt_idx)
        thetas = np.array([g.theta for s in sims for g in s.grasps])
        update_global(bank, "sim", batch_prototypes(feats, thetas, cfg.n_bins), cfg.lam)
    if region_feats is None:
        return
    real_rows = np.flatnonzero(bidx >= n_sim)
    if len(real_rows) == 0:
        return
    real_feats = ad.getitem(region_feats, real_rows)
    out = net.head(Tensor(real_feats.data))
    keep = np.flatnonzero(out["quality"].data >= cfg.quality_threshold)
    if len(keep) == 0:
        return
    thetas = bin_center(np.argmax(out["theta_logits"].data[keep], axis=1), cfg.n_bins)
    update_global(bank, "real", batch_prototypes(ad.getitem(real_feats, keep), thetas, cfg.n_bins), cfg.lam)


# -- persistence ---------------------------------------------------------------

def save_model(result: TrainResult, out_dir, tag: str = "final") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"train_config": result.config.to_dict(), "net_config": _net_cfg_dict(result.net.cfg)}
    ad.save_checkpoint(out_dir / f"model_{tag}", result.net.arrays(), tag="graspnet", meta=meta)
    ad.save_checkpoint(out_dir / f"domain_heads_{tag}", result.heads.arrays(), tag="domain_heads", meta=meta)
    result.bank.save(out_dir / f"prototypes_{tag}")
    return out_dir / f"model_{tag}.json"


def _net_cfg_dict(cfg: NetConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["channels"] = list(d["channels"])
    return d


def load_model(model_dir, tag: str = "final") -> GraspNet:
    arrays, manifest = ad.load_checkpoint(Path(model_dir) / f"model_{tag}")
    ncfg = dict(manifest["meta"]["net_config"])
    ncfg["channels"] = tuple(ncfg["channels"])
    net = GraspNet(NetConfig(**ncfg))
    net.load_arrays(arrays)
    return net


# -- evaluation ----------------------------------------------------------------

def evaluate(net: GraspNet, scenes: list[Scene]) -> float:
    """Toy-AP of the detector's predictions against the scenes' labels."""
    return toy_ap(net.predict(scenes), [s.grasps for s in scenes], net.cfg.jaw_height)


def probe_scenes(seed: int, count: int, dataset: Dataset) -> list[Scene]:
    """Fresh labelled-free sim scenes outside every training split, for domain probes."""
    cfg = dataset.config
    return [generate_scene(scene_seed(cfg.seed + 7919 * (seed + 1), "sim_train", i), Domain.SIM, cfg.knobs,
                           cfg=cfg.scene) for i in range(count)]


def global_domain_accuracy(net: GraspNet, heads: DomainHeads, sim: list[Scene], real: list[Scene]) -> float:
    """Held-out accuracy of the trained global classifiers, averaged over modalities."""
    scenes = sim + real
    q = np.array([s.domain.label for s in scenes])
    f_rgb, f_d = net.encode(*_stack(scenes))
    return 0.5 * (accuracy(_global_predict(heads.rgb, f_rgb), q) + accuracy(_global_predict(heads.depth, f_d), q))


def _global_predict(clf: GlobalDomainClassifier, feat: Tensor) -> Tensor:
    return ad.sigmoid(clf.conv2(ad.relu(clf.conv1(feat))))


def frozen_probe_accuracy(net: GraspNet, train_sim, train_real, test_sim, test_real, steps: int = 200,
                          seed: int = 0, lr: float = 0.05) -> float:
    """Train a fresh global classifier on frozen fused features; report held-out accuracy.

    The probe sees the concatenated RGB and depth maps the detector consumes,
    standardized per channel with training statistics, so a modality whose
    activations are small in scale still counts.
    """
    rng = np.random.default_rng([seed, 3])
    tr = train_sim + train_real
    q_tr = np.array([s.domain.label for s in tr])
    f_tr = np.concatenate([t.data for t in net.encode(*_stack(tr))], axis=1)
    mu = f_tr.mean(axis=(0, 2, 3), keepdims=True)
    sd = f_tr.std(axis=(0, 2, 3), keepdims=True) + 1e-8
    f_tr = (f_tr - mu) / sd
    probe = GlobalDomainClassifier(f_tr.shape[1], rng)
    opt = SGD(probe.parameters(), lr, 0.9, 0.0)
    for _ in range(steps):
        idx = rng.integers(0, len(tr), 8)
        with Tape() as tape:
            grads = tape.backward(global_dc_loss(_global_predict(probe, f_tr[idx]), q_tr[idx]))
        opt.step(grads)
    te = test_sim + test_real
    q_te = np.array([s.domain.label for s in te])
    f_te = (np.concatenate([t.data for t in net.encode(*_stack(te))], axis=1) - mu) / sd
    return accuracy(_global_predict(probe, f_te), q_te)


# -- ablation ------------------------------------------------------------------

def ablate(cfg: TrainConfig, dataset: Dataset, seeds, variants=None, net_cfg: NetConfig | None = None,
           pretrained: dict | None = None, out_dir=None) -> list[dict]:
    """Run every variant for every seed; one row per run with target toy-AP.

    Pretrained encoders are computed once per seed and shared by the variants
    that use them; ``pretrained`` may supply them keyed by seed.
    """
    variants = list(variants or VARIANTS)
    pretrained = dict(pretrained or {})
    rows = []
    for seed in seeds:
        for name in variants:
            vcfg = dataclasses.replace(cfg, seed=seed, **VARIANTS[name])
            init = None
            if vcfg.pretrain:
                if seed not in pretrained:
                    pretrained[seed] = pretrain_encoders(dataset, net_cfg or NetConfig(n_bins=cfg.n_bins),
                                                         cfg.pretrain_steps, seed, cfg.pretrain_batch)
                init = pretrained[seed]
            run_dir = Path(out_dir) / f"{name}_seed{seed}" if out_dir is not None else None
            res = train(vcfg, dataset, init=init, net_cfg=net_cfg, out_dir=run_dir)
            ap = evaluate(res.net, dataset.real_eval)
            rows.append({"variant": name, "seed": seed, **VARIANTS[name], "toy_ap": ap})
            log.info("ablate %s seed %d: toy-AP %.4f", name, seed, ap)
    return rows


def gpa_sweep(cfg: TrainConfig, dataset: Dataset, seeds, weights=(0.0, 1.0, 10.0, 100.0, 1000.0),
              net_cfg: NetConfig | None = None, pretrained: dict | None = None) -> list[dict]:
    """Sensitivity of the full method's target toy-AP to the GPA loss weight."""
    pretrained = dict(pretrained or {})
    rows = []
    for seed in seeds:
        if seed not in pretrained:
            pretrained[seed] = pretrain_encoders(dataset, net_cfg or NetConfig(n_bins=cfg.n_bins),
                                                 cfg.pretrain_steps, seed, cfg.pretrain_batch)
        for w in weights:
            vcfg = dataclasses.replace(cfg, seed=seed, gpa_weight=float(w), **VARIANTS["full"])
            res = train(vcfg, dataset, init=pretrained[seed], net_cfg=net_cfg)
            rows.append({"seed": seed, "gpa_weight": float(w), "toy_ap": evaluate(res.net, dataset.real_eval)})
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Per-variant median, mean and spread (min/max) of toy-AP."""
    out = []
    for name in dict.fromkeys(r["variant"] for r in rows):
        aps = np.array([r["toy_ap"] for r in rows if r["variant"] == name])
        out.append({"variant": name, "n": len(aps), "median": float(np.median(aps)), "mean": float(aps.mean()),
                    "std": float(aps.std()), "min": float(aps.min()), "max": float(aps.max())})
    return out


def rows_to_csv(rows: list[dict]) -> str:
    cols = ["variant", "seed", *FLAGS, "toy_ap"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (int(r[k]) if k in FLAGS else r[k]) for k in cols})
    return buf.getvalue()


def rows_from_csv(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        rows.append({"variant": r["variant"], "seed": int(r["seed"]), **{f: bool(int(r[f])) for f in FLAGS},
                     "toy_ap": float(r["toy_ap"])})
    return rows


def dump_predictions(preds: list[list], scenes: list[Scene]) -> str:
    return json.dumps([{"scene": s.meta.get("index", i), "seed": s.seed, "grasps": [g.to_dict() for g in p]}
                       for i, (p, s) in enumerate(zip(preds, scenes))], indent=1)
