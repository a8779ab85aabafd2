"""Angle-binned grasp prototypes with a cosine-weighted moving average.

Each domain keeps ``L`` global prototypes, one per in-plane angle bin.  Every
step the region features of that domain are averaged per bin (batch
prototypes) and folded into the global prototype with step length
``lam * sim(P, GP)``, where ``sim`` is cosine similarity mapped to [0, 1].

Only the current step's batch prototypes carry gradient: the moving-average
history is a constant buffer, and the step length itself is not
differentiated.  A bin's first batch prototype initialises it directly and
is also treated as a constant.
"""
from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import bin_of

log = logging.getLogger(__name__)

DOMAINS = ("sim", "real")


class PrototypeBank:
    def __init__(self, n_bins: int, dim: int):
        self.n_bins = n_bins
        self.dim = dim
        self.gp = {d: np.zeros((n_bins, dim)) for d in DOMAINS}
        self.initialized = {d: np.zeros(n_bins, dtype=bool) for d in DOMAINS}
        self.live: dict[str, dict[int, Tensor]] = {d: {} for d in DOMAINS}

    def end_step(self) -> None:
        """Drop this step's differentiable views; values are already committed."""
        self.live = {d: {} for d in DOMAINS}

    def both_initialized(self) -> np.ndarray:
        return self.initialized["sim"] & self.initialized["real"]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"gp_sim": self.gp["sim"].copy(), "gp_real": self.gp["real"].copy()}

    def state_meta(self) -> dict:
        return {"n_bins": self.n_bins, "dim": self.dim,
                "initialized_sim": self.initialized["sim"].tolist(),
                "initialized_real": self.initialized["real"].tolist()}

    def save(self, stem) -> None:
        ad.save_checkpoint(stem, self.arrays(), tag="prototype_bank", meta=self.state_meta())

    @classmethod
    def load(cls, stem) -> "PrototypeBank":
        arrays, manifest = ad.load_checkpoint(stem)
        meta = manifest["meta"]
        bank = cls(meta["n_bins"], meta["dim"])
        for d in DOMAINS:
            bank.gp[d] = arrays[f"gp_{d}"]
            bank.initialized[d] = np.array(meta[f"initialized_{d}"], dtype=bool)
        return bank


def batch_prototypes(features: Tensor, thetas, n_bins: int) -> dict[int, Tensor]:
    """Mean region feature per occupied angle bin."""
    bins = bin_of(np.asarray(thetas, dtype=np.float64).reshape(-1), n_bins)
    bins = np.atleast_1d(bins)
    out = {}
    for b in np.unique(bins):
        rows = np.flatnonzero(bins == b)
        out[int(b)] = ad.mean(ad.getitem(features, rows), axis=0)
    return out


def update_global(bank: PrototypeBank, domain: str, protos: dict[int, Tensor], lam: float) -> PrototypeBank:
    """Fold batch prototypes into ``bank`` for one domain (mutates and returns it)."""
    for b, p in protos.items():
        if not np.any(p.data):
            log.warning("bin %d (%s): zero batch prototype, cosine undefined; update skipped", b, domain)
            continue
        if not bank.initialized[domain][b]:
            bank.gp[domain][b] = p.data.copy()
            bank.initialized[domain][b] = True
            continue
        prev = bank.gp[domain][b]
        step = lam * ad.cosine_similarity(p.data, prev).item()
        cur = ad.add(ad.mul(p, step), (1.0 - step) * prev)
        bank.gp[domain][b] = cur.data.copy()
        bank.live[domain][b] = cur
    return bank


def gpa_loss(bank: PrototypeBank) -> Tensor:
    """Sum over bins initialised in both domains of ||GP_sim - GP_real||_2."""
    total = None
    for b in np.flatnonzero(bank.both_initialized()):
        s = bank.live["sim"].get(int(b), bank.gp["sim"][b])
        r = bank.live["real"].get(int(b), bank.gp["real"][b])
        d = ad.l2_norm(ad.sub(s, r))
        total = d if total is None else ad.add(total, d)
    return total if total is not None else ad.Tensor(0.0)
