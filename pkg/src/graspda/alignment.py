"""Adversarial domain classifiers and global/local consistency.

Domain label convention: sim = 1, real = 0.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Conv2d, Linear, Module, Tensor


class GlobalDomainClassifier(Module):
    """Per-cell domain probability from one modality's feature map.

    Two 1x1 convolutions with a ReLU between, then a sigmoid.  The input is
    passed through gradient reversal so the encoder is trained adversarially.
    """

    def __init__(self, c_in: int, rng: np.random.Generator, hidden: int = 32):
        self.conv1 = Conv2d(c_in, hidden, 1, rng)
        self.conv2 = Conv2d(hidden, 1, 1, rng)

    def __call__(self, feat: Tensor, grl_coeff: float = 1.0) -> Tensor:
        x = ad.grad_reverse(feat, grl_coeff)
        return ad.sigmoid(self.conv2(ad.relu(self.conv1(x))))


class LocalDomainClassifier(Module):
    """Domain probability per region feature: GRL, two fully connected layers, sigmoid."""

    def __init__(self, c_in: int, rng: np.random.Generator, hidden: int = 64):
        self.fc1 = Linear(c_in, hidden, rng)
        self.fc2 = Linear(hidden, 1, rng)

    def __call__(self, feats: Tensor, grl_coeff: float = 1.0) -> Tensor:
        x = ad.grad_reverse(feats, grl_coeff)
        return ad.reshape(ad.sigmoid(self.fc2(ad.relu(self.fc1(x)))), (feats.shape[0],))


def domain_targets(p: Tensor, labels) -> np.ndarray:
    """Broadcast one label per image (leading axis) over a prediction map."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, *([1] * (p.ndim - 1)))
    return np.broadcast_to(labels, p.shape)


def global_dc_loss(p_map: Tensor, q) -> Tensor:
    """Spatially averaged BCE of a (N, 1, H, W) map against per-image labels ``q``.

    With equal-size images this equals the mean over images of the per-image
    spatial average.
    """
    return ad.binary_cross_entropy(p_map, domain_targets(p_map, q))


def local_dc_loss(p_regions: Tensor | None, q_regions) -> Tensor:
    """Mean BCE over the pooled proposals of a step; 0 when there are none."""
    if p_regions is None or p_regions.size == 0:
        return ad.Tensor(0.0)
    return ad.binary_cross_entropy(p_regions, np.asarray(q_regions, dtype=np.float64))


def consistency_loss(p_map: Tensor, p_regions: Tensor | None, region_image: np.ndarray) -> Tensor:
    """Mean over regions of |spatial mean of the global map of the region's image - P_n|."""
    if p_regions is None or p_regions.size == 0:
        return ad.Tensor(0.0)
    n = p_map.shape[0]
    img_mean = ad.mean(ad.reshape(p_map, (n, -1)), axis=1)
    per_region = ad.getitem(img_mean, np.asarray(region_image, dtype=np.int64))
    return ad.mean(ad.absolute(ad.sub(per_region, p_regions)))


def accuracy(p, q) -> float:
    """Fraction of cells whose thresholded prediction matches the label."""
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    t = domain_targets(Tensor(p), q)
    return float(((p >= 0.5) == (t >= 0.5)).mean())
