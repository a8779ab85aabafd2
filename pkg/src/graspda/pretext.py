"""Self-supervised relative-rotation pretraining of the modality encoders.

An image and a copy rotated by k quarter turns counterclockwise pass through
the same encoder; both feature maps are adaptively pooled, centred per channel,
concatenated, and a conv layer plus a fully connected layer classify k.  Only encoder weights are
kept afterwards.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Conv2d, ContractViolation, Linear, Module, Tape, Tensor
from .detector import Encoder
from .optim import SGD

log = logging.getLogger(__name__)


def rot90(image: np.ndarray, k: int) -> np.ndarray:
    """Rotate the last two (square) axes by ``k`` quarter turns counterclockwise."""
    image = np.asarray(image)
    if image.shape[-1] != image.shape[-2]:
        raise ContractViolation(f"rot90 needs a square image, got {image.shape[-2:]}")
    if k not in (0, 1, 2, 3):
        raise ContractViolation(f"rot90: k must be in {{0,1,2,3}}, got {k}")
    return np.rot90(image, k, axes=(-2, -1)).copy()


@dataclass(frozen=True)
class PretextConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 1e-4
    pool: int = 4
    hidden: int = 32
    seed: int = 0


class RotationHead(Module):
    def __init__(self, c_feat: int, cfg: PretextConfig, rng: np.random.Generator):
        self.conv = Conv2d(2 * c_feat, cfg.hidden, 3, rng, padding=1)
        self.fc = Linear(cfg.hidden * cfg.pool * cfg.pool, 4, rng, gain=0.01)
        self.pool = cfg.pool

    def _pooled(self, f: Tensor) -> Tensor:
        # the table background dominates every channel; only the layout carries k
        p = ad.adaptive_avg_pool(f, self.pool, self.pool)
        return ad.sub(p, ad.reshape(ad.mean(p, axis=(2, 3)), p.shape[:2] + (1, 1)))

    def logits(self, f: Tensor, f_rot: Tensor) -> Tensor:
        x = ad.concat([self._pooled(f), self._pooled(f_rot)], axis=1)
        x = ad.relu(self.conv(x))
        return self.fc(ad.reshape(x, (x.shape[0], -1)))


def predict_relative_rotation(encoder: Encoder, head: RotationHead, image: np.ndarray, rotated: np.ndarray) -> np.ndarray:
    """4-way distribution over k for (N, C, H, W) image pairs."""
    f = encoder(np.asarray(image, dtype=np.float64))
    g = encoder(np.asarray(rotated, dtype=np.float64))
    return ad.softmax(head.logits(f, g), axis=1).data


def _make_batch(pool: np.ndarray, rng: np.random.Generator, batch: int):
    idx = rng.integers(0, len(pool), size=batch)
    ks = rng.integers(0, 4, size=batch)
    imgs = pool[idx].astype(np.float64)
    rots = np.stack([rot90(im, int(k)) for im, k in zip(imgs, ks)])
    return imgs, rots, ks


def pretrain_encoder(images: np.ndarray, c_in: int, channels, cfg: PretextConfig, encoder_seed: int = 0,
                     log_every: int = 0):
    """Train one encoder on mixed-domain ``images`` (N, C, H, W).

    Returns (encoder, head, per-step losses).
    """
    rng = np.random.default_rng(cfg.seed)
    encoder = Encoder(c_in, channels, np.random.default_rng(encoder_seed))
    head = RotationHead(channels[-1], cfg, rng)
    opt = SGD(encoder.parameters() + head.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    losses = []
    for step in range(cfg.steps):
        imgs, rots, ks = _make_batch(images, rng, cfg.batch)
        with Tape() as tape:
            both = encoder(np.concatenate([imgs, rots]))
            f = ad.getitem(both, slice(0, cfg.batch))
            g = ad.getitem(both, slice(cfg.batch, 2 * cfg.batch))
            loss = ad.cross_entropy(head.logits(f, g), ks)
            grads = tape.backward(loss)
        opt.step(grads, clip=10.0)
        losses.append(loss.item())
        if log_every and step % log_every == 0:
            log.info("pretext step %d loss %.4f", step, np.mean(losses[-log_every:]))
    return encoder, head, np.array(losses)


def rotation_accuracy(encoder: Encoder, head: RotationHead, images: np.ndarray, seed: int = 123) -> float:
    """Held-out accuracy with every image tried at all four k."""
    correct, total = 0, 0
    for start in range(0, len(images), 16):
        chunk = images[start:start + 16].astype(np.float64)
        for k in range(4):
            probs = predict_relative_rotation(encoder, head, chunk, np.stack([rot90(im, k) for im in chunk]))
            correct += int((probs.argmax(axis=1) == k).sum())
            total += len(chunk)
    return correct / total


def save_pretrained(weights: dict, out_dir) -> dict:
    """Write one encoder checkpoint per modality, tagged ``pretrained_<modality>``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for modality, arrays in weights.items():
        paths[modality] = out_dir / f"pretrained_{modality}"
        ad.save_checkpoint(paths[modality], arrays, tag=f"pretrained_{modality}")
    return paths


def load_pretrained(directory) -> dict:
    out = {}
    for modality in ("rgb", "depth"):
        arrays, manifest = ad.load_checkpoint(Path(directory) / f"pretrained_{modality}")
        if manifest.get("tag") != f"pretrained_{modality}":
            raise ValueError(f"pretrained_{modality}: unexpected checkpoint tag {manifest.get('tag')!r}")
        out[modality] = arrays
    return out
