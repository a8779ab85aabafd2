"""Two-stage RGB-D planar grasp detector at toy scale.

RGB and depth encoders produce equal-sized feature maps that are concatenated
and scored by a grasp proposal network (one square anchor per cell).  Proposal
boxes are pooled from the concatenated map into fixed-size region features,
and the region head classifies the grasp angle into ``n_bins`` bins and
regresses opening width, grasp depth and a quality score.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Conv2d, Linear, Module, Tensor
from .geometry import GraspRect, bin_center, bin_of, box_iou, decode_boxes, encode_boxes, nms
from .scenes import Scene

REG_BETA = 1.0 / 9.0


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 64
    channels: tuple[int, int, int, int] = (16, 32, 32, 64)
    anchor_size: float = 12.0
    pool_size: int = 4
    roi_hidden: int = 128
    gpn_hidden: int = 32
    n_bins: int = 12
    top_k: int = 64
    nms_iou: float = 0.3
    pos_iou: float = 0.5
    neg_iou: float = 0.3
    gpn_samples: int = 32
    roi_samples: int = 16
    pos_fraction: float = 0.25
    max_opening: float = 30.0
    jaw_height: float = 6.0
    angles_per_region: int = 3

    @property
    def stride(self) -> int:
        return 4

    @property
    def feat_size(self) -> int:
        return self.image_size // self.stride


class Encoder(Module):
    """Four 3x3 conv layers, the first two with stride 2; replicate padding."""

    def __init__(self, c_in: int, channels, rng: np.random.Generator):
        c1, c2, c3, c4 = channels
        self.conv1 = Conv2d(c_in, c1, 3, rng, stride=2, padding=1, pad_mode="edge")
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1, pad_mode="edge")
        self.conv3 = Conv2d(c2, c3, 3, rng, stride=1, padding=1, pad_mode="edge")
        self.conv4 = Conv2d(c3, c4, 3, rng, stride=1, padding=1, pad_mode="edge")

    def __call__(self, x) -> Tensor:
        for conv in (self.conv1, self.conv2, self.conv3, self.conv4):
            x = ad.relu(conv(x))
        return x


class ProposalNet(Module):
    def __init__(self, c_in: int, hidden: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, hidden, 3, rng, padding=1, pad_mode="edge")
        self.out = Conv2d(hidden, 5, 1, rng)
        self.out.weight.data *= 0.1

    def __call__(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        """Return objectness logits (N, A) and box deltas (N, A, 4), anchors row-major."""
        y = self.out(ad.relu(self.conv(feat)))
        n, _, h, w = y.shape
        y = ad.reshape(y, (n, 5, h * w))
        logits = ad.reshape(ad.getitem(y, (slice(None), 0)), (n, h * w))
        deltas = ad.getitem(y, (slice(None), slice(1, 5)))
        return logits, deltas


class RegionHead(Module):
    def __init__(self, c_in: int, cfg: NetConfig, rng: np.random.Generator):
        self.fc = Linear(c_in * cfg.pool_size ** 2, cfg.roi_hidden, rng)
        self.out = Linear(cfg.roi_hidden, cfg.n_bins + 3, rng, gain=0.1)
        self.n_bins = cfg.n_bins

    def features(self, pooled: Tensor) -> Tensor:
        """Region feature F(r): flattened pooled map through one hidden layer."""
        return ad.relu(self.fc(ad.reshape(pooled, (pooled.shape[0], -1))))

    def __call__(self, feats: Tensor) -> dict[str, Tensor]:
        y = self.out(feats)
        L = self.n_bins
        return {
            "theta_logits": ad.getitem(y, (slice(None), slice(0, L))),
            "width": ad.getitem(y, (slice(None), L)),
            "depth": ad.getitem(y, (slice(None), L + 1)),
            "quality": ad.sigmoid(ad.getitem(y, (slice(None), L + 2))),
        }


def make_anchors(cfg: NetConfig) -> np.ndarray:
    s, n, half = cfg.stride, cfg.feat_size, cfg.anchor_size / 2
    ys, xs = np.mgrid[0:n, 0:n]
    cx, cy = (xs.ravel() + 0.5) * s, (ys.ravel() + 0.5) * s
    return np.stack([cx - half, cy - half, cx + half, cy + half], axis=1).astype(np.float64)


def label_boxes(grasps: list[GraspRect], jaw_height: float) -> np.ndarray:
    if not grasps:
        return np.zeros((0, 4))
    return np.array([g.box(jaw_height) for g in grasps])


def pool_matrices(boxes: np.ndarray, cfg: NetConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-box adaptive pooling matrices over the feature grid."""
    s, n = cfg.stride, cfg.feat_size
    rows = np.stack([ad.region_pool_matrix(np.floor(b[1] / s), np.ceil(b[3] / s), cfg.pool_size, n) for b in boxes])
    cols = np.stack([ad.region_pool_matrix(np.floor(b[0] / s), np.ceil(b[2] / s), cfg.pool_size, n) for b in boxes])
    return rows, cols


def sample_indices(labels: np.ndarray, n_total: int, pos_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Pick up to ``n_total`` indices with label 1/0 at the given positive fraction."""
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), int(round(n_total * pos_fraction)))
    n_neg = min(len(neg), n_total - n_pos)
    pos = rng.choice(pos, n_pos, replace=False) if n_pos < len(pos) else pos
    neg = rng.choice(neg, n_neg, replace=False) if n_neg < len(neg) else neg
    return np.sort(np.concatenate([pos, neg])).astype(np.int64)


def match(boxes: np.ndarray, gt: np.ndarray, pos_iou: float, neg_iou: float, force_best: bool = False):
    """IoU matching: returns (labels in {1, 0, -1}, index of best gt per box)."""
    labels = -np.ones(len(boxes), dtype=np.int64)
    if len(gt) == 0:
        labels[:] = 0
        return labels, np.zeros(len(boxes), dtype=np.int64)
    iou = box_iou(boxes, gt)
    best = iou.argmax(axis=1)
    best_iou = iou[np.arange(len(boxes)), best]
    labels[best_iou < neg_iou] = 0
    labels[best_iou >= pos_iou] = 1
    if force_best:
        for j in range(len(gt)):
            i = int(iou[:, j].argmax())
            if iou[i, j] > 0:
                labels[i] = 1
                best[i] = j
    return labels, best


@dataclass
class HeadTargets:
    boxes: np.ndarray
    batch_index: np.ndarray
    is_pos: np.ndarray
    theta_bin: np.ndarray
    width: np.ndarray
    depth: np.ndarray
    quality: np.ndarray


class GraspNet(Module):
    def __init__(self, cfg: NetConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or NetConfig()
        rng = np.random.default_rng(seed)
        self.rgb_encoder = Encoder(3, cfg.channels, rng)
        self.depth_encoder = Encoder(1, cfg.channels, rng)
        c2 = 2 * cfg.channels[-1]
        self.gpn = ProposalNet(c2, cfg.gpn_hidden, rng)
        self.head = RegionHead(c2, cfg, rng)
        self.anchors = make_anchors(cfg)

    # -- forward pieces ------------------------------------------------------
    def encode(self, rgb, depth) -> tuple[Tensor, Tensor]:
        """(N,3,H,W) rgb and (N,1,H,W) depth -> feature maps F_I, F_D."""
        return self.rgb_encoder(np.asarray(rgb, dtype=np.float64)), self.depth_encoder(np.asarray(depth, dtype=np.float64))

    @staticmethod
    def fuse(f_rgb: Tensor, f_depth: Tensor) -> Tensor:
        return ad.concat([f_rgb, f_depth], axis=1)

    def propose(self, logits: np.ndarray, deltas: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Per image: (boxes (K,4), objectness (K,)) after NMS, best first."""
        cfg = self.cfg
        out = []
        for n in range(logits.shape[0]):
            boxes = decode_boxes(self.anchors, deltas[n].T)
            boxes = np.clip(boxes, 0, cfg.image_size)
            ok = (boxes[:, 2] - boxes[:, 0] >= 1) & (boxes[:, 3] - boxes[:, 1] >= 1)
            scores = 1.0 / (1.0 + np.exp(-logits[n]))
            idx = np.flatnonzero(ok)
            keep = idx[nms(boxes[idx], scores[idx], cfg.nms_iou, cfg.top_k)]
            out.append((boxes[keep], scores[keep]))
        return out

    def region_features(self, fused: Tensor, boxes: np.ndarray, batch_index: np.ndarray) -> Tensor:
        rows, cols = pool_matrices(boxes, self.cfg)
        return self.head.features(ad.roi_pool(fused, rows, cols, batch_index))

    # -- training targets ----------------------------------------------------
    def gpn_targets(self, grasps: list[GraspRect], rng: np.random.Generator):
        cfg = self.cfg
        gt = label_boxes(grasps, cfg.jaw_height)
        labels, best = match(self.anchors, gt, cfg.pos_iou, cfg.neg_iou, force_best=True)
        idx = sample_indices(labels, cfg.gpn_samples, cfg.pos_fraction, rng)
        pos = idx[labels[idx] == 1]
        reg = encode_boxes(self.anchors[pos], gt[best[pos]]) if len(pos) else np.zeros((0, 4))
        return idx, labels[idx].astype(np.float64), pos, reg

    def head_targets(self, proposals: np.ndarray, grasps: list[GraspRect], rng: np.random.Generator,
                     batch_index: int = 0) -> HeadTargets:
        cfg = self.cfg
        gt = label_boxes(grasps, cfg.jaw_height)
        cand = np.concatenate([proposals, gt]) if len(gt) else proposals
        labels, best = match(cand, gt, cfg.pos_iou, cfg.neg_iou)
        idx = sample_indices(labels, cfg.roi_samples, cfg.pos_fraction, rng)
        is_pos = labels[idx] == 1
        k = len(idx)
        theta_bin, width, depth, quality = np.zeros(k, np.int64), np.zeros(k), np.zeros(k), np.zeros(k)
        for r, (i, p) in enumerate(zip(idx, is_pos)):
            if p:
                g = grasps[best[i]]
                theta_bin[r] = bin_of(g.theta, cfg.n_bins)
                width[r] = g.width / cfg.max_opening
                depth[r] = g.grasp_depth
                quality[r] = g.quality
        return HeadTargets(cand[idx], np.full(k, batch_index), is_pos, theta_bin, width, depth, quality)

    # -- losses --------------------------------------------------------------
    def gpn_loss(self, logits: Tensor, deltas: Tensor, image: int, targets) -> dict[str, Tensor]:
        idx, obj_t, pos, reg_t = targets
        obj = ad.sigmoid(ad.getitem(logits, (image, idx)))
        terms = {"gpn_obj": ad.binary_cross_entropy(obj, obj_t)}
        if len(pos):
            pred = ad.getitem(deltas, (image, slice(None), pos))
            terms["gpn_box"] = ad.smooth_l1(pred, reg_t, beta=REG_BETA)  # pred is (P, 4)
        return terms

    def head_loss(self, out: dict[str, Tensor], t: HeadTargets) -> dict[str, Tensor]:
        terms = {"roi_quality": ad.binary_cross_entropy(out["quality"], t.quality)}
        pos = np.flatnonzero(t.is_pos)
        if len(pos):
            terms["roi_theta"] = ad.cross_entropy(ad.getitem(out["theta_logits"], pos), t.theta_bin[pos])
            terms["roi_width"] = ad.smooth_l1(ad.getitem(out["width"], pos), t.width[pos], beta=REG_BETA)
            terms["roi_depth"] = ad.smooth_l1(ad.getitem(out["depth"], pos), t.depth[pos], beta=REG_BETA)
        return terms

    def grasp_loss(self, fused: Tensor, logits: Tensor, deltas: Tensor, scenes: list[Scene],
                   images: list[int], rng: np.random.Generator):
        """L_grasp over labelled images: GPN objectness + box, head angle/width/depth/quality.

        Returns (loss tensor, per-term floats, head features of sampled regions,
        head targets) so that prototype code can reuse the ground-truth regions.
        """
        terms: dict[str, Tensor] = {}
        for scene, n in zip(scenes, images):
            gpn_t = self.gpn_targets(scene.grasps, rng)
            for k, v in self.gpn_loss(logits, deltas, n, gpn_t).items():
                terms[k] = v if k not in terms else terms[k] + v
        props = self.propose(logits.data[images], deltas.data[images])
        all_t = [self.head_targets(p[0], s.grasps, rng, n) for p, s, n in zip(props, scenes, images)]
        t = HeadTargets(*[np.concatenate([getattr(x, f) for x in all_t]) for f in HeadTargets.__dataclass_fields__])
        feats = self.region_features(fused, t.boxes, t.batch_index)
        for k, v in self.head_loss(self.head(feats), t).items():
            terms[k] = v
        total = None
        for v in terms.values():
            total = v if total is None else total + v
        return total, terms, feats, t

    # -- inference -----------------------------------------------------------
    def detect(self, fused: Tensor, logits: np.ndarray, deltas: np.ndarray):
        """Per image: (boxes, region features tensor, head outputs) for the top proposals."""
        props = self.propose(logits, deltas)
        boxes = [p[0] for p in props]
        bidx = np.concatenate([np.full(len(b), n) for n, b in enumerate(boxes)])
        allb = np.concatenate(boxes) if len(bidx) else np.zeros((0, 4))
        if len(allb) == 0:
            return boxes, bidx, None, None
        feats = self.region_features(fused, allb, bidx)
        return boxes, bidx, feats, self.head(feats)

    def predict(self, scenes: list[Scene], batch: int = 16) -> list[list[GraspRect]]:
        """Grasp predictions for each scene (no tape needed)."""
        cfg = self.cfg
        results = []
        for start in range(0, len(scenes), batch):
            chunk = scenes[start:start + batch]
            f_rgb, f_d = self.encode(np.stack([s.rgb for s in chunk]), np.stack([s.depth for s in chunk]))
            fused = self.fuse(f_rgb, f_d)
            logits, deltas = self.gpn(fused)
            boxes, bidx, _, out = self.detect(fused, logits.data, deltas.data)
            for n in range(len(chunk)):
                sel = np.flatnonzero(bidx == n)
                results.append(decode_grasps(boxes[n], {k: v.data[sel] for k, v in out.items()}, cfg)
                               if out is not None else [])
        return results


def decode_grasps(boxes: np.ndarray, out: dict[str, np.ndarray], cfg: NetConfig) -> list[GraspRect]:
    """Turn region boxes and head outputs into grasps centred on each box.

    Each region emits its ``angles_per_region`` most likely angle bins (ties go
    to the lower bin) scored by quality times the bin probability.
    """
    logits = np.asarray(out["theta_logits"])
    if len(logits) == 0:
        return []
    prob = np.exp(logits - logits.max(axis=1, keepdims=True))
    prob /= prob.sum(axis=1, keepdims=True)
    grasps = []
    for b, p, w, d, q in zip(boxes, prob, out["width"], out["depth"], out["quality"]):
        for k in np.argsort(-p, kind="stable")[:cfg.angles_per_region]:
            grasps.append(GraspRect(
                cx=float((b[0] + b[2]) / 2), cy=float((b[1] + b[3]) / 2), theta=float(bin_center(k, cfg.n_bins)),
                width=float(np.clip(w * cfg.max_opening, 1.0, cfg.max_opening)),
                grasp_depth=float(np.clip(d, 0.0, 1.0)), quality=float(q * p[k]),
            ))
    return grasps
