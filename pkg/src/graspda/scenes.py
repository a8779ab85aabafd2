"""Procedural dual-domain toy RGB-D grasp scenes.

Objects are rotated rectangles, ellipses and T-shapes lying on a flat table.
Depth renders each object as a plateau of constant height over a zero table;
RGB paints flat object colours with a light per-pixel texture.  The "real"
renderer is the simulated one followed by an appearance/noise shift whose
strength is set by :class:`ShiftKnobs`.

Grasp labels are found analytically from the signed distance of each shape:
for every angle bin the closing line through a part centre is ray-cast to
both contacts, then kept when the opening fits the gripper, both contact
normals lie inside the friction cone and the closing rectangle is collision
free on the rendered instance mask.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GraspRect, bin_center

log = logging.getLogger(__name__)


class Domain(str, enum.Enum):
    SIM = "sim"
    REAL = "real"

    @property
    def label(self) -> float:
        """Domain label Q used by the domain classifiers: sim = 1, real = 0."""
        return 1.0 if self is Domain.SIM else 0.0


@dataclass(frozen=True)
class ShiftKnobs:
    rgb_brightness_delta: float = 0.0
    rgb_hue_delta: float = 0.0
    rgb_texture_noise_sigma: float = 0.0
    depth_gaussian_sigma: float = 0.0
    depth_salt_pepper_rate: float = 0.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0 or not math.isfinite(value):
                raise ValueError(f"ShiftKnobs.{name} must be a nonnegative finite number, got {value}")
        if self.depth_salt_pepper_rate > 0.2:
            raise ValueError(f"depth_salt_pepper_rate must be <= 0.2, got {self.depth_salt_pepper_rate}")

    @classmethod
    def default(cls) -> "ShiftKnobs":
        """The default sim-to-real shift used by training and the acceptance runs."""
        return DEFAULT_SHIFT


DEFAULT_SHIFT = ShiftKnobs(
    rgb_brightness_delta=0.25,
    rgb_hue_delta=0.8,
    rgb_texture_noise_sigma=0.05,
    depth_gaussian_sigma=0.4,
    depth_salt_pepper_rate=0.2,
)


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    n_bins: int = 12
    min_objects: int = 2
    max_objects: int = 5
    max_opening: float = 30.0
    jaw_height: float = 6.0
    jaw_margin: float = 2.0
    friction: float = 0.4
    max_attempts: int = 1000
    max_overlap: float = 0.10


@dataclass
class Shape:
    kind: str
    cx: float
    cy: float
    angle: float
    a: float
    b: float
    height: float
    color: tuple[float, float, float]
    stem: float = 0.0

    def local(self, x, y):
        c, s = math.cos(self.angle), math.sin(self.angle)
        dx, dy = x - self.cx, y - self.cy
        return dx * c + dy * s, -dx * s + dy * c

    def to_world(self, u, v):
        c, s = math.cos(self.angle), math.sin(self.angle)
        return self.cx + u * c - v * s, self.cy + u * s + v * c

    def sdf(self, x, y):
        """Signed distance (negative inside) at world points ``x, y``."""
        u, v = self.local(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        if self.kind == "rect":
            return _box_sdf(u, v, self.a, self.b)
        if self.kind == "ellipse":
            return (np.hypot(u / self.a, v / self.b) - 1.0) * min(self.a, self.b)
        # tee: bar of half extents (a, b) on top, stem of half extents (b, stem) below it
        return np.minimum(_box_sdf(u, v, self.a, self.b), _box_sdf(u, v - (self.b + self.stem), self.b, self.stem))

    def part_centres(self) -> list[tuple[float, float]]:
        if self.kind == "tee":
            return [self.to_world(0.0, 0.0), self.to_world(0.0, self.b + self.stem)]
        return [(self.cx, self.cy)]

    def normal(self, x: float, y: float, h: float = 1e-4) -> np.ndarray:
        g = np.array([self.sdf(x + h, y) - self.sdf(x - h, y), self.sdf(x, y + h) - self.sdf(x, y - h)], dtype=np.float64)
        n = np.linalg.norm(g)
        return g / n if n > 0 else g


def _box_sdf(u, v, hx, hy):
    qx, qy = np.abs(u) - hx, np.abs(v) - hy
    return np.hypot(np.maximum(qx, 0), np.maximum(qy, 0)) + np.minimum(np.maximum(qx, qy), 0)


@dataclass
class Scene:
    rgb: np.ndarray
    depth: np.ndarray
    grasps: list[GraspRect]
    domain: Domain
    seed: int
    instance_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.rgb.shape[-1]


def _pixel_grid(size: int):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return xs + 0.5, ys + 0.5


def _sample_shape(rng: np.random.Generator, size: int) -> Shape:
    kind = ("rect", "ellipse", "tee")[int(rng.integers(0, 3))]
    angle = float(rng.uniform(0, math.pi))
    height = float(rng.uniform(0.3, 0.9))
    color = tuple(float(c) for c in rng.uniform(0.1, 0.95, size=3))
    cx, cy = (float(v) for v in rng.uniform(8, size - 8, size=2))
    if kind == "rect":
        a, b, stem = float(rng.uniform(7, 13)), float(rng.uniform(3, 6)), 0.0
    elif kind == "ellipse":
        b = float(rng.uniform(3.5, 6.5))
        a, stem = float(min(b * rng.uniform(1.5, 2.5), 13.0)), 0.0
    else:
        a, b, stem = float(rng.uniform(7, 11)), float(rng.uniform(2.5, 4)), float(rng.uniform(4, 7))
    shape = Shape(kind, cx, cy, angle, a, b, height, color, stem)
    if kind == "tee":
        # recentre so the placement point sits between bar and stem
        ox, oy = shape.to_world(0.0, (b + stem) / 2)
        shape.cx, shape.cy = 2 * cx - ox, 2 * cy - oy
    return shape


def _place(rng: np.random.Generator, n: int, cfg: SceneConfig):
    xs, ys = _pixel_grid(cfg.image_size)
    shapes, masks = [], []
    for _ in range(n):
        for _attempt in range(cfg.max_attempts):
            shape = _sample_shape(rng, cfg.image_size)
            mask = shape.sdf(xs, ys) <= 0
            area = mask.sum()
            if area == 0 or mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
                continue
            ok = all((mask & m).sum() <= cfg.max_overlap * min(area, m.sum()) for m in masks)
            if ok:
                shapes.append(shape)
                masks.append(mask)
                break
        else:
            return None
    return shapes, masks


def render(shapes: list[Shape], masks: list[np.ndarray], rng: np.random.Generator, size: int):
    """Clean render: (rgb 3xHxW, depth 1xHxW, instance mask HxW) in float64/uint8."""
    table = np.clip(rng.uniform(0.35, 0.55) + rng.uniform(-0.05, 0.05, size=3), 0, 1)
    rgb = np.broadcast_to(table[:, None, None], (3, size, size)).copy()
    depth = np.zeros((1, size, size))
    inst = np.zeros((size, size), dtype=np.uint8)
    for k, (shape, mask) in enumerate(zip(shapes, masks), start=1):
        rgb[:, mask] = np.asarray(shape.color)[:, None]
        depth[0, mask] = shape.height
        inst[mask] = k
    light = rng.uniform(-0.05, 0.05)
    rgb = np.clip(rgb + light + rng.normal(0.0, 0.02, size=rgb.shape), 0.0, 1.0)
    return rgb, depth, inst


def _hue_matrix(delta: float) -> np.ndarray:
    """Rotation by ``delta`` radians about the grey axis of RGB space."""
    k = np.ones(3) / math.sqrt(3)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return math.cos(delta) * np.eye(3) + math.sin(delta) * kx + (1 - math.cos(delta)) * np.outer(k, k)


def apply_shift(rgb: np.ndarray, depth: np.ndarray, knobs: ShiftKnobs, rng: np.random.Generator):
    """Sim-to-real appearance and sensor shift; the identity when every knob is zero."""
    rgb = np.einsum("ij,jhw->ihw", _hue_matrix(knobs.rgb_hue_delta), rgb)
    rgb = rgb + knobs.rgb_brightness_delta + knobs.rgb_texture_noise_sigma * rng.normal(size=rgb.shape)
    depth = depth + knobs.depth_gaussian_sigma * rng.normal(size=depth.shape)
    flips = rng.uniform(size=depth.shape) < knobs.depth_salt_pepper_rate
    salt = rng.uniform(size=depth.shape) < 0.5
    depth = np.where(flips, salt.astype(np.float64), depth)
    return np.clip(rgb, 0.0, 1.0), np.clip(depth, 0.0, 1.0)


def _ray_exits(shape: Shape, ox: float, oy: float, dirs: np.ndarray, limit: float) -> np.ndarray:
    """Distance from an interior point to the boundary along each row of ``dirs``.

    Marches in 0.25 px steps to bracket the first sign change, then bisects.
    Rays that never leave within ``limit`` give NaN.
    """
    ts = np.arange(0.0, limit + 0.25, 0.25)
    vals = shape.sdf(ox + ts[None, :] * dirs[:, :1], oy + ts[None, :] * dirs[:, 1:])
    outside = vals > 0
    hit = outside.any(axis=1)
    first = np.argmax(outside, axis=1)
    lo = ts[np.maximum(first - 1, 0)]
    hi = ts[first]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        out = shape.sdf(ox + mid * dirs[:, 0], oy + mid * dirs[:, 1]) > 0
        hi = np.where(out, mid, hi)
        lo = np.where(out, lo, mid)
    return np.where(hit, 0.5 * (lo + hi), np.nan)


def candidate_grasps(shape: Shape, object_id: int, cfg: SceneConfig) -> list[GraspRect]:
    """Antipodal grasps through each part centre of ``shape`` at every bin-centre angle."""
    cone = math.atan(cfg.friction)
    thetas = bin_center(np.arange(cfg.n_bins), cfg.n_bins)
    dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
    out = []
    for px, py in shape.part_centres():
        if shape.sdf(px, py) >= 0:
            continue
        t_pos = _ray_exits(shape, px, py, dirs, cfg.max_opening)
        t_neg = _ray_exits(shape, px, py, -dirs, cfg.max_opening)
        for b, theta in enumerate(thetas):
            if np.isnan(t_pos[b]) or np.isnan(t_neg[b]):
                continue
            d = dirs[b]
            width = t_pos[b] + t_neg[b] + 2 * cfg.jaw_margin
            if width > cfg.max_opening:
                continue
            n_pos = shape.normal(px + t_pos[b] * d[0], py + t_pos[b] * d[1])
            n_neg = shape.normal(px - t_neg[b] * d[0], py - t_neg[b] * d[1])
            dev = max(math.acos(np.clip(n_pos @ d, -1, 1)), math.acos(np.clip(-(n_neg @ d), -1, 1)))
            if dev > cone:
                continue
            mid = (t_pos[b] - t_neg[b]) / 2
            out.append(GraspRect(
                cx=float(px + mid * d[0]), cy=float(py + mid * d[1]), theta=float(theta), width=float(width),
                grasp_depth=shape.height / 2, quality=1.0 - 0.5 * dev / cone, object_id=object_id,
            ))
    return out


def closing_rect_mask(grasp: GraspRect, size: int, jaw_height: float) -> np.ndarray:
    xs, ys = _pixel_grid(size)
    c, s = math.cos(grasp.theta), math.sin(grasp.theta)
    px, py = xs - grasp.cx, ys - grasp.cy
    u = px * c + py * s
    v = -px * s + py * c
    return (np.abs(u) <= grasp.width / 2) & (np.abs(v) <= jaw_height / 2)


def filter_labels(grasps: list[GraspRect], instance_mask: np.ndarray, jaw_height: float = 6.0) -> list[GraspRect]:
    """Drop grasps whose closing rectangle leaves the image or touches a foreign object.

    Jaw tips must also land on free table so the gripper can descend.
    """
    size = instance_mask.shape[0]
    kept = []
    for g in grasps:
        corners = g.corners(jaw_height)
        if corners.min() < 0 or corners.max() > size:
            continue
        ids = instance_mask[closing_rect_mask(g, size, jaw_height)]
        if np.any((ids != 0) & (ids != g.object_id)):
            continue
        c, s = math.cos(g.theta), math.sin(g.theta)
        tips = [(g.cx + k * g.width / 2 * c, g.cy + k * g.width / 2 * s) for k in (-1, 1)]
        if any(instance_mask[min(int(y), size - 1), min(int(x), size - 1)] != 0 for x, y in tips):
            continue
        kept.append(g)
    return kept


def generate_scene(seed: int, domain: Domain | str, knobs: ShiftKnobs | None = None,
                   n_objects: int | None = None, cfg: SceneConfig | None = None,
                   shapes: list[Shape] | None = None) -> Scene:
    """Render one scene; a pure function of (seed, domain, knobs, n_objects, cfg).

    The layout and clean render depend only on ``seed``, so a sim and a real
    scene with the same seed differ only by the shift.  ``shapes`` bypasses
    random placement (used for hand-built fixtures).
    """
    domain = Domain(domain)
    cfg = cfg or SceneConfig()
    knobs = knobs or ShiftKnobs()
    rng = np.random.default_rng(seed)
    meta: dict = {}
    if shapes is None:
        n = int(rng.integers(cfg.min_objects, cfg.max_objects + 1)) if n_objects is None else n_objects
        if not 1 <= n <= 8:
            raise ValueError(f"n_objects must be in 1..8, got {n}")
        meta["n_requested"] = n
        placed = _place(rng, n, cfg)
        while placed is None:
            n -= 1
            meta["placement_retries"] = meta.get("placement_retries", 0) + 1
            log.info("scene %d: placement failed, retrying with %d objects", seed, n)
            if n < 1:
                raise RuntimeError(f"scene {seed}: cannot place even one object")
            placed = _place(rng, n, cfg)
        shapes, masks = placed
    else:
        xs, ys = _pixel_grid(cfg.image_size)
        masks = [s.sdf(xs, ys) <= 0 for s in shapes]
        meta["n_requested"] = len(shapes)
    meta["n_objects"] = len(shapes)
    rgb, depth, inst = render(shapes, masks, rng, cfg.image_size)
    if domain is Domain.REAL:
        rgb, depth = apply_shift(rgb, depth, knobs, np.random.default_rng([seed, 1]))
    grasps = []
    for k, shape in enumerate(shapes, start=1):
        grasps.extend(candidate_grasps(shape, k, cfg))
    grasps = filter_labels(grasps, inst, cfg.jaw_height)
    return Scene(rgb.astype(np.float32), depth.astype(np.float32), grasps, domain, int(seed), inst, meta)
