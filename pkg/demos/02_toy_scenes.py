"""Render a sim scene and its shifted real twin, with the generated grasp labels.

    python demos/02_toy_scenes.py [out.png]
"""
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from graspda.scenes import DEFAULT_SHIFT, Domain, generate_scene

out = sys.argv[1] if len(sys.argv) > 1 else "toy_scenes.png"
sim = generate_scene(4, Domain.SIM)
real = generate_scene(4, Domain.REAL, DEFAULT_SHIFT)
print(f"{len(sim.grasps)} grasp labels on {int(sim.instance_mask.max())} objects")
print("knobs:", DEFAULT_SHIFT)


def draw(ax, g):
    c, s = np.cos(g.theta), np.sin(g.theta)
    dx, dy = c * g.width / 2, s * g.width / 2
    ax.plot([g.cx - dx, g.cx + dx], [g.cy - dy, g.cy + dy], "-", color="lime", linewidth=0.8)


fig, axes = plt.subplots(2, 2, figsize=(7, 7))
for row, sc in enumerate((sim, real)):
    axes[row, 0].imshow(np.clip(sc.rgb.transpose(1, 2, 0), 0, 1))
    axes[row, 1].imshow(sc.depth[0], cmap="viridis")
    for g in sim.grasps:
        draw(axes[row, 0], g)
    axes[row, 0].set_title(f"{sc.domain.value} rgb")
    axes[row, 1].set_title(f"{sc.domain.value} depth")
for ax in axes.flat:
    ax.set_axis_off()
fig.tight_layout()
fig.savefig(out, dpi=120)
print("wrote", out)
