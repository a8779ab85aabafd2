"""Tape-based autodiff in a few lines, and what a gradient reversal layer does.

    python demos/01_autodiff_and_grl.py
"""
import numpy as np

from graspda import autodiff as ad
from graspda.autodiff import Tape

rng = np.random.default_rng(0)

# A conv -> relu -> sigmoid domain classifier on a random feature map.
w_feat = ad.parameter(rng.normal(size=(4, 3, 3, 3)) * 0.3)
w_clf = ad.parameter(rng.normal(size=(1, 4, 1, 1)))
x = rng.normal(size=(2, 3, 8, 8))
labels = np.array([1.0, 0.0])  # sim = 1, real = 0


def grads(reverse: bool):
    with Tape() as tape:
        feat = ad.relu(ad.conv2d(x, w_feat, padding=1))
        if reverse:
            feat = ad.grad_reverse(feat, 1.0)
        p = ad.sigmoid(ad.conv2d(feat, w_clf))
        target = np.broadcast_to(labels[:, None, None, None], p.shape)
        loss = ad.binary_cross_entropy(p, target)
        g = tape.backward(loss)
    return loss.item(), g[w_feat], g[w_clf]


loss, gf, gc = grads(reverse=False)
_, gf_rev, gc_rev = grads(reverse=True)
print(f"domain loss {loss:.4f}")
print("classifier gradient unchanged by GRL:", np.array_equal(gc, gc_rev))
print("feature gradient negated by GRL:     ", np.array_equal(gf, -gf_rev))

# Finite-difference check of the feature-extractor gradient (identity path).
h = 1e-5
idx = (1, 2, 0, 1)
old = w_feat.data[idx]
w_feat.data[idx] = old + h
lp, _, _ = grads(False)
w_feat.data[idx] = old - h
lm, _, _ = grads(False)
w_feat.data[idx] = old
print(f"d loss / d w{idx}: autodiff {gf[idx]:.8f}  central difference {(lp - lm) / (2 * h):.8f}")
