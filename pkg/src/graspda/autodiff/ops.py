"""Differentiable operations.

Every function takes :class:`Tensor` (or array-like) operands, computes the
forward value in float64 and registers a vector-Jacobian product on the active
tape.  Shape mismatches raise :class:`ContractViolation` quoting both shapes.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ContractViolation, Tensor, active_tape, as_tensor, make_result

EPS = 1e-7


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return make_result(a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    return make_result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ContractViolation(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result(np.array(out), (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ContractViolation(f"concat(axis={axis}): shapes {ref} and {t.shape} do not conform")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return make_result(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                       lambda g: tuple(np.split(g, splits, axis=ax)))


def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(x.data.sum(axis=axis)), (x,), vjp)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    if n == 0:
        raise ContractViolation(f"mean over an empty extent of shape {x.shape}")
    return mul(sum(x, axis), 1.0 / n)


def absolute(x) -> Tensor:
    x = as_tensor(x)
    return make_result(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


# ---------------------------------------------------------------- nonlinearities

def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    s = _softmax(x.data, axis)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), vjp)


# ---------------------------------------------------------------- losses

def binary_cross_entropy(p, q) -> Tensor:
    """Mean BCE of probabilities ``p`` against targets ``q``; ``p`` clamped to [EPS, 1-EPS]."""
    p = as_tensor(p)
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    q = np.broadcast_to(q, p.shape)
    if p.size == 0:
        raise ContractViolation("binary_cross_entropy of an empty tensor")
    inside = (p.data > EPS) & (p.data < 1.0 - EPS)
    pc = np.clip(p.data, EPS, 1.0 - EPS)
    loss = -(q * np.log(pc) + (1.0 - q) * np.log(1.0 - pc)).mean()

    def vjp(g):
        return (g * inside * (-q / pc + (1.0 - q) / (1.0 - pc)) / p.size,)

    return make_result(np.asarray(loss), (p,), vjp)


def cross_entropy(logits, targets) -> Tensor:
    """Mean categorical cross entropy of (N, K) logits against integer targets.

    The target probability is clamped to [EPS, 1-EPS] before the log.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != t.shape[0]:
        raise ContractViolation(f"cross_entropy: logits {logits.shape} vs targets {t.shape}")
    n = t.shape[0]
    s = _softmax(logits.data, axis=1)
    pt = s[np.arange(n), t]
    inside = (pt > EPS) & (pt < 1.0 - EPS)
    loss = -np.log(np.clip(pt, EPS, 1.0 - EPS)).mean()

    def vjp(g):
        d = s.copy()
        d[np.arange(n), t] -= 1.0
        return (g * d * inside[:, None] / n,)

    return make_result(np.asarray(loss), (logits,), vjp)


def smooth_l1(x, target, beta: float = 1.0) -> Tensor:
    """Mean Huber-style smooth L1 between ``x`` and a constant ``target``."""
    x = as_tensor(x)
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape != x.shape:
        raise ContractViolation(f"smooth_l1: shapes {x.shape} and {tgt.shape} do not conform")
    d = x.data - tgt
    ad = np.abs(d)
    quad = ad < beta
    val = np.where(quad, 0.5 * d * d / beta, ad - 0.5 * beta).mean()
    return make_result(np.asarray(val), (x,),
                       lambda g: (g * np.where(quad, d / beta, np.sign(d)) / x.size,))


# ---------------------------------------------------------------- vector ops

def l2_norm(x, axis=None) -> Tensor:
    """Euclidean norm over ``axis`` (all elements when None); zero-gradient at 0."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))

    def vjp(g):
        safe = np.where(n > 0, n, 1.0)
        gg = g if axis is None else np.expand_dims(g, axis)
        return (gg * np.where(n > 0, x.data / safe, 0.0),)

    out = n.reshape(()) if axis is None else np.squeeze(n, axis=axis)
    return make_result(out, (x,), vjp)


def cosine_similarity(a, b) -> Tensor:
    """Cosine similarity mapped to [0, 1]: ``(cos(a, b) + 1) / 2`` along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ContractViolation(f"cosine_similarity: shapes {a.shape} and {b.shape} do not conform")
    na = np.sqrt((a.data ** 2).sum(-1, keepdims=True))
    nb = np.sqrt((b.data ** 2).sum(-1, keepdims=True))
    if np.any(na == 0) or np.any(nb == 0):
        raise ContractViolation("cosine_similarity is undefined for a zero vector")
    dot = (a.data * b.data).sum(-1, keepdims=True)
    cos = dot / (na * nb)

    def vjp(g):
        g = np.expand_dims(g, -1) * 0.5
        ga = g * (b.data / (na * nb) - cos * a.data / na ** 2)
        gb = g * (a.data / (na * nb) - cos * b.data / nb ** 2)
        return ga, gb

    return make_result(0.5 * (cos[..., 0] + 1.0), (a, b), vjp)


# ---------------------------------------------------------------- convolution / pooling

def _pad(x: np.ndarray, p: int, mode: str) -> np.ndarray:
    if not p:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge" if mode == "edge" else "constant")


def _unpad(g: np.ndarray, p: int, mode: str) -> np.ndarray:
    """Adjoint of :func:`_pad`: fold halo gradients back onto the border."""
    if not p:
        return g
    if mode == "edge":
        g = g.copy()
        g[:, :, p, :] += g[:, :, :p, :].sum(axis=2)
        g[:, :, -p - 1, :] += g[:, :, -p:, :].sum(axis=2)
        g = g[:, :, p:-p, :]
        g[:, :, :, p] += g[:, :, :, :p].sum(axis=3)
        g[:, :, :, -p - 1] += g[:, :, :, -p:].sum(axis=3)
        return g[:, :, :, p:-p]
    return g[:, :, p:-p, p:-p]


def conv2d(x, w, b=None, stride: int = 1, padding: int = 0, pad_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation of (N, C, H, W) input with (O, C, kh, kw) weights.

    ``pad_mode`` is "zeros" or "edge" (replicate the border pixel).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ContractViolation(f"conv2d: input {x.shape} and weight {w.shape} do not conform")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ContractViolation(f"conv2d: kernel {w.shape} larger than padded input {x.shape}")
    xp = _pad(x.data, padding, pad_mode)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # channel-major columns (N, C*kh*kw, ho*wo) keep the output in NCHW without transposes
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, ho * wo)
    wmat = w.data.reshape(o, -1)
    out = np.matmul(wmat, cols)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (o,):
            raise ContractViolation(f"conv2d: bias {b.shape} vs {o} output channels")
        out += b.data[:, None]
    out = out.reshape(n, o, ho, wo)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g3 = g.reshape(n, o, ho * wo)
        gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            gx = _unpad(gxp, padding, pad_mode)
        if b is None:
            return gx, gw
        return gx, gw, g3.sum(axis=(0, 2))

    return make_result(out, inputs, vjp)


def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Averaging matrix with adaptive bins [floor(i*n/m), ceil((i+1)*n/m))."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def region_pool_matrix(lo: float, hi: float, n_out: int, n_cells: int) -> np.ndarray:
    """Adaptive averaging matrix restricted to cells [lo, hi) of an axis of length ``n_cells``."""
    lo = min(max(int(lo), 0), n_cells - 1)
    hi = min(max(int(hi), lo + 1), n_cells)
    m = np.zeros((n_out, n_cells))
    m[:, lo:hi] = _pool_matrix(hi - lo, n_out)
    return m


def adaptive_avg_pool(x, out_h: int, out_w: int) -> Tensor:
    """Average-pool (N, C, H, W) to (N, C, out_h, out_w) with adaptive bins."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ContractViolation(f"adaptive_avg_pool expects 4-D input, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ContractViolation(f"adaptive_avg_pool: output extent ({out_h}, {out_w}) must be >= 1")
    my = _pool_matrix(x.shape[2], out_h)
    mx = _pool_matrix(x.shape[3], out_w)
    out = np.einsum("ih,nchw,jw->ncij", my, x.data, mx, optimize=True)
    return make_result(out, (x,), lambda g: (np.einsum("ih,ncij,jw->nchw", my, g, mx, optimize=True),))


def roi_pool(x, rows: np.ndarray, cols: np.ndarray, batch_index: np.ndarray) -> Tensor:
    """Pool regions of a (N, C, H, W) map with per-region averaging matrices.

    ``rows`` is (R, out_h, H) and ``cols`` (R, out_w, W), as built by
    :func:`region_pool_matrix`; region r reads image ``batch_index[r]``.
    Returns (R, C, out_h, out_w).
    """
    x = as_tensor(x)
    bi = np.asarray(batch_index, dtype=np.int64)
    if rows.shape[2] != x.shape[2] or cols.shape[2] != x.shape[3] or len(bi) != len(rows):
        raise ContractViolation(f"roi_pool: matrices {rows.shape}/{cols.shape} vs feature map {x.shape}")
    n, c, h, w = x.shape
    r, oh, ow = len(bi), rows.shape[1], cols.shape[1]
    # combined kernel K[r, i*ow + j, h*W + w] = rows[r, i, h] * cols[r, j, w]
    kern = (rows[:, :, None, :, None] * cols[:, None, :, None, :]).reshape(r, oh * ow, h * w)
    xf = x.data.reshape(n, c, h * w)
    groups = [(img, np.flatnonzero(bi == img)) for img in np.unique(bi)]
    out = np.empty((r, c, oh * ow))
    for img, sel in groups:
        k = kern[sel].reshape(-1, h * w)
        out[sel] = (xf[img] @ k.T).reshape(c, len(sel), oh * ow).transpose(1, 0, 2)
    out = out.reshape(r, c, oh, ow)

    def vjp(g):
        g = g.reshape(r, c, oh * ow)
        gx = np.zeros((n, c, h * w))
        for img, sel in groups:
            gs = g[sel].transpose(1, 0, 2).reshape(c, -1)
            gx[img] = gs @ kern[sel].reshape(-1, h * w)
        return (gx.reshape(x.shape),)

    return make_result(out, (x,), vjp)


# ---------------------------------------------------------------- gradient reversal

def grad_reverse(x, coeff: float = 1.0) -> Tensor:
    """Identity forward; backward multiplies the upstream gradient by ``-coeff``."""
    x = as_tensor(x)
    if coeff < 0:
        raise ContractViolation(f"grad_reverse coefficient must be nonnegative, got {coeff}")
    if active_tape() is None:
        raise ContractViolation("grad_reverse requires an active tape")
    return make_result(x.data.copy(), (x,), lambda g: (-coeff * g,))


def identity(x) -> Tensor:
    """Recorded identity, the non-reversing twin of :func:`grad_reverse`."""
    x = as_tensor(x)
    return make_result(x.data.copy(), (x,), lambda g: (g,))
