"""Differentiable operations over :class:`mgi.autodiff.Tensor`.

Every op returns a new Tensor and registers a backward closure when any
input is gradient-tracked. Binary arithmetic broadcasts numpy-style; the
backward pass sums gradients over broadcast axes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf, expit

from .autodiff import NonFiniteError, ShapeError, Tensor, make_node
from . import scan as scan_kernels

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return make_node(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return make_node(a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """2-D matrix product with the usual transpose-product gradients."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# reductions and shaping


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return make_node(np.asarray(out, dtype=np.float64), (a,), bwd)


def tmean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis: int) -> Tensor:
    """Max along an axis; gradient routes to the first argmax of each slice."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return make_node(out, (a,), bwd)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return make_node(out, (a,), bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = a.data[sl].copy()

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return make_node(out, (a,), bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(p.squeeze(axis) for p in parts)

    return make_node(out, tensors, bwd)


def take_diag(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"take_diag expects a square matrix, got {a.shape}")
    out = np.diagonal(a.data).copy()

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.fill_diagonal(ga, g)
        return (ga,)

    return make_node(out, (a,), bwd)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow -> inf -> NonFiniteError
        out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return make_node(out, (a,), lambda g: (g / a.data,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return make_node(out, (a,), lambda g: (g * (a.data > 0.0),))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = expit(a.data)
    out = a.data * s

    def bwd(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return make_node(out, (a,), bwd)


def gelu(a) -> Tensor:
    """Exact erf-form GELU."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
        return (g * (cdf + a.data * pdf),)

    return make_node(out, (a,), bwd)


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return make_node(out, (a,), lambda g: (g * expit(a.data),))


_ACTIVATIONS = {"silu": silu, "gelu": gelu, "sigmoid": sigmoid, "relu": relu}


def activation(a, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(a)


# ---------------------------------------------------------------------------
# normalizations


def softmax(a, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis."""
    a = as_tensor(a)
    _require_finite(a, "softmax input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return make_node(out, (a,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit population variance."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over a zero-length axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm gamma/beta must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return make_node(out, (x, gamma, beta), bwd)


def l2_normalize(v, min_norm: float = 1e-12) -> Tensor:
    """Scale a vector to unit Euclidean norm; degenerate inputs raise."""
    v = as_tensor(v)
    norm = float(np.linalg.norm(v.data))
    if norm < min_norm:
        raise ValueError("cannot L2-normalize a (near-)zero vector")
    out = v.data / norm

    def bwd(g):
        return ((g - out * float(np.dot(out.ravel(), g.ravel()))) / norm,)

    return make_node(out, (v,), bwd)


def _require_finite(t: Tensor, what: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {what}")


# ---------------------------------------------------------------------------
# convolutions


def conv1d_depthwise_causal(x, kernel, bias) -> Tensor:
    """Per-channel causal 1-D convolution.

    ``x`` is (T, C), ``kernel`` (K, C), ``bias`` (C,). The input is
    left-padded with K-1 zeros, so output t sees only positions <= t.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    T, C = x.shape
    K = kernel.shape[0]
    if kernel.shape[1] != C or bias.shape != (C,):
        raise ShapeError("conv1d channel mismatch")
    xpad = np.concatenate([np.zeros((K - 1, C)), x.data], axis=0)
    out = np.broadcast_to(bias.data, (T, C)).copy()
    for k in range(K):
        out += kernel.data[k] * xpad[k : k + T]

    def bwd(g):
        dxpad = np.zeros_like(xpad)
        dk = np.empty_like(kernel.data)
        for k in range(K):
            dxpad[k : k + T] += kernel.data[k] * g
            dk[k] = (g * xpad[k : k + T]).sum(axis=0)
        return dxpad[K - 1 :], dk, g.sum(axis=0)

    return make_node(out, (x, kernel, bias), bwd)


def conv2d_transpose(x, kernel, stride: int) -> Tensor:
    """Non-overlapping transposed conv: kernel size equals the stride.

    ``x`` is (C, H, W), ``kernel`` (C, C_out, K, K) with K == stride;
    output (C_out, K*H, K*W). Each input pixel expands into a K x K block.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    C, H, W = x.shape
    Ck, Co, K, K2 = kernel.shape
    if Ck != C:
        raise ShapeError("conv2d_transpose input channel mismatch")
    if K != stride or K2 != stride:
        raise ShapeError("conv2d_transpose requires kernel size == stride")
    blocks = np.einsum("chw,cokl->ohkwl", x.data, kernel.data)
    out = blocks.reshape(Co, H * K, W * K)

    def bwd(g):
        gb = g.reshape(Co, H, K, W, K)
        dx = np.einsum("ohkwl,cokl->chw", gb, kernel.data)
        dkern = np.einsum("chw,ohkwl->cokl", x.data, gb)
        return dx, dkern

    return make_node(out, (x, kernel), bwd)


# ---------------------------------------------------------------------------
# selective scan


def selective_scan(abar, bx, C, D, x, parallel: bool = True) -> Tensor:
    """Differentiable selective-scan recurrence with skip readout.

    Shapes: abar, bx (T, d_inner, d_state); C (T, d_state); D (d_inner,);
    x (T, d_inner). Forward states come from the parallel or sequential
    kernel; the backward pass runs the exact adjoint recurrence.
    """
    abar, bx, C, D, x = map(as_tensor, (abar, bx, C, D, x))
    T = abar.shape[0]
    if parallel:
        h = scan_kernels.scan_states_parallel(abar.data, bx.data)
    else:
        h = scan_kernels.scan_states_sequential(abar.data, bx.data)
    y = scan_kernels.scan_output(h, C.data, D.data, x.data)

    def bwd(gy):
        dabar = np.empty_like(abar.data)
        dbx = np.empty_like(bx.data)
        dC = np.einsum("ti,tis->ts", gy, h)
        dD = (gy * x.data).sum(axis=0)
        dx = gy * D.data[None, :]
        dh_next = np.zeros(abar.shape[1:], dtype=np.float64)
        for t in range(T - 1, -1, -1):
            dh = gy[t][:, None] * C.data[t][None, :] + dh_next
            h_prev = h[t - 1] if t > 0 else np.zeros_like(dh)
            dabar[t] = dh * h_prev
            dbx[t] = dh
            dh_next = abar.data[t] * dh
        return dabar, dbx, dC, dD, dx

    return make_node(y, (abar, bx, C, D, x), bwd)


# ---------------------------------------------------------------------------
# composites


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def logsumexp_all(S) -> Tensor:
    """log sum exp over every entry, with a constant max shift for stability."""
    S = as_tensor(S)
    m = float(S.data.max())
    return add(log(tsum(exp(sub(S, m)))), m)


def logsumexp_axis(S, axis: int) -> Tensor:
    S = as_tensor(S)
    m = S.data.max(axis=axis, keepdims=True)
    red = log(tsum(exp(sub(S, Tensor(m))), axis=axis))
    return add(red, Tensor(np.squeeze(m, axis=axis)))
