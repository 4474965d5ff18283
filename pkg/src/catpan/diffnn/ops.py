"""The closed op set: convolution, ReLU, elementwise arithmetic, fixed-kernel
blur, decimation, bicubic upsampling and reductions.

Every op accepts ``Var`` or plain arrays and returns a ``Var``. Under an
active :class:`~catpan.diffnn.tape.Tape` it records a vector-Jacobian
product that only materialises gradients for inputs that need them.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import resample
from ..errors import ShapeError, ValidationError
from .tape import Param, Var, active_tape


def _val(x) -> np.ndarray:
    if isinstance(x, Param):
        return x.f64()
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _needs(x) -> bool:
    return isinstance(x, Var) and x.requires_grad


def _emit(value: np.ndarray, inputs: tuple, make_vjp, op: str) -> Var:
    tape = active_tape()
    needs = tuple(_needs(i) for i in inputs)
    if tape is None or not any(needs):
        return Var(value)
    out = Var(value, requires_grad=True)
    tape.record(out, inputs, make_vjp(needs), op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ------------------------------------------------------------ elementwise


def add(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(av + bv, (a, b), lambda n: lambda g: (
        _unbroadcast(g, av.shape) if n[0] else None,
        _unbroadcast(g, bv.shape) if n[1] else None,
    ), "add")


def sub(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(av - bv, (a, b), lambda n: lambda g: (
        _unbroadcast(g, av.shape) if n[0] else None,
        _unbroadcast(-g, bv.shape) if n[1] else None,
    ), "sub")


def mul(a, b) -> Var:
    av, bv = _val(a), _val(b)
    return _emit(av * bv, (a, b), lambda n: lambda g: (
        _unbroadcast(g * bv, av.shape) if n[0] else None,
        _unbroadcast(g * av, bv.shape) if n[1] else None,
    ), "mul")


def div(a, b) -> Var:
    av, bv = _val(a), _val(b)
    out = av / bv
    return _emit(out, (a, b), lambda n: lambda g: (
        _unbroadcast(g / bv, av.shape) if n[0] else None,
        _unbroadcast(-g * out / bv, bv.shape) if n[1] else None,
    ), "div")


def scale(a, c: float) -> Var:
    av = _val(a)
    c = float(c)
    return _emit(c * av, (a,), lambda n: lambda g: (c * g,), "scale")


def relu(a) -> Var:
    av = _val(a)
    mask = av > 0
    return _emit(np.where(mask, av, 0.0), (a,), lambda n: lambda g: (g * mask,), "relu")


# ------------------------------------------------------------- reductions


def sum_all(a) -> Var:
    av = _val(a)
    return _emit(np.array(av.sum()), (a,), lambda n: lambda g: (np.full(av.shape, float(g)),), "sum")


def mean(a) -> Var:
    av = _val(a)
    inv = 1.0 / av.size
    return _emit(np.array(av.mean()), (a,), lambda n: lambda g: (np.full(av.shape, float(g) * inv),), "mean")


def l1_loss(a, b) -> Var:
    """Mean absolute difference; the subgradient at ties is 0."""
    av, bv = _val(a), _val(b)
    if av.shape != bv.shape:
        raise ShapeError(f"l1_loss shapes differ: {av.shape} vs {bv.shape}")
    diff = av - bv
    inv = 1.0 / diff.size
    sign = np.sign(diff)

    def make(n):
        def vjp(g):
            s = float(g) * inv * sign
            return (s if n[0] else None, -s if n[1] else None)
        return vjp

    return _emit(np.array(np.abs(diff).mean()), (a, b), make, "l1")


# ------------------------------------------------------------ convolution


def _im2col(x: np.ndarray, k: int, pad: int) -> tuple[np.ndarray, int, int]:
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    c, hp, wp = x.shape
    ho, wo = hp - k + 1, wp - k + 1
    cols = sliding_window_view(x, (k, k), axis=(1, 2)).transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    return cols, ho, wo


def conv2d_value(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, padding: str = "same") -> np.ndarray:
    """Untraced cross-correlation used by both the op and its backward pass."""
    s_out, s_in, k, _ = w.shape
    pad = _padding(padding, k)
    cols, ho, wo = _im2col(x, k, pad)
    out = w.reshape(s_out, s_in * k * k) @ cols
    if b is not None:
        out += b[:, None]
    return out.reshape(s_out, ho, wo)


def _padding(padding: str, k: int) -> int:
    if padding == "same":
        return k // 2
    if padding == "valid":
        return 0
    raise ValidationError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, w, b=None, padding: str = "same") -> Var:
    """2-D cross-correlation (no kernel flip), zero padded for ``"same"``.

    ``x`` is S_in x H x W, ``w`` is S_out x S_in x k x k with odd ``k``.
    """
    xv, wv = _val(x), _val(w)
    bv = None if b is None else _val(b)
    if xv.ndim != 3 or wv.ndim != 4:
        raise ShapeError(f"conv2d expects 3-D input and 4-D weights, got {xv.shape}, {wv.shape}")
    s_out, s_in, k, k2 = wv.shape
    if k != k2 or k % 2 == 0:
        raise ValidationError(f"conv2d needs square odd kernels, got {k}x{k2}")
    if s_in != xv.shape[0]:
        raise ShapeError(f"conv2d weight expects {s_in} input channels, input has {xv.shape[0]}")
    pad = _padding(padding, k)
    cols, ho, wo = _im2col(xv, k, pad)
    out = wv.reshape(s_out, -1) @ cols
    if bv is not None:
        out += bv[:, None]
    out = out.reshape(s_out, ho, wo)

    def make(n):
        def vjp(g):
            g2 = g.reshape(s_out, -1)
            gx = gw = gb = None
            if n[0]:
                # correlate the gradient with the flipped, transposed kernel
                wt = np.ascontiguousarray(wv.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
                full = k - 1 - pad
                gx = conv2d_value(np.pad(g, ((0, 0), (full, full), (full, full))), wt, None, "valid")
            if n[1]:
                gw = (g2 @ cols.T).reshape(wv.shape)
            if bv is not None and n[2]:
                gb = g2.sum(axis=1)
            return (gx, gw, gb)
        return vjp

    return _emit(out, (x, w, b), make, "conv2d")


# ---------------------------------------------------- fixed linear operators


def blur(x, kernels) -> Var:
    xv = _val(x)
    return _emit(resample.blur(xv, kernels), (x,),
                 lambda n: lambda g: (resample.blur_adjoint(g, kernels),), "blur")


def decimate(x, r: int) -> Var:
    xv = _val(x)
    return _emit(resample.decimate(xv, r), (x,),
                 lambda n: lambda g: (resample.decimate_adjoint(g, r, xv.shape),), "decimate")


def upsample(x, r: int) -> Var:
    xv = _val(x)
    return _emit(resample.upsample(xv, r), (x,),
                 lambda n: lambda g: (resample.upsample_adjoint(g, r),), "upsample")
