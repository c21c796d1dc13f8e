"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A Tape records operations in creation order (a valid topological order);
``Tape.backward`` walks the record once in reverse, so each node is visited
exactly once. Tapes are built per forward pass and discarded afterwards.
A tape created with ``record=False`` evaluates forward values only, which is
the inference fast path.

Complex quantities never live on the tape: the spectral convolution keeps its
weights as separate real/imaginary leaves and hides the FFTs inside a single
recorded operation with a hand-derived adjoint.
"""

from __future__ import annotations

import numpy as np
import scipy.fft as _sfft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

from .validation import as_double_array, broadcastable, check_finite

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Variable:
    """A value participating in reverse-mode differentiation."""

    __slots__ = ("data", "tape", "node_id", "requires_grad", "_needs_grad")

    def __init__(self, data, tape, node_id, requires_grad, needs_grad):
        self.data = data
        self.tape = tape
        self.node_id = node_id
        self.requires_grad = requires_grad
        self._needs_grad = needs_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Variable(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self.tape))

    def __radd__(self, other):
        return add(_lift(other, self.tape), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self.tape))

    def __rsub__(self, other):
        return sub(_lift(other, self.tape), self)

    def __mul__(self, other):
        return mul(self, _lift(other, self.tape))

    def __rmul__(self, other):
        return mul(_lift(other, self.tape), self)

    def __truediv__(self, other):
        return div(self, _lift(other, self.tape))

    def __rtruediv__(self, other):
        return div(_lift(other, self.tape), self)

    def __neg__(self):
        return neg(self)


class _Node:
    __slots__ = ("parents", "backward_fn", "requires_grad")

    def __init__(self, parents, backward_fn, requires_grad=False):
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad


class Tape:
    """Wengert list of recorded operations."""

    def __init__(self, record=True):
        self.record = record
        self._nodes = []
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def _new_leaf(self, data, requires_grad):
        if not self.record:
            return Variable(data, self, -1, requires_grad, requires_grad)
        nid = len(self._nodes)
        self._nodes.append(_Node((), None, requires_grad))
        return Variable(data, self, nid, requires_grad, requires_grad)

    def variable(self, data, requires_grad=False, name="variable"):
        arr = as_double_array(data, name)
        check_finite(arr, name)
        return self._new_leaf(arr, requires_grad)

    def constant(self, data, name="constant"):
        return self.variable(data, requires_grad=False, name=name)

    def _emit(self, data, parents, backward_fn):
        needs = any(p._needs_grad for p in parents)
        if not (self.record and needs):
            return Variable(data, self, -1, False, needs)
        nid = len(self._nodes)
        self._nodes.append(_Node(tuple(p.node_id for p in parents), backward_fn))
        return Variable(data, self, nid, False, True)

    def backward(self, loss):
        """Run reverse accumulation from a scalar loss.

        Returns a map {node_id: gradient} covering every requires-grad leaf
        reachable from the loss. Gradient shapes equal value shapes.
        """
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if not self.record:
            raise ValueError("tape was created with record=False; graph is detached")
        if loss.node_id < 0:
            raise ValueError("loss is detached from the tape")
        if loss.data.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        if self._consumed:
            raise ValueError("tape already consumed by a backward pass")

        grads = {loss.node_id: np.ones((), dtype=np.float64)}
        leaf_grads = {}
        nodes = self._nodes
        for nid in range(loss.node_id, -1, -1):
            g = grads.pop(nid, None)
            node = nodes[nid]
            if g is None:
                nodes[nid] = None  # free saved activations the loss never reached
                continue
            if node.backward_fn is None:
                if node.requires_grad:
                    leaf_grads[nid] = g
                continue
            parent_grads = node.backward_fn(g)
            # a tape is single-use: freeing the closure releases the saved
            # activations while the sweep is still running, keeping the
            # working set near the live frontier
            nodes[nid] = None
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None or pid < 0:  # detached subgraphs take no gradient
                    continue
                acc = grads.get(pid)
                grads[pid] = pg if acc is None else acc + pg
        self._consumed = True
        return leaf_grads


def _lift(x, tape):
    if isinstance(x, Variable):
        return x
    return tape.constant(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    if not broadcastable(a.data.shape, b.data.shape):
        raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not broadcast")
    if a.tape is not b.tape:
        raise ValueError(f"{op}: operands live on different tapes")


# ---------------------------------------------------------------------------
# elementwise operations


def add(a, b):
    _check_broadcast(a, b, "add")
    out = a.data + b.data
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return a.tape._emit(out, (a, b), backward)


def sub(a, b):
    _check_broadcast(a, b, "sub")
    out = a.data - b.data
    sa, sb = a.data.shape, b.data.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return a.tape._emit(out, (a, b), backward)


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out = a.data * b.data
    da, db = a.data, b.data

    def backward(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return a.tape._emit(out, (a, b), backward)


def div(a, b):
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    check_finite(out, "div")
    da, db = a.data, b.data

    def backward(g):
        return _unbroadcast(g / db, da.shape), _unbroadcast(-g * da / (db * db), db.shape)

    return a.tape._emit(out, (a, b), backward)


def neg(a):
    return a.tape._emit(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    check_finite(out, "exp")
    return a.tape._emit(out, (a,), lambda g: (g * out,))


def ln(a):
    if np.any(a.data <= 0):
        raise ValueError("ln: input must be strictly positive")
    out = np.log(a.data)
    da = a.data
    return a.tape._emit(out, (a,), lambda g: (g / da,))


def sin(a):
    da = a.data
    return a.tape._emit(np.sin(da), (a,), lambda g: (g * np.cos(da),))


def tanh(a):
    out = np.tanh(a.data)
    return a.tape._emit(out, (a,), lambda g: (g * (1.0 - out * out),))


def gelu(a):
    """Exact GELU, x * Phi(x), with the erf formulation."""
    da = a.data
    phi_big = 0.5 * (1.0 + erf(da * _INV_SQRT2))
    out = da * phi_big

    def backward(g):
        pdf = np.exp(-0.5 * da * da) * _INV_SQRT2PI
        return (g * (phi_big + da * pdf),)

    return a.tape._emit(out, (a,), backward)


def sqrt(a):
    if np.any(a.data < 0):
        raise ValueError("sqrt: input must be non-negative")
    out = np.sqrt(a.data)

    def backward(g):
        # subgradient 0 at exactly zero keeps equal-field losses finite
        return (np.where(out > 0, 0.5 * g / np.where(out > 0, out, 1.0), 0.0),)

    return a.tape._emit(out, (a,), backward)


def absval(a):
    da = a.data
    return a.tape._emit(np.abs(da), (a,), lambda g: (g * np.sign(da),))


def pow_scalar(a, p):
    if np.any(a.data < 0):
        raise ValueError("pow_scalar: input must be non-negative")
    da = a.data
    out = da**p

    def backward(g):
        return (g * p * np.where(da > 0, da, 1.0) ** (p - 1.0) * (da > 0),)

    return a.tape._emit(out, (a,), backward)


ELEMENTWISE_UNARY = {
    "neg": neg,
    "exp": exp,
    "ln": ln,
    "sin": sin,
    "tanh": tanh,
    "gelu": gelu,
}

ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_name, a, b=None):
    """Dispatch an elementwise op by name."""
    if op_name in ELEMENTWISE_BINARY:
        if b is None:
            raise ValueError(f"{op_name} needs two operands")
        return ELEMENTWISE_BINARY[op_name](a, b)
    if op_name in ELEMENTWISE_UNARY:
        if b is not None:
            raise ValueError(f"{op_name} takes one operand")
        return ELEMENTWISE_UNARY[op_name](a)
    raise ValueError(f"unknown elementwise op {op_name!r}")


# ---------------------------------------------------------------------------
# reductions and reshaping


def total_sum(a):
    shape = a.data.shape

    def backward(g):
        return (np.broadcast_to(g, shape).astype(np.float64, copy=True),)

    return a.tape._emit(np.asarray(a.data.sum()), (a,), backward)


def sum_axes(a, axes, keepdims=False):
    axes = tuple(axes)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axes)
        return (np.broadcast_to(gg, shape).astype(np.float64, copy=True),)

    return a.tape._emit(out, (a,), backward)


def mean_all(a):
    n = a.data.size
    return total_sum(a) * (1.0 / n)


# ---------------------------------------------------------------------------
# linear maps


def linear(x, w, b):
    """y = x @ w + b over the last axis; x [..., in], w [in, out], b [out]."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ValueError(
            f"linear: inner dimensions disagree, {x.data.shape[-1]} vs {w.data.shape[0]}"
        )
    if b.data.shape != (w.data.shape[1],):
        raise ValueError(f"linear: bias shape {b.data.shape} != ({w.data.shape[1]},)")
    out = x.data @ w.data + b.data
    xd, wd = x.data, w.data

    def backward(g):
        gx = g @ wd.T
        gw = np.tensordot(xd.reshape(-1, xd.shape[-1]), g.reshape(-1, g.shape[-1]), axes=(0, 0))
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return x.tape._emit(out, (x, w, b), backward)


def _channel_matmul(x, w):
    """[..., Ci, H, W] x [Ci, Co] -> [..., Co, H, W] via batched GEMM.

    Reshape keeps operands contiguous so no hidden transpose copies occur.
    """
    lead = x.shape[:-3]
    ci = x.shape[-3]
    hw = x.shape[-2] * x.shape[-1]
    flat = x.reshape((-1, ci, hw))
    out = np.matmul(w.T[None], flat)
    return out.reshape(lead + (w.shape[1],) + x.shape[-2:])


def channel_linear(x, w, b=None):
    """Pointwise mixing of the channel axis of a field [..., C, H, W]."""
    ci, co = w.data.shape
    if x.data.shape[-3] != ci:
        raise ValueError(f"channel_linear: expected {ci} input channels, got {x.data.shape[-3]}")
    out = _channel_matmul(x.data, w.data)
    if b is not None:
        out += b.data[:, None, None]
    xd, wd = x.data, w.data

    def backward(g):
        gx = _channel_matmul(g, wd.T)
        hw = g.shape[-2] * g.shape[-1]
        gw = np.tensordot(
            xd.reshape((-1, ci, hw)), g.reshape((-1, co, hw)), axes=([0, 2], [0, 2])
        )
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return x.tape._emit(out, parents, backward)


def select_channels(x, idx):
    """Gather channels of a field [..., C, H, W]."""
    idx = tuple(idx)
    total = x.data.shape[-3]
    if any(i < 0 or i >= total for i in idx):
        raise ValueError(f"select_channels: index out of range for {total} channels")
    out = x.data[..., idx, :, :]
    shape = x.data.shape

    def backward(g):
        gx = np.zeros(shape, dtype=np.float64)
        for j, i in enumerate(idx):
            gx[..., i, :, :] += g[..., j, :, :]
        return (gx,)

    return x.tape._emit(out, (x,), backward)


def embed_channels(x, idx, total):
    """Scatter channels of [..., c, H, W] into a zero field with `total` channels."""
    idx = tuple(idx)
    if len(idx) != x.data.shape[-3]:
        raise ValueError("embed_channels: index count must match channel count")
    out = np.zeros(x.data.shape[:-3] + (total,) + x.data.shape[-2:], dtype=np.float64)
    for j, i in enumerate(idx):
        out[..., i, :, :] = x.data[..., j, :, :]

    def backward(g):
        return (g[..., idx, :, :],)

    return x.tape._emit(out, (x,), backward)


# ---------------------------------------------------------------------------
# periodic convolutions


def _wrap_pad(arr, ph, pw):
    pad = [(0, 0)] * (arr.ndim - 2) + [(ph, ph), (pw, pw)]
    return np.pad(arr, pad, mode="wrap")


def periodic_correlate(arr, kernel):
    """Cross-correlate the last two axes with wrap-around indexing.

    Coefficients are indexed by offset from the kernel centre, matching how
    finite-difference formulas are written. Plain numpy in, plain numpy out.
    """
    kh, kw = kernel.shape
    windows = sliding_window_view(_wrap_pad(arr, kh // 2, kw // 2), (kh, kw), axis=(-2, -1))
    return np.einsum("...xykl,kl->...xy", windows, kernel)


def depthwise_fixed_conv(x, kernel):
    """Apply one fixed 2-D stencil kernel to every channel; grads flow to x only."""
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    out = periodic_correlate(x.data, kernel)
    flipped = kernel[::-1, ::-1]

    def backward(g):
        return (periodic_correlate(g, flipped),)

    return x.tape._emit(out, (x,), backward)


def conv2d_periodic(x, w, b=None):
    """Trainable periodic convolution; x [..., Ci, H, W], w [Ci, Co, kh, kw]."""
    ci, co, kh, kw = w.data.shape
    if x.data.shape[-3] != ci:
        raise ValueError(f"conv2d_periodic: expected {ci} input channels, got {x.data.shape[-3]}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d_periodic: kernel extents must be odd")
    windows = sliding_window_view(
        _wrap_pad(x.data, kh // 2, kw // 2), (kh, kw), axis=(-2, -1)
    )  # [..., Ci, H, W, kh, kw]
    out = np.einsum("...ixykl,iokl->...oxy", windows, w.data)
    if b is not None:
        out = out + b.data[:, None, None]
    wd = w.data

    def backward(g):
        hh, ww = g.shape[-2], g.shape[-1]
        gw = np.einsum(
            "bixykl,boxy->iokl",
            windows.reshape((-1, ci, hh, ww, kh, kw)),
            g.reshape(-1, co, hh, ww),
        )
        w_flip = wd[:, :, ::-1, ::-1]
        g_windows = sliding_window_view(_wrap_pad(g, kh // 2, kw // 2), (kh, kw), axis=(-2, -1))
        gx = np.einsum("...oxykl,iokl->...ixy", g_windows, w_flip)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=tuple(i for i in range(g.ndim) if i != g.ndim - 3)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return x.tape._emit(out, parents, backward)


# ---------------------------------------------------------------------------
# spectral convolution


def _column_weights(wr, w_full):
    """Hermitian duplication factors of the half-spectrum columns."""
    weights = np.full(wr, 2.0)
    weights[0] = 1.0
    if w_full % 2 == 0:
        weights[-1] = 1.0
    return weights


def _rfft2_adjoint(gbar):
    """Adjoint of unscaled rfft2 as a real-linear map, for a real primal.

    Uses the identity Re(ifft2(pad(Z))) == irfft2(Z / D) with D the column
    duplication weights, so only half-complex transforms are needed.
    """
    h = gbar.shape[-2]
    wr = gbar.shape[-1]
    w_full = 2 * (wr - 1)
    weights = _column_weights(wr, w_full)
    return (h * w_full) * np.fft.irfft2(gbar / weights, s=(h, w_full))


def _irfft2_adjoint(g, wr):
    """Adjoint of irfft2 (backward norm) as a real-linear map onto the half spectrum."""
    h, w_full = g.shape[-2], g.shape[-1]
    return _sfft.rfft2(g, axes=(-2, -1)) * (_column_weights(wr, w_full) / (h * w_full))


def spectral_conv(x, w1r, w1i, w2r, w2i, modes1, modes2):
    """Mode-truncated spectral convolution: rfft2, per-mode channel mixing, irfft2.

    Weights come in two blocks covering the low-frequency corners of the half
    spectrum, stored as separate real and imaginary leaves of shape
    [Ci, Co, modes1, modes2].
    """
    h, w_full = x.data.shape[-2], x.data.shape[-1]
    ci, co = w1r.data.shape[0], w1r.data.shape[1]
    if x.data.shape[-3] != ci:
        raise ValueError(f"spectral_conv: expected {ci} input channels, got {x.data.shape[-3]}")
    if modes1 > h // 2 or modes2 > w_full // 2:
        raise ValueError(
            f"spectral_conv: modes ({modes1},{modes2}) exceed grid Nyquist ({h // 2},{w_full // 2})"
        )
    wr = w_full // 2 + 1

    spec = _sfft.rfft2(x.data, axes=(-2, -1))
    x1 = spec[..., :modes1, :modes2]
    x2 = spec[..., h - modes1 :, :modes2]
    w1 = w1r.data + 1j * w1i.data
    w2 = w2r.data + 1j * w2i.data
    out_spec = np.zeros(x.data.shape[:-3] + (co, h, wr), dtype=np.complex128)
    out_spec[..., :modes1, :modes2] = np.einsum("...ixy,ioxy->...oxy", x1, w1)
    out_spec[..., h - modes1 :, :modes2] = np.einsum("...ixy,ioxy->...oxy", x2, w2)
    out = np.fft.irfft2(out_spec, s=(h, w_full))

    def backward(g):
        ybar = _irfft2_adjoint(g, wr)
        y1 = ybar[..., :modes1, :modes2]
        y2 = ybar[..., h - modes1 :, :modes2]
        y1f = y1.reshape(-1, co, modes1, modes2)
        y2f = y2.reshape(-1, co, modes1, modes2)
        gw1 = np.einsum("bixy,boxy->ioxy", np.conj(x1).reshape(y1f.shape[:1] + (ci, modes1, modes2)), y1f)
        gw2 = np.einsum("bixy,boxy->ioxy", np.conj(x2).reshape(y2f.shape[:1] + (ci, modes1, modes2)), y2f)
        xbar_spec = np.zeros(x.data.shape[:-3] + (ci, h, wr), dtype=np.complex128)
        xbar_spec[..., :modes1, :modes2] = np.einsum("...oxy,ioxy->...ixy", y1, np.conj(w1))
        xbar_spec[..., h - modes1 :, :modes2] = np.einsum("...oxy,ioxy->...ixy", y2, np.conj(w2))
        gx = _rfft2_adjoint(xbar_spec)
        return gx, gw1.real, gw1.imag, gw2.real, gw2.imag

    return x.tape._emit(out, (x, w1r, w1i, w2r, w2i), backward)
