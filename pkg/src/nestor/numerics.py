"""Differentiable computation substrate.

A small reverse-mode tape on top of numpy: `Tensor` nodes hold values and
an optional gradient slot, operations build the graph, `Tensor.backward`
walks it. Only the primitives the entity-detection network needs are
implemented; there is no general-purpose autodiff beyond them.

All operations accept arbitrary leading batch axes: a sequence op declared
for ``[L, d]`` also works on ``[B, L, d]`` (the sequence axis is always
``-2``, the feature axis ``-1``). Gradients accumulate additively when a
tensor is used more than once, which is what the shared parameter reuse in
the network relies on.

Test mode runs everything at float64 so the finite-difference gradient
checker is meaningful; training may use float32.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import special as _special

from .errors import EmptyInputError, LevelTooShortError, NonFiniteError, ShapeError

__all__ = [
    "Tensor",
    "Param",
    "Rng",
    "GruDirectionParams",
    "BiGruParams",
    "MlpParams",
    "no_grad",
    "constant",
    "linear_affine",
    "conv1d_valid",
    "tconv1d",
    "bigru_encode",
    "layer_norm",
    "softmax_lastdim",
    "gelu",
    "sigmoid",
    "tanh",
    "mean_pool",
    "mlp_apply",
    "finite_diff_gradcheck",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

class _GradMode(threading.local):
    """Per-thread autograd switch: concurrent read-only inference must not
    disturb graph construction on other threads."""

    enabled = True


_grad_mode = _GradMode()


class no_grad:
    """Context manager that skips graph construction (inference mode)."""

    def __enter__(self):
        self._prev = _grad_mode.enabled
        _grad_mode.enabled = False
        return self

    def __exit__(self, *exc):
        _grad_mode.enabled = self._prev
        return False


class Tensor:
    """Dense numeric array with shape, values and an optional grad slot."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, values, requires_grad=False, _parents=(), _vjp=None):
        self.values = np.asarray(values)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = _parents
        self._vjp: Optional[Callable] = _vjp

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def item(self):
        return self.values.item()

    def is_finite(self):
        return bool(np.isfinite(self.values).all())

    def detach(self):
        return Tensor(self.values)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: Optional[np.ndarray] = None):
        """Reverse-mode sweep from this node. ``seed`` defaults to ones and
        the node must be scalar-sized in that case."""
        if seed is None:
            if self.size != 1:
                raise ShapeError(
                    f"backward() without seed needs a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.values)
        order = _toposort(self)
        self.grad = np.asarray(seed) if self.grad is None else self.grad + seed
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
                else:
                    parent.grad = parent.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    def __rmul__(self, other):
        return mul(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def constant(values, dtype=None) -> Tensor:
    arr = np.asarray(values, dtype=dtype)
    return Tensor(arr)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(values, parents, vjp) -> Tensor:
    if _grad_mode.enabled and any(p.requires_grad for p in parents):
        return Tensor(values, requires_grad=True, _parents=tuple(parents), _vjp=vjp)
    return Tensor(values)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


@dataclass
class Param:
    """Named trainable tensor. Gradients accumulate additively across all
    uses within one step; the optimizer zeroes them between steps."""

    tensor: Tensor
    name: str
    trainable: bool = True

    def __post_init__(self):
        self.tensor.requires_grad = True

    @property
    def values(self):
        return self.tensor.values

    @values.setter
    def values(self, arr):
        self.tensor.values = np.asarray(arr)

    @property
    def grad(self):
        return self.tensor.grad

    @property
    def shape(self):
        return self.tensor.shape

    def zero_grad(self):
        self.tensor.grad = None


class Rng:
    """Deterministic random stream (PCG64). Identical seed gives an
    identical stream on every platform."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def substream(self, key: int) -> "Rng":
        rng = Rng.__new__(Rng)
        rng.seed = self.seed
        rng._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=(int(key),)))
        )
        return rng

    def uniform(self, low, high, shape, dtype=np.float64):
        return self._gen.uniform(low, high, size=shape).astype(dtype)

    def normal(self, loc, scale, shape, dtype=np.float64):
        return self._gen.normal(loc, scale, size=shape).astype(dtype)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high, size=shape)

    def shuffle(self, seq: list):
        self._gen.shuffle(seq)

    def choice(self, seq, p=None):
        idx = self._gen.choice(len(seq), p=p)
        return seq[int(idx)]

    def random(self):
        return float(self._gen.random())


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.values + b.values
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.values - b.values
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.values * b.values
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.values / b.values
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.values, a.shape),
            _unbroadcast(-g * a.values / (b.values * b.values), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _make(-a.values, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.values), (a,), lambda g: (g / a.values,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.values)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    out = np.maximum(a.values, floor)
    mask = (a.values > floor).astype(a.values.dtype)
    return _make(out, (a,), lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape[-1] != b.values.shape[-2]:
        raise ShapeError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.values, b.values)

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.values, -1, -2))
        gb = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return _make(a.values.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    return _make(np.swapaxes(a.values, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def transpose2d(a: Tensor) -> Tensor:
    return swapaxes(a, -1, -2)


def take(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice along `axis`, removing the axis."""
    out = np.take(a.values, index, axis=axis)

    def vjp(g):
        full = np.zeros_like(a.values)
        key = [slice(None)] * a.ndim
        key[axis] = index
        full[tuple(key)] = g
        return (full,)

    return _make(out, (a,), vjp)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    key = [slice(None)] * a.ndim
    key[axis] = slice(start, stop)
    key = tuple(key)
    out = a.values[key]

    def vjp(g):
        full = np.zeros_like(a.values)
        full[key] = g
        return (full,)

    return _make(out, (a,), vjp)


def take_lastdim(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather along the last axis with a constant integer index array."""
    idx = np.asarray(indices)
    out = np.take(a.values, idx, axis=-1)

    def vjp(g):
        full = np.zeros_like(a.values)
        flat_g = g.reshape(-1, idx.size)
        flat_full = full.reshape(-1, a.shape[-1])
        np.add.at(flat_full, (slice(None), idx.reshape(-1)), flat_g)
        return (full,)

    return _make(out, (a,), vjp)


def gather_nd(a: Tensor, indices: tuple) -> Tensor:
    """Fancy-index `a` with a tuple of constant integer arrays."""
    idx = tuple(np.asarray(i) for i in indices)
    out = a.values[idx]

    def vjp(g):
        full = np.zeros_like(a.values)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), vjp)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup `table[ids]` for a constant integer index array of any
    shape; gradients scatter-add back into the table."""
    t = table.tensor if isinstance(table, Param) else table
    idx = np.asarray(ids)
    out = t.values[idx]

    def vjp(g):
        full = np.zeros_like(t.values)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, t.shape[-1]))
        return (full,)

    return _make(out, (t,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(start, stop)
            grads.append(g[tuple(key)])
        return tuple(grads)

    return _make(out, tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.values for t in tensors], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, vjp)


def sum_axis(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return _make(out, (a,), vjp)


def mean_axis(a: Tensor, axis: int, keepdims=False) -> Tensor:
    n = a.shape[axis]
    return sum_axis(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad along one axis (used by the transposed convolution)."""
    pads = [(0, 0)] * a.ndim
    pads[axis] = (before, after)
    out = np.pad(a.values, pads)

    def vjp(g):
        key = [slice(None)] * a.ndim
        key[axis] = slice(before, before + a.shape[axis])
        return (g[tuple(key)],)

    return _make(out, (a,), vjp)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF form: gelu(x) = x * Phi(x), no tanh approximation."""
    v = x.values
    phi = 0.5 * (1.0 + _special.erf(v * _INV_SQRT2))
    out = v * phi

    def vjp(g):
        pdf = np.exp(-0.5 * v * v) * _INV_SQRT2PI
        return (g * (phi + v * pdf),)

    return _make(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    out = _special.expit(x.values)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.values)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


ACTIVATIONS = {"gelu": gelu, "sigmoid": sigmoid, "tanh": tanh}


# ---------------------------------------------------------------------------
# network primitives
# ---------------------------------------------------------------------------

def linear_affine(x: Tensor, w: Param, b: Param) -> Tensor:
    """y = x W^T + b with x: [..., d_in], W: [d_out, d_in], b: [d_out]."""
    wt, bt = w.tensor, b.tensor
    if x.shape[-1] != wt.shape[-1]:
        raise ShapeError(f"linear_affine: x {x.shape} does not match W {wt.shape}")
    squeeze = x.ndim == 1
    if squeeze:
        x = reshape(x, (1, x.shape[0]))
    y = matmul(x, transpose2d(wt)) + bt
    if squeeze:
        y = reshape(y, (y.shape[-1],))
    return y


def conv1d_valid(seq: Tensor, k: int, w: Param, b: Param) -> Tensor:
    """Valid 1-d convolution, stride 1: output position i aggregates input
    positions i..i+k-1. seq: [..., L, d_in], W: [d_out, k, d_in]."""
    L = seq.shape[-2]
    if k < 1:
        raise ShapeError(f"conv1d_valid: kernel {k} must be >= 1")
    if L < k:
        raise LevelTooShortError(f"conv1d_valid: sequence length {L} shorter than kernel {k}")
    d_out, kk, d_in = w.shape
    if kk != k or d_in != seq.shape[-1]:
        raise ShapeError(f"conv1d_valid: W {w.shape} does not match k={k}, seq {seq.shape}")
    windows = concat([slice_axis(seq, -2, j, j + L - k + 1) for j in range(k)], axis=-1)
    w_flat = reshape(w.tensor, (d_out, k * d_in))
    y = matmul(windows, transpose2d(w_flat)) + b.tensor
    return y


def tconv1d(seq: Tensor, k: int, w: Param, b: Param) -> Tensor:
    """Transposed counterpart of conv1d_valid: [..., L, c_in] -> [..., L+k-1, c_out]
    with W: [c_in, k, c_out]. Sharing W (unbiased) with a conv makes the two
    maps exact adjoints of each other."""
    if k < 1:
        raise ShapeError(f"tconv1d: kernel {k} must be >= 1")
    L = seq.shape[-2]
    c_in, kk, c_out = w.shape
    if kk != k or c_in != seq.shape[-1]:
        raise ShapeError(f"tconv1d: W {w.shape} does not match k={k}, seq {seq.shape}")
    total = L + k - 1
    acc = None
    for j in range(k):
        part = matmul(seq, take(w.tensor, j, axis=1))  # [..., L, c_out]
        part = pad_axis(part, -2, j, total - L - j)
        acc = part if acc is None else acc + part
    return acc + b.tensor


@dataclass
class GruDirectionParams:
    w_x: Param  # [3h, d_in], gate order r, z, n
    b_x: Param  # [3h]
    w_h: Param  # [3h, h]
    b_h: Param  # [3h]

    @property
    def hidden(self):
        return self.w_h.shape[-1]


@dataclass
class BiGruParams:
    fw: GruDirectionParams
    bw: GruDirectionParams


def _gru_direction(seq: Tensor, p: GruDirectionParams, reverse: bool,
                   mask: Optional[np.ndarray] = None) -> Tensor:
    """One GRU direction over axis -2. `mask` ([..., L], 1=real, 0=pad)
    freezes the carried state on padded steps.

    The input-side gate projections are hoisted out of the recurrence as a
    single matmul over all timesteps; only the hidden-side projection runs
    per step."""
    L = seq.shape[-2]
    h = p.hidden
    lead = seq.shape[:-2]
    gates_x = linear_affine(seq, p.w_x, p.b_x) + p.b_h.tensor  # [..., L, 3h]
    xrz_all = slice_axis(gates_x, -1, 0, 2 * h)
    xn_all = slice_axis(gates_x, -1, 2 * h, 3 * h)
    w_h_t = transpose2d(p.w_h.tensor)
    state = constant(np.zeros(lead + (h,), dtype=seq.dtype))
    order = range(L - 1, -1, -1) if reverse else range(L)
    outs: list = [None] * L
    for t in order:
        prev = state
        gh = matmul(prev, w_h_t)
        rz = sigmoid(take(xrz_all, t, axis=-2) + slice_axis(gh, -1, 0, 2 * h))
        r = slice_axis(rz, -1, 0, h)
        z = slice_axis(rz, -1, h, 2 * h)
        n = tanh(take(xn_all, t, axis=-2) + r * slice_axis(gh, -1, 2 * h, 3 * h))
        state = n + z * (prev - n)  # == (1 - z) * n + z * prev
        if mask is not None:
            m = constant(mask[..., t : t + 1].astype(seq.dtype))
            state = m * state + (1.0 - m) * prev
        outs[t] = state
    return stack(outs, axis=-2)


def bigru_encode(seq: Tensor, params: BiGruParams,
                 mask: Optional[np.ndarray] = None) -> Tensor:
    """Bidirectional GRU: concatenation of a forward and a backward pass,
    each using the r/z/n gate recurrences. seq: [..., L, d_in] -> [..., L, 2h]."""
    if seq.shape[-2] == 0:
        raise EmptyInputError("bigru_encode: empty sequence")
    squeeze = seq.ndim == 2
    if squeeze:
        seq = reshape(seq, (1,) + seq.shape)
        mask = mask[None, :] if mask is not None else None
    fw = _gru_direction(seq, params.fw, reverse=False, mask=mask)
    bw = _gru_direction(seq, params.bw, reverse=True, mask=mask)
    out = concat([fw, bw], axis=-1)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def layer_norm(x: Tensor, gamma: Param, beta: Param, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis, then affine."""
    mu = mean_axis(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean_axis(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma.tensor + beta.tensor


def softmax_lastdim(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-stable softmax over the last axis. `mask` (bool, True=keep) sends
    masked logits to -inf before normalization; each row must keep at least
    one entry."""
    if mask is not None:
        neg = np.where(mask, 0.0, -np.inf).astype(x.dtype)
        x = x + constant(neg)
    shift = np.max(x.values, axis=-1, keepdims=True)  # constant under the softmax shift invariance
    e = exp(x - constant(shift))
    return e / sum_axis(e, axis=-1, keepdims=True)


def mean_pool(seq: Tensor, window: Optional[int] = None) -> Tensor:
    """Whole-sequence mean over axis -2, or a sliding mean of width `window`
    producing length L - window + 1."""
    L = seq.shape[-2]
    if L == 0:
        raise EmptyInputError("mean_pool: empty sequence")
    if window is None:
        return mean_axis(seq, axis=-2)
    if window < 1:
        raise ShapeError(f"mean_pool: window {window} must be >= 1")
    if window > L:
        raise LevelTooShortError(f"mean_pool: window {window} exceeds length {L}")
    acc = None
    for j in range(window):
        part = slice_axis(seq, -2, j, j + L - window + 1)
        acc = part if acc is None else acc + part
    return acc * (1.0 / window)


def masked_mean_pool(seq: Tensor, mask: np.ndarray) -> Tensor:
    """Whole-sequence mean over axis -2 counting only mask==1 positions."""
    m = mask.astype(seq.dtype)
    counts = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
    weighted = seq * constant(m[..., None])
    return sum_axis(weighted, axis=-2) * constant(1.0 / counts)


@dataclass
class MlpParams:
    """Alternating affine layers and a fixed activation; the final layer is
    linear (no activation)."""

    layers: list  # list of (Param W, Param b)
    activation: str = "gelu"


def mlp_apply(x: Tensor, spec: MlpParams) -> Tensor:
    if not spec.layers:
        raise ShapeError("mlp_apply: empty layer spec")
    act = ACTIVATIONS[spec.activation]
    h = x
    for i, (w, b) in enumerate(spec.layers):
        h = linear_affine(h, w, b)
        if i < len(spec.layers) - 1:
            h = act(h)
    return h


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def finite_diff_gradcheck(f: Callable[[Tensor], Tensor], x: Tensor,
                          h: float = 1e-5) -> float:
    """Compare the analytic gradient of a scalar-valued `f` at `x` against
    central finite differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|,
    |numeric|). Meant to run at float64; float32 inputs will not reach tight
    tolerances.
    """
    x.zero_grad()
    y = f(x)
    if y.size != 1:
        raise ShapeError(f"finite_diff_gradcheck: f must be scalar-valued, got {y.shape}")
    if not y.is_finite():
        raise NonFiniteError("finite_diff_gradcheck: f(x) is not finite")
    y.backward()
    analytic = np.zeros_like(x.values) if x.grad is None else np.asarray(x.grad, dtype=float)

    numeric = np.zeros_like(x.values, dtype=float)
    flat_x = x.values.reshape(-1)
    flat_n = numeric.reshape(-1)
    with no_grad():  # numeric probes only need values, not the tape
        for i in range(flat_x.size):
            orig = flat_x[i]
            flat_x[i] = orig + h
            hi = float(f(x).values.item())
            flat_x[i] = orig - h
            lo = float(f(x).values.item())
            flat_x[i] = orig
            flat_n[i] = (hi - lo) / (2.0 * h)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0
