"""Dense tensors with reverse-mode automatic differentiation.

Everything the two trainable networks need lives here: elementwise ops, a
dense layer, same-padded 3x3 convolution, 2x2 max pooling, an LSTM cell,
softmax cross-entropy, Adam, weight initializers and a finite-difference
gradient checker. Values are float32 by default; build tensors from float64
data for high-precision gradient checks.

Tensors are treated as immutable once they enter a graph; only ``grad`` is
written during a backward pass, and a single backward pass runs
single-threaded over its own graph. Sharing trained parameters across
threads for inference is safe.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError

DEFAULT_DTYPE = np.float32

_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    """Disable graph construction (inference paths)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _tracing() -> bool:
    return _GRAD_ENABLED[-1]


class Tensor:
    """A dense array plus an optional same-shape gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "_softmax_of")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw array data, not another Tensor")
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self._softmax_of: Tensor | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in {what}")
        return self

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this (scalar) tensor into the graph."""
        if seed is None:
            if self.data.size != 1:
                raise DimensionError("backward() without seed needs a scalar tensor")
            seed = np.ones_like(self.data)
        self.assert_finite("backward root")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        _accumulate(self, np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operators ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    if _tracing() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


# ---- elementwise ops ---------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")

        def bw(g):
            _accumulate(a, g)
            _accumulate(b, g)

        return _make(a.data + b.data, (a, b), bw)
    bval = float(b)

    def bws(g):
        _accumulate(a, g)

    return _make(a.data + bval, (a,), bws)


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")

        def bw(g):
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)

        return _make(a.data * b.data, (a, b), bw)
    bval = float(b)

    def bws(g):
        _accumulate(a, g * bval)

    return _make(a.data * bval, (a,), bws)


def power(a: Tensor, exponent) -> Tensor:
    p = float(exponent)

    def bw(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(a.data ** p, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), bw)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bw(g):
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), bw)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes through unchanged strictly inside the range."""
    out_data = np.clip(a.data, lo, hi)

    def bw(g):
        inside = (a.data > lo) & (a.data < hi)
        _accumulate(a, g * inside.astype(a.data.dtype))

    return _make(out_data, (a,), bw)


def tsum(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        _accumulate(a, np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean(), dtype=a.data.dtype), (a,), bw)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def bw(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def flatten(a: Tensor) -> Tensor:
    """Collapse a [C,H,W] tensor to [F], or a batched [B,C,H,W] to [B,F]."""
    if a.data.ndim == 4:
        return reshape(a, (a.shape[0], -1))
    return reshape(a, (-1,))


# ---- activations -------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    def bw(g):
        _accumulate(a, g * (a.data > 0))

    return _make(np.maximum(a.data, 0), (a,), bw)


def _sigmoid_raw(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_raw(a.data)

    def bw(g):
        _accumulate(a, g * s * (1.0 - s))

    return _make(s, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - t * t))

    return _make(t, (a,), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis; accepts a vector or a batch of row vectors."""
    if a.data.ndim not in (1, 2):
        raise DimensionError(f"softmax expects rank 1 or 2, got shape {a.shape}")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(a, s * (g - dot))

    out = _make(s, (a,), bw)
    out._softmax_of = a
    return out


# ---- layers ------------------------------------------------------------


def dense(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weights @ x + bias`` for x of shape [n] or a batch [B,n]."""
    if weights.data.ndim != 2 or bias.data.ndim != 1:
        raise DimensionError("dense: weights must be [m,n] and bias [m]")
    m, n = weights.shape
    if bias.shape[0] != m:
        raise DimensionError(f"dense: bias {bias.shape} does not match weights {weights.shape}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != n:
        raise DimensionError(f"dense: input {x.shape} does not match weights {weights.shape}")
    out_data = x.data @ weights.data.T + bias.data

    def bw(g):
        if x.data.ndim == 1:
            _accumulate(weights, np.outer(g, x.data))
            _accumulate(bias, g)
            _accumulate(x, weights.data.T @ g)
        else:
            _accumulate(weights, g.T @ x.data)
            _accumulate(bias, g.sum(axis=0))
            _accumulate(x, g @ weights.data)

    return _make(out_data, (x, weights, bias), bw)


def conv2d(x: Tensor, kernel: Tensor) -> Tensor:
    """Same-padded 3x3 cross-correlation.

    x: [C_in,H,W] or batched [B,C_in,H,W]; kernel: [C_out,C_in,3,3].
    Output keeps the spatial size (zero padding 1).
    """
    if kernel.data.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel must be [C_out,C_in,3,3], got {kernel.shape}")
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"conv2d: input must be rank 3 or 4, got shape {x.shape}")
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    b, c_in, h, w = xd.shape
    c_out = kernel.shape[0]
    if kernel.shape[1] != c_in:
        raise DimensionError(
            f"conv2d: kernel expects {kernel.shape[1]} input channels, input has {c_in}"
        )
    k = kernel.data
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    acc = np.zeros((c_out, b, h, w), dtype=xd.dtype)
    for i in range(3):
        for j in range(3):
            acc += np.tensordot(k[:, :, i, j], xp[:, :, i : i + h, j : j + w], axes=([1], [1]))
    out_data = acc.transpose(1, 0, 2, 3)
    if not batched:
        out_data = out_data[0]

    def bw(g):
        gb = g if batched else g[None]
        if kernel.requires_grad:
            dk = np.empty_like(k)
            for i in range(3):
                for j in range(3):
                    dk[:, :, i, j] = np.tensordot(
                        gb, xp[:, :, i : i + h, j : j + w], axes=([0, 2, 3], [0, 2, 3])
                    )
            _accumulate(kernel, dk)
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    dxp[:, :, i : i + h, j : j + w] += np.tensordot(
                        gb, k[:, :, i, j], axes=([1], [0])
                    ).transpose(0, 3, 1, 2)
            dx = dxp[:, :, 1 : 1 + h, 1 : 1 + w]
            _accumulate(x, dx if batched else dx[0])

    return _make(out_data, (x, kernel), bw)


def maxpool2x2(x: Tensor) -> Tensor:
    """Non-overlapping 2x2 max pooling; trailing odd rows/columns are dropped.

    The backward pass routes each window's gradient to its first maximal
    element in row-major order.
    """
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"maxpool2x2: input must be rank 3 or 4, got shape {x.shape}")
    batched = x.data.ndim == 4
    xd = x.data if batched else x.data[None]
    b, c, h, w = xd.shape
    if h < 2 or w < 2:
        raise DimensionError(f"maxpool2x2: spatial size {h}x{w} is smaller than the window")
    h2, w2 = h // 2, w // 2
    win = (
        xd[:, :, : 2 * h2, : 2 * w2]
        .reshape(b, c, h2, 2, w2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(b, c, h2, w2, 4)
    )
    idx = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if not batched:
        out_data = out_data[0]

    def bw(g):
        gb = g if batched else g[None]
        dwin = np.zeros((b, c, h2, w2, 4), dtype=xd.dtype)
        np.put_along_axis(dwin, idx[..., None], gb[..., None], axis=-1)
        dx = np.zeros_like(xd)
        dx[:, :, : 2 * h2, : 2 * w2] = (
            dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
        )
        _accumulate(x, dx if batched else dx[0])

    return _make(out_data, (x,), bw)


# ---- losses ------------------------------------------------------------


def cross_entropy(probs: Tensor, label) -> Tensor:
    """Negative log likelihood of the labeled class, ``-log(probs[label])``.

    Accepts a probability vector with an integer label, or a batch of row
    vectors with a label per row (the batch loss is the mean). When ``probs``
    is the output of :func:`softmax`, the gradient is computed against the
    softmax input in the numerically stable combined form, and the forward
    value is evaluated from the logits via log-sum-exp.
    """
    d = probs.data
    if d.ndim == 1:
        labels = np.asarray([int(label)])
        rows = d[None]
    elif d.ndim == 2:
        labels = np.asarray(label, dtype=np.int64).reshape(-1)
        if labels.shape[0] != d.shape[0]:
            raise DimensionError("cross_entropy: one label per row required")
        rows = d
    else:
        raise DimensionError(f"cross_entropy expects rank 1 or 2, got shape {probs.shape}")
    n, k = rows.shape
    if labels.min() < 0 or labels.max() >= k:
        raise DimensionError(f"cross_entropy: label out of range for {k} classes")

    logits = probs._softmax_of
    if logits is not None:
        z = logits.data if logits.data.ndim == 2 else logits.data[None]
        zmax = z.max(axis=-1, keepdims=True)
        lse = np.log(np.exp(z - zmax).sum(axis=-1)) + zmax[:, 0]
        loss = (lse - z[np.arange(n), labels]).mean()

        def bw_fused(g):
            ds = rows.copy()
            ds[np.arange(n), labels] -= 1.0
            ds *= float(g) / n
            _accumulate(logits, ds if logits.data.ndim == 2 else ds[0])

        return _make(np.asarray(loss, dtype=d.dtype), (logits,), bw_fused)

    picked = rows[np.arange(n), labels]
    loss = -np.log(picked).mean()

    def bw(g):
        dp = np.zeros_like(rows)
        dp[np.arange(n), labels] = -float(g) / (n * picked)
        _accumulate(probs, dp if d.ndim == 2 else dp[0])

    return _make(np.asarray(loss, dtype=d.dtype), (probs,), bw)


# ---- LSTM cell ----------------------------------------------------------


@dataclass
class LSTMParams:
    """Stacked gate parameters, gate order (input, forget, candidate, output)."""

    wx: Tensor  # [4u, d]
    wh: Tensor  # [4u, u]
    b: Tensor  # [4u]

    @property
    def units(self) -> int:
        return self.wh.shape[1]

    @property
    def input_dim(self) -> int:
        return self.wx.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.wx, self.wh, self.b]


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LSTMParams) -> tuple[Tensor, Tensor]:
    """One LSTM cell update; returns (h_t, c_t), differentiable through time."""
    u = params.units
    d = params.input_dim
    if x.shape != (d,):
        raise DimensionError(f"lstm_step: input {x.shape} does not match parameter dim {d}")
    if h_prev.shape != (u,) or c_prev.shape != (u,):
        raise DimensionError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape} must be ({u},)")
    wx, wh, bias = params.wx, params.wh, params.b
    z = wx.data @ x.data + wh.data @ h_prev.data + bias.data
    gi = _sigmoid_raw(z[:u])
    gf = _sigmoid_raw(z[u : 2 * u])
    gc = np.tanh(z[2 * u : 3 * u])
    go = _sigmoid_raw(z[3 * u :])
    c_data = gf * c_prev.data + gi * gc
    tc = np.tanh(c_data)
    h_data = go * tc

    def bw_c(g):
        # g is the total dL/dc_t: direct uses plus the path through h_t,
        # which topological order guarantees was already added.
        di = g * gc * gi * (1.0 - gi)
        df = g * c_prev.data * gf * (1.0 - gf)
        dg = g * gi * (1.0 - gc * gc)
        dz = np.concatenate([di, df, dg])
        if wx.requires_grad:
            dwx = np.zeros_like(wx.data)
            dwx[: 3 * u] = np.outer(dz, x.data)
            _accumulate(wx, dwx)
        if wh.requires_grad:
            dwh = np.zeros_like(wh.data)
            dwh[: 3 * u] = np.outer(dz, h_prev.data)
            _accumulate(wh, dwh)
        if bias.requires_grad:
            db = np.zeros_like(bias.data)
            db[: 3 * u] = dz
            _accumulate(bias, db)
        _accumulate(x, wx.data[: 3 * u].T @ dz)
        _accumulate(h_prev, wh.data[: 3 * u].T @ dz)
        _accumulate(c_prev, g * gf)

    c_t = _make(c_data, (x, h_prev, c_prev, wx, wh, bias), bw_c)

    def bw_h(g):
        do = g * tc * go * (1.0 - go)
        if wx.requires_grad:
            dwx = np.zeros_like(wx.data)
            dwx[3 * u :] = np.outer(do, x.data)
            _accumulate(wx, dwx)
        if wh.requires_grad:
            dwh = np.zeros_like(wh.data)
            dwh[3 * u :] = np.outer(do, h_prev.data)
            _accumulate(wh, dwh)
        if bias.requires_grad:
            db = np.zeros_like(bias.data)
            db[3 * u :] = do
            _accumulate(bias, db)
        _accumulate(x, wx.data[3 * u :].T @ do)
        _accumulate(h_prev, wh.data[3 * u :].T @ do)
        _accumulate(c_t, g * go * (1.0 - tc * tc))

    h_t = _make(h_data, (c_t, x, h_prev, wx, wh, bias), bw_h)
    return h_t, c_t


# ---- Adam ----------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment buffers; ``step_count`` increments once per update."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
        return state


def adam_update(params: list[Tensor], grads: list[np.ndarray], state: AdamState):
    """Apply one Adam step with bias correction; deterministic given inputs.

    A non-finite gradient rejects the whole update before any parameter is
    touched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_update: params, grads and state lengths differ")
    gs = []
    for p, g in zip(params, grads):
        ga = g.grad if isinstance(g, Tensor) else np.asarray(g)
        if ga is None or ga.shape != p.data.shape:
            raise DimensionError("adam_update: gradient shape does not match parameter")
        if not np.all(np.isfinite(ga)):
            raise NumericError("adam_update: non-finite gradient, update rejected")
        gs.append(ga)
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, gs, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# ---- initializers --------------------------------------------------------


def kaiming_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def uniform_tensor(shape: tuple[int, ...], bound: float, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> Tensor:
    data = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros_tensor(shape: tuple[int, ...], dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def init_lstm_params(
    input_dim: int,
    units: int,
    rng: np.random.Generator,
    dtype=DEFAULT_DTYPE,
    forget_bias: float = 1.0,
) -> LSTMParams:
    """Uniform +-1/sqrt(units) weights, zero biases except the forget gate."""
    bound = 1.0 / math.sqrt(units)
    wx = uniform_tensor((4 * units, input_dim), bound, rng, dtype)
    wh = uniform_tensor((4 * units, units), bound, rng, dtype)
    b = np.zeros(4 * units, dtype=dtype)
    b[units : 2 * units] = forget_bias
    return LSTMParams(wx=wx, wh=wh, b=Tensor(b, requires_grad=True))


# ---- gradient checking -----------------------------------------------


def grad_check(fn, inputs: list[Tensor], h: float = 1e-6) -> float:
    """Max relative error between autodiff and central finite differences.

    ``fn`` maps the given tensors to a scalar Tensor. Use float64 inputs;
    float32 rounding noise swamps the comparison. The relative error
    denominator is floored at 1e-3 so near-zero gradients are compared
    absolutely.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    out.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    worst = 0.0
    with no_grad():
        for t, g in zip(inputs, grads):
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = fn(*inputs).item()
                flat[i] = orig - h
                f_minus = fn(*inputs).item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * h)
                ad = float(gflat[i])
                rel = abs(fd - ad) / max(abs(fd), abs(ad), 1e-3)
                worst = max(worst, rel)
    return worst
