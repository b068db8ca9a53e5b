"""Dense float64 tensors with tape-based reverse-mode differentiation.

Arrays follow the numpy convention of a leading batch axis: a sequence is
``(time, channels)`` and a batch of sequences is ``(batch, time, channels)``.
Every sequence primitive acts on the last two axes and broadcasts over the
rest.

A :class:`Tensor` is either *detached* (``tape is None``) or bound to a
:class:`Tape`.  Operations whose inputs are all detached record nothing, so
running a forward pass with plain tensors is the no-grad mode.

    >>> tape = Tape()
    >>> w = tape.param("w", np.array([[2.0]]))
    >>> loss = sum_all(matmul(Tensor([[3.0]]), w))
    >>> backward(loss, tape)["w"]
    array([[3.]])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

PADDING_MODES = ("causal", "same", "none")


class Tensor:
    __slots__ = ("data", "tape", "node", "meta")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None, meta=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim > 3:
            raise DimensionError(f"tensors are rank <= 3, got shape {data.shape}", axis="rank")
        if 0 in data.shape:
            raise DimensionError(f"empty tensor of shape {data.shape}", axis="time")
        self.data = data
        self.tape = tape
        self.node = node
        self.meta = meta if meta is not None else {}

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        where = "detached" if self.tape is None else f"node={self.node}"
        return f"Tensor(shape={self.shape}, {where})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


@dataclass
class Node:
    op: str
    inputs: tuple[int | None, ...]
    shape: tuple[int, ...]
    vjp: Callable | None


class Tape:
    """Ordered record of operations for one forward/backward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.names: dict[int, str] = {}

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def param(self, name: str, value) -> Tensor:
        """Register a named leaf whose gradient ``backward`` reports."""
        data = np.asarray(value, dtype=np.float64)
        node = self._push(Node("leaf", (), data.shape, None))
        self.names[node] = name
        return Tensor(data, self, node)

    def mark(self, tensor: Tensor, name: str) -> Tensor:
        """Report the gradient w.r.t. an intermediate tensor under ``name``."""
        if tensor.tape is not self:
            raise ContractError("can only mark tensors recorded on this tape")
        self.names[tensor.node] = name
        return tensor

    def record(self, op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        node = self._push(Node(op, ids, np.shape(data), vjp))
        return Tensor(data, self, node)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        if loss.tape is not self:
            raise ContractError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node: np.ones(loss.shape)}
        named: dict[str, np.ndarray] = {}
        for nid in range(loss.node, -1, -1):
            g = grads.pop(nid, None)
            if nid in self.names and g is not None:
                named[self.names[nid]] = g
            node = self.nodes[nid]
            if g is None or node.vjp is None:
                continue
            for pid, pg in zip(node.inputs, node.vjp(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        for nid, name in self.names.items():
            if name not in named:
                named[name] = np.zeros(self.nodes[nid].shape)
        return named


def backward(loss: Tensor, tape: Tape) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every named leaf and marked tensor.

    Names registered on the tape but unreachable from ``loss`` get zeros.
    """
    return tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ContractError("inputs are recorded on different tapes")
            tape = t.tape
    return tape


def _emit(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _tape_of(inputs)
    if tape is None:
        return Tensor(data)
    return tape.record(op, data, inputs, vjp)


def custom_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Record a fused operation defined elsewhere (losses use this).

    ``vjp(g)`` must return one gradient (or None) per input.
    """
    return _emit(op, data, [as_tensor(t) for t in inputs], vjp)


def _sum_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to a parameter shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    return g


# --------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvSpec:
    kernel_size: int
    dilation: int = 1
    stride: int = 1
    padding: str = "causal"
    out_channels: int | None = None

    def __post_init__(self):
        if self.kernel_size < 1 or self.dilation < 1 or self.stride < 1:
            raise ConfigurationError(f"kernel_size, dilation and stride must be >= 1: {self}")
        if self.padding not in PADDING_MODES:
            raise ConfigurationError(f"padding must be one of {PADDING_MODES}, got {self.padding!r}")
        if self.padding == "causal" and self.stride != 1:
            raise ConfigurationError("causal padding requires stride 1")

    def pads(self) -> tuple[int, int]:
        total = (self.kernel_size - 1) * self.dilation
        if self.padding == "causal":
            return total, 0
        if self.padding == "same":
            return total // 2, total - total // 2
        return 0, 0


def conv1d(x: Tensor, w: Tensor, b: Tensor, spec: ConvSpec) -> Tensor:
    """Dilated 1-D convolution (cross-correlation) over the time axis.

    ``w`` has shape ``(kernel, in_channels, out_channels)`` and tap ``j``
    reads ``x_pad[t*stride + j*dilation]``.  With causal padding the pad is
    ``(k-1)*d`` zeros on the left, so output ``t`` is
    ``sum_i w[k-1-i] . x[t - d*i]`` and never sees the future.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k, cin, cout = _check_conv(x, w, b, spec)
    d, s = spec.dilation, spec.stride
    left, right = spec.pads()
    T = x.shape[-2]
    lead = x.shape[:-2]
    xp = np.pad(x.data, [(0, 0)] * len(lead) + [(left, right), (0, 0)])
    t_out = (T + left + right - (k - 1) * d - 1) // s + 1
    if t_out < 1:
        raise DimensionError(f"input length {T} too short for kernel {k} dilation {d}", axis="time")
    stop = (t_out - 1) * s + 1
    taps = [xp[..., i * d: i * d + stop: s, :] for i in range(k)]
    cols = taps[0] if k == 1 else np.concatenate(taps, axis=-1)
    w2 = w.data.reshape(k * cin, cout)
    out = cols @ w2 + b.data

    def vjp(g):
        gcols = g @ w2.T
        gxp = np.zeros(xp.shape)
        for i in range(k):
            gxp[..., i * d: i * d + stop: s, :] += gcols[..., i * cin:(i + 1) * cin]
        gx = gxp[..., left:left + T, :]
        gw = (cols.reshape(-1, k * cin).T @ g.reshape(-1, cout)).reshape(k, cin, cout)
        gb = g.reshape(-1, cout).sum(axis=0)
        return gx, gw, gb

    return _emit("conv1d", out, (x, w, b), vjp)


def _check_conv(x: Tensor, w: Tensor, b: Tensor, spec: ConvSpec):
    if w.ndim != 3:
        raise DimensionError(f"conv weight must be (kernel, in, out), got {w.shape}", axis="kernel")
    k, cin, cout = w.shape
    if x.ndim < 2:
        raise DimensionError(f"conv input must be (..., time, channels), got {x.shape}", axis="channels")
    if x.shape[-1] != cin:
        raise DimensionError(f"input has {x.shape[-1]} channels, weight expects {cin}", axis="channels")
    if k != spec.kernel_size:
        raise DimensionError(f"weight kernel {k} != spec kernel {spec.kernel_size}", axis="kernel")
    if spec.out_channels is not None and spec.out_channels != cout:
        raise DimensionError(f"weight gives {cout} outputs, spec wants {spec.out_channels}", axis="out_channels")
    if b.shape != (cout,):
        raise DimensionError(f"bias shape {b.shape} != ({cout},)", axis="out_channels")
    return k, cin, cout


def conv1d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 2) -> Tensor:
    """Transposed convolution with ``stride == kernel``: each input step emits
    ``kernel`` output steps, step ``j`` scaled by ``w[j]``."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 3:
        raise DimensionError(f"weight must be (kernel, in, out), got {w.shape}", axis="kernel")
    k, cin, cout = w.shape
    if k != stride:
        raise ConfigurationError(f"unsupported transposed conv: stride {stride} != kernel {k}")
    if x.shape[-1] != cin:
        raise DimensionError(f"input has {x.shape[-1]} channels, weight expects {cin}", axis="channels")
    if b.shape != (cout,):
        raise DimensionError(f"bias shape {b.shape} != ({cout},)", axis="out_channels")
    lead, T = x.shape[:-2], x.shape[-2]
    w2 = w.data.transpose(1, 0, 2).reshape(cin, k * cout)
    out = (x.data @ w2).reshape(*lead, T * k, cout) + b.data

    def vjp(g):
        g2 = g.reshape(*lead, T, k * cout)
        gx = g2 @ w2.T
        gw2 = x.data.reshape(-1, cin).T @ g2.reshape(-1, k * cout)
        gw = gw2.reshape(cin, k, cout).transpose(1, 0, 2)
        return gx, gw, g.reshape(-1, cout).sum(axis=0)

    return _emit("conv1d_transpose", out, (x, w, b), vjp)


def max_pool2(x: Tensor) -> Tensor:
    """Stride-2 max pooling over time.

    Odd lengths are padded by replicating the last sample; the result then
    carries ``meta["padded"] = True``.
    """
    x = as_tensor(x)
    T = x.shape[-2]
    padded = T % 2 == 1
    xp = x.data
    if padded:
        xp = np.concatenate([xp, xp[..., -1:, :]], axis=-2)
    lead, C = xp.shape[:-2], xp.shape[-1]
    pairs = xp.reshape(*lead, xp.shape[-2] // 2, 2, C)
    pick = pairs[..., 1, :] > pairs[..., 0, :]
    out = np.where(pick, pairs[..., 1, :], pairs[..., 0, :])

    def vjp(g):
        gp = np.stack([np.where(pick, 0.0, g), np.where(pick, g, 0.0)], axis=-2)
        gp = gp.reshape(xp.shape)
        if padded:
            gx = gp[..., :T, :].copy()
            gx[..., T - 1, :] += gp[..., T, :]
            return (gx,)
        return (gp,)

    y = _emit("max_pool2", out, (x,), vjp)
    y.meta["padded"] = padded
    return y


# --------------------------------------------------------------------------
# normalization and activations


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the channel vector of every time step, then apply gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    C = x.shape[-1]
    if gain.shape != (C,) or bias.shape != (C,):
        raise DimensionError(f"gain/bias must be ({C},), got {gain.shape}/{bias.shape}", axis="channels")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gh = g * gain.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, C)
        return gx, (flat * xhat.reshape(-1, C)).sum(axis=0), flat.sum(axis=0)

    return _emit("layer_norm", out, (x, gain, bias), vjp)


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0
    return _emit("relu", np.where(on, x.data, 0.0), (x,), lambda g: (np.where(on, g, 0.0),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last (channel) axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", s, (x,), vjp)


softmax_channels = softmax


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit("dropout", x.data * mask, (x,), lambda g: (g * mask,))


# --------------------------------------------------------------------------
# elementwise, structural and linear-algebra ops


def add(*xs: Tensor) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            axis = "time" if x.shape[-2:-1] != shape[-2:-1] else "channels"
            raise DimensionError(f"add needs identical shapes, got {shape} and {x.shape}", axis=axis)
    out = xs[0].data.copy()
    for x in xs[1:]:
        out += x.data
    return _emit("add", out, xs, lambda g: (g,) * len(xs))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul needs identical shapes, got {a.shape} and {b.shape}", axis="shape")
    return _emit("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise DimensionError(f"concat needs matching time lengths, got {lead} and {x.shape[:-1]}", axis="time")
    sizes = [x.shape[-1] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=-1)
    return _emit("concat_channels", out, xs, lambda g: tuple(np.split(g, cuts, axis=-1)))


def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """``a @ b`` (or ``a @ b^T``) over the last two axes.

    ``b`` may be a plain matrix shared across ``a``'s leading axes.
    """
    a, b = as_tensor(a), as_tensor(b)
    bm = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a.ndim < 1 or bm.ndim < 2 or a.shape[-1] != bm.shape[-2]:
        raise DimensionError(f"matmul inner dims disagree: {a.shape} @ {bm.shape}", axis="inner")
    out = a.data @ bm

    def vjp(g):
        ga = g @ np.swapaxes(bm, -1, -2)
        if bm.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _sum_to(np.swapaxes(a.data, -1, -2) @ g, bm.shape)
        if transpose_b:
            gb = np.swapaxes(gb, -1, -2)
        return ga, gb

    return _emit("matmul", out, (a, b), vjp)


def index(x: Tensor, key) -> Tensor:
    """Basic numpy indexing (slices, ints) with a scatter-back gradient."""
    x = as_tensor(x)
    out = np.array(x.data[key], dtype=np.float64)

    def vjp(g):
        gx = np.zeros(x.shape)
        gx[key] += g
        return (gx,)

    return _emit("index", out, (x,), vjp)


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _emit("sum", np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return _emit("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))
