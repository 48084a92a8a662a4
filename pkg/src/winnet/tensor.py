"""Dense float64 tensors with taped reverse-mode differentiation.

Implements exactly the operators the forecasting model needs, nothing more:
linear maps, a single-layer 2D convolution, average pooling (1D/2D), the two
activations, dropout, index gathers for boundary padding, and the elementwise
glue (add/sub/mul/scale/concat/reshape/transpose).

Every op takes an optional ``Tape``. When a tape is supplied and any input is
tracked, the op appends a node whose closure routes the output gradient back
to the inputs. Nodes are recorded in forward execution order, so a single
reverse sweep over the tape is a valid topological replay.

All data is float64 and row-major; gradients accumulate additively across
fan-out. Broadcasting is deliberately not supported beyond bias-style adds
(``channel_scale``/``channel_shift``); binary ops require equal shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ShapeError

MAX_AXES = 4


def _as_f64(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim > MAX_AXES:
        raise ShapeError(f"tensors support at most {MAX_AXES} axes, got shape {arr.shape}")
    return arr


class Tensor:
    """A shaped float64 buffer, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


class TapeNode:
    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(self, op: str, inputs: tuple, output: Tensor, backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of op nodes; forward order is topological by construction."""

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def zero_grads(self) -> None:
        """Drop gradients of every tensor touched by this tape."""
        for node in self.nodes:
            node.output.grad = None
            for t in node.inputs:
                t.grad = None


def _record(tape: Tape | None, op: str, inputs: Sequence[Tensor],
            out_data: np.ndarray, backward_fn: Callable) -> Tensor:
    out = Tensor(out_data)
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(TapeNode(op, tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of every tracked tensor reachable from ``loss``.

    The loss must be scalar. Each tape node is visited exactly once, in
    reverse recording order; gradients accumulate additively on fan-out.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for node in reversed(tape.nodes):
        out_grad = node.output.grad
        if out_grad is None:
            continue
        grads = node.backward_fn(out_grad)
        for t, g in zip(node.inputs, grads):
            if g is None or not t.requires_grad:
                continue
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape("add", a, b)
    return _record(tape, "add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape("sub", a, b)
    return _record(tape, "sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b: Tensor, tape: Tape | None = None) -> Tensor:
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record(tape, "mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def scale(x: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    s = float(s)
    return _record(tape, "scale", (x,), x.data * s, lambda g: (g * s,))


def add_scalar(x: Tensor, s: float, tape: Tape | None = None) -> Tensor:
    return _record(tape, "add_scalar", (x,), x.data + float(s), lambda g: (g,))


def reciprocal(x: Tensor, tape: Tape | None = None) -> Tensor:
    out = 1.0 / x.data
    return _record(tape, "reciprocal", (x,), out, lambda g: (-g * out * out,))


def channel_scale(x: Tensor, gamma: Tensor, tape: Tape | None = None) -> Tensor:
    """Multiply x[b, c, ...] by gamma[c]; the per-channel affine scale."""
    if x.ndim < 2 or gamma.shape != (x.shape[1],):
        raise ShapeError(f"channel_scale: gamma shape {gamma.shape} does not match "
                         f"channel axis of {x.shape}")
    gshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    gb = gamma.data.reshape(gshape)
    xd = x.data
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def bwd(g):
        return g * gb, (g * xd).sum(axis=reduce_axes)

    return _record(tape, "channel_scale", (x, gamma), xd * gb, bwd)


def channel_shift(x: Tensor, beta: Tensor, tape: Tape | None = None) -> Tensor:
    """Add beta[c] to x[b, c, ...]; the per-channel affine shift."""
    if x.ndim < 2 or beta.shape != (x.shape[1],):
        raise ShapeError(f"channel_shift: beta shape {beta.shape} does not match "
                         f"channel axis of {x.shape}")
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    reduce_axes = tuple(i for i in range(x.ndim) if i != 1)

    def bwd(g):
        return g, g.sum(axis=reduce_axes)

    return _record(tape, "channel_shift", (x, beta), x.data + beta.data.reshape(bshape), bwd)


def reshape(x: Tensor, shape: Iterable[int], tape: Tape | None = None) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")
    if len(shape) > MAX_AXES:
        raise ShapeError(f"reshape: at most {MAX_AXES} axes, got {shape}")
    in_shape = x.shape
    return _record(tape, "reshape", (x,), x.data.reshape(shape),
                   lambda g: (g.reshape(in_shape),))


def transpose_last2(x: Tensor, tape: Tape | None = None) -> Tensor:
    """Swap the last two axes (a fresh contiguous copy, never a view)."""
    if x.ndim < 2:
        raise ShapeError(f"transpose_last2 needs >= 2 axes, got {x.shape}")
    return _record(tape, "transpose_last2", (x,), np.ascontiguousarray(x.data.swapaxes(-1, -2)),
                   lambda g: (np.ascontiguousarray(g.swapaxes(-1, -2)),))


def concat(a: Tensor, b: Tensor, axis: int, tape: Tape | None = None) -> Tensor:
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    for ax in range(a.ndim):
        if ax != axis % a.ndim and a.shape[ax] != b.shape[ax]:
            raise ShapeError(f"concat: axis {ax} differs, {a.shape} vs {b.shape}")
    split = a.shape[axis]

    def bwd(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return _record(tape, "concat", (a, b), np.concatenate([a.data, b.data], axis=axis), bwd)


def take_last(x: Tensor, indices: np.ndarray, tape: Tape | None = None) -> Tensor:
    """Gather along the last axis: out[..., j] = x[..., indices[j]].

    Backward scatter-adds, so repeated indices (replication padding)
    accumulate their gradients onto the shared source element.
    """
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take_last: index map must be 1-D, got shape {idx.shape}")
    L = x.shape[-1]
    if idx.size and (idx.min() < 0 or idx.max() >= L):
        raise ShapeError(f"take_last: indices outside [0, {L})")
    in_shape = x.shape
    lead = int(np.prod(in_shape[:-1])) if x.ndim > 1 else 1
    rows = np.arange(lead)[:, None]

    def bwd(g):
        gx = np.zeros(in_shape)
        np.add.at(gx.reshape(lead, L), (rows, idx[None, :]), g.reshape(lead, idx.size))
        return (gx,)

    return _record(tape, "take_last", (x,), x.data[..., idx], bwd)


def zero_pad2d(x: Tensor, q: int, tape: Tape | None = None) -> Tensor:
    """Zero-pad the last two axes by q cells per side."""
    if q < 1:
        raise ConfigError(f"zero_pad2d: pad width must be >= 1, got {q}")
    if x.ndim < 2:
        raise ShapeError(f"zero_pad2d needs >= 2 axes, got {x.shape}")
    pad = [(0, 0)] * (x.ndim - 2) + [(q, q), (q, q)]
    return _record(tape, "zero_pad2d", (x,), np.pad(x.data, pad),
                   lambda g: (g[..., q:-q, q:-q],))


def sum_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    in_shape = x.shape
    return _record(tape, "sum_all", (x,), np.asarray(x.data.sum()),
                   lambda g: (np.full(in_shape, float(g)),))


def mean_all(x: Tensor, tape: Tape | None = None) -> Tensor:
    return scale(sum_all(x, tape), 1.0 / x.size, tape)


# ---------------------------------------------------------------------------
# network ops
# ---------------------------------------------------------------------------

def linear_forward(x: Tensor, weight: Tensor, bias: Tensor, tape: Tape | None = None) -> Tensor:
    """Affine map along the last axis: out[..., o] = sum_i x[..., i] w[o, i] + b[o]."""
    if weight.ndim != 2:
        raise ShapeError(f"linear_forward: weight must be 2-D [dout, din], got {weight.shape}")
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise ShapeError(f"linear_forward: last axis of x is {x.shape[-1]}, "
                         f"weight expects din={din}")
    if bias.shape != (dout,):
        raise ShapeError(f"linear_forward: bias shape {bias.shape} != ({dout},)")
    in_shape = x.shape
    x2 = x.data.reshape(-1, din)
    out = x2 @ weight.data.T + bias.data
    wd = weight.data

    def bwd(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ wd).reshape(in_shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _record(tape, "linear", (x, weight, bias), out.reshape(in_shape[:-1] + (dout,)), bwd)


def conv2d_forward(x: Tensor, kernel: Tensor, bias: Tensor, tape: Tape | None = None) -> Tensor:
    """Stride-1 cross-correlation with zero padding that preserves H x W.

    x: [B, Cin, H, W], kernel: [Cout, Cin, k, k] with k odd, bias: [Cout].
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: x must be [B,Cin,H,W] and kernel [Cout,Cin,k,k], "
                         f"got {x.shape} and {kernel.shape}")
    B, cin, H, W = x.shape
    cout, cin_k, kh, kw = kernel.shape
    if kh != kw:
        raise ConfigError(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if k % 2 == 0:
        raise ConfigError(f"conv2d: kernel extent must be odd, got {k}")
    if cin != cin_k:
        raise ShapeError(f"conv2d: input channels {cin} != kernel in-channels {cin_k}")
    if min(H, W) < k:
        raise ConfigError(f"conv2d: spatial extent {H}x{W} smaller than kernel {k}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    p = (k - 1) // 2
    xp = np.zeros((B, cin, H + 2 * p, W + 2 * p))
    xp[:, :, p:p + H, p:p + W] = x.data
    out = np.zeros((B, cout, H, W))
    kd = kernel.data
    for di in range(k):
        for dj in range(k):
            patch = xp[:, :, di:di + H, dj:dj + W]
            out += np.einsum("bchw,oc->bohw", patch, kd[:, :, di, dj])
    out += bias.data[None, :, None, None]

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kd)
        for di in range(k):
            for dj in range(k):
                patch = xp[:, :, di:di + H, dj:dj + W]
                gk[:, :, di, dj] = np.einsum("bohw,bchw->oc", g, patch)
                gxp[:, :, di:di + H, dj:dj + W] += np.einsum("bohw,oc->bchw", g, kd[:, :, di, dj])
        gx = gxp[:, :, p:p + H, p:p + W]
        gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    return _record(tape, "conv2d", (x, kernel, bias), out, bwd)


def avgpool2d(x: Tensor, k: int, tape: Tape | None = None) -> Tensor:
    """Stride-1 k x k mean pooling over the last two axes (no padding)."""
    if x.ndim < 2:
        raise ShapeError(f"avgpool2d needs >= 2 axes, got {x.shape}")
    H, W = x.shape[-2], x.shape[-1]
    if min(H, W) < k:
        raise ConfigError(f"avgpool2d: window {k} exceeds spatial extent {H}x{W}")
    oh, ow = H - k + 1, W - k + 1
    acc = np.zeros(x.shape[:-2] + (oh, ow))
    for di in range(k):
        for dj in range(k):
            acc += x.data[..., di:di + oh, dj:dj + ow]
    inv = 1.0 / (k * k)
    in_shape = x.shape

    def bwd(g):
        gx = np.zeros(in_shape)
        gs = g * inv
        for di in range(k):
            for dj in range(k):
                gx[..., di:di + oh, dj:dj + ow] += gs
        return (gx,)

    return _record(tape, "avgpool2d", (x,), acc * inv, bwd)


def avgpool1d(x: Tensor, k: int, tape: Tape | None = None) -> Tensor:
    """Stride-1 length-k mean pooling over the last axis (no padding)."""
    L = x.shape[-1]
    if L < k:
        raise ConfigError(f"avgpool1d: window {k} exceeds length {L}")
    ol = L - k + 1
    acc = np.zeros(x.shape[:-1] + (ol,))
    for d in range(k):
        acc += x.data[..., d:d + ol]
    inv = 1.0 / k
    in_shape = x.shape

    def bwd(g):
        gx = np.zeros(in_shape)
        gs = g * inv
        for d in range(k):
            gx[..., d:d + ol] += gs
        return (gx,)

    return _record(tape, "avgpool1d", (x,), acc * inv, bwd)


def activation(x: Tensor, kind: str, tape: Tape | None = None) -> Tensor:
    if kind == "relu":
        mask = x.data > 0
        return _record(tape, "relu", (x,), np.where(mask, x.data, 0.0),
                       lambda g: (g * mask,))
    if kind == "sigmoid":
        out = expit(x.data)
        return _record(tape, "sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))
    raise ConfigError(f"unknown activation kind {kind!r}")


def relu(x: Tensor, tape: Tape | None = None) -> Tensor:
    return activation(x, "relu", tape)


def sigmoid(x: Tensor, tape: Tape | None = None) -> Tensor:
    return activation(x, "sigmoid", tape)


def dropout(x: Tensor, rate: float, training: bool,
            rng: np.random.Generator | None = None, tape: Tape | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate) so inference is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a seeded Generator")
    keep = rng.random(x.shape) >= rate
    s = 1.0 / (1.0 - rate)
    return _record(tape, "dropout", (x,), np.where(keep, x.data * s, 0.0),
                   lambda g: (np.where(keep, g * s, 0.0),))


# ---------------------------------------------------------------------------
# parameters and the finite-difference oracle
# ---------------------------------------------------------------------------

class ParamStore:
    """Named trainable tensors with eagerly allocated gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        t.grad = np.zeros_like(t.data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self._params.values())

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, t in self._params.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"parameter {k!r}: stored shape {v.shape} != {t.shape}")
            t.data = v.copy()


def grad_check(forward_fn: Callable[[Tape | None], Tensor],
               params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between taped gradients and central differences.

    ``forward_fn(tape)`` must rebuild the same scalar loss on every call
    (dropout off or mask frozen). Relative error uses the floor
    max(|analytic|, |numeric|, 1e-8), so zero-gradient paths report 0.
    """
    tape = Tape()
    loss = forward_fn(tape)
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(tape, loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = float(forward_fn(None).data)
            flat[i] = orig - eps
            f_minus = float(forward_fn(None).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
