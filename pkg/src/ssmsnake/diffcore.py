"""Reverse-mode autodiff over float64 numpy arrays.

A small tape: every operation returns a new Tensor holding the numpy result
and a closure that routes the upstream gradient to its parents. Graphs are
built implicitly by calling ops; ``backward`` walks the tape in reverse
topological order. Everything is 64-bit; forward/backward is bitwise
deterministic for fixed inputs.
"""

from __future__ import annotations

import math
import struct
from typing import Callable, Iterable

import numpy as np

__all__ = [
    "Tensor",
    "ParamStore",
    "AdamW",
    "op_forward",
    "backward",
    "check_gradients",
    "cosine_lr",
    "OP_KINDS",
]


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape}, grad={self.requires_grad})"

    # operator sugar; every overload routes through the functional ops below
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bwd, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _shape_error(op: str, *shapes) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


# ---------------------------------------------------------------------------
# elementwise / reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(data, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign so neither exp overflows
    x = a.data
    data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bwd, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), bwd, "tanh")


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0.0),)

    return _make(data, (a,), bwd, "relu")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bwd(g):
        return (g * data,)

    return _make(data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(data, (a,), bwd, "log")


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / data,)

    return _make(data, (a,), bwd, "sqrt")


def absval(a: Tensor) -> Tensor:
    data = np.abs(a.data)

    def bwd(g):
        return (g * np.sign(a.data),)

    return _make(data, (a,), bwd, "abs")


def atan2(y: Tensor, x: Tensor) -> Tensor:
    data = np.arctan2(y.data, x.data)

    def bwd(g):
        denom = x.data * x.data + y.data * y.data
        return (
            _unbroadcast(g * x.data / denom, y.shape),
            _unbroadcast(-g * y.data / denom, x.shape),
        )

    return _make(data, (y, x), bwd, "atan2")


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=-1, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), bwd, "softmax")


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.full(a.shape, g / n),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return _make(data, (a,), bwd, "mean")


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(data, (a,), bwd, "sum")


def cumsum(a: Tensor, exclusive: bool = False) -> Tensor:
    """Cumulative sum along axis 0; exclusive shifts by one with a leading 0."""
    c = np.cumsum(a.data, axis=0)
    if exclusive:
        c = np.concatenate([np.zeros_like(c[:1]), c[:-1]], axis=0)

    def bwd(g):
        rev = g[::-1]
        acc = np.cumsum(rev, axis=0)[::-1]
        if exclusive:
            acc = np.concatenate([acc[1:], np.zeros_like(acc[:1])], axis=0)
        return (acc.copy(),)

    return _make(c, (a,), bwd, "cumsum")


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _make(data, (a, b), bwd, "matmul")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(data, (a,), bwd, "reshape")


def transpose(a: Tensor) -> Tensor:
    data = a.data.T.copy()

    def bwd(g):
        return (g.T.copy(),)

    return _make(data, (a,), bwd, "transpose")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _make(data, tuple(ts), bwd, "concat")


def gather(a: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer index, with repetition allowed."""
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def bwd(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(data, (a,), bwd, "gather")


# ---------------------------------------------------------------------------
# convolution / sampling ops


def circular_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise convolution on a closed ring.

    x is (N, C), kernel is (C, K) with K odd; tap j touches offset j - K//2,
    indices wrap modulo N: y[n, c] = sum_j kernel[c, j] * x[(n + j - K//2) % N, c].
    """
    if x.data.ndim != 2 or kernel.data.ndim != 2 or x.shape[1] != kernel.shape[0]:
        raise _shape_error("circular_conv1d", x.shape, kernel.shape)
    n, _ = x.shape
    k = kernel.shape[1]
    if k % 2 != 1:
        raise ValueError(f"circular_conv1d: kernel width {k} must be odd")
    if n < k:
        raise ValueError(f"circular_conv1d: ring length {n} < kernel width {k}")
    offsets = np.arange(k) - k // 2
    idx = (np.arange(n)[:, None] + offsets[None, :]) % n  # (N, K)
    gathered = x.data[idx]  # (N, K, C)
    data = np.einsum("nkc,ck->nc", gathered, kernel.data)

    def bwd(g):
        idx_back = (np.arange(n)[:, None] - offsets[None, :]) % n
        dx = np.einsum("nkc,ck->nc", g[idx_back], kernel.data)
        dk = np.einsum("nkc,nc->ck", gathered, g)
        return dx, dk

    return _make(data, (x, kernel), bwd, "circular_conv1d")


def conv2d(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """2-D convolution with zero "same" padding.

    x is (H, W, Cin), kernel is (kh, kw, Cin, Cout); the receptive offsets are
    dilated by ``dilation``. Output is (H, W, Cout).
    """
    if x.data.ndim != 3 or kernel.data.ndim != 4 or x.shape[2] != kernel.shape[2]:
        raise _shape_error("dilated_conv2d", x.shape, kernel.shape)
    h, w, cin = x.shape
    kh, kw, _, cout = kernel.shape
    ph, pw = dilation * (kh // 2), dilation * (kw // 2)
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    s0, s1, s2 = xp.strides
    patches = np.lib.stride_tricks.as_strided(
        xp, shape=(h, w, kh, kw, cin), strides=(s0, s1, dilation * s0, dilation * s1, s2)
    )
    flat = np.ascontiguousarray(patches).reshape(h * w, kh * kw * cin)
    kflat = kernel.data.reshape(kh * kw * cin, cout)
    data = (flat @ kflat).reshape(h, w, cout)

    def bwd(g):
        gflat = g.reshape(h * w, cout)
        dk = (flat.T @ gflat).reshape(kernel.shape)
        dpatch = (gflat @ kflat.T).reshape(h, w, kh, kw, cin)
        dxp = np.zeros_like(xp)
        for a in range(kh):
            for b in range(kw):
                dxp[a * dilation : a * dilation + h, b * dilation : b * dilation + w] += dpatch[:, :, a, b]
        return (dxp[ph : ph + h, pw : pw + w].copy() if ph or pw else dxp, dk)

    return _make(data, (x, kernel), bwd, "dilated_conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling on (H, W, C); H and W must be even."""
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise _shape_error("avg_pool2", x.shape)
    data = x.data.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))

    def bwd(g):
        return (np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25,)

    return _make(data, (x,), bwd, "avg_pool2")


def upsample2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling on (H, W, C)."""
    h, w, c = x.shape
    data = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bwd(g):
        return (g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)),)

    return _make(data, (x,), bwd, "upsample2")


def bilinear_sample(fmap: Tensor, points: Tensor) -> Tensor:
    """Bilinear interpolation of (H, W, C) at (P, 2) points given as (x, y).

    Out-of-bounds points clamp to the border. Differentiable w.r.t. both the
    field and the point coordinates.
    """
    if fmap.data.ndim != 3 or points.data.ndim != 2 or points.shape[1] != 2:
        raise _shape_error("bilinear_sample", fmap.shape, points.shape)
    h, w, c = fmap.shape
    px = np.clip(points.data[:, 0], 0.0, w - 1.0)
    py = np.clip(points.data[:, 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(px).astype(np.int64), 0, w - 2) if w > 1 else np.zeros(len(px), np.int64)
    y0 = np.clip(np.floor(py).astype(np.int64), 0, h - 2) if h > 1 else np.zeros(len(py), np.int64)
    fx = px - x0
    fy = py - y0
    f00 = fmap.data[y0, x0]
    f01 = fmap.data[y0, x0 + 1] if w > 1 else f00
    f10 = fmap.data[y0 + 1, x0] if h > 1 else f00
    f11 = fmap.data[y0 + 1, x0 + 1] if h > 1 and w > 1 else f00
    wx, wy = fx[:, None], fy[:, None]
    data = (1 - wy) * ((1 - wx) * f00 + wx * f01) + wy * ((1 - wx) * f10 + wx * f11)

    def bwd(g):
        dmap = np.zeros(fmap.shape)
        np.add.at(dmap, (y0, x0), g * (1 - wy) * (1 - wx))
        np.add.at(dmap, (y0, x0 + 1), g * (1 - wy) * wx)
        np.add.at(dmap, (y0 + 1, x0), g * wy * (1 - wx))
        np.add.at(dmap, (y0 + 1, x0 + 1), g * wy * wx)
        dfdx = (1 - wy) * (f01 - f00) + wy * (f11 - f10)
        dfdy = (1 - wx) * (f10 - f00) + wx * (f11 - f01)
        inx = ((points.data[:, 0] > 0.0) & (points.data[:, 0] < w - 1.0)).astype(np.float64)
        iny = ((points.data[:, 1] > 0.0) & (points.data[:, 1] < h - 1.0)).astype(np.float64)
        dpts = np.stack(
            [(g * dfdx).sum(axis=1) * inx, (g * dfdy).sum(axis=1) * iny], axis=1
        )
        return dmap, dpts

    return _make(data, (fmap, points), bwd, "bilinear_sample")


def ssm_scan(g: Tensor, b: Tensor, c: Tensor, xt: Tensor, z0: Tensor) -> Tensor:
    """Gated state-space scan over a token ring.

    Recurrence: Z_k = g_k * (Z_{k-1} + B_k Xt_k^T), read out as Y_k = C_k^T Z_k.
    g is (N, 1), b and c are (N, S), xt is (N, D), z0 is (S, D). Returns the
    (N + S, D) stack [Y; Z_N] so the carried state rides along one output.
    """
    if g.data.ndim != 2 or g.shape[1] != 1 or b.shape != c.shape or b.shape[0] != g.shape[0]:
        raise _shape_error("ssm_scan", g.shape, b.shape, c.shape)
    n, s = b.shape
    d = xt.shape[1]
    if xt.shape[0] != n or z0.shape != (s, d):
        raise _shape_error("ssm_scan", xt.shape, z0.shape)
    gv = g.data[:, 0]
    u = np.einsum("ns,nd->nsd", b.data, xt.data)
    zs = np.empty((n, s, d))
    ps = np.empty((n, s, d))
    z = z0.data
    for k in range(n):
        p = z + u[k]
        z = gv[k] * p
        ps[k] = p
        zs[k] = z
    y = np.einsum("ns,nsd->nd", c.data, zs)
    data = np.concatenate([y, zs[-1]], axis=0)

    def bwd(grad):
        dy = grad[:n]
        dz_direct = np.einsum("ns,nd->nsd", c.data, dy)
        acc = grad[n:].copy()
        dz_full = np.empty((n, s, d))
        for k in range(n - 1, -1, -1):
            acc += dz_direct[k]
            dz_full[k] = acc
            acc = gv[k] * acc
        dz0 = acc
        dg = np.einsum("nsd,nsd->n", dz_full, ps)[:, None]
        du = gv[:, None, None] * dz_full
        db = np.einsum("nsd,nd->ns", du, xt.data)
        dxt = np.einsum("nsd,ns->nd", du, b.data)
        dc = np.einsum("nsd,nd->ns", zs, dy)
        return dg, db, dc, dxt, dz0

    return _make(data, (g, b, c, xt, z0), bwd, "ssm_scan")


# ---------------------------------------------------------------------------
# dispatcher for the fixed op set

_OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "abs": absval,
    "atan2": atan2,
    "softmax": softmax,
    "mean": mean,
    "sum": tsum,
    "cumsum": cumsum,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "gather": gather,
    "reshape": reshape,
    "transpose": transpose,
    "circular_conv1d": circular_conv1d,
    "dilated_conv2d": conv2d,
    "avg_pool2": avg_pool2,
    "upsample2": upsample2,
    "bilinear_sample": bilinear_sample,
    "ssm_scan": ssm_scan,
    "detach": detach,
}

OP_KINDS = tuple(sorted(_OPS))


def op_forward(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a forward op by name, validating inputs first."""
    if op_kind not in _OPS:
        raise ValueError(f"unknown op kind {op_kind!r}")
    tensors = [t for t in inputs if isinstance(t, Tensor)]
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{op_kind}: non-finite input of shape {t.shape}")
    return _OPS[op_kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# backward pass


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor, params: "ParamStore | None" = None) -> None:
    """Populate gradients of ``output`` (a scalar) w.r.t. all reachable tensors.

    If a ParamStore is given, parameters not reachable from the graph get
    explicit zero gradients.
    """
    if output.data.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    for node in reversed(_topo_order(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    if params is not None:
        for _, t in params.items():
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
        params.grads_fresh = True


# ---------------------------------------------------------------------------
# parameter store


MAGIC = b"SSMSNAKE1\n"


class ParamStore:
    """Named trainable tensors with deterministic (sorted) iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.grads_fresh = False

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(n, self._params[n]) for n in self.names()]

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def gradients(self) -> dict[str, np.ndarray | None]:
        return {n: t.grad for n, t in self.items()}

    def clear_grads(self) -> None:
        for t in self._params.values():
            t.grad = None
        self.grads_fresh = False

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            for name, t in self.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<I", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", t.data.ndim))
                fh.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
                fh.write(t.data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with open(path, "rb") as fh:
            if fh.read(len(MAGIC)) != MAGIC:
                raise ValueError(f"{path}: bad checkpoint header")
            while True:
                head = fh.read(4)
                if not head:
                    break
                (nlen,) = struct.unpack("<I", head)
                name = fh.read(nlen).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
                count = int(np.prod(dims)) if dims else 1
                data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
                store.add(name, data)
        return store


# ---------------------------------------------------------------------------
# optimizer


def cosine_lr(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Cosine annealing from lr_start (step 0) to lr_end (final step)."""
    if total_steps <= 1:
        return lr_start
    t = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + math.cos(math.pi * t))


class AdamW:
    """AdamW with a cosine-annealed learning rate and decoupled weight decay."""

    def __init__(
        self,
        params: ParamStore,
        total_steps: int,
        lr_start: float = 1e-4,
        lr_end: float = 1e-6,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = params
        self.total_steps = total_steps
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {n: np.zeros_like(t.data) for n, t in params.items()}
        self.v = {n: np.zeros_like(t.data) for n, t in params.items()}

    def current_lr(self) -> float:
        return cosine_lr(self.step_count, self.total_steps, self.lr_start, self.lr_end)

    def step(self) -> float:
        if not self.params.grads_fresh:
            raise RuntimeError("optimizer step with stale or absent gradients; run backward first")
        lr = self.current_lr()
        b1, b2 = self.betas
        t = self.step_count + 1
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                raise RuntimeError(f"parameter {name!r} has no gradient")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                p.data -= lr * self.weight_decay * p.data
        self.step_count = t
        self.params.clear_grads()
        return lr


# ---------------------------------------------------------------------------
# gradient checking


def check_gradients(
    fragment: Callable[[], Tensor],
    params: ParamStore,
    h: float = 1e-5,
    param_names: list[str] | None = None,
):
    """Compare analytic gradients of a scalar fragment against central differences.

    ``fragment`` must be a pure function of the current parameter values.
    Returns (max relative error, {name: per-parameter max error}); non-finite
    analytic gradients raise with the offending parameter name.
    """
    if params.n_values() > 5 * 10**4:
        raise ValueError("fragment too large for finite-difference checking (> 5e4 values)")
    params.clear_grads()
    out = fragment()
    backward(out, params)
    analytic = {n: t.grad.copy() for n, t in params.items()}
    params.clear_grads()
    names = param_names if param_names is not None else params.names()
    worst = 0.0
    per_param: dict[str, float] = {}
    for name in names:
        t = params[name]
        ana = analytic[name]
        if not np.all(np.isfinite(ana)):
            raise ValueError(f"non-finite analytic gradient for parameter {name!r}")
        flat = t.data.reshape(-1)
        err = 0.0
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = float(fragment().data)
            flat[i] = keep - h
            fm = float(fragment().data)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(ana.reshape(-1)[i] - numeric) / max(1e-8, abs(numeric))
            err = max(err, rel)
        per_param[name] = err
        worst = max(worst, err)
    return worst, per_param
