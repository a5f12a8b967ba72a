"""A small reverse-mode autodiff tensor over numpy, plus Adam and checkpoints.

Only the operations the brick agents need are provided.  Training runs in
float32; :func:`precision` switches newly created tensors to float64 for
gradient checking.
"""
from __future__ import annotations

import contextlib
import re
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_dtype = np.float32


def default_dtype():
    return _dtype


@contextlib.contextmanager
def precision(dtype):
    global _dtype
    old, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, _parents=tuple(parents) if req else (),
                  _backward=backward_fn if req else None)


def _shape_error(op, *shapes):
    return ValueError(f"{op}: incompatible shapes " + " and ".join(str(s) for s in shapes))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------

def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _node(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _node(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_broadcast("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _node(a.data * b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return _node(np.where(on, x.data, 0), (x,), lambda g: (g * on,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split by sign so exp never overflows
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))),
                   np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d)))).astype(d.dtype)
    return _node(out, (x,), lambda g: (g * out * (1 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: Tensor) -> Tensor:
    return _node(x.data * x.data, (x,), lambda g: (2 * g * x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _node(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise _shape_error("minimum", a.shape, b.shape)
    pick_a = a.data <= b.data
    return _node(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (g * pick_a, g * ~pick_a))


# -- shape / reduction ------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_t(x) for x in xs]
    ax = axis % xs[0].ndim
    for x in xs[1:]:
        if x.ndim != xs[0].ndim or any(
                s != r for i, (s, r) in enumerate(zip(x.shape, xs[0].shape)) if i != ax):
            raise _shape_error("concat", *[x.shape for x in xs])
    sizes = [x.shape[ax] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))
    return _node(np.concatenate([x.data for x in xs], axis=ax), xs, bw)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return _node(x.data.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis, keepdims), 1.0 / n)


def gather_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {x.shape[0]} rows")

    def bw(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return (out,)
    return _node(x.data[idx], (x,), bw)


def segment_sum(x: Tensor, seg, n: int) -> Tensor:
    """out[s] = sum of rows x[i] with seg[i] == s; empty segments give zeros."""
    seg = np.asarray(seg, dtype=np.int64)
    if seg.shape[0] != x.shape[0]:
        raise _shape_error("segment_sum", x.shape, seg.shape)
    m = sp.csr_matrix((np.ones(len(seg), dtype=x.data.dtype), (seg, np.arange(len(seg)))),
                      shape=(n, len(seg)))
    flat = x.data.reshape(len(seg), int(np.prod(x.shape[1:], dtype=np.int64)))
    out = np.asarray(m @ flat).reshape((n,) + x.shape[1:])
    return _node(out.astype(x.data.dtype), (x,), lambda g: (g[seg],))


def segment_mean(x: Tensor, seg, n: int) -> Tensor:
    seg = np.asarray(seg, dtype=np.int64)
    counts = np.maximum(np.bincount(seg, minlength=n), 1).astype(x.data.dtype)
    return mul(segment_sum(x, seg, n), (1.0 / counts).reshape((n,) + (1,) * (x.ndim - 1)))


def scatter_dense(x: Tensor, rows, cols, shape) -> Tensor:
    """Place a 1-D tensor into a zero matrix at (rows, cols)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.zeros(shape, dtype=x.data.dtype)
    out[rows, cols] = x.data
    return _node(out, (x,), lambda g: (g[rows, cols],))


# -- linear algebra ---------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _t(a), _t(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# -- softmax family ---------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _node(out, (x,), bw)


def masked_log_softmax(x: Tensor, mask) -> Tensor:
    """Row-wise log-softmax over entries where ``mask`` is true.

    Masked entries are returned as 0 with zero gradient (their probability
    is exactly zero); rows need at least one valid entry.
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=-1).all():
        raise ValueError("masked_log_softmax: a row has no valid entry")
    z = np.where(mask, x.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    out = np.where(mask, z - np.log(s), 0.0).astype(x.data.dtype)
    p = (e / s).astype(x.data.dtype)

    def bw(g):
        g = np.where(mask, g, 0.0)
        return ((g - p * g.sum(axis=-1, keepdims=True)).astype(x.data.dtype),)
    return _node(out, (x,), bw)


# -- losses -----------------------------------------------------------------

def bce(p: Tensor, y, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` against labels ``y``."""
    y = np.asarray(y, dtype=p.data.dtype)
    if y.shape != p.shape:
        raise _shape_error("bce", p.shape, y.shape)
    q = np.clip(p.data, eps, 1 - eps)
    n = max(p.data.size, 1)
    val = -(y * np.log(q) + (1 - y) * np.log(1 - q)).sum() / n
    inside = (p.data > eps) & (p.data < 1 - eps)

    def bw(g):
        return (g * inside * (q - y) / (q * (1 - q)) / n,)
    return _node(np.asarray(val, dtype=p.data.dtype), (p,), bw)


def bce_with_logits(x: Tensor, y, weight=None) -> Tensor:
    """Mean BCE of sigmoid(x) against ``y`` computed from logits (stable)."""
    y = np.asarray(y, dtype=x.data.dtype)
    if y.shape != x.shape:
        raise _shape_error("bce_with_logits", x.shape, y.shape)
    w = np.ones_like(y) if weight is None else np.asarray(weight, dtype=x.data.dtype)
    d = x.data
    n = max(w.sum(), 1e-12)
    loss = (np.maximum(d, 0) - d * y + np.log1p(np.exp(-np.abs(d)))) * w
    sig = np.where(d >= 0, 1 / (1 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1 + np.exp(-np.abs(d))))

    def bw(g):
        return ((g * (sig - y) * w / n).astype(x.data.dtype),)
    return _node(np.asarray(loss.sum() / n, dtype=x.data.dtype), (x,), bw)


def mse(a: Tensor, b) -> Tensor:
    b = _t(b)
    if a.shape != b.shape:
        raise _shape_error("mse", a.shape, b.shape)
    return mean(square(sub(a, b)))


# -- convolution / pooling (NHWC) -------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 convolution, stride 1, same padding. x: (N, H, W, C), w: (3, 3, C, O)."""
    if x.ndim != 4 or w.ndim != 4 or w.shape[:2] != (3, 3) or w.shape[2] != x.shape[3]:
        raise _shape_error("conv2d", x.shape, w.shape)
    n, h, wd, c = x.shape
    o = w.shape[3]
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N,H,W,C,3,3)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * wd, 9 * c)
    wm = w.data.reshape(9 * c, o)
    out = (cols @ wm).reshape(n, h, wd, o)

    def bw(g):
        g2 = g.reshape(n * h * wd, o)
        dw = (cols.T @ g2).reshape(w.shape)
        dcols = (g2 @ wm.T).reshape(n, h, wd, 3, 3, c)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + wd, :] += dcols[:, :, :, i, j, :]
        return dxp[:, 1:-1, 1:-1, :], dw
    y = _node(out, (x, w), bw)
    return y if b is None else add(y, b)


def _same_pad(n: int, k: int, s: int) -> tuple[int, int, int]:
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return out, total // 2, total - total // 2


def maxpool2d(x: Tensor, k: int = 3, s: int = 2) -> Tensor:
    """Max pooling with 'same' padding (output ceil(H/s)). x: (N, H, W, C)."""
    if x.ndim != 4:
        raise _shape_error("maxpool2d", x.shape)
    n, h, wd, c = x.shape
    oh, pt, pb = _same_pad(h, k, s)
    ow, pl, pr = _same_pad(wd, k, s)
    xp = np.pad(x.data, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]
    win = win[:, :oh, :ow].reshape(n, oh, ow, c, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    # padded coordinates of each selected element
    ri = np.arange(oh)[None, :, None, None] * s + arg // k
    ci = np.arange(ow)[None, None, :, None] * s + arg % k

    def bw(g):
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        ni = np.arange(n)[:, None, None, None]
        chi = np.arange(c)[None, None, None, :]
        np.add.at(dxp, (np.broadcast_to(ni, g.shape), ri, ci, np.broadcast_to(chi, g.shape)), g)
        return (dxp[:, pt:pt + h, pl:pl + wd, :],)
    return _node(np.ascontiguousarray(out), (x,), bw)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


# -- backward ---------------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``params``; unused parameters get zeros."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- parameters, Adam, checkpoints ------------------------------------------

class ParamStore(dict):
    """Ordered name -> leaf Tensor mapping."""

    def add(self, name: str, value) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter {name}")
        t = Tensor(value, requires_grad=True, name=name)
        self[name] = t
        return t

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        with precision(dtype):
            for k, v in self.items():
                out[k] = Tensor(v.data.astype(dtype), requires_grad=True, name=k)
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.items()}

    def load(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self[k].shape != v.shape:
                raise _shape_error(f"load {k}", self[k].shape, v.shape)
            self[k].data = np.asarray(v, dtype=self[k].data.dtype).copy()

    def count(self) -> int:
        return int(np.sum([v.data.size for v in self.values()]))


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    norm = float(np.sqrt(np.sum([np.sum(np.square(g, dtype=np.float64)) for g in grads])))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm


class Adam:
    """Adam with bias correction; the global gradient norm is clipped first."""

    def __init__(self, params: ParamStore, lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = 0.5):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> float:
        """Apply one update; returns the pre-clipping gradient norm."""
        names = list(self.params)
        if grads is None:
            gl = [self.params[k].grad if self.params[k].grad is not None
                  else np.zeros_like(self.params[k].data) for k in names]
        else:
            gl = [np.asarray(grads[k]) for k in names]
        gl, norm = clip_grad_norm(gl, self.clip_norm)
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in zip(names, gl):
            p = self.params[k]
            m = self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = (p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
        return norm


_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-/]+$")


def save_checkpoint(path: str | Path, params, meta: dict | None = None) -> None:
    """ASCII manifest (name, shape, byte offset) followed by little-endian float32 data.

    Layout::

        BBCKPT1 <n_params> <n_meta>
        meta <key> <value>            (n_meta lines)
        <name> <d0>x<d1>... <offset>  (n_params lines, offset into the payload)
        <payload>
    """
    values = params.snapshot() if isinstance(params, ParamStore) else dict(params)
    meta = meta or {}
    lines, blobs, off = [], [], 0
    for name, arr in values.items():
        if not _NAME_RE.match(name):
            raise ValueError(f"parameter name {name!r} not serialisable")
        a = np.asarray(arr, dtype="<f4")    # tobytes() is C-order; keeps 0-d shapes
        shape = "x".join(map(str, a.shape)) or "scalar"
        lines.append(f"{name} {shape} {off}")
        blobs.append(a.tobytes())
        off += a.nbytes
    mlines = []
    for k, v in meta.items():
        if not _NAME_RE.match(str(k)) or "\n" in str(v):
            raise ValueError(f"meta entry {k!r} not serialisable")
        mlines.append(f"meta {k} {v}")
    head = [f"BBCKPT1 {len(lines)} {len(mlines)}"] + mlines + lines
    Path(path).write_bytes(("\n".join(head) + "\n").encode("ascii") + b"".join(blobs))


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    pos = 0

    def line():
        nonlocal pos
        end = raw.index(b"\n", pos)
        s = raw[pos:end].decode("ascii")
        pos = end + 1
        return s

    first = line().split()
    if len(first) != 3 or first[0] != "BBCKPT1":
        raise ValueError("not a BBCKPT1 checkpoint")
    n_params, n_meta = int(first[1]), int(first[2])
    meta = {}
    for _ in range(n_meta):
        _, k, v = line().split(" ", 2)
        meta[k] = v
    entries = []
    for _ in range(n_params):
        name, shape, off = line().split()
        dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        entries.append((name, dims, int(off)))
    payload = raw[pos:]
    out = {}
    for name, dims, off in entries:
        count = int(np.prod(dims)) if dims else 1
        out[name] = np.frombuffer(payload, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)
    return out, meta


# -- finite-difference checking ---------------------------------------------

def grad_check(loss_fn: Callable[[], Tensor], params: ParamStore, tolerance: float = 1e-4,
               max_entries: int = 6, rng: np.random.Generator | None = None,
               rel_step: float = 1e-5, floor: float = 1e-6) -> dict:
    """Compare analytic gradients with central differences (run under float64).

    For each parameter, up to ``max_entries`` entries are probed with step
    ``h = rel_step * max(1, |p|)``.  The relative error is
    ``|a - n| / max(|a|, |n|, floor)``.  Returns a report with the per-
    parameter maximum and an overall ``ok`` flag.
    """
    rng = rng or np.random.default_rng(0)
    names = list(params)
    analytic = dict(zip(names, grad(loss_fn(), [params[k] for k in names])))
    per_param = {}
    for k in names:
        p = params[k]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size) if flat.size <= max_entries else rng.choice(flat.size, max_entries, replace=False)
        worst = 0.0
        for i in idx:
            orig = flat[i].copy()
            h = rel_step * max(1.0, abs(float(orig)))
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            num = (up - down) / (2 * h)
            a = float(analytic[k].reshape(-1)[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
        per_param[k] = worst
    worst = max(per_param.values()) if per_param else 0.0
    return {"per_param": per_param, "max_rel_error": worst, "ok": worst <= tolerance}
