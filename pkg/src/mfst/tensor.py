"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors wrap row-major float32 numpy buffers. Every differentiable op
records a provenance node (parents + a backward closure) on its output;
``backward`` on a scalar loss walks the graph in reverse topological
order and accumulates gradients into ``.grad`` of every tensor that
requires them. Gradient accumulation is additive; call ``zero_grads``
between optimizer steps.

conv3d forward/backward are dispatched to torch's CPU kernels for speed
(single BLAS-free call instead of a python tap loop); everything else is
plain numpy. Results stay deterministic single-threaded.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf

import torch
import torch.nn.functional as _F
from torch.nn.grad import conv3d_input as _conv3d_input
from torch.nn.grad import conv3d_weight as _conv3d_weight

torch.set_num_threads(1)

_INV_SQRT2 = np.float32(0.7071067811865476)
_INV_SQRT2PI = np.float32(0.3989422804014327)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


# When False, ops do not record provenance nodes (cheap inference mode).
_grad_enabled = True


class no_grad:
    """Context manager disabling graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return slice_(self, key)

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())


class Parameter(Tensor):
    """Named trainable tensor; the name is its checkpoint identity."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def _make(out_data, parents, backward_fn) -> Tensor:
    """Wrap an op result, recording provenance if any parent needs grad."""
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; accumulates into .grad."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        if node.requires_grad and not node._parents:
            # leaf: accumulate into the persistent grad slot
            node.grad = g.astype(np.float32, copy=False) if node.grad is None else node.grad + g
        elif node._parents:
            node.grad = g.astype(np.float32, copy=False)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# element-wise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add requires identical shapes, got {a.shape} vs {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add_bcast(a: Tensor, b: Tensor) -> Tensor:
    """Addition with numpy broadcasting (internal building block)."""
    out = a.data + b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub requires identical shapes, got {a.shape} vs {b.shape}")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul requires identical shapes, got {a.shape} vs {b.shape}")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = np.float32(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    in_shape = a.data.shape
    return _make(out, (a,), lambda g: (g.reshape(in_shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                 lambda g: (g.transpose(inv),))


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    split_points = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, split_points, axis=axis))

    return _make(out, tuple(tensors), bwd)


def slice_(a: Tensor, key) -> Tensor:
    out = a.data[key]
    in_shape = a.data.shape

    def bwd(g):
        gx = np.zeros(in_shape, dtype=np.float32)
        gx[key] = g
        return (gx,)

    return _make(np.ascontiguousarray(out), (a,), bwd)


def repeat_axis(a: Tensor, reps: int, axis: int) -> Tensor:
    """Repeat every element `reps` times along `axis` (nearest upsample)."""
    out = np.repeat(a.data, reps, axis=axis)
    n = a.data.shape[axis]

    def bwd(g):
        shp = list(g.shape)
        shp[axis:axis + 1] = [n, reps]
        return (g.reshape(shp).sum(axis=axis + 1),)

    return _make(out, (a,), bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float32)
    in_shape = a.data.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).astype(np.float32, copy=False),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).astype(np.float32, copy=False),)

    return _make(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product (..., n, m) @ (..., m, p); no broadcasting."""
    if a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2)) if a.requires_grad else None
        gb = np.matmul(a.data.swapaxes(-1, -2), g) if b.requires_grad else None
        return (ga, gb)

    return _make(out, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: y = x @ w.T + b, w: (Dout, Din)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight Din {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[0]},)")
    out = np.matmul(x.data, w.data.T)
    if b is not None:
        out += b.data

    def bwd(g):
        gx = np.matmul(g, w.data) if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gf = g.reshape(-1, g.shape[-1])
            xf = x.data.reshape(-1, x.data.shape[-1])
            gw = gf.T @ xf
        gb = None
        if b is not None and b.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, bwd)


# ---------------------------------------------------------------------------
# activations / normalization
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)
    return _make(out, (x,), lambda g: (g * (x.data > 0),))


def gelu(x: Tensor) -> Tensor:
    """GELU with the exact erf form: x * Phi(x)."""
    d = x.data
    phi = 0.5 * (1.0 + erf(d * _INV_SQRT2)).astype(np.float32, copy=False)
    out = d * phi

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * d * d)
        return (g * (phi + d * pdf),)

    return _make(out, (x,), bwd)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "gelu":
        return gelu(x)
    raise ValueError(f"unknown activation kind: {kind!r}")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bwd(g):
        gxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = inv * (gxhat
                        - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
            gx = gx.astype(np.float32, copy=False)
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return (gx, gg, gb)

    return _make(out, (x, gamma, beta), bwd)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; `mask` is a boolean keep-mask.

    Masked-out entries are exactly 0 in the output. A row with nothing
    kept is an error.
    """
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row has all entries masked out")
        d = np.where(mask, d, -np.inf)
    m = d.max(axis=-1, keepdims=True)
    e = np.exp(d - m)          # exp(-inf) is exactly 0, masked entries stay 0
    s = e / e.sum(axis=-1, keepdims=True)
    s = s.astype(np.float32, copy=False)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _make(s, (x,), bwd)


def log_softmax(x: Tensor) -> Tensor:
    d = x.data
    m = d.max(axis=-1, keepdims=True)
    z = d - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = (z - lse).astype(np.float32, copy=False)

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling
# ---------------------------------------------------------------------------

def _out_dim(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def conv3d(x: Tensor, w: Tensor, bias: Tensor | None = None,
           stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """Vanilla 3D convolution (cross-correlation) with zero padding."""
    if x.ndim != 5 or w.ndim != 5:
        raise ShapeError("conv3d expects x:(B,Cin,T,H,W), w:(Cout,Cin,kt,kh,kw)")
    B, cin, T, H, W = x.shape
    cout, cin_w, kt, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv3d: input channels {cin} != kernel channels {cin_w}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv3d: bias shape {bias.shape} != ({cout},)")
    stride = tuple(stride)
    padding = tuple(padding)
    dims = [_out_dim(n, k, s, p) for n, k, s, p in
            zip((T, H, W), (kt, kh, kw), stride, padding)]
    if min(dims) < 1:
        raise ShapeError(f"conv3d: non-positive output dims {dims} for input {x.shape}")

    xt = torch.from_numpy(np.ascontiguousarray(x.data))
    wt = torch.from_numpy(np.ascontiguousarray(w.data))
    bt = torch.from_numpy(bias.data) if bias is not None else None
    out = _F.conv3d(xt, wt, bt, stride=stride, padding=padding).numpy()

    def bwd(g):
        gt = torch.from_numpy(np.ascontiguousarray(g))
        gx = gw = gb = None
        if x.requires_grad:
            gx = _conv3d_input(tuple(x.shape), wt, gt,
                               stride=stride, padding=padding).numpy()
        if w.requires_grad:
            gw = _conv3d_weight(xt, tuple(w.shape), gt,
                                stride=stride, padding=padding).numpy()
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3, 4))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, w, bias) if bias is not None else (x, w)
    return _make(out, parents, bwd)


def maxpool3d(x: Tensor, window, stride=None, padding=(0, 0, 0)) -> Tensor:
    """3D max pooling; ties route the gradient to the first window element
    in row-major order. Padding (if any) is -inf and never wins a max."""
    if x.ndim != 5:
        raise ShapeError("maxpool3d expects (B,C,T,H,W)")
    window = tuple(window)
    stride = window if stride is None else tuple(stride)
    padding = tuple(padding)
    B, C, T, H, W = x.shape
    padded = [n + 2 * p for n, p in zip((T, H, W), padding)]
    if any(k > n for k, n in zip(window, padded)):
        raise ShapeError(f"maxpool3d: window {window} larger than padded input {padded}")
    dims = [_out_dim(n, k, s, p) for n, k, s, p in
            zip((T, H, W), window, stride, padding)]
    if min(dims) < 1:
        raise ShapeError(f"maxpool3d: non-positive output dims {dims}")

    xp = x.data
    if any(padding):
        xp = np.pad(xp, ((0, 0), (0, 0)) + tuple((p, p) for p in padding),
                    constant_values=-np.inf)
    win = sliding_window_view(xp, window, axis=(2, 3, 4))
    win = win[:, :, ::stride[0], ::stride[1], ::stride[2]]
    flat = win.reshape(win.shape[:5] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out, dtype=np.float32)

    def bwd(g):
        gx = np.zeros_like(xp, dtype=np.float32)
        wt, wh, ww = window
        it, rem = np.divmod(idx, wh * ww)
        ih, iw = np.divmod(rem, ww)
        ot, oh, ow = np.meshgrid(np.arange(dims[0]) * stride[0],
                                 np.arange(dims[1]) * stride[1],
                                 np.arange(dims[2]) * stride[2], indexing="ij")
        tt = ot[None, None] + it
        hh = oh[None, None] + ih
        ww_ = ow[None, None] + iw
        bb, cc = np.meshgrid(np.arange(B), np.arange(C), indexing="ij")
        bb = bb[:, :, None, None, None]
        cc = cc[:, :, None, None, None]
        np.add.at(gx, (np.broadcast_to(bb, idx.shape),
                       np.broadcast_to(cc, idx.shape), tt, hh, ww_), g)
        if any(padding):
            pt, ph, pw = padding
            gx = gx[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
        return (np.ascontiguousarray(gx),)

    return _make(out, (x,), bwd)


def center_sample(x: Tensor, kernel, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    """For each conv output position, the input value at the receptive-field
    center (odd kernels only). Output shape matches conv3d's (B,Cin,T',H',W')."""
    kernel = tuple(kernel)
    stride = tuple(stride)
    padding = tuple(padding)
    if any(k % 2 == 0 for k in kernel):
        raise ShapeError(f"center_sample requires odd kernel sizes, got {kernel}")
    B, C, T, H, W = x.shape
    dims = [_out_dim(n, k, s, p) for n, k, s, p in
            zip((T, H, W), kernel, stride, padding)]
    if min(dims) < 1:
        raise ShapeError(f"center_sample: non-positive output dims {dims}")
    centers = [k // 2 for k in kernel]
    xp = x.data
    if any(padding):
        xp = np.pad(xp, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    sl = tuple(slice(c, c + s * d, s) for c, s, d in zip(centers, stride, dims))
    key = (slice(None), slice(None)) + sl
    out = np.ascontiguousarray(xp[key])
    pad_shape = xp.shape

    def bwd(g):
        gp = np.zeros(pad_shape, dtype=np.float32)
        gp[key] = g
        if any(padding):
            pt, ph, pw = padding
            gp = gp[:, :, pt:pt + T, ph:ph + H, pw:pw + W]
        return (np.ascontiguousarray(gp),)

    return _make(out, (x,), bwd)
