"""Dense-tensor reverse-mode automatic differentiation.

Tensors wrap contiguous numpy arrays (float32 for training, float64 for
gradient checks) and record the operation graph implicitly: each non-leaf
tensor keeps references to its parents plus a VJP closure. ``backward`` on a
scalar walks the recorded nodes in exact reverse topological order and
accumulates gradients additively, so a tensor feeding several consumers
receives the sum of all branch gradients.

Everything is single-threaded per graph and deterministic: two forward
passes over the same inputs produce bitwise-identical values.
"""

import contextlib

import numpy as np

from . import kernels


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    """Raised when an op receives tensors of incompatible shapes."""


_debug_checks = False

# test hook: op name -> factor applied to the upstream gradient of that op,
# used as a negative control for the gradient-check suite
_vjp_perturbation = {}


def set_debug(flag):
    """Enable per-op NaN/Inf assertions on freshly computed values."""
    global _debug_checks
    _debug_checks = bool(flag)


@contextlib.contextmanager
def perturb_vjp(op_name, factor):
    """Scale the backward signal of one primitive (gradcheck negative control)."""
    _vjp_perturbation[op_name] = factor
    try:
        yield
    finally:
        del _vjp_perturbation[op_name]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None, _op="leaf"):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, dtype=None, requires_grad=False):
    """Wrap data as a leaf tensor (contiguous copy if needed)."""
    arr = np.asarray(data, dtype=dtype)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return Tensor(arr, requires_grad=requires_grad)


def _make(data, parents, vjp, op):
    if _debug_checks and not np.all(np.isfinite(data)):
        raise AutodiffError(f"non-finite values produced by op '{op}'")
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data, _op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _vjp=vjp, _op=op)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def backward(out):
    """Populate .grad for every requires_grad tensor reachable from out.

    out must be a scalar (shape () or size 1) produced by recorded ops.
    """
    if out.size != 1:
        raise AutodiffError(f"backward needs a scalar output, got shape {out.shape}")
    # iterative DFS: tapes can be thousands of nodes deep
    topo = []
    visited = set()
    stack = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        g = node.grad
        factor = _vjp_perturbation.get(node._op)
        if factor is not None:
            g = g * factor
        node._vjp(g)


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        # numpy broadcasting rules still apply; reject only true mismatches
        try:
            np.broadcast_shapes(a.data.shape, b.data.shape)
        except ValueError:
            raise ShapeError(
                f"op '{op}': cannot broadcast {a.data.shape} with {b.data.shape}"
            ) from None


def _check_same_dtype(op, a, b):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(
            f"op '{op}': dtype mismatch {a.data.dtype} vs {b.data.dtype}"
        )


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def add(a, b):
    _check_same_shape("add", a, b)
    _check_same_dtype("add", a, b)
    out_data = a.data + b.data

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp, "add")


def sub(a, b):
    _check_same_shape("sub", a, b)
    _check_same_dtype("sub", a, b)
    out_data = a.data - b.data

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, -_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp, "sub")


def mul(a, b):
    _check_same_shape("mul", a, b)
    _check_same_dtype("mul", a, b)
    out_data = a.data * b.data

    def vjp(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), vjp, "mul")


def scale(a, s):
    s = a.data.dtype.type(s)
    out_data = a.data * s

    def vjp(g):
        _accum(a, g * s)

    return _make(out_data, (a,), vjp, "scale")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"op 'matmul': incompatible shapes {a.data.shape} @ {b.data.shape}"
        )
    _check_same_dtype("matmul", a, b)
    out_data = a.data @ b.data

    def vjp(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(out_data, (a, b), vjp, "matmul")


def concat(tensors, axis=0):
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        for t, s, e in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(s, e)
            _accum(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), vjp, "concat")


def slice_axis(a, axis, start, stop):
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out_data = np.ascontiguousarray(a.data[sl])

    def vjp(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[sl] = g
            _accum(a, ga)

    return _make(out_data, (a,), vjp, "slice")


def broadcast_to(a, shape):
    out_data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def vjp(g):
        _accum(a, _unbroadcast(g, a.data.shape))

    return _make(out_data, (a,), vjp, "broadcast")


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def vjp(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), vjp, "reshape")


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a):
    mask = a.data > 0
    out_data = np.where(mask, a.data, a.data.dtype.type(0))

    def vjp(g):
        _accum(a, g * mask)

    return _make(out_data, (a,), vjp, "relu")


def tanh(a):
    out_data = np.tanh(a.data)

    def vjp(g):
        _accum(a, g * (1 - out_data * out_data))

    return _make(out_data, (a,), vjp, "tanh")


def sqrt(a):
    """Elementwise square root with subgradient 0 at 0 (keeps exact zeros exact)."""
    out_data = np.sqrt(a.data)

    def vjp(g):
        d = np.zeros_like(out_data)
        pos = out_data > 0
        d[pos] = 1 / (2 * out_data[pos])
        _accum(a, g * d)

    return _make(out_data, (a,), vjp, "sqrt")


# ---------------------------------------------------------------------------
# reductions


def sum_axis(a, axis=None):
    out_data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape))

    return _make(out_data, (a,), vjp, "sum")


def mean_axis(a, axis=None):
    n = a.data.size if axis is None else a.data.shape[axis]
    inv = a.data.dtype.type(1.0 / n)
    out_data = a.data.mean(axis=axis)

    def vjp(g):
        if axis is None:
            _accum(a, np.broadcast_to(g * inv, a.data.shape))
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g * inv, axis), a.data.shape))

    return _make(out_data, (a,), vjp, "mean")


def max_axis(a, axis):
    """Channel-wise max over one axis; argmax recorded, ties take the lowest index."""
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    out_data = np.squeeze(out_data, axis=axis)

    def vjp(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.put_along_axis(
                ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis
            )
            _accum(a, ga)

    return _make(out_data, (a,), vjp, "max")


# ---------------------------------------------------------------------------
# indexing and sampling


def gather_rows(a, idx):
    """Select rows of a by an integer index array; out shape idx.shape + a.shape[1:]."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(
            f"op 'gather': index out of range for {a.data.shape[0]} rows"
        )
    out_data = a.data[idx]

    def vjp(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            _accum(a, ga)

    return _make(out_data, (a,), vjp, "gather")


def bilinear_sample(fmap, uv, valid=None):
    """Sample fmap (H,W,C) at uv (N,2) pixel coordinates, bilinear, border clamp.

    Differentiable w.r.t. fmap only; uv is treated as constant. Rows where
    valid is False yield zeros and receive no gradient.
    """
    if fmap.data.ndim != 3:
        raise ShapeError(f"op 'bilinear': feature map must be (H,W,C), got {fmap.data.shape}")
    uv = np.asarray(uv, dtype=np.float64)
    if valid is None:
        valid = np.ones(uv.shape[0], dtype=bool)
    out_data = kernels.bilinear_fwd(fmap.data, uv, valid)

    def vjp(g):
        gm = kernels.bilinear_bwd(fmap.data.shape, fmap.data.dtype, uv, valid, g)
        _accum(fmap, gm)

    return _make(out_data, (fmap,), vjp, "bilinear")


# ---------------------------------------------------------------------------
# image ops


def conv2d(x, w, b, stride=1):
    """2D convolution on (H,W,Ci) with kernel (kh,kw,Ci,Co), zero pad kh//2."""
    if x.data.ndim != 3 or w.data.ndim != 4 or x.data.shape[2] != w.data.shape[2]:
        raise ShapeError(
            f"op 'conv2d': input {x.data.shape} incompatible with kernel {w.data.shape}"
        )
    if stride not in (1, 2):
        raise ShapeError(f"op 'conv2d': stride must be 1 or 2, got {stride}")
    out_data = kernels.conv2d_fwd(x.data, w.data, b.data, stride)

    def vjp(g):
        gx, gw, gb = kernels.conv2d_bwd(x.data, w.data, stride, g)
        _accum(x, gx)
        _accum(w, gw)
        _accum(b, gb)

    return _make(out_data, (x, w, b), vjp, "conv2d")


def avg_pool2d(x, window):
    """Average pool with a square window and equal stride (no padding)."""
    h, w_, c = x.data.shape
    if h % window or w_ % window:
        raise ShapeError(
            f"op 'avgpool': window {window} must divide spatial dims {(h, w_)}"
        )
    ho, wo = h // window, w_ // window
    out_data = x.data.reshape(ho, window, wo, window, c).mean(axis=(1, 3))
    inv = x.data.dtype.type(1.0 / (window * window))

    def vjp(g):
        gx = np.broadcast_to(
            (g * inv)[:, None, :, None, :], (ho, window, wo, window, c)
        ).reshape(h, w_, c)
        _accum(x, gx)

    return _make(out_data, (x,), vjp, "avgpool")


# ---------------------------------------------------------------------------
# composed helpers


def instance_stats(f, eps=0.0):
    """Per-channel mean and std of point features f (N,C), biased estimator.

    Returns (mu (C,), sigma (C,)); eps is NOT added here, callers add it
    where their denominator needs guarding.
    """
    mu = mean_axis(f, axis=0)
    centered = sub(f, broadcast_to(reshape(mu, (1, -1)), f.shape))
    var = mean_axis(mul(centered, centered), axis=0)
    sigma = sqrt(var)
    if eps:
        sigma = add(sigma, tensor(np.full(sigma.shape, eps, dtype=sigma.dtype.type)))
    return mu, sigma


def recip(a, eps=0.0):
    """Elementwise 1/(a+eps)."""
    denom = a.data + a.data.dtype.type(eps)
    out_data = 1 / denom

    def vjp(g):
        _accum(a, -g * out_data * out_data)

    return _make(out_data, (a,), vjp, "recip")
