"""Dense tensors with reverse-mode automatic differentiation.

The graph is recorded implicitly: every operation produces a new Tensor
holding references to its parent tensors and a closure that propagates
the output gradient back to them.  Values needed for backward are saved
by value at record time; recorded tensors are never mutated in place.
"""

from __future__ import annotations

import warnings

import numpy as np

# When True, every primitive asserts its output is finite.  Enabled by the
# test suite; off by default so large training runs skip the scan.
CHECK_FINITE = False


class ShapeError(ValueError):
    """Raised when operands of a primitive have incompatible shapes."""


def _as_array(x, dtype=None):
    if isinstance(x, np.ndarray):
        return x.astype(dtype) if dtype is not None and x.dtype != dtype else x
    return np.asarray(x, dtype=dtype if dtype is not None else np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=np.float64, requires_grad=False, name=None):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad, name=name)

    @staticmethod
    def _result(data, parents, backward):
        if CHECK_FINITE and not np.all(np.isfinite(data)):
            bad = np.argwhere(~np.isfinite(np.asarray(data)))
            raise FloatingPointError(
                f"non-finite value produced at index {tuple(bad[0])}")
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))

        return Tensor._result(data, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        data = self.data - other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))

        return Tensor._result(data, (self, other), backward)

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        data = self.data * other.data
        sa, sb = self.data, other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * sb, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * sa, b.shape))

        return Tensor._result(data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        data = self.data / other.data
        sa, sb = self.data, other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / sb, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * sa / (sb * sb), b.shape))

        return Tensor._result(data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        data = -self.data

        def backward(g, a=self):
            a._accumulate(-g)

        return Tensor._result(data, (self,), backward)

    def __pow__(self, p):
        assert np.isscalar(p), "only scalar exponents are supported"
        data = self.data ** p
        sa = self.data

        def backward(g, a=self):
            a._accumulate(g * p * sa ** (p - 1))

        return Tensor._result(data, (self,), backward)

    def square(self):
        data = self.data * self.data
        sa = self.data

        def backward(g, a=self):
            a._accumulate(2.0 * g * sa)

        return Tensor._result(data, (self,), backward)

    def exp(self):
        data = np.exp(self.data)

        def backward(g, a=self, out=None):
            a._accumulate(g * data)

        return Tensor._result(data, (self,), backward)

    def log(self):
        data = np.log(self.data)
        sa = self.data

        def backward(g, a=self):
            a._accumulate(g / sa)

        return Tensor._result(data, (self,), backward)

    def sqrt(self):
        data = np.sqrt(self.data)

        def backward(g, a=self):
            a._accumulate(g * 0.5 / data)

        return Tensor._result(data, (self,), backward)

    # -- activations ----------------------------------------------------------

    def relu(self):
        data = np.maximum(self.data, 0.0)
        mask = self.data > 0.0

        def backward(g, a=self):
            a._accumulate(g * mask)

        return Tensor._result(data, (self,), backward)

    def tanh(self):
        data = np.tanh(self.data)

        def backward(g, a=self):
            a._accumulate(g * (1.0 - data * data))

        return Tensor._result(data, (self,), backward)

    def sigmoid(self):
        data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g, a=self):
            a._accumulate(g * data * (1.0 - data))

        return Tensor._result(data, (self,), backward)

    def softmax(self, axis=0):
        """Softmax along `axis` (channel axis for class logits)."""
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        data = e / e.sum(axis=axis, keepdims=True)

        def backward(g, a=self):
            inner = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (g - inner))

        return Tensor._result(data, (self,), backward)

    # -- clamping -------------------------------------------------------------

    def clamp_min(self, lo):
        data = np.maximum(self.data, lo)
        mask = self.data >= lo

        def backward(g, a=self):
            a._accumulate(g * mask)

        return Tensor._result(data, (self,), backward)

    def clip(self, lo, hi):
        data = np.clip(self.data, lo, hi)
        mask = (self.data >= lo) & (self.data <= hi)

        def backward(g, a=self):
            a._accumulate(g * mask)

        return Tensor._result(data, (self,), backward)

    # -- shape manipulation ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        data = self.data.reshape(shape)

        def backward(g, a=self):
            a._accumulate(g.reshape(old))

        return Tensor._result(data, (self,), backward)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        data = self.data.transpose(axes)

        def backward(g, a=self):
            a._accumulate(g.transpose(inv))

        return Tensor._result(data, (self,), backward)

    def __getitem__(self, key):
        data = self.data[key]
        shape = self.shape

        def backward(g, a=self):
            full = np.zeros(shape, dtype=g.dtype)
            np.add.at(full, key, g)
            a._accumulate(full)

        return Tensor._result(data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.shape

        def backward(g, a=self):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, shape).copy())

        return Tensor._result(data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        data = self.data.mean(axis=axis, keepdims=keepdims)
        shape = self.shape
        n = self.size / max(1, data.size)

        def backward(g, a=self):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, shape) / n)

        return Tensor._result(data, (self,), backward)

    # -- linear algebra -------------------------------------------------------

    def matmul(self, other):
        other = self._coerce(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(
                f"matmul expects 2-D operands, got {self.shape} and {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(
                f"matmul: inner dimensions differ, {self.shape} vs {other.shape}")
        data = self.data @ other.data
        sa, sb = self.data, other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g @ sb.T)
            if b.requires_grad:
                b._accumulate(sa.T @ g)

        return Tensor._result(data, (self, other), backward)

    __matmul__ = matmul

    # -- backward pass --------------------------------------------------------

    def _accumulate(self, g):
        # copy on first write: `g` may be shared with another parent's grad
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def _topo(self):
        order, visited = [], set()
        stack = [(self, False)]
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
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    def backward(self):
        """Reverse-mode sweep from a scalar; fills .grad on every leaf."""
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        order = self._topo()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None


# -- free-function primitives -------------------------------------------------


def outer(u, v):
    """Outer product of two vectors: out[i, j] = u[i] * v[j]."""
    if u.ndim != 1 or v.ndim != 1:
        raise ShapeError(f"outer expects vectors, got {u.shape} and {v.shape}")
    data = np.outer(u.data, v.data)
    su, sv = u.data, v.data

    def backward(g, a=u, b=v):
        if a.requires_grad:
            a._accumulate(g @ sv)
        if b.requires_grad:
            b._accumulate(su @ g)

    return Tensor._result(data, (u, v), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + s)
                t._accumulate(g[tuple(idx)])
            offset += s

    return Tensor._result(data, tuple(tensors), backward)


def conv2d(x, w, b=None):
    """2-D convolution, stride 1, zero same-padding, square odd kernel.

    x: [N, C, H, W]; w: [O, C, k, k]; b: [O] or None.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D operands, got {x.shape} and {w.shape}")
    N, C, H, W = x.shape
    O, Cw, k, k2 = w.shape
    if C != Cw or k != k2 or k % 2 != 1:
        raise ShapeError(f"conv2d: incompatible kernel {w.shape} for input {x.shape}")
    wmat = w.data.reshape(O, C * k * k)
    # columns laid out [C*k*k, N*H*W]: the fastest copy pattern from NCHW
    if k == 1:
        cols = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(
            C, N * H * W)
    else:
        pad = k // 2
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
        cols = np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(
            C * k * k, N * H * W)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    data = np.ascontiguousarray(out.reshape(O, N, H, W).transpose(1, 0, 2, 3))

    def backward(g, xx=x, ww=w, bb=b):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, N * H * W)
        if ww.requires_grad:
            ww._accumulate((gmat @ cols.T).reshape(O, C, k, k))
        if bb is not None and bb.requires_grad:
            bb._accumulate(gmat.sum(axis=1))
        if xx.requires_grad:
            dcols = wmat.T @ gmat  # [C*k*k, N*H*W]
            if k == 1:
                dx = dcols.reshape(C, N, H, W).transpose(1, 0, 2, 3)
            else:
                pad = k // 2
                dwin = dcols.reshape(C, k, k, N, H, W)
                # accumulate in [C, N, Hp, Wp] (contiguous sources), then
                # swap to NCHW once at the end
                dxp = np.zeros((C, N, H + 2 * pad, W + 2 * pad), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i:i + H, j:j + W] += dwin[:, i, j]
                dx = dxp[:, :, pad:pad + H, pad:pad + W].transpose(1, 0, 2, 3)
            xx._accumulate(dx)

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._result(data, parents, backward)


def maxpool2(x):
    """2x2 max-pooling, stride 2.  x: [N, C, H, W] with even H, W."""
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"maxpool2 requires even spatial dims, got {x.shape}")
    blocks = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(
        0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1)
    data = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g, a=x):
        db = np.zeros_like(blocks)
        np.put_along_axis(db, arg[..., None], g[..., None], axis=-1)
        dx = db.reshape(N, C, H // 2, W // 2, 2, 2).transpose(
            0, 1, 2, 4, 3, 5).reshape(N, C, H, W)
        a._accumulate(dx)

    return Tensor._result(data, (x,), backward)


def upsample2(x):
    """Nearest-neighbour 2x upsampling.  x: [N, C, H, W]."""
    N, C, H, W = x.shape
    data = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g, a=x):
        a._accumulate(g.reshape(N, C, H, 2, W, 2).sum(axis=(3, 5)))

    return Tensor._result(data, (x,), backward)


def gradients(loss, leaves):
    """Run backward from `loss`, returning grads for `leaves` (dict or list).

    Leaves that never entered the graph get a zero gradient and a warning.
    """
    for leaf in (leaves.values() if isinstance(leaves, dict) else leaves):
        leaf.zero_grad()
    loss.backward()
    items = leaves.items() if isinstance(leaves, dict) else enumerate(leaves)
    out = {}
    for key, leaf in items:
        if leaf.grad is None:
            warnings.warn(f"leaf {key!r} does not influence the loss; gradient is zero")
            out[key] = np.zeros_like(leaf.data)
        else:
            out[key] = leaf.grad
    return out


def finite_difference_check(f, x, step=1e-4):
    """Max relative error between analytic and central-difference gradients.

    `f` maps a Tensor to a scalar Tensor and must be deterministic.  The
    numeric side evaluates f at x +/- step per element, fully independent
    of the backward pass it validates.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x.data, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    y = f(leaf)
    if y.size != 1:
        raise ValueError("finite_difference_check requires a scalar-valued f")
    y.backward()
    analytic = leaf.grad.reshape(-1)
    numeric = np.empty_like(analytic)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            bumped = flat.copy()
            bumped[i] += sign * step
            val = f(Tensor(bumped.reshape(x0.shape))).item()
            if not np.isfinite(val):
                raise FloatingPointError(
                    f"non-finite value when perturbing element {i}")
            if slot == 0:
                plus = val
            else:
                minus = val
        numeric[i] = (plus - minus) / (2.0 * step)
    denom = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
