"""Reverse-mode autodiff over dense float64 numpy arrays.

A ``Tensor`` wraps an ndarray plus closures that push an upstream gradient
to each parent.  Graphs are built eagerly and are throwaway: one forward
pass builds the tape, ``backward`` walks it once in reverse topological
order.  Parameter leaves accumulate into ``.grad`` across backward calls
(zero them between optimizer steps); intermediate nodes get a fresh
``.grad`` each pass.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents")

    # make numpy defer to our reflected operators for ndarray <op> Tensor
    __array_ufunc__ = None

    def __init__(self, value, parents=(), requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self._parents = tuple(parents)
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p, _ in self._parents)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def item(self):
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of ``self`` into every reachable leaf.

        ``seed`` defaults to 1 for scalar outputs.
        """
        if seed is None:
            if self.value.ndim != 0:
                raise ShapeMismatch("backward() without seed requires a scalar output")
            seed = np.ones_like(self.value)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.value.shape:
                raise ShapeMismatch("seed shape does not match output shape")

        order = _toposort(self)
        grads = {id(self): seed}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._parents:
                node.grad = g
                for parent, vjp in node._parents:
                    if not parent.requires_grad:
                        continue
                    pg = vjp(g)
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            else:
                # leaf: accumulate so per-sample backward calls sum up
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g

    # -- operator sugar -----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        val = self.value[idx]
        src_shape = self.value.shape

        def vjp(g):
            out = np.zeros(src_shape, dtype=np.float64)
            np.add.at(out, idx, g)
            return out

        return Tensor(val, [(self, vjp)])


def constant(value):
    return Tensor(value, requires_grad=False)


def parameter(value):
    return Tensor(value, requires_grad=True)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root):
    """Nodes in reverse topological order (root first), iterative DFS."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise binary ops -------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value + b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ],
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value - b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ],
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ],
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor(
        a.value / b.value,
        [
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
        ],
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = np.matmul(av, bv)
    if bv.ndim == 1:
        # (..., m, n) @ (n,) -> (..., m)
        parents = [
            (a, lambda g: _unbroadcast(g[..., :, None] * bv, av.shape)),
            (b, lambda g: _unbroadcast((np.swapaxes(av, -1, -2) @ g[..., None])[..., 0], bv.shape)
                if av.ndim > 2 else av.T @ g),
        ]
    elif av.ndim == 1:
        parents = [
            (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
            (b, lambda g: _unbroadcast(av[:, None] * g[..., None, :], bv.shape)),
        ]
    else:
        parents = [
            (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape)),
            (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)),
        ]
    return Tensor(out, parents)


# -- elementwise unary ops --------------------------------------------------


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return Tensor(a.value * mask, [(a, lambda g: g * mask)])


def sigmoid(a):
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    return Tensor(s, [(a, lambda g: g * s * (1.0 - s))])


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.value)
    return Tensor(e, [(a, lambda g: g * e)])


def log(a):
    a = as_tensor(a)
    return Tensor(np.log(a.value), [(a, lambda g: g / a.value)])


def sqrt(a):
    a = as_tensor(a)
    r = np.sqrt(a.value)
    return Tensor(r, [(a, lambda g: g * 0.5 / r)])


def sin(a):
    a = as_tensor(a)
    return Tensor(np.sin(a.value), [(a, lambda g: g * np.cos(a.value))])


def cos(a):
    a = as_tensor(a)
    return Tensor(np.cos(a.value), [(a, lambda g: -g * np.sin(a.value))])


def absolute(a):
    a = as_tensor(a)
    return Tensor(np.abs(a.value), [(a, lambda g: g * np.sign(a.value))])


def square(a):
    a = as_tensor(a)
    return Tensor(a.value * a.value, [(a, lambda g: g * 2.0 * a.value)])


def power(a, p):
    a = as_tensor(a)
    return Tensor(a.value**p, [(a, lambda g: g * p * a.value ** (p - 1))])


def clip(a, lo, hi):
    a = as_tensor(a)
    mask = (a.value > lo) & (a.value < hi)
    return Tensor(np.clip(a.value, lo, hi), [(a, lambda g: g * mask)])


# -- reductions -------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return Tensor(out, [(a, vjp)])


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.value.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.value.shape[i] for i in axis]))
    else:
        n = a.value.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis):
    """Max along one axis; subgradient flows to the first argmax."""
    a = as_tensor(a)
    out = a.value.max(axis=axis)
    am = a.value.argmax(axis=axis)

    def vjp(g):
        gx = np.zeros_like(a.value)
        idx = list(np.indices(out.shape))
        idx.insert(axis if axis >= 0 else a.value.ndim + axis, am)
        np.add.at(gx, tuple(idx), g)
        return gx

    return Tensor(out, [(a, vjp)])


# -- shape ops --------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    src = a.value.shape
    return Tensor(a.value.reshape(shape), [(a, lambda g: g.reshape(src))])


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return Tensor(a.value.transpose(axes), [(a, lambda g: g.transpose(inv))])


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    out = np.concatenate([t.value for t in tensors], axis=axis)

    def make_vjp(i):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor(out, [(t, make_vjp(i)) for i, t in enumerate(tensors)])


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    return Tensor(out, [(t, make_vjp(i)) for i, t in enumerate(tensors)])


# -- neural net ops ---------------------------------------------------------


def dense(x, w, b):
    """x: (..., n_in), w: (n_in, n_out), b: (n_out,)."""
    return add(matmul(x, w), b)


def conv2d(x, w, b, stride=1, pad=0):
    """2D convolution. x: (C, H, W), w: (O, C, kh, kw), b: (O,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xv, wv = x.value, w.value
    C, H, W = xv.shape
    O, Cw, kh, kw = wv.shape
    if Cw != C:
        raise ShapeMismatch(f"conv2d channel mismatch: {C} vs {Cw}")
    s = stride
    xp = np.pad(xv, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::s, ::s]  # (C, Ho, Wo, kh, kw)
    Ho, Wo = win.shape[1], win.shape[2]
    patches = win.transpose(1, 2, 0, 3, 4).reshape(Ho * Wo, C * kh * kw)
    wmat = wv.reshape(O, C * kh * kw)
    out = (patches @ wmat.T).T.reshape(O, Ho, Wo) + b.value[:, None, None]

    def vjp_x(g):
        gm = g.reshape(O, Ho * Wo)
        dpatch = (gm.T @ wmat).reshape(Ho, Wo, C, kh, kw).transpose(2, 0, 1, 3, 4)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + s * Ho : s, j : j + s * Wo : s] += dpatch[:, :, :, i, j]
        if pad:
            return dxp[:, pad:-pad, pad:-pad]
        return dxp

    def vjp_w(g):
        gm = g.reshape(O, Ho * Wo)
        return (gm @ patches).reshape(wv.shape)

    return Tensor(out, [(x, vjp_x), (w, vjp_w), (b, lambda g: g.sum(axis=(1, 2)))])
