"""Array-valued reverse-mode autodiff tape.

A :class:`Tensor` wraps one ndarray plus the closure that routes its output
gradient to its parents.  The op set is exactly what the networks here need:
3x3 conv, leaky ReLU, factor-2 bilinear resampling, channel concat, add,
[0,1] clamp, scalar scaling and mean-reduced L1 / squared distances.  Gradients
accumulate, so weight sharing across recurrent iterations or scales needs no
special handling.
"""

import numpy as np

from mb2d.nn import ops


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def backward(self):
        """Reverse sweep from a scalar tensor."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            order.append(t)

        visit(self)
        self.grad = np.ones_like(self.data)
        for t in reversed(order):
            if t._backward is not None:
                t._backward(t.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={'yes' if self.requires_grad else 'no'})"


def const(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _needs_graph(*tensors):
    return any(t.requires_grad or t._parents for t in tensors)


def conv3x3(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"conv input must be NCHW, got shape {x.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"conv channel mismatch: input {x.shape[1]}, weight expects {w.shape[1]}")
    xp = ops.pad1(x.data)
    y = ops.conv3x3_fwd(xp, w.data, b.data, stride)
    if not _needs_graph(x, w, b):
        return Tensor(y)
    h, wd = x.shape[2], x.shape[3]

    def backward(dy):
        if w.requires_grad or b.requires_grad:
            dw, db = ops.conv3x3_bwd_weight(xp, dy, stride)
            w._accum(dw)
            b._accum(db)
        if x.requires_grad or x._parents:
            x._accum(ops.conv3x3_bwd_input(dy, w.data, stride, h, wd))

    return Tensor(y, parents=(x, w, b), backward=backward)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    neg = x.data < 0
    y = np.where(neg, x.data * x.dtype.type(slope), x.data)
    if not _needs_graph(x):
        return Tensor(y)

    def backward(dy):
        g = dy.copy()
        g[neg] *= slope
        x._accum(g)

    return Tensor(y, parents=(x,), backward=backward)


def clamp01(x: Tensor) -> Tensor:
    y = np.clip(x.data, 0.0, 1.0)
    if not _needs_graph(x):
        return Tensor(y)
    inside = (x.data >= 0.0) & (x.data <= 1.0)

    def backward(dy):
        x._accum(np.where(inside, dy, 0.0))

    return Tensor(y, parents=(x,), backward=backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    y = a.data + b.data
    if not _needs_graph(a, b):
        return Tensor(y)

    def backward(dy):
        a._accum(dy)
        b._accum(dy)

    return Tensor(y, parents=(a, b), backward=backward)


def scale(x: Tensor, s: float) -> Tensor:
    y = x.data * x.dtype.type(s)
    if not _needs_graph(x):
        return Tensor(y)

    def backward(dy):
        x._accum(dy * s)

    return Tensor(y, parents=(x,), backward=backward)


def concat_ch(tensors) -> Tensor:
    tensors = list(tensors)
    y = np.concatenate([t.data for t in tensors], axis=1)
    if not _needs_graph(*tensors):
        return Tensor(y)
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def backward(dy):
        for t, g in zip(tensors, np.split(dy, splits, axis=1)):
            t._accum(g)

    return Tensor(y, parents=tuple(tensors), backward=backward)


def upsample2(x: Tensor) -> Tensor:
    y = ops.up2_fwd(x.data)
    if not _needs_graph(x):
        return Tensor(y)

    def backward(dy):
        x._accum(ops.up2_bwd(dy))

    return Tensor(y, parents=(x,), backward=backward)


def downsample2(x: Tensor) -> Tensor:
    y = ops.down2_fwd(x.data)
    if not _needs_graph(x):
        return Tensor(y)

    def backward(dy):
        x._accum(ops.down2_bwd(dy))

    return Tensor(y, parents=(x,), backward=backward)


def l1_to(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean absolute difference against a constant target; scalar output."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"l1 shape mismatch: {pred.shape} vs {target.shape}")
    r = pred.data - target
    y = np.abs(r).mean(dtype=np.float64)
    if not _needs_graph(pred):
        return Tensor(y)

    def backward(dy):
        pred._accum((np.sign(r) * (float(dy) / r.size)).astype(pred.dtype))

    return Tensor(np.asarray(y), parents=(pred,), backward=backward)


def mse_to(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared difference against a constant target; scalar output."""
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    r = pred.data.astype(np.float64) - target
    y = np.mean(r * r)
    if not _needs_graph(pred):
        return Tensor(y)

    def backward(dy):
        pred._accum((r * (2.0 * float(dy) / r.size)).astype(pred.dtype))

    return Tensor(np.asarray(y), parents=(pred,), backward=backward)


def add_scalars(terms) -> Tensor:
    """Sum of scalar tensors (loss accumulation across iterations/scales)."""
    terms = list(terms)
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return total
