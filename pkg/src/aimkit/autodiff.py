"""Reverse-mode automatic differentiation over dense numpy tensors.

Primitives are plain functions operating on :class:`Tensor`.  While a
:class:`Tape` is active, every primitive whose inputs require gradients
appends a record (op name, inputs, output, backward closure); backward
walks the records in exact reverse execution order and accumulates
vector-Jacobian products.  There is no graph optimisation and no operator
fusion; the engine favours verifiable correctness over speed.

Two precisions are supported and never mixed on one tape: float32 for
training, float64 for gradient checking.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError, PrecisionError, UsageError

DTYPES = (np.float32, np.float64)


class Tensor:
    """Dense n-dimensional array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """View of the same data that does not require gradients."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def assert_finite(self, context: str = "tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"{context}: non-finite values present")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    def __radd__(self, other):
        return add(_as_tensor(other, self.dtype), self)

    def __sub__(self, other):
        return subtract(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return subtract(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return multiply(self, _as_tensor(other, self.dtype))

    def __rmul__(self, other):
        return multiply(_as_tensor(other, self.dtype), self)

    def __truediv__(self, other):
        return divide(self, _as_tensor(other, self.dtype))

    def __rtruediv__(self, other):
        return divide(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return multiply(self, Tensor(np.asarray(-1, dtype=self.dtype)))

    def __getitem__(self, key):
        return narrow(self, key)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


class _Record:
    __slots__ = ("name", "inputs", "out", "backward")

    def __init__(self, name, inputs, out, backward):
        self.name = name
        self.inputs = inputs
        self.out = out
        self.backward = backward


_TAPE_STACK: list = []


class Tape:
    """Ordered record of executed primitives for one backward pass.

    Single-threaded by contract: independent tapes may live on separate
    threads, but one tape is never shared.
    """

    def __init__(self, debug: bool = False):
        self.debug = debug
        self.records: list[_Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self

    def backward(self, loss: Tensor, wrt=None):
        """Accumulate d(loss)/d(t) into ``t.grad`` for target tensors.

        Targets are all tensors with ``requires_grad`` when ``wrt`` is
        None, else exactly the tensors in ``wrt`` (records that cannot
        reach a target are skipped).  Gradients add across fan-out and
        across repeated backward calls.
        """
        if not self.records:
            raise UsageError("backward on empty tape")
        if loss.size != 1:
            raise UsageError(f"backward requires a scalar loss, got shape {loss.shape}")

        wrt_ids = None
        reachable = None
        if wrt is not None:
            wrt_ids = {id(t) for t in wrt}
            reachable = set(wrt_ids)
            for rec in self.records:
                if any(id(t) in reachable for t in rec.inputs):
                    reachable.add(id(rec.out))

        flow = {id(loss): np.ones_like(loss.data)}
        leaf_targets: dict[int, Tensor] = {}

        for rec in reversed(self.records):
            g = flow.pop(id(rec.out), None)
            if g is None:
                continue
            # Reverse execution order means every consumer of rec.out has
            # already contributed, so g is final here.
            if self._is_target(rec.out, wrt_ids):
                rec.out.grad = g.copy() if rec.out.grad is None else rec.out.grad + g
            if reachable is not None and id(rec.out) not in reachable:
                continue
            needs = []
            for inp in rec.inputs:
                iid = id(inp)
                if wrt_ids is None:
                    needs.append(inp.requires_grad or iid in self._produced)
                else:
                    needs.append(iid in reachable)
            if not any(needs):
                continue
            grads = rec.backward(g, tuple(needs))
            for inp, gi, need in zip(rec.inputs, grads, needs):
                if not need or gi is None:
                    continue
                iid = id(inp)
                if iid in flow:
                    flow[iid] = flow[iid] + gi
                else:
                    flow[iid] = gi
                if iid not in self._produced and self._is_target(inp, wrt_ids):
                    leaf_targets[iid] = inp

        for iid, tensor in leaf_targets.items():
            g = flow.get(iid)
            if g is None:
                continue
            tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g

    @staticmethod
    def _is_target(tensor: Tensor, wrt_ids) -> bool:
        if wrt_ids is None:
            return tensor.requires_grad
        return id(tensor) in wrt_ids


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(name, inputs, out_data, backward) -> Tensor:
    """Wrap an op result, recording it on the active tape if needed."""
    tensors = [t for t in inputs if isinstance(t, Tensor)]
    if tensors:
        first = tensors[0].data.dtype
        for t in tensors[1:]:
            if t.data.dtype != first:
                raise UsageError(f"{name}: mixed precisions on one tape: "
                                 f"{first.name} vs {t.data.dtype.name}")
    out = Tensor(out_data)
    tape = _active_tape()
    requires = any(t.requires_grad for t in tensors)
    out.requires_grad = requires
    if tape is not None:
        if tape.debug and not np.all(np.isfinite(out_data)):
            raise NumericError(f"{name}: non-finite intermediate value")
        if requires:
            tape.records.append(_Record(name, tuple(tensors), out, backward))
            tape._produced.add(id(out))
    return out


def custom_op(name: str, inputs, out_data, backward) -> Tensor:
    """Record an externally defined op (used by the gradient reversal layer)."""
    return _finish(name, tuple(inputs), out_data, backward)


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, needs):
        return (_sum_to_shape(g, a.shape) if needs[0] else None,
                _sum_to_shape(g, b.shape) if needs[1] else None)

    return _finish("add", (a, b), a.data + b.data, backward)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, needs):
        return (_sum_to_shape(g, a.shape) if needs[0] else None,
                _sum_to_shape(-g, b.shape) if needs[1] else None)

    return _finish("subtract", (a, b), a.data - b.data, backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, needs):
        return (_sum_to_shape(g * b.data, a.shape) if needs[0] else None,
                _sum_to_shape(g * a.data, b.shape) if needs[1] else None)

    return _finish("multiply", (a, b), a.data * b.data, backward)


def divide(a: Tensor, b: Tensor) -> Tensor:
    def backward(g, needs):
        da = _sum_to_shape(g / b.data, a.shape) if needs[0] else None
        db = _sum_to_shape(-g * a.data / (b.data * b.data), b.shape) if needs[1] else None
        return da, db

    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _finish("divide", (a, b), out, backward)


# ---------------------------------------------------------------------------
# matrix multiply

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul: expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g, needs):
        da = g @ b.data.T if needs[0] else None
        db = a.data.T @ g if needs[1] else None
        return da, db

    return _finish("matmul", (a, b), a.data @ b.data, backward)


# ---------------------------------------------------------------------------
# activations

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g, needs):
        return (g * mask,)

    return _finish("relu", (x,), np.where(mask, x.data, 0), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    scale = np.where(mask, np.asarray(1, x.dtype), np.asarray(slope, x.dtype))

    def backward(g, needs):
        return (g * scale,)

    return _finish("leaky_relu", (x,), x.data * scale, backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 1 / (1 + np.exp(-x.data))

    def backward(g, needs):
        return (g * s * (1 - s),)

    return _finish("sigmoid", (x,), s, backward)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def backward(g, needs):
        return (g * (1 - t * t),)

    return _finish("tanh", (x,), t, backward)


def scaled_sigmoid(x: Tensor) -> Tensor:
    """2*sigmoid(x) - 1: sigmoid rescaled onto (-1, 1)."""
    s = 1 / (1 + np.exp(-x.data))

    def backward(g, needs):
        return (g * 2 * s * (1 - s),)

    return _finish("scaled_sigmoid", (x,), 2 * s - 1, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g, needs):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _finish("softmax", (x,), s, backward)


def log(x: Tensor) -> Tensor:
    def backward(g, needs):
        return (g / x.data,)

    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _finish("log", (x,), out, backward)


def square(x: Tensor) -> Tensor:
    def backward(g, needs):
        return (g * 2 * x.data,)

    return _finish("square", (x,), x.data * x.data, backward)


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor), composed for log safety: relu(x - floor) + floor."""
    shifted = relu(subtract(x, Tensor(np.asarray(floor, x.dtype))))
    return add(shifted, Tensor(np.asarray(floor, x.dtype)))


# ---------------------------------------------------------------------------
# reductions and shape ops

def _reduction_backward(g, x, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, x.shape).astype(x.dtype, copy=False)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g, needs):
        return (np.ascontiguousarray(_reduction_backward(g, x, axis, keepdims)),)

    return _finish("sum", (x,), x.data.sum(axis=axis, keepdims=keepdims), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]

    def backward(g, needs):
        scaled = g / np.asarray(count, x.dtype)
        return (np.ascontiguousarray(_reduction_backward(scaled, x, axis, keepdims)),)

    return _finish("mean", (x,), x.data.mean(axis=axis, keepdims=keepdims), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g, needs):
        return (g.reshape(x.shape),)

    return _finish("reshape", (x,), x.data.reshape(shape), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise UsageError("concat: needs at least one tensor")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g, needs):
        pieces = np.split(g, offsets, axis=axis)
        return tuple(p if need else None for p, need in zip(pieces, needs))

    return _finish("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), backward)


def narrow(x: Tensor, key) -> Tensor:
    """Basic slicing; the gradient scatters back into a zero tensor."""
    out_data = x.data[key]

    def backward(g, needs):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return (dx,)

    return _finish("slice", (x,), out_data, backward)


# ---------------------------------------------------------------------------
# 2-D convolution and its transpose (im2col / col2im)

def _pad2d(x: np.ndarray, padding: int) -> np.ndarray:
    if not padding:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding:padding + h, padding:padding + w] = x
    return out


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int):
    """(N, C, Hp, Wp) -> (N*Ho*Wo, C*kh*kw) patch matrix plus (Ho, Wo)."""
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = view.shape[:4]
    cols = view.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int):
    """Scatter-add patch-matrix gradients back to image layout."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    blocks = cols.reshape(n, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += blocks[:, :, i, j]
    if padding:
        out = out[:, :, padding:hp - padding, padding:wp - padding]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) with weights (F,C,kh,kw)."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expects 4-D input/weights, got {x.shape}, {w.shape}")
    n, c, h, wdt = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv2d: input has {c} channels, weights expect {cw}")
    xp = _pad2d(x.data, padding)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    wmat = w.data.reshape(f, c * kh * kw)
    out = cols @ wmat.T
    if b is not None:
        if b.shape != (f,):
            raise DimensionError(f"conv2d: bias shape {b.shape} does not match {f} filters")
        out += b.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def backward(g, needs):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, f)
        dx = dw = db = None
        if needs[0]:
            dx = _col2im(gmat @ wmat, x.shape, kh, kw, stride, padding)
        if needs[1]:
            dw = (gmat.T @ cols).reshape(w.shape)
        if len(needs) > 2 and needs[2]:
            db = gmat.sum(axis=0)
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w) if b is None else (x, w, b)
    return _finish("conv2d", inputs, np.ascontiguousarray(out), backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Fractionally-strided convolution; weights are (C_in, F, kh, kw).

    With kernel 3, stride 2, padding 1, output_padding 1 the spatial
    dimensions exactly double.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv_transpose2d: expects 4-D input/weights, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    cw, f, kh, kw = w.shape
    if c != cw:
        raise DimensionError(f"conv_transpose2d: input has {c} channels, weights expect {cw}")
    if not 0 <= output_padding < max(stride, 1):
        raise UsageError("conv_transpose2d: output_padding must satisfy 0 <= op < stride")
    full_h = (h - 1) * stride + kh
    full_w = (wd - 1) * stride + kw
    ho = full_h - 2 * padding + output_padding
    wo = full_w - 2 * padding + output_padding
    if ho <= 0 or wo <= 0:
        raise DimensionError("conv_transpose2d: output would be empty")

    wmat = w.data.reshape(c, f * kh * kw)
    xrows = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * wd, c)
    cols = xrows @ wmat
    blocks = cols.reshape(n, h, wd, f, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    full = np.zeros((n, f, full_h, full_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * h:stride, j:j + stride * wd:stride] += blocks[:, :, i, j]
    out = full[:, :, padding:padding + ho, padding:padding + wo]
    if b is not None:
        if b.shape != (f,):
            raise DimensionError(f"conv_transpose2d: bias shape {b.shape} does not match {f} filters")
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def backward(g, needs):
        # Mirror of the forward scatter: embed g in the full buffer, gather
        # strided windows back into column layout.
        dfull = np.zeros((n, f, full_h, full_w), dtype=g.dtype)
        dfull[:, :, padding:padding + ho, padding:padding + wo] = g
        gblocks = np.empty((n, f, kh, kw, h, wd), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gblocks[:, :, i, j] = dfull[:, :, i:i + stride * h:stride, j:j + stride * wd:stride]
        gcols = np.ascontiguousarray(gblocks.transpose(0, 4, 5, 1, 2, 3)).reshape(n * h * wd, f * kh * kw)
        dx = dw = db = None
        if needs[0]:
            dx = (gcols @ wmat.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
            dx = np.ascontiguousarray(dx)
        if needs[1]:
            dw = (xrows.T @ gcols).reshape(w.shape)
        if len(needs) > 2 and needs[2]:
            db = g.sum(axis=(0, 2, 3))
        return (dx, dw, db) if b is not None else (dx, dw)

    inputs = (x, w) if b is None else (x, w, b)
    return _finish("conv_transpose2d", inputs, out, backward)


# ---------------------------------------------------------------------------
# batch normalization and dropout

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean=None, running_var=None,
               training: bool = True, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Normalize per channel: axis 1 of (N,C,H,W), axis 1 of (N,F).

    In training mode batch statistics are used and, when running buffers
    are given, folded into them as ``r = momentum*r + (1-momentum)*batch``.
    Inference mode normalizes with the running buffers.
    """
    if x.ndim == 4:
        axes, bshape = (0, 2, 3), (1, -1, 1, 1)
    elif x.ndim == 2:
        axes, bshape = (0,), (1, -1)
    else:
        raise DimensionError(f"batch_norm: expects 2-D or 4-D input, got {x.shape}")
    m = x.size // x.shape[1]

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if running_mean is not None:
            running_mean *= momentum
            running_mean += (1 - momentum) * mu
        if running_var is not None:
            running_var *= momentum
            running_var += (1 - momentum) * var
    else:
        if running_mean is None or running_var is None:
            raise UsageError("batch_norm: inference mode needs running statistics")
        mu, var = running_mean, running_var

    ivar = 1 / np.sqrt(var + np.asarray(eps, x.dtype))
    xhat = (x.data - mu.reshape(bshape)) * ivar.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g, needs):
        dgamma = (g * xhat).sum(axis=axes) if needs[1] else None
        dbeta = g.sum(axis=axes) if needs[2] else None
        dx = None
        if needs[0]:
            gw = g * gamma.data.reshape(bshape)
            if training:
                s1 = gw.sum(axis=axes).reshape(bshape)
                s2 = (gw * xhat).sum(axis=axes).reshape(bshape)
                dx = ivar.reshape(bshape) * (gw - s1 / m - xhat * s2 / m)
            else:
                dx = gw * ivar.reshape(bshape)
        return dx, dgamma, dbeta

    return _finish("batch_norm", (x, gamma, beta), out.astype(x.dtype, copy=False), backward)


def dropout(x: Tensor, keep_prob: float, rng: np.random.Generator | None = None,
            mask: np.ndarray | None = None, training: bool = True) -> Tensor:
    """Inverted dropout: surviving units are scaled by 1/keep_prob."""
    if not 0 < keep_prob <= 1:
        raise UsageError(f"dropout: keep_prob must lie in (0, 1], got {keep_prob}")
    if not training or keep_prob == 1:
        return x
    if mask is None:
        if rng is None:
            raise UsageError("dropout: training mode needs an rng or an explicit mask")
        mask = (rng.random(x.shape) < keep_prob).astype(x.dtype)
    scaled = mask / np.asarray(keep_prob, x.dtype)

    def backward(g, needs):
        return (g * scaled,)

    return _finish("dropout", (x,), x.data * scaled, backward)


# ---------------------------------------------------------------------------
# gradient checking

def grad_check(f, x, eps: float = 1e-5, reference_scale: float = 1.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is a nullary callable evaluating a scalar Tensor from the tensors
    in ``x`` (a Tensor or a sequence).  Runs only in 64-bit mode.
    ``reference_scale`` multiplies the finite-difference estimate before
    comparison; layers that deliberately rescale their backward pass (the
    gradient reversal layer) are checked against the matching reference.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        if t.data.dtype != np.float64:
            raise PrecisionError("grad_check requires float64 tensors")
    if not 1e-7 <= eps <= 1e-3:
        raise UsageError(f"grad_check: eps must lie in [1e-7, 1e-3], got {eps}")

    for t in xs:
        t.zero_grad()
        t.requires_grad = True
    with Tape() as tape:
        out = f()
        if out.size != 1:
            raise UsageError("grad_check: f must evaluate to a scalar")
        if tape.records:                # constant graphs have nothing to walk
            tape.backward(out)

    worst = 0.0
    for t in xs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            fd = reference_scale * (hi - lo) / (2 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - fd) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst
