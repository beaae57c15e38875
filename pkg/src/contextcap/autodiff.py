"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a contiguous numpy array plus an optional gradient
buffer and a backward-graph record (parents + local gradient rule).  Calling
:func:`backward` on a scalar loss topologically sorts the recorded graph and
accumulates gradients into every tensor on the path, so trainable leaves end
up with populated ``grad`` buffers.

Design constraints:
  - 64-bit floats by default (finite-difference checks are unreliable in
    32-bit); switch with :func:`set_default_dtype` for faster training.
  - No broadcasting beyond scalar-tensor and trailing-axis ("row") vectors.
    Everything else must match shapes exactly, which turns silent shape bugs
    into immediate DimensionError.
  - CPU only, first-order derivatives only.
"""

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DataError, DimensionError

_DEFAULT_DTYPE = np.float64

# Gradient-check tolerances per precision (central differences, h=1e-5).
GRAD_RTOL = {np.dtype(np.float64): 1e-4, np.dtype(np.float32): 1e-1}

_GRAD_ENABLED = True


def set_default_dtype(dtype):
    """Set the dtype used for newly created tensors ('test' mode: float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ContractError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense array with an optional backward-graph record.

    Immutable after forward creation except for gradient accumulation;
    optimizers update leaf ``data`` in place between forward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def backward(self):
        backward(self)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A view of the same data with no backward record."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; scalars are promoted to constant tensors.
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad=False, dtype=None):
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad)


def randn(rng, shape, scale=1.0, requires_grad=False, dtype=None):
    """Gaussian init drawn from ``rng`` (np.random.Generator) for determinism."""
    data = rng.standard_normal(shape) * scale
    return Tensor(data.astype(dtype or _DEFAULT_DTYPE), requires_grad)


def _make_op(out_data, parents, backward_fn):
    """Wrap a forward result, recording the tape node when grads are live."""
    requires = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(out_data, requires_grad=requires, dtype=out_data.dtype)
    if requires:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _accumulate(t, contribution):
    if t.grad is None:
        # Copy: rules may hand back views of the upstream gradient.
        t.grad = np.array(contribution, dtype=t.data.dtype)
    else:
        t.grad += contribution


def backward(loss):
    """Populate gradients of everything reachable from a scalar loss.

    Visits each recorded node exactly once in reverse topological order.
    Leaves without ``requires_grad`` are untouched.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited and (parent.requires_grad or parent._parents):
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad)


def check_finite(t, what="tensor"):
    """NaN/Inf is an error state; raise DataError naming the offender."""
    if not np.all(np.isfinite(t.data)):
        raise DataError(f"non-finite values in {what}")
    return t


# ---------------------------------------------------------------------------
# Elementwise arithmetic (same-shape, scalar, or trailing-axis vector)
# ---------------------------------------------------------------------------

def _binary_mode(a, b):
    """Classify the allowed shape pairing: 'same', 'scalar_a/b', 'row_b'."""
    if a.data.shape == b.data.shape:
        return "same"
    if b.data.size == 1:
        return "scalar_b"
    if a.data.size == 1:
        return "scalar_a"
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        return "row_b"
    raise DimensionError(f"incompatible shapes {a.data.shape} and {b.data.shape}")


def _reduce_to(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of scalar/row broadcasting)."""
    if g.shape == shape:
        return g
    if len(shape) == 0 or np.prod(shape, dtype=int) == 1:
        return g.sum().reshape(shape)
    # row vector case: sum over all leading axes
    axes = tuple(range(g.ndim - 1))
    return g.sum(axis=axes).reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_mode(a, b)
    out = a.data + b.data

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _reduce_to(g, a.data.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _reduce_to(g, b.data.shape))

    return _make_op(out, (a, b), grad_fn)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_mode(a, b)
    out = a.data - b.data

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _reduce_to(g, a.data.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, -_reduce_to(g, b.data.shape))

    return _make_op(out, (a, b), grad_fn)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_mode(a, b)
    out = a.data * b.data

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return _make_op(out, (a, b), grad_fn)


def neg(a):
    def grad_fn(g):
        _accumulate(a, -g)

    return _make_op(-a.data, (a,), grad_fn)


# ---------------------------------------------------------------------------
# Matrix product
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product, two sanctioned layouts.

    (..., m, k) @ (k, n)        -- shared weight applied to stacked rows
    (..., m, k) @ (..., k, n)   -- per-batch product, identical leading dims
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul operands need at least 2 dims")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"inner dimensions disagree: {ad.shape} @ {bd.shape}")
    weight_mode = bd.ndim == 2
    if not weight_mode and ad.shape[:-2] != bd.shape[:-2]:
        raise DimensionError(f"leading dimensions disagree: {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def grad_fn(g):
        if a.requires_grad or a._parents:
            _accumulate(a, g @ np.swapaxes(bd, -1, -2))
        if b.requires_grad or b._parents:
            if weight_mode:
                k, n = bd.shape
                _accumulate(b, ad.reshape(-1, k).T @ g.reshape(-1, n))
            else:
                _accumulate(b, np.swapaxes(ad, -1, -2) @ g)

    return _make_op(out, (a, b), grad_fn)


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    old = a.data.shape
    out = a.data.reshape(shape)

    def grad_fn(g):
        _accumulate(a, g.reshape(old))

    return _make_op(out, (a,), grad_fn)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def grad_fn(g):
        _accumulate(a, g.transpose(inverse))

    return _make_op(out, (a,), grad_fn)


def concat(tensors, axis=0):
    """Concatenate along ``axis``; backward splits the gradient back."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of zero tensors")
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        if len(other) != len(base):
            raise DimensionError("concat rank mismatch")
        for ax, (i, j) in enumerate(zip(base, other)):
            if ax != (axis % len(base)) and i != j:
                raise DimensionError(
                    f"concat shapes {tuple(base)} vs {tuple(other)} differ off-axis")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        slicer = [slice(None)] * g.ndim
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                slicer[axis] = slice(start, stop)
                _accumulate(t, g[tuple(slicer)])

    return _make_op(out, tuple(tensors), grad_fn)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis; backward zero-pads."""
    n = a.data.shape[axis]
    if start < 0 or start + length > n:
        raise DimensionError(f"narrow [{start}:{start + length}] outside axis of size {n}")
    slicer = [slice(None)] * a.data.ndim
    slicer[axis] = slice(start, start + length)
    out = a.data[tuple(slicer)]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[tuple(slicer)] = g
        _accumulate(a, full)

    return _make_op(out, (a,), grad_fn)


def stack(tensors, axis=0):
    """Stack equal-shape tensors along a new axis (composed from concat)."""
    expanded = []
    for t in tensors:
        shape = list(t.data.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# Nonlinearities and normalization
# ---------------------------------------------------------------------------

def relu(a):
    mask = a.data > 0
    out = a.data * mask

    def grad_fn(g):
        _accumulate(a, g * mask)

    return _make_op(out, (a,), grad_fn)


def tanh(a):
    out = np.tanh(a.data)

    def grad_fn(g):
        _accumulate(a, g * (1.0 - out * out))

    return _make_op(out, (a,), grad_fn)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a):
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def grad_fn(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        _accumulate(a, g * local)

    return _make_op(out, (a,), grad_fn)


def exp(a):
    out = np.exp(a.data)

    def grad_fn(g):
        _accumulate(a, g * out)

    return _make_op(out, (a,), grad_fn)


def log(a):
    out = np.log(a.data)

    def grad_fn(g):
        _accumulate(a, g / a.data)

    return _make_op(out, (a,), grad_fn)


def pow_const(a, exponent):
    """Raise to a constant real power. exponent 0 is exactly ones, zero grad."""
    if exponent == 0:
        out = np.ones_like(a.data)

        def grad_fn(g):
            _accumulate(a, np.zeros_like(a.data))

        return _make_op(out, (a,), grad_fn)

    out = a.data ** exponent

    def grad_fn(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return _make_op(out, (a,), grad_fn)


def softmax(a, axis=-1):
    """Stable softmax: max is subtracted before exponentiation."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        _accumulate(a, out * (g - inner))

    return _make_op(out, (a,), grad_fn)


def log_softmax(a, axis=-1):
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - log_z
    sm = np.exp(out)

    def grad_fn(g):
        _accumulate(a, g - sm * g.sum(axis=axis, keepdims=True))

    return _make_op(out, (a,), grad_fn)


def layer_norm(a, eps=1e-8):
    """Normalize the last axis to zero mean, unit variance (no affine part).

    eps must stay small enough that output variance is within 1e-6 of 1 for
    unit-scale inputs; 1e-8 keeps the bias at var/(var+eps) ~ 1e-8.
    """
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = centered * inv

    def grad_fn(g):
        n = x.shape[-1]
        g_mean = g.mean(axis=-1, keepdims=True)
        gy_mean = (g * out).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (g - g_mean - out * gy_mean))
        del n

    return _make_op(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.data.shape))

    return _make_op(np.asarray(out), (a,), grad_fn)


def mean(a, axis=None, keepdims=False):
    if axis is None:
        scale = 1.0 / a.data.size
    else:
        scale = 1.0 / a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), scale)


# ---------------------------------------------------------------------------
# Indexing: gather / scatter-add (embedding lookups, graph routing)
# ---------------------------------------------------------------------------

def _check_indices(idx, n):
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError("indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ContractError(f"index out of range for {n} rows")
    return idx


def index_rows(a, idx):
    """Gather rows along axis 0; backward scatter-adds into the source.

    ``idx`` may be any integer array; output shape is idx.shape + a.shape[1:].
    """
    idx = _check_indices(idx, a.data.shape[0])
    out = a.data[idx]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _make_op(out, (a,), grad_fn)


def scatter_add_rows(a, idx, n_rows):
    """out[j] = sum of rows i of ``a`` with idx[i] == j (dual of index_rows)."""
    idx = _check_indices(idx, n_rows)
    if idx.ndim != 1 or idx.shape[0] != a.data.shape[0]:
        raise DimensionError("scatter_add_rows needs one index per input row")
    out = np.zeros((n_rows,) + a.data.shape[1:], dtype=a.data.dtype)
    np.add.at(out, idx, a.data)

    def grad_fn(g):
        _accumulate(a, g[idx])

    return _make_op(out, (a,), grad_fn)


def gather_last(a, idx):
    """Pick one entry along the last axis per leading position.

    idx shape must equal a.shape[:-1]; used to select target-token log-probs.
    """
    idx = _check_indices(idx, a.data.shape[-1])
    if idx.shape != a.data.shape[:-1]:
        raise DimensionError(f"gather_last index shape {idx.shape} != {a.data.shape[:-1]}")
    out = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (*np.indices(idx.shape), idx), g)
        _accumulate(a, full)

    return _make_op(out, (a,), grad_fn)


# ---------------------------------------------------------------------------
# Masking and regularization
# ---------------------------------------------------------------------------

def masked_fill(a, mask, value):
    """Replace entries where ``mask`` is true with a constant; grad is zeroed there.

    ``mask`` is a plain boolean array broadcastable against ``a`` (constant,
    never differentiated through).
    """
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.data.shape)
    out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)

    def grad_fn(g):
        _accumulate(a, np.where(mask, 0.0, g))

    return _make_op(out, (a,), grad_fn)


def dropout(a, rate, rng):
    """Inverted dropout with mask drawn from ``rng``; identity at rate 0."""
    if rate < 0 or rate >= 1:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0:
        return a
    keep = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def grad_fn(g):
        _accumulate(a, g * keep)

    return _make_op(a.data * keep, (a,), grad_fn)
