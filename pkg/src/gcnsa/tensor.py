"""Dense tensors with a define-by-run reverse-mode tape.

Every op returns a new :class:`Tensor` whose ``parents`` hold the inputs
together with a closure mapping the output gradient to that input's
gradient contribution. The tape is rebuilt on every forward pass.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError

# Finite-value guard after every op; disable only for profiling.
CHECK_FINITE = True
_RECORDING = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording parent links."""
    _RECORDING.append(False)
    try:
        yield
    finally:
        _RECORDING.pop()


class Tensor:
    """A differentiation-tape node: value, gradient and parent links."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "op")

    def __init__(self, data, requires_grad=False, parents=(), op=""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self, grad=None, retain_all=False):
        """Accumulate d(self)/d(node) into ``node.grad``.

        Only leaves keep their gradient unless ``retain_all`` is set; the
        n x n intermediates of attention would otherwise stay alive.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        pending = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if retain_all or not node.parents:
                node.grad = g if node.grad is None else node.grad + g
            for parent, rule in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = rule(g)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + contrib
                else:
                    pending[key] = contrib

    # Operator sugar; the functional forms below are canonical.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _topological_order(root):
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
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def parameter(data):
    return Tensor(np.array(data, copy=True), requires_grad=True, op="param")


def _all_finite(data):
    # A finite sum proves finiteness; otherwise check elementwise (the sum may overflow).
    with np.errstate(over="ignore", invalid="ignore"):
        if np.isfinite(data.sum()):
            return True
    return bool(np.all(np.isfinite(data)))


def _result(data, op, links):
    if CHECK_FINITE and not _all_finite(data):
        raise NumericalError(f"non-finite value produced by {op}")
    links = [(t, rule) for t, rule in links if t.requires_grad] if _RECORDING[-1] else []
    return Tensor(data, requires_grad=bool(links), parents=links, op=op)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# Rng


class Rng:
    """Seeded stream built on the PCG64 bit generator.

    Only raw 64-bit outputs are consumed; uniforms are formed as
    ``(raw >> 11) * 2**-53``, so the stream is fixed by the PCG64 definition
    and does not depend on numpy's distribution code.
    """

    def __init__(self, seed: int, *stream: int):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        if self.stream:
            self._bits = np.random.PCG64(np.random.SeedSequence(self.seed, spawn_key=self.stream))
        else:
            self._bits = np.random.PCG64(self.seed)

    def uniform(self, shape, low=0.0, high=1.0):
        size = int(np.prod(shape, dtype=np.int64))
        raw = self._bits.random_raw(size)
        u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return (low + (high - low) * u).reshape(shape)

    def permutation(self, n: int):
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable")

    def child(self, *stream: int) -> "Rng":
        """Independent stream keyed by this seed and ``stream``."""
        return Rng(self.seed, *self.stream, *stream)


# ---------------------------------------------------------------------------
# Core ops


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data
    return _result(A @ B, "matmul", [(a, lambda g: g @ B.T), (b, lambda g: A.T @ g)])


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, "add",
                   [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, "sub",
                   [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))])


def mul(a, b):
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, "mul",
                   [(a, lambda g: _unbroadcast(g * B, A.shape)),
                    (b, lambda g: _unbroadcast(g * A, B.shape))])


hadamard = mul


def scale(a, s: float):
    a = as_tensor(a)
    s = a.data.dtype.type(s)
    return _result(a.data * s, "scale", [(a, lambda g: g * s)])


def transpose(a):
    a = as_tensor(a)
    return _result(a.data.T, "transpose", [(a, lambda g: g.T)])


def relu(x, floor=0.0):
    """max(x, 0); entries at or below ``floor`` (>= 0) map to 0 as well."""
    x = as_tensor(x)
    mask = x.data > floor
    return _result(np.where(mask, x.data, 0).astype(x.dtype), "relu", [(x, lambda g: g * mask)])


def rowwise_softmax(x):
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError(f"rowwise_softmax expects a matrix, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    # Shifted logits are floored so that no weight falls into the subnormal
    # range (BLAS slows down badly on subnormals). The floor moves weights
    # of order tiny * n only.
    k = max(z.shape[1], 1)
    floor = z.dtype.type(np.log(np.finfo(z.dtype).tiny) + np.log(k) + 1.0)
    np.maximum(z, floor, out=z)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    y = z

    def rule(g):
        return y * (g - (g * y).sum(axis=1, keepdims=True))

    return _result(y, "softmax", [(x, rule)])


def dropout(x, rate: float, rng: Rng | None, training: bool):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = rng.uniform(x.shape) >= rate
    factor = (keep / (1.0 - rate)).astype(x.dtype)
    return _result(x.data * factor, "dropout", [(x, lambda g: g * factor)])


def row_normalize(q):
    """Scale every row to unit length; all-zero rows stay zero."""
    q = as_tensor(q)
    Q = q.data
    norms = np.sqrt((Q * Q).sum(axis=1, keepdims=True))
    nz = norms > 0
    inv = np.where(nz, 1.0 / np.where(nz, norms, 1), 0).astype(Q.dtype)
    U = Q * inv

    def rule(g):
        return inv * (g - U * (g * U).sum(axis=1, keepdims=True))

    return _result(U, "row_normalize", [(q, rule)])


def _clip_unit(x):
    x = as_tensor(x)
    inside = np.abs(x.data) <= 1
    return _result(np.clip(x.data, -1, 1), "clip_unit", [(x, lambda g: g * inside)])


def rowwise_cosine(q):
    """All-pairs cosine similarity between the rows of ``q``.

    Returns an exactly symmetric n x n matrix with entries in [-1, 1].
    Rows with zero norm score 0 against everything, themselves included.
    """
    q = as_tensor(q)
    if q.data.ndim != 2 or q.shape[1] < 1:
        raise ShapeError(f"rowwise_cosine needs an n x p matrix with p >= 1, got {q.shape}")
    u = row_normalize(q)
    gram = matmul(u, transpose(u))
    sym = scale(add(gram, transpose(gram)), 0.5)
    return _clip_unit(sym)


def concat_cols(blocks):
    blocks = [as_tensor(b) for b in blocks]
    rows = {b.shape[0] for b in blocks}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[b.shape for b in blocks]}")
    edges = np.cumsum([0] + [b.shape[1] for b in blocks])
    data = np.concatenate([b.data for b in blocks], axis=1)
    links = [(b, (lambda s, e: lambda g: g[:, s:e])(edges[i], edges[i + 1]))
             for i, b in enumerate(blocks)]
    return _result(data, "concat", links)


def mean_over(tensors):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"mean_over: shapes differ {sorted(shapes)}")
    k = len(tensors)
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out = out + t.data
    out = out / out.dtype.type(k)
    inv = out.dtype.type(1.0 / k)
    return _result(out, "mean", [(t, lambda g: g * inv) for t in tensors])


LAYER_NORM_FLOOR = 1e-5


def layer_norm(x, gamma, beta):
    """Per-row normalization to zero mean and unit population variance.

    The variance under the square root is floored at ``LAYER_NORM_FLOOR``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    X = x.data
    mu = X.mean(axis=1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    floored = var < LAYER_NORM_FLOOR
    std = np.sqrt(np.maximum(var, LAYER_NORM_FLOOR)).astype(X.dtype)
    xhat = xc / std
    G = gamma.data
    out = xhat * G + beta.data

    def rule_x(g):
        dxhat = g * G
        mean_d = dxhat.mean(axis=1, keepdims=True)
        proj = np.where(floored, 0, (dxhat * xhat).mean(axis=1, keepdims=True))
        return (dxhat - mean_d - xhat * proj) / std

    return _result(out, "layer_norm",
                   [(x, rule_x),
                    (gamma, lambda g: _unbroadcast(g * xhat, G.shape)),
                    (beta, lambda g: _unbroadcast(g, beta.shape))])


def sum_all(x):
    x = as_tensor(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), "sum", [(x, lambda g: np.broadcast_to(g, shape).copy())])


def sum_squares(x):
    x = as_tensor(x)
    X = x.data
    two = X.dtype.type(2)
    return _result(np.asarray((X * X).sum()), "sum_squares", [(x, lambda g: two * g * X)])


# ---------------------------------------------------------------------------
# Indexing and sparse helpers used by structure learning and aggregation


def take_rows(x, idx):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def rule(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out

    return _result(x.data[idx], "take_rows", [(x, rule)])


def rowdot(a, b):
    """Row-wise inner products of two equally shaped matrices."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"rowdot: shapes differ {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _result((A * B).sum(axis=1), "rowdot",
                   [(a, lambda g: g[:, None] * B), (b, lambda g: g[:, None] * A)])


def gather(v, idx):
    """Index a vector; the backward pass scatter-adds."""
    v = as_tensor(v)
    idx = np.asarray(idx, dtype=np.int64)
    n = v.shape[0]
    return _result(v.data[idx], "gather",
                   [(v, lambda g: np.bincount(idx, weights=g, minlength=n).astype(g.dtype))])


def segment_sum(v, seg, n: int):
    v = as_tensor(v)
    seg = np.asarray(seg, dtype=np.int64)
    out = np.bincount(seg, weights=v.data, minlength=n).astype(v.dtype)
    return _result(out, "segment_sum", [(v, lambda g: g[seg])])


def inv_sqrt_safe(v):
    """Elementwise 1/sqrt(v) with zero (and zero gradient) where v <= 0."""
    v = as_tensor(v)
    pos = v.data > 0
    r = np.where(pos, 1.0 / np.sqrt(np.where(pos, v.data, 1)), 0).astype(v.dtype)
    half = v.dtype.type(0.5)
    return _result(r, "inv_sqrt", [(v, lambda g: -half * g * r * r * r)])


def spmm(values, rows, cols, n: int, h):
    """Multiply the sparse matrix given by (rows, cols, values) with dense ``h``.

    The sparsity pattern is a constant of the tape; gradients flow into the
    stored values and into ``h``.
    """
    import scipy.sparse as sp

    values, h = as_tensor(values), as_tensor(h)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if h.data.ndim != 2 or h.shape[0] != n:
        raise ShapeError(f"spmm: dense operand has shape {h.shape}, expected ({n}, k)")
    m = sp.csr_matrix((values.data, (rows, cols)), shape=(n, n))
    H = h.data
    out = np.asarray(m @ H)

    def rule_h(g):
        return np.asarray(m.T @ g)

    def rule_v(g):
        return (g[rows] * H[cols]).sum(axis=1)

    return _result(out, "spmm", [(values, rule_v), (h, rule_h)])


def sparse_const_matmul(m, h):
    """Constant scipy sparse matrix times dense ``h``."""
    h = as_tensor(h)
    if h.data.ndim != 2 or h.shape[0] != m.shape[1]:
        raise ShapeError(f"sparse matmul: {m.shape} by {h.shape}")
    mt = m.T.tocsr()
    return _result(np.asarray(m @ h.data), "spmm_const", [(h, lambda g: np.asarray(mt @ g))])


def nll(z, labels, idx):
    """Summed negative log-likelihood of ``labels[idx]`` under probabilities ``z``."""
    z = as_tensor(z)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size == 0:
        raise ConfigError("loss over an empty node set is undefined")
    y = np.asarray(labels)[idx]
    tiny = np.finfo(z.dtype).tiny
    picked = np.maximum(z.data[idx, y], tiny)
    val = np.asarray(-np.log(picked).sum(), dtype=z.dtype)
    shape = z.shape

    def rule(g):
        out = np.zeros(shape, dtype=z.dtype)
        np.add.at(out, (idx, y), -g / picked)
        return out

    return _result(val, "nll", [(z, rule)])
