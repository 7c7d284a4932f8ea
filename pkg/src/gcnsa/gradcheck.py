"""Central finite-difference checks for every differentiable op and the full model."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import tensor as T
from .blocks import ModifiedBlockParams, OriginalBlockParams, mhsa, modified_block, original_block
from .config import TrainConfig
from .errors import ConfigError
from .fixtures import random_graph
from .model import (VARIANTS, GcnParams, GcnSaParams, MlpParams, PreparedGraph, forward,
                    gcn_baseline_forward, mlp_baseline_forward)
from .structure import SparsifierConfig, StructureHeads, build_reconnected, head_units, select_pairs
from .tensor import Rng

STEP = 1e-5
OP_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_err < self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<22s} rel_err={self.rel_err:.3e}  tol={self.tol:.0e}"


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def numeric_grad(f, leaves, step=STEP):
    """Central differences of the scalar ``f()`` with respect to each leaf's data."""
    out = []
    for leaf in leaves:
        g = np.zeros_like(leaf.data)
        flat, gflat = leaf.data.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + step
            hi = float(f().data)
            flat[k] = old - step
            lo = float(f().data)
            flat[k] = old
            gflat[k] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def compare(f, leaves, step=STEP) -> float:
    for leaf in leaves:
        leaf.grad = None
    f().backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad for l in leaves]
    numeric = numeric_grad(f, leaves, step)
    return relative_error(np.concatenate([a.ravel() for a in analytic]),
                          np.concatenate([n.ravel() for n in numeric]))


def _projector(shape, rng):
    r = rng.uniform(shape, -1.0, 1.0)
    return lambda out: T.sum_all(T.mul(out, r))


def _p(rng, *shape, low=-1.0, high=1.0):
    return T.parameter(rng.uniform(shape, low, high))


# Each builder returns (objective, leaves).

def _elementwise(opname):
    def build(rng):
        a, b = _p(rng, 4, 3), _p(rng, 4, 3)
        proj = _projector((4, 3), rng)
        return (lambda: proj(getattr(T, opname)(a, b))), [a, b]
    return build


def _unary(fn, shape=(4, 5), low=-1.0, high=1.0):
    def build(rng):
        a = _p(rng, *shape, low=low, high=high)
        out_shape = fn(a).shape
        proj = _projector(out_shape, rng)
        return (lambda: proj(fn(a))), [a]
    return build


def _matmul(rng):
    a, b = _p(rng, 4, 3), _p(rng, 3, 5)
    proj = _projector((4, 5), rng)
    return (lambda: proj(T.matmul(a, b))), [a, b]


def _broadcast_add(rng):
    a, b = _p(rng, 4, 3), _p(rng, 3)
    proj = _projector((4, 3), rng)
    return (lambda: proj(T.add(a, b))), [a, b]


def _dropout(rng):
    a = _p(rng, 5, 4)
    proj = _projector((5, 4), rng)
    return (lambda: proj(T.dropout(a, 0.4, Rng(7), True))), [a]


def _concat(rng):
    a, b = _p(rng, 4, 2), _p(rng, 4, 3)
    proj = _projector((4, 5), rng)
    return (lambda: proj(T.concat_cols([a, b]))), [a, b]


def _mean_over(rng):
    a, b, c = _p(rng, 3, 3), _p(rng, 3, 3), _p(rng, 3, 3)
    proj = _projector((3, 3), rng)
    return (lambda: proj(T.mean_over([a, b, c]))), [a, b, c]


def _layer_norm(rng):
    x, gamma, beta = _p(rng, 4, 6), _p(rng, 6), _p(rng, 6)
    proj = _projector((4, 6), rng)
    return (lambda: proj(T.layer_norm(x, gamma, beta))), [x, gamma, beta]


def _take_rows(rng):
    a = _p(rng, 4, 3)
    idx = np.array([0, 2, 2, 3, 1])
    proj = _projector((5, 3), rng)
    return (lambda: proj(T.take_rows(a, idx))), [a]


def _rowdot(rng):
    a, b = _p(rng, 5, 3), _p(rng, 5, 3)
    proj = _projector((5,), rng)
    return (lambda: proj(T.rowdot(a, b))), [a, b]


def _gather(rng):
    v = _p(rng, 4)
    idx = np.array([3, 0, 0, 2])
    proj = _projector((4,), rng)
    return (lambda: proj(T.gather(v, idx))), [v]


def _segment_sum(rng):
    v = _p(rng, 6)
    seg = np.array([0, 0, 1, 3, 3, 3])
    proj = _projector((4,), rng)
    return (lambda: proj(T.segment_sum(v, seg, 4))), [v]


def _spmm(rng):
    rows, cols = np.array([0, 0, 1, 2, 3, 3]), np.array([1, 3, 0, 2, 0, 1])
    vals, h = _p(rng, 6), _p(rng, 4, 3)
    proj = _projector((4, 3), rng)
    return (lambda: proj(T.spmm(vals, rows, cols, 4, h))), [vals, h]


def _sparse_const(rng):
    m = sp.random(5, 5, density=0.4, random_state=3, format="csr")
    h = _p(rng, 5, 2)
    proj = _projector((5, 2), rng)
    return (lambda: proj(T.sparse_const_matmul(m, h))), [h]


def _nll(rng):
    z = _p(rng, 5, 3, low=0.1, high=1.0)
    labels = np.array([0, 2, 1, 1, 0])
    return (lambda: T.nll(z, labels, np.array([0, 1, 3, 4]))), [z]


def _mhsa(rng):
    p = ModifiedBlockParams.init(6, 2, rng, 0.0)
    h = _p(rng, 5, 6)
    proj = _projector((5, 6), rng)
    return (lambda: proj(mhsa(h, p))), [h, *p.parameters()]


def _modified_block(rng):
    p = ModifiedBlockParams.init(4, 1, rng, 0.3)
    h = _p(rng, 5, 4)
    proj = _projector((5, 4), rng)
    return (lambda: proj(modified_block(h, p, Rng(11), True))), [h, *p.parameters()]


def _original_block(rng):
    p = OriginalBlockParams.init(4, 2, rng)
    x = _p(rng, 5, 4)
    proj = _projector((5, 4), rng)
    return (lambda: proj(original_block(x, p))), [x, *p.parameters()]


def _structure(rng):
    x = _p(rng, 8, 4)
    heads = StructureHeads.init(4, 3, 2, rng)
    cfg = SparsifierConfig(2, 0.5)
    pairs = select_pairs([u.data for u in head_units(x, heads)], cfg)
    proj = _projector((8, 2), rng)
    h = T.as_tensor(rng.uniform((8, 2), -1, 1))
    return (lambda: proj(build_reconnected(x, heads, cfg, pairs=pairs).aggregate(h))), [x, *heads.parameters()]


def _toy_prep():
    g = random_graph(n=10, d=6, c=3, p_edge=0.3, seed=5)
    return g, PreparedGraph.from_graph(g, "float64")


def _gcnsa(rng, variant="full"):
    g, prep = _toy_prep()
    cfg = TrainConfig(q=4, p=4, r=2, epsilon=0.6, K=2, dropout=0.3, dtype="float64")
    var = VARIANTS[variant]
    params = GcnSaParams.init(g.d, g.c, cfg, var, rng)
    pairs = None
    if var.use_a_star:
        pairs = forward(prep, params, cfg, var).reconnected.pairs
    idx = np.arange(g.n)

    def f():
        z = forward(prep, params, cfg, var, Rng(3), True, pairs=pairs).z
        return T.nll(z, g.labels, idx)

    return f, params.parameters()


def _baseline(kind):
    def build(rng):
        g, prep = _toy_prep()
        cls, fn = (GcnParams, gcn_baseline_forward) if kind == "gcn" else (MlpParams, mlp_baseline_forward)
        params = cls.init(g.d, 5, g.c, rng)
        idx = np.arange(g.n)
        return (lambda: T.nll(fn(prep, params, Rng(3), True, 0.3), g.labels, idx)), params.parameters()
    return build


CHECKS = {
    "matmul": (_matmul, OP_TOL),
    "add": (_broadcast_add, OP_TOL),
    "sub": (_elementwise("sub"), OP_TOL),
    "mul": (_elementwise("mul"), OP_TOL),
    "scale": (_unary(lambda a: T.scale(a, -2.5)), OP_TOL),
    "transpose": (_unary(T.transpose), OP_TOL),
    "relu": (_unary(T.relu), OP_TOL),
    "softmax": (_unary(T.rowwise_softmax), OP_TOL),
    "dropout": (_dropout, OP_TOL),
    "row_normalize": (_unary(T.row_normalize), OP_TOL),
    "rowwise_cosine": (_unary(T.rowwise_cosine), OP_TOL),
    "concat": (_concat, OP_TOL),
    "mean": (_mean_over, OP_TOL),
    "layer_norm": (_layer_norm, OP_TOL),
    "sum": (_unary(T.sum_all), OP_TOL),
    "sum_squares": (_unary(T.sum_squares), OP_TOL),
    "take_rows": (_take_rows, OP_TOL),
    "rowdot": (_rowdot, OP_TOL),
    "gather": (_gather, OP_TOL),
    "segment_sum": (_segment_sum, OP_TOL),
    "inv_sqrt": (_unary(T.inv_sqrt_safe, shape=(6,), low=0.5, high=2.0), OP_TOL),
    "spmm": (_spmm, OP_TOL),
    "spmm_const": (_sparse_const, OP_TOL),
    "nll": (_nll, OP_TOL),
    "mhsa": (_mhsa, OP_TOL),
    "modified_block": (_modified_block, OP_TOL),
    "original_block": (_original_block, OP_TOL),
    "reconnected": (_structure, OP_TOL),
    "model_full": (_gcnsa, MODEL_TOL),
    "model_tf_original": (lambda rng: _gcnsa(rng, "tf-original"), MODEL_TOL),
    "model_no_fusion": (lambda rng: _gcnsa(rng, "no-fusion"), MODEL_TOL),
    "gcn": (_baseline("gcn"), MODEL_TOL),
    "mlp": (_baseline("mlp"), MODEL_TOL),
}


def run_checks(names=None, seed=0):
    names = list(CHECKS) if not names else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown gradient check(s) {unknown}; available: {', '.join(CHECKS)}")
    results = []
    for name in names:
        build, tol = CHECKS[name]
        f, leaves = build(Rng(seed, len(results)))
        results.append(CheckResult(name, compare(f, leaves), tol))
    return results


@contextlib.contextmanager
def broken_backward(op: str, factor: float = 1.5):
    """Temporarily scale the backward rule of ``tensor.<op>`` (negative control)."""
    original = getattr(T, op, None)
    if not callable(original):
        raise ConfigError(f"tensor has no op named {op!r}")

    def wrapped(*args, **kwargs):
        out = original(*args, **kwargs)
        if not out.parents:
            return out
        links = [(p, (lambda r: lambda g: factor * r(g))(rule)) for p, rule in out.parents]
        return T.Tensor(out.data, True, links, out.op)

    setattr(T, op, wrapped)
    try:
        yield
    finally:
        setattr(T, op, original)
