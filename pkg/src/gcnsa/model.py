"""End-to-end GCN-SA forward pass, ablation variants and the GCN / MLP baselines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .blocks import (InputProjection, ModifiedBlockParams, OriginalBlockParams, init_params,
                     modified_block, original_block)
from .config import TrainConfig
from .errors import ConfigError, ShapeError
from .graph import Graph, normalize_with_self_loops
from .structure import Reconnected, SparsifierConfig, StructureHeads, build_reconnected
from .tensor import Rng, Tensor

BLOCK_KINDS = ("modified", "original", "none")


@dataclass(frozen=True)
class VariantConfig:
    name: str = "full"
    use_a: bool = True
    use_a_star: bool = True
    use_fusion1: bool = True
    use_fusion2: bool = True
    block_kind: str = "modified"

    def __post_init__(self):
        if self.block_kind not in BLOCK_KINDS:
            raise ConfigError(f"block_kind must be one of {BLOCK_KINDS}, got {self.block_kind!r}")
        if self.block_kind == "none" and (self.use_fusion1 or self.use_fusion2):
            raise ConfigError("block_kind 'none' requires both fusion blocks to be off")

    @property
    def fusion1(self) -> bool:
        return self.use_fusion1 and self.block_kind != "none"

    @property
    def fusion2(self) -> bool:
        return self.use_fusion2 and self.block_kind != "none"

    def n_blocks(self) -> int:
        """Number of embedding blocks concatenated into H^cb (ego block always present)."""
        return 1 + 2 * self.use_a + self.use_a_star


VARIANTS = {
    "full": VariantConfig("full"),
    "no-a": VariantConfig("no-a", use_a=False),
    "no-astar": VariantConfig("no-astar", use_a_star=False),
    "features-only": VariantConfig("features-only", use_a=False, use_a_star=False),
    "no-fusion1": VariantConfig("no-fusion1", use_fusion1=False),
    "no-fusion2": VariantConfig("no-fusion2", use_fusion2=False),
    "no-fusion": VariantConfig("no-fusion", use_fusion1=False, use_fusion2=False, block_kind="none"),
    "tf-original": VariantConfig("tf-original", block_kind="original"),
}


def get_variant(name: str) -> VariantConfig:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(VARIANTS)}") from None


@dataclass
class PreparedGraph:
    """Graph tensors cast to the training dtype plus the normalised adjacency."""

    graph: Graph
    x: Tensor
    a_hat: object  # scipy CSR, D^-1/2 (A + I) D^-1/2
    labels: np.ndarray

    @classmethod
    def from_graph(cls, g: Graph, dtype="float64") -> "PreparedGraph":
        dt = np.dtype(dtype)
        a_hat = normalize_with_self_loops(g.adjacency()).to_scipy().astype(dt)
        return cls(g, T.as_tensor(np.asarray(g.x, dtype=dt)), a_hat, np.asarray(g.labels))

    @property
    def n(self):
        return self.graph.n

    @property
    def dtype(self):
        return self.x.dtype


def _fusion_params(kind, width, m, rng, dropout, dtype, residual):
    if kind == "original":
        return OriginalBlockParams.init(width, m, rng, dtype)
    return ModifiedBlockParams.init(width, m, rng, dropout, dtype, residual)


def _block_parameters(p):
    return [] if p is None else p.parameters()


@dataclass
class GcnSaParams:
    structure: StructureHeads | None
    projection: InputProjection
    fusion1: ModifiedBlockParams | OriginalBlockParams | None
    gate: Tensor
    w1: Tensor
    fusion2: ModifiedBlockParams | OriginalBlockParams | None

    @classmethod
    def init(cls, d, c, cfg: TrainConfig, variant: VariantConfig, rng: Rng) -> "GcnSaParams":
        dt = np.dtype(cfg.dtype)
        q = cfg.q
        structure = StructureHeads.init(d, cfg.p, cfg.m_structure, rng, dt) if variant.use_a_star else None
        projection = InputProjection.init(d, q, rng, dt)
        fusion1 = (_fusion_params(variant.block_kind, q, cfg.m_fusion, rng, cfg.dropout, dt,
                                  cfg.residual_dropout_variant) if variant.fusion1 else None)
        width = variant.n_blocks() * (2 * q if variant.fusion1 else q)
        gate = T.parameter(np.ones(width, dtype=dt))
        w1 = init_params((width, c), rng, dt)
        fusion2 = (_fusion_params(variant.block_kind, c, cfg.m_fusion, rng, cfg.dropout, dt,
                                  cfg.residual_dropout_variant) if variant.fusion2 else None)
        return cls(structure, projection, fusion1, gate, w1, fusion2)

    def named_parameters(self):
        out = []
        if self.structure is not None:
            out += [(f"structure.w{i}", w) for i, w in enumerate(self.structure.parameters())]
        out += [("proj.w0", self.projection.w0), ("proj.b0", self.projection.b0)]
        out += [(f"fusion1.{i}", w) for i, w in enumerate(_block_parameters(self.fusion1))]
        out += [("gate", self.gate), ("w1", self.w1)]
        out += [(f"fusion2.{i}", w) for i, w in enumerate(_block_parameters(self.fusion2))]
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state):
        named = dict(self.named_parameters())
        if set(named) != set(state):
            raise ConfigError("checkpoint parameters do not match the model layout")
        for k, p in named.items():
            if p.data.shape != state[k].shape:
                raise ConfigError(f"checkpoint shape mismatch for {k}: {state[k].shape} vs {p.data.shape}")
            p.data[...] = state[k]


@dataclass
class ForwardOutput:
    z: Tensor
    h_cb: Tensor
    reconnected: Reconnected | None


def _apply_fusion(h, p, rng, training):
    if isinstance(p, OriginalBlockParams):
        return original_block(h, p, rng, training)
    return modified_block(h, p, rng, training)


def _stage(name, fn, *args):
    try:
        return fn(*args)
    except (ConfigError, ShapeError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def forward(prep: PreparedGraph, params: GcnSaParams, cfg: TrainConfig,
            variant: VariantConfig = VARIANTS["full"], rng: Rng | None = None,
            training: bool = False, pairs=None) -> ForwardOutput:
    """Class probabilities for every node.

    ``pairs`` freezes the learned-graph selection (used by gradient checks).
    """
    x = prep.x
    rate = cfg.dropout
    reconnected = None
    if variant.use_a_star:
        sparsifier = SparsifierConfig(cfg.r, cfg.epsilon)
        reconnected = _stage("structure learning", build_reconnected, x, params.structure,
                             sparsifier, cfg.block_rows or None, pairs)
    h_orig = _stage("input projection", params.projection, x)
    if params.fusion1 is not None:
        h_fusion = _stage("first fusion block", _apply_fusion, h_orig, params.fusion1, rng, training)
        h = T.concat_cols([h_fusion, h_orig])
    else:
        h = h_orig
    blocks = [h]
    if variant.use_a:
        prev, cur = h, h
        for _ in range(cfg.K):
            prev, cur = cur, T.sparse_const_matmul(prep.a_hat, cur)
        blocks += [prev, cur]
    if reconnected is not None:
        blocks.append(reconnected.aggregate(h))
    h_cb = T.dropout(T.concat_cols(blocks) if len(blocks) > 1 else h, rate, rng, training)
    if params.gate.shape[0] != h_cb.shape[1]:
        raise ConfigError(f"gate: length {params.gate.shape[0]} does not match H^cb width {h_cb.shape[1]}")
    h1 = T.relu(T.mul(h_cb, params.gate))
    logits = _stage("classifier", T.matmul, h1, params.w1)
    if params.fusion2 is not None:
        logits = _stage("second fusion block", _apply_fusion, logits, params.fusion2, rng, training)
    return ForwardOutput(T.rowwise_softmax(logits), h_cb, reconnected)


def loss(z, labels, mask):
    """Summed negative log-likelihood over ``mask``."""
    return T.nll(z, labels, np.asarray(mask))


# ---------------------------------------------------------------------------
# Baselines


@dataclass
class GcnParams:
    w0: Tensor
    w1: Tensor

    @classmethod
    def init(cls, d, hidden, c, rng, dtype="float64"):
        dt = np.dtype(dtype)
        return cls(init_params((d, hidden), rng, dt), init_params((hidden, c), rng, dt))

    def named_parameters(self):
        return [("w0", self.w0), ("w1", self.w1)]


@dataclass
class MlpParams:
    w0: Tensor
    b0: Tensor
    w1: Tensor
    b1: Tensor

    @classmethod
    def init(cls, d, hidden, c, rng, dtype="float64"):
        dt = np.dtype(dtype)
        return cls(init_params((d, hidden), rng, dt), init_params((hidden,), rng, dt),
                   init_params((hidden, c), rng, dt), init_params((c,), rng, dt))

    def named_parameters(self):
        return [("w0", self.w0), ("b0", self.b0), ("w1", self.w1), ("b1", self.b1)]


for _cls in (GcnParams, MlpParams):
    _cls.parameters = lambda self: [p for _, p in self.named_parameters()]
    _cls.state_dict = GcnSaParams.state_dict
    _cls.load_state_dict = GcnSaParams.load_state_dict


def gcn_baseline_forward(prep: PreparedGraph, params: GcnParams, rng=None, training=False, rate=0.0):
    """softmax(Â ReLU(Â X W0) W1), dropout before each weight at train time."""
    x = T.dropout(prep.x, rate, rng, training)
    h = T.relu(T.sparse_const_matmul(prep.a_hat, T.matmul(x, params.w0)))
    h = T.dropout(h, rate, rng, training)
    return T.rowwise_softmax(T.sparse_const_matmul(prep.a_hat, T.matmul(h, params.w1)))


def mlp_baseline_forward(prep: PreparedGraph, params: MlpParams, rng=None, training=False, rate=0.0):
    """softmax(ReLU(X W0 + b0) W1 + b1); ignores the graph."""
    x = T.dropout(prep.x, rate, rng, training)
    h = T.relu(T.add(T.matmul(x, params.w0), params.b0))
    h = T.dropout(h, rate, rng, training)
    return T.rowwise_softmax(T.add(T.matmul(h, params.w1), params.b1))
