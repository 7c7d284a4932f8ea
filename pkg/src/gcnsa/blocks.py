"""Transformer-style fusion blocks and parameter initialisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Rng, Tensor

RESIDUAL_VARIANTS = ("raw", "dropped")


def init_params(shape, rng: Rng, dtype=np.float64) -> Tensor:
    """Glorot-uniform weights; 1-D shapes are biases and start at zero."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ConfigError(f"parameter dimensions must be positive, got {shape}")
    if len(shape) == 1:
        return T.parameter(np.zeros(shape, dtype=dtype))
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return T.parameter(rng.uniform(shape, -bound, bound).astype(dtype))


@dataclass
class ModifiedBlockParams:
    """Per-head query/key/value maps of width ``q / m``; no output projection."""

    w_q: list
    w_k: list
    w_v: list
    dropout_rate: float = 0.0
    residual_variant: str = "raw"

    @classmethod
    def init(cls, q, m, rng, dropout_rate=0.0, dtype=np.float64, residual_variant="raw"):
        if q % m:
            raise ConfigError(f"block width {q} is not divisible by the head count {m}")
        dk = q // m
        mk = lambda: [init_params((q, dk), rng, dtype) for _ in range(m)]  # noqa: E731
        return cls(mk(), mk(), mk(), dropout_rate, residual_variant)

    @property
    def m(self) -> int:
        return len(self.w_q)

    def parameters(self):
        return [*self.w_q, *self.w_k, *self.w_v]


@dataclass
class InputProjection:
    w0: Tensor
    b0: Tensor

    @classmethod
    def init(cls, d, q, rng, dtype=np.float64):
        return cls(init_params((d, q), rng, dtype), init_params((q,), rng, dtype))

    def __call__(self, x):
        return T.relu(T.add(T.matmul(x, self.w0), self.b0))

    def parameters(self):
        return [self.w0, self.b0]


@dataclass
class OriginalBlockParams:
    """Standard block: attention with output projection, feed-forward, two layer norms."""

    heads: ModifiedBlockParams
    w_out: Tensor
    w_ff: Tensor
    ln1: tuple = field(default=())
    ln2: tuple = field(default=())

    @classmethod
    def init(cls, q, m, rng, dtype=np.float64):
        heads = ModifiedBlockParams.init(q, m, rng, 0.0, dtype)
        ones = lambda: T.parameter(np.ones(q, dtype=dtype))  # noqa: E731
        zeros = lambda: T.parameter(np.zeros(q, dtype=dtype))  # noqa: E731
        return cls(heads, init_params((q, q), rng, dtype), init_params((q, q), rng, dtype),
                   (ones(), zeros()), (ones(), zeros()))

    def parameters(self):
        return [*self.heads.parameters(), self.w_out, self.w_ff, *self.ln1, *self.ln2]


def mhsa(h, p: ModifiedBlockParams, return_attention=False):
    """Concatenated scaled dot-product attention heads over all node pairs."""
    h = T.as_tensor(h)
    q = h.shape[1]
    if q % p.m:
        raise ConfigError(f"block width {q} is not divisible by the head count {p.m}")
    dk = q // p.m
    inv = 1.0 / np.sqrt(dk)
    outs, attn = [], []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        if wq.shape != (q, dk):
            raise ConfigError(f"head weight shape {wq.shape} does not match input width {q}")
        Q, K, V = T.matmul(h, wq), T.matmul(h, wk), T.matmul(h, wv)
        a = T.rowwise_softmax(T.matmul(T.scale(Q, inv), T.transpose(K)))
        attn.append(a)
        outs.append(T.matmul(a, V))
    out = outs[0] if len(outs) == 1 else T.concat_cols(outs)
    return (out, attn) if return_attention else out


def modified_block(h_original, p: ModifiedBlockParams, rng: Rng | None, training: bool):
    """Dropout(drop(H) + drop(MHSA(H))) + H.

    With ``residual_variant="dropped"`` the outer residual reuses the
    dropped copy of H instead of H itself.
    """
    if p.residual_variant not in RESIDUAL_VARIANTS:
        raise ConfigError(f"residual_variant must be one of {RESIDUAL_VARIANTS}")
    h = T.as_tensor(h_original)
    rate = p.dropout_rate
    att = mhsa(h, p)
    h_drop = T.dropout(h, rate, rng, training)
    a_drop = T.dropout(att, rate, rng, training)
    inner = T.dropout(T.add(h_drop, a_drop), rate, rng, training)
    return T.add(inner, h if p.residual_variant == "raw" else h_drop)


def original_block(x, p: OriginalBlockParams, rng=None, training=False):
    """LN(X1 + X1 W_ff) with X1 = LN(X + MHSA(X) W_out)."""
    x = T.as_tensor(x)
    attn = T.matmul(mhsa(x, p.heads), p.w_out)
    x1 = T.layer_norm(T.add(x, attn), *p.ln1)
    return T.layer_norm(T.add(x1, T.matmul(x1, p.w_ff)), *p.ln2)
