"""Permutation-invariant pooling of per-variable vectors into one global field.

Items are stacked along axis -2 (one row per variable); leading axes are
batch axes and are pooled independently. All reductions go through
:func:`~vi2dssm.numerics.canonical_sum`, so the pooled vector is bit-identical
for every ordering of the items, not merely equal up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, SizeError
from .numerics import canonical_sum, fixed_order_matvec

KINDS = ("mean", "sum", "attention")


@dataclass(frozen=True, eq=False)
class AggregatorSpec:
    """Which set function to use; attention needs query, key_proj, temperature."""

    kind: str = "mean"
    query: np.ndarray | None = None
    key_proj: np.ndarray | None = None
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown aggregator {self.kind!r}; choose from {KINDS}")
        if self.kind == "attention":
            if self.query is None or self.key_proj is None:
                raise DomainError("attention pooling needs query and key_proj")
            if not self.temperature > 0:
                raise DomainError(f"temperature must be positive, got {self.temperature}")
            q = np.asarray(self.query, dtype=float).ravel()
            K = np.asarray(self.key_proj, dtype=float)
            if K.shape != (q.size, q.size):
                raise DimensionError(f"key_proj must be {q.size}x{q.size}, got {K.shape}")
            object.__setattr__(self, "query", q)
            object.__setattr__(self, "key_proj", K)

    @classmethod
    def attention(cls, d_psi, rng, temperature=1.0):
        """Attention pooling with a random seed query and key projection."""
        return cls(
            kind="attention",
            query=rng.normal(size=d_psi),
            key_proj=rng.normal(size=(d_psi, d_psi)) / np.sqrt(d_psi),
            temperature=temperature,
        )


def _check_items(items):
    items = np.asarray(items, dtype=float)
    if items.ndim < 2:
        raise DimensionError("items must be stacked as (..., C, d)")
    if items.shape[-2] == 0:
        raise DomainError("cannot pool an empty multiset")
    return items


def attention_weights(spec, items):
    """Softmax weights over items, shape (..., C)."""
    items = _check_items(items)
    d = items.shape[-1]
    if spec.query.size != d:
        raise DimensionError(f"query has width {spec.query.size}, items have {d}")
    # <q, K v> = <K^T q, v>; one shared vector, then a per-row dot product
    u = spec.key_proj.T @ spec.query
    scores = fixed_order_matvec(u[None, :], items)[..., 0] / spec.temperature
    m = np.max(scores, axis=-1, keepdims=True)
    e = np.exp(scores - m)
    z = canonical_sum(e[..., None], axis=-2)
    return e / z


def pool(spec, items):
    """Pool a multiset of vectors (axis -2) into one vector."""
    items = _check_items(items)
    C = items.shape[-2]
    if spec.kind == "sum":
        return canonical_sum(items, axis=-2)
    if spec.kind == "mean":
        return canonical_sum(items, axis=-2) / C
    w = attention_weights(spec, items)
    return canonical_sum(w[..., None] * items, axis=-2)


def compute_psi(W_v, z, spec):
    """Project every variable's feature by the shared ``W_v``, then pool."""
    W_v = np.asarray(W_v, dtype=float)
    z = np.asarray(z, dtype=float)
    if z.ndim < 2:
        raise DimensionError("z must be stacked as (..., C, d_z)")
    if W_v.ndim != 2 or W_v.shape[1] != z.shape[-1]:
        raise DimensionError(f"W_v of shape {W_v.shape} cannot act on width {z.shape[-1]}")
    if z.shape[-2] == 0:
        raise SizeError("no variables to pool")
    return pool(spec, fixed_order_matvec(W_v, z))


def pooling_cost(kind, C, d):
    """Work, parallel span and peak extra memory (in floats) of one pooling call."""
    span = int(np.ceil(np.log2(C))) if C > 1 else 0
    if kind in ("mean", "sum"):
        return {"work": C * d, "span": span, "memory": d}
    if kind == "attention":
        return {"work": 2 * C * d, "span": span + 1, "memory": C * d + C}
    raise DomainError(f"unknown aggregator {kind!r}")
