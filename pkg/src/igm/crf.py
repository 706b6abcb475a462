"""Compressibility-removing factors: the single-coordinate functions mu_k
whose scaled coordinate fields mu_k * d/dx^k are divergence free.

With a factored volume density sqrt(g) = g^1(x^1) ... g^n(x^n), the factor
mu_k = 1/g^k depends on x^k alone and satisfies d/dx^k (mu_k sqrt(g)) = 0
identically; the residual check below evaluates that derivative symbolically,
so a genuine factor sits at floating-point noise level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import expr
from .expr import Node
from .manifold import FactoredDeterminant, axis_samples

__all__ = ["Crf", "CrfError", "compute_crfs", "divergence_residual", "reciprocal"]

RESIDUAL_TOL = 1e-12


class CrfError(Exception):
    pass


@dataclass(frozen=True)
class Crf:
    """mu for one coordinate field; positive on the range interior."""

    index: int
    name: str
    mu: Node


def reciprocal(e: Node) -> Node:
    """1/e with the structure kept readable: powers negate their exponent,
    products invert factorwise."""
    if isinstance(e, expr.Constant):
        if e.value == 0:
            raise CrfError("reciprocal of zero factor")
        return expr.const(1.0 / e.value)
    if isinstance(e, expr.Pow):
        return expr.pow_(e.base, -e.exponent)
    if isinstance(e, expr.Mul):
        return expr.mul(reciprocal(e.left), reciprocal(e.right))
    if isinstance(e, expr.Div):
        return expr.div(e.right, e.left)
    return expr.div(expr.const(1.0), e)


def compute_crfs(factored: FactoredDeterminant) -> list[Crf]:
    """One mu per coordinate, the reciprocal of its density factor."""
    out = []
    for k, coord in enumerate(factored.chart.coordinates):
        g_k = factored.factors[k]
        extra = expr.free_vars(g_k) - {coord.name}
        if extra:
            raise CrfError(
                f"factor for {coord.name!r} involves other coordinates {sorted(extra)}"
            )
        mu = reciprocal(g_k)
        xs = axis_samples(coord.range, 101)
        vals = np.asarray(expr.evaluate(mu, {coord.name: xs}), dtype=float)
        if not np.all(np.broadcast_to(vals, xs.shape) > 0):
            raise CrfError(f"mu for {coord.name!r} is not positive on the interior")
        out.append(Crf(k, coord.name, mu))
    return out


def divergence_residual(
    mu: Node,
    sqrt_g: Node,
    name: str,
    samples: Mapping[str, np.ndarray],
) -> float:
    """max |sqrt(g)^-1 d/dx^k (mu sqrt(g))| over the sample points.

    The derivative is exact (symbolic), so the only residual for a true
    factor is rounding noise; anything structurally wrong shows up at
    O(1) instead.
    """
    d = expr.differentiate(expr.mul(mu, sqrt_g), name)
    num = np.asarray(expr.evaluate(d, samples), dtype=float)
    den = np.asarray(expr.evaluate(sqrt_g, samples), dtype=float)
    return float(np.max(np.abs(num / den)))
