"""Charts, coordinate ranges, diagonal metrics, and factorization of the
volume density sqrt(g) into per-coordinate functions.

Only orthogonal coordinates (diagonal metric tensors) are modeled.  Range
boundaries may carry degenerate metric values; interior sampling always
keeps a margin away from them, and infinite ranges are truncated to a
finite window for sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

import numpy as np

from . import expr
from .expr import Node

__all__ = [
    "FiniteInterval",
    "SemiAxis",
    "RealLine",
    "CoordinateRange",
    "Coordinate",
    "Chart",
    "MetricSpec",
    "FactoredDeterminant",
    "NotFactorable",
    "ManifoldError",
    "sqrt_det",
    "check_factorizable",
    "axis_samples",
    "random_interior_points",
    "default_anchor",
]

DEFAULT_MARGIN = 0.1
DEFAULT_TRUNCATION = 50.0


class ManifoldError(Exception):
    pass


@dataclass(frozen=True)
class FiniteInterval:
    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ManifoldError("interval endpoints must be finite")
        if not self.a < self.b:
            raise ManifoldError(f"empty interval ({self.a}, {self.b})")


@dataclass(frozen=True)
class SemiAxis:
    a: float

    def __post_init__(self):
        if not math.isfinite(self.a):
            raise ManifoldError("semi-axis origin must be finite")


@dataclass(frozen=True)
class RealLine:
    pass


CoordinateRange = Union[FiniteInterval, SemiAxis, RealLine]


def _window(rng: CoordinateRange, T: float) -> tuple[float, float]:
    """Finite sampling window for a range; infinite ends truncated at T."""
    if isinstance(rng, FiniteInterval):
        return rng.a, rng.b
    if isinstance(rng, SemiAxis):
        return rng.a, rng.a + T
    return -T, T


def axis_samples(
    rng: CoordinateRange,
    n: int,
    margin: float = DEFAULT_MARGIN,
    T: float = DEFAULT_TRUNCATION,
) -> np.ndarray:
    """n interior points, uniformly spaced, keeping a margin fraction away
    from the window edges (metric degeneracies live on the boundary)."""
    lo, hi = _window(rng, T)
    w = hi - lo
    return np.linspace(lo + margin * w, hi - margin * w, n)


def random_interior_points(
    chart: "Chart",
    n: int,
    rng: np.random.Generator,
    margin: float = DEFAULT_MARGIN,
    T: float = DEFAULT_TRUNCATION,
) -> dict[str, np.ndarray]:
    """n random interior points as a name -> samples mapping."""
    out = {}
    for c in chart.coordinates:
        lo, hi = _window(c.range, T)
        w = hi - lo
        out[c.name] = lo + margin * w + (1 - 2 * margin) * w * rng.random(n)
    return out


def default_anchor(chart: "Chart", T: float = DEFAULT_TRUNCATION) -> dict[str, float]:
    """Midpoint of finite ranges, origin + 1 on a semi-axis, 0 on the line."""
    anchor = {}
    for c in chart.coordinates:
        if isinstance(c.range, FiniteInterval):
            anchor[c.name] = 0.5 * (c.range.a + c.range.b)
        elif isinstance(c.range, SemiAxis):
            anchor[c.name] = c.range.a + 1.0
        else:
            anchor[c.name] = 0.0
    return anchor


@dataclass(frozen=True)
class Coordinate:
    name: str
    range: CoordinateRange


@dataclass(frozen=True)
class Chart:
    coordinates: tuple[Coordinate, ...]

    def __post_init__(self):
        if len(self.coordinates) < 1:
            raise ManifoldError("chart needs at least one coordinate")
        names = [c.name for c in self.coordinates]
        if len(set(names)) != len(names):
            raise ManifoldError(f"duplicate coordinate names in {names}")

    @classmethod
    def of(cls, *coords: tuple[str, CoordinateRange]) -> "Chart":
        return cls(tuple(Coordinate(n, r) for n, r in coords))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coordinates)

    @property
    def dim(self) -> int:
        return len(self.coordinates)

    def range_of(self, name: str) -> CoordinateRange:
        for c in self.coordinates:
            if c.name == name:
                return c.range
        raise KeyError(name)

    def index_of(self, name: str) -> int:
        return self.names.index(name)


def _sqrt_expr(e: Node) -> Node:
    """Square root pushed through products, quotients, and powers.  Bases are
    positive on the chart interior (metric positivity), so sqrt(u^2) = u."""
    if isinstance(e, expr.Constant):
        if e.value < 0:
            raise ManifoldError(f"negative metric component constant {e.value}")
        return expr.const(math.sqrt(e.value))
    if isinstance(e, expr.Mul):
        return expr.mul(_sqrt_expr(e.left), _sqrt_expr(e.right))
    if isinstance(e, expr.Div):
        return expr.div(_sqrt_expr(e.left), _sqrt_expr(e.right))
    if isinstance(e, expr.Pow):
        return expr.pow_(e.base, e.exponent / 2)
    return expr.call("sqrt", e)


@dataclass(frozen=True)
class MetricSpec:
    """Diagonal metric on a chart; sqrt_g is the derived volume density."""

    chart: Chart
    components: tuple[Node, ...]
    sqrt_g: Node

    @classmethod
    def create(
        cls,
        chart: Chart,
        components: Sequence[Node],
        *,
        margin: float = DEFAULT_MARGIN,
        T: float = DEFAULT_TRUNCATION,
        samples_per_axis: int = 7,
    ) -> "MetricSpec":
        if len(components) != chart.dim:
            raise ManifoldError(
                f"{chart.dim} coordinates but {len(components)} metric components"
            )
        allowed = set(chart.names)
        for k, g in enumerate(components):
            extra = expr.free_vars(g) - allowed
            if extra:
                raise ManifoldError(
                    f"metric component {k} uses unknown variables {sorted(extra)}"
                )
        spec = cls(chart, tuple(components), sqrt_det_components(components))
        grid = {
            c.name: axis_samples(c.range, samples_per_axis, margin, T)
            for c in chart.coordinates
        }
        mesh = _meshify(chart, grid)
        for k, g in enumerate(components):
            vals = np.broadcast_to(np.asarray(expr.evaluate(g, mesh), dtype=float), _mesh_shape(chart, grid))
            if not np.all(vals > 0):
                raise ManifoldError(
                    f"metric component {k} ({g}) is not positive on the sample grid"
                )
        sg = np.asarray(expr.evaluate(spec.sqrt_g, mesh), dtype=float)
        if not np.all(sg > 0):
            raise ManifoldError("volume density is not positive on the sample grid")
        return spec


def _meshify(chart: Chart, grid: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Sparse tensor mesh: axis k gets shape (1,..,n_k,..,1) for broadcasting."""
    n = chart.dim
    out = {}
    for k, name in enumerate(chart.names):
        shape = [1] * n
        shape[k] = len(grid[name])
        out[name] = np.asarray(grid[name]).reshape(shape)
    return out


def _mesh_shape(chart: Chart, grid: Mapping[str, np.ndarray]) -> tuple[int, ...]:
    return tuple(len(grid[name]) for name in chart.names)


def sqrt_det_components(components: Sequence[Node]) -> Node:
    """Volume density as the product of component square roots, with unit
    factors folded away."""
    out: Node = expr.const(1.0)
    for g in components:
        out = expr.mul(out, _sqrt_expr(g))
    return out


def sqrt_det(m: MetricSpec) -> Node:
    return m.sqrt_g


@dataclass(frozen=True)
class FactoredDeterminant:
    """sqrt(g) split into one positive single-variable factor per coordinate,
    normalized so the product reproduces sqrt(g) exactly."""

    chart: Chart
    factors: tuple[Node, ...]
    anchor: dict[str, float]

    def factor_for(self, name: str) -> Node:
        return self.factors[self.chart.index_of(name)]

    def product(self) -> Node:
        out: Node = expr.const(1.0)
        for f in self.factors:
            out = expr.mul(out, f)
        return out


@dataclass(frozen=True)
class NotFactorable:
    """Separability failure witness: the mixed derivative of log sqrt(g) in
    coordinates (i, j) is nonzero at the witness point."""

    witness: dict[str, float]
    i: int
    j: int
    mixed_partial: float


def _flatten_product(e: Node, power: Fraction, atoms: list[tuple[Node, Fraction]]) -> None:
    if isinstance(e, expr.Mul):
        _flatten_product(e.left, power, atoms)
        _flatten_product(e.right, power, atoms)
    elif isinstance(e, expr.Div):
        _flatten_product(e.left, power, atoms)
        _flatten_product(e.right, -power, atoms)
    elif isinstance(e, expr.Pow):
        _flatten_product(e.base, power * e.exponent, atoms)
    else:
        atoms.append((e, power))


def _structural_factors(sqrt_g: Node, chart: Chart) -> tuple[Node, ...] | None:
    """Factor a product tree whose atoms each involve at most one coordinate.
    Returns None when an atom genuinely mixes coordinates (e.g. exp(x + y)),
    in which case the anchor-slice extraction takes over."""
    atoms: list[tuple[Node, Fraction]] = []
    _flatten_product(sqrt_g, Fraction(1), atoms)
    coeff = 1.0
    grouped: list[dict[Node, Fraction]] = [dict() for _ in chart.names]
    for atom, power in atoms:
        fv = expr.free_vars(atom)
        if not fv:
            if isinstance(atom, expr.Constant):
                coeff *= atom.value ** float(power)
            else:
                return None
            continue
        if len(fv) > 1:
            return None
        k = chart.index_of(next(iter(fv)))
        grouped[k][atom] = grouped[k].get(atom, Fraction(0)) + power
    if coeff <= 0 or not math.isfinite(coeff):
        return None
    factors: list[Node] = []
    for k in range(chart.dim):
        f: Node = expr.const(1.0)
        for atom, power in grouped[k].items():
            f = expr.mul(f, expr.pow_(atom, power))
        factors.append(f)
    if coeff != 1.0:
        factors[0] = expr.mul(expr.const(coeff), factors[0])
    return tuple(factors)


def _slice_factors(
    sqrt_g: Node, chart: Chart, anchor: dict[str, float]
) -> tuple[Node, ...]:
    """Axis slices through the anchor point; the reconstruction constant
    sqrt_g(anchor)^(1-n) is folded into the first factor."""
    n = chart.dim
    s_anchor = float(expr.evaluate(sqrt_g, anchor))
    factors = []
    for name in chart.names:
        others = {m: anchor[m] for m in chart.names if m != name}
        factors.append(expr.substitute(sqrt_g, others))
    factors[0] = expr.mul(expr.const(s_anchor ** (1 - n)), factors[0])
    return tuple(factors)


def check_factorizable(
    sqrt_g: Node,
    chart: Chart,
    grid: Mapping[str, np.ndarray] | None = None,
    *,
    tol: float = 1e-9,
    anchor: Mapping[str, float] | None = None,
    margin: float = DEFAULT_MARGIN,
    T: float = DEFAULT_TRUNCATION,
    samples_per_axis: int = 9,
) -> FactoredDeterminant | NotFactorable:
    """Decide whether sqrt(g) splits into a product of single-coordinate
    functions, by checking that every mixed partial of log sqrt(g) vanishes
    on the sample grid; on success extract the per-coordinate factors.

    Exact product trees are factored structurally (so spherical r^2*sin(theta)
    yields factors (r^2, sin(theta), 1)); separable densities that are not
    written as products fall back to anchor-point slices, with the
    normalization constant folded into the first factor.
    """
    if grid is None:
        grid = {
            c.name: axis_samples(c.range, samples_per_axis, margin, T)
            for c in chart.coordinates
        }
    if anchor is None:
        anchor = default_anchor(chart, T)
    else:
        anchor = dict(anchor)
        for c in chart.coordinates:
            lo, hi = _window(c.range, T)
            if not lo <= anchor[c.name] <= hi:
                raise ManifoldError(
                    f"anchor {anchor[c.name]} outside the range of {c.name!r}"
                )

    mesh = _meshify(chart, grid)
    shape = _mesh_shape(chart, grid)
    log_sg = expr.call("log", sqrt_g)
    names = chart.names
    for i in range(chart.dim):
        di = expr.differentiate(log_sg, names[i])
        for j in range(i + 1, chart.dim):
            dij = expr.differentiate(di, names[j])
            vals = np.broadcast_to(
                np.asarray(expr.evaluate(dij, mesh), dtype=float), shape
            )
            worst = np.unravel_index(np.argmax(np.abs(vals)), shape)
            if abs(vals[worst]) > tol:
                point = {
                    name: float(grid[name][worst[k]]) for k, name in enumerate(names)
                }
                return NotFactorable(point, i, j, float(vals[worst]))

    factors = _structural_factors(sqrt_g, chart)
    if factors is None:
        factors = _slice_factors(sqrt_g, chart, dict(anchor))
    return FactoredDeterminant(chart, factors, dict(anchor))
