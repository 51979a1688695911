"""Coordinate charts and the fields living on them.

A chart is a named coordinate patch with a sampling box and optional
per-coordinate periodicity.  Metric, vector and scalar fields attach
expression components to a chart.  Sampling uses a seeded scrambled
Halton sequence so every run is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .exprjet import Expr, as_expr, evaluate_jet, parse_expression

BOX_INSET = 1e-3  # fraction of box width kept away from each edge


class ChartError(ValueError):
    pass


@dataclass(frozen=True)
class Chart:
    name: str
    dim: int
    coords: tuple[str, ...] = ()
    box: tuple[tuple[float, float], ...] = ()
    periods: tuple[float | None, ...] = ()

    def __post_init__(self):
        if self.dim < 1:
            raise ChartError(f"chart {self.name!r}: dimension must be >= 1")
        coords = self.coords or tuple(f"x{i}" for i in range(self.dim))
        box = self.box or tuple((-1.0, 1.0) for _ in range(self.dim))
        periods = self.periods or (None,) * self.dim
        if len(coords) != self.dim or len(box) != self.dim or len(periods) != self.dim:
            raise ChartError(f"chart {self.name!r}: field lengths must equal dim")
        for lo, hi in box:
            if not lo < hi:
                raise ChartError(f"chart {self.name!r}: empty sampling box")
        for p in periods:
            if p is not None and p <= 0:
                raise ChartError(f"chart {self.name!r}: period must be positive")
        object.__setattr__(self, "coords", tuple(coords))
        object.__setattr__(self, "box", tuple(tuple(b) for b in box))
        object.__setattr__(self, "periods", tuple(periods))

    @property
    def fully_periodic(self) -> bool:
        return all(p is not None for p in self.periods)

    def name_table(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.coords)}

    def parse(self, src: str) -> Expr:
        return parse_expression(src, self.dim, self.name_table())

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        """Quasi-random points in the box, inset from the edges."""
        engine = qmc.Halton(d=self.dim, scramble=True, seed=seed)
        u = engine.random(count)
        lo = np.array([b[0] for b in self.box])
        hi = np.array([b[1] for b in self.box])
        inset = BOX_INSET * (hi - lo)
        return lo + inset + u * (hi - lo - 2 * inset)

    def grid(self, resolution: int) -> np.ndarray:
        """Uniform periodic grid over one period box, shape (res**dim, dim)."""
        if not self.fully_periodic:
            raise ChartError(f"chart {self.name!r} is not fully periodic")
        axes = [np.arange(resolution) * (p / resolution) for p in self.periods]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


def _to_exprs(chart: Chart, items) -> tuple[Expr, ...]:
    out = []
    for item in items:
        if isinstance(item, str):
            out.append(chart.parse(item))
        else:
            out.append(as_expr(item))
    return tuple(out)


@dataclass(frozen=True)
class MetricField:
    chart: Chart
    components: tuple[tuple[Expr, ...], ...]
    signature: int = 0  # number of negative eigenvalues

    @staticmethod
    def from_rows(chart: Chart, rows, signature: int = 0) -> "MetricField":
        comps = tuple(_to_exprs(chart, row) for row in rows)
        if len(comps) != chart.dim or any(len(r) != chart.dim for r in comps):
            raise ChartError("metric component matrix must be dim x dim")
        return MetricField(chart, comps, signature)

    def component_jets(self, points: np.ndarray, order: int):
        """Evaluate the symmetrized component jets, shape [i][j] of Jet."""
        n = self.chart.dim
        jets = [[evaluate_jet(self.components[i][j], points, order) for j in range(n)]
                for i in range(n)]
        for i in range(n):
            for j in range(i + 1, n):
                defect = np.max(np.abs(jets[i][j].coef - jets[j][i].coef))
                scale = 1.0 + np.max(np.abs(jets[i][j].coef))
                if defect > 1e-12 * scale:
                    raise ChartError(
                        f"metric on {self.chart.name!r} is not symmetric "
                        f"(defect {defect:.3e} at component ({i},{j}))")
                avg = (jets[i][j] + jets[j][i]) * 0.5
                jets[i][j] = avg
                jets[j][i] = avg
        return jets


@dataclass(frozen=True)
class VectorField:
    chart: Chart
    components: tuple[Expr, ...]

    @staticmethod
    def from_components(chart: Chart, comps) -> "VectorField":
        comps = _to_exprs(chart, comps)
        if len(comps) != chart.dim:
            raise ChartError("vector field needs one component per coordinate")
        return VectorField(chart, comps)

    def component_jets(self, points: np.ndarray, order: int):
        return [evaluate_jet(c, points, order) for c in self.components]


@dataclass(frozen=True)
class ScalarField:
    chart: Chart
    expr: Expr

    @staticmethod
    def from_source(chart: Chart, src) -> "ScalarField":
        return ScalarField(chart, chart.parse(src) if isinstance(src, str) else as_expr(src))

    def jet(self, points: np.ndarray, order: int):
        return evaluate_jet(self.expr, points, order)


def euclidean_metric(chart: Chart, signs=None) -> MetricField:
    """Constant diagonal metric; ``signs`` defaults to all +1."""
    n = chart.dim
    signs = [1.0] * n if signs is None else list(signs)
    rows = [[as_expr(signs[i] if i == j else 0.0) for j in range(n)] for i in range(n)]
    negatives = sum(1 for s in signs if s < 0)
    return MetricField(chart, tuple(tuple(r) for r in rows), negatives)
