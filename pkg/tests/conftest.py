"""Shared builders for randomized geometric test data.

Metrics are small trigonometric perturbations of scaled flat metrics on
fully periodic charts, so every construction is smooth, uniformly
positive definite, and exactly periodic.
"""

import numpy as np
import pytest

from geoflow.chart import Chart, MetricField, VectorField

TWO_PI = 2.0 * np.pi

COORD_POOLS = {
    1: ("t",),
    2: ("x", "y"),
    3: ("x", "y", "z"),
    4: ("x", "y", "z", "w"),
}


def torus_chart(dim, name="torus", coords=None):
    coords = coords or COORD_POOLS[dim]
    return Chart(name, dim, tuple(coords),
                 tuple((0.0, TWO_PI) for _ in range(dim)),
                 tuple(TWO_PI for _ in range(dim)))


def box_chart(dim, name="box", coords=None, lo=-1.0, hi=1.0):
    coords = coords or COORD_POOLS[dim]
    return Chart(name, dim, tuple(coords),
                 tuple((lo, hi) for _ in range(dim)),
                 tuple(None for _ in range(dim)))


def _trig_term(rng, coords, amplitude):
    c = rng.choice(coords)
    fun = rng.choice(["sin", "cos"])
    k = rng.integers(1, 3)
    a = amplitude * rng.uniform(0.3, 1.0)
    return f"{a:.6f}*{fun}({k}*{c})"


def _trig_sum(rng, coords, amplitude, terms=2):
    return " + ".join(_trig_term(rng, coords, amplitude) for _ in range(terms))


def random_metric_rows(chart, rng, amplitude=0.25, diagonal=False):
    """Component sources of a uniformly elliptic perturbed periodic metric."""
    n = chart.dim
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if j < i:
                row.append(rows[j][i])
            elif i == j:
                base = 2.0 + 0.5 * i
                row.append(f"{base} + {_trig_sum(rng, chart.coords, amplitude)}")
            elif diagonal:
                row.append("0")
            else:
                row.append(_trig_sum(rng, chart.coords, amplitude / 4.0, terms=1))
        rows.append(row)
    return rows


def random_metric(chart, rng, amplitude=0.25, diagonal=False):
    return MetricField.from_rows(
        chart, random_metric_rows(chart, rng, amplitude, diagonal))


def random_vector(chart, rng, amplitude=1.0):
    comps = [_trig_sum(rng, chart.coords, amplitude) for _ in range(chart.dim)]
    return VectorField.from_components(chart, comps)


def random_potential(rng, coords, amplitude=0.8, terms=3):
    """A periodic scalar potential as an expression string."""
    return _trig_sum(rng, coords, amplitude, terms=terms)


def gradient_field(chart, metric_diag_entries, potential, rng=None):
    """The metric gradient of ``potential`` for a diagonal metric given by
    its diagonal entry strings: zeta^i = (1/g_ii) * d(potential)/dx_i."""
    import sympy

    syms = sympy.symbols(list(chart.coords))
    table = dict(zip(chart.coords, syms))
    f = sympy.sympify(potential, locals=table)
    comps = []
    for i, c in enumerate(chart.coords):
        df = sympy.diff(f, table[c])
        comps.append(f"({sympy.sstr(df)}) / ({metric_diag_entries[i]})")
    return VectorField.from_components(chart, comps)


def diagonal_metric(chart, entries):
    n = chart.dim
    rows = [[entries[i] if i == j else "0" for j in range(n)] for i in range(n)]
    return MetricField.from_rows(chart, rows)


def random_diagonal_entries(chart, rng, amplitude=0.25):
    return [f"{2.0 + 0.5 * i} + {_trig_sum(rng, chart.coords, amplitude)}"
            for i in range(chart.dim)]


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
