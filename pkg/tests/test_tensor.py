"""Curvature pipeline against symbolic and finite-difference oracles."""

import numpy as np
import pytest
import sympy

from geoflow.chart import Chart, MetricField, ScalarField, VectorField
from geoflow.tensor import (Geometry, bochner_residual, christoffel,
                            identity_div_lie_residual,
                            identity_trace_lie2_residual,
                            lie_derivative_metric, scalar_curvature,
                            second_lie_derivative_metric, torus_integrate,
                            vector_values)

from conftest import (box_chart, diagonal_metric, gradient_field,
                      random_diagonal_entries, random_metric,
                      random_metric_rows, random_potential, random_vector,
                      torus_chart)


def sphere2():
    chart = Chart("s2", 2, ("a", "b"), ((0.3, 1.2), (0.1, 1.0)), (None, None))
    return MetricField.from_rows(chart, [["1", "0"], ["0", "sin(a)^2"]])


def sphere3():
    chart = Chart("s3", 3, ("a", "b", "c"),
                  ((0.3, 1.2), (0.3, 1.2), (0.1, 1.0)), (None, None, None))
    rows = [["1", "0", "0"],
            ["0", "sin(a)^2", "0"],
            ["0", "0", "sin(a)^2 * sin(b)^2"]]
    return MetricField.from_rows(chart, rows)


class TestCurvatureOracles:
    def test_unit_sphere_scalar_curvature(self):
        for metric, expected in ((sphere2(), 2.0), (sphere3(), 6.0)):
            pts = metric.chart.sample(50, seed=1)
            r = scalar_curvature(metric, pts)
            assert np.allclose(r, expected, rtol=1e-9)

    def test_sphere_christoffel_against_sympy(self):
        metric = sphere2()
        a, b = sympy.symbols("a b")
        g = sympy.Matrix([[1, 0], [0, sympy.sin(a) ** 2]])
        ginv = g.inv()
        x = (a, b)
        pts = metric.chart.sample(5, seed=2)
        got = christoffel(metric, pts)
        for m, p in enumerate(pts):
            subs = {a: p[0], b: p[1]}
            for k in range(2):
                for i in range(2):
                    for j in range(2):
                        want = sum(
                            sympy.Rational(1, 2) * ginv[k, l]
                            * (sympy.diff(g[l, i], x[j]) + sympy.diff(g[l, j], x[i])
                               - sympy.diff(g[i, j], x[l]))
                            for l in range(2))
                        assert got[m, k, i, j] == pytest.approx(
                            float(want.subs(subs)), rel=1e-10, abs=1e-10)

    def test_christoffel_against_finite_differences(self, rng):
        chart = torus_chart(3)
        metric = random_metric(chart, rng)
        pts = chart.sample(5, seed=3)
        got = christoffel(metric, pts)
        h = 1e-3
        n = 3
        gv = lambda q: Geometry(metric, q, order=0).gval
        dg = np.empty((len(pts), n, n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dg[:, k] = (8 * (gv(pts + e) - gv(pts - e))
                        - (gv(pts + 2 * e) - gv(pts - 2 * e))) / (12 * h)
        ginv = np.linalg.inv(gv(pts))
        # dg[m, k, i, j] = d_k g_ij; assemble d_j g_li + d_i g_lj - d_l g_ij
        want = 0.5 * np.einsum("...kl,...jli->...kij", ginv, dg) \
            + 0.5 * np.einsum("...kl,...ilj->...kij", ginv, dg) \
            - 0.5 * np.einsum("...kl,...lij->...kij", ginv, dg)
        assert np.max(np.abs(got - want)) < 1e-8

    def test_contracted_bianchi(self, rng):
        chart = torus_chart(3)
        metric = random_metric(chart, rng)
        pts = chart.sample(100, seed=4)
        geo = Geometry(metric, pts, order=3)
        div_ric = vector_values(geo.div_sym2_jets(geo.ricci_jets))
        dr = np.stack([geo.scalar_jet.derivative(j).value for j in range(3)], -1)
        scale = 1.0 + np.max(np.abs(dr))
        assert np.max(np.abs(div_ric - 0.5 * dr)) < 1e-7 * scale

    def test_conformal_scaling(self, rng):
        chart = torus_chart(2)
        rows = random_metric_rows(chart, rng)
        metric = MetricField.from_rows(chart, rows)
        pts = chart.sample(30, seed=5)
        base = scalar_curvature(metric, pts)
        for c in rng.uniform(0.5, 3.0, size=3):
            scaled_rows = [[f"({c}) * ({comp})" for comp in row] for row in rows]
            scaled = MetricField.from_rows(chart, scaled_rows)
            got = scalar_curvature(scaled, pts)
            assert np.allclose(got, base / c, rtol=1e-9, atol=1e-12)


class TestLieIdentities:
    def test_trace_identity_generic_fields(self, rng):
        for dim in (2, 3):
            chart = torus_chart(dim, name=f"torus{dim}")
            metric = random_metric(chart, rng)
            zeta = random_vector(chart, rng)
            pts = chart.sample(60, seed=6)
            res = identity_trace_lie2_residual(metric, zeta, pts)
            scale = 1.0 + np.max(np.abs(
                second_lie_derivative_metric(metric, zeta, pts)))
            assert np.max(np.abs(res)) < 1e-8 * scale

    def test_divergence_identity_gradient_fields(self, rng):
        for dim in (2, 3):
            chart = torus_chart(dim, name=f"torus{dim}")
            entries = random_diagonal_entries(chart, rng)
            metric = diagonal_metric(chart, entries)
            zeta = gradient_field(chart, entries,
                                  random_potential(rng, chart.coords))
            pts = chart.sample(60, seed=7)
            res = identity_div_lie_residual(metric, zeta, pts)
            scale = 1.0 + np.max(np.abs(
                lie_derivative_metric(metric, zeta, pts)))
            assert np.max(np.abs(res)) < 1e-8 * scale

    def test_lie_derivative_of_killing_field_vanishes(self):
        metric = sphere2()
        zeta = VectorField.from_components(metric.chart, ["0", "1"])
        pts = metric.chart.sample(40, seed=8)
        assert np.max(np.abs(lie_derivative_metric(metric, zeta, pts))) < 1e-14
        assert np.max(np.abs(second_lie_derivative_metric(metric, zeta, pts))) < 1e-14

    def test_bochner_residual(self, rng):
        chart = torus_chart(2)
        metric = random_metric(chart, rng, amplitude=0.15)
        f = ScalarField.from_source(chart, random_potential(rng, chart.coords))
        pts = chart.sample(30, seed=9)
        res = bochner_residual(metric, f, pts)
        assert np.max(np.abs(res)) < 1e-7


class TestQuadrature:
    def test_flat_torus_volume(self):
        chart = torus_chart(2)
        metric = MetricField.from_rows(chart, [["1", "0"], ["0", "1"]])
        vol = torus_integrate(metric, lambda pts: np.ones(len(pts)), 32)
        assert vol == pytest.approx((2 * np.pi) ** 2, rel=1e-12)

    def test_weighted_volume_is_spectral(self):
        chart = torus_chart(1, coords=("x",))
        metric = MetricField.from_rows(chart, [["(2 + sin(x))^2"]])
        # integral of sqrt(g) = 2 + sin x over one period is 4 pi
        val = torus_integrate(metric, lambda pts: np.ones(len(pts)), 16)
        assert val == pytest.approx(4 * np.pi, rel=1e-12)

    def test_nonperiodic_chart_rejected(self):
        chart = box_chart(2)
        metric = MetricField.from_rows(chart, [["1", "0"], ["0", "1"]])
        with pytest.raises(Exception):
            torus_integrate(metric, lambda pts: np.ones(len(pts)), 16)
