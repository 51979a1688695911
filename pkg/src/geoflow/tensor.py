"""Pseudo-Riemannian tensor calculus on a single chart.

All geometric quantities are computed from jet-valued metric components,
so every derivative entering curvature, Lie derivatives and the identity
residuals is exact to machine precision.  Tensors of jets are kept as
nested lists indexed like the tensor and batched over sample points
inside each jet.

``scalar_curvature_from_partials`` implements the same curvature algebra
on plain derivative arrays; the grid flow integrator feeds it stencil
derivatives instead of jets.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .chart import ChartError, MetricField, ScalarField, VectorField
from .exprjet import Jet

DET_TOL = 1e-10


class DegenerateMetricError(ArithmeticError):
    pass


def _as_batch(points) -> tuple[np.ndarray, bool]:
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        return points[None, :], True
    return points, False


def _squeeze(arr, single: bool):
    return arr[0] if single else arr


# ---------------------------------------------------------------------------
# jet-matrix helpers
# ---------------------------------------------------------------------------

def _values(mat) -> np.ndarray:
    """Constant terms of a jet matrix as an (..., n, n) array."""
    n = len(mat)
    return np.stack([np.stack([mat[i][j].value for j in range(n)], axis=-1)
                     for i in range(n)], axis=-2)


def _vector_values(vec) -> np.ndarray:
    return np.stack([v.value for v in vec], axis=-1)


def _inverse_jets(g, space, batch):
    """Jet-level inverse of a symmetric jet matrix.

    The constant part is inverted numerically; the jet correction is the
    finite Neumann series in the zero-constant remainder (exact because
    that remainder is nilpotent at the truncation order).
    """
    n = len(g)
    order = min(g[i][j].order for i in range(n) for j in range(n))
    gval = _values(g)
    det = np.linalg.det(gval)
    scale = np.max(np.abs(gval), axis=(-2, -1)) ** n + 1.0
    if np.any(np.abs(det) < DET_TOL * scale):
        raise DegenerateMetricError(
            f"metric is numerically degenerate (min |det| = {np.min(np.abs(det)):.3e})")
    vinv = np.linalg.inv(gval)

    # E = Vinv (g - V): zero constant term
    delta = [[Jet(space, g[i][j].coef.copy(), order) for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(n):
            delta[i][j].coef[..., 0] = 0.0
    E = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = Jet.constant(space, 0.0, batch)
            acc.order = order
            for k in range(n):
                acc = acc + delta[k][j] * vinv[..., i, k]
            E[i][j] = acc

    # S = I - E + E^2 - ... up to the jet order
    S = [[Jet.constant(space, 1.0 if i == j else 0.0, batch) for j in range(n)]
         for i in range(n)]
    for row in S:
        for jet in row:
            jet.order = order
    P = E
    sign = -1.0
    for _ in range(order):
        for i in range(n):
            for j in range(n):
                S[i][j] = S[i][j] + P[i][j] * sign
        P = [[_matcell(P, E, i, j, space, batch, order) for j in range(n)]
             for i in range(n)]
        sign = -sign

    ginv = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            acc = Jet.constant(space, 0.0, batch)
            acc.order = order
            for k in range(n):
                acc = acc + S[i][k] * vinv[..., k, j]
            ginv[i][j] = acc
    return ginv, gval, vinv


def _matcell(A, B, i, j, space, batch, order):
    acc = Jet.constant(space, 0.0, batch)
    acc.order = order
    for k in range(len(A)):
        acc = acc + A[i][k] * B[k][j]
    return acc


# ---------------------------------------------------------------------------
# geometry context
# ---------------------------------------------------------------------------

@dataclass
class CurvatureBundle:
    """Evaluated curvature data at the sample points."""
    points: np.ndarray
    christoffel: np.ndarray      # Gamma[..., k, i, j]
    riemann: np.ndarray          # covariant R[..., i, j, k, l]
    ricci: np.ndarray
    ricci_operator: np.ndarray   # Q[..., i, j] = Q^i_j
    scalar: np.ndarray


class Geometry:
    """Jet-evaluated geometry of one metric at a batch of points.

    ``order`` is the metric jet order; curvature values need 2, identity
    residuals involving third derivatives need 3 or 4.
    """

    def __init__(self, metric: MetricField, points, order: int = 2):
        points, self._single = _as_batch(points)
        if points.shape[-1] != metric.chart.dim:
            raise ChartError("point dimension does not match chart")
        self.metric = metric
        self.chart = metric.chart
        self.n = metric.chart.dim
        self.points = points
        self.batch = points.shape[:-1]
        self.order = order
        self.g = metric.component_jets(points, order)
        self.space = self.g[0][0].space
        self.ginv, self.gval, self.ginv_val = _inverse_jets(self.g, self.space, self.batch)
        self._check_signature()

    def _check_signature(self):
        eig = np.linalg.eigvalsh(self.gval)
        negatives = np.sum(eig < 0.0, axis=-1)
        if np.any(negatives != self.metric.signature):
            raise DegenerateMetricError(
                f"metric signature mismatch: declared {self.metric.signature} "
                f"negative eigenvalue(s), observed {set(np.unique(negatives))}")

    def zero(self, order=None) -> Jet:
        jet = Jet.constant(self.space, 0.0, self.batch)
        if order is not None:
            jet.order = order
        return jet

    # -- connection and curvature (jet-valued) ------------------------------

    @cached_property
    def dg(self):
        n = self.n
        return [[[self.g[i][j].derivative(k) for j in range(n)] for i in range(n)]
                for k in range(n)]

    @cached_property
    def christoffel_jets(self):
        n, dg = self.n, self.dg
        gamma = [[[None] * n for _ in range(n)] for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                terms = [dg[i][j][l] + dg[j][i][l] - dg[l][i][j] for l in range(n)]
                for k in range(n):
                    acc = None
                    for l in range(n):
                        t = self.ginv[k][l] * terms[l]
                        acc = t if acc is None else acc + t
                    acc = acc * 0.5
                    gamma[k][i][j] = acc
                    gamma[k][j][i] = acc
        return gamma

    @cached_property
    def riemann_mixed_jets(self):
        """R[m][i][k][l] = R^m_{ikl} with the last pair antisymmetric."""
        n = self.n
        gamma = self.christoffel_jets
        dgamma = [[[[gamma[m][a][b].derivative(k) for b in range(n)]
                    for a in range(n)] for m in range(n)] for k in range(n)]
        R = [[[[None] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
        for m in range(n):
            for i in range(n):
                for k in range(n):
                    for l in range(k, n):
                        if l == k:
                            R[m][i][k][l] = self.zero(gamma[0][0][0].order - 1)
                            continue
                        acc = dgamma[k][m][l][i] - dgamma[l][m][k][i]
                        for a in range(n):
                            acc = acc + gamma[m][k][a] * gamma[a][l][i] \
                                      - gamma[m][l][a] * gamma[a][k][i]
                        R[m][i][k][l] = acc
                        R[m][i][l][k] = -acc
        return R

    @cached_property
    def riemann_jets(self):
        n = self.n
        Rm = self.riemann_mixed_jets
        R = [[[[None] * n for _ in range(n)] for _ in range(n)] for _ in range(n)]
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(k, n):
                        acc = None
                        for m in range(n):
                            t = self.g[i][m] * Rm[m][j][k][l]
                            acc = t if acc is None else acc + t
                        R[i][j][k][l] = acc
                        R[i][j][l][k] = -acc
        return R

    @cached_property
    def ricci_jets(self):
        n = self.n
        Rm = self.riemann_mixed_jets
        ric = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                acc = None
                for m in range(n):
                    t = Rm[m][i][m][j]
                    acc = t if acc is None else acc + t
                ric[i][j] = acc
                ric[j][i] = acc
        return ric

    @cached_property
    def ricci_operator_jets(self):
        n = self.n
        ric = self.ricci_jets
        Q = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                acc = None
                for k in range(n):
                    t = self.ginv[i][k] * ric[k][j]
                    acc = t if acc is None else acc + t
                Q[i][j] = acc
        return Q

    @cached_property
    def scalar_jet(self):
        n = self.n
        ric = self.ricci_jets
        acc = None
        for i in range(n):
            for j in range(n):
                t = self.ginv[i][j] * ric[i][j]
                acc = t if acc is None else acc + t
        return acc

    # -- norms (numeric) ----------------------------------------------------

    def hs_norm_sq_cov(self, T: np.ndarray) -> np.ndarray:
        """Signature HS norm squared of a covariant 2-tensor value."""
        return np.einsum("...ik,...jl,...ij,...kl->...",
                         self.ginv_val, self.ginv_val, T, T)

    def hs_norm_sq_mixed(self, A: np.ndarray) -> np.ndarray:
        """Signature HS norm squared of a mixed tensor A^i_j."""
        return np.einsum("...ik,...jl,...ij,...kl->...",
                         self.gval, self.ginv_val, A, A)

    def majorant_metric(self) -> np.ndarray:
        """Positive-definite |g| used for diagnostic (Riemannian) norms."""
        w, v = np.linalg.eigh(self.gval)
        return np.einsum("...ik,...k,...jk->...ij", v, np.abs(w), v)

    def majorant_norm_cov(self, T: np.ndarray) -> np.ndarray:
        gp = np.linalg.inv(self.majorant_metric())
        return np.sqrt(np.einsum("...ik,...jl,...ij,...kl->...", gp, gp, T, T))

    def majorant_norm_mixed(self, A: np.ndarray) -> np.ndarray:
        gp = self.majorant_metric()
        gpinv = np.linalg.inv(gp)
        return np.sqrt(np.einsum("...ik,...jl,...ij,...kl->...", gp, gpinv, A, A))

    # -- first-order operators (jet-valued) ---------------------------------

    def grad_jets(self, f: Jet):
        df = [f.derivative(j) for j in range(self.n)]
        return [sum_jets(self.ginv[i][j] * df[j] for j in range(self.n))
                for i in range(self.n)]

    def hessian_jets(self, f: Jet):
        n = self.n
        gamma = self.christoffel_jets
        df = [f.derivative(k) for k in range(n)]
        H = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                acc = df[i].derivative(j)
                for k in range(n):
                    acc = acc - gamma[k][i][j] * df[k]
                H[i][j] = acc
                H[j][i] = acc
        return H

    def laplacian_jet(self, f: Jet):
        H = self.hessian_jets(f)
        return sum_jets(self.ginv[i][j] * H[i][j]
                        for i in range(self.n) for j in range(self.n))

    def divergence_jet(self, zeta):
        n = self.n
        gamma = self.christoffel_jets
        acc = sum_jets(zeta[i].derivative(i) for i in range(n))
        for i in range(n):
            for k in range(n):
                acc = acc + gamma[i][i][k] * zeta[k]
        return acc

    def nabla_vector_jets(self, zeta):
        """D[i][j] = (nabla_j zeta)^i."""
        n = self.n
        gamma = self.christoffel_jets
        D = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(n):
                acc = zeta[i].derivative(j)
                for k in range(n):
                    acc = acc + gamma[i][j][k] * zeta[k]
                D[i][j] = acc
        return D

    def lie_metric_jets(self, zeta, tensor=None):
        """Lie derivative of a covariant 2-tensor (default: the metric)."""
        n = self.n
        T = self.g if tensor is None else tensor
        L = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                acc = sum_jets(zeta[k] * T[i][j].derivative(k) for k in range(n))
                for k in range(n):
                    acc = acc + T[k][j] * zeta[k].derivative(i) \
                              + T[i][k] * zeta[k].derivative(j)
                L[i][j] = acc
                L[j][i] = acc
        return L

    def div_sym2_jets(self, T):
        """(div T)_j for a symmetric covariant 2-tensor of jets."""
        n = self.n
        gamma = self.christoffel_jets
        out = []
        for j in range(n):
            acc = None
            for i in range(n):
                for k in range(n):
                    term = T[k][j].derivative(i)
                    for l in range(n):
                        term = term - gamma[l][i][k] * T[l][j] \
                                    - gamma[l][i][j] * T[k][l]
                    term = self.ginv[i][k] * term
                    acc = term if acc is None else acc + term
            out.append(acc)
        return out


def sum_jets(jets):
    acc = None
    for j in jets:
        acc = j if acc is None else acc + j
    return acc


def tensor2_values(T) -> np.ndarray:
    return _values(T)


def vector_values(v) -> np.ndarray:
    return _vector_values(v)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def christoffel(metric: MetricField, points) -> np.ndarray:
    geo = Geometry(metric, points, order=2)
    n = geo.n
    gamma = geo.christoffel_jets
    out = np.stack([np.stack([np.stack([gamma[k][i][j].value for j in range(n)], -1)
                              for i in range(n)], -2) for k in range(n)], -3)
    return _squeeze(out, geo._single)


def curvature(metric: MetricField, points, order: int = 2) -> CurvatureBundle:
    geo = Geometry(metric, points, order=order)
    n = geo.n
    gamma = geo.christoffel_jets
    gam = np.stack([np.stack([np.stack([gamma[k][i][j].value for j in range(n)], -1)
                              for i in range(n)], -2) for k in range(n)], -3)
    R = geo.riemann_jets
    riem = np.stack([np.stack([np.stack([np.stack([R[i][j][k][l].value
                    for l in range(n)], -1) for k in range(n)], -2)
                    for j in range(n)], -3) for i in range(n)], -4)
    ric = tensor2_values(geo.ricci_jets)
    q = tensor2_values(geo.ricci_operator_jets)
    r = geo.scalar_jet.value
    s = geo._single
    return CurvatureBundle(
        points=_squeeze(geo.points, s), christoffel=_squeeze(gam, s),
        riemann=_squeeze(riem, s), ricci=_squeeze(ric, s),
        ricci_operator=_squeeze(q, s), scalar=_squeeze(r, s))


def scalar_curvature(metric: MetricField, points) -> np.ndarray:
    geo = Geometry(metric, points, order=2)
    return _squeeze(geo.scalar_jet.value, geo._single)


def first_order_operators(metric: MetricField, f: ScalarField | None,
                          zeta: VectorField | None, points,
                          order: int = 3) -> dict:
    """grad/Hess/Laplacian of f and div/nabla norms of zeta at the points."""
    geo = Geometry(metric, points, order=order)
    s = geo._single
    out: dict[str, np.ndarray] = {}
    if f is not None:
        fj = f.jet(geo.points, order)
        grad = geo.grad_jets(fj)
        hess = geo.hessian_jets(fj)
        out["grad"] = _squeeze(vector_values(grad), s)
        out["hessian"] = _squeeze(tensor2_values(hess), s)
        out["laplacian"] = _squeeze(geo.laplacian_jet(fj).value, s)
        gval = np.einsum("...ij,...i,...j->...", geo.gval,
                         vector_values(grad), vector_values(grad))
        out["grad_norm_sq"] = _squeeze(gval, s)
    if zeta is not None:
        zj = zeta.component_jets(geo.points, order)
        D = geo.nabla_vector_jets(zj)
        Dv = tensor2_values(D)
        out["div"] = _squeeze(geo.divergence_jet(zj).value, s)
        out["nabla_zeta"] = _squeeze(Dv, s)
        out["nabla_zeta_norm_sq"] = _squeeze(geo.hs_norm_sq_mixed(Dv), s)
        acc = [sum_jets(zj[j] * D[i][j] for j in range(geo.n)) for i in range(geo.n)]
        out["nabla_zeta_zeta"] = _squeeze(vector_values(acc), s)
    return out


def lie_derivative_metric(metric: MetricField, zeta: VectorField, points) -> np.ndarray:
    if zeta.chart is not metric.chart and zeta.chart != metric.chart:
        raise ChartError("metric and vector field live on different charts")
    geo = Geometry(metric, points, order=1)
    zj = zeta.component_jets(geo.points, 1)
    return _squeeze(tensor2_values(geo.lie_metric_jets(zj)), geo._single)


def second_lie_derivative_metric(metric: MetricField, zeta: VectorField,
                                 points) -> np.ndarray:
    if zeta.chart is not metric.chart and zeta.chart != metric.chart:
        raise ChartError("metric and vector field live on different charts")
    geo = Geometry(metric, points, order=2)
    zj = zeta.component_jets(geo.points, 2)
    L1 = geo.lie_metric_jets(zj)
    L2 = geo.lie_metric_jets(zj, tensor=L1)
    return _squeeze(tensor2_values(L2), geo._single)


def identity_div_lie_residual(metric: MetricField, zeta: VectorField,
                              points) -> np.ndarray:
    """div(Lie_zeta g) - 2(d(div zeta) + Ric(., zeta)); identically ~0."""
    geo = Geometry(metric, points, order=3)
    n = geo.n
    zj = zeta.component_jets(geo.points, 3)
    L1 = geo.lie_metric_jets(zj)
    lhs = vector_values(geo.div_sym2_jets(L1))
    divz = geo.divergence_jet(zj)
    ddiv = np.stack([divz.derivative(j).value for j in range(n)], -1)
    ric = tensor2_values(geo.ricci_jets)
    zv = vector_values(zj)
    rhs = 2.0 * (ddiv + np.einsum("...jk,...k->...j", ric, zv))
    return _squeeze(lhs - rhs, geo._single)


def identity_trace_lie2_residual(metric: MetricField, zeta: VectorField,
                                 points) -> np.ndarray:
    """trace(Lie^2 g) - 2(|nabla z|^2 + div(nabla_z z) - Ric(z,z)); ~0."""
    geo = Geometry(metric, points, order=3)
    n = geo.n
    zj = zeta.component_jets(geo.points, 3)
    L1 = geo.lie_metric_jets(zj)
    L2 = geo.lie_metric_jets(zj, tensor=L1)
    trace = sum_jets(geo.ginv[i][j] * L2[i][j] for i in range(n) for j in range(n)).value
    D = geo.nabla_vector_jets(zj)
    nz = [sum_jets(zj[j] * D[i][j] for j in range(n)) for i in range(n)]
    div_nzz = geo.divergence_jet(nz).value
    norm = geo.hs_norm_sq_mixed(tensor2_values(D))
    ric = tensor2_values(geo.ricci_jets)
    zv = vector_values(zj)
    ric_zz = np.einsum("...ij,...i,...j->...", ric, zv, zv)
    return _squeeze(trace - 2.0 * (norm + div_nzz - ric_zz), geo._single)


def bochner_residual(metric: MetricField, f: ScalarField, points) -> np.ndarray:
    """Bochner identity residual for the gradient field of f; ~0."""
    geo = Geometry(metric, points, order=4)
    n = geo.n
    fj = f.jet(geo.points, 4)
    grad = geo.grad_jets(fj)
    grad_sq = sum_jets(geo.g[i][j] * grad[i] * grad[j]
                       for i in range(n) for j in range(n))
    lhs = 0.5 * geo.laplacian_jet(grad_sq).value
    D = geo.nabla_vector_jets(grad)
    norm = geo.hs_norm_sq_mixed(tensor2_values(D))
    lap = geo.laplacian_jet(fj)
    zeta_div = sum_jets(grad[i] * lap.derivative(i) for i in range(n)).value
    ric = tensor2_values(geo.ricci_jets)
    gv = vector_values(grad)
    ric_zz = np.einsum("...ij,...i,...j->...", ric, gv, gv)
    return _squeeze(lhs - (norm + zeta_div + ric_zz), geo._single)


def torus_integrate(metric: MetricField, integrand, resolution: int) -> float:
    """Quadrature of ``integrand * sqrt(|det g|)`` over one period box.

    ``integrand`` is a ScalarField or a callable mapping (m, n) points to
    values.  Uniform-grid quadrature is spectrally accurate for smooth
    periodic integrands.
    """
    chart = metric.chart
    if not chart.fully_periodic:
        raise ChartError(f"chart {chart.name!r} is not fully periodic")
    if resolution < 8:
        raise ValueError("resolution must be >= 8 per axis")
    pts = chart.grid(resolution)
    geo = Geometry(metric, pts, order=0)
    if isinstance(integrand, ScalarField):
        vals = integrand.jet(pts, 0).value
    else:
        vals = np.asarray(integrand(pts), dtype=float)
    dens = vals * np.sqrt(np.abs(np.linalg.det(geo.gval)))
    volume_box = float(np.prod([p for p in chart.periods]))
    return float(np.mean(dens) * volume_box)


# ---------------------------------------------------------------------------
# curvature from plain derivative arrays (shared with the grid engine)
# ---------------------------------------------------------------------------

def scalar_curvature_from_partials(g: np.ndarray, dg: np.ndarray,
                                   d2g: np.ndarray) -> np.ndarray:
    """Scalar curvature from derivative arrays.

    ``dg[..., k, i, j] = d_k g_ij`` and ``d2g[..., m, k, i, j] =
    d_m d_k g_ij``; the derivative provider (jets or grid stencils) is up
    to the caller.
    """
    n = g.shape[-1]
    batch = g.shape[:-2]
    ginv = np.linalg.inv(g)
    gamma = np.zeros(batch + (n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                acc = np.zeros(batch)
                for l in range(n):
                    acc += ginv[..., k, l] * (dg[..., i, j, l] + dg[..., j, i, l]
                                              - dg[..., l, i, j])
                gamma[..., k, i, j] = 0.5 * acc
    dginv = -np.einsum("...ka,...mab,...bl->...mkl", ginv, dg, ginv)
    dgamma = np.zeros(batch + (n, n, n, n))
    for m in range(n):
        for k in range(n):
            for i in range(n):
                for j in range(n):
                    acc = np.zeros(batch)
                    for l in range(n):
                        acc += dginv[..., m, k, l] * (dg[..., i, j, l]
                                                      + dg[..., j, i, l]
                                                      - dg[..., l, i, j])
                        acc += ginv[..., k, l] * (d2g[..., m, i, j, l]
                                                  + d2g[..., m, j, i, l]
                                                  - d2g[..., m, l, i, j])
                    dgamma[..., m, k, i, j] = 0.5 * acc
    ric = np.zeros(batch + (n, n))
    for s_ in range(n):
        for v_ in range(n):
            acc = np.zeros(batch)
            for m in range(n):
                acc += dgamma[..., m, m, v_, s_] - dgamma[..., v_, m, m, s_]
                for l in range(n):
                    acc += gamma[..., m, m, l] * gamma[..., l, v_, s_] \
                         - gamma[..., m, v_, l] * gamma[..., l, m, s_]
            ric[..., s_, v_] = acc
    return np.einsum("...ij,...ij->...", ginv, ric)
