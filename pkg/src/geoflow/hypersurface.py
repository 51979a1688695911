"""Hypersurfaces of flat ambient space with the position field split into
tangential and normal parts.

The immersion is given componentwise as expressions of the source chart;
all extrinsic data (unit normal, second fundamental form, shape operator)
are carried as jets, so first covariant derivatives of fields like
rho * A are exact rather than finite-differenced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chart import Chart, ChartError
from .exprjet import Expr, Jet, as_expr, evaluate_jet
from .soliton import FitResult, fit_from_arrays
from .tensor import Geometry, sum_jets, tensor2_values, _as_batch, _squeeze

RANK_TOL = 1e-10


class EmbeddingError(ValueError):
    pass


class RankDeficiencyError(ArithmeticError):
    pass


class NullNormalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Embedding:
    """Codimension-one immersion of a chart into flat (pseudo-)Euclidean
    space; ``ambient_signs`` are the diagonal entries of the ambient
    metric and ``orientation`` flips the default normal."""
    chart: Chart
    components: tuple[Expr, ...]
    ambient_signs: tuple[float, ...] = ()
    orientation: int = 1

    def __post_init__(self):
        n = self.chart.dim
        comps = tuple(self.chart.parse(c) if isinstance(c, str) else as_expr(c)
                      for c in self.components)
        if len(comps) != n + 1:
            raise EmbeddingError("a hypersurface immersion needs dim+1 components")
        signs = self.ambient_signs or (1.0,) * (n + 1)
        if len(signs) != n + 1 or any(s not in (1.0, -1.0, 1, -1) for s in signs):
            raise EmbeddingError("ambient_signs must be dim+1 entries of +-1")
        if self.orientation not in (1, -1):
            raise EmbeddingError("orientation must be +1 or -1")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "ambient_signs", tuple(float(s) for s in signs))

    @property
    def riemannian_ambient(self) -> bool:
        return all(s > 0 for s in self.ambient_signs)


@dataclass
class ShapeData:
    points: np.ndarray
    induced_metric: np.ndarray    # g_ij
    normal: np.ndarray            # ambient components of the unit normal
    second_form: np.ndarray       # h_ij with h(X,Y) = h_ij X^i Y^j N
    shape_operator: np.ndarray    # A^i_j
    zeta_top: np.ndarray          # tangential part of the position field
    rho: np.ndarray               # normal coefficient, zeta^perp = rho N


@dataclass
class MetallicFit:
    a: float
    b: float
    residual: float
    rank: str                          # "full" | "deficient"
    line: tuple[float, float, float] | None = None  # la*a + lb*b = lc


class _JetMetric:
    """Adapter presenting precomputed induced-metric jets to Geometry."""

    def __init__(self, chart, jets, signature):
        self.chart = chart
        self.signature = signature
        self._jets = jets

    def component_jets(self, points, order):
        return self._jets


def _det_jet(mat):
    m = len(mat)
    if m == 1:
        return mat[0][0]
    out = None
    for j in range(m):
        minor = [[mat[i][k] for k in range(m) if k != j] for i in range(1, m)]
        term = mat[0][j] * _det_jet(minor)
        if j % 2:
            term = -term
        out = term if out is None else out + term
    return out


class _HyperGeometry:
    """All jet-level extrinsic data of one embedding at a point batch."""

    def __init__(self, emb: Embedding, points, order: int = 4):
        pts, self.single = _as_batch(np.atleast_2d(points))
        if pts.shape[-1] != emb.chart.dim:
            raise ChartError("point dimension does not match source chart")
        self.emb = emb
        self.points = pts
        n = self.n = emb.chart.dim
        signs = emb.ambient_signs
        self.X = [evaluate_jet(c, pts, order) for c in emb.components]
        # tangent frame E[i][A] = d_i X^A
        self.E = [[self.X[A].derivative(i) for A in range(n + 1)] for i in range(n)]
        self._check_rank()
        gjets = [[sum_jets(signs[A] * self.E[i][A] * self.E[j][A]
                           for A in range(n + 1)) for j in range(n)]
                 for i in range(n)]
        neg = sum(1 for s in signs if s < 0)
        induced_signature = neg if neg == 0 else self._count_negative(gjets)
        self.geo = Geometry(_JetMetric(emb.chart, gjets, induced_signature),
                            pts, order=order - 1)
        self._build_normal(signs)
        self._build_shape(signs)

    def _check_rank(self):
        dX = np.stack([np.stack([e.value for e in row], -1) for row in self.E], -2)
        sv = np.linalg.svd(dX, compute_uv=False)
        bad = sv[..., -1] < RANK_TOL * (1.0 + sv[..., 0])
        if np.any(bad):
            raise RankDeficiencyError(
                f"immersion differential rank-deficient at "
                f"{int(np.sum(bad))} point(s)")

    @staticmethod
    def _count_negative(gjets):
        gval = np.stack([np.stack([c.value for c in row], -1) for row in gjets], -2)
        neg = np.sum(np.linalg.eigvalsh(gval) < 0, axis=-1)
        counts = np.unique(neg)
        if len(counts) != 1:
            raise EmbeddingError("induced metric changes signature over the batch")
        return int(counts[0])

    def _build_normal(self, signs):
        n = self.n
        # covector annihilating the tangent frame, by cofactor expansion
        cof = []
        for A in range(n + 1):
            minor = [[self.E[i][B] for B in range(n + 1) if B != A]
                     for i in range(n)]
            d = _det_jet(minor)
            cof.append(d if A % 2 == 0 else -d)
        raw = [signs[A] * cof[A] for A in range(n + 1)]     # raised index
        norm2 = sum_jets(signs[A] * raw[A] * raw[A] for A in range(n + 1))
        mag = np.abs(norm2.value)
        if np.any(mag < RANK_TOL):
            raise NullNormalError("normal direction has vanishing squared length")
        if np.any(norm2.value < 0):
            raise NullNormalError("normal direction is timelike on this batch "
                                  "(only spacelike normals are supported)")
        inv_len = norm2.sqrt().reciprocal()
        # deterministic sign: last ambient component positive where it is
        # nonzero, walking backwards otherwise; then the declared orientation
        vals = np.stack([c.value for c in raw], -1)
        sign = np.zeros(vals.shape[:-1])
        for A in range(n, -1, -1):
            comp = vals[..., A]
            sign = np.where(sign == 0.0, np.sign(np.where(
                np.abs(comp) > 1e-12, comp, 0.0)), sign)
        sign = np.where(sign == 0.0, 1.0, sign) * self.emb.orientation
        sj = Jet.constant(raw[0].space, sign, sign.shape)
        self.N = [c * inv_len * sj for c in raw]            # unit, raised
        self.sign = sign

    def _build_shape(self, signs):
        n = self.n
        ginv = self.geo.ginv
        self.h = [[sum_jets(signs[A] * self.X[A].derivative(i).derivative(j)
                            * self.N[A] for A in range(n + 1))
                   for j in range(n)] for i in range(n)]
        self.A = [[sum_jets(ginv[i][k] * self.h[k][j] for k in range(n))
                   for j in range(n)] for i in range(n)]
        # position field split: zeta = dX(zeta_top) + rho N
        pos_low = [sum_jets(signs[A] * self.X[A] * self.E[j][A]
                            for A in range(n + 1)) for j in range(n)]
        self.zeta_top = [sum_jets(ginv[i][j] * pos_low[j] for j in range(n))
                         for i in range(n)]
        self.rho = sum_jets(signs[A] * self.X[A] * self.N[A]
                            for A in range(n + 1))

    def rho_A_jets(self):
        n = self.n
        return [[self.rho * self.A[i][j] for j in range(n)] for i in range(n)]

    def values(self, mat):
        return np.stack([np.stack([c.value for c in row], -1) for row in mat], -2)


def induced_geometry(emb: Embedding, points) -> ShapeData:
    hg = _HyperGeometry(emb, points)
    out = ShapeData(
        points=hg.points,
        induced_metric=hg.geo.gval,
        normal=np.stack([c.value for c in hg.N], -1),
        second_form=hg.values(hg.h),
        shape_operator=hg.values(hg.A),
        zeta_top=np.stack([c.value for c in hg.zeta_top], -1),
        rho=hg.rho.value,
    )
    if hg.single:
        for name in ("points", "induced_metric", "normal", "second_form",
                     "shape_operator", "zeta_top", "rho"):
            setattr(out, name, getattr(out, name)[0])
    return out


def concurrent_decomposition(emb: Embedding, points):
    """Tangential components and normal coefficient of the position field."""
    hg = _HyperGeometry(emb, points)
    zt = np.stack([c.value for c in hg.zeta_top], -1)
    rho = hg.rho.value
    if hg.single:
        return zt[0], float(rho[0])
    return zt, rho


def section3_formula_residuals(emb: Embedding, points) -> dict:
    """Sup-norms of the three concurrent-field identities: the tangential
    gradient identity, and the first and second Lie derivatives of the
    induced metric expressed through rho and the shape operator."""
    if not emb.riemannian_ambient:
        raise EmbeddingError("the concurrent-field identities assume a "
                             "Riemannian ambient metric")
    hg = _HyperGeometry(emb, points)
    geo, n = hg.geo, hg.n
    zt = hg.zeta_top
    D = tensor2_values(geo.nabla_vector_jets(zt))       # (nabla_j z)^i
    Aval = hg.values(hg.A)
    rho = hg.rho.value[..., None, None]
    eye = np.eye(n)
    res1 = D - eye - rho * Aval

    l1 = geo.lie_metric_jets(zt)
    hval = hg.values(hg.h)
    res2 = tensor2_values(l1) - 2.0 * (geo.gval + hg.rho.value[..., None, None] * hval)

    L2 = tensor2_values(geo.lie_metric_jets(zt, tensor=l1))
    rhoA = hg.rho_A_jets()
    # covariant derivative of rho*A along zeta_top, then lowered
    Gam = [[[geo.christoffel_jets[k][i][j] for j in range(n)] for i in range(n)]
           for k in range(n)]
    nab = [[[None] * n for _ in range(n)] for _ in range(n)]  # [k][i][j]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                term = rhoA[i][j].derivative(k)
                term = term + sum_jets(Gam[i][k][a] * rhoA[a][j] for a in range(n))
                term = term - sum_jets(Gam[a][k][j] * rhoA[i][a] for a in range(n))
                nab[k][i][j] = term
    dz = [[sum_jets(zt[k] * nab[k][i][j] for k in range(n)) for j in range(n)]
          for i in range(n)]
    dz_low = np.einsum("...il,...lj->...ij", geo.gval, hg.values(dz))
    A_low = np.einsum("...il,...lj->...ij", geo.gval, Aval)
    A2_low = np.einsum("...il,...lm,...mj->...ij", geo.gval, Aval, Aval)
    rho1 = hg.rho.value[..., None, None]
    target = 2.0 * (2.0 * geo.gval + 4.0 * rho1 * A_low
                    + 2.0 * rho1 ** 2 * A2_low
                    + 0.5 * (dz_low + np.swapaxes(dz_low, -1, -2)))
    res3 = L2 - target

    def sup(x):
        return np.max(np.abs(x), axis=(-2, -1))

    out = {"gradient": sup(res1), "first_lie": sup(res2), "second_lie": sup(res3)}
    if hg.single:
        out = {k: float(v[0]) for k, v in out.items()}
    return out


def metallic_fit(emb: Embedding, samples) -> MetallicFit:
    """Least-squares (a, b) with A^2 = a A + b I over the samples."""
    hg = _HyperGeometry(emb, np.atleast_2d(samples))
    if len(hg.points) < 2:
        raise EmbeddingError("need at least 2 samples for the metallic fit")
    n = hg.n
    Aval = hg.values(hg.A)
    A2 = np.einsum("...ik,...kj->...ij", Aval, Aval)
    eye = np.broadcast_to(np.eye(n), Aval.shape)
    colA = Aval.reshape(-1)
    colI = eye.reshape(-1)
    rhs = A2.reshape(-1)
    M = np.stack([colA, colI], axis=-1)
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    deficient = s[-1] < RANK_TOL * max(s[0], 1e-300)
    if deficient:
        keep = s > RANK_TOL * max(s[0], 1e-300)
        inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
        x = vt.T @ (inv * (u.T @ rhs))
        null = vt[-1]
        la, lb = null[1], -null[0]
        line = (float(la), float(lb), float(la * x[0] + lb * x[1]))
    else:
        x = vt.T @ ((u.T @ rhs) / s)
        line = None
    a, b = float(x[0]), float(x[1])
    res = float(np.max(np.abs(A2 - a * Aval - b * eye)))
    return MetallicFit(a=a, b=b, residual=res,
                       rank="deficient" if deficient else "full", line=line)


def metallic_theorem_coefficients(lam: float, mu: float, r: float):
    """Quadratic coefficients forced on the shape operator of a soliton
    hypersurface with the tangential concurrent field as potential."""
    return (-(lam + 4.0) / 2.0, -(2.0 * lam - mu + r + 4.0) / 4.0)


def concurrent_norms(emb: Embedding, points) -> dict:
    """Closed forms (through rho A) and direct tensor-calculus values of
    |Lie_{z}g|^2, |nabla z|^2 and (div z)^2 for the tangential field."""
    if not emb.riemannian_ambient:
        raise EmbeddingError("closed forms assume a Riemannian ambient metric")
    hg = _HyperGeometry(emb, points)
    geo, n = hg.geo, hg.n
    P = hg.rho.value[..., None, None] * hg.values(hg.A)
    trP = np.trace(P, axis1=-2, axis2=-1)
    P2 = np.einsum("...ik,...ki->...", P, P)
    closed = {
        "lie_sq": 4.0 * (P2 + 2.0 * trP + n),
        "nabla_sq": P2 + 2.0 * trP + n,
        "div_sq": (trP + n) ** 2,
    }
    zt = hg.zeta_top
    l1 = geo.lie_metric_jets(zt)
    direct = {
        "lie_sq": geo.hs_norm_sq_cov(tensor2_values(l1)),
        "nabla_sq": geo.hs_norm_sq_mixed(tensor2_values(geo.nabla_vector_jets(zt))),
        "div_sq": geo.divergence_jet(zt).value ** 2,
    }
    if hg.single:
        closed = {k: float(v[0]) for k, v in closed.items()}
        direct = {k: float(v[0]) for k, v in direct.items()}
    return {"closed": closed, "direct": direct}


def induced_soliton_fit(emb: Embedding, samples) -> FitResult:
    """Soliton-constant fit for the induced metric with the tangential
    concurrent field as potential."""
    hg = _HyperGeometry(emb, np.atleast_2d(samples))
    geo = hg.geo
    l1 = geo.lie_metric_jets(hg.zeta_top)
    L2 = geo.lie_metric_jets(hg.zeta_top, tensor=l1)
    return fit_from_arrays(tensor2_values(l1), tensor2_values(L2),
                           geo.gval, geo.scalar_jet.value)


def gauss_scalar_residual(emb: Embedding, points) -> np.ndarray:
    """Intrinsic scalar curvature minus (tr A)^2 - |A|^2; zero in flat
    ambient space, which pins down the sign conventions of h and A."""
    hg = _HyperGeometry(emb, points)
    Aval = hg.values(hg.A)
    trA = np.trace(Aval, axis1=-2, axis2=-1)
    A2 = np.einsum("...ik,...ki->...", Aval, Aval)
    res = hg.geo.scalar_jet.value - (trA ** 2 - A2)
    return _squeeze(res, hg.single)


def umbilical_soliton_relation(emb: Embedding, samples, tol: float = 1e-8) -> dict:
    """On a zeta-top-umbilical hypersurface (rho A = f I), the fitted
    soliton constants must satisfy
    4 f^2 + 2(lam+4) f + 2 zeta_top(f) + 2 lam - mu + r + 4 = 0."""
    hg = _HyperGeometry(emb, np.atleast_2d(samples))
    geo, n = hg.geo, hg.n
    rhoA = hg.rho_A_jets()
    f = sum_jets(rhoA[i][i] for i in range(n)) * (1.0 / n)
    P = hg.rho.value[..., None, None] * hg.values(hg.A)
    defect = float(np.max(np.abs(P - f.value[..., None, None] * np.eye(n))))
    if defect > tol * (1.0 + float(np.max(np.abs(P)))):
        raise EmbeddingError(
            f"hypersurface is not umbilical for the normal part of the "
            f"position field (defect {defect:.3e})")
    fit = induced_soliton_fit(emb, hg.points)
    zf = sum_jets(hg.zeta_top[k] * f.derivative(k) for k in range(n)).value
    r = geo.scalar_jet.value
    fv = f.value
    rel = (4.0 * fv ** 2 + 2.0 * (fit.lam + 4.0) * fv + 2.0 * zf
           + 2.0 * fit.lam - fit.mu + r + 4.0)
    return {"fit": fit, "umbilic_factor": _squeeze(fv, hg.single),
            "residual": _squeeze(rel, hg.single), "defect": defect}
