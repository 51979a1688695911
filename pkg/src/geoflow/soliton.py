"""The hyperbolic Yamabe soliton equation as a measurable residual.

The soliton equation  Lie_z Lie_z g + lambda Lie_z g = (mu - r) g  is
linear in (lambda, mu), so constants are fitted by least squares over
sample points; the degenerate case (Lie_z g proportional to g) is
detected and reported as a minimizer line instead of being inverted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chart import MetricField, VectorField
from .tensor import (Geometry, sum_jets, tensor2_values, torus_integrate,
                     vector_values, _as_batch, _squeeze)

RANK_TOL = 1e-10
VERDICT_TOL = 1e-6


@dataclass(frozen=True)
class SolitonConstants:
    lam: float
    mu: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and np.isfinite(self.mu)):
            raise ValueError("soliton constants must be finite")


@dataclass
class FitResult:
    lam: float
    mu: float
    residual: float          # sup-norm of the equation residual at the fit
    rank: str                # "full" | "deficient"
    # all minimizers satisfy line_a * lambda + line_b * mu = line_c
    line: tuple[float, float, float] | None = None

    def constraint_satisfied(self, lam: float, mu: float, tol: float = 1e-7) -> bool:
        if self.line is None:
            return abs(lam - self.lam) < tol and abs(mu - self.mu) < tol
        a, b, c = self.line
        return abs(a * lam + b * mu - c) < tol * (1.0 + abs(c))


@dataclass
class SolitonReport:
    verdict: str             # "soliton" | "not_soliton"
    fit: FitResult
    killing_defect: float
    two_killing_defect: float
    parallel_defect: float


class PreconditionError(ArithmeticError):
    """A proposition's hypothesis fails at the sample point; carries the
    measured defect."""

    def __init__(self, message: str, defect: float):
        super().__init__(f"{message} (measured defect {defect:.3e})")
        self.defect = defect


def _lie_pair(geo: Geometry, zeta: VectorField):
    zj = zeta.component_jets(geo.points, geo.order)
    L1 = geo.lie_metric_jets(zj)
    L2 = geo.lie_metric_jets(zj, tensor=L1)
    return zj, L1, L2


def soliton_residual(metric: MetricField, zeta: VectorField,
                     constants: SolitonConstants, points) -> np.ndarray:
    """Lie^2 g + lambda Lie g - (mu - r) g, evaluated at the points."""
    geo = Geometry(metric, points, order=2)
    _, L1, L2 = _lie_pair(geo, zeta)
    r = geo.scalar_jet.value
    res = (tensor2_values(L2) + constants.lam * tensor2_values(L1)
           - (constants.mu - r)[..., None, None] * geo.gval)
    return _squeeze(res, geo._single)


def fit_from_arrays(L1v: np.ndarray, L2v: np.ndarray, gval: np.ndarray,
                    r: np.ndarray) -> FitResult:
    """Least-squares (lambda, mu) from evaluated Lie derivatives; shared by
    the chart-field path and the hypersurface (jet-valued) path."""
    n = gval.shape[-1]
    iu, ju = np.triu_indices(n)
    col_lam = L1v[..., iu, ju].ravel()
    col_mu = -gval[..., iu, ju].ravel()
    rhs = (-L2v - r[..., None, None] * gval)[..., iu, ju].ravel()
    A = np.stack([col_lam, col_mu], axis=-1)

    u, s, vt = np.linalg.svd(A, full_matrices=False)
    deficient = s[-1] < RANK_TOL * max(s[0], 1e-300)
    if deficient:
        keep = s > RANK_TOL * max(s[0], 1e-300)
        inv = np.divide(1.0, s, out=np.zeros_like(s), where=keep)
        x = vt.T @ (inv * (u.T @ rhs))
        null = vt[-1]
        # line through x with direction null: n2*lam - n1*mu = const
        a, b = null[1], -null[0]
        line = (float(a), float(b), float(a * x[0] + b * x[1]))
    else:
        x = vt.T @ ((u.T @ rhs) / s)
        line = None
    lam, mu = float(x[0]), float(x[1])
    res = L2v + lam * L1v - (mu - r)[..., None, None] * gval
    return FitResult(lam=lam, mu=mu,
                     residual=float(np.max(np.abs(res))),
                     rank="deficient" if deficient else "full",
                     line=line)


def fit_soliton_constants(metric: MetricField, zeta: VectorField,
                          samples) -> FitResult:
    """Least-squares (lambda, mu) over all independent residual components."""
    samples, _ = _as_batch(np.atleast_2d(samples))
    if len(samples) < 2:
        raise ValueError("need at least 2 samples to fit soliton constants")
    geo = Geometry(metric, samples, order=2)
    _, L1, L2 = _lie_pair(geo, zeta)
    return fit_from_arrays(tensor2_values(L1), tensor2_values(L2),
                           geo.gval, geo.scalar_jet.value)


def killing_defects(metric: MetricField, zeta: VectorField, samples) -> dict:
    """Sup (Riemannian-majorant) norms of Lie g, Lie^2 g and nabla zeta."""
    samples, _ = _as_batch(np.atleast_2d(samples))
    geo = Geometry(metric, samples, order=2)
    zj, L1, L2 = _lie_pair(geo, zeta)
    D = geo.nabla_vector_jets(zj)
    return {
        "killing_defect": float(np.max(geo.majorant_norm_cov(tensor2_values(L1)))),
        "two_killing_defect": float(np.max(geo.majorant_norm_cov(tensor2_values(L2)))),
        "parallel_defect": float(np.max(geo.majorant_norm_mixed(tensor2_values(D)))),
    }


def soliton_report(metric: MetricField, zeta: VectorField, samples) -> SolitonReport:
    fit = fit_soliton_constants(metric, zeta, samples)
    geo = Geometry(metric, np.atleast_2d(samples), order=0)
    scale = 1.0 + float(np.max(np.abs(geo.gval)))
    defects = killing_defects(metric, zeta, samples)
    verdict = "soliton" if fit.residual < VERDICT_TOL * scale else "not_soliton"
    return SolitonReport(verdict=verdict, fit=fit,
                         killing_defect=defects["killing_defect"],
                         two_killing_defect=defects["two_killing_defect"],
                         parallel_defect=defects["parallel_defect"])


def hilbert_schmidt_identity_residual(metric: MetricField, zeta: VectorField,
                                      constants: SolitonConstants, points,
                                      tol: float = 1e-6) -> np.ndarray:
    """|Lie^2 g|^2 - n (mu - r)^2 - lambda^2 |Lie g|^2 under the
    divergence-free soliton preconditions (checked)."""
    geo = Geometry(metric, points, order=2)
    zj, L1, L2 = _lie_pair(geo, zeta)
    scale = 1.0 + float(np.max(np.abs(geo.gval)))
    res = soliton_residual(metric, zeta, constants, geo.points)
    sup = float(np.max(np.abs(res)))
    if sup > tol * scale:
        raise PreconditionError("soliton-equation precondition violated", sup)
    div = geo.divergence_jet(zj).value
    div_sup = float(np.max(np.abs(div)))
    if div_sup > tol:
        raise PreconditionError("divergence-free precondition violated", div_sup)
    r = geo.scalar_jet.value
    out = (geo.hs_norm_sq_cov(tensor2_values(L2))
           - geo.n * (constants.mu - r) ** 2
           - constants.lam ** 2 * geo.hs_norm_sq_cov(tensor2_values(L1)))
    return _squeeze(out, geo._single)


def gradient_relation_residual(metric: MetricField, zeta: VectorField,
                               lam: float, points) -> dict:
    """Covector nabla r + 2 lambda (nabla(div zeta) + Q zeta), together
    with the divergence of Lie^2 g whose smallness the relation assumes."""
    geo = Geometry(metric, points, order=4)
    n = geo.n
    zj, L1, L2 = _lie_pair(geo, zeta)
    rjet = geo.scalar_jet
    dr = np.stack([rjet.derivative(j).value for j in range(n)], -1)
    divz = geo.divergence_jet(zj)
    ddiv = np.stack([divz.derivative(j).value for j in range(n)], -1)
    ric = tensor2_values(geo.ricci_jets)
    qz_low = np.einsum("...jk,...k->...j", ric, vector_values(zj))
    residual = dr + 2.0 * lam * (ddiv + qz_low)
    div_l2 = vector_values(geo.div_sym2_jets(L2))
    s = geo._single
    return {"residual": _squeeze(residual, s),
            "div_lie2": _squeeze(div_l2, s)}


def zeta_ric_fit(metric: MetricField, zeta: VectorField, samples) -> dict:
    """Least-squares a with nabla zeta ~ a Q (mixed tensors)."""
    samples, _ = _as_batch(np.atleast_2d(samples))
    geo = Geometry(metric, samples, order=2)
    zj = zeta.component_jets(geo.points, 2)
    D = tensor2_values(geo.nabla_vector_jets(zj))
    Q = tensor2_values(geo.ricci_operator_jets)
    qq = float(np.sum(Q * Q))
    if qq < 1e-14 * (1.0 + float(np.sum(D * D))):
        defect = float(np.max(geo.majorant_norm_mixed(D)))
        return {"a": None, "defect": defect,
                "note": "Ricci operator vanishes at all samples; a undefined"}
    a = float(np.sum(D * Q) / qq)
    defect = float(np.max(geo.majorant_norm_mixed(D - a * Q)))
    return {"a": a, "defect": defect, "note": None}


def trace_lie_ricci(metric: MetricField, zeta: VectorField, points) -> np.ndarray:
    """trace_g of the Lie derivative of the Ricci tensor (reported
    numerically alongside the zeta(Ric) fit)."""
    geo = Geometry(metric, points, order=4)
    n = geo.n
    zj = zeta.component_jets(geo.points, 4)
    lie_ric = geo.lie_metric_jets(zj, tensor=geo.ricci_jets)
    tr = sum_jets(geo.ginv[i][j] * lie_ric[i][j]
                  for i in range(n) for j in range(n)).value
    return _squeeze(tr, geo._single)


def yano_torus_check(metric: MetricField, zeta: VectorField,
                     resolution: int = 64) -> float:
    """Quadrature of Ric(z,z) + |Lie g|^2/2 - |nabla z|^2 - (div z)^2
    over a fully periodic chart; ~0 for any smooth periodic field."""

    def integrand(pts):
        geo = Geometry(metric, pts, order=2)
        zj = zeta.component_jets(pts, 2)
        L1 = geo.lie_metric_jets(zj)
        D = geo.nabla_vector_jets(zj)
        ric = tensor2_values(geo.ricci_jets)
        zv = vector_values(zj)
        ric_zz = np.einsum("...ij,...i,...j->...", ric, zv, zv)
        return (ric_zz + 0.5 * geo.hs_norm_sq_cov(tensor2_values(L1))
                - geo.hs_norm_sq_mixed(tensor2_values(D))
                - geo.divergence_jet(zj).value ** 2)

    return torus_integrate(metric, integrand, resolution)
