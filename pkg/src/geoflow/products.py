"""Warped-product-type metrics and their factor-soliton conditions.

Four construction kinds share one block structure: the product metric is
block diagonal with block i scaled by the square of a warping function.
The closed-form Lie-derivative blocks below follow from that structure
alone (directional derivatives of the warping squares along the full
lifted field), so they agree with brute-force computation on the product
chart for every kind, twisted warpings included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chart import Chart, ChartError, MetricField
from .exprjet import Expr, as_expr, evaluate_jet, remap_coords, shift_coords
from .tensor import Geometry, tensor2_values, _as_batch, _squeeze

KINDS = ("warped", "doubly_warped", "multiply_warped", "multiply_twisted")
CONSTANCY_TOL = 1e-7
STAR_TOL = 1e-10


class ProductError(ValueError):
    pass


class ConditionStarError(ArithmeticError):
    """The proportionality denominator degenerates at a sample point."""


@dataclass(frozen=True)
class Factor:
    chart: Chart
    metric: MetricField

    def __post_init__(self):
        if self.metric.chart is not self.chart:
            raise ProductError("factor metric must live on the factor chart")


@dataclass(frozen=True)
class ProductSpec:
    kind: str
    factors: tuple[Factor, ...]
    # warped: (f,); doubly_warped: (f1, f2); multiply_*: (f_2, ..., f_m).
    # Strings are parsed on the assembled product chart.
    warpings: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ProductError(f"unknown product kind {self.kind!r}")
        m = len(self.factors)
        if m < 2:
            raise ProductError("a product needs at least 2 factors")
        expected = {"warped": 1, "doubly_warped": 2}.get(self.kind, m - 1)
        if len(self.warpings) != expected:
            raise ProductError(
                f"kind {self.kind!r} with {m} factors needs {expected} "
                f"warping function(s), got {len(self.warpings)}")
        if self.kind in ("warped", "doubly_warped") and m != 2:
            raise ProductError(f"kind {self.kind!r} takes exactly 2 factors")


@dataclass
class FactorConditionReport:
    factor: int
    quantities: dict          # name -> sampled array
    spreads: dict             # name -> max - min
    verdicts: dict            # name -> "constant" | "varies"
    all_constant: bool


class ProductSpace:
    """Assembled product chart and metric plus per-block warping data."""

    def __init__(self, spec: ProductSpec):
        self.spec = spec
        self.kind = spec.kind
        factors = spec.factors
        coords, box, periods, offsets = [], [], [], []
        pos = 0
        for fac in factors:
            ch = fac.chart
            offsets.append(pos)
            for c in ch.coords:
                if c in coords:
                    raise ProductError(
                        f"coordinate name {c!r} appears in two factors; "
                        "rename factor coordinates to be unique")
            coords += list(ch.coords)
            box += list(ch.box)
            periods += list(ch.periods)
            pos += ch.dim
        self.offsets = tuple(offsets)
        self.dims = tuple(f.chart.dim for f in factors)
        self.chart = Chart("x".join(f.chart.name for f in factors), pos,
                           tuple(coords), tuple(box), tuple(periods))
        self.scales = self._resolve_warpings()
        self._check_positivity()
        self.metric = self._assemble_metric()

    # block i of the metric is scales[i]^2 * g_i (None means scale 1)
    def _resolve_warpings(self):
        spec = self.spec
        raw = [None] * len(spec.factors)
        if spec.kind == "warped":
            raw[1] = spec.warpings[0]
        elif spec.kind == "doubly_warped":
            raw[0] = spec.warpings[1]   # f2 scales g1
            raw[1] = spec.warpings[0]   # f1 scales g2
        else:
            for i, w in enumerate(spec.warpings):
                raw[i + 1] = w
        scales = []
        for i, w in enumerate(raw):
            if w is None:
                scales.append(None)
                continue
            e = self.chart.parse(w) if isinstance(w, str) else as_expr(w)
            self._check_dependencies(i, e)
            scales.append(e)
        return scales

    def _allowed_coords(self, block: int) -> set[int]:
        spec = self.spec
        rng = lambda k: set(range(self.offsets[k], self.offsets[k] + self.dims[k]))
        if spec.kind == "doubly_warped":
            # the function scaling block i lives on the other factor
            return rng(1 - block)
        if spec.kind == "multiply_twisted":
            return rng(0) | rng(block)
        return rng(0)

    def _check_dependencies(self, block: int, e: Expr):
        used = e.coords_used()
        allowed = self._allowed_coords(block)
        if not used <= allowed:
            bad = sorted(self.chart.coords[k] for k in used - allowed)
            raise ProductError(
                f"warping for block {block} of a {self.spec.kind!r} product "
                f"may not depend on coordinate(s) {', '.join(bad)}")

    def _check_positivity(self, count: int = 64):
        pts = self.chart.sample(count, seed=0)
        for i, s in enumerate(self.scales):
            if s is None:
                continue
            vals = evaluate_jet(s, pts, 0).value
            if np.any(vals <= 0.0):
                raise ProductError(
                    f"warping for block {i} is not positive on the sampling box "
                    f"(min {float(np.min(vals)):.3e})")

    def _assemble_metric(self) -> MetricField:
        n = self.chart.dim
        zero = as_expr(0.0)
        rows = [[zero] * n for _ in range(n)]
        signature = 0
        for k, fac in enumerate(self.spec.factors):
            off, d = self.offsets[k], self.dims[k]
            signature += fac.metric.signature
            scale2 = None if self.scales[k] is None else self.scales[k] * self.scales[k]
            for i in range(d):
                for j in range(d):
                    comp = shift_coords(fac.metric.components[i][j], off)
                    if scale2 is not None:
                        comp = scale2 * comp
                    rows[off + i][off + j] = comp
        return MetricField(self.chart, tuple(tuple(r) for r in rows), signature)

    # -- lifted fields ------------------------------------------------------

    def lifted_zeta_exprs(self, zetas) -> list[Expr]:
        """Components of sum of factor-lifted fields on the product chart."""
        zetas = self._normalize_zetas(zetas)
        comps = []
        for k, z in enumerate(zetas):
            off = self.offsets[k]
            if z is None:
                comps += [as_expr(0.0)] * self.dims[k]
            else:
                comps += [shift_coords(c, off) for c in z.components]
        return comps

    def _normalize_zetas(self, zetas):
        zetas = list(zetas)
        if len(zetas) != len(self.spec.factors):
            raise ProductError("one (possibly None) field per factor required")
        for k, z in enumerate(zetas):
            if z is not None and z.chart is not self.spec.factors[k].chart:
                raise ProductError(
                    f"field for factor {k} must live on that factor's chart")
        return zetas

    def block_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k] + self.dims[k])


def build_product(spec: ProductSpec) -> ProductSpace:
    return ProductSpace(spec)


def _directional(jet, zjets):
    out = None
    for a, zc in enumerate(zjets):
        term = zc * jet.derivative(a)
        out = term if out is None else out + term
    return out


def _scale_data(space: ProductSpace, zetas, pts, k: int):
    """(f_k^2, zeta(f_k^2), zeta(zeta(f_k^2))) values at product points."""
    s = space.scales[k]
    if s is None:
        one = np.ones(pts.shape[:-1])
        zero = np.zeros_like(one)
        return one, zero, zero
    F = evaluate_jet(s * s, pts, 2)
    zjets = [evaluate_jet(c, pts, 2) for c in space.lifted_zeta_exprs(zetas)]
    zF = _directional(F, zjets)
    zzF = _directional(zF, zjets)
    return F.value, zF.value, zzF.value


def lie_expansion_blocks(space: ProductSpace, zetas, points) -> dict:
    """Closed-form per-factor blocks of Lie_z gbar and Lie_z Lie_z gbar."""
    pts, single = _as_batch(np.atleast_2d(points))
    if pts.shape[-1] != space.chart.dim:
        raise ChartError("point dimension does not match product chart")
    zetas = space._normalize_zetas(zetas)
    first, second = [], []
    for k, fac in enumerate(space.spec.factors):
        sub = pts[..., space.block_slice(k)]
        geo = Geometry(fac.metric, sub, order=2)
        if zetas[k] is None:
            L1 = L2 = np.zeros_like(geo.gval)
        else:
            zj = zetas[k].component_jets(sub, 2)
            l1 = geo.lie_metric_jets(zj)
            L1 = tensor2_values(l1)
            L2 = tensor2_values(geo.lie_metric_jets(zj, tensor=l1))
        F, zF, zzF = _scale_data(space, zetas, pts, k)
        F, zF, zzF = F[..., None, None], zF[..., None, None], zzF[..., None, None]
        first.append(F * L1 + zF * geo.gval)
        second.append(F * L2 + 2.0 * zF * L1 + zzF * geo.gval)
    if single:
        first = [b[0] for b in first]
        second = [b[0] for b in second]
    return {"first": first, "second": second}


def warped_curvature_terms(space: ProductSpace, points) -> dict:
    """Ingredients of the warped scalar-curvature formula: factor
    curvatures, the warping value and Delta f / f, |grad f|^2 / f^2 on
    the base (sign conventions of the base metric included)."""
    if space.kind != "warped":
        raise ProductError("closed-form scalar curvature needs kind 'warped'")
    pts, single = _as_batch(np.atleast_2d(points))
    p1 = pts[..., space.block_slice(0)]
    p2 = pts[..., space.block_slice(1)]
    fac1, fac2 = space.spec.factors
    n2 = fac2.chart.dim
    geo1 = Geometry(fac1.metric, p1, order=2)
    r1 = geo1.scalar_jet.value
    r2 = Geometry(fac2.metric, p2, order=2).scalar_jet.value
    # the warping is a function of factor-1 coordinates only
    f_expr = space.scales[1]
    # rebuild as a factor-1 jet by evaluating on the factor-1 chart
    mapping = {space.offsets[0] + i: i for i in range(fac1.chart.dim)}
    f1 = evaluate_jet(remap_coords(f_expr, mapping), p1, 2)
    f = f1.value
    lap = geo1.laplacian_jet(f1).value
    grads = geo1.grad_jets(f1)
    df = np.stack([f1.derivative(i).value for i in range(fac1.chart.dim)], -1)
    gradnorm = np.einsum("...i,...i->...",
                         np.stack([g.value for g in grads], -1), df)
    rbar = r1 + r2 / f ** 2 - 2.0 * n2 * lap / f - n2 * (n2 - 1) * gradnorm / f ** 2
    out = {"r1": r1, "r2": r2, "f": f, "lap_f_over_f": lap / f,
           "grad_f_sq_over_f_sq": gradnorm / f ** 2, "n2": n2, "rbar": rbar}
    if single:
        out = {k: (v if k == "n2" else v[0]) for k, v in out.items()}
    return out


def warped_scalar_curvature(space: ProductSpace, points) -> np.ndarray:
    """Closed-form scalar curvature of a two-factor warped product."""
    return warped_curvature_terms(space, points)["rbar"]


def factor_soliton_target(space: ProductSpace, zetas, i: int,
                          lam: float, mu: float, points) -> np.ndarray:
    """The scalar sigma_i with Lie_{z_i} g_i = sigma_i g_i required for
    factor i to be a soliton with constants (lam, mu)."""
    pts, single = _as_batch(np.atleast_2d(points))
    fac = space.spec.factors[i]
    sub = pts[..., space.block_slice(i)]
    r_i = Geometry(fac.metric, sub, order=2).scalar_jet.value
    if space.scales[i] is None:
        if abs(lam) < STAR_TOL:
            raise ConditionStarError(
                "factor-1 target needs lambda != 0 (condition (*) violated)")
        return _squeeze((mu - r_i) / lam, single)
    F, zF, zzF = _scale_data(space, zetas, pts, i)
    denom = lam * F - 2.0 * zF
    bad = np.abs(denom) < STAR_TOL * (1.0 + np.abs(lam) * np.abs(F))
    if np.any(bad):
        raise ConditionStarError(
            f"condition (*) violated at {int(np.sum(bad))} sample point(s)")
    return _squeeze(((mu - r_i) * F + zzF) / denom, single)


def _constancy(name, values, quantities, spreads, verdicts):
    quantities[name] = values
    spread = float(np.max(values) - np.min(values))
    spreads[name] = spread
    scale = 1.0 + float(np.max(np.abs(values)))
    verdicts[name] = "constant" if spread < CONSTANCY_TOL * scale else "varies"


def factor_constancy_report(space: ProductSpace, zetas, i: int,
                            samples) -> FactorConditionReport:
    """Sampled constancy checks required for factor i to inherit the
    soliton property from the product."""
    pts, _ = _as_batch(np.atleast_2d(samples))
    if len(pts) < 2:
        raise ProductError("need at least 2 samples for a constancy report")
    fac = space.spec.factors[i]
    sub = pts[..., space.block_slice(i)]
    r_i = Geometry(fac.metric, sub, order=2).scalar_jet.value
    rbar = Geometry(space.metric, pts, order=2).scalar_jet.value
    quantities, spreads, verdicts = {}, {}, {}
    if space.scales[i] is None:
        _constancy("rbar_minus_r", rbar - r_i, quantities, spreads, verdicts)
    else:
        F, zF, zzF = _scale_data(space, zetas, pts, i)
        _constancy("zeta_f2_over_f2", zF / F, quantities, spreads, verdicts)
        _constancy("rbar_minus_r_plus_zzf2_over_f2", rbar - r_i + zzF / F,
                   quantities, spreads, verdicts)
    return FactorConditionReport(
        factor=i, quantities=quantities, spreads=spreads, verdicts=verdicts,
        all_constant=all(v == "constant" for v in verdicts.values()))
