"""Numerical side of the flow d^2 g/dt^2 = -r g.

Two engines live here: a one-parameter family check (pull back a metric
along the flow of zeta(t) = zeta0/f(t), scale by f(t), and compare the
central second time difference against -r g), and a leapfrog integrator
on periodic grids with scalar curvature from 4th-order stencils.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .chart import MetricField, VectorField
from .tensor import Geometry, scalar_curvature_from_partials

ODE_STEP = 1e-3
STABILITY_FACTOR = 0.25
DEGENERATION_RATIO = 1e-8
MONITOR_LIMIT = 1e12


class FlowError(ArithmeticError):
    pass


class SignLossError(FlowError):
    pass


class BoxExitError(FlowError):
    pass


def _schedule(lam: float, mu: float):
    return lambda t: 1.0 + lam * t - mu * t * t / 2.0


# ---------------------------------------------------------------------------
# Flow map of the time-dependent generator zeta0 / f(t)
# ---------------------------------------------------------------------------

def flow_map(zeta: VectorField, lam: float, mu: float, t: float, x,
             step: float = ODE_STEP):
    """Integrate dx/ds = zeta(x)/f(s) from 0 to t with classical RK4 and
    the Jacobian via the variational equation; returns (point, Jacobian)."""
    if not (0.0 < step <= ODE_STEP):
        raise ValueError("integration step must lie in (0, 1e-3]")
    chart = zeta.chart
    x0 = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    n = chart.dim
    f = _schedule(lam, mu)
    lo = np.array([b[0] for b in chart.box])
    hi = np.array([b[1] for b in chart.box])
    periodic = chart.fully_periodic

    def rhs(s, y, J):
        jets = zeta.component_jets(y, 1)
        v = np.stack([j.value for j in jets], -1)
        D = np.stack([np.stack([jets[i].derivative(k).value for k in range(n)], -1)
                      for i in range(n)], -2)   # D[..., i, k] = d_k zeta^i
        fs = f(s)
        if fs <= 0.0:
            raise SignLossError(f"f({s:.6g}) <= 0 along the flow")
        return v / fs, np.einsum("...ik,...kj->...ij", D, J) / fs

    nsteps = max(1, int(np.ceil(abs(t) / step)))
    h = t / nsteps
    y = x0.copy()
    J = np.broadcast_to(np.eye(n), y.shape[:-1] + (n, n)).copy()
    s = 0.0
    for _ in range(nsteps):
        k1, K1 = rhs(s, y, J)
        k2, K2 = rhs(s + h / 2, y + h / 2 * k1, J + h / 2 * K1)
        k3, K3 = rhs(s + h / 2, y + h / 2 * k2, J + h / 2 * K2)
        k4, K4 = rhs(s + h, y + h * k3, J + h * K3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        J = J + h / 6 * (K1 + 2 * K2 + 2 * K3 + K4)
        s += h
        if not periodic and (np.any(y < lo) or np.any(y > hi)):
            raise BoxExitError(
                f"trajectory left the sampling box of chart "
                f"{chart.name!r} at s = {s:.6g}")
    if single:
        return y[0], J[0]
    return y, J


def pullback_metric(g0: MetricField, mapped, jac, scale: float = 1.0):
    """scale * J^T g0(mapped) J at the mapped points."""
    pts = np.atleast_2d(np.asarray(mapped, dtype=float))
    single = np.asarray(mapped).ndim == 1
    J = np.asarray(jac, dtype=float)
    if single:
        J = J[None]
    dets = np.linalg.det(J)
    if np.any(np.abs(dets) < 1e-14):
        raise FlowError("singular Jacobian in pullback")
    gval = Geometry(g0, pts, order=0).gval
    out = scale * np.einsum("...ki,...kl,...lj->...ij", J, gval, J)
    return out[0] if single else out


@dataclass(frozen=True)
class FlowFamilySpec:
    metric: MetricField
    zeta: VectorField
    lam: float
    mu: float
    h: float = 1e-3

    def __post_init__(self):
        if not 1e-4 <= self.h <= 1e-2:
            raise ValueError("finite-difference step h must lie in [1e-4, 1e-2]")
        f = _schedule(self.lam, self.mu)
        ts = np.linspace(-2 * self.h, 2 * self.h, 9)
        if np.any([f(t) <= 0 for t in ts]):
            raise ValueError("the scale factor must stay positive near t = 0")


def family_metric_at(spec: FlowFamilySpec, t: float, x) -> np.ndarray:
    """g(t)(x) = f(t) (phi_t^* g0)(x) for the family generated by zeta."""
    f = _schedule(spec.lam, spec.mu)
    y, J = flow_map(spec.zeta, spec.lam, spec.mu, t, x)
    return pullback_metric(spec.metric, y, J, scale=f(t))


def family_second_derivative_residual(spec: FlowFamilySpec, x) -> np.ndarray:
    """Central second difference of g(t)(x) at t = 0 plus r(g0)(x) g0(x);
    O(h^2) small exactly when (g0, zeta, lam, mu) is a soliton."""
    h = spec.h
    gm = family_metric_at(spec, -h, x)
    gp = family_metric_at(spec, +h, x)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    single = np.asarray(x).ndim == 1
    geo = Geometry(spec.metric, pts, order=2)
    g0 = geo.gval
    r0 = geo.scalar_jet.value
    if single:
        g0, r0 = g0[0], r0[0]
    second = (gp - 2.0 * g0 + gm) / h ** 2
    return second + r0[..., None, None] * g0


def conformal_flow_exact(r0: float, phi0: float, v0: float, t: float) -> float:
    """phi(t) for g(t) = phi(t) g0 with r(g0) = r0 constant: phi'' = -r0."""
    phi = lambda s: phi0 + v0 * s - r0 * s * s / 2.0
    # positivity on [0, t): check endpoints and the interior vertex
    lo = min(phi(0.0), phi(t))
    if r0 < 0:
        sv = v0 / r0   # interior vertex is a minimum when phi is convex
        if 0.0 < sv < t:
            lo = min(lo, phi(sv))
    if lo < -1e-15:
        raise SignLossError(
            f"conformal factor loses positivity before t = {t:.6g}")
    return phi(t)


# ---------------------------------------------------------------------------
# Leapfrog grid integrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    dim: int
    resolution: int
    periods: tuple[float, ...]
    dt: float
    final_time: float
    stencil_order: int = 4

    def __post_init__(self):
        if self.resolution < 16:
            raise ValueError("need at least 16 points per axis")
        if len(self.periods) != self.dim or any(p <= 0 for p in self.periods):
            raise ValueError("one positive period per axis required")
        if self.dt <= 0 or self.final_time <= 0:
            raise ValueError("dt and final time must be positive")
        if self.stencil_order != 4:
            raise ValueError("only the 4th-order stencil is implemented")

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(p / self.resolution for p in self.periods)

    def node_points(self) -> np.ndarray:
        axes = [np.arange(self.resolution) * s for s in self.spacings]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)


@dataclass
class FlowState:
    time: float
    metric: np.ndarray      # (res, ..., n, n)
    velocity: np.ndarray


@dataclass
class FlowTrajectory:
    times: list
    states: list                    # snapshots of the metric field
    diagnostics: list               # dicts per output time
    termination: str                # completed | degenerated | unstable
    events: list = field(default_factory=list)
    last_levels: tuple | None = None  # (g_{N-1}, g_N) for reversals
    homogeneous: bool = False


def _stencil_d1(f: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (8.0 * (np.roll(f, -1, axis) - np.roll(f, 1, axis))
            - (np.roll(f, -2, axis) - np.roll(f, 2, axis))) / (12.0 * dx)


def _stencil_d2(f: np.ndarray, axis: int, dx: float) -> np.ndarray:
    return (-np.roll(f, -2, axis) + 16.0 * np.roll(f, -1, axis) - 30.0 * f
            + 16.0 * np.roll(f, 1, axis) - np.roll(f, 2, axis)) / (12.0 * dx ** 2)


def grid_scalar_curvature(g: np.ndarray, spacings) -> np.ndarray:
    """Scalar curvature per node via periodic 4th-order stencils."""
    dim = len(spacings)
    n = g.shape[-1]
    batch = g.shape[:-2]
    dg = np.empty(batch + (dim, n, n))
    d2g = np.empty(batch + (dim, dim, n, n))
    for k in range(dim):
        dg[..., k, :, :] = _stencil_d1(g, k, spacings[k])
    for m in range(dim):
        for k in range(dim):
            if m == k:
                d2g[..., m, k, :, :] = _stencil_d2(g, k, spacings[k])
            else:
                d2g[..., m, k, :, :] = _stencil_d1(
                    dg[..., k, :, :], m, spacings[m])
    return scalar_curvature_from_partials(g, dg, d2g)


def _diagnostics(t, g, gprev, dt, cell_volume):
    det = np.linalg.det(g)
    vel = (g - gprev) / dt
    energy = float(np.sum(vel ** 2) * cell_volume)
    return {"t": float(t), "min_det": float(np.min(np.abs(det))),
            "energy": energy}


def grid_flow_run(grid: GridSpec, initial: FlowState, *,
                  output_times=None, second_level: np.ndarray | None = None,
                  r0: float | None = None) -> FlowTrajectory:
    """Leapfrog integration g_{n+1} = 2g_n - g_{n-1} - dt^2 r(g_n) g_n.

    ``r0`` switches on homogeneous mode: the metric is g = phi(t) g0 and
    the scaling law r = r0/phi replaces the spatial stencil curvature.
    ``second_level`` (the metric one step ahead of the initial one)
    overrides the Taylor start, which makes runs reversible level-exactly.
    """
    g0 = np.asarray(initial.metric, dtype=float)
    v0 = np.asarray(initial.velocity, dtype=float)
    n = g0.shape[-1]
    if g0.shape != v0.shape or g0.shape[-2] != n:
        raise ValueError("metric and velocity arrays must match, n x n per node")
    if np.max(np.abs(g0 - np.swapaxes(g0, -1, -2))) > 1e-12:
        raise ValueError("initial metric must be symmetric")
    det0 = np.linalg.det(g0)
    if np.any(np.abs(det0) < 1e-14):
        raise ValueError("initial metric degenerate at some node")
    spacings = grid.spacings
    cell_volume = float(np.prod(spacings))
    dt = grid.dt
    nsteps = int(round(grid.final_time / dt))
    out_times = sorted(set(
        float(t) for t in (output_times if output_times is not None
                           else [grid.final_time])))

    homogeneous = r0 is not None

    def curvature(g, phi):
        if homogeneous:
            return np.full(g.shape[:-2], r0 / phi)
        return grid_scalar_curvature(g, spacings)

    phi_of = lambda g: float(np.mean(g[..., 0, 0] / g0[..., 0, 0]))

    r_prev = curvature(g0, 1.0)
    if second_level is None:
        g1 = g0 + dt * v0 - 0.5 * dt ** 2 * r_prev[..., None, None] * g0
    else:
        g1 = np.asarray(second_level, dtype=float).copy()

    times, states, diags, events = [], [], [], []
    termination = "completed"
    gp, gc = g0.copy(), g1
    t = dt
    recorded = set()

    def record(t, gc, gp):
        times.append(float(t))
        states.append(gc.copy())
        diags.append(_diagnostics(t, gc, gp, dt, cell_volume))

    if 0.0 in out_times:
        record(0.0, g0, g0 - dt * v0)
        recorded.add(0.0)

    step = 1
    while step <= nsteps:
        # guards evaluated on the current level before stepping past it
        if not np.all(np.isfinite(gc)):
            termination = "unstable"
            events.append({"event": "instability", "t": float(t),
                           "detail": "non-finite metric entry"})
            break
        det = np.linalg.det(gc)
        if np.any(np.abs(det) < DEGENERATION_RATIO * np.abs(det0)):
            termination = "degenerated"
            events.append({"event": "degeneration", "t": float(t),
                           "detail": f"min |det g| = {float(np.min(np.abs(det))):.3e}"})
            break
        r = curvature(gc, phi_of(gc))
        if not np.all(np.isfinite(r)):
            termination = "unstable"
            events.append({"event": "instability", "t": float(t),
                           "detail": "non-finite curvature"})
            break
        dt_max = STABILITY_FACTOR * min(spacings) / (
            1.0 + float(np.max(np.sqrt(np.abs(r)))))
        if not homogeneous and dt > dt_max:
            termination = "unstable"
            events.append({"event": "instability", "t": float(t),
                           "detail": f"dt {dt:.3e} above stability bound {dt_max:.3e}"})
            break
        energy = float(np.sum(((gc - gp) / dt) ** 2) * cell_volume)
        if energy > MONITOR_LIMIT:
            termination = "unstable"
            events.append({"event": "instability", "t": float(t),
                           "detail": f"energy monitor {energy:.3e}"})
            break
        for ot in out_times:
            if ot not in recorded and abs(t - ot) < dt / 2:
                record(t, gc, gp)
                recorded.add(ot)
        if step == nsteps:
            break
        gn = 2.0 * gc - gp - dt ** 2 * r[..., None, None] * gc
        gp, gc = gc, gn
        t += dt
        step += 1

    return FlowTrajectory(times=times, states=states, diagnostics=diags,
                          termination=termination, events=events,
                          last_levels=(gp, gc), homogeneous=homogeneous)


def homogeneous_flow_run(r0: float, phi0: float, v0: float, dt: float,
                         final_time: float, resolution: int = 16,
                         output_times=None) -> FlowTrajectory:
    """Homogeneous reduction g = phi(t) g0 on a token flat grid; the
    leapfrog recurrence collapses to phi_{n+1} = 2 phi_n - phi_{n-1} - dt^2 r0."""
    grid = GridSpec(1, resolution, (2 * np.pi,), dt, final_time)
    g0 = np.broadcast_to(np.eye(1) * phi0, (resolution, 1, 1)).copy()
    vel = np.broadcast_to(np.eye(1) * v0, (resolution, 1, 1)).copy()
    # relative scale phi/phi0 obeys phi'' = -(r0/phi0), see grid_flow_run
    if output_times is None:
        output_times = [final_time]
    return grid_flow_run(grid, FlowState(0.0, g0, vel),
                         output_times=output_times, r0=r0 / phi0)


def export_trajectory_csv(traj: FlowTrajectory, path) -> None:
    """Columns: t, node, i, j, value (flattened node index, row-major)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "node", "i", "j", "value"])
        for t, g in zip(traj.times, traj.states):
            n = g.shape[-1]
            flat = g.reshape(-1, n, n)
            for node in range(flat.shape[0]):
                for i in range(n):
                    for j in range(n):
                        writer.writerow([repr(float(t)), node, i, j,
                                         repr(float(flat[node, i, j]))])


def trajectory_summary(traj: FlowTrajectory) -> dict:
    return {
        "termination": traj.termination,
        "times": [float(t) for t in traj.times],
        "diagnostics": traj.diagnostics,
        "events": traj.events,
        "homogeneous": traj.homogeneous,
    }


def export_trajectory_summary(traj: FlowTrajectory, path) -> None:
    with open(path, "w") as fh:
        json.dump(trajectory_summary(traj), fh, indent=2, sort_keys=True)
        fh.write("\n")
