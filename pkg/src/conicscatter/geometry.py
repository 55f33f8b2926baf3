# geometry.py
"""
Riemannian geometry of the boundary sphere at infinity.

The boundary of the compactified space is a round sphere S^{n-1} (n = 2, 3),
optionally perturbed by a conformal factor

    h = exp(2*eps*p(y)) * h_round,

where p is a fixed compactly supported bump centered at a configurable
boundary point.  Everything downstream (Legendrian samplers, bicharacteristic
flow, propagation sets) is driven by the unit-cosphere geodesic flow
exp(s * H_{h/2}) implemented here.

Charts
------
Two stereographic charts per sphere, NORTH (centered at the north pole) and
SOUTH, with overlap switching at polar angle 2*pi/3 from the chart center
(|u| = sqrt(3) in chart coordinates).  In both charts the round metric is
conformally flat,

    h_round = 4 / (1 + |u|^2)^2 * delta,

so a conformally perturbed sphere stays scalar-conformal in chart
coordinates: the dual (covector) quadratic form is c(u) * |mu|^2 with

    c(u) = exp(-2*eps*p) * (1 + |u|^2)^2 / 4.

All heavy paths are vectorized over a leading batch axis; the cosphere flow
integrates batches of states with a fixed-step RK4 so that the numerical
flow map stays smooth in its arguments (finite-difference Jacobians of
sampler maps rely on this).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

CHART_NORTH = 0
CHART_SOUTH = 1

# |u|^2 beyond which a flow switches charts (polar angle 2*pi/3).
_SWITCH_U2 = 3.0
# chart formally covers everything but one point; reject beyond 5*pi/6.
_MAX_U2 = (2.0 + np.sqrt(3.0)) ** 2  # tan(5*pi/12)^2

# target RK4 step for cosphere flow (arclength units)
DEFAULT_FLOW_STEP = np.pi / 512.0


class ChartDomainError(ValueError):
    """Chart coordinate outside the usable chart domain."""


class ShootingError(RuntimeError):
    """Geodesic boundary-value solve failed to converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# =============================================================================
# STEREOGRAPHIC CHARTS
# =============================================================================

def embed(chart, u):
    """Chart coordinates -> unit vector in R^{d+1}.

    NORTH: z = (2u, 1-|u|^2) / (1+|u|^2), SOUTH mirrors the last component.
    Vectorized: ``u`` of shape (..., d), ``chart`` scalar or shape (...,).
    """
    u = np.asarray(u, dtype=float)
    s = 1.0 + np.sum(u * u, axis=-1)
    z_head = 2.0 * u / s[..., None]
    z_last = (2.0 - s) / s
    sign = np.where(np.asarray(chart) == CHART_NORTH, 1.0, -1.0)
    return np.concatenate([z_head, (sign * z_last)[..., None]], axis=-1)


def unembed(z, chart=None):
    """Unit vector -> (chart, u), choosing the chart with the smaller |u|.

    Pass ``chart`` to force a chart (ChartDomainError if unusable).
    """
    z = np.asarray(z, dtype=float)
    z_head, z_last = z[..., :-1], z[..., -1]
    if chart is None:
        chart = np.where(z_last >= 0.0, CHART_NORTH, CHART_SOUTH)
    sign = np.where(np.asarray(chart) == CHART_NORTH, 1.0, -1.0)
    denom = 1.0 + sign * z_last
    if np.any(denom < 1.0 / (1.0 + _MAX_U2) * 2.0 * 0.5):
        raise ChartDomainError("point too close to the chart's antipodal pole")
    u = z_head / denom[..., None]
    return chart, u


def embedding_jacobian(chart, u):
    """d z / d u, shape (..., d+1, d)."""
    u = np.asarray(u, dtype=float)
    d = u.shape[-1]
    s = 1.0 + np.sum(u * u, axis=-1)
    eye = np.eye(d)
    jac_head = (2.0 / s[..., None, None]) * eye \
        - (4.0 / (s * s))[..., None, None] * u[..., :, None] * u[..., None, :]
    jac_last = (-4.0 / (s * s))[..., None, None] * u[..., None, :]
    sign = np.where(np.asarray(chart) == CHART_NORTH, 1.0, -1.0)
    return np.concatenate(
        [jac_head, sign[..., None, None] * jac_last], axis=-2)


def chart_transition(u, mu=None):
    """Coordinate change NORTH <-> SOUTH: u -> u/|u|^2 (an involution).

    Covectors transform by mu -> |u|^2 (I - 2 uhat uhat^T) mu.  Returns the
    new ``u`` (and new ``mu`` if given).
    """
    u = np.asarray(u, dtype=float)
    u2 = np.sum(u * u, axis=-1)
    u_new = u / u2[..., None]
    if mu is None:
        return u_new
    mu = np.asarray(mu, dtype=float)
    proj = np.sum(u * mu, axis=-1) / u2
    mu_new = u2[..., None] * (mu - 2.0 * proj[..., None] * u)
    return u_new, mu_new


def to_chart(target_chart, chart, u, mu=None):
    """Re-express chart data (u and optionally a covector mu) in target
    charts.  ``target_chart``/``chart`` are scalars or arrays; rows already
    in the target chart pass through unchanged."""
    chart = np.asarray(chart)
    target_chart = np.broadcast_to(np.asarray(target_chart), chart.shape)
    u = np.array(u, dtype=float, copy=True)
    move = chart != target_chart
    if mu is None:
        if np.any(move):
            u[move] = chart_transition(u[move])
        return u
    mu = np.array(mu, dtype=float, copy=True)
    if np.any(move):
        u_new, mu_new = chart_transition(u[move], mu[move])
        u[move] = u_new
        mu[move] = mu_new
    return u, mu


def antipode(chart, u):
    """Chart representation of the antipodal point -z.

    The antipode of a NORTH-chart point sits in the SOUTH chart at -u
    (and vice versa).
    """
    return (CHART_SOUTH if chart == CHART_NORTH else CHART_NORTH,
            -np.asarray(u, dtype=float))


# =============================================================================
# BOUNDARY METRIC
# =============================================================================

@dataclass(frozen=True)
class BoundaryMetric:
    """Metric on the boundary sphere: round, or conformally perturbed round.

    Attributes
    ----------
    dim : int
        Dimension d = n-1 of the boundary (1 or 2).
    kind : str
        "round" or "perturbed".
    eps : float
        Conformal perturbation scale, in [0, 0.2].  eps = 0 reproduces the
        round metric exactly.
    bump_center : np.ndarray
        Unit vector in R^{d+1}; center of the conformal bump.
    bump_radius : float
        Geodesic radius (on the round sphere) of the bump's support cap.
    """
    dim: int
    kind: str
    eps: float = 0.0
    bump_center: Optional[np.ndarray] = None
    bump_radius: float = 1.2

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("boundary dimension must be 1 or 2")
        if not (0.0 <= self.eps <= 0.2):
            raise ValueError("eps must lie in [0, 0.2]")
        if self.kind == "perturbed" and self.bump_center is None:
            center = np.zeros(self.dim + 1)
            center[0] = 1.0
            object.__setattr__(self, "bump_center", center)

    @property
    def ambient_n(self) -> int:
        return self.dim + 1

    def is_round(self) -> bool:
        return self.kind == "round" or self.eps == 0.0

    # -- conformal bump ------------------------------------------------------

    def _bump(self, z):
        """p(z) and dp/dz for the compactly supported cap bump.

        p = exp(-1/t) on t > 0 with t = (z.c0 - cos R)/(1 - cos R); all
        derivatives vanish at the support edge t = 0.
        """
        z = np.asarray(z, dtype=float)
        c0 = self.bump_center
        cosr = np.cos(self.bump_radius)
        t = (z @ c0 - cosr) / (1.0 - cosr)
        inside = t > 1e-12
        t_safe = np.where(inside, t, 1.0)
        p = np.where(inside, np.exp(-1.0 / t_safe), 0.0)
        dp_dt = np.where(inside, p / (t_safe * t_safe), 0.0)
        dp_dz = dp_dt[..., None] * c0 / (1.0 - cosr)
        return p, dp_dz

    # -- dual metric ---------------------------------------------------------

    def conformal_scale(self, chart, u):
        """c(u) such that the dual quadratic form is h(y, mu) = c |mu|^2."""
        u = np.asarray(u, dtype=float)
        s = 1.0 + np.sum(u * u, axis=-1)
        c = s * s / 4.0
        if not self.is_round():
            p, _ = self._bump(embed(chart, u))
            c = c * np.exp(-2.0 * self.eps * p)
        return c

    def conformal_scale_grad(self, chart, u):
        """(c, grad_u c); the gradient drives the Hamilton flow."""
        u = np.asarray(u, dtype=float)
        s = 1.0 + np.sum(u * u, axis=-1)
        c = s * s / 4.0
        grad = s[..., None] * u
        if not self.is_round():
            p, dp_dz = self._bump(embed(chart, u))
            jac = embedding_jacobian(chart, u)
            dp_du = np.einsum("...ij,...i->...j", jac, dp_dz)
            fac = np.exp(-2.0 * self.eps * p)
            grad = fac[..., None] * (grad - 2.0 * self.eps * c[..., None] * dp_du)
            c = c * fac
        return c, grad

    def dual_form(self, chart, u, mu):
        """Boundary-symbol quadratic form h(y, mu) on covectors."""
        u = np.asarray(u, dtype=float)
        if np.any(np.sum(u * u, axis=-1) > _MAX_U2):
            raise ChartDomainError("chart coordinate outside atlas domain")
        mu = np.asarray(mu, dtype=float)
        return self.conformal_scale(chart, u) * np.sum(mu * mu, axis=-1)

    def covector_norm(self, chart, u, mu):
        return np.sqrt(self.dual_form(chart, u, mu))


def round_sphere(n: int) -> BoundaryMetric:
    """Round unit sphere boundary of compactified R^n."""
    return BoundaryMetric(dim=n - 1, kind="round")


def perturbed_sphere(n: int, eps: float, bump_center=None,
                     bump_radius: float = 1.2) -> BoundaryMetric:
    """Conformally perturbed sphere h = exp(2 eps p) h_round."""
    center = None
    if bump_center is not None:
        center = np.asarray(bump_center, dtype=float)
        center = center / np.linalg.norm(center)
    return BoundaryMetric(dim=n - 1, kind="perturbed", eps=eps,
                          bump_center=center, bump_radius=bump_radius)


def metric_eval(metric: BoundaryMetric, chart, u, mu):
    """Dual-metric quadratic form h(y, mu) at a chart point (spec surface)."""
    return metric.dual_form(chart, u, mu)


# =============================================================================
# COSPHERE STATES AND FLOW
# =============================================================================

@dataclass(frozen=True)
class CosphereState:
    """Point of the unit cosphere bundle: chart point y, covector muhat with
    |muhat|_h = 1."""
    chart: int
    y: np.ndarray
    muhat: np.ndarray


@dataclass(frozen=True)
class FlowResult:
    state: CosphereState
    s: float
    energy_drift: float


def make_cosphere_state(metric: BoundaryMetric, chart, y, mu) -> CosphereState:
    """Normalize a covector to the unit cosphere and wrap it up."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nrm = metric.covector_norm(chart, y, mu)
    if nrm < 1e-14:
        raise ValueError("cannot normalize a (near-)zero covector")
    return CosphereState(chart=int(chart), y=y, muhat=mu / nrm)


def random_cosphere_states(metric: BoundaryMetric, k: int, rng,
                           max_u: float = 1.2):
    """Batch of k random unit-cosphere states, chart points in |u| <= max_u.

    Returns (charts, Y, MU) arrays of shapes (k,), (k, d), (k, d).
    """
    d = metric.dim
    charts = rng.integers(0, 2, size=k)
    Y = rng.uniform(-max_u, max_u, size=(k, d))
    MU = rng.normal(size=(k, d))
    nrm = np.sqrt(metric.conformal_scale(charts, Y)) * np.linalg.norm(MU, axis=-1)
    MU = MU / nrm[:, None]
    return charts, Y, MU


def cosphere_embed(metric: BoundaryMetric, charts, Y, MU):
    """Chart-free representation of covector data: embedded position z in
    R^{d+1} and a tangent vector w along the raised covector, scaled so that
    the Euclidean |w| equals the h-norm of mu.

    Used for chart-independent comparisons and nearest-sample indexing.
    """
    MU = np.asarray(MU, dtype=float)
    z = embed(charts, Y)
    jac = embedding_jacobian(charts, Y)
    c = metric.conformal_scale(charts, Y)
    w = np.einsum("...ij,...j->...i", jac, MU)
    wlen = np.linalg.norm(w, axis=-1)
    h_norm = np.sqrt(c) * np.linalg.norm(MU, axis=-1)
    scale = np.where(wlen > 0.0, h_norm / np.where(wlen > 0.0, wlen, 1.0), 0.0)
    return z, scale[..., None] * w


def _flow_rhs(metric, charts, Y, MU):
    """Hamilton ODE of H = c(y)|mu|^2 / 2:  ydot = c mu, mudot = -|mu|^2 grad c / 2."""
    c, grad = metric.conformal_scale_grad(charts, Y)
    mu2 = np.sum(MU * MU, axis=-1)
    return c[:, None] * MU, -0.5 * mu2[:, None] * grad


_MAX_SWITCHES = 8


def _flow_batch_rk4(metric, charts, Y, MU, S, n_steps, switch_schedule=None):
    """Fixed-step RK4 for the cosphere flow, time-rescaled so every row takes
    exactly n_steps steps (the numerical flow map is then smooth in all
    arguments).  Renormalizes |mu|_h to 1 after every step.

    Chart switching is a discrete decision; when a finite-difference stencil
    straddles the switch boundary the numerical map picks up an O(h^5) kink.
    Passing ``switch_schedule`` (recorded from a center evaluation) replays
    the exact per-row switch steps instead of re-deciding them, keeping the
    map smooth across a stencil.  Returns the recorded schedule.
    """
    charts = np.array(charts, dtype=int, copy=True)
    Y = np.array(Y, dtype=float, copy=True)
    MU = np.array(MU, dtype=float, copy=True)
    S = np.broadcast_to(np.asarray(S, dtype=float), charts.shape).copy()
    h = S / n_steps
    drift = np.zeros(charts.shape)
    k = charts.shape[0]
    recorded = np.full((k, _MAX_SWITCHES), -1, dtype=np.int32)
    counts = np.zeros(k, dtype=np.int32)

    for i in range(n_steps):
        k1y, k1m = _flow_rhs(metric, charts, Y, MU)
        k2y, k2m = _flow_rhs(metric, charts, Y + 0.5 * h[:, None] * k1y,
                             MU + 0.5 * h[:, None] * k1m)
        k3y, k3m = _flow_rhs(metric, charts, Y + 0.5 * h[:, None] * k2y,
                             MU + 0.5 * h[:, None] * k2m)
        k4y, k4m = _flow_rhs(metric, charts, Y + h[:, None] * k3y,
                             MU + h[:, None] * k3m)
        Y = Y + (h / 6.0)[:, None] * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        MU = MU + (h / 6.0)[:, None] * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
        nrm = np.sqrt(metric.conformal_scale(charts, Y)) \
            * np.linalg.norm(MU, axis=-1)
        drift = np.maximum(drift, np.abs(nrm - 1.0))
        MU = MU / nrm[:, None]
        if switch_schedule is None:
            mask = np.sum(Y * Y, axis=-1) > _SWITCH_U2
        else:
            mask = np.any(switch_schedule == i, axis=1)
        if np.any(mask):
            u_new, mu_new = chart_transition(Y[mask], MU[mask])
            Y[mask] = u_new
            MU[mask] = mu_new
            charts[mask] = 1 - charts[mask]
            rows = np.nonzero(mask)[0]
            ok = counts[rows] < _MAX_SWITCHES
            recorded[rows[ok], counts[rows[ok]]] = i
            counts[rows] += 1
    return charts, Y, MU, drift, recorded


def _flow_batch_round(metric, charts, Y, MU, S):
    """Closed-form great-circle transport on the round sphere (exact flow)."""
    charts = np.asarray(charts, dtype=int)
    Y = np.asarray(Y, dtype=float)
    MU = np.asarray(MU, dtype=float)
    S = np.broadcast_to(np.asarray(S, dtype=float), charts.shape)

    z = embed(charts, Y)
    jac = embedding_jacobian(charts, Y)
    c = metric.conformal_scale(charts, Y)
    w = np.einsum("...ij,...j->...i", jac, c[..., None] * MU)

    z_new = z * np.cos(S)[..., None] + w * np.sin(S)[..., None]
    w_new = -z * np.sin(S)[..., None] + w * np.cos(S)[..., None]

    charts_new = np.where(z_new[..., -1] >= 0.0, CHART_NORTH, CHART_SOUTH)
    _, Y_new = unembed(z_new, charts_new)
    jac_new = embedding_jacobian(charts_new, Y_new)
    MU_new = np.einsum("...ij,...i->...j", jac_new, w_new)
    return charts_new, Y_new, MU_new, np.zeros(charts.shape)


def flow_batch(metric: BoundaryMetric, charts, Y, MU, S, n_steps=None,
               switch_schedule=None, return_plan=False):
    """Flow a batch of unit-cosphere states by (per-row) arclength S.

    Returns (charts, Y, MU, energy_drift), plus (n_steps, switch_schedule)
    when ``return_plan`` is set.  Round metrics use the exact great-circle
    transport; perturbed metrics use fixed-step RK4 with per-step
    renormalization of |mu|_h.  See :func:`_flow_batch_rk4` for the role of
    the switch schedule.
    """
    if metric.is_round():
        out = _flow_batch_round(metric, charts, Y, MU, S)
        if return_plan:
            return out + (0, None)
        return out
    if n_steps is None:
        smax = float(np.max(np.abs(S)))
        n_steps = max(16, int(np.ceil(smax / DEFAULT_FLOW_STEP)))
    charts, Y, MU, drift, recorded = _flow_batch_rk4(
        metric, charts, Y, MU, S, n_steps, switch_schedule=switch_schedule)
    if return_plan:
        return charts, Y, MU, drift, n_steps, recorded
    return charts, Y, MU, drift


def flow(metric: BoundaryMetric, state: CosphereState, s: float,
         n_steps=None) -> FlowResult:
    """exp(s H_{h/2}) applied to one unit-cosphere state."""
    charts, Y, MU, drift = flow_batch(
        metric, np.array([state.chart]), state.y[None, :],
        state.muhat[None, :], np.array([float(s)]), n_steps=n_steps)
    out = CosphereState(chart=int(charts[0]), y=Y[0], muhat=MU[0])
    return FlowResult(state=out, s=float(s), energy_drift=float(drift[0]))


# =============================================================================
# GEODESIC DISTANCE
# =============================================================================

def _circle_angle(chart, u):
    """Standard angle of a d=1 chart point on the circle."""
    z = embed(chart, np.atleast_1d(u))
    return np.arctan2(z[..., 0], z[..., 1])


def _distance_circle(metric, chart1, y1, chart2, y2):
    """Perturbed circle: lengths of both arcs by quadrature, take the min."""
    from numpy.polynomial.legendre import leggauss
    a0 = float(_circle_angle(chart1, np.asarray(y1, dtype=float)))
    a1 = float(_circle_angle(chart2, np.asarray(y2, dtype=float)))
    nodes, weights = leggauss(240)

    def arc_length(lo, hi):
        alpha = 0.5 * (hi + lo) + 0.5 * (hi - lo) * nodes
        z = np.stack([np.sin(alpha), np.cos(alpha)], axis=-1)
        p, _ = metric._bump(z)
        return 0.5 * abs(hi - lo) * np.sum(weights * np.exp(metric.eps * p))

    delta = (a1 - a0) % (2.0 * np.pi)
    return min(arc_length(a0, a0 + delta), arc_length(a0, a0 + delta - 2.0 * np.pi))


def geodesic_distance(metric: BoundaryMetric, chart1, y1, chart2, y2,
                      tol: float = 1e-11) -> float:
    """Geodesic distance between two boundary points.

    Round spheres use the exact angle; perturbed circles integrate the
    length element along both arcs; perturbed 2-spheres solve the boundary
    value problem by shooting (round great circle as the initial guess).
    """
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    z1 = embed(chart1, y1)
    z2 = embed(chart2, y2)
    angle = float(np.arccos(np.clip(z1 @ z2, -1.0, 1.0)))
    if metric.is_round():
        return angle
    if metric.dim == 1:
        return _distance_circle(metric, chart1, y1, chart2, y2)
    if angle < 1e-9:
        return angle

    # initial guess: round great-circle direction and length
    w0 = z2 - (z1 @ z2) * z1
    w0 = w0 / np.linalg.norm(w0)
    jac = embedding_jacobian(chart1, y1)
    c = float(metric.conformal_scale(chart1, y1))
    ydot0 = jac.T @ w0  # proportional to the chart direction of w0
    alpha0 = float(np.arctan2(ydot0[1], ydot0[0]))

    def endpoints(x_batch):
        """Flow endpoints for rows (alpha, s); one batched integration."""
        alpha = x_batch[:, 0]
        s = x_batch[:, 1]
        mu = np.stack([np.cos(alpha), np.sin(alpha)], axis=-1) / np.sqrt(c)
        charts, Y, _, _ = flow_batch(
            metric, np.full(len(s), chart1), np.broadcast_to(y1, (len(s), 2)),
            mu, s, n_steps=192)
        return embed(charts, Y)

    # Gauss-Newton with a batched finite-difference Jacobian
    x = np.array([alpha0, angle])
    delta = 1e-7
    res = np.inf
    for _ in range(25):
        stencil = np.array([x,
                            x + [delta, 0.0], x - [delta, 0.0],
                            x + [0.0, delta], x - [0.0, delta]])
        zs = endpoints(stencil)
        f = zs[0] - z2
        res = float(np.linalg.norm(f))
        if res < 1e-13:
            break
        J = np.stack([(zs[1] - zs[2]) / (2 * delta),
                      (zs[3] - zs[4]) / (2 * delta)], axis=-1)
        step, *_ = np.linalg.lstsq(J, -f, rcond=None)
        if np.linalg.norm(step) < 1e-14:
            break
        x = x + step
    if res > 1e-8:
        raise ShootingError(
            f"geodesic shooting did not converge (residual {res:.3e})", res)
    return abs(float(x[1]))
