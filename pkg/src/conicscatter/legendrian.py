# legendrian.py
"""
Legendrian sample sets over the boundary of the compactified single and
double spaces, with numerical certification of the contact property,
characteristic containment, flowout structure, and wavefront propagation.

Three contact manifolds appear:

* SINGLE space, coordinates (y, tau, mu), contact form

      chi = d tau + mu . dy;

* POISSON space (boundary of X x dX), coordinates (y, y', tau, mu, mu'),

      chi = d tau + mu . dy + mu' . dy';

* DOUBLE space (front face of the blown-up product), with the fibred
  coordinates (theta, y', y'', tau, eta, mut', mut'') linked to the
  split coordinates (sigma = tan theta, tau', tau'', mu', mu'') by

      tau  = tau' cos(theta) + tau'' sin(theta),
      eta  = tau' sin(theta) - tau'' cos(theta),
      mut' = cos(theta) mu',     mut'' = sin(theta) mu'',

  and contact form chi = d tau + eta d theta + mut'.dy' + mut''.dy''.

The sampled families (all generated by the boundary geodesic flow):

* outgoing/incoming sections ``G_SHARP(+/-lam)``: mu = mu' = 0, tau = -/+lam;
* the Poisson-kernel Legendrians ``G(+/-lam)``:
  (y, muhat) = exp(s H_{h/2})(y', muhat'), tau = lam cos s,
  mu = lam sin(s) muhat, mu' = -lam sin(s) muhat';
* the fibre family ``G_POINT``: the slice of G(lam) over a fixed left point;
* the double-space Legendrian ``L(lam)``: two flow times s, s' from a common
  unit-cosphere point with tan(theta) = sin(s')/sin(s),
  tau' = lam cos s', tau'' = -lam cos s,
  (y', mu') = lam sin s' exp(s' H)(y, muhat),
  (y'', mu'') = -lam sin s exp(s H)(y, muhat),
  plus the two diagonal closure strata (theta, y, y, +/-lam, -/+lam, 0, 0);
* the double-space sections ``L_SHARP(+/-lam)``: tau' = tau'' = -/+lam,
  mu' = mu'' = 0;
* the boundary conormal to the diagonal ``SC_CONORMAL_DIAG``:
  sigma = 1, y' = y'', mu' = -mu'', tau = 0.

Certification is sample-based: finite-difference Jacobians of the sampler
maps (central differences, step 1e-5) contracted with the contact form, the
characteristic quadric tau'^2 + tau''^2 + |mu'|^2 + |mu''|^2 - 2 lam^2, and
Hamilton flow of the double-space boundary symbol for the flowout/invariance
checks.  All stencil evaluations for one sweep run through a single batched
flow call so that the numerical maps stay smooth in their parameters.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import geometry as geo
from .geometry import (BoundaryMetric, CHART_NORTH, cosphere_embed,
                       flow_batch, to_chart)

FD_STEP = 1e-5
PARAM_MARGIN = 2e-3  # keeps FD stencils inside parameter domains


class DomainError(ValueError):
    """Sampler parameters outside the admissible domain."""


class LegendrianKind(enum.Enum):
    G_PLUS = "G(+lam)"
    G_MINUS = "G(-lam)"
    G_SHARP_PLUS = "G#(+lam)"
    G_SHARP_MINUS = "G#(-lam)"
    G_POINT = "G_{y0}(lam)"
    L = "L(lam)"
    L_SHARP_PLUS = "L#(+lam)"
    L_SHARP_MINUS = "L#(-lam)"
    SC_CONORMAL_DIAG = "scN*diag"


class LStratum(enum.Enum):
    MAIN = "main"
    DIAG_PLUS = "diag+"      # (theta, y, y, +lam, -lam, 0, 0)
    DIAG_MINUS = "diag-"     # (theta, y, y, -lam, +lam, 0, 0)


_SINGLE_KINDS = {LegendrianKind.G_POINT}
_POISSON_KINDS = {LegendrianKind.G_PLUS, LegendrianKind.G_MINUS,
                  LegendrianKind.G_SHARP_PLUS, LegendrianKind.G_SHARP_MINUS}
_DOUBLE_KINDS = {LegendrianKind.L, LegendrianKind.L_SHARP_PLUS,
                 LegendrianKind.L_SHARP_MINUS, LegendrianKind.SC_CONORMAL_DIAG}


# =============================================================================
# POINT TYPES
# =============================================================================

@dataclass(frozen=True)
class ScCotangentPoint:
    """Point of the scattering cotangent bundle over the boundary: chart
    point y, scalar tau, covector mu."""
    chart: int
    y: np.ndarray
    tau: float
    mu: np.ndarray


@dataclass(frozen=True)
class PoissonLegendrianPoint:
    """Point over the corner of X x dX: (y, y', tau, mu, mu')."""
    chart_y: int
    y: np.ndarray
    chart_yp: int
    yp: np.ndarray
    tau: float
    mu: np.ndarray
    mup: np.ndarray
    branch: str = ""


@dataclass(frozen=True)
class DoubleSpacePoint:
    """Point of the double-space front face, stored in both coordinate
    systems (split and fibred), kept consistent to 1e-12."""
    theta: float
    chart1: int
    y1: np.ndarray
    chart2: int
    y2: np.ndarray
    tau_p: float
    tau_pp: float
    mu_p: np.ndarray
    mu_pp: np.ndarray
    tau: float = field(init=False)
    eta: float = field(init=False)
    mut_p: np.ndarray = field(init=False)
    mut_pp: np.ndarray = field(init=False)
    branch: str = ""

    def __post_init__(self):
        ct, st = np.cos(self.theta), np.sin(self.theta)
        object.__setattr__(self, "tau", self.tau_p * ct + self.tau_pp * st)
        object.__setattr__(self, "eta", self.tau_p * st - self.tau_pp * ct)
        object.__setattr__(self, "mut_p", ct * self.mu_p)
        object.__setattr__(self, "mut_pp", st * self.mu_pp)

    @property
    def sigma(self) -> float:
        return float(np.tan(self.theta))

    def coordinate_consistency_defect(self) -> float:
        """Residual of the linking relations between the two systems."""
        ct, st = np.cos(self.theta), np.sin(self.theta)
        return float(max(
            abs(self.tau - (self.tau_p * ct + self.tau_pp * st)),
            abs(self.eta - (self.tau_p * st - self.tau_pp * ct)),
            np.max(np.abs(self.mut_p - ct * self.mu_p), initial=0.0),
            np.max(np.abs(self.mut_pp - st * self.mu_pp), initial=0.0)))


def double_point_features(metric: BoundaryMetric, lam: float,
                          theta, charts1, y1, charts2, y2,
                          tau_p, tau_pp, mu_p, mu_pp):
    """Chart-free feature vectors for nearest-sample queries.

    Concatenates (theta, z', w'/lam, z'', w''/lam, tau'/lam, tau''/lam)
    where (z, w) are the embedded position and h-normalized covector
    vector from :func:`geometry.cosphere_embed`.
    """
    z1, w1 = cosphere_embed(metric, charts1, y1, mu_p)
    z2, w2 = cosphere_embed(metric, charts2, y2, mu_pp)
    theta = np.asarray(theta, dtype=float)
    cols = [theta[..., None], z1, w1 / lam, z2, w2 / lam,
            np.asarray(tau_p, dtype=float)[..., None] / lam,
            np.asarray(tau_pp, dtype=float)[..., None] / lam]
    return np.concatenate(cols, axis=-1)


# =============================================================================
# SAMPLERS
# =============================================================================

class _FlowPlan:
    """Records the integrator plan (step counts and chart-switch schedules)
    of a center evaluation and replays it for finite-difference stencil
    evaluations, so the numerical sampler map is smooth across a stencil.

    A replayed flow call may carry an integer multiple of the recorded rows
    (stencil rows are stacked [params + delta; params - delta]); the
    schedule is tiled to match.
    """

    def __init__(self, mode: str):
        self.mode = mode  # "record" or "replay"
        self.slots: list = []
        self._idx = 0

    def rewind(self):
        self.mode = "replay"
        self._idx = 0

    def flow(self, metric, charts, u, mu, s):
        if self.mode == "record":
            c, y, m, _, n_steps, sched = flow_batch(
                metric, charts, u, mu, s, return_plan=True)
            self.slots.append((n_steps, sched))
            return c, y, m
        n_steps, sched = self.slots[self._idx]
        self._idx += 1
        if sched is not None:
            reps = len(np.atleast_1d(s)) // sched.shape[0]
            sched = np.concatenate([sched] * reps)
            n_steps = n_steps if n_steps > 0 else None
        c, y, m, _ = flow_batch(metric, charts, u, mu, s,
                                n_steps=n_steps or None,
                                switch_schedule=sched)
        return c, y, m


def _plain_flow(metric, charts, u, mu, s):
    c, y, m, _ = flow_batch(metric, charts, u, mu, s)
    return c, y, m


def _cosphere_from_params(metric, u, extra, sign):
    """(y, muhat) from continuous fibre parameters.

    d = 2: extra is the fibre angle alpha, muhat = (cos a, sin a)/sqrt(c);
    d = 1: muhat = sign/sqrt(c) and extra is unused.
    """
    d = metric.dim
    charts = np.zeros(u.shape[0], dtype=int) + CHART_NORTH
    c = metric.conformal_scale(charts, u)
    if d == 2:
        mu = np.stack([np.cos(extra), np.sin(extra)], axis=-1)
    else:
        mu = np.asarray(sign, dtype=float)[:, None]
    return charts, mu / np.sqrt(c)[:, None]


@dataclass(frozen=True)
class LegendrianSampler:
    """Parametrized sampler for one Legendrian family.

    ``params`` rows are continuous coordinates on the parameter domain,
    with dimension ``param_dim`` equal to the Legendrian's dimension.  For
    1-dimensional boundaries the fibre direction of the unit cosphere is a
    discrete sign carried in ``aux`` (it has no tangent directions, so it
    never enters finite-difference Jacobians).
    """
    kind: LegendrianKind
    lam: float
    metric: BoundaryMetric
    stratum: LStratum = LStratum.MAIN
    y0_chart: int = CHART_NORTH
    y0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.lam <= 0:
            raise DomainError("lam must be positive")
        if self.kind is LegendrianKind.G_POINT and self.y0 is None:
            object.__setattr__(self, "y0", np.zeros(self.metric.dim))

    # -- bookkeeping ---------------------------------------------------------

    @property
    def space(self) -> str:
        if self.kind in _SINGLE_KINDS:
            return "single"
        if self.kind in _POISSON_KINDS:
            return "poisson"
        return "double"

    @property
    def branch_tag(self) -> str:
        if self.kind is LegendrianKind.L and self.stratum is not LStratum.MAIN:
            return f"{self.kind.value}:{self.stratum.value}"
        return self.kind.value

    @property
    def param_dim(self) -> int:
        d = self.metric.dim
        kind = self.kind
        if kind in (LegendrianKind.G_PLUS, LegendrianKind.G_MINUS):
            return 2 * d  # s + unit-cosphere params (d + (d-1))
        if kind in (LegendrianKind.G_SHARP_PLUS, LegendrianKind.G_SHARP_MINUS):
            return 2 * d
        if kind is LegendrianKind.G_POINT:
            return d
        if kind is LegendrianKind.L:
            if self.stratum is LStratum.MAIN:
                return 2 * d + 1
            return d + 1  # (theta, y)
        if kind in (LegendrianKind.L_SHARP_PLUS, LegendrianKind.L_SHARP_MINUS):
            return 2 * d + 1
        if kind is LegendrianKind.SC_CONORMAL_DIAG:
            return 2 * d + 1
        raise DomainError(f"unknown kind {kind}")

    def coord_slices(self):
        """Layout of the flattened contact-space coordinate vector."""
        d = self.metric.dim
        if self.space == "single":
            return {"y": slice(0, d), "tau": d, "mu": slice(d + 1, 2 * d + 1)}
        if self.space == "poisson":
            return {"y": slice(0, d), "yp": slice(d, 2 * d), "tau": 2 * d,
                    "mu": slice(2 * d + 1, 3 * d + 1),
                    "mup": slice(3 * d + 1, 4 * d + 1)}
        return {"theta": 0, "y1": slice(1, d + 1), "y2": slice(d + 1, 2 * d + 1),
                "tau": 2 * d + 1, "eta": 2 * d + 2,
                "mut1": slice(2 * d + 3, 3 * d + 3),
                "mut2": slice(3 * d + 3, 4 * d + 3)}

    # -- random parameters ---------------------------------------------------

    def random_params(self, rng, k: int):
        """(params, aux): uniform draws over the admissible domain, kept a
        finite-difference margin away from parameter boundaries."""
        d = self.metric.dim
        lam = self.lam
        lo, hi = PARAM_MARGIN, np.pi - PARAM_MARGIN
        aux = {}
        if d == 1:
            aux["sign"] = rng.choice([-1.0, 1.0], size=k)
        u_box = 0.9

        def units(n):
            return rng.uniform(-u_box, u_box, size=(k, n))

        kind = self.kind
        if kind in (LegendrianKind.G_PLUS, LegendrianKind.G_MINUS):
            s = rng.uniform(lo, hi, size=(k, 1))
            if d == 2:
                cols = [s, units(2), rng.uniform(0, 2 * np.pi, size=(k, 1))]
            else:
                cols = [s, units(1)]
            return np.concatenate(cols, axis=1), aux
        if kind in (LegendrianKind.G_SHARP_PLUS, LegendrianKind.G_SHARP_MINUS):
            return np.concatenate([units(d), units(d)], axis=1), aux
        if kind is LegendrianKind.G_POINT:
            s = rng.uniform(lo, hi, size=(k, 1))
            if d == 2:
                cols = [s, rng.uniform(0, 2 * np.pi, size=(k, 1))]
            else:
                cols = [s]
            return np.concatenate(cols, axis=1), aux
        if kind is LegendrianKind.L and self.stratum is LStratum.MAIN:
            # the joint corner sin(s) ~ sin(s') ~ 0 is excluded from the
            # (s, s') parametrization; the diagonal strata cover it
            s = rng.uniform(lo, hi, size=(k, 2))
            bad = np.sin(s[:, 0]) ** 2 + np.sin(s[:, 1]) ** 2 < 0.02
            while np.any(bad):
                s[bad] = rng.uniform(lo, hi, size=(int(bad.sum()), 2))
                bad = np.sin(s[:, 0]) ** 2 + np.sin(s[:, 1]) ** 2 < 0.02
            if d == 2:
                cols = [s, units(2), rng.uniform(0, 2 * np.pi, size=(k, 1))]
            else:
                cols = [s, units(1)]
            return np.concatenate(cols, axis=1), aux
        if kind is LegendrianKind.L:  # diagonal strata
            theta = rng.uniform(lo, np.pi / 2 - PARAM_MARGIN, size=(k, 1))
            return np.concatenate([theta, units(d)], axis=1), aux
        if kind in (LegendrianKind.L_SHARP_PLUS, LegendrianKind.L_SHARP_MINUS):
            theta = rng.uniform(lo, np.pi / 2 - PARAM_MARGIN, size=(k, 1))
            return np.concatenate([theta, units(d), units(d)], axis=1), aux
        if kind is LegendrianKind.SC_CONORMAL_DIAG:
            taup = rng.uniform(-1.4 * lam, 1.4 * lam, size=(k, 1))
            mupp = rng.uniform(-lam, lam, size=(k, d))
            return np.concatenate([units(d), mupp, taup], axis=1), aux
        raise DomainError(f"unknown kind {kind}")

    # -- evaluation ----------------------------------------------------------

    def sample_coords(self, params, aux=None, chart_lock=None, plan=None):
        """Evaluate the sampler map on a batch of parameter rows.

        Returns (coords, charts): flattened contact-space coordinates per
        row (layout per :meth:`coord_slices`) and the charts of the
        boundary-point slots.  ``chart_lock`` forces output charts and
        ``plan`` (a :class:`_FlowPlan`) pins the integrator decisions; both
        keep finite-difference stencils in one smooth coordinate system.
        """
        params = np.atleast_2d(np.asarray(params, dtype=float))
        k = params.shape[0]
        d = self.metric.dim
        lam = self.lam
        aux = aux or {}
        sign = aux.get("sign", np.ones(k))
        kind = self.kind
        run_flow = plan.flow if plan is not None else _plain_flow

        if kind in (LegendrianKind.G_PLUS, LegendrianKind.G_MINUS):
            s = params[:, 0]
            self._check_range(s, 0.0, np.pi)
            u = params[:, 1:1 + d]
            extra = params[:, 1 + d] if d == 2 else None
            charts0, muhat = _cosphere_from_params(self.metric, u, extra, sign)
            t_flow = s if kind is LegendrianKind.G_PLUS else s - np.pi
            cf, yf, mf = run_flow(self.metric, charts0, u, muhat, t_flow)
            tau = lam * np.cos(s)
            mu = lam * np.sin(s)[:, None] * mf
            mup = -lam * np.sin(s)[:, None] * muhat
            charts = np.stack([cf, charts0], axis=1)
            if chart_lock is not None:
                yf, mu = to_chart(chart_lock[:, 0], cf, yf, mu)
                charts = np.stack([np.asarray(chart_lock[:, 0]), charts0], axis=1)
            coords = np.concatenate(
                [yf, u, tau[:, None], mu, mup], axis=1)
            return coords, charts

        if kind in (LegendrianKind.G_SHARP_PLUS, LegendrianKind.G_SHARP_MINUS):
            u1, u2 = params[:, :d], params[:, d:2 * d]
            tau = -lam if kind is LegendrianKind.G_SHARP_PLUS else lam
            zeros = np.zeros((k, d))
            coords = np.concatenate(
                [u1, u2, np.full((k, 1), tau), zeros, zeros], axis=1)
            charts = np.zeros((k, 2), dtype=int)
            return coords, charts

        if kind is LegendrianKind.G_POINT:
            s = params[:, 0]
            self._check_range(s, 0.0, np.pi)
            extra = params[:, 1] if d == 2 else None
            u0 = np.broadcast_to(self.y0, (k, d))
            charts0, muhat = _cosphere_from_params(self.metric, u0, extra, sign)
            charts0 = charts0 + (self.y0_chart - CHART_NORTH)
            cf, yf, mf = run_flow(self.metric, charts0, u0, muhat, -s)
            tau = lam * np.cos(s)
            mup = -lam * np.sin(s)[:, None] * mf
            charts = cf[:, None]
            if chart_lock is not None:
                yf, mup = to_chart(chart_lock[:, 0], cf, yf, mup)
                charts = np.asarray(chart_lock[:, :1])
            coords = np.concatenate([yf, tau[:, None], mup], axis=1)
            return coords, charts

        if kind is LegendrianKind.L and self.stratum is LStratum.MAIN:
            s, sp = params[:, 0], params[:, 1]
            if np.any(np.sin(s) ** 2 + np.sin(sp) ** 2 <= 1e-14):
                raise DomainError("s and s' may not both sit in {0, pi}")
            u = params[:, 2:2 + d]
            extra = params[:, 2 + d] if d == 2 else None
            charts0, muhat = _cosphere_from_params(self.metric, u, extra, sign)
            c1, y1, m1 = run_flow(self.metric, charts0, u, muhat, sp)
            c2, y2, m2 = run_flow(self.metric, charts0, u, muhat, s)
            theta = np.arctan2(np.sin(sp), np.sin(s))
            tau_p = lam * np.cos(sp)
            tau_pp = -lam * np.cos(s)
            mu_p = lam * np.sin(sp)[:, None] * m1
            mu_pp = -lam * np.sin(s)[:, None] * m2
            charts = np.stack([c1, c2], axis=1)
            if chart_lock is not None:
                y1, mu_p = to_chart(chart_lock[:, 0], c1, y1, mu_p)
                y2, mu_pp = to_chart(chart_lock[:, 1], c2, y2, mu_pp)
                charts = np.asarray(chart_lock)
            return self._double_coords(theta, y1, y2, tau_p, tau_pp,
                                       mu_p, mu_pp), charts

        if kind is LegendrianKind.L:  # diagonal closure strata
            theta = params[:, 0]
            u = params[:, 1:1 + d]
            sgn = 1.0 if self.stratum is LStratum.DIAG_PLUS else -1.0
            tau_p = np.full(k, sgn * lam)
            tau_pp = -tau_p
            zeros = np.zeros((k, d))
            charts = np.zeros((k, 2), dtype=int)
            return self._double_coords(theta, u, u, tau_p, tau_pp,
                                       zeros, zeros), charts

        if kind in (LegendrianKind.L_SHARP_PLUS, LegendrianKind.L_SHARP_MINUS):
            theta = params[:, 0]
            u1, u2 = params[:, 1:1 + d], params[:, 1 + d:1 + 2 * d]
            tau_val = -lam if kind is LegendrianKind.L_SHARP_PLUS else lam
            tau_p = np.full(k, tau_val)
            zeros = np.zeros((k, d))
            charts = np.zeros((k, 2), dtype=int)
            return self._double_coords(theta, u1, u2, tau_p, tau_p,
                                       zeros, zeros), charts

        if kind is LegendrianKind.SC_CONORMAL_DIAG:
            u = params[:, :d]
            mu_pp = params[:, d:2 * d]
            tau_p = params[:, 2 * d]
            theta = np.full(k, np.pi / 4)
            charts = np.zeros((k, 2), dtype=int)
            return self._double_coords(theta, u, u, tau_p, -tau_p,
                                       -mu_pp, mu_pp), charts

        raise DomainError(f"unknown kind {kind}")

    @staticmethod
    def _check_range(vals, lo, hi):
        if np.any(vals < lo) or np.any(vals > hi):
            raise DomainError("flow parameter outside [0, pi]")

    @staticmethod
    def _double_coords(theta, y1, y2, tau_p, tau_pp, mu_p, mu_pp):
        ct, st = np.cos(theta), np.sin(theta)
        tau = tau_p * ct + tau_pp * st
        eta = tau_p * st - tau_pp * ct
        return np.concatenate(
            [theta[:, None], y1, y2, tau[:, None], eta[:, None],
             ct[:, None] * mu_p, st[:, None] * mu_pp], axis=1)

    # -- single-point object interface ---------------------------------------

    def sample(self, params, aux=None):
        """Evaluate at one parameter row and wrap the result up as a point
        object of the matching space."""
        params = np.atleast_2d(np.asarray(params, dtype=float))
        if params.shape[0] != 1:
            raise DomainError("sample() takes one parameter row")
        coords, charts = self.sample_coords(params, aux=aux)
        return self.point_from_coords(coords[0], charts[0])

    def point_from_coords(self, row, charts):
        sl = self.coord_slices()
        d = self.metric.dim
        if self.space == "single":
            return ScCotangentPoint(chart=int(charts[0]), y=row[sl["y"]],
                                    tau=float(row[sl["tau"]]), mu=row[sl["mu"]])
        if self.space == "poisson":
            return PoissonLegendrianPoint(
                chart_y=int(charts[0]), y=row[sl["y"]],
                chart_yp=int(charts[1]), yp=row[sl["yp"]],
                tau=float(row[sl["tau"]]), mu=row[sl["mu"]],
                mup=row[sl["mup"]], branch=self.branch_tag)
        theta = float(row[sl["theta"]])
        ct, st = np.cos(theta), np.sin(theta)
        tau, eta = float(row[sl["tau"]]), float(row[sl["eta"]])
        mu_p = row[sl["mut1"]] / ct if ct > 1e-12 else row[sl["mut1"]] * 0.0
        mu_pp = row[sl["mut2"]] / st if st > 1e-12 else row[sl["mut2"]] * 0.0
        tau_p = tau * ct + eta * st
        tau_pp = tau * st - eta * ct
        return DoubleSpacePoint(
            theta=theta, chart1=int(charts[0]), y1=row[sl["y1"]],
            chart2=int(charts[1]), y2=row[sl["y2"]],
            tau_p=tau_p, tau_pp=tau_pp, mu_p=mu_p, mu_pp=mu_pp,
            branch=self.branch_tag)


# =============================================================================
# CONTACT CERTIFICATION
# =============================================================================

def _contact_pairing(sampler: LegendrianSampler, center, velocity):
    """chi(V) for a batch of center coordinates and FD velocities."""
    sl = sampler.coord_slices()
    if sampler.space == "single":
        return velocity[:, sl["tau"]] \
            + np.sum(center[:, sl["mu"]] * velocity[:, sl["y"]], axis=1)
    if sampler.space == "poisson":
        return (velocity[:, sl["tau"]]
                + np.sum(center[:, sl["mu"]] * velocity[:, sl["y"]], axis=1)
                + np.sum(center[:, sl["mup"]] * velocity[:, sl["yp"]], axis=1))
    return (velocity[:, sl["tau"]]
            + center[:, sl["eta"]] * velocity[:, sl["theta"]]
            + np.sum(center[:, sl["mut1"]] * velocity[:, sl["y1"]], axis=1)
            + np.sum(center[:, sl["mut2"]] * velocity[:, sl["y2"]], axis=1))


def contact_defect_sweep(sampler: LegendrianSampler, params, directions,
                         aux=None, fd_step: float = FD_STEP):
    """|chi(dPhi . direction)| for a batch of (parameter, direction) pairs.

    The directional derivative dPhi.direction is a central difference at
    ``fd_step``; all stencil evaluations share one batched flow so the
    numerical sampler map is smooth across each stencil.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = directions / np.where(norms > 0, norms, 1.0)

    plan = _FlowPlan("record")
    center, charts = sampler.sample_coords(params, aux=aux, plan=plan)
    aux2 = None
    if aux:
        aux2 = {k: np.concatenate([v, v]) for k, v in aux.items()}
    stencil = np.concatenate([params + fd_step * directions,
                              params - fd_step * directions])
    lock = np.concatenate([charts, charts])
    plan.rewind()
    coords, _ = sampler.sample_coords(stencil, aux=aux2, chart_lock=lock,
                                      plan=plan)
    kk = params.shape[0]
    velocity = (coords[:kk] - coords[kk:]) / (2.0 * fd_step)
    return np.abs(_contact_pairing(sampler, center, velocity))


def contact_defect(sampler: LegendrianSampler, params, direction,
                   aux=None, fd_step: float = FD_STEP) -> float:
    """Contact-form defect of one sampler point along one parameter
    direction; <= 1e-7 certifies the Legendrian property at that sample."""
    return float(contact_defect_sweep(
        sampler, np.atleast_2d(params), np.atleast_2d(direction),
        aux=aux, fd_step=fd_step)[0])


def contact_certification(sampler: LegendrianSampler, n_samples: int,
                          rng) -> float:
    """Max contact defect over random (parameter, direction) pairs."""
    params, aux = sampler.random_params(rng, n_samples)
    dirs = rng.normal(size=params.shape)
    return float(np.max(contact_defect_sweep(sampler, params, dirs, aux=aux)))


# =============================================================================
# CHARACTERISTIC VARIETY AND BICHARACTERISTIC FLOW
# =============================================================================

def characteristic_defect(metric: BoundaryMetric, lam: float,
                          point: DoubleSpacePoint) -> float:
    """|tau'^2 + tau''^2 + |mu'|_h^2 + |mu''|_h^2 - 2 lam^2| at a
    double-space point.

    This is the boundary symbol of the product Hamiltonian minus 2 lam^2;
    in the fibred coordinates it reads tau^2 + eta^2 + |mut'|^2/cos^2(theta)
    + |mut''|^2/sin^2(theta) - 2 lam^2, whose split form used here is
    globally smooth (no degeneration at theta in {0, pi/2}).
    """
    hp = metric.dual_form(point.chart1, point.y1, point.mu_p)
    hpp = metric.dual_form(point.chart2, point.y2, point.mu_pp)
    return float(abs(point.tau_p ** 2 + point.tau_pp ** 2 + hp + hpp
                     - 2.0 * lam ** 2))


def characteristic_defect_arrays(metric, lam, charts1, y1, charts2, y2,
                                 tau_p, tau_pp, mu_p, mu_pp):
    hp = metric.conformal_scale(charts1, y1) * np.sum(mu_p * mu_p, axis=-1)
    hpp = metric.conformal_scale(charts2, y2) * np.sum(mu_pp * mu_pp, axis=-1)
    return np.abs(np.asarray(tau_p) ** 2 + np.asarray(tau_pp) ** 2
                  + hp + hpp - 2.0 * lam ** 2)


@dataclass
class BicharacteristicTrajectory:
    times: np.ndarray
    points: List[DoubleSpacePoint]
    truncated: bool = False

    @property
    def tau(self):
        return np.array([p.tau for p in self.points])


def _bichar_rhs(metric, state, charts1, charts2, d):
    """sc-Hamilton field of p = tau^2 + eta^2 + c1|mut1|^2/cos^2 th
    + c2|mut2|^2/sin^2 th:  Ydot = p_M, taudot = -M.p_M, Mdot = p_tau M - p_Y."""
    theta = state[:, 0]
    y1 = state[:, 1:1 + d]
    y2 = state[:, 1 + d:1 + 2 * d]
    tau = state[:, 1 + 2 * d]
    eta = state[:, 2 + 2 * d]
    mut1 = state[:, 3 + 2 * d:3 + 3 * d]
    mut2 = state[:, 3 + 3 * d:3 + 4 * d]

    c1, g1 = metric.conformal_scale_grad(charts1, y1)
    c2, g2 = metric.conformal_scale_grad(charts2, y2)
    ct2, st2 = np.cos(theta) ** 2, np.sin(theta) ** 2
    m1sq = np.sum(mut1 * mut1, axis=1)
    m2sq = np.sum(mut2 * mut2, axis=1)

    dp_deta = 2.0 * eta
    dp_dmut1 = 2.0 * c1[:, None] * mut1 / ct2[:, None]
    dp_dmut2 = 2.0 * c2[:, None] * mut2 / st2[:, None]
    m_dot_pm = 2.0 * (eta ** 2 + c1 * m1sq / ct2 + c2 * m2sq / st2)

    dp_dtheta = (2.0 * np.sin(theta) / np.cos(theta) ** 3) * c1 * m1sq \
        - (2.0 * np.cos(theta) / np.sin(theta) ** 3) * c2 * m2sq
    dp_dy1 = g1 * (m1sq / ct2)[:, None]
    dp_dy2 = g2 * (m2sq / st2)[:, None]

    out = np.empty_like(state)
    out[:, 0] = dp_deta
    out[:, 1:1 + d] = dp_dmut1
    out[:, 1 + d:1 + 2 * d] = dp_dmut2
    out[:, 1 + 2 * d] = -m_dot_pm
    out[:, 2 + 2 * d] = 2.0 * tau * eta - dp_dtheta
    out[:, 3 + 2 * d:3 + 3 * d] = 2.0 * tau[:, None] * mut1 - dp_dy1
    out[:, 3 + 3 * d:3 + 4 * d] = 2.0 * tau[:, None] * mut2 - dp_dy2
    return out


def bicharacteristic_flow(metric: BoundaryMetric, lam: float,
                          point: DoubleSpacePoint, t_final: float,
                          n_save: int = 17,
                          step: float = 2e-3) -> BicharacteristicTrajectory:
    """Hamilton flow of the double-space boundary symbol from a point on the
    characteristic variety.  Fixed-step RK4; chart switches as needed; flags
    truncation if theta leaves (0, pi/2)."""
    if characteristic_defect(metric, lam, point) > 1e-6:
        raise DomainError("flow start must lie on the characteristic variety")
    d = metric.dim
    state = np.concatenate(
        [[point.theta], point.y1, point.y2, [point.tau, point.eta],
         point.mut_p, point.mut_pp])[None, :]
    charts1 = np.array([point.chart1])
    charts2 = np.array([point.chart2])

    n_steps = max(8, int(np.ceil(abs(t_final) / step)))
    h = t_final / n_steps
    save_every = max(1, n_steps // max(1, n_save - 1))
    times = [0.0]
    points = [point]
    truncated = False
    for i in range(1, n_steps + 1):
        k1 = _bichar_rhs(metric, state, charts1, charts2, d)
        k2 = _bichar_rhs(metric, state + 0.5 * h * k1, charts1, charts2, d)
        k3 = _bichar_rhs(metric, state + 0.5 * h * k2, charts1, charts2, d)
        k4 = _bichar_rhs(metric, state + h * k3, charts1, charts2, d)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not (1e-3 < state[0, 0] < np.pi / 2 - 1e-3):
            truncated = True
            break
        # chart switches for either factor point
        for (cs, ysl, msl) in ((charts1, slice(1, 1 + d),
                                slice(3 + 2 * d, 3 + 3 * d)),
                               (charts2, slice(1 + d, 1 + 2 * d),
                                slice(3 + 3 * d, 3 + 4 * d))):
            if np.sum(state[0, ysl] ** 2) > 3.0:
                u_new, m_new = geo.chart_transition(state[:, ysl], state[:, msl])
                state[:, ysl] = u_new
                state[:, msl] = m_new
                cs[0] = 1 - cs[0]
        if i % save_every == 0 or i == n_steps:
            times.append(i * h)
            points.append(_double_point_from_state(
                state[0], int(charts1[0]), int(charts2[0]), d,
                point.branch))
    return BicharacteristicTrajectory(times=np.array(times), points=points,
                                      truncated=truncated)


def _double_point_from_state(row, chart1, chart2, d, branch):
    theta = float(row[0])
    ct, st = np.cos(theta), np.sin(theta)
    tau, eta = float(row[1 + 2 * d]), float(row[2 + 2 * d])
    mut1 = row[3 + 2 * d:3 + 3 * d]
    mut2 = row[3 + 3 * d:3 + 4 * d]
    return DoubleSpacePoint(
        theta=theta, chart1=chart1, y1=row[1:1 + d],
        chart2=chart2, y2=row[1 + d:1 + 2 * d],
        tau_p=tau * ct + eta * st, tau_pp=tau * st - eta * ct,
        mu_p=mut1 / ct, mu_pp=mut2 / st, branch=branch)


# =============================================================================
# NEAREST POINT ON L
# =============================================================================

class LNearestIndex:
    """k-d tree over a dense L sample grid with local parameter refinement.

    The tree seeds a Gauss-Newton projection in the sampler parameters, so
    the reported distance is to the (locally) nearest point of L itself,
    not just of the finite grid.
    """

    def __init__(self, metric: BoundaryMetric, lam: float, grid_size: int,
                 rng):
        from scipy.spatial import cKDTree
        self.sampler = LegendrianSampler(LegendrianKind.L, lam, metric)
        self.metric = metric
        self.lam = lam
        self.params, self.aux = self.sampler.random_params(rng, grid_size)
        feats = self._features(self.params, self.aux)
        self.tree = cKDTree(feats)

    def _features(self, params, aux):
        coords, charts = self.sampler.sample_coords(params, aux=aux)
        return _double_features_from_coords(
            self.sampler, coords, charts, self.metric, self.lam)

    def grid_distance(self, point: DoubleSpacePoint) -> float:
        feat = _point_features(point, self.metric, self.lam)
        dist, _ = self.tree.query(feat)
        return float(dist)

    def distance(self, point: DoubleSpacePoint, n_iter: int = 14):
        """Refined distance from ``point`` to L (feature-space Euclidean)."""
        feat = _point_features(point, self.metric, self.lam)
        _, idx = self.tree.query(feat)
        x = self.params[idx].copy()
        aux = {k: v[idx:idx + 1] for k, v in self.aux.items()}
        m = x.size
        delta = 1e-6
        best = np.inf
        for _ in range(n_iter):
            stencil = [x]
            for j in range(m):
                e = np.zeros(m)
                e[j] = delta
                stencil.extend([x + e, x - e])
            fs = self._features(np.array(stencil),
                                {k: np.repeat(v, 2 * m + 1) for k, v in aux.items()})
            f0 = fs[0] - feat
            best = min(best, float(np.linalg.norm(f0)))
            jac = np.stack([(fs[1 + 2 * j] - fs[2 + 2 * j]) / (2 * delta)
                            for j in range(m)], axis=-1)
            step, *_ = np.linalg.lstsq(jac, -f0, rcond=None)
            x_new = x + np.clip(step, -0.3, 0.3)
            x_new[0] = np.clip(x_new[0], 1e-4, np.pi - 1e-4)
            x_new[1] = np.clip(x_new[1], 1e-4, np.pi - 1e-4)
            if np.linalg.norm(x_new - x) < 1e-12:
                x = x_new
                break
            x = x_new
        fs = self._features(x[None, :], aux)
        best = min(best, float(np.linalg.norm(fs[0] - feat)))
        return best, x


def _double_features_from_coords(sampler, coords, charts, metric, lam):
    sl = sampler.coord_slices()
    theta = coords[:, sl["theta"]]
    ct, st = np.cos(theta), np.sin(theta)
    tau, eta = coords[:, sl["tau"]], coords[:, sl["eta"]]
    mu_p = coords[:, sl["mut1"]] / ct[:, None]
    mu_pp = coords[:, sl["mut2"]] / st[:, None]
    return double_point_features(
        metric, lam, theta, charts[:, 0], coords[:, sl["y1"]],
        charts[:, 1], coords[:, sl["y2"]],
        tau * ct + eta * st, tau * st - eta * ct, mu_p, mu_pp)


def _point_features(point: DoubleSpacePoint, metric, lam):
    return double_point_features(
        metric, lam, np.array([point.theta]),
        np.array([point.chart1]), point.y1[None, :],
        np.array([point.chart2]), point.y2[None, :],
        np.array([point.tau_p]), np.array([point.tau_pp]),
        point.mu_p[None, :], point.mu_pp[None, :])[0]


# =============================================================================
# CONIC LIMIT PROFILE
# =============================================================================

def conic_limit_profile(metric: BoundaryMetric, lam: float, sigma: float,
                        s_values, base_params, aux=None):
    """Sample L along the path s -> 0 with sin(s') = sigma sin(s), s' -> pi.

    Returns a dict of arrays tracing the conic degeneration: the h-norms
    |mu'|, |mu''|, their ratio, sigma, tau', tau'', and the blow-up data
    (unit covector direction of mu'' embedded, plus |mu''|).
    """
    s_values = np.asarray(s_values, dtype=float)
    if np.any(sigma * np.sin(s_values) > 1.0):
        raise DomainError("sigma * sin(s) must stay below 1 along the path")
    sampler = LegendrianSampler(LegendrianKind.L, lam, metric)
    k = len(s_values)
    sp = np.pi - np.arcsin(sigma * np.sin(s_values))
    base = np.broadcast_to(np.asarray(base_params, dtype=float),
                           (k, sampler.param_dim - 2))
    params = np.concatenate([s_values[:, None], sp[:, None], base], axis=1)
    if aux:
        aux = {key: np.broadcast_to(v, (k,)) for key, v in aux.items()}
    coords, charts = sampler.sample_coords(params, aux=aux)
    sl = sampler.coord_slices()
    theta = coords[:, sl["theta"]]
    ct, st = np.cos(theta), np.sin(theta)
    tau, eta = coords[:, sl["tau"]], coords[:, sl["eta"]]
    mu_p = coords[:, sl["mut1"]] / ct[:, None]
    mu_pp = coords[:, sl["mut2"]] / st[:, None]
    norm_p = np.sqrt(metric.conformal_scale(charts[:, 0], coords[:, sl["y1"]])
                     * np.sum(mu_p * mu_p, axis=1))
    norm_pp = np.sqrt(metric.conformal_scale(charts[:, 1], coords[:, sl["y2"]])
                      * np.sum(mu_pp * mu_pp, axis=1))
    _, w_pp = cosphere_embed(metric, charts[:, 1], coords[:, sl["y2"]], mu_pp)
    muhat_pp = w_pp / np.where(norm_pp > 0, norm_pp, 1.0)[:, None]
    return {
        "s": s_values, "s_prime": sp, "sigma": np.tan(theta),
        "norm_mu_p": norm_p, "norm_mu_pp": norm_pp,
        "ratio": norm_p / norm_pp,
        "tau_p": tau * ct + eta * st, "tau_pp": tau * st - eta * ct,
        "muhat_pp_embedded": muhat_pp,
    }


# =============================================================================
# PROPAGATION SET
# =============================================================================

@dataclass
class PropagationSet:
    """Discretized forward-propagation set: the outgoing section G#(lam),
    the input wavefront points, and the forward bicharacteristic rays from
    the on-shell inputs."""
    lam: float
    seeds: List[ScCotangentPoint]
    include_g_sharp: bool
    ray_charts: List[np.ndarray]
    ray_y: List[np.ndarray]
    ray_tau: List[np.ndarray]
    ray_mu: List[np.ndarray]

    def all_points(self, metric: BoundaryMetric):
        """(z, w, tau) arrays for every discretized ray point (embedded)."""
        zs, ws, taus = [], [], []
        for charts, y, tau, mu in zip(self.ray_charts, self.ray_y,
                                      self.ray_tau, self.ray_mu):
            z, w = cosphere_embed(metric, charts, y, mu)
            zs.append(z)
            ws.append(w)
            taus.append(tau)
        if not zs:
            d1 = metric.dim + 1
            return np.zeros((0, d1)), np.zeros((0, d1)), np.zeros(0)
        return np.concatenate(zs), np.concatenate(ws), np.concatenate(taus)

    def characteristic_defects(self, metric: BoundaryMetric):
        out = []
        for charts, y, tau, mu in zip(self.ray_charts, self.ray_y,
                                      self.ray_tau, self.ray_mu):
            h = metric.conformal_scale(charts, y) * np.sum(mu * mu, axis=1)
            out.append(np.abs(tau ** 2 + h - self.lam ** 2))
        return np.concatenate(out) if out else np.zeros(0)


def propagation_set(metric: BoundaryMetric, lam: float,
                    wf_in: Sequence[ScCotangentPoint],
                    dt: float = 0.02,
                    onshell_tol: float = 1e-8) -> PropagationSet:
    """Forward propagation set of an input wavefront.

    On-shell seeds (tau'^2 + h(y', mu') = lam^2) spawn the ray

        tau(t) = lam cos(s + t),
        (y, mu)(t) = lam sin(s + t) . exp(t H_{h/2})(y', muhat'),

    for t in (0, pi - s], which terminates on the outgoing section
    tau = -lam.  Off-shell seeds contribute only themselves.  The set always
    contains G#(lam) (carried by the ``include_g_sharp`` flag) and wf_in.
    """
    ray_charts, ray_y, ray_tau, ray_mu = [], [], [], []
    for seed in wf_in:
        h = float(metric.dual_form(seed.chart, seed.y, seed.mu))
        defect = abs(seed.tau ** 2 + h - lam ** 2)
        mu_norm = np.sqrt(h)
        ray_charts.append(np.array([seed.chart]))
        ray_y.append(seed.y[None, :])
        ray_tau.append(np.array([seed.tau]))
        ray_mu.append(seed.mu[None, :])
        if defect > onshell_tol * max(1.0, lam ** 2) or mu_norm < 1e-12:
            continue
        s = float(np.arctan2(mu_norm, seed.tau))
        ts = np.arange(dt, np.pi - s, dt)
        ts = np.append(ts, np.pi - s)  # rays terminate on tau = -lam
        muhat = seed.mu / mu_norm
        k = len(ts)
        charts, Y, MU, _ = flow_batch(
            metric, np.full(k, seed.chart), np.broadcast_to(seed.y, (k, metric.dim)),
            np.broadcast_to(muhat, (k, metric.dim)), ts)
        ray_charts.append(charts)
        ray_y.append(Y)
        ray_tau.append(lam * np.cos(s + ts))
        ray_mu.append(lam * np.sin(s + ts)[:, None] * MU)
    return PropagationSet(lam=lam, seeds=list(wf_in), include_g_sharp=True,
                          ray_charts=ray_charts, ray_y=ray_y,
                          ray_tau=ray_tau, ray_mu=ray_mu)
