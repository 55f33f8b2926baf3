# radial.py
"""
Separable (partial-wave) scattering for H = Delta + V on compactified R^n
with short-range radial V: generalized eigenfunctions with extracted
incoming/outgoing coefficients, S-matrix eigenvalues, mode-level Poisson
and resolvent operators, and the jump identity built from them.

For the angular mode l (boundary-Laplacian eigenvalue mu_l = l(l+n-2)),
the substitution w = r^{(n-1)/2} u reduces the radial equation

    -u'' - ((n-1)/r) u' + (mu_l / r^2 + V) u = lam^2 u

to the Bessel-normal form

    w'' = [ (nu^2 - 1/4)/r^2 + V - lam^2 ] w,     nu = l + (n-2)/2,

with the exact inverse-square family folded into an effective order
nu_eff = sqrt(nu^2 + c0), c0 = lim r^2 V(r).  The regular solution starts
from a three-term Frobenius series at r0 = 1e-3/lam and is integrated
outward (DOP853, rtol 1e-12) with segment-wise rescaling so the huge
centrifugal growth at large l never overflows.  Coefficients (a-, a+) of
e^{-/+ i lam r} r^{-(n-1)/2} come from a least-squares match against the
exact incoming/outgoing free solutions sqrt(pi lam r / 2) H^(2/1)_nu(lam r)
over an outer window clear of both the potential and the centrifugal
turning point.

The geometric S-matrix eigenvalue is s_l = a_+/a_-; for V = 0 it equals
i^{1-n} (-1)^l exactly (the antipodal map acts by (-1)^l on degree-l
spherical harmonics), and the phase shift delta_l is measured against that
free value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.special import hankel1, hankel2, jv

_RESCALE_CHUNK = 48


class ResolutionError(RuntimeError):
    """Coefficient extraction failed at the requested accuracy."""


class ResonanceError(RuntimeError):
    """Wronskian of regular/Jost pair vanished (resonant energy)."""


# =============================================================================
# POTENTIAL FAMILIES
# =============================================================================

@dataclass(frozen=True)
class RadialPotential:
    """Radial short-range potential with decay-class metadata.

    ``c0`` is the exact r^2 V(r) -> c0 limit (nonzero only for the
    inverse-square family, which enters the solver through the shifted
    Frobenius/Bessel order rather than through samples near 0);
    ``origin_taylor`` gives the first two Taylor coefficients of
    V - c0/r^2 at the origin, used by the series start.
    """
    family: str
    func: Callable[[np.ndarray], np.ndarray]
    c0: float = 0.0
    origin_taylor: Tuple[float, float] = (0.0, 0.0)
    decay_scale: float = 1.0
    label: str = ""

    def __call__(self, r):
        return self.func(np.asarray(r, dtype=float))

    def decay_radius(self, tol: float) -> float:
        """Radius beyond which |V| <= tol (for matching-window placement)."""
        if self.family == "free":
            return 0.0
        r = self.decay_scale
        for _ in range(200):
            if abs(float(self(np.array([r])))) <= tol:
                return r
            r *= 1.3
        return r


def free_potential() -> RadialPotential:
    return RadialPotential(family="free", func=lambda r: np.zeros_like(r),
                           label="V=0")


def bump_potential(strength: float = 0.8, center: float = 1.2,
                   width: float = 1.0) -> RadialPotential:
    """Compactly supported smooth bump on [center-width, center+width]."""
    if center - width < 0.05:
        raise ValueError("bump must stay away from the origin")

    def v(r):
        x = (r - center) / width
        inside = np.abs(x) < 1.0
        x2 = np.where(inside, x * x, 0.0)
        return np.where(inside, strength * np.exp(1.0 - 1.0 / (1.0 - x2)), 0.0)

    return RadialPotential(family="bump", func=v,
                           decay_scale=center + width,
                           label=f"bump({strength},{center},{width})")


def inverse_square_potential(c: float = 1.0) -> RadialPotential:
    """V = c / r^2: exactly solvable through the shifted Bessel order
    nu -> sqrt(nu^2 + c); the solver uses the scale-invariant regular
    branch (a smooth cap below the start radius would only perturb it at
    the cap scale)."""
    return RadialPotential(family="inverse_square",
                           func=lambda r: c / r ** 2, c0=c,
                           decay_scale=1.0, label=f"c/r^2(c={c})")


def exponential_potential(c: float = 0.5) -> RadialPotential:
    return RadialPotential(family="exponential",
                           func=lambda r: c * np.exp(-r),
                           origin_taylor=(c, -c), decay_scale=5.0,
                           label=f"{c}*exp(-r)")


# =============================================================================
# MODE PROBLEM / SOLUTION
# =============================================================================

@dataclass(frozen=True)
class ModeProblem:
    """One angular mode: dimension n, angular momentum l, energy lam^2."""
    n: int
    l: int
    lam: float
    potential: RadialPotential = field(default_factory=free_potential)
    n_grid: int = 3000

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError("n must be 2 or 3")
        if self.l < 0 or self.lam <= 0:
            raise ValueError("need l >= 0 and lam > 0")

    @property
    def mu_l(self) -> float:
        return self.l * (self.l + self.n - 2)

    @property
    def nu0(self) -> float:
        return self.l + (self.n - 2) / 2.0

    @property
    def nu(self) -> float:
        return float(np.sqrt(self.nu0 ** 2 + self.potential.c0))

    @property
    def r0(self) -> float:
        return 1e-3 / self.lam

    @property
    def r_max(self) -> float:
        r_pot = 2.5 * self.potential.decay_radius(1e-13 * self.lam ** 2)
        return max((40.0 + 2.0 * self.nu) / self.lam, r_pot, 10.0)

    def matching_window(self) -> Tuple[float, float]:
        """Outer window clear of the potential and the centrifugal barrier."""
        r_hi = self.r_max
        r_lo = max(r_hi / 10.0, (1.35 * self.nu + 2.0) / self.lam,
                   1.05 * self.potential.decay_radius(1e-12 * self.lam ** 2))
        if r_lo >= 0.95 * r_hi:
            raise ResolutionError("no usable matching window; "
                                  "increase r_max")
        return r_lo, r_hi

    def grid(self, extra_r=None) -> np.ndarray:
        g = np.geomspace(self.r0, self.r_max, self.n_grid)
        if extra_r is not None:
            g = np.unique(np.concatenate([g, np.asarray(extra_r, float)]))
        return g


@dataclass(frozen=True)
class ModeSolution:
    """Radial eigenfunction samples with extracted asymptotic data.

    ``u`` are samples of the eigenfunction on ``r``; (a_minus, a_plus) are
    the coefficients of e^{-/+ i lam r} r^{-(n-1)/2}.  For real potentials
    and the regular solution |a_+| = |a_-| (flux conservation).
    """
    problem: ModeProblem
    r: np.ndarray
    u: np.ndarray
    a_minus: complex
    a_plus: complex
    match_residual: float

    def scaled(self, factor: complex) -> "ModeSolution":
        return ModeSolution(problem=self.problem, r=self.r,
                            u=self.u * factor,
                            a_minus=self.a_minus * factor,
                            a_plus=self.a_plus * factor,
                            match_residual=self.match_residual)

    def interp(self, r_new):
        """Complex cubic interpolation of u onto new radii."""
        from scipy.interpolate import CubicSpline
        spl_re = CubicSpline(self.r, self.u.real)
        spl_im = CubicSpline(self.r, self.u.imag)
        return spl_re(r_new) + 1j * spl_im(r_new)


# =============================================================================
# ODE INTEGRATION (segment-rescaled)
# =============================================================================

def _w_rhs(problem):
    nu = problem.nu
    lam2 = problem.lam ** 2
    pot = problem.potential
    c0 = pot.c0

    def rhs(r, y):
        v_eff = (nu ** 2 - 0.25) / r ** 2 + float(pot(np.array([r]))) \
            - c0 / r ** 2 - lam2
        return [y[1], v_eff * y[0]]

    return rhs


def _integrate_scaled(problem, r_grid, y0, forward=True):
    """Integrate w'' = Q w across r_grid with segment-wise rescaling.

    Returns (w, log_scale) where the true solution is w * exp(log_scale -
    log_scale_ref) up to one global constant; the rescaling keeps the huge
    centrifugal growth at large l inside floating-point range.
    """
    rhs = _w_rhs(problem)
    n = len(r_grid)
    order = range(0, n) if forward else range(n - 1, -1, -1)
    idx = np.fromiter(order, dtype=int)
    w = np.zeros(n)
    dw = np.zeros(n)
    logs = np.zeros(n)
    w[idx[0]], dw[idx[0]] = y0
    log_acc = 0.0
    pos = 0
    while pos < n - 1:
        stop = min(pos + _RESCALE_CHUNK, n - 1)
        seg = idx[pos:stop + 1]
        r_seg = r_grid[seg]
        sol = solve_ivp(rhs, (r_seg[0], r_seg[-1]),
                        [w[seg[0]], dw[seg[0]]], t_eval=r_seg,
                        method="DOP853", rtol=1e-12, atol=1e-290)
        if not sol.success:
            raise ResolutionError(f"mode integration failed: {sol.message}")
        w[seg] = sol.y[0]
        dw[seg] = sol.y[1]
        logs[seg] = log_acc
        scale = max(abs(w[seg[-1]]), abs(dw[seg[-1]]) * r_seg[-1], 1e-290)
        w[seg[-1]] /= scale
        dw[seg[-1]] /= scale
        log_acc += np.log(scale)
        logs[seg[-1]] = log_acc
        pos = stop
    # undo the final point's pre-division so (w, logs) is consistent:
    # w[j] * exp(logs[j]) is the true solution for every j
    w[idx[-1]] *= np.exp(logs[idx[-1]] - log_acc)
    logs[idx[-1]] = log_acc
    return w, dw, logs


def _reconstruct(w, logs, ref_log):
    return w * np.exp(logs - ref_log)


# =============================================================================
# FREE BASIS AND MATCHING
# =============================================================================

def _free_basis(nu, lam, r):
    """Exact incoming/outgoing free solutions of the normal-form equation:
    sqrt(pi lam r/2) H^(2)_nu, H^(1)_nu -> e^{-/+ i(lam r - beta)},
    beta = nu pi/2 + pi/4."""
    x = lam * r
    pref = np.sqrt(np.pi * x / 2.0)
    return pref * hankel2(nu, x), pref * hankel1(nu, x)


def solve_mode(problem: ModeProblem, extra_r=None) -> ModeSolution:
    """Regular solution of the mode equation with asymptotic coefficients.

    Starts from the Frobenius series w ~ r^{nu+1/2}(1 + c2 r^2 + c3 r^3)
    at r0, integrates outward, and least-squares matches against the exact
    free incoming/outgoing pair over the outer window.  The returned
    samples are normalized so max |w| = 1 on the window.
    """
    lam, nu = problem.lam, problem.nu
    r_grid = problem.grid(extra_r)
    r0 = r_grid[0]
    v0, v1 = problem.potential.origin_taylor
    c2 = (v0 - lam ** 2) / (4.0 * (nu + 1.0))
    c3 = v1 / (6.0 * nu + 9.0)
    w0 = 1.0 + c2 * r0 ** 2 + c3 * r0 ** 3
    dw0 = (nu + 0.5) / r0 * w0 + (2.0 * c2 * r0 + 3.0 * c3 * r0 ** 2)
    w, _, logs = _integrate_scaled(problem, r_grid, (w0, dw0), forward=True)

    lo, hi = problem.matching_window()
    mask = (r_grid >= lo) & (r_grid <= hi)
    ref_log = logs[mask].max()
    w_phys = _reconstruct(w, logs, ref_log)
    norm = np.max(np.abs(w_phys[mask]))
    w_phys = w_phys / norm

    basis_in, basis_out = _free_basis(nu, lam, r_grid[mask])
    design = np.stack([basis_in, basis_out], axis=1)
    coef, *_ = np.linalg.lstsq(design, w_phys[mask].astype(complex),
                               rcond=None)
    resid = np.linalg.norm(design @ coef - w_phys[mask]) \
        / np.linalg.norm(w_phys[mask])
    if resid > 1e-7:
        raise ResolutionError(
            f"asymptotic matching residual {resid:.2e} above 1e-7 "
            f"(l={problem.l}, lam={lam})")
    beta = nu * np.pi / 2.0 + np.pi / 4.0
    a_minus = coef[0] * np.exp(1j * beta)
    a_plus = coef[1] * np.exp(-1j * beta)

    m = (problem.n - 1) / 2.0
    u = w_phys * r_grid ** (-m)
    return ModeSolution(problem=problem, r=r_grid, u=u.astype(complex),
                        a_minus=complex(a_minus), a_plus=complex(a_plus),
                        match_residual=float(resid))


def scattering_eigenvalue(problem: ModeProblem,
                          solution: Optional[ModeSolution] = None) -> complex:
    """Geometric S-matrix eigenvalue s_l = a_+/a_-.

    Free case: exactly i^{1-n} (-1)^l.
    """
    sol = solution or solve_mode(problem)
    return sol.a_plus / sol.a_minus


def free_eigenvalue(n: int, l: int) -> complex:
    return (1j) ** (1 - n) * (-1.0) ** l


def phase_shift(problem: ModeProblem,
                solution: Optional[ModeSolution] = None) -> float:
    """delta_l with s_l = s_l(free) exp(2 i delta_l), in (-pi/2, pi/2]."""
    s = scattering_eigenvalue(problem, solution)
    ratio = s / free_eigenvalue(problem.n, problem.l)
    return float(np.angle(ratio) / 2.0)


def poisson_apply_mode(problem: ModeProblem, a: complex,
                       solution: Optional[ModeSolution] = None) -> ModeSolution:
    """Generalized eigenfunction with incoming coefficient a_- = a (so that
    a_+ = s_l a)."""
    sol = solution or solve_mode(problem)
    if a == 0:
        return sol.scaled(0.0)
    return sol.scaled(a / sol.a_minus)


# =============================================================================
# JOST SOLUTIONS AND THE MODE RESOLVENT
# =============================================================================

@dataclass(frozen=True)
class JostSolution:
    problem: ModeProblem
    sign: int
    r: np.ndarray
    w: np.ndarray  # complex samples of the normal-form Jost solution


def jost_solution(problem: ModeProblem, sign: int,
                  extra_r=None) -> JostSolution:
    """Solution asymptotic to the pure outgoing (+) / incoming (-) free
    branch, integrated inward from r_max."""
    lam, nu = problem.lam, problem.nu
    r_grid = problem.grid(extra_r)
    r_end = r_grid[-1]
    x = lam * r_end
    h_fun = hankel1 if sign > 0 else hankel2
    h = h_fun(nu, x)
    hp = h_fun(nu - 1.0, x) - nu / x * h_fun(nu, x)
    pref = np.sqrt(np.pi * x / 2.0)
    w_end = pref * h
    dw_end = np.sqrt(np.pi * lam / 2.0) * (0.5 / np.sqrt(x) * h
                                           + np.sqrt(x) * hp) * lam / lam \
        * 1.0
    # d/dr [sqrt(pi lam r/2) H(lam r)] = sqrt(pi lam/2)(H/(2 sqrt(x)) +
    #                                     sqrt(x) H') * lam / sqrt(lam)
    dw_end = np.sqrt(np.pi / 2.0) * np.sqrt(lam) * lam \
        * (h / (2.0 * np.sqrt(x)) + np.sqrt(x) * hp)

    wr, _, logs_r = _integrate_scaled(problem, r_grid,
                                      (w_end.real, dw_end.real),
                                      forward=False)
    wi, _, logs_i = _integrate_scaled(problem, r_grid,
                                      (w_end.imag, dw_end.imag),
                                      forward=False)
    ref = max(logs_r[-1], logs_i[-1])
    w = _reconstruct(wr, logs_r, ref) + 1j * _reconstruct(wi, logs_i, ref)
    scale = np.exp(-ref)  # undo: reconstruct relative to the endpoint init
    return JostSolution(problem=problem, sign=sign, r=r_grid, w=w / scale / 1.0
                        if False else w * np.exp(ref))


def _wronskian(r, w1, w1p, w2, w2p):
    return w1 * w2p - w1p * w2


def resolvent_apply_mode(problem: ModeProblem, f: Callable,
                         support: Tuple[float, float], sign: int,
                         eval_r=None, n_panel: int = 24,
                         panel_order: int = 20):
    """u = R(lam^2 +/- i0) f at mode level by variation of parameters.

    ``f`` is the radial mode forcing (compactly supported in ``support``);
    returns (r, u) on the mode grid augmented with ``eval_r`` and the Gauss
    nodes used for the source quadrature.  Raises ResonanceError when the
    regular/Jost Wronskian degenerates.
    """
    a, b = support
    nodes, weights = leggauss(panel_order)
    edges = np.linspace(a, b, n_panel + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1] - edges[0])
    q_r = (mids[:, None] + half * nodes[None, :]).ravel()
    q_w = np.broadcast_to(half * weights, (n_panel, panel_order)).ravel()

    extra = q_r if eval_r is None else np.concatenate([q_r, eval_r])
    reg = solve_mode(problem, extra_r=extra)
    jost = jost_solution(problem, sign, extra_r=extra)
    r = reg.r
    m = (problem.n - 1) / 2.0
    w_reg = reg.u * r ** m
    w_jost = jost.w

    # Wronskian from finite differences at a window point (both solutions
    # are exact there to solver tolerance)
    lo, hi = problem.matching_window()
    k = np.searchsorted(r, 0.5 * (lo + hi))
    dr = r[k + 1] - r[k - 1]
    wron = (w_reg[k] * (w_jost[k + 1] - w_jost[k - 1])
            - w_jost[k] * (w_reg[k + 1] - w_reg[k - 1])) / dr
    if abs(wron) < 1e-10:
        raise ResonanceError(f"Wronskian {abs(wron):.2e} below 1e-10")

    g = q_r ** m * f(q_r)
    phi_q = np.interp(q_r, r, w_reg.real) + 1j * np.interp(q_r, r, w_reg.imag)
    jost_q = np.interp(q_r, r, w_jost.real) + 1j * np.interp(q_r, r, w_jost.imag)

    # cumulative source integrals against both solutions
    i_phi = np.zeros(len(r), dtype=complex)   # int_{0}^{r} phi g
    i_jost = np.zeros(len(r), dtype=complex)  # int_{r}^{inf} jost g
    contrib_phi = q_w * phi_q * g
    contrib_jost = q_w * jost_q * g
    order_q = np.argsort(q_r)
    qs = q_r[order_q]
    cum_phi = np.concatenate([[0.0], np.cumsum(contrib_phi[order_q])])
    cum_jost_total = np.sum(contrib_jost)
    cum_jost = np.concatenate([[0.0], np.cumsum(contrib_jost[order_q])])
    pos = np.searchsorted(qs, r, side="right")
    i_phi = cum_phi[pos]
    i_jost = cum_jost_total - cum_jost[pos]

    w_sol = -(w_jost * i_phi + w_reg * i_jost) / wron
    u = w_sol * r ** (-m)
    return r, u


def operator_residual(problem: ModeProblem, r, u, f: Callable,
                      window: Tuple[float, float], n_pts: int = 1200) -> float:
    """Relative residual of (H_l - lam^2) u - f on a uniform window, with a
    4th-order finite-difference Laplacian (direct test of the defining
    property of the mode resolvent)."""
    from scipy.interpolate import CubicSpline
    lo, hi = window
    rr = np.linspace(lo, hi, n_pts)
    h = rr[1] - rr[0]
    spl = CubicSpline(r, u)
    uu = spl(rr)
    upp = np.zeros_like(uu)
    up = np.zeros_like(uu)
    upp[2:-2] = (-uu[4:] + 16 * uu[3:-1] - 30 * uu[2:-2]
                 + 16 * uu[1:-3] - uu[:-4]) / (12 * h ** 2)
    up[2:-2] = (-uu[4:] + 8 * uu[3:-1] - 8 * uu[1:-3] + uu[:-4]) / (12 * h)
    inner = slice(2, -2)
    ri = rr[inner]
    lhs = (-upp[inner] - (problem.n - 1) / ri * up[inner]
           + (problem.mu_l / ri ** 2
              + problem.potential(ri) - problem.lam ** 2) * uu[inner])
    rhs = f(ri)
    scale = max(np.max(np.abs(rhs)), np.max(np.abs(lhs)))
    return float(np.max(np.abs(lhs - rhs)) / scale)


def jump_identity_mode(problem: ModeProblem, f: Callable,
                       support: Tuple[float, float]) -> float:
    """Relative residual of [R_+ - R_-] f = (i / 2 lam) u <f, u>, where u is
    the mode Poisson solution normalized to incoming coefficient 1 and the
    pairing is in L^2(r^{n-1} dr)."""
    r, u_plus = resolvent_apply_mode(problem, f, support, +1)
    _, u_minus = resolvent_apply_mode(problem, f, support, -1)
    lhs = u_plus - u_minus

    sol = solve_mode(problem, extra_r=r)
    u_p = poisson_apply_mode(problem, 1.0, solution=sol)
    pairing = mode_pairing(problem, f, support, solution=u_p)
    rhs = (1j / (2.0 * problem.lam)) * u_p.interp(r) * pairing

    nrm = np.sqrt(np.trapz(np.abs(lhs) ** 2 * r ** (problem.n - 1), r))
    err = np.sqrt(np.trapz(np.abs(lhs - rhs) ** 2 * r ** (problem.n - 1), r))
    return float(err / nrm) if nrm > 0 else float(err)


def mode_pairing(problem: ModeProblem, f: Callable,
                 support: Tuple[float, float],
                 solution: Optional[ModeSolution] = None,
                 n_panel: int = 24, panel_order: int = 20) -> complex:
    """<f, u>_{L^2(r^{n-1} dr)} against a mode solution (Gauss panels over
    the support of f)."""
    sol = solution or poisson_apply_mode(problem, 1.0)
    a, b = support
    nodes, weights = leggauss(panel_order)
    edges = np.linspace(a, b, n_panel + 1)
    total = 0.0 + 0.0j
    for lo, hi in zip(edges[:-1], edges[1:]):
        q = 0.5 * (hi + lo) + 0.5 * (hi - lo) * nodes
        wq = 0.5 * (hi - lo) * weights
        total += np.sum(wq * f(q) * np.conj(sol.interp(q))
                        * q ** (problem.n - 1))
    return complex(total)


# =============================================================================
# FREE TRANSFORM ORACLE (Hankel)
# =============================================================================

def hankel_mode_transform(n: int, l: int, f: Callable,
                          support: Tuple[float, float], lam,
                          n_panel: int = 32, panel_order: int = 24):
    """G(lam) = int f(r) J_nu(lam r) r^{n/2} dr: the free mode transform
    whose Parseval identity int lam |G|^2 dlam = ||f||^2 grounds the
    Stone/Parseval checks."""
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    nu = l + (n - 2) / 2.0
    a, b = support
    nodes, weights = leggauss(panel_order)
    edges = np.linspace(a, b, n_panel + 1)
    out = np.zeros(lam.shape, dtype=float)
    for lo, hi in zip(edges[:-1], edges[1:]):
        q = 0.5 * (hi + lo) + 0.5 * (hi - lo) * nodes
        wq = 0.5 * (hi - lo) * weights
        out += (jv(nu, np.outer(lam, q)) * (wq * f(q) * q ** (n / 2.0))).sum(axis=1)
    return out if out.size > 1 else float(out[0])


def mode_norm_sq(n: int, f: Callable, support: Tuple[float, float],
                 n_panel: int = 32, panel_order: int = 24) -> float:
    """||f||^2 in L^2(r^{n-1} dr)."""
    a, b = support
    nodes, weights = leggauss(panel_order)
    edges = np.linspace(a, b, n_panel + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        q = 0.5 * (hi + lo) + 0.5 * (hi - lo) * nodes
        wq = 0.5 * (hi - lo) * weights
        total += float(np.sum(wq * np.abs(f(q)) ** 2 * q ** (n - 1)))
    return total
