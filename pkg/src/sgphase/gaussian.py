"""Gaussian-ansatz evolution of the branch wavepackets.

Each branch stays Gaussian, psi = exp(-A z^2/2 + B z + C), because its
potential is at most quadratic in z.  The width coefficient A obeys a
Riccati equation i dA/dt = (hbar/m) A^2 - 2 V2/hbar whose solution under a
constant harmonic curvature V2 = (m/2)(nu omega_s)^2 ... nu^2 is known in
closed form; B and C follow by quadrature.  The closed form is evaluated
here in a cancellation-free rational-trigonometric arrangement that
degenerates smoothly to the free-packet law as omega_s -> 0.

The piecewise regime structure (packet overlap vs separation, optional
nuclear pulsation boost) is handled by chaining the closed form across
regime intervals with A continuous at every switch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .params import Branch, ExperimentConfig
from .params import omega_s as omega_s_of
from .potential import NUCLEON_SCALE, TaylorCoeffs, effective_omega_s
from .trajectories import gradient_force, lambda_of_t, separation_window


class IntegrationError(RuntimeError):
    """Adaptive ODE step failed (step-size underflow / stiffness)."""


# ---------------------------------------------------------------------------
# closed-form propagation of A

def propagate_a(A0: complex, nu: float, omega: float, mass: float,
                hbar: float, dt: float) -> complex:
    """Advance the width coefficient A by dt under constant curvature.

    For omega > 0 the Riccati solution is written as

        A(dt) = nk (A0 cos th + i nk sin th) / (nk cos th + i A0 sin th),
        nk = nu m omega / hbar,  th = nu omega dt,

    algebraically identical to the textbook (1 + c0 e^{-2 i th}) form but
    free of the 1 - c0 cancellation, so it remains accurate down to
    omega -> 0 where it reduces to the free law A0 / (1 + i hbar A0 dt/m).
    """
    if omega == 0.0 or nu == 0.0:
        return A0 / (1.0 + 1j * hbar * A0 * dt / mass)
    nk = nu * mass * omega / hbar
    th = nu * omega * dt
    c, s = math.cos(th), math.sin(th)
    return nk * (A0 * c + 1j * nk * s) / (nk * c + 1j * A0 * s)


def moments_from_a(A: complex, mass: float, hbar: float) -> tuple[float, float, float]:
    """(Q, P, sigma_zp) of the Gaussian with width coefficient A.

    Q = 1/(2 Re A), P = hbar^2 |A|^2 / (2 Re A), sigma = -hbar Im A/(2 Re A);
    Q P - sigma^2 = hbar^2/4 for any pure Gaussian.
    """
    re, im = A.real, A.imag
    if re <= 0.0:
        raise ValueError(f"non-normalizable Gaussian: Re A = {re} <= 0")
    Q = 0.5 / re
    P = 0.5 * hbar * hbar * (re * re + im * im) / re
    sigma = -hbar * im * Q
    return Q, P, sigma


def a_analytic(t: float, nu: float, config: ExperimentConfig) -> complex:
    """Closed-form A(t) for constant regime weight nu from the trap ground
    state A(0) = 1/(2 Q0) (real)."""
    if not 0.0 < nu <= 1.0:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    A0 = complex(0.5 / config.initial.Q0, 0.0)
    w = omega_s_of(config.sphere, config.constants)
    return propagate_a(A0, nu, w, config.sphere.mass, config.constants.hbar, t)


# ---------------------------------------------------------------------------
# closed-form spreads

def spread_Q(t: float, nu: float, config: ExperimentConfig) -> float:
    """Position variance Q(t) = Q0 cos^2(nu w t) + hbar^2 sin^2(nu w t) /
    (4 m^2 w^2 nu^2 Q0) for constant nu from the ground state (m^2)."""
    Q0 = config.initial.Q0
    m = config.sphere.mass
    hbar = config.constants.hbar
    w = omega_s_of(config.sphere, config.constants)
    if w == 0.0 or nu == 0.0:
        return Q0 * (1.0 + (hbar * t / (2.0 * m * Q0)) ** 2)
    th = nu * w * t
    c, s = math.cos(th), math.sin(th)
    return Q0 * c * c + (hbar * s) ** 2 / (4.0 * m * m * w * w * nu * nu * Q0)


def spread_P(t: float, nu: float, config: ExperimentConfig) -> float:
    """Momentum variance of the same packet ((kg m/s)^2)."""
    Q0 = config.initial.Q0
    m = config.sphere.mass
    hbar = config.constants.hbar
    w = omega_s_of(config.sphere, config.constants)
    P0 = hbar * hbar / (4.0 * Q0)
    if w == 0.0 or nu == 0.0:
        return P0
    th = nu * w * t
    c, s = math.cos(th), math.sin(th)
    return P0 * c * c + (m * w * nu) ** 2 * Q0 * s * s


def width_difference(t: float, config: ExperimentConfig) -> float:
    """Quadratic-order width split D(t) = sqrt(Q_-) - sqrt(Q_+)
    = (sqrt(Q0)/2)(1 - 2 |beta_-|^2)(omega_s t)^2 (m)."""
    w = omega_s_of(config.sphere, config.constants)
    wt = w * t
    return 0.5 * config.initial.sqrt_Q0 * (
        1.0 - 2.0 * config.weights.beta_minus_sq) * wt * wt


def width_difference_exact(t: float, config: ExperimentConfig) -> float:
    """Exact sqrt(Q_-) - sqrt(Q_+) from the closed-form spreads at the
    separated-regime weights (m)."""
    nu_p = config.weights.beta(Branch.PLUS)
    nu_m = config.weights.beta(Branch.MINUS)
    return math.sqrt(spread_Q(t, nu_m, config)) - math.sqrt(spread_Q(t, nu_p, config))


# ---------------------------------------------------------------------------
# segment integral kernels (feed the phase module)

def integral_inv_q(A0: complex, nu: float, omega: float, mass: float,
                   hbar: float, tau: float) -> float:
    """int_0^tau dt / Q(t) for the packet starting at width coefficient A0
    under constant curvature (s / m^2).

    With u = tan(nu omega t) the integrand is rational and the arctan
    antiderivative is continued through the tangent poles (one +pi per
    half-period) so the result is smooth in tau.
    """
    Q0, P0, s0 = moments_from_a(A0, mass, hbar)
    if omega == 0.0 or nu == 0.0:
        y1 = 2.0 * (P0 * tau / mass + s0) / hbar
        y0 = 2.0 * s0 / hbar
        return (2.0 * mass / hbar) * (math.atan(y1) - math.atan(y0))
    wt = nu * omega
    th = wt * tau
    y = 2.0 * P0 * math.tan(th) / (mass * wt * hbar) + 2.0 * s0 / hbar
    y0 = 2.0 * s0 / hbar
    n_poles = math.floor(th / math.pi + 0.5)
    return (2.0 * mass / hbar) * (math.atan(y) + math.pi * n_poles - math.atan(y0))


def integral_q(A0: complex, nu: float, omega: float, mass: float,
               hbar: float, tau: float) -> float:
    """int_0^tau Q(t) dt for the same packet (m^2 s)."""
    Q0, P0, s0 = moments_from_a(A0, mass, hbar)
    if omega == 0.0 or nu == 0.0:
        return Q0 * tau + s0 * tau * tau / mass + P0 * tau**3 / (3.0 * mass * mass)
    wt = nu * omega
    th = wt * tau
    s2, c2 = math.sin(2.0 * th), math.cos(2.0 * th)
    alpha = Q0
    beta = P0 / (mass * mass * wt * wt)
    gamma = s0 / (mass * wt)
    return (alpha * (0.5 * tau + s2 / (4.0 * wt))
            + beta * (0.5 * tau - s2 / (4.0 * wt))
            + gamma * (1.0 - c2) / (2.0 * wt))


# ---------------------------------------------------------------------------
# piecewise regime structure

@dataclass(frozen=True)
class RegimeInterval:
    """Maximal interval over which a branch sees constant (nu, omega)."""

    t_lo: float
    t_hi: float
    nu: float
    omega: float
    A_start: complex


def _nuclear_crossing(A0: complex, nu: float, omega: float, mass: float,
                      hbar: float, t_lo: float, t_hi: float) -> float | None:
    """First time in (t_lo, t_hi) where sqrt(Q) reaches the nucleon scale,
    found by coarse scan plus bisection on the closed-form Q."""
    target = NUCLEON_SCALE * NUCLEON_SCALE

    def q_at(t: float) -> float:
        return moments_from_a(
            propagate_a(A0, nu, omega, mass, hbar, t - t_lo), mass, hbar)[0]

    if q_at(t_lo) >= target:
        return None
    grid = np.linspace(t_lo, t_hi, 1025)
    above = [t for t in grid[1:] if q_at(t) >= target]
    if not above:
        return None
    hi = above[0]
    lo = max(t_lo, hi - (grid[1] - grid[0]))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if q_at(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def regime_intervals(config: ExperimentConfig,
                     branch: Branch) -> tuple[RegimeInterval, ...]:
    """Split [0, T5] into constant-(nu, omega) intervals for one branch and
    carry A across every switch (A is continuous; only its ODE changes)."""
    T5 = config.protocol.T5
    window = separation_window(config)
    if window is None:
        nu_bounds = [(0.0, T5, 1.0)]
    else:
        t_in, t_out = window
        nu = config.weights.beta(branch)
        nu_bounds = [(0.0, t_in, 1.0), (t_in, t_out, nu), (t_out, T5, 1.0)]

    m = config.sphere.mass
    hbar = config.constants.hbar
    base_w = omega_s_of(config.sphere, config.constants)
    A = complex(0.5 / config.initial.Q0, 0.0)
    out: list[RegimeInterval] = []
    for lo, hi, nu in nu_bounds:
        if hi <= lo:
            continue
        t = lo
        while t < hi:
            Q = moments_from_a(A, m, hbar)[0]
            w = effective_omega_s(Q, config.sphere, config.constants,
                                  config.nuclear_correction)
            t_next = hi
            if w != base_w:
                # boosted: revert once the packet outgrows the nucleon scale
                cross = _nuclear_crossing(A, nu, w, m, hbar, t, hi)
                if cross is not None:
                    t_next = cross
            out.append(RegimeInterval(t_lo=t, t_hi=t_next, nu=nu, omega=w,
                                      A_start=A))
            A = propagate_a(A, nu, w, m, hbar, t_next - t)
            t = t_next
    return tuple(out)


class AnalyticBranch:
    """Closed-form width evolution of one branch across all regimes."""

    def __init__(self, config: ExperimentConfig, branch: Branch):
        self.config = config
        self.branch = branch
        self.intervals = regime_intervals(config, branch)
        self._starts = [iv.t_lo for iv in self.intervals]

    def _interval(self, t: float) -> RegimeInterval:
        T5 = self.config.protocol.T5
        if t < 0.0 or t > T5:
            raise ValueError(f"t={t} outside [0, {T5}]")
        idx = 0
        for i, lo in enumerate(self._starts):
            if t >= lo:
                idx = i
        return self.intervals[idx]

    def a(self, t: float) -> complex:
        iv = self._interval(t)
        return propagate_a(iv.A_start, iv.nu, iv.omega, self.config.sphere.mass,
                           self.config.constants.hbar, t - iv.t_lo)

    def moments(self, t: float) -> tuple[float, float, float]:
        """(Q, P, sigma_zp) at time t."""
        return moments_from_a(self.a(t), self.config.sphere.mass,
                              self.config.constants.hbar)

    def q(self, t: float) -> float:
        return self.moments(t)[0]

    def p_var(self, t: float) -> float:
        return self.moments(t)[1]


@dataclass(frozen=True)
class SpreadCurve:
    """Sampled branch spreads plus the free-particle reference."""

    t: np.ndarray
    Q_plus: np.ndarray
    Q_minus: np.ndarray
    Q_free: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("t_s,Q_plus_m2,Q_minus_m2,Q_free_m2\n")
            for row in zip(self.t, self.Q_plus, self.Q_minus, self.Q_free):
                f.write(",".join(format(x, ".17e") for x in row) + "\n")


def spread_curve(config: ExperimentConfig,
                 t_grid: np.ndarray | None = None) -> SpreadCurve:
    if t_grid is None:
        t_grid = np.linspace(0.0, config.protocol.T5, 2000)
    plus = AnalyticBranch(config, Branch.PLUS)
    minus = AnalyticBranch(config, Branch.MINUS)
    Q0 = config.initial.Q0
    m = config.sphere.mass
    hbar = config.constants.hbar
    free = Q0 * (1.0 + (hbar * t_grid / (2.0 * m * Q0)) ** 2)
    return SpreadCurve(
        t=np.asarray(t_grid, dtype=float),
        Q_plus=np.array([plus.q(t) for t in t_grid]),
        Q_minus=np.array([minus.q(t) for t in t_grid]),
        Q_free=free,
    )


# ---------------------------------------------------------------------------
# Gaussian state and ODE evolution (cross-check path)

@dataclass(frozen=True)
class GaussianBranch:
    """Complex Gaussian coefficients of one branch at time t."""

    A: complex  # m^-2
    B: complex  # m^-1
    C: complex  # dimensionless
    t: float
    branch: Branch

    def moments(self, mass: float, hbar: float) -> tuple[float, float, float]:
        return moments_from_a(self.A, mass, hbar)

    def mean_z(self) -> float:
        return self.B.real / self.A.real

    def mean_p(self, hbar: float) -> float:
        return hbar * (self.B.imag - self.A.imag * self.B.real / self.A.real)

    def norm_functional(self) -> float:
        """log of the squared norm; constant under unitary evolution."""
        re_a = self.A.real
        return (0.5 * math.log(math.pi / re_a)
                + self.B.real**2 / re_a + 2.0 * self.C.real)


def initial_branch(config: ExperimentConfig, branch: Branch) -> GaussianBranch:
    """Minimum-uncertainty trap ground state: real A = 1/(2 Q0), B = 0,
    C chosen to normalize."""
    Q0 = config.initial.Q0
    A = complex(0.5 / Q0, 0.0)
    C = complex(-0.25 * math.log(2.0 * math.pi * Q0), 0.0)
    return GaussianBranch(A=A, B=0.0 + 0.0j, C=C, t=0.0, branch=branch)


def _abc_derivatives(A: complex, B: complex, V0: float, V1: float, V2: float,
                     mass: float, hbar: float) -> tuple[complex, complex, complex]:
    dA = -1j * ((hbar / mass) * A * A - 2.0 * V2 / hbar)
    dB = -1j * ((hbar / mass) * A * B + V1 / hbar)
    dC = -1j * ((hbar / (2.0 * mass)) * (A - B * B) + V0 / hbar)
    return dA, dB, dC


def _pack(*vals: complex) -> np.ndarray:
    out = np.empty(2 * len(vals))
    for i, v in enumerate(vals):
        out[2 * i] = v.real
        out[2 * i + 1] = v.imag
    return out


def _unpack(y, i: int) -> complex:
    return complex(y[2 * i], y[2 * i + 1])


def _abc_atol(A0: complex, Q0: float, rtol: float) -> np.ndarray:
    # per-component floors so zero-valued components don't stall the
    # error control; relative tolerance dominates once values grow
    sa = abs(A0)
    sb = sa * math.sqrt(Q0)
    return rtol * np.array([sa, sa, sb, sb, 1.0, 1.0])


def evolve_abc(state: GaussianBranch, coeffs: TaylorCoeffs, dt: float,
               mass: float, hbar: float, rtol: float = 1e-10) -> GaussianBranch:
    """One adaptive step of the (A, B, C) system with frozen coefficients.

    The caller is responsible for re-evaluating the Taylor coefficients
    against the evolving state between steps (self-consistency).  Evolved
    as 6 real components so Re C (the norm) and Im C (the phase) are
    error-controlled independently.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be > 0, got {dt}")

    def rhs(t, y):
        A, B = _unpack(y, 0), _unpack(y, 1)
        dA, dB, dC = _abc_derivatives(A, B, coeffs.V0, coeffs.V1, coeffs.V2,
                                      mass, hbar)
        return _pack(dA, dB, dC)

    y0 = _pack(state.A, state.B, state.C)
    Q0 = 0.5 / state.A.real
    sol = solve_ivp(rhs, (state.t, state.t + dt), y0, method="DOP853",
                    rtol=rtol, atol=_abc_atol(state.A, Q0, rtol))
    if not sol.success:
        raise IntegrationError(
            f"ABC step failed at t={state.t}: {sol.message}; state={y0}")
    yf = sol.y[:, -1]
    return GaussianBranch(A=_unpack(yf, 0), B=_unpack(yf, 1), C=_unpack(yf, 2),
                          t=state.t + dt, branch=state.branch)


@dataclass
class JointEvolution:
    """Dense ODE solution of both branches over [0, T5]."""

    t: np.ndarray
    A_plus: np.ndarray
    B_plus: np.ndarray
    C_plus: np.ndarray
    A_minus: np.ndarray
    B_minus: np.ndarray
    C_minus: np.ndarray

    def branch_arrays(self, branch: Branch):
        if branch is Branch.PLUS:
            return self.A_plus, self.B_plus, self.C_plus
        return self.A_minus, self.B_minus, self.C_minus

    def mean_z(self, branch: Branch) -> np.ndarray:
        A, B, _ = self.branch_arrays(branch)
        return B.real / A.real

    def mean_p(self, branch: Branch, hbar: float) -> np.ndarray:
        A, B, _ = self.branch_arrays(branch)
        return hbar * (B.imag - A.imag * B.real / A.real)

    def q(self, branch: Branch) -> np.ndarray:
        A, _, _ = self.branch_arrays(branch)
        return 0.5 / A.real

    def norm_functional(self, branch: Branch) -> np.ndarray:
        A, B, C = self.branch_arrays(branch)
        return 0.5 * np.log(np.pi / A.real) + B.real**2 / A.real + 2.0 * C.real


def _joint_breakpoints(config: ExperimentConfig) -> list[float]:
    pts = {0.0, *config.protocol.times}
    window = separation_window(config)
    if window is not None:
        pts.update(window)
    for branch in Branch:
        for iv in regime_intervals(config, branch):
            pts.add(iv.t_lo)
            pts.add(iv.t_hi)
    return sorted(p for p in pts if 0.0 <= p <= config.protocol.T5)


def evolve_joint(config: ExperimentConfig, t_eval: np.ndarray | None = None,
                 rtol: float = 1e-11) -> JointEvolution:
    """Self-consistent ODE evolution of both branches.

    The linear and constant Taylor coefficients are rebuilt from the
    instantaneous state at every derivative evaluation (means, spreads and
    the inter-branch distance all come from the evolving A, B), while the
    regime weight per interval is fixed by the precomputed switching times
    so the right-hand side stays smooth for the adaptive integrator.
    """
    m = config.sphere.mass
    c = config.constants
    hbar = c.hbar
    p = config.protocol
    F = gradient_force(config)
    b0_half = 0.5 * c.g_factor * c.mu_B * p.B0

    reg = {b: regime_intervals(config, b) for b in Branch}

    def nu_omega_at(branch: Branch, t: float) -> tuple[float, float]:
        ivs = reg[branch]
        for iv in ivs:
            if t < iv.t_hi or iv is ivs[-1]:
                return iv.nu, iv.omega
        return ivs[-1].nu, ivs[-1].omega

    def rhs(t, y, lam, nus, omegas):
        A_p, B_p = _unpack(y, 0), _unpack(y, 1)
        A_m, B_m = _unpack(y, 3), _unpack(y, 4)
        d = abs(B_p.real / A_p.real - B_m.real / A_m.real)
        out = np.empty(12)
        for k, (A, B, sgn, nu, w) in enumerate(
                ((A_p, B_p, 1.0, nus[0], omegas[0]),
                 (A_m, B_m, -1.0, nus[1], omegas[1]))):
            z_self = B.real / A.real
            Q = 0.5 / A.real
            nu2 = nu * nu
            V2 = 0.5 * m * w * w * nu2
            V1 = -m * w * w * nu2 * z_self - sgn * lam * F
            V0 = nu2 * (0.5 * m * w * w * (z_self * z_self + Q)
                        - 1.2 * c.G * m * m / config.sphere.radius)
            V0 += sgn * lam * b0_half
            if nu < 1.0 and c.G != 0.0:
                V0 -= (1.0 - nu2) * c.G * m * m / d
            dA, dB, dC = _abc_derivatives(A, B, V0, V1, V2, m, hbar)
            out[6 * k:6 * k + 6] = _pack(dA, dB, dC)
        return out

    breaks = _joint_breakpoints(config)
    if t_eval is None:
        t_eval = np.linspace(0.0, p.T5, 801)
    t_eval = np.asarray(t_eval, dtype=float)

    st_p = initial_branch(config, Branch.PLUS)
    st_m = initial_branch(config, Branch.MINUS)
    y = np.concatenate([_pack(st_p.A, st_p.B, st_p.C),
                        _pack(st_m.A, st_m.B, st_m.C)])
    atol = np.concatenate([_abc_atol(st_p.A, config.initial.Q0, rtol)] * 2)

    ts_out: list[np.ndarray] = []
    ys_out: list[np.ndarray] = []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= lo:
            continue
        mid = 0.5 * (lo + hi)
        lam = float(lambda_of_t(mid, p))
        nus = (nu_omega_at(Branch.PLUS, mid)[0], nu_omega_at(Branch.MINUS, mid)[0])
        omegas = (nu_omega_at(Branch.PLUS, mid)[1], nu_omega_at(Branch.MINUS, mid)[1])
        inside = t_eval[(t_eval >= lo) & (t_eval < hi)]
        pts = np.unique(np.concatenate([inside, [lo, hi]]))
        sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", t_eval=pts,
                        args=(lam, nus, omegas), rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationError(f"joint evolution failed on [{lo}, {hi}]: "
                                   f"{sol.message}")
        keep = sol.t < hi if hi < breaks[-1] else np.ones_like(sol.t, bool)
        ts_out.append(sol.t[keep])
        ys_out.append(sol.y[:, keep])
        y = sol.y[:, -1]

    t_all = np.concatenate(ts_out)
    y_all = np.concatenate(ys_out, axis=1)

    def cplx(i: int) -> np.ndarray:
        return y_all[2 * i] + 1j * y_all[2 * i + 1]

    return JointEvolution(t=t_all, A_plus=cplx(0), B_plus=cplx(1),
                          C_plus=cplx(2), A_minus=cplx(3), B_minus=cplx(4),
                          C_minus=cplx(5))
