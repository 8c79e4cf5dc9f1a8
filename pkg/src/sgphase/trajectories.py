"""Closed-form mean trajectories of the two spin branches.

The packet means obey the classical equations of motion under the
Stern-Gerlach force alone: self-gravity exerts no net force on its own
packet (V1 + 2 V2 <z> = 0), so <z>+-, <p>+- depend only on the sphere
mass, the magnetic protocol and the gradient sign schedule lambda(t).

The plus branch accelerates toward +z during the first interval; the
minus branch mirrors it exactly, <z>_-(t) = -<z>_+(t).
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass

from .params import Branch, ExperimentConfig, Protocol


@dataclass(frozen=True)
class MeanState:
    mean_z: float   # m
    mean_p: float   # kg m/s
    t: float        # s
    branch: Branch


@dataclass(frozen=True)
class Segment:
    """One constant-lambda interval with plus-branch start values.

    Within the segment (local time tau = t - t_lo):
        p(tau) = p0 + lam * F * tau
        z(tau) = z0 + p0 tau / m + lam * F * tau^2 / (2 m)
    where F = g mu_B B0' / 2 is the gradient force on the plus branch.
    """

    t_lo: float
    t_hi: float
    lam: int
    z0: float
    p0: float


def gradient_force(config: ExperimentConfig) -> float:
    """Force magnitude (g mu_B / 2) B0' on the plus branch when lambda=+1 (N)."""
    c = config.constants
    return 0.5 * c.g_factor * c.mu_B * config.protocol.B0_grad


def protocol_segments(config: ExperimentConfig) -> tuple[Segment, ...]:
    """Plus-branch segments with start values accumulated across intervals."""
    p = config.protocol
    F = gradient_force(config)
    m = config.sphere.mass
    bounds = (0.0,) + p.times
    lams = (1, -1, 0, -1, 1)
    segs: list[Segment] = []
    z, mom = 0.0, 0.0
    for lam, lo, hi in zip(lams, bounds[:-1], bounds[1:]):
        segs.append(Segment(t_lo=lo, t_hi=hi, lam=lam, z0=z, p0=mom))
        tau = hi - lo
        z = z + mom * tau / m + lam * F * tau * tau / (2.0 * m)
        mom = mom + lam * F * tau
    return tuple(segs)


def lambda_of_t(t: float, protocol: Protocol) -> int:
    """Gradient sign schedule.

    +1 on [0,T1] and [T4,T5], 0 on [T2,T3], -1 on (T1,T2) and (T3,T4).
    Boundary values are fixed as lambda(T1)=+1, lambda(T2)=lambda(T3)=0,
    lambda(T4)=-1; the choice is observationally irrelevant (measure zero)
    but pinned for reproducibility.
    """
    T1, T2, T3, T4, T5 = protocol.times
    if t < 0.0 or t > T5:
        raise ValueError(f"t={t} outside protocol range [0, {T5}]")
    if t <= T1:
        return 1
    if t < T2:
        return -1
    if t <= T3:
        return 0
    if t <= T4:
        return -1
    return 1


def _locate(segments: tuple[Segment, ...], t: float) -> Segment:
    T5 = segments[-1].t_hi
    if t < 0.0 or t > T5:
        raise ValueError(f"t={t} outside protocol range [0, {T5}]")
    idx = bisect_right([s.t_lo for s in segments], t) - 1
    return segments[max(idx, 0)]


def _plus_state(segments: tuple[Segment, ...], m: float, F: float,
                t: float) -> tuple[float, float]:
    s = _locate(segments, t)
    tau = t - s.t_lo
    z = s.z0 + s.p0 * tau / m + s.lam * F * tau * tau / (2.0 * m)
    p = s.p0 + s.lam * F * tau
    return z, p


def mean_state(branch: Branch, t: float, config: ExperimentConfig) -> MeanState:
    """Closed-form <z>, <p> of a branch at time t."""
    segs = protocol_segments(config)
    z, p = _plus_state(segs, config.sphere.mass, gradient_force(config), t)
    sign = branch.sign
    return MeanState(mean_z=sign * z, mean_p=sign * p, t=t, branch=branch)


def branch_distance(t: float, config: ExperimentConfig) -> float:
    """Inter-branch distance d(t) = |<z>_+ - <z>_-| = 2 |<z>_+| (m)."""
    segs = protocol_segments(config)
    z, _ = _plus_state(segs, config.sphere.mass, gradient_force(config), t)
    return 2.0 * abs(z)


def plateau_distance(config: ExperimentConfig) -> float:
    """Branch distance on the hold plateau [T2, T3] (m)."""
    return branch_distance(config.protocol.T2, config)


def _quadratic_roots(a: float, b: float, c: float) -> tuple[float, ...]:
    """Real roots of a x^2 + b x + c = 0, ascending; numerically stable form."""
    if a == 0.0:
        if b == 0.0:
            return ()
        return (-c / b,)
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return ()
    sq = math.sqrt(disc)
    if b == 0.0:
        r = sq / (2.0 * a)
        return tuple(sorted({-r, r}))
    q = -0.5 * (b + math.copysign(sq, b))
    r1, r2 = q / a, c / q
    return (min(r1, r2), max(r1, r2))


def separation_window(config: ExperimentConfig) -> tuple[float, float] | None:
    """First and last time the branch distance exceeds 2R, or None.

    The boundary d = 2R itself counts as overlap; between the returned
    times the packets are treated as separated (nu < 1 regimes).
    """
    segs = protocol_segments(config)
    m = config.sphere.mass
    F = gradient_force(config)
    R = config.sphere.radius

    def crossings(seg: Segment) -> list[float]:
        # z(tau) = R  with z quadratic in local time
        a = seg.lam * F / (2.0 * m)
        b = seg.p0 / m
        c = seg.z0 - R
        eps = 1e-12 * max(seg.t_hi - seg.t_lo, 1.0)
        out = []
        for tau in _quadratic_roots(a, b, c):
            if -eps <= tau <= (seg.t_hi - seg.t_lo) + eps:
                out.append(seg.t_lo + min(max(tau, 0.0), seg.t_hi - seg.t_lo))
        return out

    hits: list[float] = []
    for seg in segs:
        hits.extend(crossings(seg))
    if not hits:
        return None
    t_enter, t_exit = min(hits), max(hits)
    if t_exit <= t_enter:
        return None  # tangency: never strictly beyond 2R
    return (t_enter, t_exit)


def lambda_integral(protocol: Protocol, t: float | None = None) -> float:
    """Time integral of lambda(t) up to t (default T5).

    Vanishes at T5 for every protocol obeying the recombination constraint,
    which is why the uniform-field B0 phase cancels at the end.
    """
    T1, T2, T3, T4, T5 = protocol.times
    if t is None:
        t = T5
    total = 0.0
    for lam, lo, hi in ((1, 0.0, T1), (-1, T1, T2), (0, T2, T3),
                        (-1, T3, T4), (1, T4, T5)):
        if t <= lo:
            break
        total += lam * (min(t, hi) - lo)
    return total


def classical_action(branch: Branch, config: ExperimentConfig,
                     t: float | None = None) -> float:
    """Classical action of the branch mean up to time t (J s).

    S = int [ <p>^2/(2m) - V_ext(<z>) ] dt with the magnetic potential
    V_ext,+- = +-lambda (g mu_B/2)(B0 - B0' <z>+-).  Exact segment-wise
    polynomial integration; no quadrature.
    """
    p = config.protocol
    if t is None:
        t = p.T5
    segs = protocol_segments(config)
    if t < 0.0 or t > p.T5:
        raise ValueError(f"t={t} outside protocol range [0, {p.T5}]")
    m = config.sphere.mass
    F = gradient_force(config)
    c = config.constants
    b0_term = 0.5 * c.g_factor * c.mu_B * p.B0

    # the kinetic and gradient parts are branch-symmetric; the uniform-field
    # part is accumulated separately so the branch difference reduces to the
    # single product B0 * int lambda dt and cancels exactly at T5
    common = 0.0
    lam_time = 0.0
    for seg in segs:
        if t <= seg.t_lo:
            break
        tau = min(t, seg.t_hi) - seg.t_lo
        lam, z0, p0 = float(seg.lam), seg.z0, seg.p0
        # kinetic: int (p0 + lam F u)^2 / 2m du
        kin = (p0 * p0 * tau + p0 * lam * F * tau**2
               + (lam * F) ** 2 * tau**3 / 3.0) / (2.0 * m)
        # gradient part of -V_ext is branch-independent: +lam F <z>_+
        zint = z0 * tau + p0 * tau**2 / (2.0 * m) + lam * F * tau**3 / (6.0 * m)
        common += kin + lam * F * zint
        lam_time += lam * tau
    return common - branch.sign * b0_term * lam_time


def classical_phase(branch: Branch, config: ExperimentConfig,
                    t: float | None = None) -> float:
    """S_Cl / hbar (rad)."""
    return classical_action(branch, config, t) / config.constants.hbar
