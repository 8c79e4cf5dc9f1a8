"""Independent grid solver for the nonlinear branch equations.

Second-order operator splitting on a uniform 1D grid: kinetic propagation
in spectral space, potential propagation in position space, with the
branch self-potential rebuilt every step from the instantaneous moments
of the grid state (means, spreads, inter-branch distance).  Nothing here
reuses the Gaussian closed forms, so agreement on spreads and on the
final phase difference validates the analytic pipeline end to end.

The physical baseline is not grid-tractable (packet separation ~2e-4 m
against a 1e-9 m width), so cross-checks run at a scaled configuration in
natural units with G inflated until omega_s T5 ~ 0.3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import Branch, ConstantsSet, ExperimentConfig, InitialState, \
    Protocol, SphereParams, SpinWeights
from .potential import effective_omega_s, v_eff
from .trajectories import lambda_of_t, separation_window


class GridEscapeError(RuntimeError):
    """Probability mass reached the grid boundary."""


class StepSizeError(RuntimeError):
    """Potential phase advance per step too large for the splitting."""


class PhaseUnwrapError(RuntimeError):
    """Phase difference jumped by more than pi/2 between snapshots."""


@dataclass(frozen=True)
class GridSpec:
    n: int
    z_min: float
    z_max: float
    dt: float
    snapshot_stride: int = 40

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n

    def grid(self) -> np.ndarray:
        return self.z_min + self.dz * np.arange(self.n)


@dataclass
class GridState:
    z: np.ndarray
    dz: float
    psi_plus: np.ndarray
    psi_minus: np.ndarray
    t: float

    def psi(self, branch: Branch) -> np.ndarray:
        return self.psi_plus if branch is Branch.PLUS else self.psi_minus


@dataclass(frozen=True)
class Moments:
    mean_z: float
    mean_p: float
    Q: float
    P: float


def initial_grid_state(config: ExperimentConfig, spec: GridSpec) -> GridState:
    """Both branches in the same normalized ground-state Gaussian."""
    z = spec.grid()
    Q0 = config.initial.Q0
    psi = np.exp(-z * z / (4.0 * Q0)).astype(complex)
    psi /= math.sqrt(float(np.sum(np.abs(psi) ** 2)) * spec.dz)
    return GridState(z=z, dz=spec.dz, psi_plus=psi.copy(),
                     psi_minus=psi.copy(), t=0.0)


def norm_sq(state: GridState, branch: Branch) -> float:
    return float(np.sum(np.abs(state.psi(branch)) ** 2) * state.dz)


def extract_moments(state: GridState, branch: Branch,
                    hbar: float) -> Moments:
    """Position moments by direct sum, momentum moments spectrally."""
    psi = state.psi(branch)
    w = np.abs(psi) ** 2
    wsum = float(np.sum(w))
    mean_z = float(np.sum(state.z * w) / wsum)
    Q = float(np.sum((state.z - mean_z) ** 2 * w) / wsum)

    n = psi.size
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=state.dz)
    phi = np.fft.fft(psi)
    wk = np.abs(phi) ** 2
    wk_sum = float(np.sum(wk))
    mean_p = hbar * float(np.sum(k * wk) / wk_sum)
    P = float(np.sum((hbar * k - mean_p) ** 2 * wk) / wk_sum)
    return Moments(mean_z=mean_z, mean_p=mean_p, Q=Q, P=P)


def center_phase(state: GridState, branch: Branch, half_width: int = 3) -> float:
    """Phase of the branch at its own center: a quadratic fit to the local
    unwrapped phase around the grid point nearest <z>, evaluated at <z>."""
    psi = state.psi(branch)
    w = np.abs(psi) ** 2
    mean_z = float(np.sum(state.z * w) / np.sum(w))
    idx = int(round((mean_z - state.z[0]) / state.dz))
    idx = min(max(idx, half_width), psi.size - half_width - 1)
    sl = slice(idx - half_width, idx + half_width + 1)
    local_z = state.z[sl] - mean_z
    local_phase = np.unwrap(np.angle(psi[sl]))
    coeffs = np.polyfit(local_z, local_phase, 2)
    return float(np.polyval(coeffs, 0.0))


def extract_phase(states: list[GridState], branch: Branch) -> np.ndarray:
    """Center phase of one branch along a state history (wrapped values;
    only phase differences between branches are unwrap-safe)."""
    return np.array([center_phase(s, branch) for s in states])


def extract_phase_difference(states: list[GridState]) -> np.ndarray:
    """Unwrapped phase difference plus-minus along a state history,
    referenced to zero at the first state."""
    raw = extract_phase(states, Branch.PLUS) - extract_phase(states,
                                                             Branch.MINUS)
    diff = np.unwrap(raw)
    steps = np.abs(np.diff(diff))
    if steps.size and float(steps.max()) > 0.5 * math.pi:
        raise PhaseUnwrapError(
            f"phase difference jumped by {steps.max():.3f} rad between "
            f"history states; record the history more densely")
    return diff - diff[0]


def dump_state_csv(state: GridState, path) -> None:
    """Snapshot dump: one row per grid point with both branch amplitudes."""
    with open(path, "w") as f:
        f.write("z_m,re_psi_plus,im_psi_plus,re_psi_minus,im_psi_minus\n")
        for i in range(state.z.size):
            row = (state.z[i], state.psi_plus[i].real, state.psi_plus[i].imag,
                   state.psi_minus[i].real, state.psi_minus[i].imag)
            f.write(",".join(format(x, ".17e") for x in row) + "\n")


def self_potential_convolution(z: np.ndarray, density: np.ndarray,
                               sphere: SphereParams,
                               constants: ConstantsSet) -> np.ndarray:
    """Full self-potential int rho(z') v_eff(|z - z'|) dz' by linear
    (zero-padded) FFT convolution.  `density` must integrate to 1."""
    n = z.size
    dz = float(z[1] - z[0])
    # kernel sampled on displacements (-(n-1)..(n-1)) dz
    offsets = dz * np.arange(-(n - 1), n)
    kernel = np.array([v_eff(abs(d), sphere, constants) for d in offsets])
    conv = np.convolve(density * dz, kernel, mode="valid")
    return conv


@dataclass
class GridRun:
    """Snapshot history of a grid evolution."""

    t: np.ndarray
    moments_plus: list[Moments]
    moments_minus: list[Moments]
    delta_phi: np.ndarray          # unwrapped phase difference history
    final_state: GridState
    max_norm_drift: float
    n_steps: int
    states: list[GridState] | None = None  # full snapshots, if requested

    @property
    def delta_phi_final(self) -> float:
        return float(self.delta_phi[-1])

    def q_history(self, branch: Branch) -> np.ndarray:
        ms = self.moments_plus if branch is Branch.PLUS else self.moments_minus
        return np.array([m.Q for m in ms])

    def mean_z_history(self, branch: Branch) -> np.ndarray:
        ms = self.moments_plus if branch is Branch.PLUS else self.moments_minus
        return np.array([m.mean_z for m in ms])

    def mean_p_history(self, branch: Branch) -> np.ndarray:
        ms = self.moments_plus if branch is Branch.PLUS else self.moments_minus
        return np.array([m.mean_p for m in ms])


def _segment_bounds(config: ExperimentConfig) -> list[float]:
    pts = {0.0, *config.protocol.times}
    window = separation_window(config)
    if window is not None:
        pts.update(window)
    return sorted(p for p in pts if 0.0 <= p <= config.protocol.T5)


def evolve_grid(config: ExperimentConfig, spec: GridSpec,
                t_end: float | None = None, *,
                forced_nu: float | None = None,
                include_gradient: bool = True,
                full_convolution: bool = False,
                extra_potential_plus=None,
                state_times=None) -> GridRun:
    """Propagate both branches and extract moment and phase histories.

    forced_nu pins the regime weight for both branches (e.g. 1.0 for a
    harmonic-only run); include_gradient=False switches the Stern-Gerlach
    force off; full_convolution replaces the quadratic overlap-regime
    self-potential with the exact convolution against v_eff;
    extra_potential_plus(z, t) is added to the plus branch only;
    state_times requests full wavefunction snapshots at the first recorded
    time at or past each value.
    """
    c = config.constants
    m = config.sphere.mass
    hbar = c.hbar
    R = config.sphere.radius
    G = c.G
    w_pm = {Branch.PLUS: config.weights.beta_plus_sq,
            Branch.MINUS: config.weights.beta_minus_sq}

    if t_end is None:
        t_end = config.protocol.T5
    state = initial_grid_state(config, spec)
    if spec.dz > config.initial.sqrt_Q0 / 8.0:
        raise ValueError(
            f"grid too coarse: dz={spec.dz} > sqrt(Q0)/8={config.initial.sqrt_Q0/8}")

    k = 2.0 * np.pi * np.fft.fftfreq(spec.n, d=spec.dz)
    z = state.z

    times = [0.0]
    mom_p = [extract_moments(state, Branch.PLUS, hbar)]
    mom_m = [extract_moments(state, Branch.MINUS, hbar)]
    raw_diff = [center_phase(state, Branch.PLUS)
                - center_phase(state, Branch.MINUS)]
    max_drift = 0.0
    n_steps = 0

    pending_dumps = sorted(state_times) if state_times is not None else []
    recorded: list[GridState] | None = [] if state_times is not None else None

    def snapshot_state(t_now: float) -> None:
        nonlocal pending_dumps
        if recorded is None or not pending_dumps or t_now < pending_dumps[0]:
            return
        while pending_dumps and t_now >= pending_dumps[0]:
            pending_dumps = pending_dumps[1:]
        recorded.append(GridState(z=state.z, dz=state.dz,
                                  psi_plus=state.psi_plus.copy(),
                                  psi_minus=state.psi_minus.copy(), t=t_now))

    snapshot_state(0.0)

    def gravity_potential(branch: Branch, mp: Moments, mm: Moments,
                          dens_weighted: np.ndarray | None):
        mine = mp if branch is Branch.PLUS else mm
        d = abs(mp.mean_z - mm.mean_z)
        if forced_nu is not None:
            nu = forced_nu
        elif d <= 2.0 * R:
            nu = 1.0
        else:
            nu = math.sqrt(w_pm[branch])
        overlap = forced_nu is None and d <= 2.0 * R
        if full_convolution and overlap and dens_weighted is not None:
            return self_potential_convolution(z, dens_weighted,
                                              config.sphere, c)
        w_eff = effective_omega_s(max(mine.Q, 1e-300), config.sphere, c,
                                  config.nuclear_correction) if G > 0 else 0.0
        nu2 = nu * nu
        v = nu2 * (0.5 * m * w_eff**2 * (z - mine.mean_z) ** 2
                   + 0.5 * m * w_eff**2 * mine.Q
                   - 1.2 * G * m * m / R)
        if nu < 1.0 and G != 0.0 and d > 0.0:
            v = v - (1.0 - nu2) * G * m * m / d
        return v

    def potential(branch: Branch, t_mid: float, mp: Moments, mm: Moments,
                  dens_weighted):
        v = gravity_potential(branch, mp, mm, dens_weighted)
        if include_gradient:
            lam = lambda_of_t(min(t_mid, config.protocol.T5), config.protocol)
            half = 0.5 * c.g_factor * c.mu_B
            v = v + branch.sign * lam * half * (config.protocol.B0
                                                - config.protocol.B0_grad * z)
        if extra_potential_plus is not None and branch is Branch.PLUS:
            v = v + extra_potential_plus(z, t_mid)
        return v

    def check_health(st: GridState, t: float) -> None:
        nonlocal max_drift
        for b in Branch:
            nrm = norm_sq(st, b)
            max_drift = max(max_drift, abs(nrm - 1.0))
            if abs(nrm - 1.0) > 1e-6:
                raise RuntimeError(
                    f"norm lost on branch {b.name} at t={t}: {nrm}")
            dens = np.abs(st.psi(b)) ** 2 * st.dz
            edge = float(dens[:4].sum() + dens[-4:].sum())
            if edge > 1e-10:
                mz = float(np.sum(st.z * dens) / dens.sum())
                raise GridEscapeError(
                    f"branch {b.name} reached the boundary at t={t}: "
                    f"edge probability {edge:.3e}, <z>={mz:.4e}")

    bounds = [b for b in _segment_bounds(config) if b < t_end] + [t_end]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if hi <= lo:
            continue
        n_sub = max(1, math.ceil((hi - lo) / spec.dt))
        dt = (hi - lo) / n_sub
        kin_half = np.exp(-1j * hbar * k * k * dt / (4.0 * m))
        # splitting sanity: the potential multiplier must not alias, i.e.
        # its phase advance per step must vary by well under pi between
        # neighboring cells (uniform and linear offsets are harmless)
        mp = extract_moments(state, Branch.PLUS, hbar)
        mm = extract_moments(state, Branch.MINUS, hbar)
        for b in Branch:
            vtest = potential(b, lo + 0.5 * dt, mp, mm, None)
            if np.isscalar(vtest):
                continue
            cell_jump = float(np.max(np.abs(np.diff(vtest)))) * dt / hbar
            if cell_jump > 0.5 * math.pi:
                raise StepSizeError(
                    f"potential phase aliases at t={lo}: {cell_jump:.2f} rad "
                    f"between neighboring cells per step; reduce dt below "
                    f"{0.5 * math.pi * hbar * dt / cell_jump:.3e}")

        for i in range(n_sub):
            t0 = lo + i * dt
            psi_p = np.fft.ifft(kin_half * np.fft.fft(state.psi_plus))
            psi_m = np.fft.ifft(kin_half * np.fft.fft(state.psi_minus))
            state.psi_plus, state.psi_minus = psi_p, psi_m
            # shared moment snapshot at the half step
            mp = extract_moments(state, Branch.PLUS, hbar)
            mm = extract_moments(state, Branch.MINUS, hbar)
            dens_weighted = None
            if full_convolution:
                dens_weighted = (w_pm[Branch.PLUS] * np.abs(state.psi_plus) ** 2
                                 + w_pm[Branch.MINUS] * np.abs(state.psi_minus) ** 2)
            t_mid = t0 + 0.5 * dt
            vp = potential(Branch.PLUS, t_mid, mp, mm, dens_weighted)
            vm = potential(Branch.MINUS, t_mid, mp, mm, dens_weighted)
            state.psi_plus = np.fft.ifft(
                kin_half * np.fft.fft(np.exp(-1j * vp * dt / hbar) * state.psi_plus))
            state.psi_minus = np.fft.ifft(
                kin_half * np.fft.fft(np.exp(-1j * vm * dt / hbar) * state.psi_minus))
            state.t = t0 + dt
            n_steps += 1
            if n_steps % spec.snapshot_stride == 0 or i == n_sub - 1:
                check_health(state, state.t)
                times.append(state.t)
                mom_p.append(extract_moments(state, Branch.PLUS, hbar))
                mom_m.append(extract_moments(state, Branch.MINUS, hbar))
                raw_diff.append(center_phase(state, Branch.PLUS)
                                - center_phase(state, Branch.MINUS))
                snapshot_state(state.t)

    diff = np.unwrap(np.asarray(raw_diff))
    steps = np.abs(np.diff(diff))
    if steps.size and float(steps.max()) > 0.5 * math.pi:
        raise PhaseUnwrapError(
            f"phase difference jumped by {steps.max():.3f} rad between "
            f"snapshots; sample the history more densely")
    return GridRun(t=np.asarray(times), moments_plus=mom_p, moments_minus=mom_m,
                   delta_phi=diff - diff[0], final_state=state,
                   max_norm_drift=max_drift, n_steps=n_steps, states=recorded)


# ---------------------------------------------------------------------------
# scaled desk configuration for oracle cross-checks

SCALED_CONSTANTS = ConstantsSet(name="scaled-natural", G=22.5 / 27.0,
                                hbar=1.0, mu_B=1.0, g_factor=2.0)


def scaled_config() -> ExperimentConfig:
    """Natural-units configuration with G inflated so omega_s T5 = 0.3.

    m = hbar = sqrt(Q0) = 1, R = 10/3, B0' = 80: the packets separate to
    d = 10 on the plateau (crossing 2R = 20/3 inside the second interval)
    while the widths stay near 1, so a 4096-point grid resolves the whole
    protocol.
    """
    return ExperimentConfig(
        constants=SCALED_CONSTANTS,
        sphere=SphereParams(mass=1.0, radius=10.0 / 3.0),
        weights=SpinWeights.from_plus(1.0 / 3.0),
        protocol=Protocol.from_t1(0.25, hold=1.0, B0=0.0, B0_grad=80.0),
        initial=InitialState(Q0=1.0),
    )


def scaled_grid_spec(n: int = 4096, dt: float = 2.5e-4) -> GridSpec:
    return GridSpec(n=n, z_min=-32.0, z_max=32.0, dt=dt, snapshot_stride=40)
