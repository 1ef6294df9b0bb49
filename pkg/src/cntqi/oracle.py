"""Brute-force checks of the two approximations behind the node model.

``evolve_discrete_bath`` keeps the fiber as N explicit modes and evolves
the (3 + N)-amplitude single-excitation vector directly, so the Markov
decay rate is never assumed.  ``evolve_nonrwa`` keeps the counter-rotating
couplings in a truncated Fock space and works in the lab frame.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np
from scipy.linalg import expm

from .core import Envelope, GridMismatchError, InterfaceError, NodeParams, NodeState, TimeGrid, output_field
from .dynamics import IntegrationError, Trajectory, integrate_node

# complex amplitudes held for the bath, counted over all substeps
MAX_BATH_MODES = 200_000
CUTOFF_POPULATION = 1e-6


class OracleMemoryError(InterfaceError, MemoryError):
    pass


class TruncationError(InterfaceError, ArithmeticError):
    pass


@dataclass(frozen=True)
class DiscreteBath:
    """Flat band of N fiber modes with uniform spacing around ``center``."""

    N: int
    bandwidth: float
    gamma: float
    center: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ValueError("a discrete bath needs N >= 2 modes")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @property
    def spacing(self) -> float:
        return self.bandwidth / (self.N - 1)

    @property
    def detunings(self) -> np.ndarray:
        return np.linspace(-0.5 * self.bandwidth, 0.5 * self.bandwidth, self.N)

    @property
    def omega_j(self) -> np.ndarray:
        return self.center + self.detunings

    @property
    def kappa(self) -> float:
        return math.sqrt(self.gamma * self.spacing / (2.0 * math.pi))

    @property
    def kappa_j(self) -> np.ndarray:
        # trapezoid weights: the two edge modes carry half a cell each, so the
        # represented band is exactly ``bandwidth`` for every N
        k = np.full(self.N, self.kappa)
        k[[0, -1]] *= math.sqrt(0.5)
        return k

    @property
    def recurrence_time(self) -> float:
        return 2.0 * math.pi / self.spacing


@numba.njit(cache=True)
def _bath_rhs(y, lam, delta, kap, G, gq, gr, gc, dy):
    bq, br, bc = y[0], y[1], y[2]
    acc = 0j
    for j in range(delta.shape[0]):
        a = y[3 + j]
        acc += kap[j] * a
        dy[3 + j] = -1j * delta[j] * a + kap[j] * bc
    dy[0] = -0.5j * lam * br - 0.5 * gq * bq
    dy[1] = -1j * (0.5 * np.conj(lam) * bq + np.conj(G) * bc) - 0.5 * gr * br
    dy[2] = -1j * G * br - acc - 0.5 * gc * bc


@numba.njit(cache=True)
def _bath_kernel(y, lam, lam_half, m, dt, delta, kap, G, gq, gr, gc, out):
    n = y.shape[0]
    k1 = np.empty(n, dtype=np.complex128)
    k2 = np.empty(n, dtype=np.complex128)
    k3 = np.empty(n, dtype=np.complex128)
    k4 = np.empty(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    h = dt / m
    out[0, 0] = y[0]
    out[0, 1] = y[1]
    out[0, 2] = y[2]
    for k in range(lam_half.shape[0]):
        for s in range(m):
            # control at the substep ends and middle, linear between grid samples
            f0 = s / m
            f1 = (s + 0.5) / m
            f2 = (s + 1.0) / m
            l0 = _interp(lam[k], lam_half[k], lam[k + 1], f0)
            l1 = _interp(lam[k], lam_half[k], lam[k + 1], f1)
            l2 = _interp(lam[k], lam_half[k], lam[k + 1], f2)
            _bath_rhs(y, l0, delta, kap, G, gq, gr, gc, k1)
            for i in range(n):
                tmp[i] = y[i] + 0.5 * h * k1[i]
            _bath_rhs(tmp, l1, delta, kap, G, gq, gr, gc, k2)
            for i in range(n):
                tmp[i] = y[i] + 0.5 * h * k2[i]
            _bath_rhs(tmp, l1, delta, kap, G, gq, gr, gc, k3)
            for i in range(n):
                tmp[i] = y[i] + h * k3[i]
            _bath_rhs(tmp, l2, delta, kap, G, gq, gr, gc, k4)
            for i in range(n):
                y[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        out[k + 1, 0] = y[0]
        out[k + 1, 1] = y[1]
        out[k + 1, 2] = y[2]
        if not (abs(y[0]) + abs(y[1]) + abs(y[2]) < 1e6):
            return k + 1
    return -1


@numba.njit(cache=True)
def _interp(a, b, c, f):
    # quadratic through (0, a), (1/2, b), (1, c)
    return a * (2.0 * f - 1.0) * (f - 1.0) + b * 4.0 * f * (1.0 - f) + c * f * (2.0 * f - 1.0)


@dataclass(frozen=True, eq=False)
class BathResult:
    trajectory: Trajectory
    bath: DiscreteBath
    bath_amplitudes: np.ndarray
    substeps: int
    norm_drift: float

    def markov(self) -> Trajectory:
        """Same scenario under the Markov node equations on the same grid."""
        t = self.trajectory
        return integrate_node(NodeState.from_array(t.amplitudes[0]), t.params, t.control)

    def compare(self) -> "DeviationReport":
        return compare_trajectories(self.trajectory, self.markov())


def reconstruct_output(bath: DiscreteBath, amplitudes: np.ndarray, t_final: float, times, chunk: int = 2048) -> np.ndarray:
    """alpha_out(t) from the bath left behind at ``t_final`` (free propagation backwards)."""
    times = np.asarray(times, dtype=float)
    delta = bath.detunings
    # kappa_j / sqrt(gamma) is the per-mode weight sqrt(spacing / 2 pi) with edge halving
    w = math.sqrt(bath.spacing / (2.0 * math.pi)) * np.asarray(amplitudes, dtype=complex)
    w[[0, -1]] *= math.sqrt(0.5)
    out = np.empty(times.shape, dtype=complex)
    for s in range(0, times.size, chunk):
        tau = times[s:s + chunk] - t_final
        out[s:s + chunk] = np.exp(-1j * np.outer(tau, delta)) @ w
    return out


def evolve_discrete_bath(
    initial: NodeState,
    params: NodeParams,
    control: Envelope,
    bath: DiscreteBath,
    grid: Optional[TimeGrid] = None,
    substeps: Optional[int] = None,
    max_phase_step: float = 0.05,
) -> BathResult:
    """Evolve node plus explicit bath exactly in the single-excitation sector.

    The node's ``gamma`` is replaced by the bath couplings; the bath's own
    ``gamma`` sets them.  Each grid step is split into ``substeps`` RK4
    steps so that the fastest mode rotates by at most ``max_phase_step``.
    """
    params.check_resonance()
    grid = control.grid if grid is None else grid
    grid.require_same(control.grid, "control")
    if bath.N > MAX_BATH_MODES:
        raise OracleMemoryError(f"{bath.N} bath modes exceed the limit of {MAX_BATH_MODES}")
    if bath.gamma > 0 and bath.bandwidth < 50 * bath.gamma:
        warnings.warn(f"bath bandwidth {bath.bandwidth:.3g} is below 50 gamma; the Markov limit is not reached",
                      RuntimeWarning, stacklevel=2)
    if grid.duration > bath.recurrence_time:
        warnings.warn("run is longer than the bath recurrence time 2 pi / spacing", RuntimeWarning, stacklevel=2)
    fastest = max(0.5 * bath.bandwidth, abs(params.G), params.gamma_q, params.gamma_r, params.gamma_c,
                  float(np.max(np.abs(control.samples))), math.sqrt(bath.gamma * bath.bandwidth))
    if substeps is None:
        substeps = max(1, math.ceil(fastest * grid.dt / max_phase_step))
    y = np.zeros(3 + bath.N, dtype=complex)
    y[:3] = initial.as_array()
    y0_norm = float(np.vdot(y, y).real)
    out = np.zeros((grid.n_steps + 1, 3), dtype=complex)
    fail = _bath_kernel(y, np.ascontiguousarray(control.samples), np.ascontiguousarray(control.at_midpoints()),
                        int(substeps), grid.dt, bath.detunings, bath.kappa_j, params.G,
                        params.gamma_q, params.gamma_r, params.gamma_c, out)
    if fail >= 0:
        raise IntegrationError(f"discrete-bath evolution diverged at t = {grid.times[fail]:.6g} us", grid.times[fail])
    out.setflags(write=False)
    a_out = reconstruct_output(bath, y[3:], grid.t_end, grid.times)
    node = NodeParams(
        gamma=bath.gamma, G=params.G, lambda_max=params.lambda_max, Delta_c=params.Delta_c,
        omega_p=params.omega_p, omega_q=params.omega_q, gamma_q=params.gamma_q,
        gamma_r=params.gamma_r, gamma_c=params.gamma_c,
    )
    traj = Trajectory(grid, out, Envelope(grid, a_out), Envelope.zeros(grid), control, node)
    drift = abs(float(np.vdot(y, y).real) - y0_norm)
    return BathResult(traj, bath, y[3:].copy(), int(substeps), drift)


@dataclass(frozen=True)
class FockTruncation:
    n_phonon_max: int = 4
    n_cavity_max: int = 4

    def __post_init__(self):
        if self.n_phonon_max < 2 or self.n_cavity_max < 2:
            raise ValueError("Fock cutoffs must be at least 2 to expose counter-rotating leakage")

    @property
    def dim(self) -> int:
        return 2 * (self.n_phonon_max + 1) * (self.n_cavity_max + 1)

    def index(self, spin_up: bool, n_p: int, n_c: int) -> int:
        return ((1 if spin_up else 0) * (self.n_phonon_max + 1) + n_p) * (self.n_cavity_max + 1) + n_c


def _fock_operators(trunc: FockTruncation):
    def ladder(n):
        return np.diag(np.sqrt(np.arange(1, n + 1, dtype=float)), 1)

    b = np.kron(np.eye(2), np.kron(ladder(trunc.n_phonon_max), np.eye(trunc.n_cavity_max + 1)))
    c = np.kron(np.eye(2), np.kron(np.eye(trunc.n_phonon_max + 1), ladder(trunc.n_cavity_max)))
    sp = np.zeros((2, 2))
    sp[1, 0] = 1.0  # |up> = index 1
    sigma_p = np.kron(sp, np.eye((trunc.n_phonon_max + 1) * (trunc.n_cavity_max + 1)))
    return b, c, sigma_p


@dataclass(frozen=True, eq=False)
class NonRwaResult:
    grid: TimeGrid
    amplitudes: np.ndarray  # tracked (beta_q, beta_r, beta_c) in the rotating frame
    state: np.ndarray  # full rotating-frame state at each grid time
    cutoff_population: float
    rwa: Trajectory
    deviation: "DeviationReport"

    @property
    def max_deviation(self) -> float:
        return max(self.deviation.max_abs[k] for k in ("beta_q", "beta_r", "beta_c"))


def evolve_nonrwa(
    initial: NodeState,
    params: NodeParams,
    control: Envelope,
    trunc: FockTruncation = FockTruncation(),
    grid: Optional[TimeGrid] = None,
) -> NonRwaResult:
    """Lab-frame evolution with all counter-rotating couplings kept.

    The fiber is replaced by Markovian cavity decay, so the effective
    Hamiltonian carries -i (gamma + gamma_c)/2 c^dag c together with the
    phonon and spin damping terms.  Steps use a fourth-order
    commutator-free Magnus scheme; a constant control reuses one propagator.
    """
    params.check_resonance()
    grid = control.grid if grid is None else grid
    grid.require_same(control.grid, "control")
    peak = max(float(np.max(np.abs(control.samples))), abs(params.G))
    if params.omega_p < 10 * peak:
        warnings.warn("omega_p is not much larger than the couplings; the RWA comparison is not meaningful",
                      RuntimeWarning, stacklevel=2)
    b, c, sp = _fock_operators(trunc)
    sm = sp.T
    bd, cd = b.T, c.T
    n_b, n_c = bd @ b, cd @ c
    up = sp @ sm
    energies = np.diag(0.5 * params.omega_q * (2 * up - np.eye(trunc.dim)) + params.omega_p * n_b + params.Delta_c * n_c).copy()
    H0 = (np.diag(energies) - 0.5j * ((params.gamma + params.gamma_c) * n_c + params.gamma_r * n_b + params.gamma_q * up)
          + (params.G * cd + np.conj(params.G) * c) @ (bd + b))
    Vp = sp @ (b + bd)  # multiplies lambda/2

    def H(lam):
        return H0 + 0.5 * lam * Vp + 0.5 * np.conj(lam) * Vp.conj().T

    iq = trunc.index(True, 0, 0)
    ir = trunc.index(False, 1, 0)
    ic = trunc.index(False, 0, 1)
    times = grid.times
    psi = np.zeros(trunc.dim, dtype=complex)
    psi[[iq, ir, ic]] = initial.as_array() * np.exp(-1j * energies[[iq, ir, ic]] * times[0])
    edge = np.zeros(trunc.dim, dtype=bool)
    for s in (False, True):
        for p in range(trunc.n_phonon_max + 1):
            for q in range(trunc.n_cavity_max + 1):
                if p == trunc.n_phonon_max or q == trunc.n_cavity_max:
                    edge[trunc.index(s, p, q)] = True

    dt = grid.dt
    a1 = (3 - 2 * math.sqrt(3)) / 12
    a2 = (3 + 2 * math.sqrt(3)) / 12
    g1, g2 = 0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6
    s0 = control.samples[0]
    constant = bool(np.all(control.samples == s0) and np.all(control.at_midpoints() == s0))
    if constant:
        U_const = expm(-1j * dt * H(complex(control.samples[0])))

    states = np.empty((grid.n_steps + 1, trunc.dim), dtype=complex)
    states[0] = psi * np.exp(1j * energies * times[0])
    worst = 0.0
    for k in range(grid.n_steps):
        if constant:
            psi = U_const @ psi
        else:
            t = times[k]
            la, lb = control(np.array([t + g1 * dt, t + g2 * dt]))
            Ha, Hb = H(la), H(lb)
            psi = expm(-1j * dt * (a2 * Ha + a1 * Hb)) @ psi
            psi = expm(-1j * dt * (a1 * Ha + a2 * Hb)) @ psi
        states[k + 1] = psi * np.exp(1j * energies * times[k + 1])
        worst = max(worst, float(np.sum(np.abs(psi[edge]) ** 2)))
    if worst > CUTOFF_POPULATION:
        raise TruncationError(
            f"population {worst:.3g} reached the Fock cutoff ({trunc.n_phonon_max}, {trunc.n_cavity_max}); "
            "raise the truncation"
        )
    amps = states[:, [iq, ir, ic]]
    amps.setflags(write=False)
    rwa = integrate_node(initial, params, control, grid=grid)
    mine = Trajectory(grid, amps, Envelope(grid, output_field(amps, params)), Envelope.zeros(grid), control, params)
    return NonRwaResult(grid, amps, states, worst, rwa, compare_trajectories(mine, rwa))


@dataclass(frozen=True)
class DeviationReport:
    max_abs: dict
    l2: dict

    def worst(self) -> float:
        return max(self.max_abs.values())

    def to_text(self) -> str:
        lines = [f"{'quantity':<12}{'max_abs':>16}{'l2':>16}"]
        for k in self.max_abs:
            lines.append(f"{k:<12}{self.max_abs[k]:>16.6e}{self.l2[k]:>16.6e}")
        return "\n".join(lines) + "\n"


def compare_trajectories(a, b) -> DeviationReport:
    """Max and L2 (over time) deviations per tracked amplitude.

    Accepts two trajectories or two envelopes on the same grid.
    """
    if isinstance(a, Envelope) and isinstance(b, Envelope):
        if not a.grid.same_as(b.grid):
            raise GridMismatchError("envelopes use different grids")
        pairs = {"envelope": (a.samples, b.samples)}
        dt = a.grid.dt
    else:
        if not a.grid.same_as(b.grid):
            raise GridMismatchError("trajectories use different grids")
        pairs = {
            "beta_q": (a.amplitudes[:, 0], b.amplitudes[:, 0]),
            "beta_r": (a.amplitudes[:, 1], b.amplitudes[:, 1]),
            "beta_c": (a.amplitudes[:, 2], b.amplitudes[:, 2]),
            "alpha_out": (a.alpha_out.samples, b.alpha_out.samples),
        }
        dt = a.grid.dt
    max_abs, l2 = {}, {}
    for k, (x, y) in pairs.items():
        d = np.abs(np.asarray(x) - np.asarray(y))
        max_abs[k] = float(np.max(d)) if d.size else 0.0
        l2[k] = float(math.sqrt(np.trapezoid(d ** 2, dx=dt)))
    return DeviationReport(max_abs, l2)
