"""Control pulses that emit or absorb a prescribed photon wavepacket.

Both constructions work on the lossless equations: the cavity amplitude
follows from the desired field through the input-output relation, the
phonon amplitude from the cavity equation, the qubit amplitude from
excitation conservation, and finally the control from the phonon equation.
The pulse is then meant to drive the real (lossy) node unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import Envelope, InterfaceError, NodeParams, NodeState, TimeGrid
from .dynamics import Trajectory, integrate_node

EPS_Q = 1e-6
EPS_START = 1e-6
RADICAND_TOL = 1e-9
# |lambda| above this fraction of its peak counts as "active" control
ACTIVE_FRACTION = 0.01
REGULAR_BQ = 1e-3


class InfeasibleTargetError(InterfaceError, ValueError):
    def __init__(self, message: str, time: Optional[float] = None):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class ClampReport:
    lambda_max: float
    intervals: tuple[tuple[float, float], ...] = ()
    n_clamped: int = 0

    @property
    def clamped(self) -> bool:
        return self.n_clamped > 0


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    control: Envelope
    reference: Trajectory
    radicand: np.ndarray = field(repr=False)
    min_abs_beta_q: float = 1.0
    clamp: Optional[ClampReport] = None
    active_start: Optional[float] = None
    active_stop: Optional[float] = None
    min_radicand: float = 0.0
    regular_peak: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.min_radicand >= -RADICAND_TOL

    @property
    def active_duration(self) -> float:
        if self.active_start is None:
            return 0.0
        return self.active_stop - self.active_start

    @property
    def peak(self) -> float:
        return float(np.max(np.abs(self.control.samples)))


def _active_span(times: np.ndarray, lam: np.ndarray):
    mag = np.abs(lam)
    peak = mag.max()
    if peak == 0.0:
        return None, None
    idx = np.nonzero(mag >= ACTIVE_FRACTION * peak)[0]
    return float(times[idx[0]]), float(times[idx[-1]])


def _field_arrays(env: Envelope, grid: TimeGrid):
    if not env.grid.same_as(grid):
        env = env.on_grid(grid)
    return env, env.samples, env.derivative(), env.second_derivative(), env.cumulative_energy()


def _analytic(env: Envelope) -> bool:
    return all(f is not None for f in (env.func, env.deriv, env.deriv2, env.cumulative))


def _control_from_phonon(br_dot, bc, bq, G, active):
    # lossless phonon equation solved for the control:
    #   d(beta_r)/dt = -i (conj(lambda)/2 beta_q + conj(G) beta_c)
    safe = np.where(active, bq, 1.0)
    lam_conj = 2.0 * (1j * br_dot - np.conj(G) * bc) / safe
    return np.where(active, np.conj(lam_conj), 0.0)


def _emission_profile(a, ad, add, cum, s, gamma, G):
    sg = math.sqrt(gamma)
    bc = s * a / sg
    bcd = s * ad / sg
    bcdd = s * add / sg
    br = 1j * (bcd + 0.5 * gamma * bc) / G
    brd = 1j * (bcdd + 0.5 * gamma * bcd) / G
    rad = 1.0 - np.abs(br) ** 2 - np.abs(bc) ** 2 - s * s * cum
    return bc, br, brd, rad


def _absorption_profile(a, ad, add, cum, gamma, G):
    sg = math.sqrt(gamma)
    bc = -a / sg
    bcd = -ad / sg
    bcdd = -add / sg
    br = 1j * (bcd + sg * a + 0.5 * gamma * bc) / G
    brd = 1j * (bcdd + sg * ad + 0.5 * gamma * bcd) / G
    rad = cum - np.abs(br) ** 2 - np.abs(bc) ** 2
    return bc, br, brd, rad


def _check_node(params: NodeParams):
    params.check_resonance()
    if params.G == 0:
        raise InfeasibleTargetError("synthesis needs a non-zero optomechanical coupling G")
    if params.gamma <= 0:
        raise InfeasibleTargetError("synthesis needs a positive extraction rate gamma")


def _check_radicand(rad, mask, times, what, strict) -> float:
    """Most negative qubit population demanded inside ``mask``; raises when strict."""
    if not np.any(mask):
        return 0.0
    worst = float(min(0.0, np.min(rad[mask])))
    if strict and worst < -RADICAND_TOL:
        bad = int(np.nonzero(mask & (rad < -RADICAND_TOL))[0][0])
        t = float(times[bad])
        raise InfeasibleTargetError(
            f"{what} is infeasible for this node: qubit population would be {rad[bad]:.3e} at t = {t:.4g} us",
            t,
        )
    return worst


def _regular_peak(lam, bq):
    # peak of the control away from the integrable 1/beta_q spikes that the
    # regularization leaves behind when a target is infeasible
    ok = bq >= REGULAR_BQ
    return float(np.max(np.abs(lam[ok]))) if np.any(ok) else 0.0


def _crossing(target, t_start, s, params, eps_q, lo, hi):
    """Grid-independent time at which the emission reference qubit amplitude falls to eps_q."""
    c0 = float(target.cumulative(np.array([t_start]))[0])

    def bq_minus_eps(t):
        t = np.array([t])
        *_, rad = _emission_profile(target.func(t), target.deriv(t), target.deriv2(t), target.cumulative(t) - c0, s, params.gamma, params.G)
        return math.sqrt(max(float(rad[0]), 0.0)) - eps_q

    if bq_minus_eps(lo) <= 0 or bq_minus_eps(hi) > 0:
        return hi
    return float(brentq(bq_minus_eps, lo, hi, xtol=1e-14))


def synthesize_emission(
    target: Envelope,
    theta: float,
    params: NodeParams,
    grid: Optional[TimeGrid] = None,
    phi: float = 0.0,
    eps_q: float = EPS_Q,
    strict: bool = True,
) -> SynthesisResult:
    """Control that releases ``sin(theta) * target`` into the fiber.

    ``target`` must carry unit energy.  ``phi`` multiplies the control by
    exp(i phi), which rotates the emitted photon by exp(-i phi) relative to
    the spin.  The qubit amplitude is taken real and non-negative, which is
    exact for targets of constant phase.

    With ``strict=False`` an infeasible target does not raise; the qubit
    amplitude is clipped at zero and the result reports ``feasible=False``.
    """
    if not (0.0 <= theta <= math.pi / 2 + 1e-12):
        raise ValueError(f"theta must lie in [0, pi/2], got {theta}")
    grid = target.grid if grid is None else grid
    target, a, ad, add, cum = _field_arrays(target, grid)
    if not target.is_normalized():
        raise ValueError(f"target wavepacket must be normalized (energy {target.energy():.8f})")
    _check_node(params)
    s = math.sin(theta)
    times = grid.times
    bc, br, brd, rad = _emission_profile(a, ad, add, cum, s, params.gamma, params.G)
    bq = np.sqrt(np.clip(rad, 0.0, None))
    below = np.nonzero(bq < eps_q)[0]
    t_freeze = float(times[below[0]]) if len(below) else math.inf
    analytic = _analytic(target) and s > 0
    if analytic and len(below) and below[0] > 0:
        t_freeze = _crossing(target, grid.t_start, s, params, eps_q, times[below[0] - 1], t_freeze)
    live = times < t_freeze
    worst = _check_radicand(rad, np.ones_like(live), times, "target wavepacket", strict)
    lam = _control_from_phonon(brd, bc, bq, params.G, live & (bq >= eps_q)) * np.exp(1j * phi)

    func = None
    if analytic:
        c0 = float(target.cumulative(np.array([grid.t_start]))[0])
        tf, tcum, sgn = target.func, target.cumulative, np.exp(1j * phi)

        def func(t):
            t = np.asarray(t, dtype=float)
            c_, r_, rd_, rad_ = _emission_profile(tf(t), target.deriv(t), target.deriv2(t), tcum(t) - c0, s, params.gamma, params.G)
            q_ = np.sqrt(np.clip(rad_, 0.0, None))
            ok = (t < t_freeze) & (q_ >= eps_q)
            return _control_from_phonon(rd_, c_, q_, params.G, ok) * sgn
    elif s == 0:
        func = Envelope.zeros(grid).func

    control = Envelope(grid, lam, func)
    rot = np.exp(-1j * phi)
    amps = np.column_stack([bq.astype(complex), br * rot, bc * rot])
    amps.setflags(write=False)
    emitted = Envelope(grid, s * a * rot)
    reference = Trajectory(grid, amps, emitted, Envelope.zeros(grid), control, params.lossless())
    start, stop = _active_span(times, lam)
    return SynthesisResult(control, reference, rad, float(np.min(bq)), None, start, stop, worst, _regular_peak(lam, bq))


def synthesize_absorption(
    incoming: Envelope,
    params: NodeParams,
    grid: Optional[TimeGrid] = None,
    eps_start: float = EPS_START,
    eps_q: float = EPS_Q,
    strict: bool = True,
) -> SynthesisResult:
    """Impedance-matched control that absorbs ``incoming`` without reflection.

    The node starts in its ground state; the control stays off until
    ``eps_start`` of the incoming energy has arrived.
    """
    grid = incoming.grid if grid is None else grid
    incoming, a, ad, add, cum = _field_arrays(incoming, grid)
    _check_node(params)
    times = grid.times
    bc, br, brd, rad = _absorption_profile(a, ad, add, cum, params.gamma, params.G)
    bq = np.sqrt(np.clip(rad, 0.0, None))
    arrived = cum > eps_start
    if np.any(arrived):
        t_on = float(times[np.argmax(arrived)])
    else:
        t_on = math.inf
    on = times >= t_on
    worst = _check_radicand(rad, on, times, "incoming wavepacket", strict)
    lam = _control_from_phonon(brd, bc, bq, params.G, on & (bq >= eps_q))

    func = None
    if _analytic(incoming):
        c0 = float(incoming.cumulative(np.array([grid.t_start]))[0])
        f, fc = incoming.func, incoming.cumulative

        def func(t):
            t = np.asarray(t, dtype=float)
            c_, r_, rd_, rad_ = _absorption_profile(f(t), incoming.deriv(t), incoming.deriv2(t), fc(t) - c0, params.gamma, params.G)
            q_ = np.sqrt(np.clip(rad_, 0.0, None))
            return _control_from_phonon(rd_, c_, q_, params.G, (t >= t_on) & (q_ >= eps_q))

    control = Envelope(grid, lam, func)
    amps = np.column_stack([bq.astype(complex), br, bc])
    amps.setflags(write=False)
    reference = Trajectory(grid, amps, Envelope(grid, np.zeros_like(a)), incoming, control, params.lossless())
    start, stop = _active_span(times, lam)
    min_bq = float(np.min(bq[on])) if np.any(on) else 0.0
    return SynthesisResult(control, reference, rad, min_bq, None, start, stop, worst, _regular_peak(lam, bq))


def clamp_control(control: Envelope, lambda_max: float) -> tuple[Envelope, ClampReport]:
    """Limit |lambda| to ``lambda_max`` pointwise, keeping the phase.

    ``lambda_max = 0`` switches the control off entirely.
    """
    if not lambda_max >= 0:
        raise ValueError("lambda_max must be non-negative")
    if math.isinf(lambda_max):
        return control, ClampReport(lambda_max)

    def clip(v):
        v = np.asarray(v, dtype=complex)
        mag = np.abs(v)
        scale = np.where(mag > lambda_max, lambda_max / np.where(mag > 0, mag, 1.0), 1.0)
        return v * scale

    samples = control.samples
    hit = np.abs(samples) > lambda_max
    intervals = []
    if np.any(hit):
        t = control.times
        edges = np.diff(np.concatenate([[0], hit.astype(np.int8), [0]]))
        for i0, i1 in zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]):
            intervals.append((float(t[i0]), float(t[i1 - 1])))
    func = None if control.func is None else (lambda t: clip(control.func(t)))
    out = Envelope(control.grid, clip(samples), func)
    return out, ClampReport(lambda_max, tuple(intervals), int(hit.sum()))


def apply_bound(result: SynthesisResult, lambda_max: float) -> SynthesisResult:
    """Clamp a synthesized pulse to the node's tunable range."""
    ctrl, report = clamp_control(result.control, lambda_max)
    return replace(result, control=ctrl, clamp=report)


def closed_loop_emission(result: SynthesisResult, params: NodeParams, initial: NodeState = NodeState.excited()) -> dict:
    """Drive the lossless node with the synthesized pulse and compare to the reference."""
    traj = integrate_node(initial, params.lossless(), result.control)
    ref = result.reference.alpha_out.samples
    diff = traj.alpha_out.samples - ref
    l2 = math.sqrt(float(np.trapezoid(np.abs(diff) ** 2, dx=traj.grid.dt)))
    return {"trajectory": traj, "l2_error": l2, "beta_q_final": complex(traj.beta_q[-1])}
