"""Fixed-step RK4 integration of one node and of a two-node cascade."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .core import (
    Envelope,
    GridMismatchError,
    InterfaceError,
    NodeParams,
    NodeState,
    TimeGrid,
    norm_ledger,
    output_field,
)

# amplitudes beyond this are treated as numerical blow-up
_DIVERGENCE_BOUND = 1e6


class IntegrationError(InterfaceError, ArithmeticError):
    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@numba.njit(cache=True)
def _deriv(bq, br, bc, lam, ain, sg, G, Gc, gq, gr, gtot):
    dq = -0.5j * lam * br - 0.5 * gq * bq
    dr = -1j * (0.5 * np.conj(lam) * bq + Gc * bc) - 0.5 * gr * br
    dc = -1j * G * br - sg * ain - 0.5 * gtot * bc
    return dq, dr, dc


@numba.njit(cache=True)
def _rk4_kernel(y0, lam, lam_half, ain, ain_half, dt, gamma, G, gq, gr, gc, out):
    sg = math.sqrt(gamma)
    Gc = np.conj(G)
    gtot = gamma + gc
    bq, br, bc = y0[0], y0[1], y0[2]
    out[0, 0] = bq
    out[0, 1] = br
    out[0, 2] = bc
    h = 0.5 * dt
    for k in range(len(lam_half)):
        lm = lam_half[k]
        am = ain_half[k]
        k1q, k1r, k1c = _deriv(bq, br, bc, lam[k], ain[k], sg, G, Gc, gq, gr, gtot)
        k2q, k2r, k2c = _deriv(bq + h * k1q, br + h * k1r, bc + h * k1c, lm, am, sg, G, Gc, gq, gr, gtot)
        k3q, k3r, k3c = _deriv(bq + h * k2q, br + h * k2r, bc + h * k2c, lm, am, sg, G, Gc, gq, gr, gtot)
        k4q, k4r, k4c = _deriv(bq + dt * k3q, br + dt * k3r, bc + dt * k3c, lam[k + 1], ain[k + 1], sg, G, Gc, gq, gr, gtot)
        bq = bq + dt / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
        br = br + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        bc = bc + dt / 6.0 * (k1c + 2.0 * k2c + 2.0 * k3c + k4c)
        mag = abs(bq) + abs(br) + abs(bc)
        if not (mag < _DIVERGENCE_BOUND):
            return k + 1
        out[k + 1, 0] = bq
        out[k + 1, 1] = br
        out[k + 1, 2] = bc
    return -1


@dataclass(frozen=True, eq=False)
class Trajectory:
    grid: TimeGrid
    amplitudes: np.ndarray
    alpha_out: Envelope
    alpha_in: Envelope
    control: Envelope
    params: NodeParams

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def beta_q(self) -> np.ndarray:
        return self.amplitudes[:, 0]

    @property
    def beta_r(self) -> np.ndarray:
        return self.amplitudes[:, 1]

    @property
    def beta_c(self) -> np.ndarray:
        return self.amplitudes[:, 2]

    @property
    def states(self) -> list[NodeState]:
        return [NodeState.from_array(a) for a in self.amplitudes]

    @property
    def final(self) -> NodeState:
        return NodeState.from_array(self.amplitudes[-1])

    def ledger(self):
        return norm_ledger(self, self.params)

    def columns(self, suffix: str = "") -> dict[str, np.ndarray]:
        cols = {}
        for name, arr in (
            ("bq", self.beta_q),
            ("br", self.beta_r),
            ("bc", self.beta_c),
            ("ain", self.alpha_in.samples),
            ("aout", self.alpha_out.samples),
            ("lambda", self.control.samples),
        ):
            cols[f"{name}{suffix}_re"] = arr.real
            cols[f"{name}{suffix}_im"] = arr.imag
        return cols


@dataclass(frozen=True, eq=False)
class CascadeTrajectory:
    """Sending node 1 feeding receiving node 2 through a lossless delay line."""

    node1: Trajectory
    node2: Trajectory
    delay: float
    delay_steps: int

    @property
    def grid(self) -> TimeGrid:
        return self.node1.grid

    @property
    def in_flight_energy(self) -> np.ndarray:
        """Energy emitted by node 1 that has not yet reached node 2."""
        e1 = norm_ledger(self.node1, self.node1.params).emitted
        return e1 - delayed_samples(e1, self.delay_steps)

    def joint_budget(self) -> dict:
        """Excitation bookkeeping across both nodes, the delay line and the output port."""
        l1 = norm_ledger(self.node1, self.node1.params)
        l2 = norm_ledger(self.node2, self.node2.params)
        # node 2's injected energy is exactly node 1's emitted energy, delayed
        inflight = l1.emitted - l2.injected
        total = (
            l1.qubit + l1.phonon + l1.cavity + l1.total_loss
            + inflight
            + l2.qubit + l2.phonon + l2.cavity + l2.total_loss
            + l2.emitted
        )
        residual = total - total[0]
        return {
            "node1": l1,
            "node2": l2,
            "in_flight": inflight,
            "escaped": l2.emitted,
            "residual": residual,
            "max_residual": float(np.max(np.abs(residual))),
        }

    def columns(self) -> dict[str, np.ndarray]:
        cols = {"t_us": self.grid.times}
        cols.update(self.node1.columns())
        cols.update(self.node2.columns("2"))
        return cols


def _samples_on(env: Optional[Envelope], grid: TimeGrid, name: str):
    if env is None:
        z = np.zeros(grid.n_steps + 1, dtype=complex)
        return z, np.zeros(grid.n_steps, dtype=complex), Envelope.zeros(grid)
    grid.require_same(env.grid, name)
    if not np.all(np.isfinite(env.samples)):
        bad = int(np.argmax(~np.isfinite(env.samples)))
        raise IntegrationError(f"{name} is not finite at t = {grid.times[bad]:.6g} us", grid.times[bad])
    return np.ascontiguousarray(env.samples), np.ascontiguousarray(env.at_midpoints()), env


def integrate_node(
    initial: NodeState,
    params: NodeParams,
    control: Envelope,
    input: Optional[Envelope] = None,
    grid: Optional[TimeGrid] = None,
) -> Trajectory:
    """Integrate the node amplitudes with classical RK4 on the control's grid.

    Half-step control and input values come from the envelopes' analytic
    suppliers when present and from cubic interpolation otherwise.
    """
    params.check_resonance()
    grid = control.grid if grid is None else grid
    lam, lam_half, control = _samples_on(control, grid, "control")
    ain, ain_half, input = _samples_on(input, grid, "input field")
    y0 = initial.as_array()
    if not np.all(np.isfinite(y0)):
        raise IntegrationError("initial state is not finite", grid.t_start)
    out = np.zeros((grid.n_steps + 1, 3), dtype=complex)
    fail = _rk4_kernel(y0, lam, lam_half, ain, ain_half, grid.dt, params.gamma, params.G,
                       params.gamma_q, params.gamma_r, params.gamma_c, out)
    if fail >= 0:
        t_bad = grid.times[fail]
        raise IntegrationError(
            f"integration diverged at t = {t_bad:.6g} us (dt = {grid.dt:.3g} us is too large "
            f"for rates up to {max(params.max_rate(), float(np.max(np.abs(lam)))):.3g} rad/us)",
            t_bad,
        )
    out.setflags(write=False)
    a_out = output_field(out, params, ain)
    return Trajectory(grid, out, Envelope(grid, a_out), input, control, params)


def delay_steps(delay: float, grid: TimeGrid) -> int:
    if delay < 0:
        raise ValueError("delay must be non-negative")
    k = round(delay / grid.dt)
    if abs(k * grid.dt - delay) > 1e-9 * max(1.0, abs(delay)):
        raise GridMismatchError(f"delay {delay} us is not a multiple of dt = {grid.dt} us")
    return int(k)


def delayed_samples(samples: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros_like(samples)
    if k < len(samples):
        out[k:] = samples[: len(samples) - k]
    return out


def integrate_cascade(
    initials: tuple[NodeState, NodeState],
    params1: NodeParams,
    params2: NodeParams,
    controls: tuple[Envelope, Envelope],
    delay: float = 0.0,
    grid: Optional[TimeGrid] = None,
) -> CascadeTrajectory:
    """Node 1 emits into the fiber; node 2 sees that field retarded by ``delay``.

    In the single-excitation sector the two nodes share one excitation, so
    the joint amplitudes are node 1's (1, 0)-branch and node 2's
    (0, 1)-branch; node 2 starts from the amplitudes in ``initials[1]``.
    """
    grid = controls[0].grid if grid is None else grid
    k = delay_steps(delay, grid)
    tr1 = integrate_node(initials[0], params1, controls[0], None, grid)
    arriving = delayed_samples(tr1.alpha_out.samples, k)
    tr2 = integrate_node(initials[1], params2, controls[1], Envelope(grid, arriving), grid)
    return CascadeTrajectory(tr1, tr2, k * grid.dt, k)


@dataclass(frozen=True)
class Scenario:
    """Grid-independent description of an integration problem."""

    initial: NodeState
    params: NodeParams
    control: Callable[[np.ndarray], np.ndarray]
    t_start: float
    t_end: float
    input: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def run(self, n_steps: int) -> Trajectory:
        grid = TimeGrid(self.t_start, self.t_end, n_steps)
        ctrl = Envelope.from_function(grid, self.control)
        inp = None if self.input is None else Envelope.from_function(grid, self.input)
        return integrate_node(self.initial, self.params, ctrl, inp, grid)


@dataclass(frozen=True)
class ConvergenceResult:
    order: float
    err_coarse: float
    err_fine: float
    degenerate: bool = False
    n_steps: int = 0

    def __str__(self):
        if self.degenerate:
            return "degenerate (errors vanish)"
        return f"order {self.order:.3f} (err {self.err_coarse:.3e} -> {self.err_fine:.3e}, n = {self.n_steps})"


def convergence_order(scenario: Scenario, n_steps: int = 200) -> ConvergenceResult:
    """Observed order from runs at dt and dt/2 measured against a dt/8 reference."""
    runs = [scenario.run(n_steps * m).amplitudes for m in (1, 2, 8)]
    coarse = runs[0]
    fine = runs[1][::2]
    ref = runs[2][::8]
    e1 = float(np.max(np.abs(coarse - ref)))
    e2 = float(np.max(np.abs(fine - ref)))
    if e1 == 0.0 and e2 == 0.0:
        return ConvergenceResult(math.nan, 0.0, 0.0, True, n_steps)
    if e2 == 0.0:
        return ConvergenceResult(math.inf, e1, e2, False, n_steps)
    return ConvergenceResult(math.log2(e1 / e2), e1, e2, False, n_steps)


def default_step(rates: Sequence[float], factor: float = 0.01) -> float:
    """Largest dt with max(rates) * dt <= factor."""
    r = max(abs(float(x)) for x in rates)
    return math.inf if r == 0 else factor / r


SINGLE_NODE_COLUMNS = (
    "t_us", "bq_re", "bq_im", "br_re", "br_im", "bc_re", "bc_im",
    "ain_re", "ain_im", "aout_re", "aout_im", "lambda_re", "lambda_im",
)


def trajectory_columns(traj) -> dict[str, np.ndarray]:
    if isinstance(traj, CascadeTrajectory):
        return traj.columns()
    cols = {"t_us": traj.times}
    cols.update(traj.columns())
    return cols


def write_csv(path, columns: dict[str, np.ndarray]) -> Path:
    """Write equal-length columns with repr-exact floats."""
    path = Path(path)
    names = list(columns)
    data = [np.asarray(columns[n], dtype=float) for n in names]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*data):
            w.writerow([repr(float(x)) for x in row])
    return path


def export_trajectory(traj, path) -> Path:
    return write_csv(path, trajectory_columns(traj))
