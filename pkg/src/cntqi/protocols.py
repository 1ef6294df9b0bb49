"""State-transfer primitives built from synthesis and integration.

The joint state is always tracked in the single-excitation picture: the
ground branch ``C0 |down...>`` never evolves, so only the excited branch
is integrated and the result is scaled by ``C1``.  Fidelities treat any
population that ended up outside the tracked sector as orthogonal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Envelope, GridMismatchError, NodeParams, NodeState, TimeGrid
from .dynamics import CascadeTrajectory, integrate_cascade, integrate_node
from .synthesis import SynthesisResult, apply_bound, synthesize_absorption, synthesize_emission


@dataclass(frozen=True)
class QubitAmplitudes:
    C0: complex
    C1: complex

    def __post_init__(self):
        object.__setattr__(self, "C0", complex(self.C0))
        object.__setattr__(self, "C1", complex(self.C1))
        norm = abs(self.C0) ** 2 + abs(self.C1) ** 2
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"|C0|^2 + |C1|^2 = {norm!r}, expected 1")

    @classmethod
    def bloch(cls, polar: float, azimuth: float = 0.0) -> "QubitAmplitudes":
        return cls(math.cos(polar / 2), np.exp(1j * azimuth) * math.sin(polar / 2))

    def as_array(self) -> np.ndarray:
        return np.array([self.C0, self.C1])


@dataclass(eq=False)
class ProtocolReport:
    kind: str
    status: str
    amplitudes: dict
    fidelities: dict
    budget: dict
    timing: dict
    envelopes: dict = field(default_factory=dict, repr=False)
    trajectory: Optional[object] = field(default=None, repr=False)
    synthesis: dict = field(default_factory=dict, repr=False)

    def summary(self) -> dict:
        def plain(v):
            if isinstance(v, complex):
                return {"re": v.real, "im": v.imag}
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            return v

        return {
            "kind": self.kind,
            "status": self.status,
            "amplitudes": {k: plain(v) for k, v in self.amplitudes.items()},
            "fidelities": {k: plain(v) for k, v in self.fidelities.items()},
            "budget": {k: plain(v) for k, v in self.budget.items()},
            "timing": {k: plain(v) for k, v in self.timing.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"protocol: {self.kind}", f"status: {self.status}"]
        for section in ("fidelities", "amplitudes", "budget", "timing"):
            lines.append(f"[{section}]")
            for k, v in getattr(self, section).items():
                if isinstance(v, complex):
                    lines.append(f"{k} = {v.real:.12g} {v.imag:+.12g}j")
                else:
                    lines.append(f"{k} = {v:.12g}" if isinstance(v, float) else f"{k} = {v}")
        return "\n".join(lines) + "\n"


def fidelity_state(final, target) -> float:
    """|<target|final>|^2 over the tracked sector; ``target`` must be normalized."""
    f = np.asarray(final, dtype=complex).ravel()
    t = np.asarray(target, dtype=complex).ravel()
    if f.shape != t.shape:
        raise ValueError("final and target live in different sectors")
    nt = float(np.vdot(t, t).real)
    if abs(nt - 1.0) > 1e-9:
        raise ValueError(f"target is not normalized (norm^2 = {nt})")
    return float(min(1.0, abs(np.vdot(t, f)) ** 2))


def overlap(a: Envelope, b: Envelope) -> complex:
    """L2 inner product <a|b> by the trapezoid rule."""
    a.grid.require_same(b.grid, "wavepackets")
    return complex(np.trapezoid(np.conj(a.samples) * b.samples, dx=a.grid.dt))


def fidelity_wavepacket(emitted: Envelope, target: Envelope) -> float:
    """|<target|emitted>|^2 without renormalizing the emitted packet."""
    if isinstance(emitted, Envelope) and isinstance(target, Envelope):
        if not emitted.grid.same_as(target.grid):
            raise GridMismatchError("emitted and target packets use different grids")
    return float(min(1.0, abs(overlap(target, emitted)) ** 2))


def _drive(result: SynthesisResult, params: NodeParams) -> SynthesisResult:
    return apply_bound(result, params.lambda_max)


def emit_photon(
    qubit: QubitAmplitudes,
    theta: float,
    params: NodeParams,
    target: Envelope,
    grid: Optional[TimeGrid] = None,
    phi: float = 0.0,
    strict: bool = True,
) -> ProtocolReport:
    """Map the spin onto ``C0|vac> + C1(cos theta |up> + sin theta |target>)``."""
    grid = target.grid if grid is None else grid
    if not target.grid.same_as(grid):
        target = target.on_grid(grid)
    synth = _drive(synthesize_emission(target, theta, params.lossless(), grid, phi, strict=strict), params)
    traj = integrate_node(NodeState.excited(), params, synth.control)
    bq_f = complex(traj.beta_q[-1])
    ov = overlap(target, traj.alpha_out)
    C0, C1 = qubit.C0, qubit.C1
    rot = np.exp(-1j * phi)
    # basis {|down,vac>, |up,vac>, |down, target>}
    final = np.array([C0, C1 * bq_f, C1 * ov])
    ideal = np.array([C0, C1 * math.cos(theta), C1 * math.sin(theta) * rot])
    ledger = traj.ledger()
    return ProtocolReport(
        kind="emit",
        status="ok" if synth.feasible else "infeasible",
        amplitudes={"C0": C0, "C1": C1, "beta_q_final": bq_f, "photon_overlap": ov},
        fidelities={
            "state": fidelity_state(final, ideal),
            "wavepacket": fidelity_wavepacket(traj.alpha_out, target.scaled(math.sin(theta) * rot)) / max(math.sin(theta) ** 2, 1e-300)
            if theta > 0 else 1.0,
        },
        budget={
            "emitted": abs(C1) ** 2 * float(ledger.emitted[-1]),
            "qubit": abs(C1) ** 2 * float(ledger.qubit[-1]),
            "lost": abs(C1) ** 2 * float(ledger.total_loss[-1]),
            "max_residual": ledger.max_residual,
        },
        timing={
            "t_start": grid.t_start,
            "t_end": grid.t_end,
            "dt": grid.dt,
            "active_start": synth.active_start if synth.active_start is not None else math.nan,
            "active_stop": synth.active_stop if synth.active_stop is not None else math.nan,
            "active_duration": synth.active_duration,
        },
        envelopes={"target": target, "emitted": traj.alpha_out, "control": synth.control},
        trajectory=traj,
        synthesis={"emission": synth},
    )


def _cascade(params1, params2, target, theta, delay, grid, phi, strict):
    grid = target.grid if grid is None else grid
    if not target.grid.same_as(grid):
        target = target.on_grid(grid)
    send = _drive(synthesize_emission(target, theta, params1.lossless(), grid, phi, strict=strict), params1)
    # node 2 is designed for the ideal packet node 1 would release
    arriving = target.scaled(math.sin(theta)).shifted(delay) if delay else target.scaled(math.sin(theta))
    recv = _drive(synthesize_absorption(arriving, params2.lossless(), grid, strict=strict), params2)
    casc = integrate_cascade((NodeState.excited(), NodeState.ground()), params1, params2,
                             (send.control, recv.control), delay, grid)
    return grid, target, send, recv, casc


def _cascade_report(kind, casc: CascadeTrajectory, send, recv, grid, extra_amps, fidelities):
    budget = casc.joint_budget()
    return ProtocolReport(
        kind=kind,
        status="ok" if (send.feasible and recv.feasible) else "infeasible",
        amplitudes={
            "beta_q1_final": complex(casc.node1.beta_q[-1]),
            "beta_q2_final": complex(casc.node2.beta_q[-1]),
            **extra_amps,
        },
        fidelities=fidelities,
        budget={
            "population_q1": abs(casc.node1.beta_q[-1]) ** 2,
            "population_q2": abs(casc.node2.beta_q[-1]) ** 2,
            "in_flight": float(budget["in_flight"][-1]),
            "escaped": float(budget["escaped"][-1]),
            "lost_node1": float(budget["node1"].total_loss[-1]),
            "lost_node2": float(budget["node2"].total_loss[-1]),
            "max_residual": budget["max_residual"],
        },
        timing={
            "t_start": grid.t_start,
            "t_end": grid.t_end,
            "dt": grid.dt,
            "delay": casc.delay,
            "send_active_duration": send.active_duration,
            "receive_active_duration": recv.active_duration,
        },
        envelopes={
            "control1": send.control,
            "control2": recv.control,
            "in_flight": casc.node1.alpha_out,
            "escaped": casc.node2.alpha_out,
        },
        trajectory=casc,
        synthesis={"emission": send, "absorption": recv},
    )


def distribute_entanglement(
    params1: NodeParams,
    params2: NodeParams,
    target: Envelope,
    delay: float = 0.0,
    grid: Optional[TimeGrid] = None,
    theta: float = math.pi / 4,
    phi: float = 0.0,
    strict: bool = True,
) -> ProtocolReport:
    """Partial emission at node 1 plus impedance-matched absorption at node 2.

    Starting from |up>_1 |down>_2 the ideal result is
    cos(theta)|up,down> + exp(-i phi) sin(theta)|down,up>; at theta = pi/4,
    phi = 0 this is the symmetric Bell state.
    """
    grid, target, send, recv, casc = _cascade(params1, params2, target, theta, delay, grid, phi, strict)
    a = complex(casc.node1.beta_q[-1])
    b = complex(casc.node2.beta_q[-1])
    ideal = np.array([math.cos(theta), np.exp(-1j * phi) * math.sin(theta)])
    return _cascade_report(
        "entangle", casc, send, recv, grid, {},
        {"bell": fidelity_state([a, b], ideal)},
    )


def transfer_qubit(
    qubit: QubitAmplitudes,
    params1: NodeParams,
    params2: NodeParams,
    target: Envelope,
    delay: float = 0.0,
    grid: Optional[TimeGrid] = None,
    strict: bool = True,
) -> ProtocolReport:
    """Move C0|down> + C1|up> from node 1 to node 2 through a full emission/absorption."""
    grid, target, send, recv, casc = _cascade(params1, params2, target, math.pi / 2, delay, grid, 0.0, strict)
    a = complex(casc.node1.beta_q[-1])
    b = complex(casc.node2.beta_q[-1])
    C0, C1 = qubit.C0, qubit.C1
    # basis {|down,down>, |down,up>, |up,down>}
    final = np.array([C0, C1 * b, C1 * a])
    ideal = np.array([C0, C1, 0.0])
    return _cascade_report(
        "transfer", casc, send, recv, grid, {"C0": C0, "C1": C1},
        {"state": fidelity_state(final, ideal)},
    )
