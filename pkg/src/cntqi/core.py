"""Domain types and the single-excitation amplitude equations of one interface node.

Time is measured in microseconds and every rate or coupling is an angular
frequency in rad/us.  The three tracked amplitudes are those of
``|up,0,0>`` (qubit), ``|down,1,0>`` (phonon) and ``|down,0,1>`` (cavity);
the fiber continuum enters only through the input/output fields.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.special import erf

TWO_PI = 2.0 * math.pi

ComplexFunc = Callable[[np.ndarray], np.ndarray]


class InterfaceError(Exception):
    """Base class for all errors raised by this package."""


class ResonanceError(InterfaceError, ValueError):
    pass


class NonFiniteError(InterfaceError, ValueError):
    pass


class GridMismatchError(InterfaceError, ValueError):
    pass


def angular(freq_mhz: float) -> float:
    """Convert a frequency/2pi in MHz to an angular rate in rad/us."""
    return TWO_PI * float(freq_mhz)


def _check_finite(name: str, *values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"{name}: non-finite value {v!r}")


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_start) and math.isfinite(self.t_end)):
            raise ValueError("grid bounds must be finite")
        if self.t_end <= self.t_start:
            raise ValueError(f"t_end ({self.t_end}) must exceed t_start ({self.t_start})")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise ValueError(f"n_steps must be an integer >= 2, got {self.n_steps}")

    @classmethod
    def from_step(cls, t_start: float, t_end: float, dt: float) -> "TimeGrid":
        """Grid with step exactly ``dt`` whose end is the first sample at or after ``t_end``."""
        n = max(2, int(math.ceil((t_end - t_start) / dt - 1e-9)))
        return cls(t_start, t_start + n * dt, n)

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.t_start + self.dt * (np.arange(self.n_steps) + 0.5)

    def __len__(self) -> int:
        return self.n_steps + 1

    def same_as(self, other: "TimeGrid") -> bool:
        return (
            self.n_steps == other.n_steps
            and math.isclose(self.t_start, other.t_start, rel_tol=0, abs_tol=1e-12)
            and math.isclose(self.t_end, other.t_end, rel_tol=1e-12, abs_tol=1e-12)
        )

    def require_same(self, other: "TimeGrid", what: str = "records") -> None:
        if not self.same_as(other):
            raise GridMismatchError(f"{what} are defined on different time grids: {self} vs {other}")


def midpoint_values(samples: np.ndarray) -> np.ndarray:
    """Values halfway between consecutive samples by 4-point cubic interpolation.

    Interior midpoints use the centred stencil (-1, 9, 9, -1)/16; the two end
    intervals use one-sided cubic stencils.  Error is O(dt^4) for smooth data.
    """
    x = np.asarray(samples, dtype=complex)
    n = len(x)
    if n < 4:
        return 0.5 * (x[1:] + x[:-1])
    h = np.empty(n - 1, dtype=complex)
    h[1:-1] = (-x[:-3] + 9.0 * x[1:-2] + 9.0 * x[2:-1] - x[3:]) / 16.0
    h[0] = (5.0 * x[0] + 15.0 * x[1] - 5.0 * x[2] + x[3]) / 16.0
    h[-1] = (5.0 * x[-1] + 15.0 * x[-2] - 5.0 * x[-3] + x[-4]) / 16.0
    return h


@dataclass(frozen=True, eq=False)
class Envelope:
    """Complex amplitude sampled on a uniform grid.

    ``func``/``deriv``/``deriv2``/``cumulative`` are optional analytic
    suppliers; when ``func`` is present it is used for off-grid evaluation
    (e.g. the half steps of the integrator).  ``cumulative(t)`` returns
    the integral of ``|value|^2`` from minus infinity to ``t``.
    """

    grid: TimeGrid
    samples: np.ndarray
    func: Optional[ComplexFunc] = None
    deriv: Optional[ComplexFunc] = None
    deriv2: Optional[ComplexFunc] = None
    cumulative: Optional[ComplexFunc] = None

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.shape != (self.grid.n_steps + 1,):
            raise ValueError(f"expected {self.grid.n_steps + 1} samples, got shape {s.shape}")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "Envelope":
        zero = lambda t: np.zeros_like(np.asarray(t, dtype=float), dtype=complex)  # noqa: E731
        return cls(grid, np.zeros(grid.n_steps + 1, dtype=complex), zero, zero, zero, lambda t: np.zeros_like(np.asarray(t, dtype=float)))

    @classmethod
    def from_function(cls, grid: TimeGrid, func: ComplexFunc, deriv=None, deriv2=None, cumulative=None) -> "Envelope":
        return cls(grid, np.asarray(func(grid.times), dtype=complex), func, deriv, deriv2, cumulative)

    @classmethod
    def constant(cls, grid: TimeGrid, value: complex) -> "Envelope":
        value = complex(value)
        f = lambda t: np.full(np.shape(t), value, dtype=complex)  # noqa: E731
        z = lambda t: np.zeros(np.shape(t), dtype=complex)  # noqa: E731
        return cls(grid, f(grid.times), f, z, z)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __call__(self, t) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(np.asarray(t, dtype=float)), dtype=complex)
        return np.interp(t, self.times, self.samples.real) + 1j * np.interp(t, self.times, self.samples.imag)

    def at_midpoints(self) -> np.ndarray:
        if self.func is not None:
            return np.asarray(self.func(self.grid.midpoints), dtype=complex)
        return midpoint_values(self.samples)

    def derivative(self) -> np.ndarray:
        if self.deriv is not None:
            return np.asarray(self.deriv(self.times), dtype=complex)
        return np.gradient(self.samples, self.grid.dt, edge_order=2)

    def second_derivative(self) -> np.ndarray:
        if self.deriv2 is not None:
            return np.asarray(self.deriv2(self.times), dtype=complex)
        if self.deriv is not None:
            return np.gradient(np.asarray(self.deriv(self.times), dtype=complex), self.grid.dt, edge_order=2)
        return np.gradient(np.gradient(self.samples, self.grid.dt, edge_order=2), self.grid.dt, edge_order=2)

    def cumulative_energy(self) -> np.ndarray:
        """Running integral of |value|^2 from the first grid sample."""
        if self.cumulative is not None:
            c = np.asarray(self.cumulative(self.times), dtype=float)
            return c - c[0]
        return cumulative_simpson(np.abs(self.samples) ** 2, dx=self.grid.dt, initial=0.0)

    def energy(self) -> float:
        """Trapezoid-rule integral of |value|^2 over the grid."""
        return float(np.trapezoid(np.abs(self.samples) ** 2, dx=self.grid.dt))

    def is_normalized(self, tol: float = 1e-6) -> bool:
        return abs(self.energy() - 1.0) <= tol

    def scaled(self, factor: complex) -> "Envelope":
        factor = complex(factor)
        wrap = lambda f: None if f is None else (lambda t: factor * f(t))  # noqa: E731
        cum = None
        if self.cumulative is not None:
            cum = lambda t: abs(factor) ** 2 * self.cumulative(t)  # noqa: E731
        return Envelope(self.grid, factor * self.samples, wrap(self.func), wrap(self.deriv), wrap(self.deriv2), cum)

    def shifted(self, delay: float) -> "Envelope":
        """The same waveform delayed by ``delay``; requires analytic suppliers."""
        if self.func is None:
            raise ValueError("shifting a sampled envelope needs an analytic supplier; use delayed_samples")
        sh = lambda f: None if f is None else (lambda t: f(np.asarray(t) - delay))  # noqa: E731
        return Envelope(self.grid, self.func(self.times - delay), sh(self.func), sh(self.deriv), sh(self.deriv2), sh(self.cumulative))

    def on_grid(self, grid: TimeGrid) -> "Envelope":
        if self.func is None:
            raise ValueError("resampling needs an analytic supplier")
        return Envelope(grid, self.func(grid.times), self.func, self.deriv, self.deriv2, self.cumulative)

    def conj_time_reversed(self) -> "Envelope":
        """t -> conj(value(t_start + t_end - t)) on the same grid."""
        a, b = self.grid.t_start, self.grid.t_end
        rev = lambda f, sign=1.0: None if f is None else (lambda t: sign * np.conj(f(a + b - np.asarray(t))))  # noqa: E731
        return Envelope(self.grid, np.conj(self.samples[::-1]), rev(self.func), rev(self.deriv, -1.0), rev(self.deriv2))


def gaussian_envelope(grid: TimeGrid, Gamma: float, t0: float = 0.0, normalized: bool = True) -> Envelope:
    """exp(-Gamma (t - t0)^2), optionally scaled to unit energy, with analytic derivatives."""
    if Gamma <= 0:
        raise ValueError("Gamma must be positive")
    amp = (2.0 * Gamma / math.pi) ** 0.25 if normalized else 1.0
    energy_scale = amp**2 * math.sqrt(math.pi / (2.0 * Gamma))

    def f(t):
        u = np.asarray(t, dtype=float) - t0
        return (amp * np.exp(-Gamma * u * u)).astype(complex)

    def d1(t):
        u = np.asarray(t, dtype=float) - t0
        return -2.0 * Gamma * u * f(t)

    def d2(t):
        u = np.asarray(t, dtype=float) - t0
        return (4.0 * Gamma**2 * u * u - 2.0 * Gamma) * f(t)

    def cum(t):
        u = np.asarray(t, dtype=float) - t0
        return 0.5 * energy_scale * (1.0 + erf(math.sqrt(2.0 * Gamma) * u))

    return Envelope.from_function(grid, f, d1, d2, cum)


def gaussian_window(Gamma: float, t0: float = 0.0, width: float = 5.0) -> tuple[float, float]:
    """Default integration window t0 -/+ width/sqrt(Gamma)."""
    half = width / math.sqrt(Gamma)
    return t0 - half, t0 + half


@dataclass(frozen=True)
class NodeParams:
    gamma: float
    G: complex
    lambda_max: float = math.inf
    Delta_c: float = TWO_PI * 360.0
    omega_p: float = TWO_PI * 360.0
    omega_q: float = TWO_PI * 360.0
    gamma_q: float = 0.0
    gamma_r: float = 0.0
    gamma_c: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "G", complex(self.G))
        for name in ("gamma", "gamma_q", "gamma_r", "gamma_c", "lambda_max", "Delta_c", "omega_p", "omega_q"):
            v = float(getattr(self, name))
            if math.isnan(v) or v < 0:
                raise ValueError(f"{name} must be a non-negative number, got {v}")
            if name != "lambda_max" and not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        _check_finite("G", self.G)

    @classmethod
    def from_mhz(cls, gamma, G, gamma_q=0.0, gamma_r=0.0, gamma_c=0.0, lambda_max=math.inf, omega_p=360.0, Delta_c=None, omega_q=None) -> "NodeParams":
        """Build from frequency/2pi values in MHz (the usual experimental convention)."""
        Delta_c = omega_p if Delta_c is None else Delta_c
        omega_q = omega_p if omega_q is None else omega_q
        return cls(
            gamma=angular(gamma),
            G=TWO_PI * complex(G),
            lambda_max=angular(lambda_max),
            Delta_c=angular(Delta_c),
            omega_p=angular(omega_p),
            omega_q=angular(omega_q),
            gamma_q=angular(gamma_q),
            gamma_r=angular(gamma_r),
            gamma_c=angular(gamma_c),
        )

    def check_resonance(self, rtol: float = 1e-9) -> None:
        ref = max(self.Delta_c, self.omega_p, self.omega_q, 1.0)
        if abs(self.Delta_c - self.omega_p) > rtol * ref or abs(self.omega_q - self.omega_p) > rtol * ref:
            raise ResonanceError(
                f"resonance condition Delta_c = omega_p = omega_q violated "
                f"({self.Delta_c}, {self.omega_p}, {self.omega_q} rad/us)"
            )

    def lossless(self) -> "NodeParams":
        return replace(self, gamma_q=0.0, gamma_r=0.0, gamma_c=0.0)

    @property
    def kappa(self) -> float:
        """Per-mode fiber coupling constant sqrt(gamma / 2pi)."""
        return math.sqrt(self.gamma / TWO_PI)

    def max_rate(self) -> float:
        return max(self.gamma + self.gamma_c, abs(self.G), self.gamma_q, self.gamma_r)

    def as_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "G_re": self.G.real,
            "G_im": self.G.imag,
            "lambda_max": self.lambda_max,
            "Delta_c": self.Delta_c,
            "omega_p": self.omega_p,
            "omega_q": self.omega_q,
            "gamma_q": self.gamma_q,
            "gamma_r": self.gamma_r,
            "gamma_c": self.gamma_c,
        }


@dataclass(frozen=True)
class NodeState:
    beta_q: complex = 0j
    beta_r: complex = 0j
    beta_c: complex = 0j

    @classmethod
    def excited(cls) -> "NodeState":
        return cls(1.0 + 0j, 0j, 0j)

    @classmethod
    def ground(cls) -> "NodeState":
        return cls()

    @classmethod
    def from_array(cls, a) -> "NodeState":
        return cls(complex(a[0]), complex(a[1]), complex(a[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.beta_q, self.beta_r, self.beta_c], dtype=complex)

    def population(self) -> float:
        return abs(self.beta_q) ** 2 + abs(self.beta_r) ** 2 + abs(self.beta_c) ** 2

    def __mul__(self, c: complex) -> "NodeState":
        return NodeState(c * self.beta_q, c * self.beta_r, c * self.beta_c)

    __rmul__ = __mul__


def rhs(state: NodeState, params: NodeParams, lambda_t: complex, alpha_in_t: complex = 0j) -> NodeState:
    """Time derivative of the node amplitudes under the non-Hermitian model."""
    params.check_resonance()
    _check_finite("rhs input", state.beta_q, state.beta_r, state.beta_c, lambda_t, alpha_in_t)
    bq, br, bc = state.beta_q, state.beta_r, state.beta_c
    G = params.G
    dq = -0.5j * lambda_t * br - 0.5 * params.gamma_q * bq
    dr = -1j * (0.5 * np.conj(lambda_t) * bq + np.conj(G) * bc) - 0.5 * params.gamma_r * br
    dc = -1j * G * br - math.sqrt(params.gamma) * alpha_in_t - 0.5 * (params.gamma + params.gamma_c) * bc
    return NodeState(complex(dq), complex(dr), complex(dc))


def output_field(state, params: NodeParams, alpha_in_t=0j):
    """Input-output relation alpha_out = alpha_in + sqrt(gamma) beta_c.

    ``state`` may be a NodeState or an array whose last axis holds
    (beta_q, beta_r, beta_c); ``alpha_in_t`` broadcasts accordingly.
    """
    if isinstance(state, NodeState):
        return complex(alpha_in_t + math.sqrt(params.gamma) * state.beta_c)
    amps = np.asarray(state, dtype=complex)
    return np.asarray(alpha_in_t, dtype=complex) + math.sqrt(params.gamma) * amps[..., 2]


@dataclass(frozen=True, eq=False)
class NormLedger:
    """Excitation budget of one node along a trajectory.

    All arrays share the trajectory grid.  ``residual`` is the deviation of
    ``qubit + phonon + cavity + emitted - injected + losses`` from its
    initial value.
    """

    times: np.ndarray
    qubit: np.ndarray
    phonon: np.ndarray
    cavity: np.ndarray
    emitted: np.ndarray
    injected: np.ndarray
    loss_q: np.ndarray
    loss_r: np.ndarray
    loss_c: np.ndarray
    initial_total: float
    residual: np.ndarray = field(repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def total_loss(self) -> np.ndarray:
        return self.loss_q + self.loss_r + self.loss_c

    def final(self) -> dict:
        return {
            "qubit": float(self.qubit[-1]),
            "phonon": float(self.phonon[-1]),
            "cavity": float(self.cavity[-1]),
            "emitted": float(self.emitted[-1]),
            "injected": float(self.injected[-1]),
            "loss_q": float(self.loss_q[-1]),
            "loss_r": float(self.loss_r[-1]),
            "loss_c": float(self.loss_c[-1]),
            "max_residual": self.max_residual,
        }


def _running_integral(values: np.ndarray, dt: float) -> np.ndarray:
    if len(values) < 3:
        return np.concatenate([[0.0], np.cumsum(0.5 * (values[1:] + values[:-1]) * dt)])
    return cumulative_simpson(values, dx=dt, initial=0.0)


def norm_ledger(trajectory, params: NodeParams, alpha_in: Optional[Envelope] = None, alpha_out: Optional[Envelope] = None) -> NormLedger:
    """Decompose the excitation of a trajectory into its budget channels.

    ``trajectory`` needs ``grid`` and ``amplitudes`` (shape (n+1, 3)).  The
    field records default to the ones carried by the trajectory.
    """
    grid = trajectory.grid
    alpha_in = alpha_in if alpha_in is not None else getattr(trajectory, "alpha_in", None)
    alpha_out = alpha_out if alpha_out is not None else getattr(trajectory, "alpha_out", None)
    a_in = np.zeros(len(grid), dtype=complex) if alpha_in is None else _on(alpha_in, grid, "alpha_in")
    if alpha_out is None:
        a_out = output_field(trajectory.amplitudes, params, a_in)
    else:
        a_out = _on(alpha_out, grid, "alpha_out")
    amps = np.asarray(trajectory.amplitudes, dtype=complex)
    if amps.shape != (len(grid), 3):
        raise GridMismatchError(f"trajectory has {amps.shape[0]} samples, grid has {len(grid)}")
    pq, pr, pc = (np.abs(amps[:, k]) ** 2 for k in range(3))
    dt = grid.dt
    emitted = _running_integral(np.abs(a_out) ** 2, dt)
    injected = _running_integral(np.abs(a_in) ** 2, dt)
    lq = _running_integral(params.gamma_q * pq, dt)
    lr = _running_integral(params.gamma_r * pr, dt)
    lc = _running_integral(params.gamma_c * pc, dt)
    initial = float(pq[0] + pr[0] + pc[0])
    residual = pq + pr + pc + emitted - injected + lq + lr + lc - initial
    return NormLedger(grid.times, pq, pr, pc, emitted, injected, lq, lr, lc, initial, residual)


def _on(env, grid: TimeGrid, name: str) -> np.ndarray:
    if isinstance(env, Envelope):
        grid.require_same(env.grid, name)
        return env.samples
    arr = np.asarray(env, dtype=complex)
    if arr.shape != (len(grid),):
        raise GridMismatchError(f"{name} has {arr.shape} samples, grid has {len(grid)}")
    return arr
