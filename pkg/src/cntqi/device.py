"""Node parameters from the physical nanotube device.

Energies are in micro-eV, lengths in nm (zero-point amplitude in pm) and
the returned couplings in rad/us.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import constants
from scipy.integrate import simpson

from .core import InterfaceError

# 1 micro-eV expressed as an angular frequency in rad/us
MICRO_EV_TO_RAD_PER_US = 1e-6 * constants.e / constants.hbar * 1e-6
PM_TO_NM = 1e-3


class QuadratureError(InterfaceError, ArithmeticError):
    pass


def _sine_mode(L):
    return (lambda z: np.sin(np.pi * np.asarray(z) / L),
            lambda z: (np.pi / L) * np.cos(np.pi * np.asarray(z) / L))


@dataclass(frozen=True)
class DeviceSpec:
    Delta_so: float  # micro-eV
    mu0: float  # pm
    A: float  # nm^-2
    z_c: float  # nm
    tube_length: float  # nm
    omega_p: float  # rad/us
    Q_m: float
    g_s: float = 2.0
    phonon_waveform: Optional[Callable] = field(default=None, compare=False, repr=False)
    phonon_waveform_derivative: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.A <= 0:
            raise ValueError("density-profile parameter A must be positive")
        if self.tube_length <= 0:
            raise ValueError("tube length must be positive")
        if not 0.0 <= self.z_c <= self.tube_length:
            raise ValueError(f"dot center {self.z_c} nm lies outside the tube [0, {self.tube_length}] nm")
        if self.Q_m <= 0:
            raise ValueError("quality factor must be positive")
        if self.phonon_waveform is None:
            f, fp = _sine_mode(self.tube_length)
            object.__setattr__(self, "phonon_waveform", f)
            object.__setattr__(self, "phonon_waveform_derivative", fp)
        elif self.phonon_waveform_derivative is None:
            raise ValueError("a custom waveform needs its derivative")
        peak = float(np.max(np.abs(self.phonon_waveform(np.linspace(0.0, self.tube_length, 2001)))))
        if abs(peak - 1.0) > 1e-3:
            raise ValueError(f"phonon waveform must satisfy max|f| = 1, found {peak:.6g}")

    def with_center(self, z_c: float) -> "DeviceSpec":
        return replace(self, z_c=z_c)


def density_profile(z, A: float, z_c: float):
    """Ground-state electron density exp(-A (z - z_c)^2) of the parabolic dot."""
    z = np.asarray(z, dtype=float)
    return np.exp(-A * (z - z_c) ** 2)


def averaged_waveform_derivative(spec: DeviceSpec, rtol: float = 1e-8, max_panels: int = 1 << 22,
                                 density: Optional[Callable] = None) -> float:
    """<f'> = int f'(z) n(z) dz / int n(z) dz over the tube, in nm^-1.

    Composite Simpson on a uniform mesh; the panel count doubles until two
    successive estimates agree to ``rtol``.
    """
    L = spec.tube_length
    n_of = density or (lambda z: density_profile(z, spec.A, spec.z_c))
    fp = spec.phonon_waveform_derivative
    # resolve the profile width from the start
    width = 1.0 / math.sqrt(spec.A)
    n = 64
    while n < max_panels and L / n > width / 4:
        n *= 2

    def estimate(n):
        z = np.linspace(0.0, L, n + 1)
        w = n_of(z)
        num = simpson(fp(z) * w, x=z)
        den = simpson(w, x=z)
        scale = simpson(np.abs(fp(z)) * w, x=z)
        return num / den, scale / den

    prev, _ = estimate(n)
    while n < max_panels:
        n *= 2
        cur, scale = estimate(n)
        if abs(cur - prev) <= rtol * abs(cur) or abs(cur - prev) <= 1e-14 * scale:
            return float(cur)
        prev = cur
    raise QuadratureError(f"<f'> did not converge to rtol={rtol} within {max_panels} panels")


def spin_phonon_coupling(spec: DeviceSpec, fprime_avg: Optional[float] = None) -> float:
    """lambda = Delta_so <f'> mu0 / (2 sqrt 2) in rad/us."""
    if fprime_avg is None:
        fprime_avg = averaged_waveform_derivative(spec)
    return spec.Delta_so * MICRO_EV_TO_RAD_PER_US * fprime_avg * spec.mu0 * PM_TO_NM / (2.0 * math.sqrt(2.0))


def tuned_center(z_c0: float, susceptibility: float, E_z: float, tube_length: Optional[float] = None) -> float:
    """Dot center shifted linearly by a longitudinal field (nm, nm per V/um, V/um)."""
    z = z_c0 + susceptibility * E_z
    if tube_length is not None and not 0.0 <= z <= tube_length:
        raise ValueError(f"field E_z = {E_z} V/um moves the dot center to {z} nm, outside [0, {tube_length}] nm")
    return z


def coupling_vs_field(spec: DeviceSpec, susceptibility: float, fields) -> np.ndarray:
    """lambda(E_z) for each field value, moving only the dot center."""
    out = []
    for E in np.atleast_1d(fields):
        zc = tuned_center(spec.z_c, susceptibility, float(E), spec.tube_length)
        out.append(spin_phonon_coupling(spec.with_center(zc)))
    return np.array(out)


def mechanical_damping(omega_p: float, Q_m: float) -> float:
    if Q_m <= 0:
        raise ValueError("quality factor must be positive")
    return omega_p / Q_m


def critical_field(Delta_so: float, g_s: float = 2.0) -> float:
    """B* = Delta_so / (g_s mu_B) in tesla for Delta_so in micro-eV."""
    return Delta_so * 1e-6 * constants.e / (g_s * constants.physical_constants["Bohr magneton"][0])
