"""Closed-form steady-state cavity signals.

Reflection and fluorescence output rates on resonance, the weak-drive
intracavity amplitude and Purcell-modified emission. Rates in photons/s
unless a name says otherwise; ``gamma`` and ``kappa`` are angular
frequency / 2 pi in MHz.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .core import PhysicalParams, RegimeWarning, neff_laplace

#: Mean intracavity photon number above which the weak-drive amplitude is flagged.
WEAK_DRIVE_FLAG = 0.1


def angular_rate(freq_mhz: float) -> float:
    """Convert a frequency / 2 pi in MHz to an angular rate in 1/s."""
    return 2.0 * math.pi * freq_mhz * 1e6


class Branch(str, Enum):
    REFLECTION = "reflection"
    FLUORESCENCE = "fluorescence"


@dataclass(frozen=True)
class DriveConfig:
    """Probe and excitation settings.

    ``saturation`` and ``rabi`` (MHz, same units as gamma) are two views of
    the same drive; give one, or both if consistent with s = (Omega/gamma)^2 / 2.
    ``fringe_amplitude`` has no default because it is an apparatus property.
    """

    j_in: float = 0.0
    fringe_amplitude: Optional[float] = None
    saturation: Optional[float] = None
    rabi: Optional[float] = None
    fibre_coupling: float = 1.0
    pump_strength: float = 0.0

    def __post_init__(self):
        if self.j_in < 0:
            raise ValueError("j_in must be non-negative")
        if self.fringe_amplitude is not None and not 0.0 <= self.fringe_amplitude <= 1.0:
            raise ValueError("fringe amplitude b must lie in [0, 1]")
        if not 0.0 <= self.fibre_coupling <= 1.0:
            raise ValueError("fibre coupling xi must lie in [0, 1]")
        if self.saturation is not None and self.saturation < 0:
            raise ValueError("saturation s must be non-negative")
        if self.pump_strength < 0:
            raise ValueError("pump strength must be non-negative")

    def saturation_for(self, gamma: float) -> float:
        if self.saturation is not None:
            if self.rabi is not None:
                implied = 0.5 * (self.rabi / gamma) ** 2
                if not math.isclose(implied, self.saturation, rel_tol=1e-9, abs_tol=1e-12):
                    raise ValueError(
                        f"saturation {self.saturation} inconsistent with rabi {self.rabi} "
                        f"(implies s = {implied})"
                    )
            return self.saturation
        if self.rabi is not None:
            return 0.5 * (self.rabi / gamma) ** 2
        raise ValueError("drive needs a saturation parameter or a Rabi frequency")

    def rabi_for(self, gamma: float) -> float:
        if self.rabi is not None:
            return self.rabi
        return gamma * math.sqrt(2.0 * self.saturation_for(gamma))

    @property
    def b(self) -> float:
        if self.fringe_amplitude is None:
            raise ValueError("reflection needs the empty-cavity fringe amplitude b")
        return self.fringe_amplitude


@dataclass(frozen=True)
class SignalPoint:
    c_n: float
    j_out: float
    branch: Branch


def _check_params(params: Optional[PhysicalParams]):
    if params is not None:
        params.check_regime()


def reflection_factor(c_n, b: float):
    """[(b + 2C)/(1 + 2C)]^2, vectorised."""
    c_n = np.asarray(c_n, dtype=float)
    return ((b + 2.0 * c_n) / (1.0 + 2.0 * c_n)) ** 2


def fluorescence_factor(c_n_prime, s: float):
    """2C' s / [(1 + 2C')^2 + s], i.e. the fluorescence rate divided by gamma xi."""
    c = np.asarray(c_n_prime, dtype=float)
    return 2.0 * c * s / ((1.0 + 2.0 * c) ** 2 + s)


def reflection_rate(c_n: float, drive: DriveConfig,
                    params: Optional[PhysicalParams] = None) -> SignalPoint:
    """Reflected photon rate J_in [(b + 2C_N)/(1 + 2C_N)]^2."""
    if c_n < 0:
        raise ValueError("c_n must be non-negative")
    _check_params(params)
    j_out = drive.j_in * float(reflection_factor(c_n, drive.b))
    return SignalPoint(float(c_n), j_out, Branch.REFLECTION)


def fluorescence_rate(c_n_prime: float, drive: DriveConfig, gamma: float) -> SignalPoint:
    """Fluorescence photon rate into the fibre, 2C' gamma xi s / [(1 + 2C')^2 + s].

    ``gamma`` is in MHz (angular / 2 pi); the result is photons/s.
    """
    if c_n_prime < 0:
        raise ValueError("c_n_prime must be non-negative")
    s = drive.saturation_for(gamma)
    j_out = angular_rate(gamma) * drive.fibre_coupling * float(fluorescence_factor(c_n_prime, s))
    return SignalPoint(float(c_n_prime), j_out, Branch.FLUORESCENCE)


def fluorescence_optimum(s: float) -> float:
    """C' maximising the fluorescence rate: sqrt(1 + s) / 2."""
    return 0.5 * math.sqrt(1.0 + s)


def intracavity_amplitude(c_n: float, drive: DriveConfig, kappa: float) -> float:
    """Weak-drive coherent amplitude (eta/kappa) / (1 + 2C_N).

    ``pump_strength`` and ``kappa`` share units. Warns when <n> = alpha^2
    reaches ``WEAK_DRIVE_FLAG``.
    """
    alpha = (drive.pump_strength / kappa) / (1.0 + 2.0 * c_n)
    if alpha * alpha >= WEAK_DRIVE_FLAG:
        warnings.warn(
            f"<n> = {alpha * alpha:.3g} is not small; weak-drive amplitude is approximate",
            RegimeWarning,
            stacklevel=2,
        )
    return alpha


def purcell_rates(c_n_prime: float, gamma: float) -> tuple[float, float]:
    """(gamma_tot, cavity fraction) = ((1 + 2C')gamma, 2C'/(1 + 2C'))."""
    if c_n_prime < 0:
        raise ValueError("c_n_prime must be non-negative")
    return (1.0 + 2.0 * c_n_prime) * gamma, 2.0 * c_n_prime / (1.0 + 2.0 * c_n_prime)


def excited_population(c_n_prime: float, drive: DriveConfig, gamma: float) -> float:
    """Excited-state population of a Purcell-broadened atom.

    Assumes the external drive dominates the cavity field,
    |Omega| >> 2|g| sqrt(n); this is not checked.
    """
    gamma_tot, _ = purcell_rates(c_n_prime, gamma)
    half_rabi2 = 0.5 * abs(drive.rabi_for(gamma)) ** 2
    if math.isinf(half_rabi2):
        return 0.5
    return 0.5 * half_rabi2 / (gamma_tot**2 + half_rabi2)


def fluorescence_from_population(c_n_prime: float, drive: DriveConfig, gamma: float) -> float:
    """Cavity emission rate rebuilt from the excited population and Purcell split.

    2 gamma_tot <sigma^dag sigma> x cavity fraction x xi, in photons/s.
    """
    gamma_tot, frac = purcell_rates(c_n_prime, gamma)
    pop = excited_population(c_n_prime, drive, gamma)
    return 2.0 * angular_rate(gamma_tot) * pop * frac * drive.fibre_coupling


def single_atom_reflection_level(params: PhysicalParams, drive: DriveConfig) -> float:
    """Reflected rate for one maximally coupled atom, J_in [(b + 2C_1)/(1 + 2C_1)]^2."""
    c1 = params.g**2 / (2.0 * params.kappa * params.gamma)
    return reflection_rate(c1, drive).j_out


# --------------------------------------------------------------------------
# Rate maps N_eff -> detected rate, used by the noise and transit models


def reflection_map(c1: float, drive: DriveConfig) -> Callable:
    """N_eff -> detected reflection rate in photons/us."""
    b = drive.b
    j_us = drive.j_in * 1e-6

    def rate(neff):
        return j_us * reflection_factor(c1 * np.asarray(neff, dtype=float), b)

    return rate


def fluorescence_map(c1_prime: float, saturation: float, yield_per_us: float) -> Callable:
    """N_eff -> detected fluorescence rate in photons/us.

    Scaled so that one maximally coupled atom (N_eff = 1) gives
    ``yield_per_us``; the fibre, collection and saturation prefactors are
    absorbed into that calibration.
    """
    norm = float(fluorescence_factor(c1_prime, saturation))
    if norm <= 0:
        raise ValueError("fluorescence calibration needs c1_prime > 0 and s > 0")
    scale = yield_per_us / norm

    def rate(neff):
        return scale * fluorescence_factor(c1_prime * np.asarray(neff, dtype=float), saturation)

    return rate


# --------------------------------------------------------------------------
# Expectations over the exact N_eff distribution (Laplace route)


def _laplace_integral(kernel: Callable, c: float, mean_neff: float) -> float:
    """int_0^inf kernel(t) e^{-t} E[exp(-2 c t N_eff)] dt, i.e. E[f(1 + 2 c N_eff)]."""

    def integrand(t):
        return kernel(t) * math.exp(-t) * float(neff_laplace(2.0 * c * t, mean_neff)[0])

    value, _ = integrate.quad(integrand, 0.0, np.inf, limit=400, epsabs=1e-13, epsrel=1e-11)
    return value


def reflection_moments_exact(c1: float, b: float, mean_neff: float) -> tuple[float, float]:
    """E[h] and E[h^2] for h = [(b + 2C)/(1 + 2C)]^2 with C = c1 N_eff, N_eff exact.

    Writes h = (1 - beta/x)^2 with x = 1 + 2C, beta = 1 - b, and uses
    1/x^k = int t^(k-1) e^(-xt) dt / (k-1)!.
    """
    if mean_neff == 0:
        h0 = b * b
        return h0, h0 * h0
    beta = 1.0 - b
    inv = [1.0]
    for k in range(1, 5):
        fact = math.factorial(k - 1)
        inv.append(_laplace_integral(lambda t, k=k, fact=fact: t ** (k - 1) / fact, c1, mean_neff))
    first = 1.0 - 2.0 * beta * inv[1] + beta**2 * inv[2]
    coeffs = [1.0, -4.0 * beta, 6.0 * beta**2, -4.0 * beta**3, beta**4]
    second = sum(cf * inv[k] for k, cf in enumerate(coeffs))
    return first, second


def fluorescence_moments_exact(c1_prime: float, s: float, mean_neff: float) -> tuple[float, float]:
    """E[f] and E[f^2] for f = 2C' s / ((1 + 2C')^2 + s), C' = c1_prime N_eff, N_eff exact.

    With x = 1 + 2C', f = s (x - 1)/(x^2 + s); each rational piece has a
    closed-form inverse Laplace transform in t.
    """
    if mean_neff == 0:
        return 0.0, 0.0
    a = math.sqrt(s)

    def k_inv(t):  # 1/(x^2+s)
        return math.sin(a * t) / a

    def k_x(t):  # x/(x^2+s)
        return math.cos(a * t)

    def k_inv2(t):  # 1/(x^2+s)^2
        return (math.sin(a * t) - a * t * math.cos(a * t)) / (2.0 * a**3)

    def k_x2(t):  # x/(x^2+s)^2
        return t * math.sin(a * t) / (2.0 * a)

    lap = {name: _laplace_integral(kern, c1_prime, mean_neff)
           for name, kern in (("inv", k_inv), ("x", k_x), ("inv2", k_inv2), ("x2", k_x2))}
    first = s * (lap["x"] - lap["inv"])
    # (x-1)^2/(x^2+s)^2 = 1/(x^2+s) + (1 - s)/(x^2+s)^2 - 2x/(x^2+s)^2
    second = s * s * (lap["inv"] + (1.0 - s) * lap["inv2"] - 2.0 * lap["x2"])
    return first, second


def expected_reflection_factor(c1: float, b: float, mean_neff) -> np.ndarray:
    """E[h(c1 N_eff)] for an array of mean N_eff values."""
    means = np.atleast_1d(np.asarray(mean_neff, dtype=float))
    return np.array([reflection_moments_exact(c1, b, m)[0] for m in means])
