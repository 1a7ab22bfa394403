"""Cavity parameters, mode geometry and the statistics of N_eff.

N_eff = sum_i |chi(r_i)|^2 over atom positions, with the standing-wave
Gaussian mode ``chi = sin(2 pi z / lambda) exp(-(x^2 + y^2) / w^2)``.
Frequencies are quoted as angular frequency / 2 pi in MHz, lengths in um.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import kernels

#: (g/kappa)^4 above this is flagged; the closed-form signals assume it is small.
STRONG_COUPLING_FLAG = 1e-3

#: Radial half-width of the default sampling box, in units of the waist.
BOX_WAISTS = 4.0

#: Configurations per RNG chunk. Fixed so results do not depend on worker count.
CHUNK_CONFIGS = 8192


class RegimeWarning(UserWarning):
    """An approximation behind a closed-form expression is not well satisfied."""


@dataclass(frozen=True)
class PhysicalParams:
    """Cavity and atom constants.

    Parameters
    ----------
    g, kappa, gamma : float
        Coupling, cavity field decay and atomic dipole decay rates, as
        angular frequency / 2 pi in MHz.
    wavelength, length, waist : float
        Optical wavelength, cavity length and mode waist in um.
    """

    g: float
    kappa: float
    gamma: float
    wavelength: float
    length: float
    waist: float

    def __post_init__(self):
        for name in ("g", "kappa", "gamma", "wavelength", "length", "waist"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def strong_coupling_ratio(self) -> float:
        """(g/kappa)^4, assumed negligible by the closed-form signals."""
        return (self.g / self.kappa) ** 4

    def check_regime(self) -> bool:
        """Warn (and return False) when (g/kappa)^4 is not small."""
        if self.strong_coupling_ratio > STRONG_COUPLING_FLAG:
            warnings.warn(
                f"(g/kappa)^4 = {self.strong_coupling_ratio:.3g} exceeds "
                f"{STRONG_COUPLING_FLAG:g}; closed-form cavity signals are approximate",
                RegimeWarning,
                stacklevel=2,
            )
            return False
        return True

    def replace(self, **changes) -> "PhysicalParams":
        data = {k: getattr(self, k) for k in
                ("g", "kappa", "gamma", "wavelength", "length", "waist")}
        data.update(changes)
        return PhysicalParams(**data)


#: The experiment's cavity: 87Rb D2 line, fibre microcavity.
PAPER_PARAMS = PhysicalParams(
    g=98.4, kappa=5200.0, gamma=3.0, wavelength=0.780, length=139.0, waist=4.46
)


class CooperativityLabel(str, Enum):
    REFLECTION = "reflection"
    FLUORESCENCE = "fluorescence"


@dataclass(frozen=True)
class Cooperativity:
    C1: float
    label: CooperativityLabel = CooperativityLabel.REFLECTION

    def __post_init__(self):
        if not self.C1 >= 0:
            raise ValueError("cooperativity must be non-negative")

    def scaled(self, neff):
        """C_N = C_1 * N_eff (works on arrays)."""
        return self.C1 * np.asarray(neff, dtype=float)

    def __float__(self):
        return float(self.C1)


def cooperativity_single(params: PhysicalParams,
                         label: CooperativityLabel = CooperativityLabel.REFLECTION
                         ) -> Cooperativity:
    """Single-atom cooperativity g^2 / (2 kappa gamma)."""
    return Cooperativity(params.g**2 / (2.0 * params.kappa * params.gamma), label)


def cooperativity_value(g: float, kappa: float, gamma: float) -> float:
    return g * g / (2.0 * kappa * gamma)


def mode_volume(params: PhysicalParams) -> float:
    """pi w^2 L / 4 in um^3."""
    return math.pi * params.waist**2 * params.length / 4.0


def mode_function(r, params: PhysicalParams):
    """Cavity field mode function at position(s) ``r`` (..., 3) in um."""
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    out = np.sin(params.wavenumber * z) * np.exp(-(x * x + y * y) / params.waist**2)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SamplingBox:
    """Axis-aligned box ``[-h, h] x [-h, h] x [0, length]`` around the mode."""

    half_width: float
    length: float

    @property
    def volume(self) -> float:
        return (2.0 * self.half_width) ** 2 * self.length

    @classmethod
    def default(cls, params: PhysicalParams) -> "SamplingBox":
        half_wave = params.wavelength / 2.0
        n_half = max(1, round(params.length / half_wave))
        return cls(BOX_WAISTS * params.waist, n_half * half_wave)

    def validate(self, params: PhysicalParams) -> None:
        if self.half_width < BOX_WAISTS * params.waist * (1.0 - 1e-12):
            raise ValueError(
                f"box half-width {self.half_width:g} um is below {BOX_WAISTS:g} waists "
                f"({BOX_WAISTS * params.waist:g} um); truncating the mode biases N_eff"
            )
        n_half = self.length / (params.wavelength / 2.0)
        if n_half < 0.5 or abs(n_half - round(n_half)) > 1e-9 * max(1.0, n_half):
            raise ValueError(
                f"box length {self.length:g} um is not an integer number of half "
                f"wavelengths ({params.wavelength / 2:g} um); the axial average is biased"
            )


def mode_overlap(params: PhysicalParams, box: SamplingBox) -> float:
    """Integral of |chi|^2 over the box, in um^3 (pi w^2 L/4 up to tail truncation)."""
    transverse = (params.waist * math.sqrt(math.pi / 2.0)
                  * special.erf(math.sqrt(2.0) * box.half_width / params.waist)) ** 2
    return transverse * box.length / 2.0


def expected_neff(density: float, params: PhysicalParams,
                  box: Optional[SamplingBox] = None) -> float:
    """Mean N_eff for a uniform density (um^-3)."""
    box = box or SamplingBox.default(params)
    return density * mode_overlap(params, box)


def density_for_mean(mean_neff: float, params: PhysicalParams,
                     box: Optional[SamplingBox] = None) -> float:
    box = box or SamplingBox.default(params)
    return mean_neff / mode_overlap(params, box)


@dataclass
class AtomConfiguration:
    positions: np.ndarray  # (n, 3) um
    neff: float
    collective_coupling: float

    @classmethod
    def from_positions(cls, positions, params: PhysicalParams) -> "AtomConfiguration":
        positions = np.asarray(positions, dtype=float).reshape(-1, 3)
        neff = float(np.sum(np.asarray(mode_function(positions, params)) ** 2))
        return cls(positions, neff, math.sqrt(neff))

    def recompute_neff(self, params: PhysicalParams) -> float:
        return float(np.sum(np.asarray(mode_function(self.positions, params)) ** 2))


def _uniform_positions(rng: np.random.Generator, n: int, box: SamplingBox):
    h = box.half_width
    x = rng.uniform(-h, h, n)
    y = rng.uniform(-h, h, n)
    z = rng.uniform(0.0, box.length, n)
    return x, y, z


def sample_configuration(density: float, params: PhysicalParams,
                         box: Optional[SamplingBox] = None,
                         rng_seed: int = 0) -> AtomConfiguration:
    """Draw one Poisson-distributed set of atoms uniformly in ``box``."""
    if density < 0:
        raise ValueError("density must be non-negative")
    box = box or SamplingBox.default(params)
    box.validate(params)
    rng = np.random.default_rng(rng_seed)
    n = int(rng.poisson(density * box.volume))
    x, y, z = _uniform_positions(rng, n, box)
    return AtomConfiguration.from_positions(np.column_stack([x, y, z]), params)


def _neff_chunk(seed_seq: np.random.SeedSequence, n: int, lam: float,
                params: PhysicalParams, box: SamplingBox) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    counts = rng.poisson(lam, size=n)
    x, y, z = _uniform_positions(rng, int(counts.sum()), box)
    return kernels.neff_configs(x, y, z, counts, params.waist, params.wavenumber)


def sample_neff(density: float, n_configs: int, params: PhysicalParams,
                box: Optional[SamplingBox] = None, seed: int = 0,
                n_workers: int = 1) -> np.ndarray:
    """N_eff for ``n_configs`` independent configurations.

    Work is split into fixed-size chunks, each with its own child seed, so the
    output is identical for any ``n_workers``.
    """
    if density < 0:
        raise ValueError("density must be non-negative")
    box = box or SamplingBox.default(params)
    box.validate(params)
    lam = density * box.volume
    sizes = [min(CHUNK_CONFIGS, n_configs - start)
             for start in range(0, n_configs, CHUNK_CONFIGS)]
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = list(zip(children, sizes))

    def run(job):
        return _neff_chunk(job[0], job[1], lam, params, box)

    if n_workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    return np.concatenate(parts) if parts else np.zeros(0)


# --------------------------------------------------------------------------
# Distributions of N_eff


class NeffKind(str, Enum):
    MONTE_CARLO = "monte_carlo_empirical"
    GAUSSIAN = "gaussian_approx"


def gaussian_normalization(mean_neff: float) -> float:
    """Normaliser of exp[-(4/3)(N - <N>)^2/<N>] on N >= 0."""
    a = 4.0 / (3.0 * mean_neff)
    return 1.0 / (0.5 * math.sqrt(math.pi / a) * (1.0 + special.erf(mean_neff * math.sqrt(a))))


@dataclass
class NeffDistribution:
    """Probability density of N_eff on a grid, optionally backed by raw samples."""

    mean_neff: float
    kind: NeffKind
    grid: np.ndarray
    density: np.ndarray
    normalization: float
    samples: Optional[np.ndarray] = field(default=None, repr=False)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))

    def expectation(self, func: Callable, method: str = "auto") -> float:
        """E[func(N_eff)] by trapezoidal quadrature or by sample mean."""
        if method == "auto":
            method = "samples" if self.samples is not None else "quadrature"
        if method == "samples":
            if self.samples is None:
                raise ValueError("distribution carries no raw samples")
            return float(np.mean(func(self.samples)))
        if method == "quadrature":
            return float(np.trapezoid(func(self.grid) * self.density, self.grid))
        raise ValueError(f"unknown expectation method {method!r}")

    def moments(self, method: str = "auto") -> dict:
        mean = self.expectation(lambda n: n, method)
        second = self.expectation(lambda n: n * n, method)
        var = second - mean * mean
        if method in ("auto", "samples") and self.samples is not None:
            var = float(np.var(self.samples, ddof=1))
        return {"mean": mean, "variance": var, "var_over_mean": var / mean}

    def cdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind is NeffKind.GAUSSIAN:
            return gaussian_cdf(x, self.mean_neff)
        if self.samples is not None:
            s = np.sort(self.samples)
            return np.searchsorted(s, x, side="right") / s.size
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (self.density[1:] + self.density[:-1])
                                               * np.diff(self.grid))])
        return np.interp(x, self.grid, cum)


def gaussian_cdf(x, mean_neff: float):
    """CDF of the truncated Gaussian approximation."""
    a = 4.0 / (3.0 * mean_neff)
    sa = math.sqrt(a)
    x = np.maximum(np.asarray(x, dtype=float), 0.0)
    return (gaussian_normalization(mean_neff) * 0.5 * math.sqrt(math.pi / a)
            * (special.erf(sa * (x - mean_neff)) + special.erf(sa * mean_neff)))


def histogram_upper(mean_neff: float) -> float:
    return mean_neff + 6.0 * math.sqrt(3.0 * mean_neff / 8.0)


def neff_distribution(mean_neff: float, kind="gaussian_approx", n_points: int = 512,
                      n_samples: int = 200_000, params: PhysicalParams = PAPER_PARAMS,
                      seed: int = 0, n_workers: int = 1) -> NeffDistribution:
    """Distribution of N_eff at a given mean.

    ``gaussian_approx`` uses exp[-(4/3)(N-<N>)^2/<N>] truncated to N >= 0.
    ``monte_carlo_empirical`` samples atom positions directly and keeps both
    the raw samples and a fixed-width histogram with ``n_points`` bins.
    """
    if not mean_neff > 0:
        raise ValueError(f"mean N_eff must be positive, got {mean_neff!r}")
    kind = NeffKind(kind)
    if kind is NeffKind.GAUSSIAN:
        upper = max(histogram_upper(mean_neff), mean_neff + 10.0 * math.sqrt(3 * mean_neff / 8))
        n_grid = max(n_points, 4097)
        grid = np.linspace(0.0, upper, n_grid)
        norm = gaussian_normalization(mean_neff)
        dens = norm * np.exp(-(4.0 / 3.0) * (grid - mean_neff) ** 2 / mean_neff)
        dens /= np.trapezoid(dens, grid)
        return NeffDistribution(mean_neff, kind, grid, dens, norm)
    density = density_for_mean(mean_neff, params)
    samples = sample_neff(density, n_samples, params, seed=seed, n_workers=n_workers)
    upper = histogram_upper(mean_neff)
    hist, edges = np.histogram(samples, bins=n_points, range=(0.0, upper))
    width = edges[1] - edges[0]
    pdf = hist / (hist.sum() * width)
    centres = 0.5 * (edges[1:] + edges[:-1])
    # grid padded with the two end points so trapezoid integration of the
    # piecewise-linear density through bin centres is exactly one
    grid = np.concatenate([[0.0], centres, [upper]])
    dens = np.concatenate([[pdf[0]], pdf, [pdf[-1]]])
    dens /= np.trapezoid(dens, grid)
    return NeffDistribution(mean_neff, kind, grid, dens, 1.0, samples)


def ks_distance(samples: np.ndarray, cdf: Callable) -> float:
    """Two-sided Kolmogorov-Smirnov statistic of ``samples`` against ``cdf``."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    f = cdf(s)
    upper = np.arange(1, n + 1) / n - f
    lower = f - np.arange(n) / n
    return float(max(upper.max(), lower.max()))


# --------------------------------------------------------------------------
# Exact Laplace transform of the N_eff distribution

_EULER = 0.5772156649015329
_THETA_NODES, _THETA_WEIGHTS = np.polynomial.legendre.leggauss(96)
# sin^2 over a half period; Gauss-Legendre on [0, pi/2] averages it exactly enough
_SIN2 = np.sin(0.25 * np.pi * (_THETA_NODES + 1.0)) ** 2
_SIN2_W = 0.5 * _THETA_WEIGHTS


def _ein(x):
    """Entire exponential integral Ein(x) = int_0^x (1 - e^-t)/t dt."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1e-2
    xs = x[small]
    out[small] = xs * (1 - xs / 4 * (1 - 2 * xs / 9 * (1 - 3 * xs / 16)))
    xl = x[~small]
    out[~small] = special.exp1(xl) + np.log(xl) + _EULER
    return out


def neff_laplace(u, mean_neff: float):
    """E[exp(-u N_eff)] for Poisson atoms with the given mean N_eff.

    Uses the Poisson functional exp(-rho int (1 - e^{-u|chi|^2}) d^3r) with the
    transverse integral done analytically (Ein) and the standing-wave average
    by Gauss-Legendre. Treats the transverse plane as infinite.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ein = _ein(np.outer(u, _SIN2)) @ _SIN2_W
    return np.exp(-2.0 * mean_neff * ein)


__all__ = [
    "PhysicalParams", "PAPER_PARAMS", "Cooperativity", "CooperativityLabel",
    "AtomConfiguration", "SamplingBox", "NeffDistribution", "NeffKind", "RegimeWarning",
    "cooperativity_single", "cooperativity_value", "mode_volume", "mode_function",
    "mode_overlap", "expected_neff", "density_for_mean", "sample_configuration",
    "sample_neff", "neff_distribution", "gaussian_normalization", "gaussian_cdf",
    "ks_distance", "neff_laplace",
]
