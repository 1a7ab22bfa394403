"""Synthetic photon-count streams from a cloud of atoms falling through the mode.

Times inside the simulator are µs, cloud envelope parameters are ms, speeds
are m/s (identical to µm/µs) and lengths are µm.

Two motion models are offered:

``ballistic``
    Atoms cross the mode at constant speed. Each one keeps its transverse
    offset and standing-wave phase, so per-bin N_eff has the exact
    point-process statistics and is correlated over the transit time.
``refresh``
    Fresh random configurations are drawn every ``refresh_bins`` bins.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import curve_fit

from . import kernels
from .core import BOX_WAISTS, PhysicalParams, SamplingBox, density_for_mean
from .counting import CountStream
from .fidelity import DetectorRates
from .signal import (DriveConfig, expected_reflection_factor, fluorescence_map,
                     fluorescence_moments_exact, fluorescence_factor, reflection_map,
                     reflection_moments_exact)

ERROR_SMOOTH_BINS = 51
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


class Mode(str, Enum):
    REFLECTION = "reflection"
    FLUORESCENCE = "fluorescence"


class FitError(RuntimeError):
    """Least-squares fit of the cloud envelope failed."""


@dataclass(frozen=True)
class CloudProfile:
    """Gaussian envelope of <N_eff>(t), optionally switched to exponential decay."""

    peak_mean_neff: float
    fwhm_ms: float
    centre_ms: float = 0.0
    drive_on_ms: Optional[float] = None
    decay_us: Optional[float] = None

    def __post_init__(self):
        if self.peak_mean_neff < 0:
            raise ValueError("peak <N_eff> must be non-negative")
        if self.fwhm_ms <= 0:
            raise ValueError("cloud width must be positive")
        if self.decay_us is not None and self.decay_us <= 0:
            raise ValueError("decay constant must be positive")


def mean_neff_timeline(profile: CloudProfile, times_us, mode: Mode = Mode.REFLECTION) -> np.ndarray:
    """<N_eff> at each time (µs).

    In fluorescence mode the envelope is multiplied by exp(-(t - t_on)/tau)
    after the drive switches on at t_on.
    """
    t = np.asarray(times_us, dtype=float)
    sigma = profile.fwhm_ms * 1e3 * FWHM_TO_SIGMA
    out = profile.peak_mean_neff * np.exp(-0.5 * ((t - profile.centre_ms * 1e3) / sigma) ** 2)
    if Mode(mode) is Mode.FLUORESCENCE and profile.drive_on_ms is not None and profile.decay_us:
        t_on = profile.drive_on_ms * 1e3
        out = out * np.where(t >= t_on, np.exp(-np.maximum(t - t_on, 0.0) / profile.decay_us), 1.0)
    return out


def transit_time(params: PhysicalParams, speed: float) -> float:
    """Time (µs) to cross the mode width, taken as 2w, at ``speed`` m/s."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    return 2.0 * params.waist / speed


@dataclass(frozen=True)
class ExperimentPlan:
    """What to simulate and how.

    ``background`` is the dark/background rate in counts/µs. Fluorescence
    rates are calibrated so a maximally coupled atom yields ``yield_per_us``.
    """

    mode: Mode
    params: PhysicalParams
    drive: DriveConfig
    bin_width: float = 1.0  # µs
    n_trials: int = 1
    start_us: float = 0.0
    stop_us: float = 100.0
    seed: int = 0
    background: float = 0.0
    motion: str = "ballistic"
    speed: float = 0.64  # m/s
    refresh_bins: Optional[int] = None
    cooperativity_ratio: float = 1.0  # C'_N / C_N
    yield_per_us: Optional[float] = None
    n_workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.bin_width <= 0 or self.n_trials < 1:
            raise ValueError("need positive bin width and at least one trial")
        if self.stop_us <= self.start_us:
            raise ValueError("stop_us must exceed start_us")
        if self.motion not in ("ballistic", "refresh"):
            raise ValueError(f"unknown motion model {self.motion!r}")
        if self.background < 0 or self.speed <= 0:
            raise ValueError("background must be >= 0 and speed > 0")
        if self.mode is Mode.FLUORESCENCE and self.yield_per_us is None:
            raise ValueError("fluorescence needs the per-atom yield calibration")

    @property
    def n_bins(self) -> int:
        return int(round((self.stop_us - self.start_us) / self.bin_width))

    @property
    def bin_centres(self) -> np.ndarray:
        return self.start_us + self.bin_width * (np.arange(self.n_bins) + 0.5)

    @property
    def c1(self) -> float:
        p = self.params
        return p.g**2 / (2.0 * p.kappa * p.gamma)

    def rate_map(self) -> Callable:
        """N_eff -> detected signal rate in photons/µs."""
        if self.mode is Mode.REFLECTION:
            return reflection_map(self.c1, self.drive)
        s = self.drive.saturation_for(self.params.gamma)
        return fluorescence_map(self.c1 * self.cooperativity_ratio, s, self.yield_per_us)

    def effective_refresh(self) -> int:
        if self.refresh_bins is not None:
            return max(int(self.refresh_bins), 1)
        return max(int(round(transit_time(self.params, self.speed) / self.bin_width)), 1)


def _box(params: PhysicalParams) -> SamplingBox:
    return SamplingBox.default(params)


def _ballistic_neff(plan: ExperimentPlan, profile: CloudProfile, rng: np.random.Generator) -> np.ndarray:
    p = plan.params
    box = _box(p)
    reach = BOX_WAISTS * p.waist
    v = plan.speed
    lead = reach / v
    dt = plan.bin_width
    # arrival grid covering every crossing that can reach the window
    t_grid = np.arange(plan.start_us - lead, plan.stop_us + lead + dt, dt)
    density = density_for_mean(1.0, p, box) * mean_neff_timeline(profile, t_grid + 0.5 * dt)
    flux = density * v * (2.0 * box.half_width) * box.length * dt
    n_arr = rng.poisson(flux)
    total = int(n_arr.sum())
    t_cross = np.repeat(t_grid, n_arr) + dt * rng.random(total)
    x = rng.uniform(-box.half_width, box.half_width, total)
    z = rng.uniform(0.0, box.length, total)
    t_kill = np.full(total, np.inf)
    if plan.mode is Mode.FLUORESCENCE and profile.drive_on_ms is not None and profile.decay_us:
        t_kill = profile.drive_on_ms * 1e3 + rng.exponential(profile.decay_us, total)
    return kernels.neff_transits(t_cross, x, z, t_kill, plan.start_us + 0.5 * dt, dt,
                                 plan.n_bins, v, p.waist, p.wavenumber, reach)


def _refresh_neff(plan: ExperimentPlan, profile: CloudProfile, rng: np.random.Generator) -> np.ndarray:
    p = plan.params
    box = _box(p)
    every = plan.effective_refresh()
    n_blocks = -(-plan.n_bins // every)
    t_block = plan.start_us + plan.bin_width * (np.arange(n_blocks) * every + 0.5)
    lam = density_for_mean(1.0, p, box) * box.volume * mean_neff_timeline(profile, t_block, plan.mode)
    counts = rng.poisson(lam)
    total = int(counts.sum())
    hw = box.half_width
    x = rng.uniform(-hw, hw, total)
    y = rng.uniform(-hw, hw, total)
    z = rng.uniform(0.0, box.length, total)
    neff = kernels.neff_configs(x, y, z, counts, p.waist, p.wavenumber)
    return np.repeat(neff, every)[: plan.n_bins]


def _trial(plan: ExperimentPlan, profile: CloudProfile, seq: np.random.SeedSequence,
           rate: Callable) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seq)
    if plan.motion == "ballistic":
        neff = _ballistic_neff(plan, profile, rng)
    else:
        neff = _refresh_neff(plan, profile, rng)
    signal = np.asarray(rate(neff), dtype=float)
    if plan.mode is Mode.FLUORESCENCE and profile.drive_on_ms is not None:
        signal = np.where(plan.bin_centres >= profile.drive_on_ms * 1e3, signal, 0.0)
    counts = rng.poisson((signal + plan.background) * plan.bin_width)
    return counts, neff


def simulate_counts(plan: ExperimentPlan, profile: CloudProfile, return_neff: bool = False):
    """Simulate ``plan.n_trials`` independent runs.

    Each trial owns an RNG stream spawned from ``plan.seed``, so the output
    does not depend on ``n_workers``. Returns a CountStream, plus the per-bin
    N_eff array when ``return_neff`` is set.
    """
    seqs = np.random.SeedSequence(plan.seed).spawn(plan.n_trials)
    rate = plan.rate_map()
    if plan.n_workers > 1:
        with ThreadPoolExecutor(max_workers=plan.n_workers) as pool:
            results = list(pool.map(lambda s: _trial(plan, profile, s, rate), seqs))
    else:
        results = [_trial(plan, profile, s, rate) for s in seqs]
    counts = np.array([r[0] for r in results], dtype=np.int64)
    stream = CountStream(plan.bin_width, counts, plan.start_us)
    if return_neff:
        return stream, np.array([r[1] for r in results])
    return stream


# --------------------------------------------------------------------------
# Envelope fitting


@dataclass
class CloudFit:
    profile: CloudProfile
    peak_stderr: float
    fwhm_stderr: float
    centre_stderr: float
    chi2_per_dof: float
    model: np.ndarray = field(repr=False)


def expected_signal_curve(plan: ExperimentPlan, max_mean: float, exact: bool = True,
                          n_grid: int = 64) -> Callable:
    """<N_eff> -> expected signal rate (photons/µs) averaged over N_eff fluctuations.

    ``exact=False`` instead evaluates the rate at C_N = C_1 <N_eff>.
    """
    rate = plan.rate_map()
    if not exact:
        return lambda m: rate(np.asarray(m, dtype=float))
    grid = np.linspace(0.0, max(max_mean, 1e-6), n_grid)
    if plan.mode is Mode.REFLECTION:
        vals = plan.drive.j_in * 1e-6 * expected_reflection_factor(plan.c1, plan.drive.b, grid)
    else:
        s = plan.drive.saturation_for(plan.params.gamma)
        c1p = plan.c1 * plan.cooperativity_ratio
        scale = plan.yield_per_us / float(fluorescence_factor(c1p, s))
        vals = scale * np.array([fluorescence_moments_exact(c1p, s, m)[0] for m in grid])
    spline = CubicSpline(grid, vals)
    top = grid[-1]

    def curve(m):
        m = np.asarray(m, dtype=float)
        if np.any(m > top * (1 + 1e-9)):
            raise ValueError("mean N_eff outside the tabulated range")
        return spline(np.clip(m, 0.0, top))

    return curve


def fit_cloud_profile(stream: CountStream, plan: ExperimentPlan, guess: CloudProfile,
                      fit_shape: bool = True, exact: bool = True) -> CloudFit:
    """Fit the trial-averaged counts with a Gaussian <N_eff>(t) envelope.

    With ``fit_shape`` the peak, centre and FWHM are free; otherwise only
    the peak is fitted and the shape is taken from ``guess``. Background
    counts (``plan.background``) are held fixed.
    """
    if plan.mode is not Mode.REFLECTION:
        raise ValueError("envelope fits are implemented for the reflection signal")
    counts = stream.counts.astype(float)
    n = counts.shape[0]
    y = counts.mean(axis=0)
    # Per-bin sample variances correlate with the bin means at low counts and
    # bias a weighted fit downwards; smooth them over neighbouring bins first.
    var = counts.var(axis=0, ddof=1) if n > 1 else np.maximum(y, 1.0)
    width = min(ERROR_SMOOTH_BINS, var.size)
    kernel = np.ones(width)
    var = np.convolve(var, kernel, "same") / np.convolve(np.ones(var.size), kernel, "same")
    err = np.sqrt(np.maximum(var, 1e-12) / n)
    t = stream.times + 0.5 * stream.bin_width
    curve = expected_signal_curve(plan, 4.0 * max(guess.peak_mean_neff, 0.05) + 1.0, exact)
    T, bg = stream.bin_width, plan.background

    def model(tt, peak, centre_ms, fwhm_ms):
        prof = CloudProfile(max(peak, 0.0), abs(fwhm_ms) + 1e-12, centre_ms)
        return T * (curve(mean_neff_timeline(prof, tt)) + bg)

    try:
        if fit_shape:
            p0 = [guess.peak_mean_neff, guess.centre_ms, guess.fwhm_ms]
            popt, pcov = curve_fit(model, t, y, p0=p0, sigma=err, absolute_sigma=True,
                                   bounds=([0.0, -np.inf, 1e-6], [np.inf, np.inf, np.inf]))
        else:
            f1 = lambda tt, peak: model(tt, peak, guess.centre_ms, guess.fwhm_ms)
            popt, pcov = curve_fit(f1, t, y, p0=[max(guess.peak_mean_neff, 1e-3)], sigma=err,
                                   absolute_sigma=True, bounds=([0.0], [np.inf]))
            popt = np.array([popt[0], guess.centre_ms, guess.fwhm_ms])
            pcov = np.diag([pcov[0, 0], 0.0, 0.0])
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"envelope fit failed from guess {guess}: {exc}") from exc
    perr = np.sqrt(np.diag(pcov))
    if not np.all(np.isfinite(perr)):
        raise FitError(f"fit covariance is singular (parameters {popt}, errors {perr})")
    fitted = model(t, *popt)
    dof = max(t.size - (3 if fit_shape else 1), 1)
    chi2 = float((((y - fitted) / err) ** 2).sum() / dof)
    profile = CloudProfile(float(popt[0]), float(popt[2]), float(popt[1]))
    return CloudFit(profile, float(perr[0]), float(perr[2]), float(perr[1]), chi2, fitted)


def simulate_detection_trials(rates: DetectorRates, n_trials: int, t_us: float,
                              seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Photon counts in a window of ``t_us`` for bright and dark atoms.

    Each trial is bright with probability ``rates.prior``. Returns
    (bright_counts, dark_counts).
    """
    rng = np.random.default_rng(seed)
    bright = rng.random(n_trials) < rates.prior
    mean = np.where(bright, rates.signal + rates.background, rates.background) * t_us * 1e-3
    counts = rng.poisson(mean)
    return counts[bright], counts[~bright]


def with_stationary_cloud(profile_mean: float) -> CloudProfile:
    """A cloud whose envelope is flat over any practical window."""
    return CloudProfile(profile_mean, 1e9, 0.0)


def predicted_variance_to_mean(plan: ExperimentPlan, mean_neff: float) -> float:
    """1 + T Var(R)/<R> at fixed <N_eff>, from the exact N_eff moments, background included."""
    if mean_neff <= 0:
        return 1.0
    T = plan.bin_width
    if plan.mode is Mode.REFLECTION:
        scale = plan.drive.j_in * 1e-6
        m1, m2 = reflection_moments_exact(plan.c1, plan.drive.b, mean_neff)
    else:
        s = plan.drive.saturation_for(plan.params.gamma)
        c1p = plan.c1 * plan.cooperativity_ratio
        scale = plan.yield_per_us / float(fluorescence_factor(c1p, s))
        m1, m2 = fluorescence_moments_exact(c1p, s, mean_neff)
    mean = scale * m1 + plan.background
    var = scale**2 * (m2 - m1 * m1)
    return 1.0 + T * var / mean
