"""Photon-count statistics: g2(tau), variance-to-mean and noise predictions.

Counts are arranged as (trials, bins). Error bars come from leave-one-out
jackknife over trials, or over contiguous blocks when only one trial exists.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import NeffDistribution, PhysicalParams
from .signal import reflection_factor

DEFAULT_SEGMENT_US = 500.0
DEFAULT_BLOCKS = 20


@dataclass
class CountStream:
    bin_width: float  # µs
    counts: np.ndarray  # (trials, bins)
    t0: float = 0.0  # µs, start of bin 0

    def __post_init__(self):
        self.counts = np.atleast_2d(np.asarray(self.counts))
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    @property
    def n_trials(self) -> int:
        return self.counts.shape[0]

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.bin_width * np.arange(self.n_bins)

    def segment(self, start_us: float, stop_us: float) -> "CountStream":
        lo = max(int(math.ceil((start_us - self.t0) / self.bin_width - 1e-9)), 0)
        hi = min(int(math.floor((stop_us - self.t0) / self.bin_width + 1e-9)), self.n_bins)
        return CountStream(self.bin_width, self.counts[:, lo:hi], self.t0 + lo * self.bin_width)


@dataclass(frozen=True)
class NoiseModel:
    """Detection chain; only ``bin_width`` enters the noise formula once the
    per-atom yield calibrates the overall rate."""

    collection: float = 1.0  # epsilon
    fibre: float = 1.0  # xi
    kappa: float = 0.0  # MHz
    bin_width: float = 1.0  # µs
    per_atom_yield: float = 0.0  # photons per bin

    def __post_init__(self):
        if not (0 <= self.collection <= 1 and 0 <= self.fibre <= 1):
            raise ValueError("efficiencies must lie in [0, 1]")
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")


def _jackknife(full: np.ndarray, loo: np.ndarray) -> np.ndarray:
    """Standard error from leave-one-out estimates (axis 0)."""
    n = loo.shape[0]
    return np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))


@dataclass
class G2Curve:
    lags: np.ndarray  # bins
    tau_us: np.ndarray
    g2: np.ndarray
    stderr: np.ndarray


def _lag_sums(counts: np.ndarray, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-group sums of k(t)k(t+tau) and the number of pairs."""
    n_bins = counts.shape[1]
    prod = np.empty((counts.shape[0], max_lag + 1))
    for lag in range(max_lag + 1):
        prod[:, lag] = (counts[:, : n_bins - lag] * counts[:, lag:]).sum(axis=1)
    pairs = n_bins - np.arange(max_lag + 1)
    return prod, pairs


def g2_estimate(stream: CountStream, max_lag: int, n_blocks: int = DEFAULT_BLOCKS) -> G2Curve:
    """Intensity correlation mean[k(t) k(t+tau)] / mean[k]^2.

    tau = 0 keeps the k(t)^2 term, so it carries the shot-noise excess 1/mean[k].
    Trials are pooled; with one trial the stream is cut into ``n_blocks``
    blocks for the error estimate.
    """
    counts = stream.counts.astype(float)
    if max_lag < 0 or max_lag >= counts.shape[1]:
        raise ValueError("max_lag must be in [0, n_bins)")
    if counts.shape[0] == 1:
        width = counts.shape[1] // n_blocks
        if width <= max_lag:
            raise ValueError("stream too short for block errors at this max_lag")
        counts = counts[0, : width * n_blocks].reshape(n_blocks, width)
    prod, pairs = _lag_sums(counts, max_lag)
    total = counts.sum(axis=1)
    n_groups, n_bins = counts.shape

    def ratio(prod_sum, count_sum, n):
        mean = count_sum / (n * n_bins)
        return (prod_sum / (n * pairs)) / mean**2

    if total.sum() == 0:
        raise ValueError("zero mean count; g2 undefined")
    g2 = ratio(prod.sum(axis=0), total.sum(), n_groups)
    if n_groups > 1:
        with np.errstate(divide="ignore", invalid="ignore"):
            loo = ratio(prod.sum(axis=0) - prod, (total.sum() - total)[:, None], n_groups - 1)
        err = _jackknife(g2, loo)
    else:
        err = np.full_like(g2, np.nan)
    lags = np.arange(max_lag + 1)
    return G2Curve(lags, lags * stream.bin_width, g2, err)


def g2_transit_theory(params: PhysicalParams, b: float, transit_time_us: float,
                      amplitude: float, tau_us, bin_width_us: float = 0.0,
                      shot_noise_mean: Optional[float] = None, n_impact: int = 48,
                      n_phase: int = 64) -> np.ndarray:
    """Expected g2(tau) for sparse, independent single-atom transits.

    Each transit gives a reflection excess J_in [h(C(t)) - b^2] with
    C(t) = C_1 sin^2(phi) exp(-2 x^2 / w^2) exp(-8 t^2 / t_tr^2) (atom at
    speed 2w/t_tr). The autocorrelation of that excess is averaged over
    impact parameter x and standing-wave phase phi, optionally averaged over
    counting bins, normalised to 1 at tau = 0 and scaled by ``amplitude``.
    ``shot_noise_mean`` adds the 1/mean[k] self term at tau = 0.
    """
    tau = np.atleast_1d(np.asarray(tau_us, dtype=float))
    if amplitude == 0:
        out = np.ones_like(tau)
    else:
        c1 = params.g**2 / (2.0 * params.kappa * params.gamma)
        t_tr = transit_time_us
        span = 2.5 * t_tr + np.abs(tau).max() + 2 * bin_width_us
        dt = min(t_tr / 80.0, bin_width_us / 8.0 if bin_width_us > 0 else np.inf)
        t = np.arange(-span, span + dt / 2, dt)
        xs, wx = np.polynomial.legendre.leggauss(n_impact)
        xs = 1.5 * (xs + 1.0)  # impact parameter / w in [0, 3]
        wx = 1.5 * wx
        ph, wp = np.polynomial.legendre.leggauss(n_phase)
        ph = 0.25 * np.pi * (ph + 1.0)  # sin^2 symmetric about pi/2
        wp = 0.25 * np.pi * wp
        peak = c1 * np.exp(-2.0 * xs[:, None] ** 2) * np.sin(ph[None, :]) ** 2
        weights = (wx[:, None] * wp[None, :]).ravel()
        profile = np.exp(-8.0 * t**2 / t_tr**2)
        excess = reflection_factor(peak.ravel()[:, None] * profile[None, :], b) - b * b
        if bin_width_us > 0:
            m = max(int(round(bin_width_us / dt)), 1)
            excess = np.apply_along_axis(lambda r: np.convolve(r, np.ones(m) / m, "same"), 1, excess)
        n_fft = 2 ** int(np.ceil(np.log2(2 * t.size)))
        spec = np.fft.rfft(excess, n_fft, axis=1)
        acf = np.fft.irfft(np.abs(spec) ** 2, n_fft, axis=1)[:, : t.size]
        acf = (weights[:, None] * acf).sum(axis=0)
        lag_axis = dt * np.arange(t.size)
        shape = np.interp(np.abs(tau), lag_axis, acf / acf[0], right=0.0)
        out = 1.0 + amplitude * shape
    if shot_noise_mean is not None:
        out = out + np.where(tau == 0, 1.0 / shot_noise_mean, 0.0)
    return out


def fit_g2_amplitude(curve: G2Curve, shape: np.ndarray, skip_zero: bool = True) -> tuple:
    """Weighted least-squares A in g2 = 1 + A * shape, returning (A, stderr).

    ``shape`` is the unit-amplitude excess, e.g. ``g2_transit_theory(..., 1.0) - 1``.
    tau = 0 is skipped by default because it carries the shot-noise term.
    """
    sel = slice(1, None) if skip_zero else slice(None)
    y = curve.g2[sel] - 1.0
    x = np.asarray(shape, dtype=float)[sel]
    err = curve.stderr[sel]
    w = 1.0 / np.where(np.isfinite(err) & (err > 0), err, 1.0) ** 2
    amp = float((w * x * y).sum() / (w * x * x).sum())
    return amp, float(1.0 / math.sqrt((w * x * x).sum()))


@dataclass
class VarianceCurve:
    t_us: np.ndarray
    ratio: np.ndarray
    stderr: np.ndarray


def _loo_ratio(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = counts.shape[0]
    s1 = counts.sum(axis=0)
    s2 = (counts**2).sum(axis=0)
    mean = s1 / n
    var = (s2 - n * mean**2) / (n - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        full = var / mean
        if n < 3:
            return full, np.full((n,) + full.shape, np.nan)
        m_loo = (s1 - counts) / (n - 1)
        v_loo = (s2 - counts**2 - (n - 1) * m_loo**2) / (n - 2)
        return full, v_loo / m_loo


def _boxcar(a: np.ndarray, width: int) -> np.ndarray:
    if width <= 1:
        return a
    kernel = np.ones(width) / width
    return np.apply_along_axis(lambda r: np.convolve(r, kernel, "valid"), -1, a)


def variance_to_mean(stream: CountStream, window_us: Optional[float] = None) -> VarianceCurve:
    """Ensemble Var(k)/<k> per bin over trials, optionally boxcar-averaged in time."""
    if stream.n_trials < 2:
        raise ValueError("variance over trials needs at least two trials")
    counts = stream.counts.astype(float)
    full, loo = _loo_ratio(counts)
    width = 1 if window_us is None else max(int(round(window_us / stream.bin_width)), 1)
    full, loo = _boxcar(full, width), _boxcar(loo, width)
    t = _boxcar(stream.times, width)
    return VarianceCurve(t, full, _jackknife(full, loo))


def segment_variance_to_mean(stream: CountStream, pooled: bool = True) -> tuple[float, float]:
    """Var(k)/<k> over a stationary segment, with a jackknife error over trials.

    ``pooled`` treats every (trial, bin) count as a draw from one distribution,
    which avoids the small-sample bias of per-bin ratios at low counts. With
    ``pooled=False`` the per-bin ensemble ratios are averaged instead.
    Bins within a trial may be correlated; the jackknife accounts for that.
    """
    if stream.n_trials < 3:
        raise ValueError("need at least three trials")
    counts = stream.counts.astype(float)
    if not pooled:
        full, loo = _loo_ratio(counts)
        value = float(np.nanmean(full))
        return value, float(_jackknife(np.array(value), np.nanmean(loo, axis=1)))
    n_per = counts.shape[1]
    s1 = counts.sum(axis=1)
    s2 = (counts**2).sum(axis=1)

    def ratio(a, b, n):
        mean = a / n
        return (b / n - mean**2) * n / (n - 1) / mean

    n_all = counts.size
    value = float(ratio(s1.sum(), s2.sum(), n_all))
    with np.errstate(divide="ignore", invalid="ignore"):
        loo = ratio(s1.sum() - s1, s2.sum() - s2, n_all - n_per)
    return value, float(_jackknife(np.array(value), loo))


def mandel_linear_prediction(alpha: float, var_over_mean_n: float = 1.0) -> float:
    """1 + alpha Var(N)/<N> for counts linear in the atom number."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return 1.0 + alpha * var_over_mean_n


def nonlinear_noise_prediction(distribution: NeffDistribution, rate_map: Callable,
                               bin_width_us: float = 1.0, method: str = "auto") -> float:
    """1 + T Var(R)/<R> with R(N_eff) the detected rate in photons/µs.

    ``method`` selects quadrature over the density or the mean over raw
    samples (see ``NeffDistribution.expectation``).
    """
    probe = np.asarray(rate_map(distribution.grid), dtype=float)
    if probe.shape != distribution.grid.shape or not np.all(np.isfinite(probe)) or probe.min() < 0:
        raise ValueError("rate map must return finite non-negative rates over the N_eff domain")
    mean = distribution.expectation(lambda n: rate_map(n), method)
    second = distribution.expectation(lambda n: np.asarray(rate_map(n)) ** 2, method)
    if mean <= 0:
        raise ValueError("mean rate is zero")
    return 1.0 + bin_width_us * (second - mean * mean) / mean


def noise_from_moments(first: float, second: float, scale_per_bin: float) -> float:
    """1 + T Var(R)/<R> when R = scale * f(N_eff) and E[f], E[f^2] are known."""
    return 1.0 + scale_per_bin * (second - first * first) / first
