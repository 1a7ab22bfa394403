"""Bright/dark state discrimination from photon counts.

Rates are counts/ms and times are µs throughout, so the mean count in a
window is ``rate * T / 1000``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaincc, gammaln, xlogy


@dataclass(frozen=True)
class DetectorRates:
    signal: float  # S, counts/ms
    background: float  # B, counts/ms
    prior: float = 0.5  # p, probability the atom is bright

    def __post_init__(self):
        if self.signal < 0 or self.background < 0:
            raise ValueError("rates must be non-negative")
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError("prior must lie in [0, 1]")


def _mean(rate: float, t_us):
    return rate * np.asarray(t_us, dtype=float) * 1e-3


def efficiency(rates: DetectorRates, t_us):
    """Probability of at least one signal photon, 1 - exp(-S T)."""
    if np.any(np.asarray(t_us) < 0):
        raise ValueError("T must be non-negative")
    return -np.expm1(-_mean(rates.signal, t_us))


def poisson_below(k: int, x):
    """P(Poisson(x) < k) through the regularised upper incomplete gamma."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, gammaincc(k, np.where(x > 0, x, 1.0)), 1.0)


def poisson_below_sum(k: int, x):
    """P(Poisson(x) < k) as the finite sum of the pmf (independent route)."""
    x = np.asarray(x, dtype=float)
    j = np.arange(k).reshape((-1,) + (1,) * x.ndim)
    terms = np.exp(xlogy(j, x) - x - gammaln(j + 1))
    return terms.sum(axis=0)


def fidelity(rates: DetectorRates, k: int, t_us, method: str = "gamma"):
    """Probability of a correct bright/dark call with a >= K photon threshold."""
    if k < 1:
        raise ValueError("K must be a positive integer")
    below = poisson_below if method == "gamma" else poisson_below_sum
    dark_ok = below(k, _mean(rates.background, t_us))
    bright_ok = 1.0 - below(k, _mean(rates.signal + rates.background, t_us))
    return (1.0 - rates.prior) * dark_ok + rates.prior * bright_ok


def _log_pmf(k: int, x: float) -> float:
    return k * math.log(x) - x - math.lgamma(k + 1) if x > 0 else (0.0 if k == 0 else -math.inf)


def fidelity_slope(rates: DetectorRates, k: int, t_us: float) -> float:
    """dF_K/dT in 1/µs."""
    s, b, p = rates.signal * 1e-3, rates.background * 1e-3, rates.prior
    gain = p * (s + b) * math.exp(_log_pmf(k - 1, (s + b) * t_us)) if p > 0 else 0.0
    loss = (1 - p) * b * math.exp(_log_pmf(k - 1, b * t_us)) if p < 1 and b > 0 else 0.0
    return gain - loss


def optimal_time_closed_form(rates: DetectorRates, k: int) -> float:
    """T_Kmax = [K ln(1 + S/B) + ln(p/(1-p))] / S, in µs."""
    s, b, p = rates.signal, rates.background, rates.prior
    return 1e3 * (k * math.log1p(s / b) + math.log(p / (1.0 - p))) / s


def optimal_time(rates: DetectorRates, k: int = 1) -> tuple[float, float]:
    """(T_Kmax in µs, F_Kmax) by root-finding on dF/dT.

    The bracket is [0, 10 K ln(1 + S/B) / S]. Returns T = 0 when the
    slope is never positive (prior too small to ever call bright).
    """
    if rates.signal <= 0:
        raise ValueError("no signal: fidelity has no interior optimum")
    if rates.background <= 0:
        raise ValueError("zero background: fidelity rises monotonically to 1")
    if not 0.0 < rates.prior < 1.0:
        raise ValueError("prior must lie strictly between 0 and 1")
    hi = 1e4 * k * math.log1p(rates.signal / rates.background) / rates.signal
    s, b, p = rates.signal * 1e-3, rates.background * 1e-3, rates.prior

    def rel_slope(t):
        # dF/dT divided by its positive (bright) term, from the two pmfs
        log_gain = math.log(p * (s + b)) + _log_pmf(k - 1, (s + b) * t)
        log_loss = math.log((1 - p) * b) + _log_pmf(k - 1, b * t)
        return -math.expm1(log_loss - log_gain)

    if rel_slope(hi * 1e-12) <= 0:
        return 0.0, float(fidelity(rates, k, 0.0))
    while rel_slope(hi) > 0:
        hi *= 2.0
    t_max = brentq(rel_slope, hi * 1e-12, hi, xtol=1e-15, rtol=1e-14, maxiter=200)
    return t_max, float(fidelity(rates, k, t_max))


@dataclass
class FidelityCurve:
    k: int
    times_us: np.ndarray
    values: np.ndarray
    optimum: tuple

    @classmethod
    def compute(cls, rates: DetectorRates, k: int, times_us: Optional[Sequence[float]] = None):
        t_opt, f_opt = optimal_time(rates, k)
        if times_us is None:
            times_us = np.linspace(0.0, 4.0 * max(t_opt, 1e-9), 401)
        times_us = np.asarray(times_us, dtype=float)
        return cls(k, times_us, np.asarray(fidelity(rates, k, times_us)), (t_opt, f_opt))


@dataclass(frozen=True)
class Confusion:
    dark_as_dark: float
    dark_as_bright: float
    bright_as_dark: float
    bright_as_bright: float

    @property
    def fidelity(self) -> float:
        return self.dark_as_dark + self.bright_as_bright


def confusion_table(rates: DetectorRates, k: int, t_us: float) -> Confusion:
    p = rates.prior
    dark_ok = float(poisson_below(k, _mean(rates.background, t_us)))
    bright_miss = float(poisson_below(k, _mean(rates.signal + rates.background, t_us)))
    return Confusion((1 - p) * dark_ok, (1 - p) * (1 - dark_ok),
                     p * bright_miss, p * (1 - bright_miss))


@dataclass(frozen=True)
class EmpiricalFidelity:
    value: float
    stderr: float
    n_trials: int

    @property
    def resolution(self) -> float:
        return 1.0 / self.n_trials


def fidelity_from_counts(bright_counts, dark_counts, k: int) -> EmpiricalFidelity:
    """Fraction of correctly classified trials at threshold K.

    ``bright_counts`` and ``dark_counts`` hold the photon number counted in
    the window by each trial; the prior is the empirical bright fraction.
    """
    bright = np.asarray(bright_counts)
    dark = np.asarray(dark_counts)
    n = bright.size + dark.size
    if n == 0:
        raise ValueError("empty ensemble")
    correct = int((bright >= k).sum() + (dark < k).sum())
    f = correct / n
    return EmpiricalFidelity(f, math.sqrt(f * (1.0 - f) / n), n)


def window_counts(counts, bin_width_us: float, t_us: float):
    """Sum per-trial counts over the first ``t_us`` of each (trials x bins) array."""
    counts = np.atleast_2d(np.asarray(counts))
    n_bins = int(round(t_us / bin_width_us))
    if n_bins > counts.shape[1]:
        raise ValueError("window longer than the recorded stream")
    return counts[:, :n_bins].sum(axis=1)


# Comparison rows: signal S1 and background B in counts/ms, then the printed
# (F1max %, T1max µs, F2max %) with the number of decimals shown in print.
@dataclass(frozen=True)
class TableRow:
    label: str
    signal: float
    background: float
    f1_percent: float
    t1_us: float
    f2_percent: float
    digits: tuple = field(default=(1, 0, 1))

    @property
    def rates(self) -> DetectorRates:
        return DetectorRates(self.signal, self.background, 0.5)


TABLE1 = (
    TableRow("cavity-fluorescence-a", 5.6, 0.28, 90.9, 544, 97.5),
    TableRow("waveguide-a", 36.0, 0.311, 97.6, 132, 99.8),
    TableRow("cavity-fluorescence-b", 54.5, 2.18, 92.2, 60, 98.1),
    TableRow("waveguide-b", 0.13, 0.05, 72.1, 9853, 80.5),
    TableRow("cavity-nondestructive-a", 94.0, 0.05, 99.773, 80, 99.99982, (3, 0, 5)),
    TableRow("cavity-nondestructive-b", 190.0, 1.4, 97.87, 26, 99.85, (2, 0, 2)),
    TableRow("this-apparatus", 420.0, 3.84, 97.46, 11.2, 99.79, (2, 1, 2)),
)


def table_row_values(row: TableRow) -> dict:
    t1, f1 = optimal_time(row.rates, 1)
    _, f2 = optimal_time(row.rates, 2)
    return {"label": row.label, "S1_per_ms": row.signal, "B_per_ms": row.background,
            "F1max": f1, "T1max_us": t1, "F2max": f2}


def matches_printed(row: TableRow, values: dict) -> dict:
    """Per-column check that computed values round to the printed ones."""
    d1, dt, d2 = row.digits
    return {
        "F1max": round(100 * values["F1max"], d1) == round(row.f1_percent, d1),
        "T1max_us": round(values["T1max_us"], dt) == round(row.t1_us, dt),
        "F2max": round(100 * values["F2max"], d2) == round(row.f2_percent, d2),
    }
