"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def neff_configs(x, y, z, counts, waist, wavenumber):
    counts = np.asarray(counts, dtype=np.int64)
    chi2 = np.sin(wavenumber * np.asarray(z)) ** 2 * np.exp(
        -2.0 * (np.asarray(x) ** 2 + np.asarray(y) ** 2) / waist**2
    )
    owner = np.repeat(np.arange(counts.size), counts)
    return np.bincount(owner, weights=chi2, minlength=counts.size).astype(np.float64)


def neff_transits(t_cross, x, z, t_kill, t_first, bin_width, n_bins, speed, waist,
                  wavenumber, reach):
    t_cross = np.asarray(t_cross, dtype=np.float64)
    out = np.zeros(n_bins, dtype=np.float64)
    if t_cross.size == 0:
        return out
    half = reach / speed
    b_lo = np.maximum(np.ceil((t_cross - half - t_first) / bin_width).astype(np.int64), 0)
    b_hi = np.minimum(np.floor((t_cross + half - t_first) / bin_width).astype(np.int64),
                      n_bins - 1)
    span = np.maximum(b_hi - b_lo + 1, 0)
    keep = span > 0
    if not keep.any():
        return out
    idx = np.flatnonzero(keep)
    span = span[idx]
    owner = np.repeat(idx, span)
    offsets = np.arange(span.sum()) - np.repeat(np.cumsum(span) - span, span)
    bins = b_lo[owner] + offsets
    t = t_first + bins * bin_width
    alive = t < np.asarray(t_kill)[owner]
    owner, bins, t = owner[alive], bins[alive], t[alive]
    x = np.asarray(x)[owner]
    s = np.sin(wavenumber * np.asarray(z)[owner])
    dy = speed * (t - t_cross[owner])
    contrib = s * s * np.exp(-2.0 * (x * x + dy * dy) / waist**2)
    out += np.bincount(bins, weights=contrib, minlength=n_bins)
    return out
