# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for effective-atom-number sums.

Both functions mirror ``_kernels_py`` exactly in signature and semantics.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sin, exp, ceil, floor

cnp.import_array()


def neff_configs(const double[::1] x, const double[::1] y, const double[::1] z,
                 const long long[::1] counts, double waist, double wavenumber):
    """Sum |chi(r)|^2 over consecutive runs of atoms.

    ``counts[i]`` atoms belong to configuration ``i``; atoms are stored in
    configuration order.
    """
    cdef Py_ssize_t n_cfg = counts.shape[0]
    out = np.zeros(n_cfg, dtype=np.float64)
    cdef double[::1] res = out
    cdef double inv_w2 = 2.0 / (waist * waist)
    cdef Py_ssize_t i, j, start = 0, stop
    cdef double acc, s
    with nogil:
        for i in range(n_cfg):
            stop = start + counts[i]
            acc = 0.0
            for j in range(start, stop):
                s = sin(wavenumber * z[j])
                acc = acc + s * s * exp(-(x[j] * x[j] + y[j] * y[j]) * inv_w2)
            res[i] = acc
            start = stop
    return out


def neff_transits(const double[::1] t_cross, const double[::1] x, const double[::1] z,
                  const double[::1] t_kill, double t_first, double bin_width,
                  Py_ssize_t n_bins, double speed, double waist, double wavenumber,
                  double reach):
    """Accumulate N_eff per time bin from atoms crossing the mode.

    Atom ``i`` moves along y with ``y = speed * (t - t_cross[i])`` and
    contributes to bins whose centre ``t`` satisfies ``|y| <= reach`` and
    ``t < t_kill[i]``. Bin centres are ``t_first + b * bin_width``.
    """
    out = np.zeros(n_bins, dtype=np.float64)
    cdef double[::1] res = out
    cdef Py_ssize_t n_atoms = t_cross.shape[0]
    cdef double inv_w2 = 2.0 / (waist * waist)
    cdef double half = reach / speed
    cdef Py_ssize_t i, b, b_lo, b_hi
    cdef double s, axial, t, dy, base
    with nogil:
        for i in range(n_atoms):
            b_lo = <Py_ssize_t>ceil((t_cross[i] - half - t_first) / bin_width)
            b_hi = <Py_ssize_t>floor((t_cross[i] + half - t_first) / bin_width)
            if b_lo < 0:
                b_lo = 0
            if b_hi > n_bins - 1:
                b_hi = n_bins - 1
            if b_hi < b_lo:
                continue
            s = sin(wavenumber * z[i])
            base = s * s * exp(-x[i] * x[i] * inv_w2)
            for b in range(b_lo, b_hi + 1):
                t = t_first + b * bin_width
                if t >= t_kill[i]:
                    break
                dy = speed * (t - t_cross[i])
                res[b] += base * exp(-dy * dy * inv_w2)
    return out
