"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``CAVITYDETECT_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:
    _compiled = None

if _compiled is not None and os.environ.get("CAVITYDETECT_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "cython"
    _impl = _compiled
else:
    BACKEND = "python"
    _impl = _kernels_py


def neff_configs(x, y, z, counts, waist, wavenumber):
    """N_eff of each configuration from concatenated atom coordinates."""
    return _impl.neff_configs(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(counts, dtype=np.int64),
        float(waist),
        float(wavenumber),
    )


def neff_transits(t_cross, x, z, t_kill, t_first, bin_width, n_bins, speed, waist,
                  wavenumber, reach):
    """Per-bin N_eff from atoms moving through the mode at constant speed."""
    return _impl.neff_transits(
        np.ascontiguousarray(t_cross, dtype=np.float64),
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(z, dtype=np.float64),
        np.ascontiguousarray(t_kill, dtype=np.float64),
        float(t_first),
        float(bin_width),
        int(n_bins),
        float(speed),
        float(waist),
        float(wavenumber),
        float(reach),
    )


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"`` (for benchmarks/tests)."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
