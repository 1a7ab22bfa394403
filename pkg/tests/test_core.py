import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cavitydetect.core import (BOX_WAISTS, PAPER_PARAMS, Cooperativity, PhysicalParams,
                               RegimeWarning, SamplingBox, cooperativity_single,
                               density_for_mean, expected_neff, gaussian_cdf, ks_distance,
                               mode_function, mode_overlap, mode_volume, neff_distribution,
                               neff_laplace, sample_configuration, sample_neff)


def test_single_atom_cooperativity_from_rates(params):
    c1 = cooperativity_single(params).C1
    assert c1 == pytest.approx(98.4**2 / (2 * 5200 * 3), rel=1e-15)
    assert c1 == pytest.approx(0.310338, abs=5e-7)


def test_cooperativity_scales_linearly():
    c = Cooperativity(0.3)
    np.testing.assert_allclose(c.scaled([0, 1, 2.5]), [0, 0.3, 0.75])
    with pytest.raises(ValueError):
        Cooperativity(-0.1)


@pytest.mark.parametrize("field", ["g", "kappa", "gamma", "wavelength", "length", "waist"])
def test_params_reject_non_positive(field):
    with pytest.raises(ValueError):
        PAPER_PARAMS.replace(**{field: 0.0})
    with pytest.raises(ValueError):
        PAPER_PARAMS.replace(**{field: float("nan")})


def test_strong_coupling_warning():
    assert PAPER_PARAMS.check_regime()
    with pytest.warns(RegimeWarning):
        assert not PAPER_PARAMS.replace(g=3000.0).check_regime()


def test_mode_overlap_matches_mode_volume_numerically(params):
    box = SamplingBox.default(params)
    # quadrature of |chi|^2 over the box, independent of the erf expression
    h, w = box.half_width, params.waist
    trans = integrate.quad(lambda x: math.exp(-2 * x * x / w**2), -h, h)[0] ** 2
    axial = integrate.quad(lambda z: math.sin(params.wavenumber * z) ** 2, 0, box.length,
                           limit=2000)[0]
    assert mode_overlap(params, box) == pytest.approx(trans * axial, rel=1e-9)
    # the box length is rounded to whole half-wavelengths
    assert mode_overlap(params, box) == pytest.approx(
        mode_volume(params) * box.length / params.length, rel=1e-9)


def test_mode_function_on_axis_antinode(params):
    z = 0.25 * params.wavelength
    assert abs(mode_function([0.0, 0.0, z], params)) == pytest.approx(1.0)
    assert abs(mode_function([0.0, 0.0, 0.0], params)) == pytest.approx(0.0, abs=1e-12)


def test_box_validation(params):
    box = SamplingBox.default(params)
    assert box.half_width == BOX_WAISTS * params.waist
    n_half = box.length / (params.wavelength / 2)
    assert n_half == pytest.approx(round(n_half))
    with pytest.raises(ValueError, match="waists"):
        SamplingBox(2 * params.waist, box.length).validate(params)
    with pytest.raises(ValueError, match="half"):
        SamplingBox(box.half_width, box.length + 0.1).validate(params)


def test_sample_neff_deterministic_and_worker_independent(params):
    rho = density_for_mean(0.5, params)
    a = sample_neff(rho, 20_000, params, seed=7)
    b = sample_neff(rho, 20_000, params, seed=7, n_workers=4)
    c = sample_neff(rho, 20_000, params, seed=8)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_configuration_consistent(params):
    conf = sample_configuration(density_for_mean(2.0, params), params, rng_seed=3)
    assert conf.neff == pytest.approx(conf.recompute_neff(params))
    assert conf.collective_coupling == pytest.approx(math.sqrt(conf.neff))


def test_neff_statistics_three_eighths(params):
    # For a Poisson point process, Var/mean = int chi^4 / int chi^2 = (3/4)(1/2).
    samples = sample_neff(density_for_mean(1.0, params), 100_000, params, seed=11)
    mean = samples.mean()
    assert mean == pytest.approx(1.0, abs=3 * samples.std() / math.sqrt(samples.size))
    ratio = samples.var(ddof=1) / mean
    # delta-method error of Var/mean from fourth cumulant ~ sqrt(2/n) scale
    assert ratio == pytest.approx(0.375, abs=0.012)


def test_expected_neff_roundtrip(params):
    rho = density_for_mean(1.24, params)
    assert expected_neff(rho, params) == pytest.approx(1.24)


def test_laplace_transform_matches_samples(params):
    samples = sample_neff(density_for_mean(1.06, params), 100_000, params, seed=5)
    for u in (0.3, 1.0, 3.0):
        e = np.exp(-u * samples)
        assert float(neff_laplace(u, 1.06)[0]) == pytest.approx(
            e.mean(), abs=4 * e.std() / math.sqrt(e.size))


def test_laplace_small_u_gives_mean():
    u = 1e-6
    assert (1 - neff_laplace(u, 0.8)[0]) / u == pytest.approx(0.8, rel=1e-5)


def test_gaussian_distribution_normalised_and_cdf():
    dist = neff_distribution(1.24, "gaussian_approx")
    assert dist.integral() == pytest.approx(1.0, abs=1e-10)
    x = np.linspace(0, 5, 50)
    cdf = gaussian_cdf(x, 1.24)
    assert np.all(np.diff(cdf) >= 0)
    assert cdf[0] == pytest.approx(0.0) and cdf[-1] == pytest.approx(1.0, abs=1e-6)
    cum = dist.cdf(x)
    np.testing.assert_allclose(cum, cdf)


def test_monte_carlo_distribution_moments(params):
    dist = neff_distribution(1.24, "monte_carlo_empirical", n_samples=50_000, seed=2)
    assert dist.integral() == pytest.approx(1.0, abs=1e-12)
    mom = dist.moments()
    assert mom["var_over_mean"] == pytest.approx(0.375, abs=0.02)
    quad = dist.moments("quadrature")
    assert quad["mean"] == pytest.approx(mom["mean"], rel=0.02)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_distribution_rejects_non_positive_mean(bad):
    with pytest.raises(ValueError):
        neff_distribution(bad)


def test_ks_distance_agrees_with_scipy(rng):
    x = rng.normal(size=2000)
    assert ks_distance(x, stats.norm.cdf) == pytest.approx(stats.kstest(x, "norm").statistic)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 5.0))
def test_gaussian_cdf_bounded(mean):
    c = gaussian_cdf(np.array([0.0, mean, 100.0]), mean)
    assert c[0] == pytest.approx(0.0, abs=1e-12)
    assert 0 < c[1] < 1
    assert c[2] == pytest.approx(1.0)
