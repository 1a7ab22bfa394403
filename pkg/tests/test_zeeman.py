from fractions import Fraction

import numpy as np
import pytest
import sympy
from sympy.physics.quantum.cg import CG

from cavitydetect.zeeman import (F2_F3_TABLE, DrivePolarization, LevelScheme,
                                 cooperativity_ratio, equilibrium_populations,
                                 rotation_matrix, sigma_fraction)


def test_cg_table_against_sympy():
    for (m, q), value in F2_F3_TABLE.items():
        cg = CG(2, m, 1, q, 3, m + q).doit()
        assert sympy.nsimplify(cg**2) == sympy.Rational(value.numerator, value.denominator)


def test_branching_sums_to_one():
    scheme = LevelScheme.f2_f3()
    for me in scheme.excited:
        assert sum(scheme.branching(me).values()) == pytest.approx(1.0)


def test_rotation_is_unitary_and_matches_wigner():
    u = rotation_matrix(3, 0.7, 1.3)
    np.testing.assert_allclose(u @ u.conj().T, np.eye(7), atol=1e-12)
    d = rotation_matrix(1, 0.4, 0.0)
    # d^1_{00}(beta) = cos(beta), d^1_{11} = (1 + cos beta)/2
    assert d[1, 1].real == pytest.approx(np.cos(0.4))
    assert d[2, 2].real == pytest.approx((1 + np.cos(0.4)) / 2)


@pytest.mark.parametrize("s", [0.5, 3.0, 20.0])
@pytest.mark.parametrize("drive_fn", [lambda s: DrivePolarization.perpendicular(s),
                                      lambda s: DrivePolarization.linear(0.6, 0.9, s),
                                      lambda s: DrivePolarization.circular(1, s)])
def test_rate_equations_equal_bloch_equations(s, drive_fn):
    scheme, drive = LevelScheme.f2_f3(), drive_fn(s)
    rate = equilibrium_populations(scheme, drive, "rate")
    obe = equilibrium_populations(scheme, drive, "obe")
    np.testing.assert_allclose(rate.ground, obe.ground, atol=1e-10)
    np.testing.assert_allclose(rate.excited, obe.excited, atol=1e-10)
    assert rate.total == pytest.approx(1.0)
    assert cooperativity_ratio(scheme, drive, "rate") == pytest.approx(
        cooperativity_ratio(scheme, drive, "obe"), abs=1e-10)


def test_two_level_ratio_is_one():
    assert cooperativity_ratio(LevelScheme.two_level(), DrivePolarization.linear(0, 0, 2.0)) == \
        pytest.approx(1.0)


def test_perpendicular_drive_sigma_share_and_ratio():
    scheme = LevelScheme.f2_f3()
    for s in (1.0, 5.0, 20.0):
        drive = DrivePolarization.perpendicular(s)
        pops = equilibrium_populations(scheme, drive)
        assert sigma_fraction(pops, scheme) == pytest.approx(7 / 9, abs=1e-12)
        assert cooperativity_ratio(scheme, drive) == pytest.approx(5 / 9, abs=1e-12)
        np.testing.assert_allclose(pops.excited, pops.excited[::-1], atol=1e-12)


def test_circular_drive_pumps_to_stretched_state():
    scheme = LevelScheme.f2_f3()
    pops = equilibrium_populations(scheme, DrivePolarization.circular(1, 50.0))
    assert pops.ground[-1] + pops.excited[-1] == pytest.approx(1.0, abs=1e-9)
    assert cooperativity_ratio(scheme, DrivePolarization.circular(1, 50.0)) == pytest.approx(1.0)


def test_polarization_validation():
    with pytest.raises(ValueError):
        DrivePolarization((0, 0, 0), 1.0)
    with pytest.raises(ValueError):
        DrivePolarization((1, 0, 0), -1.0)
    ellip = DrivePolarization((0.8, 0.0, 0.6), 1.0)
    with pytest.raises(ValueError, match="elliptical"):
        ellip.drive_frame()
    # elliptical drive still works with the coherent solver
    r = cooperativity_ratio(LevelScheme.f2_f3(), ellip, "obe")
    assert 0 < r <= 1
    with pytest.raises(ValueError):
        equilibrium_populations(LevelScheme.f2_f3(), ellip, "nope")
