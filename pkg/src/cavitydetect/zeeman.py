"""Zeeman-resolved excitation of an F=2 -> F'=3 atom, without the cavity.

Populations come from multilevel rate equations written in the frame where
the drive has a single spherical component (exact in steady state for a
linear or circular drive, since no Zeeman coherences are created), then
rotated to the cavity-axis basis. The coherent 12-level Bloch equations are
available with ``method="obe"`` for arbitrary polarizations.

Spherical components are ordered (q = -1, 0, +1) and referred to the cavity
axis z, with e_{+1} = -(x + iy)/sqrt(2), e_{-1} = (x - iy)/sqrt(2).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr
from typing import Optional

import numpy as np
import scipy.linalg as la

from .quantum import liouvillian, stationary_state

Q_VALUES = (-1, 0, 1)

# Squared Clebsch-Gordan coefficients <2 m; 1 q | 3 m+q>^2 keyed by (m, q).
F2_F3_TABLE = {
    (-2, 1): Fr(1, 15), (-1, 1): Fr(1, 5), (0, 1): Fr(2, 5), (1, 1): Fr(2, 3), (2, 1): Fr(1),
    (-2, 0): Fr(1, 3), (-1, 0): Fr(8, 15), (0, 0): Fr(3, 5), (1, 0): Fr(8, 15), (2, 0): Fr(1, 3),
    (-2, -1): Fr(1), (-1, -1): Fr(2, 3), (0, -1): Fr(2, 5), (1, -1): Fr(1, 5), (2, -1): Fr(1, 15),
}


@dataclass(frozen=True)
class LevelScheme:
    """Ground and excited Zeeman manifolds with squared dipole couplings.

    ``cg2[(m, q)]`` couples ground m to excited m + q and is also the
    branching ratio of that decay channel.
    """

    f_ground: int
    f_excited: int
    cg2: dict

    @classmethod
    def f2_f3(cls) -> "LevelScheme":
        return cls(2, 3, {k: float(v) for k, v in F2_F3_TABLE.items()})

    @classmethod
    def two_level(cls) -> "LevelScheme":
        """A single transition with its dipole along the drive."""
        return cls(0, 0, {(0, 0): 1.0})

    @property
    def ground(self) -> np.ndarray:
        return np.arange(-self.f_ground, self.f_ground + 1)

    @property
    def excited(self) -> np.ndarray:
        return np.arange(-self.f_excited, self.f_excited + 1)

    @property
    def n_ground(self) -> int:
        return 2 * self.f_ground + 1

    @property
    def dim(self) -> int:
        return self.n_ground + 2 * self.f_excited + 1

    def coupling(self, m: int, q: int) -> float:
        return self.cg2.get((int(m), int(q)), 0.0)

    def branching(self, m_e: int) -> dict:
        """Decay probabilities of excited m_e per polarization q."""
        return {q: self.coupling(m_e - q, q) for q in Q_VALUES}

    def lowering(self, q: int) -> np.ndarray:
        """Operator sum_m c(m, q) |g m><e m+q| on the ground+excited space."""
        op = np.zeros((self.dim, self.dim))
        for m in self.ground:
            me = m + q
            if abs(me) <= self.f_excited:
                op[m + self.f_ground, self.n_ground + me + self.f_excited] = np.sqrt(self.coupling(m, q))
        return op


@dataclass(frozen=True)
class DrivePolarization:
    """Unit spherical polarization vector (q = -1, 0, +1) and saturation s."""

    vector: tuple
    saturation: float

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex)
        norm = np.linalg.norm(v)
        if v.shape != (3,) or norm == 0:
            raise ValueError("polarization needs three non-zero spherical components")
        if self.saturation < 0:
            raise ValueError("saturation must be non-negative")
        object.__setattr__(self, "vector", tuple(v / norm))

    @classmethod
    def linear(cls, theta: float, phi: float, saturation: float) -> "DrivePolarization":
        """Linear polarization along the direction (theta, phi) from the cavity axis."""
        n = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
        return cls(tuple(_to_spherical(n)), saturation)

    @classmethod
    def perpendicular(cls, saturation: float) -> "DrivePolarization":
        """Linear drive transverse to the cavity axis (the experiment's geometry)."""
        return cls.linear(np.pi / 2, 0.0, saturation)

    @classmethod
    def circular(cls, helicity: int, saturation: float) -> "DrivePolarization":
        vec = [0.0, 0.0, 0.0]
        vec[1 + int(np.sign(helicity))] = 1.0
        return cls(tuple(vec), saturation)

    @property
    def cartesian(self) -> np.ndarray:
        em, e0, ep = self.vector
        return np.array([(em - ep) / np.sqrt(2), -1j * (ep + em) / np.sqrt(2), e0])

    def drive_frame(self) -> tuple:
        """(theta, phi, q): axis along which the drive is a pure q component.

        Raises ValueError for elliptical polarization.
        """
        e = self.cartesian
        cross = np.cross(e, e.conj())
        if np.linalg.norm(cross) < 1e-12:
            k = np.argmax(np.abs(e))
            axis, q = (e * np.exp(-1j * np.angle(e[k]))).real, 0
        elif abs(np.dot(e, e)) < 1e-12:
            axis, q = (1j * cross).real, 1
        else:
            raise ValueError("elliptical drive has no single-component frame; use method='obe'")
        axis = axis / np.linalg.norm(axis)
        return float(np.arccos(np.clip(axis[2], -1, 1))), float(np.arctan2(axis[1], axis[0])), q


def _to_spherical(cart) -> np.ndarray:
    x, y, z = np.asarray(cart, dtype=complex)
    return np.array([(x - 1j * y) / np.sqrt(2), z, -(x + 1j * y) / np.sqrt(2)])


def rotation_matrix(f: int, theta: float, phi: float) -> np.ndarray:
    """exp(-i phi J_z) exp(-i theta J_y) for angular momentum f."""
    m = np.arange(-f, f + 1, dtype=float)
    jp = np.diag(np.sqrt(f * (f + 1) - m[:-1] * (m[:-1] + 1)), -1)  # <m+1|J+|m>
    jy = (jp - jp.T) / 2j
    return np.diag(np.exp(-1j * phi * m)) @ la.expm(-1j * theta * jy)


@dataclass
class Populations:
    """Zeeman populations in the cavity-axis basis, plus the drive-frame set."""

    ground: np.ndarray
    excited: np.ndarray
    drive_frame_excited: Optional[np.ndarray] = None
    drive_q: Optional[int] = None
    excited_matrix: Optional[np.ndarray] = None  # excited block, cavity basis

    @property
    def total(self) -> float:
        return float(self.ground.sum() + self.excited.sum())


def _rate_solution(scheme: LevelScheme, q_drive: int, s: float, gamma: float = 1.0) -> np.ndarray:
    """Steady populations (ground then excited) with drive polarization q_drive."""
    n, ng, fe = scheme.dim, scheme.n_ground, scheme.f_excited
    rates = np.zeros((n, n))  # rates[i, j]: j -> i
    for m in scheme.ground:
        me = m + q_drive
        if abs(me) <= fe:
            r = gamma * s * scheme.coupling(m, q_drive)
            i, j = m + scheme.f_ground, ng + me + fe
            rates[j, i] += r
            rates[i, j] += r
    for me in scheme.excited:
        for q, br in scheme.branching(me).items():
            if br > 0:
                rates[me - q + scheme.f_ground, ng + me + fe] += 2.0 * gamma * br
    gen = rates - np.diag(rates.sum(axis=0))
    a = np.vstack([gen, np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pops, *_ = np.linalg.lstsq(a, rhs, rcond=None)
    if np.abs(gen @ pops).max() > 1e-10:
        raise RuntimeError("rate equations did not reach a stationary solution")
    return pops


def obe_density_matrix(scheme: LevelScheme, drive: DrivePolarization, gamma: float = 1.0) -> np.ndarray:
    """Stationary density matrix of the coherent multilevel Bloch equations."""
    rabi = gamma * np.sqrt(2.0 * drive.saturation)
    raise_eps = sum(e * scheme.lowering(q).T for e, q in zip(drive.vector, Q_VALUES))
    ham = 0.5 * rabi * (raise_eps + raise_eps.conj().T)
    coll = [np.sqrt(2.0 * gamma) * scheme.lowering(q) for q in Q_VALUES]
    rho, _ = stationary_state(liouvillian(ham, coll), scheme.dim, method="direct")
    return rho


def equilibrium_populations(scheme: LevelScheme, drive: DrivePolarization,
                            method: str = "rate") -> Populations:
    """Stationary Zeeman populations in the cavity-axis basis."""
    ng = scheme.n_ground
    if method == "obe":
        rho = obe_density_matrix(scheme, drive)
        diag = np.clip(np.diag(rho).real, 0.0, None)
        return Populations(diag[:ng], diag[ng:], excited_matrix=rho[ng:, ng:])
    if method != "rate":
        raise ValueError(f"unknown method {method!r}")
    theta, phi, q = drive.drive_frame()
    pops = _rate_solution(scheme, q, drive.saturation)
    rot_g = rotation_matrix(scheme.f_ground, theta, phi)
    rot_e = rotation_matrix(scheme.f_excited, theta, phi)
    ground = np.einsum("ij,j,ij->i", rot_g, pops[:ng], rot_g.conj()).real
    excited_m = (rot_e * pops[ng:]) @ rot_e.conj().T
    return Populations(np.clip(ground, 0, None), np.clip(np.diag(excited_m).real, 0, None),
                       pops[ng:], q, excited_m)


def sigma_fraction(populations: Populations, scheme: LevelScheme) -> float:
    """Share of excited-state decay carried by sigma+/- light about the cavity axis."""
    sig = tot = 0.0
    for p, me in zip(populations.excited, scheme.excited):
        br = scheme.branching(me)
        sig += p * (br[-1] + br[1])
        tot += p * sum(br.values())
    if tot <= 0:
        raise ValueError("no excited population, sigma fraction undefined")
    return sig / tot


def cooperativity_ratio(scheme: LevelScheme, drive: DrivePolarization,
                        method: str = "rate") -> float:
    """C'_N / C_N for fluorescence driven with ``drive``.

    The share of excited-state emission that enters the cavity mode
    co-polarized with the drive, relative to the cycling transition (whose
    emission is entirely in the probe's circular mode, ratio 1).
    """
    if method == "rate":
        pops = equilibrium_populations(scheme, drive, "rate")
        q = pops.drive_q
        weights = np.array([scheme.coupling(me - q, q) for me in scheme.excited])
        pe = pops.drive_frame_excited
        if pe.sum() <= 0:
            raise ValueError("no excited population")
        return float(weights @ pe / pe.sum())
    rho = obe_density_matrix(scheme, drive)
    lower = sum(np.conj(e) * scheme.lowering(q) for e, q in zip(drive.vector, Q_VALUES))
    ng = scheme.n_ground
    pe = np.trace(rho[ng:, ng:]).real
    if pe <= 0:
        raise ValueError("no excited population")
    return float(np.trace(lower.conj().T @ lower @ rho).real / pe)
