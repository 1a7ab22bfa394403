"""Master-equation and quantum-jump solver for driven atoms in a cavity.

The Hamiltonian (hbar = 1, rotating frame, everything on resonance) is

    H = -i eta (a - a^dag) - i sum_j [(g_j a + Omega_j / 2) sigma_j^dag - h.c.]

with dissipators D[sqrt(2 kappa) a] and D[sqrt(2 gamma) sigma_j]. The solver
is unit-agnostic: rates share whatever unit the caller uses, and times come
out in the inverse of that unit.

Density matrices are vectorised row-major, so vec(A X B) = (A kron B^T) vec(X).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .core import PhysicalParams

DEFAULT_MAX_DIM = 4096
DEFAULT_MAX_ATOMS = 3
CUTOFF_TOL = 1e-8
TRAJ_CHUNK = 64


class DimensionError(ValueError):
    """The truncated Hilbert space would exceed the configured maximum."""


class SteadyStateError(RuntimeError):
    """The stationary state could not be found to tolerance."""


@dataclass(frozen=True)
class SystemSpec:
    """Atoms + cavity system.

    ``couplings`` and ``rabi`` are per atom (rabi may be complex); ``pump``
    is the cavity drive eta. ``kappa`` and ``gamma`` default to ``params``.
    """

    params: PhysicalParams
    couplings: tuple = ()
    rabi: tuple = ()
    pump: float = 0.0
    fock_cutoff: int = 5
    max_dim: int = DEFAULT_MAX_DIM
    max_atoms: int = DEFAULT_MAX_ATOMS

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(float(g) for g in self.couplings))
        rabi = tuple(complex(o) for o in self.rabi) or (0j,) * len(self.couplings)
        object.__setattr__(self, "rabi", rabi)
        if len(self.rabi) != len(self.couplings):
            raise ValueError("rabi and couplings need one entry per atom")
        if self.n_atoms > self.max_atoms:
            raise DimensionError(
                f"{self.n_atoms} atoms exceeds the cap of {self.max_atoms}; "
                "use the N_eff statistics for larger ensembles"
            )
        if self.fock_cutoff < 1:
            raise ValueError("fock_cutoff must be at least 1")
        if self.pump < 0 or any(g < 0 for g in self.couplings):
            raise ValueError("pump and couplings must be non-negative")
        if self.dim > self.max_dim:
            largest = self.max_dim // 2**self.n_atoms - 1
            raise DimensionError(
                f"Hilbert dimension {self.dim} exceeds {self.max_dim}; "
                f"with {self.n_atoms} atoms the fock_cutoff must be <= {largest}"
            )

    @property
    def n_atoms(self) -> int:
        return len(self.couplings)

    @property
    def kappa(self) -> float:
        return self.params.kappa

    @property
    def gamma(self) -> float:
        return self.params.gamma

    @property
    def dim(self) -> int:
        return (self.fock_cutoff + 1) * 2**self.n_atoms

    def with_cutoff(self, cutoff: int) -> "SystemSpec":
        return replace(self, fock_cutoff=cutoff)


@dataclass
class Operators:
    a: sp.csr_matrix
    sigmas: list
    hamiltonian: sp.csr_matrix
    collapse: list
    labels: list

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @property
    def number(self) -> sp.csr_matrix:
        return (self.a.getH() @ self.a).tocsr()


def _embed(op, slot: int, dims: Sequence[int]):
    mats = [sp.identity(d, dtype=complex, format="csr") for d in dims]
    mats[slot] = sp.csr_matrix(op, dtype=complex)
    return reduce(lambda x, y: sp.kron(x, y, format="csr"), mats)


def system_operators(spec: SystemSpec) -> Operators:
    """Cavity/atom operators, Hamiltonian and collapse operators.

    Basis: Fock |0..cutoff> for the cavity, then (g, e) per atom.
    """
    dims = [spec.fock_cutoff + 1] + [2] * spec.n_atoms
    a1 = sp.diags(np.sqrt(np.arange(1, spec.fock_cutoff + 1)), 1)
    lower = np.array([[0.0, 1.0], [0.0, 0.0]])  # |g><e|
    a = _embed(a1, 0, dims)
    sigmas = [_embed(lower, j + 1, dims) for j in range(spec.n_atoms)]
    ident = sp.identity(a.shape[0], dtype=complex, format="csr")
    ham = -1j * spec.pump * (a - a.getH())
    for g_j, om_j, s_j in zip(spec.couplings, spec.rabi, sigmas):
        x = (g_j * a + 0.5 * om_j * ident) @ s_j.getH()
        ham = ham - 1j * (x - x.getH())
    collapse = [math.sqrt(2.0 * spec.kappa) * a]
    collapse += [math.sqrt(2.0 * spec.gamma) * s for s in sigmas]
    labels = ["cavity"] + [f"atom_{j}" for j in range(spec.n_atoms)]
    return Operators(a.tocsr(), sigmas, ham.tocsr(), collapse, labels)


def liouvillian(hamiltonian, collapse: Sequence) -> sp.csr_matrix:
    """Lindblad generator for row-major vectorised density matrices."""
    h = sp.csr_matrix(hamiltonian, dtype=complex)
    d = h.shape[0]
    ident = sp.identity(d, dtype=complex, format="csr")
    gen = -1j * (sp.kron(h, ident) - sp.kron(ident, h.T))
    for c in collapse:
        c = sp.csr_matrix(c, dtype=complex)
        cdc = (c.getH() @ c).tocsr()
        gen = gen + sp.kron(c, c.conj()) - 0.5 * sp.kron(cdc, ident) - 0.5 * sp.kron(ident, cdc.T)
    return gen.tocsr()


def build_generator(spec: SystemSpec) -> sp.csr_matrix:
    """Sparse superoperator L with d(vec rho)/dt = L vec(rho)."""
    ops = system_operators(spec)
    return liouvillian(ops.hamiltonian, ops.collapse)


@dataclass
class DensityOperator:
    matrix: np.ndarray
    spec: Optional[SystemSpec] = None
    residual: float = 0.0

    def expect(self, op) -> complex:
        op = op.toarray() if sp.issparse(op) else np.asarray(op)
        return complex(np.trace(op @ self.matrix))

    def hermiticity_error(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max())

    def trace_error(self) -> float:
        return float(abs(np.trace(self.matrix) - 1.0))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())

    def check(self, tol: float = 1e-10) -> None:
        if self.hermiticity_error() > tol:
            raise SteadyStateError(f"density matrix not Hermitian ({self.hermiticity_error():.2e})")
        if self.trace_error() > tol:
            raise SteadyStateError(f"trace deviates from one ({self.trace_error():.2e})")
        if self.min_eigenvalue() < -tol:
            raise SteadyStateError(f"negative eigenvalue {self.min_eigenvalue():.2e}")


def stationary_state(generator, dim: int, method: str = "auto", tol: float = 1e-10) -> tuple:
    """Null vector of ``generator`` normalised to unit trace.

    One row of L vec(rho) = 0 is replaced by Tr(rho) = 1; solved by sparse LU,
    or by preconditioned LGMRES for large dimensions.
    """
    gen = sp.csr_matrix(generator)
    n = dim * dim
    trace_idx = np.arange(dim) * (dim + 1)
    a = gen.tolil()
    a[0, :] = 0
    a[0, trace_idx] = 1.0
    a = a.tocsc()
    rhs = np.zeros(n, dtype=complex)
    rhs[0] = 1.0
    if method == "auto":
        method = "direct" if dim <= 256 else "iterative"
    if method == "direct":
        vec = spla.spsolve(a, rhs)
    elif method == "iterative":
        ilu = spla.spilu(a, drop_tol=1e-8, fill_factor=20)
        prec = spla.LinearOperator(a.shape, ilu.solve, dtype=complex)
        vec, info = spla.lgmres(a, rhs, M=prec, rtol=1e-14, atol=0.0, maxiter=2000)
        if info != 0:
            raise SteadyStateError(f"iterative steady-state solve did not converge (info={info})")
    else:
        raise ValueError(f"unknown method {method!r}")
    rho = vec.reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    residual = float(np.linalg.norm(gen @ rho.reshape(-1)))
    if not np.isfinite(residual) or residual > tol:
        raise SteadyStateError(f"steady-state residual {residual:.3e} exceeds {tol:.1e}")
    return rho, residual


def _solve(spec: SystemSpec, method: str, tol: float) -> DensityOperator:
    rho, res = stationary_state(build_generator(spec), spec.dim, method, tol)
    return DensityOperator(rho, spec, res)


def steady_state(spec: SystemSpec, auto_cutoff: bool = True, method: str = "auto",
                 tol: float = 1e-10) -> DensityOperator:
    """Stationary density matrix.

    With ``auto_cutoff`` the Fock cutoff is doubled until <a^dag a> moves by
    less than 1e-8; the state at the converged cutoff is returned.
    """
    state = _solve(spec, method, tol)
    if not auto_cutoff:
        state.check()
        return state
    n_prev = photon_number(state)
    current = spec
    while True:
        bigger = current.with_cutoff(2 * current.fock_cutoff)
        if bigger.dim > bigger.max_dim:
            raise DimensionError(
                f"photon number not converged below cutoff {current.fock_cutoff} "
                f"within max_dim={spec.max_dim}"
            )
        nxt = _solve(bigger, method, tol)
        n_next = photon_number(nxt)
        if abs(n_next - n_prev) < CUTOFF_TOL:
            state.check()
            return state
        state, n_prev, current = nxt, n_next, bigger


def _ops_for(state: DensityOperator) -> Operators:
    if state.spec is None:
        raise ValueError("density operator carries no system spec")
    return system_operators(state.spec)


def photon_number(state: DensityOperator) -> float:
    return state.expect(_ops_for(state).number).real


def field_amplitude(state: DensityOperator) -> complex:
    return state.expect(_ops_for(state).a)


def excited_population(state: DensityOperator, atom: int = 0) -> float:
    s = _ops_for(state).sigmas[atom]
    return state.expect(s.getH() @ s).real


def field_g2_zero(spec: SystemSpec) -> float:
    """<a^dag a^dag a a> / <a^dag a>^2 in the steady state."""
    state = steady_state(spec)
    ops = _ops_for(state)
    a = ops.a
    n = state.expect(a.getH() @ a).real
    if n <= 0:
        raise ValueError("intracavity field is empty; g2(0) is undefined")
    n2 = state.expect(a.getH() @ a.getH() @ a @ a).real
    return n2 / n**2


def _output_operator(ops: Operators, spec: SystemSpec, b: float):
    if spec.pump <= 0:
        raise ValueError("reflection needs a cavity pump")
    lam = (1.0 - b) * spec.kappa / spec.pump
    ident = sp.identity(ops.dim, dtype=complex, format="csr")
    return ident - lam * ops.a


def reflected_flux(spec: SystemSpec, j_in: float, b: float,
                   state: Optional[DensityOperator] = None) -> float:
    """Reflected photon flux from input-output theory.

    The output field is the prompt reflection plus the leaking cavity field,
    normalised so the empty cavity returns J_in b^2:
    A_out = sqrt(J_in) (1 - (1 - b) a / (eta/kappa)).
    """
    state = state or steady_state(spec)
    ops = _ops_for(state)
    out = _output_operator(ops, spec, b)
    return j_in * state.expect(out.getH() @ out).real


def output_g2_zero(spec: SystemSpec, b: float, state: Optional[DensityOperator] = None) -> float:
    """Zero-delay intensity correlation of the reflected output field."""
    state = state or steady_state(spec)
    ops = _ops_for(state)
    out = _output_operator(ops, spec, b)
    od = out.getH()
    n = state.expect(od @ out).real
    return state.expect(od @ od @ out @ out).real / n**2


def evolve(spec: SystemSpec, rho0: np.ndarray, times: Sequence[float]) -> list:
    """Density matrices at ``times`` starting from ``rho0`` at t = 0."""
    gen = build_generator(spec).tocsc()
    d = spec.dim
    times = np.asarray(times, dtype=float)
    vec = np.asarray(rho0, dtype=complex).reshape(-1)
    out, t_prev = [], 0.0
    for t in times:
        vec = spla.expm_multiply(gen * (t - t_prev), vec)
        t_prev = t
        out.append(vec.reshape(d, d).copy())
    return out


# --------------------------------------------------------------------------
# Quantum jumps (waiting-time Monte Carlo wavefunction method)


@dataclass
class TrajectoryRecord:
    jump_times: np.ndarray
    channels: np.ndarray  # 0 = cavity, j = atom j-1
    final_state: np.ndarray
    seed: tuple


@dataclass
class JumpEnsemble:
    records: list
    labels: list
    t_burn: float
    t_end: float
    observables: dict  # name -> (mean, standard error)
    jump_rates: dict  # channel label -> (rate, standard error)
    channel_fraction: dict  # channel label -> (fraction, standard error)
    per_trajectory: dict = field(repr=False, default_factory=dict)

    @property
    def n_traj(self) -> int:
        return len(self.records)


class _Propagator:
    """exp(-i H_eff t) applied to state vectors for arbitrary t."""

    def __init__(self, h_eff: np.ndarray):
        self.h_eff = h_eff
        lam, vec = la.eig(h_eff)
        self.use_eig = np.linalg.cond(vec) < 1e8
        if self.use_eig:
            self.lam, self.vec, self.inv = lam, vec, la.inv(vec)

    def matrix(self, t: float) -> np.ndarray:
        if self.use_eig:
            return (self.vec * np.exp(-1j * self.lam * t)) @ self.inv
        return la.expm(-1j * self.h_eff * t)

    def apply(self, psi: np.ndarray, t: float) -> np.ndarray:
        if self.use_eig:
            return self.vec @ (np.exp(-1j * self.lam * t) * (self.inv @ psi))
        return la.expm(-1j * self.h_eff * t) @ psi


def _run_chunk(spec: SystemSpec, seqs: list, t_end: float, t_burn: float, dt: float,
               keys: list) -> list:
    ops = system_operators(spec)
    d = ops.dim
    coll = [c.toarray() for c in ops.collapse]
    h_eff = ops.hamiltonian.toarray() - 0.5j * sum(c.conj().T @ c for c in coll)
    prop = _Propagator(h_eff)
    step = prop.matrix(dt)
    obs_ops = [ops.number.toarray()] + [(s.getH() @ s).toarray() for s in ops.sigmas]
    n = len(seqs)
    rngs = [np.random.default_rng(s) for s in seqs]
    psi = np.zeros((d, n), dtype=complex)
    psi[0, :] = 1.0
    thresh = np.array([r.random() for r in rngs])
    jumps = [[] for _ in range(n)]
    chans = [[] for _ in range(n)]
    n_steps = int(round(t_end / dt))
    acc = np.zeros((len(obs_ops), n))
    n_samples = 0
    t = 0.0

    def do_jump(j, state):
        weights = np.array([np.vdot(c @ state, c @ state).real for c in coll])
        k = int(np.searchsorted(np.cumsum(weights), rngs[j].random() * weights.sum(), "right"))
        k = min(k, len(coll) - 1)
        new = coll[k] @ state
        return new / np.linalg.norm(new), k

    for i in range(n_steps):
        new = step @ psi
        norms = np.einsum("ij,ij->j", new.conj(), new).real
        for j in np.flatnonzero(norms < thresh):
            state, t0, left = psi[:, j], t, dt
            while True:
                def excess(tau, state=state, j=j):
                    v = prop.apply(state, tau)
                    return np.vdot(v, v).real - thresh[j]

                tau = brentq(excess, 0.0, left, xtol=1e-14 * max(1.0, dt), rtol=1e-12)
                state, k = do_jump(j, prop.apply(state, tau))
                t0 += tau
                left -= tau
                jumps[j].append(t0)
                chans[j].append(k)
                thresh[j] = rngs[j].random()
                end = prop.apply(state, left)
                if np.vdot(end, end).real >= thresh[j]:
                    new[:, j] = end
                    break
        psi = new
        t = (i + 1) * dt
        if t > t_burn + 1e-12 * dt:
            norms = np.einsum("ij,ij->j", psi.conj(), psi).real
            for m, op in enumerate(obs_ops):
                acc[m] += np.einsum("ij,ij->j", psi.conj(), op @ psi).real / norms
            n_samples += 1
    out = []
    for j in range(n):
        final = psi[:, j] / np.linalg.norm(psi[:, j])
        out.append((TrajectoryRecord(np.array(jumps[j]), np.array(chans[j], dtype=int),
                                     final, keys[j]), acc[:, j] / max(n_samples, 1)))
    return out


def quantum_jump_ensemble(spec: SystemSpec, t_end: float, n_traj: int, seed: int = 0,
                          t_burn: Optional[float] = None, dt: Optional[float] = None,
                          n_workers: int = 1) -> JumpEnsemble:
    """Unravel the master equation into ``n_traj`` jump trajectories.

    Each trajectory starts in the vacuum with all atoms in the ground state and
    owns an RNG stream spawned from ``seed``. Trajectories are processed in
    fixed chunks so results do not depend on ``n_workers``. Observables are
    time-averaged after ``t_burn`` (default t_end/10); standard errors are
    across trajectories.
    """
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    t_burn = 0.1 * t_end if t_burn is None else t_burn
    dt = t_end / 2000.0 if dt is None else dt
    seqs = np.random.SeedSequence(seed).spawn(n_traj)
    keys = [(seed, i) for i in range(n_traj)]
    chunks = [(seqs[i:i + TRAJ_CHUNK], keys[i:i + TRAJ_CHUNK])
              for i in range(0, n_traj, TRAJ_CHUNK)]

    def run(chunk):
        return _run_chunk(spec, chunk[0], t_end, t_burn, dt, chunk[1])

    if n_workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    results = [item for part in parts for item in part]
    records = [r for r, _ in results]
    obs = np.array([o for _, o in results])  # (n_traj, n_obs)
    labels = ["cavity"] + [f"atom_{j}" for j in range(spec.n_atoms)]
    names = ["photon_number"] + [f"excited_{j}" for j in range(spec.n_atoms)]
    sem = obs.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.full(obs.shape[1], np.nan)
    observables = {name: (float(obs[:, m].mean()), float(sem[m])) for m, name in enumerate(names)}

    window = t_end - t_burn
    counts = np.zeros((n_traj, len(labels)))
    for i, rec in enumerate(records):
        late = rec.channels[rec.jump_times > t_burn]
        counts[i] = np.bincount(late, minlength=len(labels))
    rates = counts / window
    rate_sem = rates.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.full(len(labels), np.nan)
    jump_rates = {lab: (float(rates[:, k].mean()), float(rate_sem[k])) for k, lab in enumerate(labels)}

    totals = counts.sum(axis=1)
    fractions = {}
    for k, lab in enumerate(labels):
        if totals.sum() == 0:
            fractions[lab] = (float("nan"), float("nan"))
            continue
        f = counts[:, k].sum() / totals.sum()
        if n_traj > 1:
            resid = counts[:, k] - f * totals
            se = math.sqrt(resid.var(ddof=1) / n_traj) / totals.mean()
        else:
            se = float("nan")
        fractions[lab] = (float(f), float(se))
    return JumpEnsemble(records, labels, t_burn, t_end, observables, jump_rates, fractions,
                        {"observables": obs, "counts": counts})
