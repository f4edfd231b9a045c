"""Dense Lindblad generators for strongly dephased lattice systems.

Two flavors: a single-particle master equation on the N-mode basis
(energies + hopping + per-mode dephasing projectors), and number-resolved
many-body master equations on an enumerated occupation basis with per-mode
number dephasing and optional incoherent pump/loss.  Both are assembled
element by element on the vectorized density matrix (row-major), so every
matrix element can be audited against the defining equations.

Truncated bosonic spaces keep the full anticommutator outflow and drop
gain terms whose source lies outside the basis; the trace then decays by
exactly the neglected outflow, and ``1 - tr(rho)`` is the leakage
diagnostic monitored during integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .core import (
    FockSpace,
    NumericGuardError,
    ParticleStatistics,
    SystemSpec,
    ValidatedSpec,
    validate_spec,
)

# Superoperators are dense (dim^2 x dim^2); cap the basis size hard.
DIM_GUARD = 64
POSITIVITY_FLOOR = -1e-10
LEAKAGE_ABORT = 1e-3


@dataclass
class DensityMatrix:
    """A density matrix on an explicit basis (modes or occupation states)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=complex)
        if data.ndim != 2 or data.shape[0] != data.shape[1]:
            raise ValueError("density matrix must be square")
        self.data = data

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.data).real)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def diagonals(self) -> np.ndarray:
        return extract_diagonals(self)

    @classmethod
    def from_diagonal(cls, p) -> "DensityMatrix":
        return cls(np.diag(np.asarray(p, dtype=complex)))

    @classmethod
    def pure(cls, index: int, dim: int) -> "DensityMatrix":
        data = np.zeros((dim, dim), dtype=complex)
        data[index, index] = 1.0
        return cls(data)


@dataclass
class Superoperator:
    """A dense generator acting on row-major vectorized density matrices."""

    matrix: np.ndarray
    dim: int
    space: FockSpace | None = None
    trace_defect: float = field(default=0.0)

    @property
    def trace_preserving(self) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.matrix))))
        return self.trace_defect <= 1e-12 * scale

    def apply(self, rho: DensityMatrix) -> np.ndarray:
        return (self.matrix @ rho.data.reshape(-1)).reshape(self.dim, self.dim)


def _trace_defect(matrix: np.ndarray, dim: int) -> float:
    # Row vector that reads off the trace from the vectorized matrix.
    tr_row = np.zeros(dim * dim)
    tr_row[:: dim + 1] = 1.0
    return float(np.max(np.abs(tr_row @ matrix)))


def build_single_particle_generator(spec: SystemSpec) -> Superoperator:
    """Generator of the one-particle master equation on the mode basis:

        d rho_{mu nu}/dt = -i sum_l (V_{mu l} rho_{l nu} - rho_{mu l} V_{l nu})
                           - (i Omega_{mu nu} + gamma_{mu nu}) rho_{mu nu}

    with Omega_{mu nu} = omega_mu - omega_nu and pair dephasing
    gamma_{mu nu} = (gamma_mu + gamma_nu)/2 off the diagonal.
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    if np.any(spec.eta != 0) or np.any(spec.theta != 0):
        raise ValueError("the single-particle master equation has no pump/loss")
    n = spec.n_modes
    if n > DIM_GUARD:
        raise NumericGuardError(f"basis dimension {n} exceeds the cap {DIM_GUARD}")

    mat = np.zeros((n * n, n * n), dtype=complex)
    idx = lambda mu, nu: mu * n + nu
    for mu in range(n):
        for nu in range(n):
            row = idx(mu, nu)
            mat[row, row] += -1j * spec.omega_diff[mu, nu] - spec.gamma_pair[mu, nu]
            for lam in range(n):
                mat[row, idx(lam, nu)] += -1j * spec.v[mu, lam]
                mat[row, idx(mu, lam)] += 1j * spec.v[lam, nu]
    return Superoperator(mat, n, None, _trace_defect(mat, n))


def build_many_body_generator(spec: SystemSpec, space: FockSpace) -> Superoperator:
    """Number-resolved Lindblad generator on an enumerated occupation basis.

    Bosons (matrix element between occupation vectors m, n):

        d rho_{mn}/dt =
          -i sum_mu Omega_mu (m_mu - n_mu) rho_{mn}
          -i sum_{mu != nu} V_{mu nu} [ sqrt((m_nu+1) m_mu) rho_{m-e_mu+e_nu, n}
                                        - sqrt((n_mu+1) n_nu) rho_{m, n+e_mu-e_nu} ]
          - 1/2 sum_l gamma_l (m_l - n_l)^2 rho_{mn}
          + sum_nu theta_nu [ sqrt((m_nu+1)(n_nu+1)) rho_{m+e_nu, n+e_nu}
                              - (m_nu + n_nu)/2 rho_{mn} ]
          + sum_nu eta_nu [ sqrt(m_nu n_nu) rho_{m-e_nu, n-e_nu}
                            - (2 + m_nu + n_nu)/2 rho_{mn} ]

    Fermions use the corresponding Pauli-blocked amplitudes
    m_mu (1 - m_nu), (1 - n_mu) n_nu, (1 - m_nu)(1 - n_nu), m_nu n_nu and
    pump weight (2 - m_nu - n_nu)/2, with no sign strings.
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    if spec.statistics is ParticleStatistics.SINGLE:
        raise ValueError("use build_single_particle_generator for the single-particle sector")
    if space.statistics is not spec.statistics or space.n_modes != spec.n_modes:
        raise ValueError("space does not match the spec")
    dim = space.size
    if dim > DIM_GUARD:
        raise NumericGuardError(f"basis dimension {dim} exceeds the cap {DIM_GUARD}")

    boson = spec.statistics is ParticleStatistics.BOSON
    nmod = spec.n_modes
    states = [space.unrank(i) for i in range(dim)]
    mat = np.zeros((dim * dim, dim * dim), dtype=complex)

    def shifted(state, up, down):
        # state + e_up - e_down, or None if it leaves the basis
        lst = list(state)
        if up >= 0:
            lst[up] += 1
        if down >= 0:
            lst[down] -= 1
            if lst[down] < 0:
                return None
        t = tuple(lst)
        return t if t in space else None

    pairs = [(mu, nu) for mu in range(nmod) for nu in range(nmod)
             if mu != nu and spec.v[mu, nu] != 0]

    for i, m in enumerate(states):
        for j, n in enumerate(states):
            row = i * dim + j
            diag = -1j * np.dot(spec.omega, np.subtract(m, n))
            diag -= 0.5 * np.dot(spec.gamma, np.square(np.subtract(m, n)))
            diag -= 0.5 * np.dot(spec.theta, np.add(m, n))
            if boson:
                diag -= 0.5 * np.dot(spec.eta, 2 + np.add(m, n))
            else:
                diag -= 0.5 * np.dot(spec.eta, 2 - np.add(m, n))
            mat[row, row] += diag

            for mu, nu in pairs:
                if boson:
                    amp = np.sqrt((m[nu] + 1) * m[mu])
                else:
                    amp = m[mu] * (1 - m[nu])
                if amp != 0:
                    src = shifted(m, nu, mu)
                    if src is not None:
                        mat[row, space.rank(src) * dim + j] += -1j * spec.v[mu, nu] * amp
                if boson:
                    amp = np.sqrt((n[mu] + 1) * n[nu])
                else:
                    amp = (1 - n[mu]) * n[nu]
                if amp != 0:
                    src = shifted(n, mu, nu)
                    if src is not None:
                        mat[row, i * dim + space.rank(src)] += 1j * spec.v[mu, nu] * amp

            for nu in range(nmod):
                if spec.theta[nu] != 0:
                    if boson:
                        amp = np.sqrt((m[nu] + 1) * (n[nu] + 1))
                    else:
                        amp = (1 - m[nu]) * (1 - n[nu])
                    if amp != 0:
                        sm, sn = shifted(m, nu, -1), shifted(n, nu, -1)
                        if sm is not None and sn is not None:
                            mat[row, space.rank(sm) * dim + space.rank(sn)] += spec.theta[nu] * amp
                if spec.eta[nu] != 0:
                    amp = np.sqrt(m[nu] * n[nu]) if boson else m[nu] * n[nu]
                    if amp != 0:
                        sm, sn = shifted(m, -1, nu), shifted(n, -1, nu)
                        if sm is not None and sn is not None:
                            mat[row, space.rank(sm) * dim + space.rank(sn)] += spec.eta[nu] * amp

    return Superoperator(mat, dim, space, _trace_defect(mat, dim))


def evolve_density(
    gen: Superoperator,
    rho0: DensityMatrix,
    t_grid,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    leakage_abort: float = LEAKAGE_ABORT,
) -> list:
    """Integrate d(rho)/dt = L[rho] and return [(t, DensityMatrix), ...].

    Adaptive explicit Runge-Kutta on the vectorized density matrix; each
    output is re-symmetrized.  Raises NumericGuardError on NaN, on gross
    hermiticity loss, or when the truncation-leakage estimate 1 - tr(rho)
    of a non-trace-preserving generator exceeds ``leakage_abort``.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 1 or np.any(np.diff(t_grid) < 0):
        raise ValueError("t_grid must be a non-decreasing 1-d array")
    if rho0.dim != gen.dim:
        raise ValueError("initial state dimension does not match the generator")

    mat = gen.matrix
    sol = solve_ivp(
        lambda t, y: mat @ y,
        (t_grid[0], t_grid[-1]),
        rho0.data.reshape(-1),
        t_eval=t_grid,
        method="RK45",
        rtol=rtol,
        atol=atol,
    )
    if not sol.success:
        raise NumericGuardError(f"integration failed: {sol.message}")
    if not np.all(np.isfinite(sol.y.real)) or not np.all(np.isfinite(sol.y.imag)):
        raise NumericGuardError("integration produced non-finite values")

    check_leak = not gen.trace_preserving
    out = []
    for k, t in enumerate(sol.t):
        rho = sol.y[:, k].reshape(gen.dim, gen.dim)
        defect = float(np.max(np.abs(rho - rho.conj().T)))
        if defect > 1e-6:
            raise NumericGuardError(f"hermiticity lost during integration (defect {defect:.2e})")
        rho = (rho + rho.conj().T) / 2.0
        if check_leak:
            leak = 1.0 - float(np.trace(rho).real)
            if leak > leakage_abort:
                raise NumericGuardError(
                    f"truncation leakage {leak:.2e} exceeds {leakage_abort:.0e} at t={t:g}"
                )
        out.append((float(t), DensityMatrix(rho)))
    return out


def diagonal_block(gen: Superoperator) -> np.ndarray:
    """Restriction of the generator to the populations: the real matrix G
    with d p_i/dt = sum_j G[i, j] p_j for diagonal density matrices."""
    idx = np.arange(gen.dim) * gen.dim + np.arange(gen.dim)
    block = gen.matrix[np.ix_(idx, idx)]
    if np.max(np.abs(block.imag), initial=0.0) > 1e-12:
        raise ValueError("diagonal block has non-negligible imaginary parts")
    return block.real.copy()


def max_population_coherence_coupling(gen: Superoperator) -> float:
    """Largest coefficient coupling any population row to any coherence
    column; exactly zero when the diagonal block decouples."""
    idx = np.arange(gen.dim) * gen.dim + np.arange(gen.dim)
    rows = gen.matrix[idx, :]
    mask = np.ones(gen.dim * gen.dim, dtype=bool)
    mask[idx] = False
    return float(np.max(np.abs(rows[:, mask]), initial=0.0))


def extract_diagonals(rho: DensityMatrix | np.ndarray, floor: float = POSITIVITY_FLOOR) -> np.ndarray:
    """Real diagonal of a density matrix; entries in [floor, 0) are clipped
    to zero, entries below the floor raise."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    diag = np.diag(data)
    if np.max(np.abs(diag.imag), initial=0.0) > 1e-12:
        raise ValueError("diagonal entries have non-negligible imaginary parts")
    real = diag.real.copy()
    if np.any(real < floor):
        raise ValueError(f"diagonal entry {real.min():.3e} below positivity floor {floor:.0e}")
    real[real < 0] = 0.0
    return real


def diagonals_trajectory(traj: list) -> tuple:
    """Stack a [(t, DensityMatrix)] trajectory into (t, P, leakage) arrays,
    with leakage(t) = 1 - tr rho(t)."""
    times = np.array([t for t, _ in traj])
    probs = np.vstack([extract_diagonals(r) for _, r in traj])
    leak = np.array([1.0 - r.trace() for _, r in traj])
    return times, probs, leak


def export_diagonals_csv(traj: list, path, header_comment: str | None = None) -> None:
    """Write a trajectory as CSV with columns t, p_<rank>..., leakage."""
    times, probs, leak = diagonals_trajectory(traj)
    dim = probs.shape[1]
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t," + ",".join(f"p_{k}" for k in range(dim)) + ",leakage\n")
        for k in range(times.size):
            row = [repr(float(times[k]))]
            row += [repr(float(x)) for x in probs[k]]
            row.append(repr(float(leak[k])))
            fh.write(",".join(row) + "\n")
