"""Reduction of strongly dephased quantum dynamics to classical rates.

When |V_{mu nu}|^2 << gamma_{mu nu}^2 + Omega_{mu nu}^2, coherences follow
the populations adiabatically and the diagonal dynamics closes into a
classical master equation with pair rates

    W_{mu nu} = 2 gamma_{mu nu} |V_{mu nu}|^2 / (gamma_{mu nu}^2 + Omega_{mu nu}^2).

This module computes those rates and their limiting forms, estimates the
adiabatic coherences (one-step and self-consistent), and assembles the
classical generator in two equivalent views: an event-channel list for
kinetic Monte Carlo and a dense rate matrix on an enumerated basis.  Both
views derive from one channel definition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    FockSpace,
    ParticleStatistics,
    SystemSpec,
    ValidatedSpec,
    validate_spec,
)

VALIDITY_THRESHOLD = 0.1


@dataclass
class TransitionRateMatrix:
    """Symmetric non-negative pair rates with zero diagonal."""

    w: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError("W must be square")
        if not np.array_equal(w, w.T):
            raise ValueError("W must be symmetric")
        if np.any(w < 0) or np.any(np.diag(w) != 0):
            raise ValueError("W must be non-negative with zero diagonal")
        self.w = w

    @property
    def n_modes(self) -> int:
        return self.w.shape[0]

    def __getitem__(self, key):
        return self.w[key]

    def to_json(self) -> dict:
        return {"n_modes": self.n_modes, "w": self.w.tolist()}


def transition_rates(spec: SystemSpec) -> TransitionRateMatrix:
    """Classical pair rates W_{mu nu} from a validated spec.

    Raises ValueError where a coupling connects a degenerate undamped pair
    (gamma_{mu nu} = Omega_{mu nu} = 0 with V_{mu nu} != 0): the rate is
    undefined there.
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    denom = spec.gamma_pair**2 + spec.omega_diff**2
    coupled = spec.v != 0
    bad = coupled & (denom == 0)
    if np.any(bad):
        mu, nu = np.argwhere(bad)[0]
        raise ValueError(
            f"transition rate undefined for pair ({mu}, {nu}): "
            "coupled but gamma and Omega both vanish"
        )
    w = np.zeros_like(denom)
    np.divide(2.0 * spec.gamma_pair * np.abs(spec.v) ** 2, denom, out=w, where=coupled)
    w = (w + w.T) / 2.0  # exact symmetry against rounding asymmetries
    return TransitionRateMatrix(w)


def limit_rates(spec: SystemSpec, pair: tuple, broadening: float | None = None) -> dict:
    """Exact rate for one pair next to its two limiting forms.

    zeno: 2|V|^2/gamma_{mu nu} (resonant strong-dephasing limit).
    golden_rule_lorentzian: 2 pi |V|^2 times the Lorentzian density of
    states of width ``broadening`` (default gamma_{mu nu}) evaluated at
    Omega_{mu nu}; with the default width it coincides with the exact rate
    identically.
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    mu, nu = pair
    if mu == nu:
        raise ValueError("limit rates are defined for off-diagonal pairs")
    gam = spec.gamma_pair[mu, nu]
    omg = spec.omega_diff[mu, nu]
    v2 = abs(spec.v[mu, nu]) ** 2
    if gam == 0 and omg == 0 and v2 != 0:
        raise ValueError("exact rate undefined: gamma and Omega both vanish")
    exact = 2.0 * gam * v2 / (gam**2 + omg**2) if v2 != 0 else 0.0
    if gam == 0:
        raise ValueError("zeno limit undefined for an undamped pair")
    zeno = 2.0 * v2 / gam
    width = gam if broadening is None else float(broadening)
    if width <= 0:
        raise ValueError("broadening must be positive")
    dos = width / (np.pi * (width**2 + omg**2))
    golden = 2.0 * np.pi * v2 * dos

    def rel(x):
        if exact == 0.0:
            return 0.0 if x == 0.0 else np.inf
        return abs(x - exact) / exact

    return {
        "exact": exact,
        "zeno": zeno,
        "golden_rule_lorentzian": golden,
        "zeno_rel_error": rel(zeno),
        "golden_rel_error": rel(golden),
    }


@dataclass
class ValidityReport:
    """Where the adiabatic reduction is trustworthy.

    ratios[mu, nu] = |V_{mu nu}|^2 / (gamma_{mu nu}^2 + Omega_{mu nu}^2) for
    coupled pairs (0 elsewhere); the reduction holds when all ratios stay
    below the threshold.  omega_dominated marks pairs that pass only thanks
    to a large detuning (they would fail on dephasing alone).
    """

    ratios: np.ndarray
    threshold: float
    passed: bool
    max_ratio: float
    omega_dominated: np.ndarray

    def to_json(self) -> dict:
        return {
            "ratios": self.ratios.tolist(),
            "threshold": self.threshold,
            "passed": bool(self.passed),
            "max_ratio": self.max_ratio,
            "omega_dominated": self.omega_dominated.tolist(),
        }


def check_validity(spec: SystemSpec, threshold: float = VALIDITY_THRESHOLD) -> ValidityReport:
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    n = spec.n_modes
    v2 = np.abs(spec.v) ** 2
    denom = spec.gamma_pair**2 + spec.omega_diff**2
    coupled = spec.v != 0
    ratios = np.zeros((n, n))
    with np.errstate(divide="ignore"):
        np.divide(v2, denom, out=ratios, where=coupled)
    ratios[coupled & (denom == 0)] = np.inf
    gamma_only = np.zeros((n, n))
    with np.errstate(divide="ignore"):
        np.divide(v2, spec.gamma_pair**2, out=gamma_only, where=coupled)
    gamma_only[coupled & (spec.gamma_pair == 0)] = np.inf
    omega_dominated = coupled & (ratios <= threshold) & (gamma_only > threshold)
    max_ratio = float(ratios.max(initial=0.0))
    return ValidityReport(
        ratios=ratios,
        threshold=threshold,
        passed=bool(max_ratio <= threshold),
        max_ratio=max_ratio,
        omega_dominated=omega_dominated,
    )


def adiabatic_coherences(spec: SystemSpec, populations, space: FockSpace | None = None) -> dict:
    """One-step adiabatic estimate of the coherences given populations.

    Single-particle specs: map (mu, nu) -> -i V_{mu nu} (P_nu - P_mu) /
    (gamma_{mu nu} + i Omega_{mu nu}) over coupled mode pairs.

    Many-body specs (space required): map (i, j) of basis ranks, nonzero
    only for pairs connected by a single hop, with the stimulated amplitude
    sqrt(m_mu (m_nu + 1)) for bosons and m_mu (1 - m_nu) for fermions.
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    p = np.asarray(populations, dtype=float)
    out: dict = {}
    if spec.statistics is ParticleStatistics.SINGLE:
        if p.shape != (spec.n_modes,):
            raise ValueError("populations must have one entry per mode")
        for mu in range(spec.n_modes):
            for nu in range(spec.n_modes):
                if mu == nu or spec.v[mu, nu] == 0:
                    continue
                denom = spec.gamma_pair[mu, nu] + 1j * spec.omega_diff[mu, nu]
                out[(mu, nu)] = -1j * spec.v[mu, nu] * (p[nu] - p[mu]) / denom
        return out

    if space is None:
        raise ValueError("many-body coherence estimates require a FockSpace")
    if p.shape != (space.size,):
        raise ValueError("populations must have one entry per basis state")
    boson = spec.statistics is ParticleStatistics.BOSON
    for i in range(space.size):
        m = space.unrank(i)
        for mu in range(spec.n_modes):
            for nu in range(spec.n_modes):
                if mu == nu or spec.v[mu, nu] == 0:
                    continue
                amp = np.sqrt(m[mu] * (m[nu] + 1)) if boson else m[mu] * (1 - m[nu])
                if amp == 0:
                    continue
                t = list(m)
                t[mu] -= 1
                t[nu] += 1
                t = tuple(t)
                if t not in space:
                    continue
                j = space.rank(t)
                denom = spec.gamma_pair[mu, nu] + 1j * spec.omega_diff[mu, nu]
                out[(i, j)] = -1j * spec.v[mu, nu] * amp * (p[j] - p[i]) / denom
    return out


def solve_coherences_fixed_point(
    spec: SystemSpec,
    populations,
    max_iter: int = 200,
    tol: float = 1e-12,
) -> dict:
    """Self-consistent single-particle coherences at fixed populations.

    Iterates

        rho_{mu nu} <- -i sum_l [ V_{mu l} rho_{l nu} / (gamma_{mu nu} + i Omega_{mu l})
                                  - rho_{mu l} V_{l nu} / (gamma_{mu nu} + i Omega_{l nu}) ]

    from zero off-diagonals with the diagonal pinned to the populations;
    the first sweep reproduces the one-step adiabatic estimate.  Raises
    RuntimeError with the residual when the iteration fails to converge
    (couplings too large for the damping).
    """
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    if spec.statistics is not ParticleStatistics.SINGLE:
        raise ValueError("the fixed-point solve is defined on the single-particle basis")
    n = spec.n_modes
    p = np.asarray(populations, dtype=float)
    if p.shape != (n,):
        raise ValueError("populations must have one entry per mode")

    rho = np.diag(p).astype(complex)
    residual = np.inf
    for _ in range(max_iter):
        new = np.diag(p).astype(complex)
        for mu in range(n):
            for nu in range(n):
                if mu == nu:
                    continue
                acc = 0.0 + 0.0j
                gam = spec.gamma_pair[mu, nu]
                for lam in range(n):
                    if spec.v[mu, lam] != 0:
                        acc += spec.v[mu, lam] * rho[lam, nu] / (gam + 1j * spec.omega_diff[mu, lam])
                    if spec.v[lam, nu] != 0:
                        acc -= rho[mu, lam] * spec.v[lam, nu] / (gam + 1j * spec.omega_diff[lam, nu])
                new[mu, nu] = -1j * acc
        residual = float(np.max(np.abs(new - rho)))
        rho = new
        if residual <= tol:
            return {(mu, nu): rho[mu, nu] for mu in range(n) for nu in range(n) if mu != nu}
        if not np.isfinite(residual) or residual > 1e6:
            break
    raise RuntimeError(
        f"coherence fixed point did not converge (residual {residual:.3e}); "
        "couplings are too large for the damping"
    )


@dataclass
class Channel:
    """One classical event type: where probability flows and at what rate.

    hop(mu, nu): move a particle nu -> mu, rate W_{mu nu} (1 + s m_mu) m_nu.
    pump(nu):    add a particle at nu, rate eta_nu (1 + s m_nu).
    loss(nu):    remove a particle at nu, rate theta_nu m_nu.
    The exchange sign s is +1 for bosons, -1 for fermions and absent
    (factor 1) for the single-particle variant.
    """

    kind: str
    site_to: int | None
    site_from: int | None
    base: float

    @property
    def delta(self) -> tuple:
        if self.kind == "hop":
            return ((self.site_to, +1), (self.site_from, -1))
        if self.kind == "pump":
            return ((self.site_to, +1),)
        return ((self.site_from, -1),)

    @property
    def touched_sites(self) -> tuple:
        return tuple(site for site, _ in self.delta)

    def rate(self, state, s: int) -> float:
        if self.kind == "hop":
            return self.base * (1 + s * state[self.site_to]) * state[self.site_from]
        if self.kind == "pump":
            return self.base * (1 + s * state[self.site_to])
        return self.base * state[self.site_from]


@dataclass
class ClassicalGenerator:
    """Classical master-equation generator over occupation states.

    Carries the channel list (for kinetic Monte Carlo on unbounded
    lattices) and assembles the dense rate matrix on demand for an
    enumerated basis.  Gains whose target leaves a truncated basis are
    dropped while their outflow is kept, mirroring the quantum convention.
    """

    n_modes: int
    statistics: ParticleStatistics
    w: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    channels: list = field(default_factory=list)

    @property
    def s(self) -> int:
        return self.statistics.stimulation_sign

    @classmethod
    def from_rates(cls, w, eta, theta, statistics: ParticleStatistics) -> "ClassicalGenerator":
        w = np.asarray(w, dtype=float)
        eta = np.asarray(eta, dtype=float)
        theta = np.asarray(theta, dtype=float)
        n = w.shape[0]
        if w.shape != (n, n) or eta.shape != (n,) or theta.shape != (n,):
            raise ValueError("inconsistent rate shapes")
        if not np.array_equal(w, w.T) or np.any(w < 0) or np.any(np.diag(w) != 0):
            raise ValueError("W must be symmetric, non-negative, zero-diagonal")
        if np.any(eta < 0) or np.any(theta < 0):
            raise ValueError("negative rate")
        if statistics is ParticleStatistics.SINGLE and (np.any(eta != 0) or np.any(theta != 0)):
            raise ValueError("the single-particle sector has no pump/loss")
        channels = []
        for mu in range(n):
            for nu in range(n):
                if mu != nu and w[mu, nu] > 0:
                    channels.append(Channel("hop", mu, nu, float(w[mu, nu])))
        for nu in range(n):
            if eta[nu] > 0:
                channels.append(Channel("pump", nu, None, float(eta[nu])))
        for nu in range(n):
            if theta[nu] > 0:
                channels.append(Channel("loss", None, nu, float(theta[nu])))
        return cls(n, statistics, w, eta, theta, channels)

    def channel_rates(self, state) -> np.ndarray:
        s = self.s
        return np.array([ch.rate(state, s) for ch in self.channels])

    def total_exit_rate(self, state) -> float:
        return float(np.sum(self.channel_rates(state)))

    def apply_channel(self, state, channel_index: int) -> tuple:
        out = list(state)
        for site, change in self.channels[channel_index].delta:
            out[site] += change
        return tuple(out)

    def rate_matrix(self, space: FockSpace) -> np.ndarray:
        """Dense generator Q on the enumerated basis: Q[i, j] is the rate
        j -> i, diagonal entries minus the full exit rate."""
        if space.n_modes != self.n_modes or space.statistics is not self.statistics:
            raise ValueError("space does not match the generator")
        q = np.zeros((space.size, space.size))
        s = self.s
        for j in range(space.size):
            state = space.unrank(j)
            for ci, ch in enumerate(self.channels):
                r = ch.rate(state, s)
                if r == 0.0:
                    continue
                q[j, j] -= r
                target = self.apply_channel(state, ci)
                if target in space:
                    q[space.rank(target), j] += r
        return q


def build_classical_generator(spec: SystemSpec) -> ClassicalGenerator:
    """Classical generator of a spec: pair rates from transition_rates plus
    the spec's pump/loss channels, with the spec's exchange statistics."""
    if not isinstance(spec, ValidatedSpec):
        spec = validate_spec(spec)
    w = transition_rates(spec).w
    return ClassicalGenerator.from_rates(w, spec.eta, spec.theta, spec.statistics)


def export_rate_matrix_csv(q: np.ndarray, path, header_comment: str | None = None) -> None:
    """Write the nonzero entries of a rate matrix as (row, col, rate) triplets."""
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("row,col,rate\n")
        rows, cols = np.nonzero(q)
        for r, c in zip(rows, cols):
            fh.write(f"{r},{c},{float(q[r, c])!r}\n")
