"""Model specifications and occupation-number bases.

A system is a set of N modes with on-site energies, a Hermitian hopping
matrix, per-mode dephasing rates, and optional incoherent pump/loss rates.
The same specification feeds the quantum generators, the classical rate
reduction, and the transport oracles, so validation lives here and happens
exactly once.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np


class NumericGuardError(RuntimeError):
    """A hard numeric guard tripped (dimension cap, truncation leakage)."""


class ParticleStatistics(enum.Enum):
    """Exchange statistics of the particles occupying the modes.

    BOSON and FERMION carry the exchange sign s = +1 / -1 that enters
    stimulated-hopping factors (1 + s*m).  SINGLE is the distinguished
    one-particle sector: occupation vectors with total 1 and no exchange
    factor anywhere.
    """

    BOSON = "boson"
    FERMION = "fermion"
    SINGLE = "single"

    @property
    def s(self) -> int:
        if self is ParticleStatistics.BOSON:
            return 1
        if self is ParticleStatistics.FERMION:
            return -1
        raise ValueError("single-particle statistics carries no exchange factor")

    @property
    def stimulation_sign(self) -> int:
        # Sign entering (1 + s*m) rate factors; 0 encodes "no factor".
        return 0 if self is ParticleStatistics.SINGLE else self.s


@dataclass(frozen=True)
class Truncation:
    """Occupation-basis truncation policy for bosonic spaces.

    kind = "fixed_total": only the shell with exactly `total` particles.
    kind = "max_total":   all shells with 0 .. `total` particles.
    """

    kind: str
    total: int

    _KINDS = ("fixed_total", "max_total")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown truncation kind {self.kind!r}")
        if not isinstance(self.total, int) or isinstance(self.total, bool) or self.total < 0:
            raise ValueError("truncation total must be a non-negative integer")

    @classmethod
    def fixed_total(cls, total: int) -> "Truncation":
        return cls("fixed_total", total)

    @classmethod
    def max_total(cls, total: int) -> "Truncation":
        return cls("max_total", total)

    def to_json(self) -> dict:
        return {"kind": self.kind, "total": self.total}

    @classmethod
    def from_json(cls, obj: dict) -> "Truncation":
        if not isinstance(obj, dict) or set(obj) != {"kind", "total"}:
            raise ValueError("truncation must be an object with keys 'kind' and 'total'")
        return cls(obj["kind"], obj["total"])


# An occupation state is a tuple of non-negative ints, one per mode.
OccupationState = tuple

_SPEC_JSON_KEYS = (
    "n_modes", "omega", "v_re", "v_im", "gamma", "eta", "theta",
    "statistics", "truncation",
)


@dataclass
class SystemSpec:
    """Parameters of an N-mode open system.

    Parameters
    ----------
    n_modes : int
        Number of modes N >= 1.
    omega : array, shape (N,)
        On-site energies.
    v : complex array, shape (N, N)
        Hermitian coupling matrix with zero diagonal.
    gamma : array, shape (N,)
        Per-mode dephasing rates, >= 0.
    eta : array, shape (N,)
        Incoherent pump rates, >= 0.
    theta : array, shape (N,)
        Incoherent loss rates, >= 0.
    statistics : ParticleStatistics
    truncation : Truncation or None
        Required for bosons, must be None otherwise.
    """

    n_modes: int
    omega: np.ndarray
    v: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    statistics: ParticleStatistics
    truncation: Truncation | None = None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SystemSpec):
            return NotImplemented
        return (
            self.n_modes == other.n_modes
            and self.statistics is other.statistics
            and self.truncation == other.truncation
            and np.array_equal(self.omega, other.omega)
            and np.array_equal(self.v, other.v)
            and np.array_equal(self.gamma, other.gamma)
            and np.array_equal(self.eta, other.eta)
            and np.array_equal(self.theta, other.theta)
        )

    def to_json(self) -> dict:
        v = np.asarray(self.v, dtype=complex)
        return {
            "n_modes": self.n_modes,
            "omega": np.asarray(self.omega, dtype=float).tolist(),
            "v_re": v.real.tolist(),
            "v_im": v.imag.tolist(),
            "gamma": np.asarray(self.gamma, dtype=float).tolist(),
            "eta": np.asarray(self.eta, dtype=float).tolist(),
            "theta": np.asarray(self.theta, dtype=float).tolist(),
            "statistics": self.statistics.value,
            "truncation": None if self.truncation is None else self.truncation.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SystemSpec":
        if not isinstance(obj, dict):
            raise ValueError("system spec must be a JSON object")
        unknown = set(obj) - set(_SPEC_JSON_KEYS)
        if unknown:
            raise ValueError(f"unknown system spec keys: {sorted(unknown)}")
        missing = set(_SPEC_JSON_KEYS) - set(obj)
        if missing:
            raise ValueError(f"missing system spec keys: {sorted(missing)}")
        try:
            stats = ParticleStatistics(obj["statistics"])
        except ValueError:
            raise ValueError(f"unknown statistics {obj['statistics']!r}") from None
        trunc = obj["truncation"]
        return cls(
            n_modes=obj["n_modes"],
            omega=np.asarray(obj["omega"], dtype=float),
            v=np.asarray(obj["v_re"], dtype=float) + 1j * np.asarray(obj["v_im"], dtype=float),
            gamma=np.asarray(obj["gamma"], dtype=float),
            eta=np.asarray(obj["eta"], dtype=float),
            theta=np.asarray(obj["theta"], dtype=float),
            statistics=stats,
            truncation=None if trunc is None else Truncation.from_json(trunc),
        )


@dataclass(eq=False)
class ValidatedSpec(SystemSpec):
    """A SystemSpec that passed validation, with derived pair quantities.

    omega_diff[mu, nu] = omega[mu] - omega[nu]
    gamma_pair[mu, nu] = (gamma[mu] + gamma[nu]) / 2 off the diagonal, 0 on it.
    """

    omega_diff: np.ndarray = None
    gamma_pair: np.ndarray = None

    __eq__ = SystemSpec.__eq__


def validate_spec(spec: SystemSpec) -> ValidatedSpec:
    """Check a SystemSpec and return it with derived pair quantities attached.

    Raises ValueError on Hermiticity violation, diagonal coupling, negative
    or non-finite rates, or inconsistent shapes.  Validation is idempotent:
    validating a ValidatedSpec returns an equal object.
    """
    n = spec.n_modes
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError("n_modes must be an integer >= 1")

    omega = np.array(spec.omega, dtype=float)
    v = np.array(spec.v, dtype=complex)
    gamma = np.array(spec.gamma, dtype=float)
    eta = np.array(spec.eta, dtype=float)
    theta = np.array(spec.theta, dtype=float)

    for name, arr in (("omega", omega), ("gamma", gamma), ("eta", eta), ("theta", theta)):
        if arr.shape != (n,):
            raise ValueError(f"{name} must have shape ({n},), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name} contains non-finite entries")
    if v.shape != (n, n):
        raise ValueError(f"v must have shape ({n}, {n}), got {v.shape}")
    if not np.all(np.isfinite(v.real)) or not np.all(np.isfinite(v.imag)):
        raise ValueError("v contains non-finite entries")
    if not np.array_equal(v, v.conj().T):
        raise ValueError("v must be exactly Hermitian")
    if np.any(np.diag(v) != 0):
        raise ValueError("diagonal coupling is not allowed (v must have zero diagonal)")
    for name, arr in (("gamma", gamma), ("eta", eta), ("theta", theta)):
        if np.any(arr < 0):
            raise ValueError(f"negative rate in {name}")

    if spec.statistics is ParticleStatistics.BOSON:
        if spec.truncation is None:
            raise ValueError("bosonic specs require a truncation")
    else:
        if spec.truncation is not None:
            raise ValueError(f"{spec.statistics.value} specs take no truncation")

    omega_diff = omega[:, None] - omega[None, :]
    gamma_pair = (gamma[:, None] + gamma[None, :]) / 2.0
    np.fill_diagonal(gamma_pair, 0.0)
    for arr in (omega, v, gamma, eta, theta, omega_diff, gamma_pair):
        arr.flags.writeable = False

    return ValidatedSpec(
        n_modes=n, omega=omega, v=v, gamma=gamma, eta=eta, theta=theta,
        statistics=spec.statistics, truncation=spec.truncation,
        omega_diff=omega_diff, gamma_pair=gamma_pair,
    )


def _compositions(n_modes: int, total: int, cap: int) -> list:
    """All occupation tuples with the given total, entries <= cap, in
    ascending lexicographic order."""
    out = []

    def rec(prefix: list, modes_left: int, left: int) -> None:
        if modes_left == 1:
            if left <= cap:
                out.append(tuple(prefix) + (left,))
            return
        hi = min(left, cap)
        for first in range(hi + 1):
            if left - first <= cap * (modes_left - 1):
                rec(prefix + [first], modes_left - 1, left - first)

    rec([], n_modes, total)
    return out


@dataclass
class FockSpace:
    """An enumerated occupation-number basis.

    states[i] is the occupation vector of basis state i; rank/unrank are
    exact inverses.  Enumeration order is deterministic: shells of fixed
    total particle number ascending, lexicographic within each shell
    (single-particle bases are ordered by mode index).
    """

    n_modes: int
    statistics: ParticleStatistics
    truncation: Truncation | None
    states: np.ndarray
    _index: dict = dataclasses.field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def rank(self, state) -> int:
        key = tuple(int(x) for x in state)
        try:
            return self._index[key]
        except KeyError:
            raise ValueError(f"state {key} is not in this space") from None

    def unrank(self, i: int) -> OccupationState:
        if not 0 <= i < self.size:
            raise ValueError(f"rank {i} out of range [0, {self.size})")
        return tuple(int(x) for x in self.states[i])

    def __contains__(self, state) -> bool:
        return tuple(int(x) for x in state) in self._index

    def totals(self) -> np.ndarray:
        return self.states.sum(axis=1)


def enumerate_fock(
    n_modes: int,
    statistics: ParticleStatistics,
    truncation: Truncation | None = None,
) -> FockSpace:
    """Enumerate the occupation basis for the given statistics.

    Fermions enumerate all 2^N occupation vectors (truncation must be None);
    bosons require a truncation (fixed total or max total); the single
    variant enumerates the N one-particle states in mode order.
    """
    if not isinstance(n_modes, int) or isinstance(n_modes, bool) or n_modes < 1:
        raise ValueError("n_modes must be an integer >= 1")

    if statistics is ParticleStatistics.SINGLE:
        if truncation is not None:
            raise ValueError("single-particle enumeration takes no truncation")
        states = [tuple(1 if j == mu else 0 for j in range(n_modes)) for mu in range(n_modes)]
    elif statistics is ParticleStatistics.FERMION:
        if truncation is not None:
            raise ValueError("fermion enumeration is untruncated; truncation must be None")
        states = []
        for total in range(n_modes + 1):
            states.extend(_compositions(n_modes, total, cap=1))
    else:
        if truncation is None:
            raise ValueError("bosonic enumeration requires a truncation")
        if truncation.kind == "fixed_total":
            shells = [truncation.total]
        else:
            shells = range(truncation.total + 1)
        states = []
        for total in shells:
            states.extend(_compositions(n_modes, total, cap=total))

    arr = np.array(states, dtype=np.int64).reshape(len(states), n_modes)
    index = {s: i for i, s in enumerate(states)}
    return FockSpace(n_modes, statistics, truncation, arr, index)


def boson_shell_size(n_modes: int, total: int) -> int:
    """Number of occupation vectors of n_modes bosonic modes with the
    given total: C(n_modes + total - 1, total)."""
    return math.comb(n_modes + total - 1, total)
