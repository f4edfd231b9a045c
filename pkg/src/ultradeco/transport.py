"""The 1D diffusion chain and its analytic solutions.

Sites run 0..L with uniform nearest-neighbor hop rate Gamma, injection
eta at site 0 and absorption theta at site L.  The stationary profile is
linear between the boundary occupations, the current follows from the
boundary balance, and bosonic chains lose stationarity at a finite
injection threshold.  First-arrival laws for the low-gain regime come in
two forms: a spectral generator oracle and the literal closed-form
series, which disagree at small L, so both are kept and compared rather
than silently reconciled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp

from .core import ParticleStatistics
from .reduction import ClassicalGenerator

_STATS_NAMES = {
    ParticleStatistics.BOSON: "boson",
    ParticleStatistics.FERMION: "fermion",
    ParticleStatistics.SINGLE: "single",
}


@dataclass(frozen=True)
class ChainModel:
    """Chain of sites 0..last_site: hop rate gamma between neighbors,
    pump eta at site 0, loss theta at site last_site."""

    last_site: int
    gamma: float
    eta: float
    theta: float
    statistics: ParticleStatistics

    def __post_init__(self) -> None:
        if not isinstance(self.last_site, (int, np.integer)) or self.last_site < 1:
            raise ValueError("last_site must be an integer >= 1")
        if not self.gamma > 0:
            raise ValueError("the hop rate must be positive")
        if self.eta < 0 or self.theta < 0:
            raise ValueError("negative rate")
        if self.statistics is ParticleStatistics.SINGLE and (self.eta > 0 or self.theta > 0):
            raise ValueError("a single-particle chain cannot pump or lose particles")

    @property
    def n_sites(self) -> int:
        return self.last_site + 1

    @property
    def s(self) -> int:
        return self.statistics.stimulation_sign

    def to_json(self) -> dict:
        return {
            "last_site": int(self.last_site),
            "gamma": float(self.gamma),
            "eta": float(self.eta),
            "theta": float(self.theta),
            "statistics": _STATS_NAMES[self.statistics],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChainModel":
        required = {"last_site", "gamma", "eta", "theta", "statistics"}
        if set(doc) != required:
            missing = required - set(doc)
            unknown = set(doc) - required
            raise ValueError(f"chain document keys: missing {sorted(missing)}, "
                             f"unknown {sorted(unknown)}")
        names = {v: k for k, v in _STATS_NAMES.items()}
        if doc["statistics"] not in names:
            raise ValueError(f"unknown statistics {doc['statistics']!r}")
        return cls(
            last_site=int(doc["last_site"]),
            gamma=float(doc["gamma"]),
            eta=float(doc["eta"]),
            theta=float(doc["theta"]),
            statistics=names[doc["statistics"]],
        )


def make_chain(chain: ChainModel) -> ClassicalGenerator:
    """Channel model of the chain: nearest-neighbor hops both ways, pump
    at site 0, loss at the last site."""
    n = chain.n_sites
    w = np.zeros((n, n))
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = chain.gamma
    eta = np.zeros(n)
    theta = np.zeros(n)
    eta[0] = chain.eta
    theta[n - 1] = chain.theta
    return ClassicalGenerator.from_rates(w, eta, theta, chain.statistics)


# ---------------------------------------------------------------------------
# stationary solution
# ---------------------------------------------------------------------------

def _require_pumped(chain: ChainModel) -> None:
    if chain.statistics is ParticleStatistics.SINGLE:
        raise ValueError("stationary transport needs bosonic or fermionic statistics")


def stationary_profile(chain: ChainModel) -> np.ndarray:
    """Mean occupations of the stationary state, linear in the site index.

    The boundary balance fixes the endpoints: theta*m_last equals the
    injected flux eta*(1 + s*m_0), and the bulk current Gamma per unit
    occupation drop makes the interior linear.  Bosons at or above the
    condensation threshold have no stationary state.
    """
    _require_pumped(chain)
    n = chain.n_sites
    if chain.eta == 0.0:
        return np.zeros(n)
    length, s = chain.last_site, chain.s
    denom = chain.theta - s * chain.eta * (1.0 + length * chain.theta / chain.gamma)
    if denom <= 0.0:
        raise ValueError(
            "no stationary state: injection exceeds the loss-plus-transport capacity")
    m_last = chain.eta / denom
    m_first = m_last * (1.0 + length * chain.theta / chain.gamma)
    profile = m_first + (m_last - m_first) * np.arange(n) / length
    if chain.statistics is ParticleStatistics.FERMION and profile.max() > 1.0 + 1e-12:
        raise RuntimeError("fermion profile left [0, 1]")
    return profile


def stationary_current(chain: ChainModel, eta_infinite: bool = False) -> float:
    """Stationary absorbed flux J = 1 / (1/eta - s/theta - s*L/gamma).

    With eta_infinite the fermionic saturation value theta*gamma /
    (L*theta + gamma) is returned; bosonic chains diverge in that limit.
    """
    _require_pumped(chain)
    length, s = chain.last_site, chain.s
    if eta_infinite:
        if chain.statistics is ParticleStatistics.BOSON:
            raise ValueError("the bosonic current diverges as the pump grows")
        return chain.theta * chain.gamma / (length * chain.theta + chain.gamma)
    if chain.eta == 0.0:
        return 0.0
    if chain.theta == 0.0:
        if chain.statistics is ParticleStatistics.BOSON:
            raise ValueError("no stationary current without absorption")
        return 0.0
    denom = 1.0 / chain.eta - s / chain.theta - s * length / chain.gamma
    if denom <= 0.0:
        raise ValueError(
            "no stationary current: injection at or above the condensation threshold")
    return 1.0 / denom


def condensation_threshold(chain: ChainModel) -> float:
    """Critical pump rate 1 / (1/theta + L/gamma) above which the bosonic
    chain accumulates particles without bound."""
    if chain.statistics is not ParticleStatistics.BOSON:
        raise ValueError("only bosonic chains condense; the fermionic current "
                         "saturates instead")
    if chain.theta == 0.0:
        return 0.0
    return 1.0 / (1.0 / chain.theta + chain.last_site / chain.gamma)


# ---------------------------------------------------------------------------
# mean-field evolution
# ---------------------------------------------------------------------------

def mean_field_evolve(
    gen: ClassicalGenerator,
    initial,
    t_grid,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> np.ndarray:
    """Integrate the mean occupations:
    dm_mu/dt = sum_nu W_munu (m_nu - m_mu) + (1 + s m_mu) eta_mu - m_mu theta_mu.

    The hop part is exact for the underlying jump process (stimulation
    factors cancel in expectation); pump/loss terms are the factorized
    one-site closure.  Returns an array (len(t_grid), n_modes).
    """
    initial = np.asarray(initial, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    n = gen.n_modes
    if initial.shape != (n,) or np.any(initial < 0):
        raise ValueError("initial occupations must be a non-negative vector")
    fermion = gen.statistics is ParticleStatistics.FERMION
    if fermion and initial.max() > 1.0:
        raise ValueError("fermion occupations exceed 1")
    w = gen.w
    row_sum = w.sum(axis=1)
    s, eta, theta = gen.s, gen.eta, gen.theta

    def rhs(t, m):
        return w @ m - row_sum * m + (1.0 + s * m) * eta - theta * m

    sol = solve_ivp(rhs, (t_grid[0], t_grid[-1]), initial, t_eval=t_grid,
                    method="RK45", rtol=rtol, atol=atol)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise RuntimeError(f"mean-field integration failed: {sol.message}")
    out = sol.y.T.copy()
    if fermion and (out.min() < -1e-6 or out.max() > 1.0 + 1e-6):
        raise RuntimeError("fermion occupations left [0, 1]: integration defect")
    if out.min() < -1e-6:
        raise RuntimeError("occupations went negative: integration defect")
    return np.clip(out, 0.0, 1.0 if fermion else None)


def uniform_all_to_all(
    n_sites: int,
    gamma: float,
    eta: float,
    theta: float,
    statistics: ParticleStatistics,
) -> ClassicalGenerator:
    """Fully connected model: W = gamma between every pair, uniform pump
    and loss on every site (the growth-phase setting)."""
    if n_sites < 2:
        raise ValueError("need at least two sites")
    w = np.full((n_sites, n_sites), float(gamma))
    np.fill_diagonal(w, 0.0)
    return ClassicalGenerator.from_rates(
        w, np.full(n_sites, float(eta)), np.full(n_sites, float(theta)), statistics)


# ---------------------------------------------------------------------------
# first-arrival laws of a single walker
# ---------------------------------------------------------------------------

def _transient_spectrum(n_transient: int, gamma: float):
    """Eigen-decomposition of the transient generator on sites
    0..n_transient-1: reflecting at 0, absorbing past the right edge."""
    a = np.zeros((n_transient, n_transient))
    for i in range(n_transient - 1):
        a[i, i + 1] = a[i + 1, i] = gamma
    np.fill_diagonal(a, -2.0 * gamma)
    a[0, 0] += gamma  # no left exit from site 0
    evals, evecs = np.linalg.eigh(a)
    return evals, evecs


def _survival_weights(start: int, n_transient: int, gamma: float):
    """S_start(t) = sum_j c_j exp(evals_j t); returns (c, -evals)."""
    evals, evecs = _transient_spectrum(n_transient, gamma)
    # symmetric generator: survival = sum over sites of exp(At)[., start]
    c = evecs[start, :] * evecs.sum(axis=0)
    return c, -evals


def survival_function_oracle(start: int, t, n_transient: int, gamma: float):
    """Probability that a walker starting at `start` has not yet left the
    transient block 0..n_transient-1 by time t (spectral solution)."""
    if not 0 <= start < n_transient:
        raise ValueError("start site outside the transient block")
    if gamma <= 0:
        raise ValueError("the hop rate must be positive")
    c, lam = _survival_weights(start, n_transient, gamma)
    t = np.asarray(t, dtype=float)
    out = np.exp(-np.multiply.outer(t, lam)) @ c
    return out if out.ndim else float(out)


def survival_function_closed_form(start: int, t, n_transient: int, gamma: float):
    """The printed series for the survival probability, evaluated
    literally:

        S_n(t) = (1/L) sum_{k=0}^{L-1} (-1)^k cos[q_k (n + 1/2)] /
                 sin(q_k / 2) * exp(-lambda_k t),
        q_k = (k + 1/2) pi / L,   lambda_k = 2 gamma (1 - cos q_k).

    No correction is applied: at small L this disagrees with the
    generator solution (L=1 gives exp(-2 gamma t) against the oracle's
    exp(-gamma t)); use survival_comparison_report to quantify.
    """
    if not 0 <= start < n_transient:
        raise ValueError("start site outside the transient block")
    length = n_transient
    k = np.arange(length)
    q = (k + 0.5) * np.pi / length
    lam = 2.0 * gamma * (1.0 - np.cos(q))
    coeff = (-1.0) ** k * np.cos(q * (start + 0.5)) / np.sin(q / 2.0) / length
    t = np.asarray(t, dtype=float)
    out = np.exp(-np.multiply.outer(t, lam)) @ coeff
    return out if out.ndim else float(out)


def survival_comparison_report(
    n_transient: int,
    gamma: float,
    t_max: float = 100.0,
    n_points: int = 2001,
) -> dict:
    """Quantified disagreement between the closed-form series and the
    generator oracle: per-site deviation of the series from 1 at t=0 and
    the maximum absolute deviation over a time grid."""
    t = np.linspace(0.0, t_max, n_points)
    at_zero = []
    per_site_max = []
    for start in range(n_transient):
        closed = survival_function_closed_form(start, t, n_transient, gamma)
        exact = survival_function_oracle(start, t, n_transient, gamma)
        at_zero.append(float(abs(closed[0] - 1.0)))
        per_site_max.append(float(np.max(np.abs(closed - exact))))
    return {
        "n_transient": int(n_transient),
        "gamma": float(gamma),
        "t_max": float(t_max),
        "closed_form_deviation_from_one_at_t0": at_zero,
        "max_abs_deviation_per_start": per_site_max,
        "max_abs_deviation": float(max(per_site_max)),
    }


def low_gain_arrival_density(
    t,
    n_transient: int,
    gamma: float,
    eta: float,
    source: str = "oracle",
):
    """Density of the first arrival time at the absorbing site when one
    particle is injected at site 0 with rate eta (low-gain regime:
    injection of an Exponential(eta) delay followed by a single-walker
    passage).

    source "oracle": adaptive quadrature of the convolution
    integral(0,t) eta e^{-eta x} f(t - x) dx with the passage density
    f = -dS_0/dt from the generator oracle (absolute tolerance 1e-10).
    With eta = inf the injection is instantaneous and the passage density
    itself is returned.

    source "closed_form": the literal series with start site fixed at 0,
        (1/L) sum_k (-1)^k cos(q_k/2)/sin(q_k/2) *
        eta lambda_k / (eta - lambda_k) * (e^{-lambda_k t} - e^{-eta t}),
    with the eta -> lambda_k pole replaced by its limit
    eta^2 t e^{-eta t} per term.
    """
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    if source == "oracle":
        c, lam = _survival_weights(0, n_transient, gamma)
        if math.isinf(eta):
            out = np.exp(-np.multiply.outer(t_arr, lam)) @ (c * lam)
        else:
            if eta <= 0:
                raise ValueError("the injection rate must be positive")

            def passage(u):
                return float(np.exp(-lam * u) @ (c * lam))

            out = np.empty_like(t_arr)
            for i, ti in enumerate(t_arr):
                if ti <= 0.0:
                    out[i] = 0.0
                    continue
                val, _ = quad(
                    lambda x: eta * math.exp(-eta * x) * passage(ti - x),
                    0.0, ti, epsabs=1e-10, epsrel=1e-10, limit=200)
                out[i] = val
    elif source == "closed_form":
        if math.isinf(eta) or eta <= 0:
            raise ValueError("the literal series needs a finite positive injection rate")
        length = n_transient
        k = np.arange(length)
        q = (k + 0.5) * np.pi / length
        lam = 2.0 * gamma * (1.0 - np.cos(q))
        coeff = (-1.0) ** k * np.cos(q / 2.0) / np.sin(q / 2.0) / length
        out = np.zeros_like(t_arr)
        for ck, lk in zip(coeff, lam):
            if abs(eta - lk) < 1e-12 * max(eta, lk):
                term = eta * eta * t_arr * np.exp(-eta * t_arr)
            else:
                term = eta * lk / (eta - lk) * (np.exp(-lk * t_arr) - np.exp(-eta * t_arr))
            out += ck * term
    else:
        raise ValueError(f"unknown source {source!r}")
    return float(out[0]) if scalar else out


def arrival_cdf_oracle(t, n_transient: int, gamma: float, eta: float):
    """P(first arrival <= t) for the low-gain experiment; the quadrature
    companion of low_gain_arrival_density (oracle source)."""
    c, lam = _survival_weights(0, n_transient, gamma)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if math.isinf(eta):
        out = 1.0 - np.exp(-np.multiply.outer(t_arr, lam)) @ c
    else:
        if eta <= 0:
            raise ValueError("the injection rate must be positive")

        def survival(u):
            return float(np.exp(-lam * u) @ c)

        out = np.empty_like(t_arr)
        for i, ti in enumerate(t_arr):
            if ti <= 0.0:
                out[i] = 0.0
                continue
            val, _ = quad(
                lambda x: eta * math.exp(-eta * x) * survival(ti - x),
                0.0, ti, epsabs=1e-10, epsrel=1e-10, limit=200)
            out[i] = (1.0 - math.exp(-eta * ti)) - val
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if np.asarray(t).ndim == 0 else out


# ---------------------------------------------------------------------------
# growth phases of the fully connected model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthPhase:
    """Phase of the uniformly pumped fully connected model.

    label is one of fermion-stationary, boson-stationary,
    boson-growing-homogenizing, boson-critical, boson-growing-amplifying;
    the boundary values theta - s*eta (stationarity) and
    eta - (theta + N*gamma) (criticality) place the point, and
    difference_decay_rate = N*gamma + theta - s*eta is the relaxation
    rate of site-to-site differences (negative: amplifying).
    """

    label: str
    theta_minus_s_eta: float
    eta_minus_capacity: float
    difference_decay_rate: float
    stationary_density: float | None

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "theta_minus_s_eta": self.theta_minus_s_eta,
            "eta_minus_capacity": self.eta_minus_capacity,
            "difference_decay_rate": self.difference_decay_rate,
            "stationary_density": self.stationary_density,
        }


def classify_growth_phase(
    eta: float,
    theta: float,
    n_sites: int,
    gamma: float,
    statistics: ParticleStatistics,
) -> GrowthPhase:
    """Phase of the N-site all-to-all model with uniform pump and loss.

    Fermions always relax to density eta/(theta+eta).  Bosons relax to
    eta/(theta-eta) below eta = theta, grow while homogenizing up to
    eta = theta + N*gamma, hold site differences constant exactly there,
    and amplify differences beyond.
    """
    if n_sites < 2 or gamma <= 0 or eta < 0 or theta < 0:
        raise ValueError("need n_sites >= 2, gamma > 0, eta, theta >= 0")
    if statistics is ParticleStatistics.SINGLE:
        raise ValueError("growth phases need bosonic or fermionic statistics")
    s = statistics.stimulation_sign
    capacity = theta + n_sites * gamma
    boundary_stat = theta - s * eta
    boundary_crit = eta - capacity
    decay = n_sites * gamma + theta - s * eta
    if statistics is ParticleStatistics.FERMION:
        density = eta / (theta + eta) if eta > 0 else 0.0
        return GrowthPhase("fermion-stationary", boundary_stat, boundary_crit,
                           decay, density)
    if eta < theta:
        return GrowthPhase("boson-stationary", boundary_stat, boundary_crit,
                           decay, eta / (theta - eta))
    if eta < capacity:
        return GrowthPhase("boson-growing-homogenizing", boundary_stat,
                           boundary_crit, decay, None)
    if eta == capacity:
        return GrowthPhase("boson-critical", boundary_stat, boundary_crit,
                           decay, None)
    return GrowthPhase("boson-growing-amplifying", boundary_stat, boundary_crit,
                       decay, None)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------

def export_curve_csv(path, t, values, header_comment: str | None = None) -> None:
    """Two-column curve (t, value) for external plotting."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if t.shape != values.shape:
        raise ValueError("t and values must have matching shapes")
    with open(path, "w") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("t,value\n")
        for ti, vi in zip(t, values):
            fh.write(f"{float(ti)!r},{float(vi)!r}\n")


def export_report_json(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
