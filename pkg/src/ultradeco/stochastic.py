"""Classical master-equation solvers and kinetic Monte Carlo sampling.

The matrix view integrates or solves dP/dt = Q P on an enumerated basis;
the channel view runs the direct stochastic simulation algorithm on raw
occupation vectors (no enumeration), which is the only practical route on
large or unbounded lattices.  Both consume the same ClassicalGenerator.

Randomness is counter-based and splittable: trajectory k of a run with
master seed S draws from Philox stream (S, k), so ensembles are
reproducible regardless of scheduling or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from scipy.integrate import solve_ivp
from scipy.linalg import null_space
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import NumericGuardError
from .reduction import ClassicalGenerator

DEFAULT_EVENT_CAP = 10_000_000
RESUM_INTERVAL = 4096


class AbsorbingStateError(RuntimeError):
    """Total exit rate vanished with no time limit to run out."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for stream `stream` of master seed `seed`."""
    key = np.array([seed % 2**64, stream % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _resolve_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, tuple):
        return make_rng(*rng)
    return make_rng(int(rng))


# ---------------------------------------------------------------------------
# matrix view
# ---------------------------------------------------------------------------

def solve_master(q: np.ndarray, p0, t_grid, rtol: float = 1e-8, atol: float = 1e-10) -> np.ndarray:
    """Integrate dP/dt = Q P on a time grid; returns an array (len(t), dim).

    Conservation is checked (within 1e-9) when Q is conservative, i.e. its
    column sums vanish; small negative probabilities above -1e-10 are
    clipped to zero, anything lower raises.
    """
    q = np.asarray(q, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1] or p0.shape != (q.shape[0],):
        raise ValueError("inconsistent generator/initial shapes")
    sol = solve_ivp(
        lambda t, p: q @ p, (t_grid[0], t_grid[-1]), p0,
        t_eval=t_grid, method="RK45", rtol=rtol, atol=atol,
    )
    if not sol.success or not np.all(np.isfinite(sol.y)):
        raise RuntimeError(f"master equation integration failed: {sol.message}")
    out = sol.y.T.copy()
    conservative = np.max(np.abs(q.sum(axis=0))) < 1e-12 * max(1.0, np.max(np.abs(q)))
    if conservative:
        drift = np.max(np.abs(out.sum(axis=1) - p0.sum()))
        if drift > 1e-9:
            raise RuntimeError(f"probability conservation violated by {drift:.2e}")
    low = out.min()
    if low < -1e-10:
        raise RuntimeError(f"probability {low:.2e} below the positivity floor")
    out[out < 0] = 0.0
    return out


def stationary_distribution(q: np.ndarray) -> np.ndarray:
    """Normalized null vector of a conservative generator.

    Raises if the stationary state is not unique, listing the communicating
    classes of the positive-rate digraph.
    """
    q = np.asarray(q, dtype=float)
    dim = q.shape[0]
    ns = null_space(q)
    if ns.shape[1] != 1:
        off = q.copy()
        np.fill_diagonal(off, 0.0)
        n_comp, labels = connected_components(csr_matrix(off > 0), connection="strong")
        classes = [np.nonzero(labels == c)[0].tolist() for c in range(n_comp)]
        raise ValueError(
            f"stationary distribution is not unique ({ns.shape[1]} null vectors); "
            f"communicating classes: {classes}"
        )
    p = ns[:, 0]
    p = p / p.sum()
    if p.min() < -1e-10:
        raise RuntimeError(f"null vector has negative mass {p.min():.2e}")
    p[p < 0] = 0.0
    p = p / p.sum()
    residual = np.max(np.abs(q @ p))
    scale = max(1.0, float(np.max(np.abs(q))))
    if residual > 1e-12 * scale:
        raise RuntimeError(f"stationary residual {residual:.2e} too large")
    return p


# ---------------------------------------------------------------------------
# channel view: compiled model and the event loop
# ---------------------------------------------------------------------------

class _Compiled:
    """Channel tables flattened for the event loop."""

    __slots__ = ("n_sites", "s", "kinds", "site_a", "site_b", "base",
                 "deltas", "affected", "raises_site", "_arrays")

    def __init__(self, gen: ClassicalGenerator):
        self.n_sites = gen.n_modes
        self.s = gen.s
        self.kinds, self.site_a, self.site_b, self.base = [], [], [], []
        self.deltas = []
        self.raises_site = []
        for ch in gen.channels:
            if ch.kind == "hop":
                self.kinds.append(0)
                self.site_a.append(ch.site_to)
                self.site_b.append(ch.site_from)
                self.raises_site.append(ch.site_to)
            elif ch.kind == "pump":
                self.kinds.append(1)
                self.site_a.append(ch.site_to)
                self.site_b.append(-1)
                self.raises_site.append(ch.site_to)
            else:
                self.kinds.append(2)
                self.site_a.append(ch.site_from)
                self.site_b.append(-1)
                self.raises_site.append(-1)
            self.base.append(ch.base)
            self.deltas.append(ch.delta)
        touch = [[] for _ in range(self.n_sites)]
        for ci in range(len(self.kinds)):
            sites = {self.site_a[ci]}
            if self.site_b[ci] >= 0:
                sites.add(self.site_b[ci])
            for site in sites:
                touch[site].append(ci)
        # channels whose rate can change when channel ci fires
        self.affected = []
        for ci in range(len(self.kinds)):
            dep = set()
            for site, _ in self.deltas[ci]:
                dep.update(touch[site])
            self.affected.append(tuple(sorted(dep)))
        self._arrays = None

    def arrays(self) -> tuple:
        """Channel tables as flat numpy arrays (CSR-style deltas/affected)
        for the compiled event loop; built once and cached."""
        if self._arrays is None:
            n = len(self.kinds)
            dptr = np.zeros(n + 1, dtype=np.int64)
            dsite, dchg = [], []
            for ci in range(n):
                for site, chg in self.deltas[ci]:
                    dsite.append(site)
                    dchg.append(chg)
                dptr[ci + 1] = len(dsite)
            aptr = np.zeros(n + 1, dtype=np.int64)
            aidx = []
            for ci in range(n):
                aidx.extend(self.affected[ci])
                aptr[ci + 1] = len(aidx)
            self._arrays = (
                np.array(self.kinds, dtype=np.int64),
                np.array(self.site_a, dtype=np.int64),
                np.array(self.site_b, dtype=np.int64),
                np.array(self.base, dtype=np.float64),
                dptr, np.array(dsite, dtype=np.int64),
                np.array(dchg, dtype=np.int64),
                aptr, np.array(aidx, dtype=np.int64),
                np.array(self.raises_site, dtype=np.int64),
            )
        return self._arrays

    def rate(self, ci: int, state) -> float:
        kind = self.kinds[ci]
        if kind == 0:
            return self.base[ci] * (1 + self.s * state[self.site_a[ci]]) * state[self.site_b[ci]]
        if kind == 1:
            return self.base[ci] * (1 + self.s * state[self.site_a[ci]])
        return self.base[ci] * state[self.site_a[ci]]


@dataclass
class StopCondition:
    """When a trajectory ends: wall-clock time, first arrival at any of the
    target sites, or the event cap (always bounded)."""

    time_limit: float | None = None
    target_sites: tuple = None
    max_events: int = DEFAULT_EVENT_CAP

    def __post_init__(self) -> None:
        if self.time_limit is None and self.target_sites is None and self.max_events is None:
            raise ValueError("a stop condition must bound the trajectory")
        if self.max_events is None:
            self.max_events = DEFAULT_EVENT_CAP
        if self.target_sites is not None:
            self.target_sites = tuple(self.target_sites)


@dataclass
class TrajectoryRecord:
    """One kinetic Monte Carlo trajectory.

    events is the ordered list of (time, channel index, state after);
    terminal is "time_limit", "arrival" or "event_cap".
    """

    initial_state: tuple
    events: list
    terminal: str
    final_time: float
    final_state: tuple
    seed: tuple | None = None

    @property
    def n_events(self) -> int:
        return len(self.events)


def _run(
    comp: _Compiled,
    initial,
    rng: np.random.Generator,
    time_limit: float | None,
    targets,
    max_events: int,
    record: bool,
    burn_in: float | None,
    jit: bool | None = None,
):
    """The direct-method event loop.  Returns a dict of observables.

    Rates are recomputed locally (only channels touching changed sites);
    the running total is re-summed every RESUM_INTERVAL events to stop
    float drift.  With `burn_in` set, time-weighted occupancies and event
    counts per channel are accumulated from burn_in on.

    The plain loop below is the reference; when numba is importable the
    no-record, no-accumulator path dispatches to a compiled kernel that
    consumes the same uniform stream in the same order and is therefore
    bit-identical (`jit=False` forces the reference loop).
    """
    if jit is None:
        jit = _jit_kernel is not None
    if jit and _jit_kernel is not None and not record and burn_in is None:
        return _run_jit(comp, initial, rng, time_limit, targets, max_events)
    state = list(initial)
    n_channels = len(comp.kinds)
    rate_of = comp.rate
    rates = [rate_of(ci, state) for ci in range(n_channels)]
    total = sum(rates)
    deltas = comp.deltas
    affected = comp.affected
    raises_site = comp.raises_site
    target_set = set(targets) if targets is not None else None

    acc = burn_in is not None
    if acc:
        occ = [0.0] * comp.n_sites
        last = [burn_in] * comp.n_sites
        counts = [0] * n_channels
    events = [] if record else None

    t = 0.0
    n_ev = 0
    terminal = None
    log1p = math.log1p
    # uniforms are drawn in blocks; events consume exactly two each, so the
    # stream stays aligned with one-at-a-time draws (replayable)
    buf = []
    buf_n = 0
    bi = 0

    while True:
        if total <= 1e-280:
            total = sum(rates)  # incremental drift check before declaring absorbing
            if total <= 0.0:
                if time_limit is None:
                    raise AbsorbingStateError(
                        f"absorbing state {tuple(state)} with no time limit")
                t = time_limit
                terminal = "time_limit"
                break
        if bi >= buf_n - 1:
            buf = rng.random(8192).tolist()
            buf_n = 8192
            bi = 0
        u1 = buf[bi]
        u2 = buf[bi + 1]
        bi += 2
        t_next = t - log1p(-u1) / total
        if time_limit is not None and t_next >= time_limit:
            t = time_limit
            terminal = "time_limit"
            break
        x = u2 * total
        cum = 0.0
        ci = -1
        for cj in range(n_channels):
            r = rates[cj]
            if r > 0.0:
                ci = cj
                cum += r
                if x < cum:
                    break
        for site, chg in deltas[ci]:
            if acc and t_next > burn_in:
                occ[site] += state[site] * (t_next - last[site])
                last[site] = t_next
            state[site] += chg
        t = t_next
        n_ev += 1
        if acc and t >= burn_in:
            counts[ci] += 1
        if record:
            events.append((t, ci, tuple(state)))
        if target_set is not None and raises_site[ci] in target_set:
            terminal = "arrival"
            break
        if n_ev >= max_events:
            terminal = "event_cap"
            break
        for cj in affected[ci]:
            old = rates[cj]
            new = rate_of(cj, state)
            rates[cj] = new
            total += new - old
        if n_ev % RESUM_INTERVAL == 0:
            total = sum(rates)

    out = {
        "final_state": tuple(state),
        "final_time": t,
        "terminal": terminal,
        "n_events": n_ev,
        "events": events,
    }
    if acc:
        horizon = t
        if horizon > burn_in:
            for site in range(comp.n_sites):
                occ[site] += state[site] * (horizon - last[site])
            duration = horizon - burn_in
        else:
            duration = 0.0
        out["occupancy_sums"] = occ
        out["duration"] = duration
        out["channel_counts"] = counts
    return out


# ---------------------------------------------------------------------------
# compiled event loop (optional; bit-identical to the reference path)
# ---------------------------------------------------------------------------

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - exercised only without numba
    _njit = None


def _kernel_source(kinds, site_a, site_b, base, s, dptr, dsite, dchg,
                   aptr, aidx, raises_site, target_mask, use_targets,
                   time_limit, use_time_limit, max_events, resum,
                   state, rates, buf, fcarry, icarry):
    """Inner loop shared with the reference path, arranged so every float
    operation happens in the same order.  Returns a status code: 0 arrival,
    1 time limit, 2 event cap, 3 uniform buffer exhausted, 4 absorbing.
    Progress is carried in (state, rates, fcarry=[t, total], icarry=[n_ev,
    buffer index]) so the caller can refill the buffer and re-enter.
    """
    t = fcarry[0]
    total = fcarry[1]
    n_ev = icarry[0]
    bi = icarry[1]
    n_channels = kinds.shape[0]
    while True:
        if total <= 1e-280:
            tot = 0.0
            for cj in range(n_channels):
                tot += rates[cj]
            total = tot
            if total <= 0.0:
                fcarry[0] = t
                fcarry[1] = total
                icarry[0] = n_ev
                icarry[1] = bi
                return 4
        if bi >= 8191:
            fcarry[0] = t
            fcarry[1] = total
            icarry[0] = n_ev
            icarry[1] = bi
            return 3
        u1 = buf[bi]
        u2 = buf[bi + 1]
        bi += 2
        t_next = t - math.log1p(-u1) / total
        if use_time_limit and t_next >= time_limit:
            fcarry[0] = time_limit
            fcarry[1] = total
            icarry[0] = n_ev
            icarry[1] = bi
            return 1
        x = u2 * total
        cum = 0.0
        ci = -1
        for cj in range(n_channels):
            r = rates[cj]
            if r > 0.0:
                ci = cj
                cum += r
                if x < cum:
                    break
        for k in range(dptr[ci], dptr[ci + 1]):
            state[dsite[k]] += dchg[k]
        t = t_next
        n_ev += 1
        rs = raises_site[ci]
        if use_targets and rs >= 0 and target_mask[rs]:
            fcarry[0] = t
            fcarry[1] = total
            icarry[0] = n_ev
            icarry[1] = bi
            return 0
        if n_ev >= max_events:
            fcarry[0] = t
            fcarry[1] = total
            icarry[0] = n_ev
            icarry[1] = bi
            return 2
        for k in range(aptr[ci], aptr[ci + 1]):
            cj = aidx[k]
            old = rates[cj]
            kind = kinds[cj]
            if kind == 0:
                new = base[cj] * (1 + s * state[site_a[cj]]) * state[site_b[cj]]
            elif kind == 1:
                new = base[cj] * (1 + s * state[site_a[cj]])
            else:
                new = base[cj] * state[site_a[cj]]
            rates[cj] = new
            total += new - old
        if n_ev % resum == 0:
            tot = 0.0
            for cj in range(n_channels):
                tot += rates[cj]
            total = tot


_jit_kernel = _njit(cache=True)(_kernel_source) if _njit is not None else None


def _run_jit(comp, initial, rng, time_limit, targets, max_events):
    state_list = list(initial)
    vals = [comp.rate(ci, state_list) for ci in range(len(comp.kinds))]
    total = sum(vals)
    (kinds, site_a, site_b, base, dptr, dsite, dchg,
     aptr, aidx, raises_site) = comp.arrays()
    target_mask = np.zeros(comp.n_sites, dtype=np.bool_)
    use_targets = targets is not None
    if use_targets:
        for site in targets:
            target_mask[site] = True
    state = np.array(state_list, dtype=np.int64)
    rates = np.array(vals, dtype=np.float64)
    fcarry = np.array([0.0, total], dtype=np.float64)
    # buffer index 8192 forces an initial refill, as in the reference loop
    icarry = np.array([0, 8192], dtype=np.int64)
    buf = np.zeros(8192, dtype=np.float64)
    while True:
        status = _jit_kernel(
            kinds, site_a, site_b, base, np.int64(comp.s),
            dptr, dsite, dchg, aptr, aidx, raises_site,
            target_mask, use_targets,
            np.float64(time_limit if time_limit is not None else np.inf),
            time_limit is not None, np.int64(max_events),
            np.int64(RESUM_INTERVAL), state, rates, buf, fcarry, icarry,
        )
        if status != 3:
            break
        buf = rng.random(8192)
        icarry[1] = 0
    if status == 4:
        if time_limit is None:
            raise AbsorbingStateError(
                f"absorbing state {tuple(int(x) for x in state)} with no time limit")
        fcarry[0] = time_limit
        status = 1
    return {
        "final_state": tuple(int(x) for x in state),
        "final_time": float(fcarry[0]),
        "terminal": ("arrival", "time_limit", "event_cap")[status],
        "n_events": int(icarry[0]),
        "events": None,
    }


def gillespie_step(gen: ClassicalGenerator, state, rng) -> tuple:
    """One direct-method step: (waiting time, channel index, next state).

    Raises AbsorbingStateError when the total exit rate vanishes.
    """
    rng = _resolve_rng(rng)
    rates = gen.channel_rates(state)
    total = float(rates.sum())
    if total <= 0.0:
        raise AbsorbingStateError(f"absorbing state {tuple(state)}")
    u1, u2 = rng.random(), rng.random()
    dt = -math.log1p(-u1) / total
    x = u2 * total
    cum = 0.0
    ci = -1
    for cj, r in enumerate(rates):
        if r > 0.0:
            ci = cj
            cum += r
            if x < cum:
                break
    return dt, ci, gen.apply_channel(state, ci)


def simulate_trajectory(
    gen: ClassicalGenerator,
    initial,
    stop: StopCondition,
    rng,
) -> TrajectoryRecord:
    """Run one trajectory, recording every event.

    `rng` may be a Generator, a master seed int, or a (seed, stream) pair;
    results are deterministic given (generator, initial state, seed).
    """
    seed_info = rng if isinstance(rng, tuple) else ((int(rng), 0) if isinstance(rng, int) else None)
    out = _run(
        _Compiled(gen), initial, _resolve_rng(rng),
        stop.time_limit, stop.target_sites, stop.max_events,
        record=True, burn_in=None,
    )
    return TrajectoryRecord(
        initial_state=tuple(initial),
        events=out["events"],
        terminal=out["terminal"],
        final_time=out["final_time"],
        final_state=out["final_state"],
        seed=seed_info,
    )


# ---------------------------------------------------------------------------
# sample sets and derived statistics
# ---------------------------------------------------------------------------

@dataclass
class SampleSet:
    """Scalar samples plus the count of censored draws (disclosed, never
    dropped).  Histogram masses are normalized by observed + censored, so
    total mass + censored fraction = 1 exactly."""

    values: np.ndarray
    censored: int = 0

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)

    @property
    def count(self) -> int:
        return int(self.values.size)

    @property
    def total(self) -> int:
        return self.count + self.censored

    def mean(self) -> float:
        return float(self.values.mean())

    def variance(self) -> float:
        return float(self.values.var(ddof=1)) if self.count > 1 else 0.0

    def histogram(self, bins=None) -> tuple:
        """(edges, masses); Freedman-Diaconis binning by default.

        Masses carry observed weight only; the largest bin absorbs the
        division roundoff so that sum(masses) + censored/total is exactly
        the float 1.0.
        """
        if self.count == 0:
            return np.array([0.0, 1.0]), np.array([0.0])
        if bins is None:
            edges = np.histogram_bin_edges(self.values, bins="fd")
        else:
            edges = np.histogram_bin_edges(self.values, bins=bins)
        counts, edges = np.histogram(self.values, bins=edges)
        masses = counts / self.total
        observed = 1.0 - self.censored / self.total
        # pin the total so mass + censored fraction is exactly 1.0; the bulk
        # correction can land an ulp off under pairwise summation, so finish
        # with single-ulp nudges of the largest bin
        k = int(np.argmax(masses))
        masses[k] += observed - masses.sum()
        for _ in range(256):
            total_mass = masses.sum()
            if total_mass == observed:
                break
            masses[k] = np.nextafter(masses[k], np.inf if total_mass < observed else -np.inf)
        return edges, masses

    def to_csv(self, path, header_comment: str | None = None) -> None:
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("value\n")
            for v in self.values:
                fh.write(f"{float(v)!r}\n")

    def histogram_to_csv(self, path, bins=None, header_comment: str | None = None) -> None:
        edges, masses = self.histogram(bins)
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("bin_lo,bin_hi,mass\n")
            for k in range(masses.size):
                fh.write(f"{float(edges[k])!r},{float(edges[k + 1])!r},{float(masses[k])!r}\n")


def sample_persistent_times(gen: ClassicalGenerator, state, n: int, rng) -> SampleSet:
    """n independent waiting times out of `state`: Exponential with the
    state's total exit rate."""
    rng = _resolve_rng(rng)
    total = gen.total_exit_rate(state)
    if total <= 0.0:
        raise AbsorbingStateError(f"state {tuple(state)} has no exit channels")
    u = rng.random(n)
    return SampleSet(-np.log1p(-u) / total)


def sample_first_arrival(
    gen: ClassicalGenerator,
    initial,
    target_sites,
    n: int,
    master_seed: int,
    time_cap: float,
    stream_offset: int = 0,
    max_events: int = DEFAULT_EVENT_CAP,
) -> SampleSet:
    """First times any target site gains a particle, over n independent
    trajectories (trajectory k uses stream (master_seed, stream_offset+k)).

    Trajectories still short of the target at `time_cap` are counted as
    censored.  A target occupied at t = 0 yields degenerate samples at 0.
    Stimulated chains churn hard before first arrival, so `max_events`
    may need to be far above the default there.
    """
    targets = tuple(target_sites)
    if any(initial[site] > 0 for site in targets):
        return SampleSet(np.zeros(n))
    comp = _Compiled(gen)
    times = []
    censored = 0
    for k in range(n):
        out = _run(
            comp, initial, make_rng(master_seed, stream_offset + k),
            time_cap, targets, max_events, record=False, burn_in=None,
        )
        if out["terminal"] == "event_cap":
            raise NumericGuardError(
                f"trajectory {k} hit the event cap before arrival or the time cap")
        if out["terminal"] == "arrival":
            times.append(out["final_time"])
        else:
            censored += 1
    return SampleSet(np.array(times), censored=censored)


def collect_waiting_times(record: TrajectoryRecord) -> dict:
    """Per-state waiting times along a trajectory: {occupation: array of
    gaps spent in that occupation}.  The final gap is censored by the stop
    condition and excluded."""
    gaps: dict = {}
    state = record.initial_state
    t_prev = 0.0
    for t, _, state_after in record.events:
        gaps.setdefault(state, []).append(t - t_prev)
        t_prev = t
        state = state_after
    return {s: np.asarray(v) for s, v in gaps.items()}


@dataclass
class EnsembleStatistics:
    """Streaming per-trajectory sufficient statistics for time-averaged
    occupations.  Merging two disjoint accumulators is exact: it just
    concatenates the per-trajectory records."""

    n_sites: int
    occupancy_sums: list = field(default_factory=list)   # one vector per trajectory
    durations: list = field(default_factory=list)
    channel_counts: list = field(default_factory=list)

    @property
    def n_trajectories(self) -> int:
        return len(self.durations)

    def add(self, occupancy_sums, duration: float, channel_counts=None) -> None:
        if duration <= 0.0:
            raise ValueError("trajectory contributed no post-burn-in time")
        self.occupancy_sums.append(np.asarray(occupancy_sums, dtype=float))
        self.durations.append(float(duration))
        self.channel_counts.append(
            None if channel_counts is None else np.asarray(channel_counts))

    def merge(self, other: "EnsembleStatistics") -> "EnsembleStatistics":
        if other.n_sites != self.n_sites:
            raise ValueError("site counts differ")
        out = EnsembleStatistics(self.n_sites)
        out.occupancy_sums = self.occupancy_sums + other.occupancy_sums
        out.durations = self.durations + other.durations
        out.channel_counts = self.channel_counts + other.channel_counts
        return out

    def trajectory_means(self) -> np.ndarray:
        return np.vstack([s / d for s, d in zip(self.occupancy_sums, self.durations)])

    def site_means(self) -> np.ndarray:
        return self.trajectory_means().mean(axis=0)

    def site_stderr(self) -> np.ndarray:
        means = self.trajectory_means()
        k = means.shape[0]
        if k < 2:
            raise ValueError("standard errors need at least two trajectories")
        return means.std(axis=0, ddof=1) / np.sqrt(k)

    def event_rate(self, channel_indices) -> float:
        """Pooled rate of the given channels: total counts / total time."""
        idx = list(channel_indices)
        tot = sum(float(c[idx].sum()) for c in self.channel_counts if c is not None)
        return tot / sum(self.durations)

    def stationarity_defect(self) -> float:
        """Largest |first-half mean - second-half mean| / stderr over sites,
        using the per-trajectory split; a crude burn-in adequacy check."""
        means = self.trajectory_means()
        k = means.shape[0]
        if k < 4:
            raise ValueError("the split check needs at least four trajectories")
        a, b = means[: k // 2], means[k // 2:]
        pooled = means.std(axis=0, ddof=1) / np.sqrt(k / 2)
        pooled[pooled == 0] = np.inf
        return float(np.max(np.abs(a.mean(axis=0) - b.mean(axis=0)) / pooled))

    def to_csv(self, path, header_comment: str | None = None) -> None:
        means, errs = self.site_means(), self.site_stderr()
        with open(path, "w") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("site,mean,stderr\n")
            for site in range(self.n_sites):
                fh.write(f"{site},{float(means[site])!r},{float(errs[site])!r}\n")


def default_burn_in(gen: ClassicalGenerator) -> float:
    """Ten times the slowest positive base rate's timescale."""
    rates = [ch.base for ch in gen.channels if ch.base > 0]
    if not rates:
        raise ValueError("the generator has no active channels")
    return 10.0 / min(rates)


def ensemble_statistics(
    gen: ClassicalGenerator,
    initial,
    n_trajectories: int,
    time_limit: float,
    master_seed: int,
    burn_in: float | None = None,
    stream_offset: int = 0,
) -> EnsembleStatistics:
    """Time-averaged occupations over independent trajectories.

    Each trajectory runs to `time_limit`, accumulating occupancies and
    event counts from `burn_in` (default 10 / min positive base rate) on;
    trajectory k uses stream (master_seed, stream_offset + k).
    """
    if burn_in is None:
        burn_in = default_burn_in(gen)
    if burn_in >= time_limit:
        raise ValueError("burn-in swallows the whole trajectory")
    comp = _Compiled(gen)
    acc = EnsembleStatistics(gen.n_modes)
    for k in range(n_trajectories):
        out = _run(
            comp, initial, make_rng(master_seed, stream_offset + k),
            time_limit, None, DEFAULT_EVENT_CAP, record=False, burn_in=burn_in,
        )
        if out["terminal"] == "event_cap":
            raise RuntimeError(
                f"trajectory {k} hit the event cap at t = {out['final_time']:.4g} "
                f"before the time limit; its window would be biased")
        acc.add(out["occupancy_sums"], out["duration"], out["channel_counts"])
    return acc


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov helpers
# ---------------------------------------------------------------------------

def ks_statistic(samples, cdf) -> float:
    return float(sps.kstest(np.asarray(samples), cdf).statistic)


def ks_critical_value(n: int, alpha: float = 0.01) -> float:
    """Asymptotic one-sample critical value: c(alpha) / sqrt(n)."""
    return float(sps.kstwobign.isf(alpha) / math.sqrt(n))


def ks_two_sample_statistic(a, b) -> float:
    return float(sps.ks_2samp(np.asarray(a), np.asarray(b)).statistic)


def ks_two_sample_critical(n: int, m: int, alpha: float = 0.01) -> float:
    return float(sps.kstwobign.isf(alpha) * math.sqrt((n + m) / (n * m)))
