"""Stochastic engine tests: determinism, replay consistency against the
single-step reference, agreement with the matrix solvers, and the
distributional laws of waiting and arrival times."""

import numpy as np
import pytest
from scipy import stats as sps

from ultradeco.core import ParticleStatistics, SystemSpec, Truncation, enumerate_fock, validate_spec
from ultradeco.reduction import build_classical_generator
from ultradeco.stochastic import (
    AbsorbingStateError,
    EnsembleStatistics,
    SampleSet,
    StopCondition,
    _Compiled,
    collect_waiting_times,
    default_burn_in,
    ensemble_statistics,
    gillespie_step,
    ks_critical_value,
    ks_statistic,
    ks_two_sample_critical,
    ks_two_sample_statistic,
    make_rng,
    sample_first_arrival,
    sample_persistent_times,
    simulate_trajectory,
    solve_master,
    stationary_distribution,
)


def _chain_spec(n, v, gamma, eta0=0.0, theta_last=0.0,
                stats=ParticleStatistics.FERMION):
    vm = np.zeros((n, n))
    for i in range(n - 1):
        vm[i, i + 1] = vm[i + 1, i] = v
    eta = np.zeros(n)
    theta = np.zeros(n)
    eta[0] = eta0
    theta[-1] = theta_last
    return validate_spec(SystemSpec(
        n_modes=n, omega=np.zeros(n), v=vm, gamma=np.full(n, gamma),
        eta=eta, theta=theta, statistics=stats,
    ))


def _two_mode_single(w_coupling=0.8, gamma=1.0):
    spec = validate_spec(SystemSpec(
        n_modes=2, omega=np.zeros(2),
        v=np.array([[0.0, w_coupling], [w_coupling, 0.0]]),
        gamma=np.array([gamma, gamma]), eta=np.zeros(2), theta=np.zeros(2),
        statistics=ParticleStatistics.SINGLE,
    ))
    return build_classical_generator(spec)


# ---------------------------------------------------------------------------
# randomness plumbing
# ---------------------------------------------------------------------------

def test_rng_streams_reproducible_and_distinct():
    a = make_rng(123, 5).random(16)
    b = make_rng(123, 5).random(16)
    c = make_rng(123, 6).random(16)
    d = make_rng(124, 5).random(16)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_block_draws_match_scalar_draws():
    # the event loop draws uniforms in blocks; replay draws them one at a
    # time, so both orders must walk the identical stream
    block = make_rng(7, 3).random(64)
    rng = make_rng(7, 3)
    singles = np.array([rng.random() for _ in range(64)])
    assert np.array_equal(block, singles)


# ---------------------------------------------------------------------------
# trajectory mechanics
# ---------------------------------------------------------------------------

def test_trajectory_deterministic_per_stream():
    gen = build_classical_generator(_chain_spec(3, 0.6, 2.0, eta0=0.3, theta_last=0.7))
    stop = StopCondition(time_limit=40.0)
    rec1 = simulate_trajectory(gen, (0, 0, 0), stop, (11, 4))
    rec2 = simulate_trajectory(gen, (0, 0, 0), stop, (11, 4))
    rec3 = simulate_trajectory(gen, (0, 0, 0), stop, (11, 5))
    assert rec1.events == rec2.events
    assert rec1.terminal == rec2.terminal == "time_limit"
    assert rec1.seed == (11, 4)
    assert rec1.events != rec3.events


def test_trajectory_replays_with_single_steps():
    gen = build_classical_generator(_chain_spec(3, 0.6, 2.0, eta0=0.3, theta_last=0.7))
    rec = simulate_trajectory(gen, (0, 0, 0), StopCondition(time_limit=400.0), (11, 4))
    assert rec.n_events > 100
    rng = make_rng(11, 4)
    state = rec.initial_state
    t = 0.0
    for t_rec, ci_rec, state_rec in rec.events:
        dt, ci, state = gillespie_step(gen, state, rng)
        t += dt
        assert ci == ci_rec
        assert state == state_rec
        assert t == pytest.approx(t_rec, rel=1e-9, abs=1e-12)
    # the recorded trajectory stopped at the time limit: the next replayed
    # step must overshoot it
    dt, _, _ = gillespie_step(gen, state, rng)
    assert t + dt >= 400.0


def test_fermion_occupations_stay_binary():
    gen = build_classical_generator(_chain_spec(4, 1.0, 2.0, eta0=1.5, theta_last=0.4))
    rec = simulate_trajectory(gen, (0, 0, 0, 0), StopCondition(time_limit=500.0), (3, 0))
    assert rec.n_events > 500
    occ = np.array([s for _, _, s in rec.events])
    assert occ.min() >= 0 and occ.max() <= 1


def test_boson_pump_only_counts_particles():
    # pure pump: every event adds one particle.  The channel view never
    # enumerates states, so the trajectory sails far past the truncation
    # that the matrix view would enforce.
    spec = validate_spec(SystemSpec(
        n_modes=1, omega=np.zeros(1), v=np.zeros((1, 1)), gamma=np.ones(1),
        eta=np.array([1.0]), theta=np.zeros(1),
        statistics=ParticleStatistics.BOSON,
        truncation=Truncation("max_total", 4),
    ))
    gen = build_classical_generator(spec)
    rec = simulate_trajectory(gen, (0,), StopCondition(max_events=500), (2, 0))
    assert rec.terminal == "event_cap"
    assert rec.n_events == 500
    assert rec.final_state == (500,)


def test_absorbing_state_raises_without_time_limit():
    # lone fermion with only a loss channel: once it decays nothing moves
    spec = validate_spec(SystemSpec(
        n_modes=1, omega=np.zeros(1), v=np.zeros((1, 1)), gamma=np.ones(1),
        eta=np.zeros(1), theta=np.array([0.9]),
        statistics=ParticleStatistics.FERMION,
    ))
    gen = build_classical_generator(spec)
    with pytest.raises(AbsorbingStateError):
        simulate_trajectory(gen, (1,), StopCondition(max_events=100), (0, 0))
    rec = simulate_trajectory(gen, (1,), StopCondition(time_limit=1e6), (0, 0))
    assert rec.terminal == "time_limit"
    assert rec.final_state == (0,)
    assert rec.n_events == 1


def test_stop_condition_must_bound():
    with pytest.raises(ValueError):
        StopCondition(time_limit=None, target_sites=None, max_events=None)


def test_loss_at_target_is_not_an_arrival():
    spec = validate_spec(SystemSpec(
        n_modes=1, omega=np.zeros(1), v=np.zeros((1, 1)), gamma=np.ones(1),
        eta=np.zeros(1), theta=np.array([0.9]),
        statistics=ParticleStatistics.FERMION,
    ))
    gen = build_classical_generator(spec)
    rec = simulate_trajectory(gen, (1,), StopCondition(time_limit=50.0, target_sites=(0,)), (0, 1))
    assert rec.terminal == "time_limit"


def test_compiled_rates_match_reference_rates():
    rng = np.random.default_rng(42)
    for _ in range(60):
        n = int(rng.integers(2, 5))
        stats = [ParticleStatistics.BOSON, ParticleStatistics.FERMION][int(rng.integers(2))]
        vm = np.triu(rng.random((n, n)) * (rng.random((n, n)) < 0.7), k=1)
        vm = vm + vm.T
        trunc = Truncation("max_total", 6) if stats is ParticleStatistics.BOSON else None
        spec = validate_spec(SystemSpec(
            n_modes=n, omega=rng.normal(size=n), v=vm,
            gamma=rng.random(n) + 0.5, eta=rng.random(n) * 0.3,
            theta=rng.random(n) * 0.5, statistics=stats, truncation=trunc,
        ))
        gen = build_classical_generator(spec)
        comp = _Compiled(gen)
        for _ in range(5):
            if stats is ParticleStatistics.FERMION:
                state = tuple(int(x) for x in rng.integers(0, 2, size=n))
            else:
                state = tuple(int(x) for x in rng.integers(0, 5, size=n))
            ref = gen.channel_rates(state)
            got = np.array([comp.rate(ci, list(state)) for ci in range(len(gen.channels))])
            assert np.allclose(got, ref, rtol=1e-13, atol=0.0)


def test_compiled_loop_replays_reference_loop():
    # the accelerated loop consumes the same uniform stream in the same
    # order as the reference loop, so whole trajectories, not just their
    # laws, must coincide: final time bitwise, final state, event count
    pytest.importorskip("numba")
    from ultradeco.stochastic import _run

    spec = validate_spec(SystemSpec(
        n_modes=4, omega=np.zeros(4),
        v=np.diag([1.0, 1.0, 1.0], k=1) + np.diag([1.0, 1.0, 1.0], k=-1),
        gamma=np.full(4, 2.0), eta=np.array([0.8, 0.0, 0.0, 0.0]),
        theta=np.array([0.0, 0.0, 0.0, 0.3]),
        statistics=ParticleStatistics.BOSON,
        truncation=Truncation("max_total", 4),
    ))
    gen = build_classical_generator(spec)
    comp = _Compiled(gen)
    cases = (
        (1e6, (3,), 10**7),   # arrival stop
        (60.0, None, 10**7),  # time-limit stop
        (1e6, None, 3000),    # event-cap stop
    )
    for stream, (time_limit, targets, cap) in enumerate(cases):
        fast = _run(comp, (0, 0, 0, 0), make_rng(99, stream), time_limit,
                    targets, cap, False, None, jit=True)
        slow = _run(comp, (0, 0, 0, 0), make_rng(99, stream), time_limit,
                    targets, cap, False, None, jit=False)
        assert fast["terminal"] == slow["terminal"]
        assert fast["final_time"] == slow["final_time"]
        assert fast["final_state"] == slow["final_state"]
        assert fast["n_events"] == slow["n_events"]
    assert fast["terminal"] == "event_cap" and fast["n_events"] == 3000


def test_compiled_loop_raises_on_absorbing_state():
    pytest.importorskip("numba")
    from ultradeco.stochastic import _run

    spec = validate_spec(SystemSpec(
        n_modes=1, omega=np.zeros(1), v=np.zeros((1, 1)), gamma=np.ones(1),
        eta=np.zeros(1), theta=np.array([0.9]),
        statistics=ParticleStatistics.FERMION,
    ))
    comp = _Compiled(build_classical_generator(spec))
    with pytest.raises(AbsorbingStateError):
        _run(comp, (1,), make_rng(0, 0), None, None, 100, False, None, jit=True)
    out = _run(comp, (1,), make_rng(0, 0), 1e6, None, 100, False, None, jit=True)
    assert out["terminal"] == "time_limit"
    assert out["final_state"] == (0,)
    assert out["n_events"] == 1


# ---------------------------------------------------------------------------
# waiting times and sampling
# ---------------------------------------------------------------------------

def test_waiting_times_are_exponential():
    gen = _two_mode_single()
    w = gen.w[0, 1]
    assert w == pytest.approx(2 * 1.0 * 0.64 / 1.0)
    rec = simulate_trajectory(gen, (1, 0), StopCondition(time_limit=1600.0), (17, 0))
    gaps = collect_waiting_times(rec)
    assert sum(len(v) for v in gaps.values()) == rec.n_events
    times = gaps[(1, 0)]
    assert times.size > 800
    d = ks_statistic(times, sps.expon(scale=1.0 / w).cdf)
    assert d < ks_critical_value(times.size, alpha=0.01)


def test_persistent_time_samples_are_inverse_cdf_draws():
    gen = _two_mode_single()
    total = gen.total_exit_rate((1, 0))
    samples = sample_persistent_times(gen, (1, 0), 4096, (9, 2))
    expected = -np.log1p(-make_rng(9, 2).random(4096)) / total
    assert np.array_equal(samples.values, expected)
    d = ks_statistic(samples.values, sps.expon(scale=1.0 / total).cdf)
    assert d < ks_critical_value(4096, alpha=0.01)


def test_persistent_time_rejects_absorbing_state():
    gen = _two_mode_single()
    with pytest.raises(AbsorbingStateError):
        sample_persistent_times(gen, (0, 0), 10, (0, 0))


def test_first_arrival_censoring_accounting():
    # short cap so a fair share of trajectories never arrive
    gen = build_classical_generator(_chain_spec(4, 0.5, 2.0, eta0=0.2, theta_last=0.3))
    s = sample_first_arrival(gen, (0, 0, 0, 0), (3,), 400, master_seed=21, time_cap=6.0)
    assert s.count + s.censored == 400
    assert s.censored > 20
    assert np.all(s.values <= 6.0)
    edges, masses = s.histogram()
    assert masses.sum() + s.censored / s.total == 1.0
    full = sample_first_arrival(gen, (0, 0, 0, 0), (3,), 400, master_seed=21, time_cap=1e5)
    assert full.censored == 0
    e2, m2 = full.histogram()
    assert m2.sum() == 1.0


def test_first_arrival_occupied_target_is_degenerate():
    gen = build_classical_generator(_chain_spec(3, 0.5, 2.0, eta0=0.2, theta_last=0.3))
    s = sample_first_arrival(gen, (0, 0, 1), (2,), 25, master_seed=0, time_cap=10.0)
    assert s.count == 25 and s.censored == 0
    assert np.all(s.values == 0.0)


def test_first_arrival_streams_are_disjoint():
    gen = build_classical_generator(_chain_spec(3, 0.5, 2.0, eta0=0.4, theta_last=0.3))
    a = sample_first_arrival(gen, (0, 0, 0), (2,), 50, master_seed=5, time_cap=1e4)
    b = sample_first_arrival(gen, (0, 0, 0), (2,), 30, master_seed=5, time_cap=1e4,
                             stream_offset=50)
    c = sample_first_arrival(gen, (0, 0, 0), (2,), 80, master_seed=5, time_cap=1e4)
    assert np.array_equal(np.concatenate([a.values, b.values]), c.values)


# ---------------------------------------------------------------------------
# ensemble statistics vs the matrix view
# ---------------------------------------------------------------------------

def _fermion_transport_setup():
    spec = _chain_spec(3, 0.6, 2.0, eta0=0.25, theta_last=0.6)
    gen = build_classical_generator(spec)
    space = enumerate_fock(spec.n_modes, spec.statistics, spec.truncation)
    q = gen.rate_matrix(space)
    p_star = stationary_distribution(q)
    exact_means = p_star @ space.states
    return gen, space, q, p_star, exact_means


def test_ensemble_occupations_match_stationary_distribution():
    gen, space, q, p_star, exact = _fermion_transport_setup()
    acc = ensemble_statistics(gen, (0, 0, 0), n_trajectories=24, time_limit=600.0,
                              master_seed=31)
    means = acc.site_means()
    errs = acc.site_stderr()
    assert np.all(errs > 0)
    assert np.all(np.abs(means - exact) < 4.0 * errs)
    # pooled loss-event rate estimates the stationary drain current
    loss_idx = [i for i, ch in enumerate(gen.channels) if ch.kind == "loss"]
    current = acc.event_rate(loss_idx)
    expected = 0.6 * exact[2]
    assert current == pytest.approx(expected, rel=0.15)
    assert acc.stationarity_defect() < 6.0


def test_ensemble_merge_is_exact():
    gen, *_ = _fermion_transport_setup()
    whole = ensemble_statistics(gen, (0, 0, 0), 8, 120.0, master_seed=77)
    left = ensemble_statistics(gen, (0, 0, 0), 5, 120.0, master_seed=77)
    right = ensemble_statistics(gen, (0, 0, 0), 3, 120.0, master_seed=77, stream_offset=5)
    merged = left.merge(right)
    assert merged.n_trajectories == 8
    assert np.array_equal(merged.site_means(), whole.site_means())
    assert np.array_equal(merged.site_stderr(), whole.site_stderr())


def test_ensemble_flags_event_cap():
    spec = validate_spec(SystemSpec(
        n_modes=1, omega=np.zeros(1), v=np.zeros((1, 1)), gamma=np.ones(1),
        eta=np.array([5.0]), theta=np.zeros(1), statistics=ParticleStatistics.BOSON,
        truncation=Truncation("max_total", 4),
    ))
    gen = build_classical_generator(spec)
    import ultradeco.stochastic as st
    old = st.DEFAULT_EVENT_CAP
    st.DEFAULT_EVENT_CAP = 200
    try:
        with pytest.raises(RuntimeError, match="event cap"):
            ensemble_statistics(gen, (0,), 2, 1e9, master_seed=1, burn_in=0.5)
    finally:
        st.DEFAULT_EVENT_CAP = old


def test_default_burn_in_uses_slowest_rate():
    gen = build_classical_generator(_chain_spec(3, 0.6, 2.0, eta0=0.25, theta_last=0.6))
    assert default_burn_in(gen) == pytest.approx(10.0 / 0.25)


# ---------------------------------------------------------------------------
# matrix solvers
# ---------------------------------------------------------------------------

def test_solve_master_two_state_relaxation():
    a, b = 1.0, 2.0
    q = np.array([[-a, b], [a, -b]])
    p0 = np.array([1.0, 0.0])
    t = np.linspace(0.0, 5.0, 21)
    sol = solve_master(q, p0, t)
    p_inf = np.array([b, a]) / (a + b)
    expected = p_inf[None, :] + (p0 - p_inf)[None, :] * np.exp(-(a + b) * t)[:, None]
    assert np.allclose(sol, expected, atol=1e-6)
    assert np.allclose(sol.sum(axis=1), 1.0, atol=1e-9)


def test_solve_master_shape_guard():
    with pytest.raises(ValueError):
        solve_master(np.zeros((2, 2)), np.zeros(3), [0.0, 1.0])


def test_stationary_distribution_two_state():
    q = np.array([[-1.0, 2.0], [1.0, -2.0]])
    p = stationary_distribution(q)
    assert np.allclose(p, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_stationary_distribution_disconnected_raises():
    q = np.zeros((4, 4))
    q[0, 1] = q[1, 0] = 1.0
    q[2, 3] = q[3, 2] = 1.0
    np.fill_diagonal(q, -q.sum(axis=0))
    with pytest.raises(ValueError, match="communicating classes"):
        stationary_distribution(q)


def test_stationary_matches_long_time_integration():
    gen, space, q, p_star, _ = _fermion_transport_setup()
    p0 = np.zeros(space.size)
    p0[space.rank((0, 0, 0))] = 1.0
    sol = solve_master(q, p0, np.array([0.0, 200.0]))
    assert np.allclose(sol[-1], p_star, atol=1e-7)


# ---------------------------------------------------------------------------
# sample sets and KS helpers
# ---------------------------------------------------------------------------

def test_sampleset_statistics_and_csv(tmp_path):
    s = SampleSet(np.array([1.0, 2.0, 3.0, 4.0]), censored=0)
    assert s.mean() == pytest.approx(2.5)
    assert s.variance() == pytest.approx(np.var([1, 2, 3, 4], ddof=1))
    p = tmp_path / "vals.csv"
    s.to_csv(p, header_comment="seed=7")
    lines = p.read_text().splitlines()
    assert lines[0] == "# seed=7"
    assert lines[1] == "value"
    assert [float(x) for x in lines[2:]] == [1.0, 2.0, 3.0, 4.0]
    hp = tmp_path / "hist.csv"
    s.histogram_to_csv(hp, bins=2, header_comment="seed=7")
    hlines = hp.read_text().splitlines()
    assert hlines[1] == "bin_lo,bin_hi,mass"
    masses = [float(row.split(",")[2]) for row in hlines[2:]]
    assert sum(masses) == pytest.approx(1.0, abs=1e-15)


def test_histogram_mass_with_censoring():
    s = SampleSet(np.array([0.5, 1.5, 2.5]), censored=7)
    _, masses = s.histogram(bins=3)
    assert masses.sum() + 7 / 10 == 1.0
    empty = SampleSet(np.array([]), censored=4)
    edges, masses = empty.histogram()
    assert masses.sum() == 0.0


def test_ks_critical_values():
    assert ks_critical_value(1, alpha=0.01) == pytest.approx(1.62762, abs=2e-4)
    assert ks_critical_value(400, alpha=0.01) == pytest.approx(1.62762 / 20.0, abs=1e-4)
    assert ks_two_sample_critical(200, 300, alpha=0.01) == pytest.approx(
        1.62762 * np.sqrt(500 / 60000), abs=1e-4)


def test_two_sample_ks_accepts_same_law():
    rng = make_rng(100, 0)
    a = -np.log1p(-rng.random(900))
    b = -np.log1p(-rng.random(1100))
    d = ks_two_sample_statistic(a, b)
    assert d < ks_two_sample_critical(900, 1100, alpha=0.01)


def test_two_sample_ks_rejects_different_law():
    rng = make_rng(101, 0)
    a = -np.log1p(-rng.random(2000))
    b = -2.0 * np.log1p(-rng.random(2000))
    d = ks_two_sample_statistic(a, b)
    assert d > ks_two_sample_critical(2000, 2000, alpha=0.01)
