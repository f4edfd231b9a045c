import itertools

import numpy as np
import pytest

from ultradeco.core import (
    ParticleStatistics,
    SystemSpec,
    Truncation,
    ValidatedSpec,
    boson_shell_size,
    enumerate_fock,
    validate_spec,
)

BOSON = ParticleStatistics.BOSON
FERMION = ParticleStatistics.FERMION
SINGLE = ParticleStatistics.SINGLE


def make_spec(n=2, statistics=SINGLE, truncation=None, **kw):
    fields = dict(
        omega=np.zeros(n),
        v=np.zeros((n, n), dtype=complex),
        gamma=np.ones(n),
        eta=np.zeros(n),
        theta=np.zeros(n),
    )
    fields.update(kw)
    return SystemSpec(n_modes=n, statistics=statistics, truncation=truncation, **fields)


def test_exchange_sign():
    assert BOSON.s == 1
    assert FERMION.s == -1
    with pytest.raises(ValueError):
        SINGLE.s
    assert SINGLE.stimulation_sign == 0


def test_validate_accepts_valid_spec():
    v = np.array([[0, 1 + 2j], [1 - 2j, 0]])
    spec = make_spec(v=v, statistics=BOSON, truncation=Truncation.max_total(3))
    out = validate_spec(spec)
    assert isinstance(out, ValidatedSpec)
    assert np.array_equal(out.v, v)
    # derived pair quantities
    spec2 = make_spec(omega=np.array([1.0, 3.0]), gamma=np.array([2.0, 4.0]))
    out2 = validate_spec(spec2)
    assert out2.omega_diff[0, 1] == -2.0
    assert out2.omega_diff[1, 0] == 2.0
    assert out2.gamma_pair[0, 1] == 3.0
    assert out2.gamma_pair[0, 0] == 0.0


def test_validate_is_idempotent():
    spec = make_spec(v=np.array([[0, 1], [1, 0]], dtype=complex))
    once = validate_spec(spec)
    twice = validate_spec(once)
    assert once == twice


def test_validate_rejects_non_hermitian():
    with pytest.raises(ValueError):
        validate_spec(make_spec(v=np.array([[0, 1j], [1j, 0]])))


def test_validate_rejects_diagonal_coupling():
    with pytest.raises(ValueError, match="diagonal coupling"):
        validate_spec(make_spec(v=np.array([[1, 0], [0, 0]], dtype=complex)))


def test_validate_rejects_negative_rate():
    with pytest.raises(ValueError, match="negative rate"):
        validate_spec(make_spec(gamma=np.array([1.0, -0.5])))
    with pytest.raises(ValueError, match="negative rate"):
        validate_spec(make_spec(eta=np.array([-1.0, 0.0])))


def test_validate_rejects_non_finite():
    with pytest.raises(ValueError):
        validate_spec(make_spec(omega=np.array([np.nan, 0.0])))
    with pytest.raises(ValueError):
        validate_spec(make_spec(theta=np.array([np.inf, 0.0])))


def test_validate_rejects_bad_shapes():
    with pytest.raises(ValueError):
        validate_spec(make_spec(omega=np.zeros(3)))
    with pytest.raises(ValueError):
        validate_spec(make_spec(v=np.zeros((3, 3), dtype=complex)))


def test_validate_truncation_policy():
    with pytest.raises(ValueError):
        validate_spec(make_spec(statistics=BOSON))  # bosons need truncation
    with pytest.raises(ValueError):
        validate_spec(make_spec(statistics=FERMION, truncation=Truncation.max_total(2)))
    with pytest.raises(ValueError):
        validate_spec(make_spec(statistics=SINGLE, truncation=Truncation.fixed_total(1)))


def test_truncation_rejects_bad_values():
    with pytest.raises(ValueError):
        Truncation("bogus", 2)
    with pytest.raises(ValueError):
        Truncation("max_total", -1)


def test_fermion_enumeration_two_modes():
    space = enumerate_fock(2, FERMION)
    assert space.size == 4
    assert [space.unrank(i) for i in range(4)] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_fermion_enumeration_counts():
    for n in (1, 2, 3, 5, 8):
        assert enumerate_fock(n, FERMION).size == 2 ** n


def test_boson_fixed_total_matches_brute_force():
    n, m = 3, 2
    space = enumerate_fock(n, BOSON, Truncation.fixed_total(m))
    brute = sorted(t for t in itertools.product(range(m + 1), repeat=n) if sum(t) == m)
    assert space.size == 6
    assert space.size == boson_shell_size(n, m)
    assert [space.unrank(i) for i in range(space.size)] == brute


def test_boson_max_total_shell_structure():
    space = enumerate_fock(2, BOSON, Truncation.max_total(3))
    totals = space.totals()
    assert np.all(np.diff(totals) >= 0)  # shells ascending
    assert space.size == sum(boson_shell_size(2, m) for m in range(4))
    assert space.unrank(0) == (0, 0)
    # lexicographic inside each shell
    for m in range(4):
        shell = [space.unrank(i) for i in range(space.size) if totals[i] == m]
        assert shell == sorted(shell)


def test_single_particle_enumeration_is_mode_ordered():
    space = enumerate_fock(3, SINGLE)
    assert [space.unrank(i) for i in range(3)] == [(1, 0, 0), (0, 1, 0), (0, 0, 1)]


def test_rank_unrank_roundtrip_random_spaces():
    rng = np.random.default_rng(1234)
    checked = 0
    for _ in range(150):
        kind = rng.integers(3)
        if kind == 0:
            n = int(rng.integers(1, 7))
            space = enumerate_fock(n, FERMION)
        elif kind == 1:
            n = int(rng.integers(1, 5))
            m = int(rng.integers(0, 5))
            tr = Truncation.fixed_total(m) if rng.integers(2) else Truncation.max_total(m)
            space = enumerate_fock(n, BOSON, tr)
        else:
            n = int(rng.integers(1, 9))
            space = enumerate_fock(n, SINGLE)
        for i in range(space.size):
            assert space.rank(space.unrank(i)) == i
            checked += 1
    assert checked >= 1000


def test_enumeration_is_deterministic():
    a = enumerate_fock(4, BOSON, Truncation.max_total(3))
    b = enumerate_fock(4, BOSON, Truncation.max_total(3))
    assert np.array_equal(a.states, b.states)


def test_rank_rejects_foreign_states():
    space = enumerate_fock(2, FERMION)
    with pytest.raises(ValueError):
        space.rank((2, 0))
    with pytest.raises(ValueError):
        space.rank((-1, 1))
    space_b = enumerate_fock(2, BOSON, Truncation.fixed_total(2))
    with pytest.raises(ValueError):
        space_b.rank((1, 0))  # wrong total
    with pytest.raises(ValueError):
        space_b.unrank(17)


def test_spec_json_roundtrip():
    v = np.array([[0, 0.5 - 0.25j], [0.5 + 0.25j, 0]])
    spec = make_spec(
        v=v, omega=np.array([0.1, -0.2]), gamma=np.array([3.0, 4.0]),
        eta=np.array([0.0, 0.1]), theta=np.array([0.2, 0.0]),
        statistics=BOSON, truncation=Truncation.max_total(5),
    )
    back = SystemSpec.from_json(spec.to_json())
    assert back == spec
    single = make_spec()
    assert SystemSpec.from_json(single.to_json()) == single


def test_spec_json_rejects_unknown_and_missing_keys():
    doc = make_spec().to_json()
    doc["extra"] = 1
    with pytest.raises(ValueError, match="unknown"):
        SystemSpec.from_json(doc)
    doc2 = make_spec().to_json()
    del doc2["gamma"]
    with pytest.raises(ValueError, match="missing"):
        SystemSpec.from_json(doc2)
    doc3 = make_spec().to_json()
    doc3["statistics"] = "anyon"
    with pytest.raises(ValueError, match="statistics"):
        SystemSpec.from_json(doc3)
