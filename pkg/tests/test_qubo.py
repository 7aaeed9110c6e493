import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from teamform import model, qubo
from teamform.errors import DimensionError, VariantError
from teamform.model import ExpertPool, LinearCost, MaxKCover, ProblemInstance, SkillUniverse, Task
from teamform.qubo import PenaltyParams

from conftest import all_assignments, random_instance


def test_penalty_params_positive():
    with pytest.raises(ValueError):
        PenaltyParams(0.0, 1.0)
    with pytest.raises(ValueError):
        PenaltyParams(1.0, -2.0)


def test_penalty_grid_spans_range():
    g = qubo.penalty_grid()
    assert len(g) == 4
    assert_allclose([g[0], g[-1]], [0.1, 100.0])
    assert np.all(np.diff(np.log10(g)) > 0)


def test_c_vector_linear():
    pool = ExpertPool((frozenset({0}), frozenset({1})), 3)
    inst = ProblemInstance(pool, SkillUniverse.of_size(3), Task(frozenset({0, 2})), LinearCost([4, 7]), 10.0)
    assert_array_equal(qubo.build_c_vector(inst), [10, 0, 10, -4, -7])


def test_c_vector_maxk_has_no_cost_block():
    pool = ExpertPool((frozenset({0}), frozenset({1})), 2)
    inst = ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({1})), MaxKCover(1))
    assert_array_equal(qubo.build_c_vector(inst), [0, 50, 0, 0])


def test_q_is_symmetric_and_sized(rng):
    for variant in ("maxk", "linear", "graph"):
        inst = random_instance(rng, 4, 5, variant)
        q = qubo.build_q(inst, PenaltyParams(2.0, 3.0))
        assert q.q.shape == (9, 9)
        assert_allclose(q.q, q.q.T)


def test_cardinality_penalty_rejects_other_variants(rng):
    inst = random_instance(rng, 3, 3, "linear")
    with pytest.raises(VariantError):
        qubo.build_cardinality_penalty(inst, PenaltyParams())


def test_cardinality_penalty_scalar_identity(rng):
    inst = random_instance(rng, 3, 5, "maxk", k=2)
    params = PenaltyParams(1.5, 4.0)
    pk, const = qubo.build_cardinality_penalty(inst, params)
    for x in all_assignments(5):
        y = np.concatenate([rng.integers(0, 2, 3), x])
        h = 2 - x.sum()
        assert y @ pk @ y + const == pytest.approx(-1.5 * h + 4.0 * h * h, abs=1e-9)


def test_coverage_penalty_scalar_identity(rng):
    inst = random_instance(rng, 4, 5, "linear")
    params = PenaltyParams(0.7, 3.0)
    p1, p2 = qubo.build_coverage_penalties(inst, params)
    member = inst.pool.membership
    for _ in range(100):
        y = rng.integers(0, 2, 9)
        s, x = y[:4], y[4:]
        expected = 0.0
        for j in range(4):
            h = sum(member[i, j] * x[i] for i in range(5)) - s[j]
            expected += -0.7 * h + 3.0 * h * h
        assert y @ (-p1 + p2) @ y == pytest.approx(expected, abs=1e-9)


def test_required_only_drops_unrequired_rows(rng):
    inst = random_instance(rng, 5, 4, "linear")
    rows = qubo.coverage_constraint_rows(inst, required_only=True)
    assert rows.shape == (len(inst.task.required), 9)


def test_graph_objective_matrix_identity(rng):
    inst = random_instance(rng, 4, 6, "graph")
    d_hat = qubo.build_objective_matrix(inst)
    d = inst.variant.graph.distance
    for _ in range(100):
        y = rng.integers(0, 2, 10)
        s, x = y[:4], y[4:]
        pairs = sum(d[i, j] for i in range(6) for j in range(i + 1, 6) if x[i] and x[j])
        req = sum(s[j] for j in inst.task.required)
        assert y @ d_hat @ y == pytest.approx(inst.lam * req - pairs, abs=1e-9)


def test_energy_dimension_check(rng):
    q = qubo.build_q(random_instance(rng, 3, 3, "linear"))
    with pytest.raises(DimensionError):
        qubo.energy(q, np.zeros(5))


def test_energies_matches_energy(rng):
    q = qubo.build_q(random_instance(rng, 3, 4, "maxk", k=2))
    ys = all_assignments(7)
    assert_allclose(qubo.energies(q, ys), [qubo.energy(q, y) for y in ys])


def test_decode_takes_expert_block(rng):
    inst = random_instance(rng, 3, 3, "linear")
    x = qubo.decode_and_repair(inst, np.array([1, 1, 1, 0, 1, 0]))
    assert_array_equal(x.x, [0, 1, 0])
    with pytest.raises(DimensionError):
        qubo.decode_and_repair(inst, np.zeros(4))


def test_encode_roundtrip(rng):
    inst = random_instance(rng, 4, 5, "graph")
    for x in all_assignments(5):
        assert_array_equal(qubo.decode_and_repair(inst, qubo.encode(inst, x)).x, x)


def test_qubo_file_roundtrip(tmp_path, rng):
    q = qubo.build_q(random_instance(rng, 3, 4, "maxk", k=2), PenaltyParams(0.3, 7.0))
    path = tmp_path / "a.qubo"
    qubo.write_qubo(q, path)
    assert qubo.read_qubo(path) == q


def test_read_qubo_rejects_truncated(tmp_path):
    path = tmp_path / "bad.qubo"
    path.write_text("1 1 linear\n0 0\n", encoding="utf-8")
    with pytest.raises((ValueError, IndexError)):
        qubo.read_qubo(path)


def test_feasible_encoded_energy_tracks_objective_for_linear(rng):
    # with y = encode(x) every coverage row is satisfied, so energy + penalties = -F
    inst = random_instance(rng, 4, 5, "linear")
    params = PenaltyParams(1.0, 10.0)
    q = qubo.build_q(inst, params)
    for x in all_assignments(5):
        y = qubo.encode(inst, x)
        e = qubo.energy(q, y) - qubo.penalty_value(inst, params, y)
        assert e == pytest.approx(-model.objective(inst, x), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.sampled_from(["maxk", "linear", "graph"]),
    st.floats(0.1, 100),
    st.floats(0.1, 100),
    st.booleans(),
)
def test_energy_is_objective_plus_penalty(seed, variant, p1, p2, required_only):
    rng = np.random.default_rng(seed)
    inst = random_instance(rng, 4, 5, variant)
    params = PenaltyParams(p1, p2)
    q = qubo.build_q(inst, params, required_only)
    y = rng.integers(0, 2, 9)
    s, x = y[:4], y[4:]
    obj = inst.lam * float(s[inst.required_mask()].sum())
    if variant == "linear":
        obj -= float(inst.variant.kappa @ x)
    elif variant == "graph":
        obj -= float(x @ inst.variant.graph.distance @ x) / 2
    expected = -obj + qubo.penalty_value(inst, params, y, required_only)
    assert qubo.energy(q, y) == pytest.approx(expected, rel=1e-9, abs=1e-9)
