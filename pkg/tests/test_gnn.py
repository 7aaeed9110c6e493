import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from teamform import gnn, qubo
from teamform.errors import DimensionError
from teamform.model import (
    CoordinationGraph,
    ExpertPool,
    GraphCost,
    ProblemInstance,
    SkillUniverse,
    Task,
)
from teamform.qubo import PenaltyParams

from conftest import all_assignments, random_instance

FAST = dict(max_epochs=60, early_stop_patience=60)


def five_node_instance():
    # 2 skills + 3 experts, graph cost so both relations are present
    pool = ExpertPool((frozenset({0}), frozenset({1}), frozenset({0, 1})), 2)
    d = np.array([[0, 0.3, 0.8], [0.3, 0, 0.5], [0.8, 0.5, 0]])
    return ProblemInstance(pool, SkillUniverse.of_size(2), Task(frozenset({0, 1})), GraphCost(CoordinationGraph(d)), 5.0)


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def check_gradients(inst, bn_mode, aggregation, relaxation="multilinear"):
    graph = gnn.build_graph(inst)
    aggs = graph.aggregations(aggregation)
    rng = np.random.default_rng(3)
    params = gnn.init_params(graph.size, 4, 3, graph.relations, rng)
    params["beta"] = params["beta"] + 0.5  # keep ReLU units away from their kink
    q = qubo.build_q(inst, PenaltyParams(1.0, 2.0)).q
    stats = (rng.normal(size=3), rng.uniform(0.5, 2.0, 3)) if bn_mode == "running" else None
    _, grads, _ = gnn.loss_and_grads(params, aggs, graph.relations, q, 1.5, bn_mode=bn_mode, stats=stats,
                                     relaxation=relaxation)
    h = 1e-6
    for key, value in params.items():
        fd = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            saved = value[idx]
            value[idx] = saved + h
            up, _, _ = gnn.loss_and_grads(params, aggs, graph.relations, q, 1.5, bn_mode=bn_mode, stats=stats,
                                     relaxation=relaxation)
            value[idx] = saved - h
            down, _, _ = gnn.loss_and_grads(params, aggs, graph.relations, q, 1.5, bn_mode=bn_mode, stats=stats,
                                     relaxation=relaxation)
            value[idx] = saved
            fd[idx] = (up - down) / (2 * h)
        assert relative_error(grads[key], fd) < 1e-4, key


@pytest.mark.parametrize("aggregation", ["gcn", "sum"])
def test_gradients_frozen_batchnorm(aggregation):
    check_gradients(five_node_instance(), "running", aggregation)


def test_gradients_batch_statistics():
    check_gradients(five_node_instance(), "batch", "gcn")


def test_gradients_quadratic_relaxation():
    check_gradients(five_node_instance(), "running", "gcn", "quadratic")


def test_relaxations_agree_on_binary_points(rng):
    inst = random_instance(rng, 3, 4, "linear")
    q = qubo.build_q(inst, PenaltyParams(1.0, 5.0))
    for y in all_assignments(7):
        e = qubo.energy(q, y) - q.constant
        assert gnn.loss(y, q, 2.0) == pytest.approx(e, abs=1e-9)
        assert gnn.loss(y, q, 2.0, "quadratic") == pytest.approx(e, abs=1e-9)
    pi = rng.uniform(0, 1, 7)
    d = np.diag(q.q)
    gap = gnn.loss(pi, q, 2.0) - gnn.loss(pi, q, 2.0, "quadratic")
    assert gap == pytest.approx(d @ (pi * (1 - pi)), abs=1e-9)


def test_graph_structure():
    inst = five_node_instance()
    g = gnn.build_graph(inst)
    assert g.relations == ("skill_expert", "expert_expert")
    a = g.aggregation("skill_expert")
    # expert 2 (node 4) holds both skills
    assert a[0, 4] == a[4, 0] == 1 and a[1, 4] == 1 and a[0, 3] == 0
    assert_allclose(np.diag(a), 1)
    ee = g.aggregation("expert_expert")
    assert ee[2, 3] == pytest.approx(0.3) and ee[0, 1] == 0


def test_gcn_normalisation_rows():
    g = gnn.build_graph(five_node_instance())
    raw = g.aggregations("sum")
    norm = g.aggregations("gcn")
    for a, b in zip(raw, norm):
        d = a.sum(axis=1)
        assert_allclose(b, a / np.sqrt(np.outer(d, d)))
        assert_allclose(b, b.T)
    with pytest.raises(ValueError):
        g.aggregations("mean")


def test_non_graph_variants_have_one_relation(rng):
    for variant in ("maxk", "linear"):
        assert gnn.build_graph(random_instance(rng, 3, 4, variant)).relations == ("skill_expert",)


def test_config_validation():
    with pytest.raises(ValueError):
        gnn.GnnConfig(dropout=1.0)
    with pytest.raises(ValueError):
        gnn.GnnConfig(optimizer="sgd")
    with pytest.raises(ValueError):
        gnn.GnnConfig(relaxation="cubic")
    assert gnn.GnnConfig().sizes(20) == (10, 5)
    assert gnn.GnnConfig(d0=3, dh=2).sizes(20) == (3, 2)


def test_loss_dimension_check(rng):
    q = qubo.build_q(random_instance(rng, 3, 3, "linear"))
    with pytest.raises(DimensionError):
        gnn.loss(np.zeros(4), q, 1.0)
    assert gnn.loss(np.zeros(6), q, 1.0) == 0.0


def test_training_is_deterministic_and_inference_pure():
    inst = five_node_instance()
    q = qubo.build_q(inst)
    cfg = gnn.GnnConfig(seed=5, **FAST)
    a = gnn.train(inst, q, cfg)
    b = gnn.train(inst, q, cfg)
    assert a.same_as(b)
    graph = gnn.build_graph(inst)
    assert_array_equal(gnn.forward(a, graph), gnn.forward(a, graph))
    assert_array_equal(a.final_pi, gnn.forward(a, graph))


def test_forward_rejects_mismatched_graph(rng):
    inst = five_node_instance()
    model = gnn.train(inst, qubo.build_q(inst), gnn.GnnConfig(**FAST))
    with pytest.raises(DimensionError):
        gnn.forward(model, gnn.build_graph(random_instance(rng, 3, 4, "graph")))


def test_training_lowers_the_loss(rng):
    inst = random_instance(rng, 5, 6, "linear", min_skills=1)
    q = qubo.build_q(inst, PenaltyParams(10.0, 10.0), required_only=True)
    cfg = gnn.GnnConfig.for_variant("linear", seed=0)
    graph = gnn.build_graph(inst)
    untrained = gnn.train(inst, q, gnn.GnnConfig.for_variant("linear", seed=0, max_epochs=1))
    trained = gnn.train(inst, q, cfg)
    assert gnn.loss(gnn.forward(trained, graph), q, cfg.alpha) < gnn.loss(gnn.forward(untrained, graph), q, cfg.alpha)


def test_stronger_regulariser_gives_more_binary_output(rng):
    inst = random_instance(rng, 5, 6, "linear", min_skills=1)
    q = qubo.build_q(inst, PenaltyParams(1.0, 1.0), required_only=True)
    spread = []
    for alpha in (0.1, 1.0, 10.0):
        pi = gnn.train(inst, q, gnn.GnnConfig.for_variant("linear", alpha=alpha, seed=0)).final_pi
        spread.append(float(np.sum(pi * (1 - pi))))
    assert spread[0] >= spread[1] >= spread[2]


def test_round_relaxation():
    assert_array_equal(gnn.round_relaxation([0.2, 0.5, 0.9]), [0, 1, 1])


def test_grid_search_prefers_smallest_on_ties(rng):
    inst = random_instance(rng, 3, 4, "maxk", k=2)
    params, model = gnn.grid_search(inst, gnn.GnnConfig.for_variant("maxk", **FAST), [5.0, 1.0], [2.0])
    res = gnn.evaluate(model, inst)
    assert params.p2 == 2.0
    # no single point strictly beats the returned one
    for p1 in (1.0, 5.0):
        q = qubo.build_q(inst, PenaltyParams(p1, 2.0))
        other = gnn.evaluate(gnn.train(inst, q, gnn.GnnConfig.for_variant("maxk", **FAST)), inst, q)
        assert other.objective <= res.objective
    with pytest.raises(ValueError):
        gnn.grid_search(inst, p1_grid=[])


def test_most_similar_and_transfer(rng):
    inst = random_instance(rng, 4, 5, "linear")
    models = []
    for required in ({0, 1}, {2, 3}):
        task_inst = inst.with_task(Task(frozenset(required), str(required)))
        models.append(gnn.train(task_inst, qubo.build_q(task_inst), gnn.GnnConfig(**FAST)))
    new = Task(frozenset({2, 3, 1}), "new")
    assert gnn.most_similar(models, new) == 1
    sim = gnn.transfer_sim(models, new, inst)
    assert sim.solver_name == "gnn-sim"
    assert sim.same_solution(gnn.evaluate(models[1], inst.with_task(new), name="gnn-sim"))
    rand = gnn.transfer_rand(models, new, inst, seed=0, sample=2)
    assert rand.objective >= sim.objective
    with pytest.raises(ValueError):
        gnn.most_similar([], new)


def test_save_load_roundtrip(tmp_path):
    inst = five_node_instance()
    model = gnn.train(inst, qubo.build_q(inst), gnn.GnnConfig(**FAST))
    path = tmp_path / "m.npz"
    gnn.save_model(model, path)
    assert gnn.load_model(path).same_as(model)


def test_export_embeddings(tmp_path):
    inst = five_node_instance()
    model = gnn.train(inst, qubo.build_q(inst), gnn.GnnConfig(d0=3, **FAST))
    path = tmp_path / "emb.txt"
    gnn.export_embeddings(model, path, ["a", "b"], ["x", "y", "z"])
    lines = path.read_text().splitlines()
    assert len(lines) == 5
    first = lines[0].split()
    assert first[:2] == ["a", "skill"] and len(first) == 5
    assert lines[2].split()[:2] == ["x", "expert"]
    assert_allclose([float(v) for v in first[2:]], model.h0[0])
