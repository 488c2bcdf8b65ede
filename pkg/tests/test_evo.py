import itertools

import numpy as np
import pytest

from builders import chain_instance
from oracles import pareto_set
from vnfpp import qos
from vnfpp.encoding import NONE, decode
from vnfpp.errors import InvalidParameterError
from vnfpp.evo import (
    NSGA2Selection,
    OptimizerConfig,
    crowding_distance,
    fast_nondominated_sort,
    initialize_population,
    mutate,
    run_optimizer,
    uniform_crossover,
)
from vnfpp.hypervolume import nondominated_mask
from vnfpp.topology import build_fat_tree
from vnfpp.workload import generate_instance


@pytest.fixture(scope="module")
def small_instance():
    return generate_instance(build_fat_tree(2, 4), 0.5, seed=3)


def test_initializer_counts(k4_instance):
    pop = initialize_population(k4_instance, 100, 0)
    counts = [np.bincount(g[g >= 0], minlength=k4_instance.n_services) for g in pop]
    for i, c in enumerate(counts, start=1):
        want = (i * 48) // (100 * k4_instance.total_chain_length)
        assert (c == want).all()
    assert not pop[0][pop[0] >= 0].size or counts[0].min() >= 0
    ph = decode(pop[0], k4_instance)
    assert ph.instance_counts.min() >= 1


def test_initializer_reproducible(k4_instance):
    a = initialize_population(k4_instance, 10, 5)
    b = initialize_population(k4_instance, 10, 5)
    assert all((x == y).all() for x, y in zip(a, b))


def test_crossover_properties():
    rng = np.random.default_rng(0)
    g1, g2 = rng.integers(-1, 4, 50), rng.integers(-1, 4, 50)
    c1, c2 = uniform_crossover(g1, g2, 0.0, rng)
    assert (c1 == g1).all() and (c2 == g2).all()
    c1, c2 = uniform_crossover(g1, g1, 1.0, rng)
    assert (c1 == g1).all() and (c2 == g1).all()
    for _ in range(20):
        c1, c2 = uniform_crossover(g1, g2, 1.0, rng)
        pairs = {tuple(sorted(p)) for p in zip(c1, c2)}
        assert all(sorted((a, b)) == sorted(p) for a, b, p in zip(g1, g2, zip(c1, c2)))
        assert pairs
    with pytest.raises(InvalidParameterError):
        uniform_crossover(g1, g2[:-1], 0.5, rng)


def test_mutation_properties():
    rng = np.random.default_rng(1)
    g = rng.integers(-1, 4, 100)
    assert (mutate(g, 0.0, rng, NONE, 3) == g).all()
    total = same = 0
    for _ in range(1000):
        m = mutate(g, 1.0, rng, NONE, 3)
        assert m.shape == g.shape
        same += int((m == g).sum())
        total += g.size
    p = same / total  # 10^5 resampled slots
    assert abs(p - 1 / 5) < 4 * np.sqrt(0.2 * 0.8 / total)
    with pytest.raises(InvalidParameterError):
        mutate(g, 1.5, rng, NONE, 3)


def test_sorting_and_crowding():
    f = np.array([[1, 4], [2, 3], [3, 2], [2, 5], [4, 4]], dtype=float)
    fronts = fast_nondominated_sort(f)
    assert [sorted(fr.tolist()) for fr in fronts] == [[0, 1, 2], [3, 4]]
    cd = crowding_distance(f[[0, 1, 2]])
    assert np.isinf(cd[0]) and np.isinf(cd[2]) and cd[1] == pytest.approx(2.0)


def test_selection_scale_invariant():
    rng = np.random.default_rng(4)
    f = rng.random((60, 3))
    v = np.zeros(60)
    sel = NSGA2Selection()
    base = set(sel.survive(f, v, 25).tolist())
    assert set(sel.survive(f * [3.0, 0.01, 250.0], v, 25).tolist()) == base


def test_feasible_before_infeasible():
    f = np.array([[5.0, 5.0], [np.inf, np.inf], [np.inf, np.inf], [1.0, 1.0]])
    v = np.array([0.0, 2.0, 1.0, 0.0])
    assert NSGA2Selection().survive(f, v, 3).tolist() == [3, 0, 2]


def test_zero_generations_gives_initial_front(small_instance):
    res = run_optimizer(small_instance, OptimizerConfig(population_size=20, generations=0, seed=2))
    f = np.array([c.objectives for c in res.population])
    want = pareto_set(f[nondominated_mask(f)])
    assert pareto_set(res.archive_objectives()) == want


def test_deterministic_and_nondominated_archive(small_instance):
    cfg = OptimizerConfig(population_size=16, generations=6, seed=9)
    a, b = run_optimizer(small_instance, cfg), run_optimizer(small_instance, cfg)
    np.testing.assert_array_equal(a.archive_objectives(), b.archive_objectives())
    f = a.archive_objectives()
    for i, j in itertools.permutations(range(len(f)), 2):
        assert not (np.all(f[i] <= f[j]) and np.any(f[i] < f[j]))


def test_elitism(small_instance):
    res = run_optimizer(small_instance, OptimizerConfig(population_size=16, generations=12, seed=1))
    best = np.array(res.best_per_generation)
    assert best.shape == (13, 3)
    assert np.all(np.diff(best, axis=0) <= 1e-12)


def test_surrogate_evaluator_archive_uses_model(small_instance):
    res = run_optimizer(small_instance, OptimizerConfig(population_size=10, generations=2, evaluator="plus"))
    for c in res.archive:
        assert tuple(c.objectives) == pytest.approx(tuple(qos.evaluate_objectives(small_instance, c.phenotype)))


def test_direct_representation_runs(small_instance):
    res = run_optimizer(small_instance, OptimizerConfig(population_size=10, generations=3, representation="direct"))
    assert all(c.feasible for c in res.archive)
    assert len(res.population) == 10


def test_nonconvergent_candidates_are_flagged(small_instance, monkeypatch):
    from vnfpp import evo
    from vnfpp.errors import ConvergenceError

    real = evo.make_evaluator

    def flaky(name, delta=5.0, patience=10):
        inner = real(name, delta, patience)

        def run(inst, ph):
            if ph.instance_counts.sum() % 2:
                raise ConvergenceError("stuck", None)
            return inner(inst, ph)

        return run

    monkeypatch.setattr(evo, "make_evaluator", flaky)
    res = run_optimizer(small_instance, OptimizerConfig(population_size=12, generations=2, seed=4))
    stuck = [c for c in res.population if c.status == "nonconvergent"]
    assert all(np.isinf(c.objectives).all() and not c.feasible for c in stuck)
    assert all(c.phenotype.instance_counts.sum() % 2 == 0 for c in res.archive)


def test_tiny_instance_finds_min_energy():
    topo = build_fat_tree(2, 2)
    inst, _ = chain_instance(topo, [(0,)], rates=[8.0])
    best = min(
        qos.evaluate_objectives(inst, decode(np.array(g), inst)).energy
        for g in itertools.product(range(-1, 1), repeat=4)
    )
    res = run_optimizer(inst, OptimizerConfig(population_size=10, generations=10))
    assert res.archive_objectives()[:, 2].min() == pytest.approx(best)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(population_size=1)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(crossover_rate=2)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(generations=-1)
