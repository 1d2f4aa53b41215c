import numpy as np
import pytest

from coordcert.circuit import fig1_circuit
from coordcert.quantum import Behavior, QuantumRealization, WireGraph, is_unitary, shared_random_bit, simulate
from coordcert.search import PureModel, cayley, coordination_score, max_coordination_search, smoothed_tv

from netgen import random_circuit


def test_score_of_shared_bit_and_uniform():
    assert coordination_score(shared_random_bit()) == pytest.approx(1.0)
    assert coordination_score(Behavior("ABCD", np.full((2,) * 4, 1 / 16))) == pytest.approx(1 / 8)


def test_smoothed_tv_limits():
    p = np.random.default_rng(0).dirichlet(np.ones(16)).reshape((2,) * 4)
    tv = 1 - coordination_score(Behavior("ABCD", p))
    val, grad = smoothed_tv(p, 1e-9)
    assert val == pytest.approx(tv, abs=1e-7)
    assert smoothed_tv(p, 1e-2)[0] > tv
    h = 1e-6
    q = p.copy()
    q[1, 0, 1, 0] += h
    assert (smoothed_tv(q, 1e-3)[0] - smoothed_tv(p, 1e-3)[0]) / h == pytest.approx(grad[1, 0, 1, 0], rel=1e-4)


def test_cayley_is_unitary():
    rng = np.random.default_rng(1)
    for n in (1, 2, 4):
        u, _ = cayley(rng.normal(size=n * n), n)
        assert is_unitary(u)


def _check_gradient(circuit, dims, ranks, seed, n_checks=12):
    model = PureModel(circuit, dims, ranks, lambda p: smoothed_tv(p, 1e-2))
    rng = np.random.default_rng(seed)
    x = rng.normal(size=model.n_params)
    _, g = model.loss_and_grad(x)
    h = 1e-6
    for i in rng.choice(model.n_params, size=min(n_checks, model.n_params), replace=False):
        e = np.zeros_like(x)
        e[i] = h
        fd = (model.loss_and_grad(x + e)[0] - model.loss_and_grad(x - e)[0]) / (2 * h)
        assert g[i] == pytest.approx(fd, abs=1e-6, rel=1e-4)


def test_gradient_matches_finite_differences_fig1():
    c = fig1_circuit()
    g = WireGraph.from_circuit(c)
    _check_gradient(c, {w: 2 for w in g.dims}, {"A": 3, "B": 1, "C": 2, "D": 2}, 0)


@pytest.mark.parametrize("seed", range(4))
def test_gradient_matches_finite_differences_random(seed):
    rng = np.random.default_rng(seed)
    c = random_circuit(rng, max_wires=4)
    g = WireGraph.from_circuit(c)
    ranks = {m: int(rng.integers(1, 2 ** len(g.in_wires(m)))) for m in c.measurements}
    _check_gradient(c, {w: 2 for w in g.dims}, ranks, seed)


def test_model_realization_matches_its_loss():
    c = fig1_circuit()
    g = WireGraph.from_circuit(c)
    model = PureModel(c, {w: 2 for w in g.dims}, {"A": 1, "B": 2, "C": 3, "D": 1})
    x = np.random.default_rng(2).normal(size=model.n_params)
    real = model.realization(x)
    assert isinstance(real, QuantumRealization)
    p = simulate(c, real).probs
    val, _ = model.loss_and_grad(x)
    assert val == pytest.approx(smoothed_tv(p)[0], abs=1e-10)


def test_small_search_is_deterministic_and_bounded():
    a = max_coordination_search(dim=2, restarts=2, iterations=5, seed=7)
    b = max_coordination_search(dim=2, restarts=2, iterations=5, seed=7)
    assert a.scores == b.scores and a.restart == b.restart
    assert a.score == max(a.scores) < 1 - 1e-3
    assert a.score == pytest.approx(coordination_score(simulate(fig1_circuit(), a.realization)), abs=1e-12)


def test_search_rejects_bad_arguments():
    with pytest.raises(ValueError):
        max_coordination_search(dim=1)
    with pytest.raises(ValueError):
        max_coordination_search(restarts=0)
