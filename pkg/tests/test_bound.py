import math

import numpy as np
import pytest

from coordcert.bound import (EQ1_QUANTUM, Cell, _best, coordination_bound, grid_points,
                             perfect_coordination_certificate, witness_moment_matrix, witness_operators,
                             witness_report)
from coordcert.inflation import build_moment_problem, fig2_inflation


def test_witness_operators_commute_where_required():
    ops = witness_operators()
    spec = fig2_inflation()
    for x in "ABCD":
        assert ops[x] @ ops[x] == pytest.approx(ops[x])
        for y in "ABCD":
            if spec.compatible(x, y):
                assert ops[x] @ ops[y] == pytest.approx(ops[y] @ ops[x])
    assert np.abs(ops["A"] @ ops["C"] - ops["C"] @ ops["A"]).max() > 0.1


@pytest.mark.parametrize("level", [1, 2])
def test_witness_is_feasible_and_tight(level):
    rep = witness_report(level)
    assert rep.feasibility.feasible
    assert rep.value == pytest.approx(EQ1_QUANTUM, abs=1e-9)


def test_witness_complex_embedding():
    mp = build_moment_problem(level=1, complex_moments=True)
    m = witness_moment_matrix(mp.index, complex_moments=True)
    assert m.shape == (10, 10)
    assert witness_report(1, complex_moments=True).feasibility.feasible


def test_grid_points():
    pts = grid_points(0.5)
    assert len(pts) == 25 and (-1.0, -1.0) in pts and (0.0, 0.5) in pts
    local = grid_points(0.25, (0.9, 0.0), 0.5)
    assert max(a for a, _ in local) == 0.9  # 1.15 lies outside and is dropped
    assert all(-1 <= a <= 1 for a, _ in local)
    with pytest.raises(ValueError):
        grid_points(0)


def test_best_prefers_origin_on_ties():
    cells = [Cell(0.5, 0.5, "optimal", 2.0, 2.0, 1), Cell(0.0, 0.0, "optimal", 2.0 - 1e-8, 2.0, 1),
             Cell(0.1, 0.0, "max-iterations", 5.0, 5.0, 1)]
    assert (_best(cells).alpha, _best(cells).delta) == (0.0, 0.0)
    assert _best([cells[2]]) is None


def test_coarse_level1_bound():
    res = coordination_bound(level=1, grid_step=0.5, refine_step=0.25, refine_radius=0.25)
    assert EQ1_QUANTUM - 1e-7 <= res.bound < 3
    assert (res.alpha, res.delta) == (0.0, 0.0)
    assert res.witness.value <= res.bound + 1e-6
    assert len(res.table()) == len(res.cells)
    assert res.as_dict()["level"] == 1


def test_perfect_coordination_is_refuted():
    cert = perfect_coordination_certificate(level=1)
    assert cert is not None and cert.valid and cert.margin > 1e-9


def test_bound_rejects_level_zero():
    with pytest.raises(ValueError):
        coordination_bound(level=0)


def test_constant_is_three_root_three_over_two():
    assert EQ1_QUANTUM == pytest.approx(3 * math.sqrt(3) / 2)
