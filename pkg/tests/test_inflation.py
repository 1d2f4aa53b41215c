import numpy as np
import pytest
from hypothesis import given, strategies as st

from coordcert.circuit import fig1_circuit, validate
from coordcert.inflation import (InflationRealization, MomentProblemError, _GlobalState, build_moment_problem,
                                 canonical_word, check_inflation, dagger, fig2_inflation, inflate_realization,
                                 inflation_moment, moment_matrix, parse_word, random_inflation_realization,
                                 selections, sos_chain_check, valid_subcircuits, word_index, word_str)
from coordcert.quantum import (QuantumRealization, computational_projectors, random_density, random_realization,
                               simulate)
from coordcert.sdp import check_feasible_point

SPEC = fig2_inflation()
COMP = SPEC.compatible


def test_structure():
    assert check_inflation(SPEC) == []
    assert SPEC.dots == {"ABC->AC": ("AC(1)", "AC(2)"), "BCD->BD": ("BD(1)", "BD(2)")}
    assert SPEC.incompatible_pairs == {("A", "C"), ("B", "D")}
    assert SPEC.source_ancestors("A") == {"ABC", "ABD(1)", "ACD(1)"}
    assert SPEC.source_ancestors("D") == {"ABD(2)", "ACD(2)", "BCD"}
    assert not SPEC.source_ancestors("A") & SPEC.source_ancestors("D")
    assert len(selections(SPEC)) == 4


def test_valid_subcircuits():
    got = {(s.selection["ABC->AC"], s.selection["BCD->BD"]): s.reproduced_pairs
           for s in valid_subcircuits(SPEC)}
    assert got == {("AC(1)", "BD(1)"): (("A", "B"),), ("AC(1)", "BD(2)"): (),
                   ("AC(2)", "BD(1)"): (("B", "C"),), ("AC(2)", "BD(2)"): (("C", "D"),)}
    for s in valid_subcircuits(SPEC):
        assert validate(s.circuit).ok


def test_word_parsing():
    assert parse_word("A0 C1") == (("A", 0), ("C", 1))
    assert parse_word("1") == ()
    assert word_str(()) == "1" and word_str(None) == "0"
    assert word_str(parse_word("D0 B0")) == "D0 B0"


def test_word_rules():
    w = parse_word
    assert canonical_word(w("A0 A0"), COMP) == w("A0")
    assert canonical_word(w("A0 A1"), COMP) is None
    assert canonical_word(w("B0 A0"), COMP) == w("A0 B0")
    assert canonical_word(w("C0 A0"), COMP) == w("C0 A0")
    # A0 B0 A0 merges because B commutes with A
    assert canonical_word(w("A0 B0 A0"), COMP) == w("A0 B0")
    # C sits between two A letters and blocks the merge
    assert canonical_word(w("A0 C0 A0"), COMP) == w("A0 C0 A0")


def test_bubble_sort_counterexample_is_resolved():
    # D B C and C D B are the same operator; adjacent sorting alone leaves them apart
    w = parse_word
    assert canonical_word(w("D0 B0 C0"), COMP) == canonical_word(w("C0 D0 B0"), COMP)


def test_index_sizes():
    letters = [(p, 0) for p in "ABCD"]
    assert len(word_index(letters, 1, COMP)) == 5
    idx = word_index(letters, 2, COMP)
    assert [word_str(x) for x in idx] == ["1", "A0", "B0", "C0", "D0", "A0 B0", "A0 C0", "A0 D0",
                                          "B0 C0", "B0 D0", "C0 A0", "C0 D0", "D0 B0"]


letters = st.tuples(st.sampled_from("ABCD"), st.integers(0, 1))
words = st.lists(letters, max_size=6)


def _rewrite(word, moves):
    """Apply operator identities: commute adjacent compatible letters or duplicate a letter."""
    w = list(word)
    for kind, pos in moves:
        if not w:
            break
        i = pos % len(w)
        if kind == 0 and i + 1 < len(w) and w[i][0] != w[i + 1][0] and COMP(w[i][0], w[i + 1][0]):
            w[i], w[i + 1] = w[i + 1], w[i]
        elif kind == 1:
            w.insert(i, w[i])
    return w


@given(words, st.lists(st.tuples(st.integers(0, 1), st.integers(0, 50)), max_size=20))
def test_canonical_word_is_confluent(word, moves):
    assert canonical_word(_rewrite(word, moves), COMP) == canonical_word(word, COMP)


@given(words)
def test_canonical_word_idempotent_and_dagger_involution(word):
    c = canonical_word(word, COMP)
    if c is not None:
        assert canonical_word(c, COMP) == c
        assert dagger(dagger(c, COMP), COMP) == c
    else:
        assert dagger(c, COMP) is None


def _alpha_delta(infl):
    a = 2 * inflation_moment(infl, (("A", 0),)).real - 1
    d = 2 * inflation_moment(infl, (("D", 0),)).real - 1
    return a, d


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("level", [1, 2])
def test_moment_matrices_of_inflations_are_feasible(seed, level):
    infl = random_inflation_realization(np.random.default_rng(seed))
    a, d = _alpha_delta(infl)
    for cm in (False, True):
        mp = build_moment_problem(level=level, alpha=a, delta=d, complex_moments=cm)
        m = moment_matrix(infl, mp.index)
        assert np.linalg.eigvalsh(m).min() >= -1e-10
        x = np.block([[m.real, -m.imag], [m.imag, m.real]]) if cm else m.real
        rep = check_feasible_point(mp.to_sdp(), x)
        assert rep.feasible, rep


def test_moment_problem_guards():
    with pytest.raises(MomentProblemError):
        build_moment_problem(level=0)
    with pytest.raises(MomentProblemError):
        build_moment_problem(alpha=1.5)
    with pytest.raises(MomentProblemError):
        build_moment_problem(fixed_correlators={"AC": 1.0})


def test_export_lists_index_and_objective():
    text = build_moment_problem(level=1).export()
    assert "size 5" in text and "objective" in text
    assert "  4 D0" in text


def test_inflated_fig1_realization_reproduces_pair_marginals():
    c = fig1_circuit()
    real = random_realization(c, np.random.default_rng(11))
    b = simulate(c, real)
    infl = inflate_realization(real)
    infl.validate()
    for x, y in ("AB", "BC", "CD"):
        got = inflation_moment(infl, ((x, 0), (y, 0)))
        assert got.real == pytest.approx(b.marginal([x, y])[0, 0], abs=1e-10)
        assert abs(got.imag) < 1e-10
    for x in "ABCD":
        assert inflation_moment(infl, ((x, 0),)).real == pytest.approx(b.marginal([x])[0], abs=1e-10)


def test_mixed_sources_match_fig1_marginals():
    c = fig1_circuit()
    rng = np.random.default_rng(5)
    real = random_realization(c, rng)
    real = real.replace(states={"ABC": random_density(8, rng, rank=2), "BCD": np.eye(8) / 8})
    b = simulate(c, real)
    infl = inflate_realization(real)
    gs = _GlobalState(infl)
    assert np.vdot(gs.psi, gs.psi).real == pytest.approx(1.0, abs=1e-10)
    for x, y in ("AB", "BC", "CD"):
        assert gs.moment(((x, 0), (y, 0))).real == pytest.approx(b.marginal([x, y])[0, 0], abs=1e-10)


# -- chained residuals ----------------------------------------------------------------

def _deterministic(outcome):
    g = SPEC.wire_graph()
    states = {}
    for s in SPEC.sources:
        psi = np.zeros(g.dim(g.out_wires(s)))
        psi[0] = 1
        states[s] = psi
    unitaries = {t: np.eye(g.dim(g.in_wires(t))) for t in SPEC.transformations}
    projectors = {}
    for m in SPEC.measurements:
        fam = computational_projectors(g.dim(g.in_wires(m)))
        projectors[m] = fam[::-1] if outcome else fam
    return InflationRealization(SPEC, QuantumRealization(states, unitaries, projectors, dict(g.dims)))


@pytest.mark.parametrize("outcome", [0, 1])
def test_deterministic_instances_are_coordinated(outcome):
    r = sos_chain_check(_deterministic(outcome))
    assert r.pairs_coordinated and r.end_to_end_within
    assert r.r_ad <= 1e-12
    assert r.independence_gap == pytest.approx(r.coordination_gap, abs=1e-8)
    assert r.p_a == pytest.approx(1 - outcome)


@pytest.mark.parametrize("seed", range(10))
def test_random_instances_respect_triangle_bound(seed):
    r = sos_chain_check(random_inflation_realization(np.random.default_rng(seed)))
    assert r.r_ad <= r.triangle_bound + 1e-9
    assert r.independence_gap <= 1e-10  # A and D share no source in the inflation
    if r.pairs_coordinated:
        assert r.independence_gap == pytest.approx(r.coordination_gap, abs=1e-8)


def test_sos_check_validates_input():
    bad = _deterministic(0)
    real = bad.realization.replace(unitaries={"AB": 2 * np.eye(4)})
    with pytest.raises(ValueError):
        sos_chain_check(InflationRealization(SPEC, real))
