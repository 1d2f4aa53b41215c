import itertools
import json

import pytest
from hypothesis import given, strategies as st

from coordcert.circuit import (MEASUREMENT, SOURCE, TRANSFORMATION, CausalCircuit, CircuitError,
                               CommonCauseError, UnknownNodeError, canonicalize, circuit_from_dict,
                               common_cause_witnesses, dumps_circuit, embed_into_canonical, fig1_circuit,
                               labels, loads_circuit, measurement_future, shares_common_cause, validate)

PARTIES = ("A", "B", "C", "D")


def test_fig1_shape():
    c = fig1_circuit()
    assert len(c.sources) == 4 and len(c.transformations) == 6 and len(c.measurements) == 4
    assert len(c.edges) == 24
    assert {w.dst for w in c.out_wires("ABC")} == {"AB", "AC", "BC"}
    assert "D" not in measurement_future(c, "ABC")
    assert validate(c).ok


def test_validate_reports_cycle_and_source_indegree():
    cyc = CausalCircuit.build([("T1", TRANSFORMATION), ("T2", TRANSFORMATION)], [("T1", "T2"), ("T2", "T1")])
    assert any("acyclic" in v for v in validate(cyc).violations)
    bad = CausalCircuit.build([("S", SOURCE), ("T", TRANSFORMATION), ("A", MEASUREMENT)],
                              [("T", "S"), ("S", "T"), ("T", "A")])
    assert any("in-degree" in v for v in validate(bad).violations)


def test_validate_duplicates_and_dangling_transformation():
    c = CausalCircuit.build([("S", SOURCE), ("S", SOURCE), ("T", TRANSFORMATION)], [("S", "T")])
    vs = validate(c).violations
    assert any("duplicate node" in v for v in vs)
    assert any("no outgoing" in v for v in vs)


@pytest.mark.parametrize("node,future", [("ABC", {"A", "B", "C"}), ("CD", {"C", "D"}), ("A", {"A"})])
def test_measurement_future(node, future):
    assert measurement_future(fig1_circuit(), node) == frozenset(future)


def test_measurement_future_unknown_node():
    with pytest.raises(UnknownNodeError):
        measurement_future(fig1_circuit(), "XYZ")


def test_common_cause_queries():
    c = fig1_circuit()
    assert not shares_common_cause(c, PARTIES)
    assert shares_common_cause(c, {"A", "B"})
    assert "ABC" in common_cause_witnesses(c, {"A", "B"})
    assert shares_common_cause(c, {"A"})
    with pytest.raises(UnknownNodeError):
        shares_common_cause(c, {"Q"})


def test_every_triple_has_a_common_cause_in_fig1():
    c = fig1_circuit()
    for triple in itertools.combinations(PARTIES, 3):
        assert common_cause_witnesses(c, triple) == ["".join(triple)]


def test_fig1_is_canonical():
    c = fig1_circuit()
    assert canonicalize(c) == c


def test_parallel_sources_merge():
    c = CausalCircuit.build([("S1", SOURCE), ("S2", SOURCE), ("A", MEASUREMENT), ("B", MEASUREMENT)],
                            [("S1", "A"), ("S1", "B"), ("S2", "A"), ("S2", "B")])
    canon = canonicalize(c)
    assert canon.sources == ["AB"]
    assert len(canon.edges) == 2


def test_canonicalize_rejects_invalid():
    cyc = CausalCircuit.build([("T1", TRANSFORMATION), ("T2", TRANSFORMATION)], [("T1", "T2"), ("T2", "T1")])
    with pytest.raises(CircuitError):
        canonicalize(cyc)


def test_embedding_of_fig1_is_identity():
    emb = embed_into_canonical(fig1_circuit())
    assert all(k == v for k, v in emb.node_map.items())
    assert all(len(p) == 2 for p in emb.wire_paths.values())


def test_global_source_cannot_embed():
    c = CausalCircuit.build([("G", SOURCE)] + [(p, MEASUREMENT) for p in PARTIES], [("G", p) for p in PARTIES])
    with pytest.raises(CommonCauseError):
        embed_into_canonical(c)


def test_bipartite_sources_embed_through_two_step_paths():
    nodes = [(s, SOURCE) for s in ("sAB", "sBC", "sCD")] + [(p, MEASUREMENT) for p in PARTIES]
    edges = [("sAB", "A"), ("sAB", "B"), ("sBC", "B"), ("sBC", "C"), ("sCD", "C"), ("sCD", "D")]
    emb = embed_into_canonical(CausalCircuit.build(nodes, edges))
    assert emb.node_map["AB"] == "AB"
    fig1 = fig1_circuit().graph
    for path in emb.wire_paths.values():
        assert len(path) == 2
        assert fig1.has_edge(*path)


def test_embedding_needs_four_parties():
    c = CausalCircuit.build([("S", SOURCE), ("A", MEASUREMENT)], [("S", "A")])
    with pytest.raises(CircuitError):
        embed_into_canonical(c)


def test_json_round_trip_and_sorted_output():
    c = fig1_circuit()
    text = dumps_circuit(c)
    assert loads_circuit(text) == c
    data = json.loads(text)
    assert [n["id"] for n in data["nodes"]] == sorted(n["id"] for n in data["nodes"])
    pairs = [(e["from"], e["to"]) for e in data["edges"]]
    assert pairs == sorted(pairs)


def test_malformed_circuit_document():
    with pytest.raises(CircuitError):
        circuit_from_dict({"nodes": [{"kind": "source"}], "edges": []})


# -- random DAGs --------------------------------------------------------------------

@st.composite
def circuits(draw, n_parties=4):
    """Random valid circuits: sources, layered transformations, n measurements."""
    parties = list(PARTIES[:n_parties])
    n_src = draw(st.integers(1, 4))
    n_tr = draw(st.integers(0, 4))
    sources = [f"s{i}" for i in range(n_src)]
    trans = [f"t{i}" for i in range(n_tr)]
    edges = set()
    for i, t in enumerate(trans):
        ups = sources + trans[:i]
        k = draw(st.integers(1, min(2, len(ups))))
        for u in draw(st.lists(st.sampled_from(ups), min_size=k, max_size=k, unique=True)):
            edges.add((u, t))
    for n in sources + trans:
        downs = trans[trans.index(n) + 1:] if n in trans else trans
        targets = draw(st.lists(st.sampled_from(parties + downs), min_size=1, max_size=3, unique=True))
        for d in targets:
            edges.add((n, d))
    nodes = [(s, SOURCE) for s in sources] + [(t, TRANSFORMATION) for t in trans] + \
            [(p, MEASUREMENT) for p in parties]
    return CausalCircuit.build(nodes, sorted(edges))


@given(circuits())
def test_random_circuits_are_valid(c):
    assert validate(c).ok


@given(circuits())
def test_canonicalize_idempotent(c):
    once = canonicalize(c)
    assert validate(once).ok
    assert canonicalize(once) == once


@given(circuits())
def test_canonicalize_preserves_common_cause_structure(c):
    canon = canonicalize(c)
    assert canon.measurements == c.measurements
    for r in range(1, 5):
        for ps in itertools.combinations(c.measurements, r):
            assert shares_common_cause(c, ps) == shares_common_cause(canon, ps)


@given(circuits())
def test_embedding_exists_iff_no_global_common_cause(c):
    if shares_common_cause(c, PARTIES):
        with pytest.raises(CommonCauseError):
            embed_into_canonical(c)
    else:
        emb = embed_into_canonical(c)
        clabs = labels(emb.canonical)
        fig1 = fig1_circuit()
        for n, image in emb.node_map.items():
            assert clabs[n] <= measurement_future(fig1, image)


@given(circuits(), st.data())
def test_future_monotone_under_wire_addition(c, data):
    non_meas = [n for n in c.kinds if c.kinds[n] != MEASUREMENT]
    src = data.draw(st.sampled_from(non_meas))
    dst = data.draw(st.sampled_from(c.measurements))
    bigger = CausalCircuit(c.nodes, c.edges + (CausalCircuit.build([], [(src, dst, "extra")]).edges))
    for n in c.kinds:
        assert measurement_future(c, n) <= measurement_future(bigger, n)


@given(circuits())
def test_singleton_always_has_common_cause(c):
    for p in c.measurements:
        assert shares_common_cause(c, {p})
