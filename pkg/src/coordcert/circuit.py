"""Causal circuits as typed DAGs.

A circuit has three node kinds: ``source`` (prepares a state), ``transformation``
(unitary from its incoming wires to its outgoing wires) and ``measurement``
(a terminal node with a classical outcome). Each wire is one directed edge with
a unique id.

Besides validation and reachability queries this module implements the label
and merge reduction to the canonical four-party circuit returned by
:func:`fig1_circuit`, together with an explicit embedding into it.
"""
from __future__ import annotations

import itertools
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

import networkx as nx

SOURCE = "source"
TRANSFORMATION = "transformation"
MEASUREMENT = "measurement"
KINDS = (SOURCE, TRANSFORMATION, MEASUREMENT)

PARTIES = ("A", "B", "C", "D")


class CircuitError(ValueError):
    """Raised for structurally invalid circuits or bad queries."""


class UnknownNodeError(CircuitError, KeyError):
    pass


class CommonCauseError(CircuitError):
    """The four parties share a common cause, so no embedding exists."""


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    arity: int = 2


@dataclass(frozen=True)
class Wire:
    src: str
    dst: str
    id: str
    dim: int | None = None


@dataclass(frozen=True)
class CausalCircuit:
    nodes: tuple[Node, ...]
    edges: tuple[Wire, ...]

    @classmethod
    def build(cls, nodes: Iterable, edges: Iterable) -> "CausalCircuit":
        """Build from loose specs.

        ``nodes`` items are :class:`Node` or ``(id, kind)`` / ``(id, kind, arity)``
        tuples; ``edges`` items are :class:`Wire` or ``(src, dst)`` /
        ``(src, dst, wire_id)`` tuples. Missing wire ids become ``"src->dst"``
        with a ``#k`` suffix for parallel wires.
        """
        ns = tuple(n if isinstance(n, Node) else Node(*n) for n in nodes)
        es = []
        seen: dict[tuple[str, str], int] = {}
        for e in edges:
            if isinstance(e, Wire):
                es.append(e)
                continue
            src, dst, *rest = e
            if rest:
                es.append(Wire(src, dst, rest[0], *rest[1:]))
                continue
            k = seen.get((src, dst), 0)
            seen[(src, dst)] = k + 1
            wid = f"{src}->{dst}" if k == 0 else f"{src}->{dst}#{k}"
            es.append(Wire(src, dst, wid))
        return cls(ns, tuple(es))

    @cached_property
    def kinds(self) -> dict[str, str]:
        return {n.id: n.kind for n in self.nodes}

    @cached_property
    def arities(self) -> dict[str, int]:
        return {n.id: n.arity for n in self.nodes if n.kind == MEASUREMENT}

    @cached_property
    def graph(self) -> nx.MultiDiGraph:
        g = nx.MultiDiGraph()
        g.add_nodes_from(n.id for n in self.nodes)
        for w in self.edges:
            g.add_edge(w.src, w.dst, key=w.id)
        return g

    def of_kind(self, kind: str) -> list[str]:
        return sorted(n.id for n in self.nodes if n.kind == kind)

    @property
    def measurements(self) -> list[str]:
        return self.of_kind(MEASUREMENT)

    @property
    def sources(self) -> list[str]:
        return self.of_kind(SOURCE)

    @property
    def transformations(self) -> list[str]:
        return self.of_kind(TRANSFORMATION)

    def in_wires(self, node: str) -> list[Wire]:
        return sorted((w for w in self.edges if w.dst == node), key=lambda w: w.id)

    def out_wires(self, node: str) -> list[Wire]:
        return sorted((w for w in self.edges if w.src == node), key=lambda w: w.id)

    def topological_order(self) -> list[str]:
        return list(nx.lexicographical_topological_sort(self.graph))

    def _check(self, node: str) -> None:
        if node not in self.kinds:
            raise UnknownNodeError(node)


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate(circuit: CausalCircuit) -> ValidationReport:
    """List every violated structural invariant; an empty report means valid."""
    out: list[str] = []
    ids = [n.id for n in circuit.nodes]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        out.append(f"duplicate node id {dup!r}")
    wids = [w.id for w in circuit.edges]
    for dup in sorted({i for i in wids if wids.count(i) > 1}):
        out.append(f"duplicate wire id {dup!r}")
    for n in circuit.nodes:
        if n.kind not in KINDS:
            out.append(f"node {n.id!r}: unknown kind {n.kind!r}")
        if n.kind == MEASUREMENT and n.arity < 1:
            out.append(f"node {n.id!r}: outcome arity must be >= 1")
    known = set(ids)
    for w in circuit.edges:
        for end in (w.src, w.dst):
            if end not in known:
                out.append(f"wire {w.id!r}: unknown endpoint {end!r}")
        if w.dim is not None and w.dim < 1:
            out.append(f"wire {w.id!r}: dimension must be positive")
    g = circuit.graph
    if not nx.is_directed_acyclic_graph(g):
        cycle = nx.find_cycle(g)
        out.append("graph is not acyclic: " + " -> ".join(str(e[0]) for e in cycle))
    for n in circuit.nodes:
        if n.id not in g:
            continue
        din, dout = g.in_degree(n.id), g.out_degree(n.id)
        if n.kind == SOURCE and din:
            out.append(f"source {n.id!r} has in-degree {din}")
        if n.kind == MEASUREMENT and dout:
            out.append(f"measurement {n.id!r} has out-degree {dout}")
        if n.kind == TRANSFORMATION:
            if din < 1:
                out.append(f"transformation {n.id!r} has no incoming wire")
            if dout < 1:
                out.append(f"transformation {n.id!r} has no outgoing wire")
    return ValidationReport(out)


def measurement_future(circuit: CausalCircuit, node: str) -> frozenset[str]:
    """Measurement nodes reachable from ``node``; a measurement reaches itself."""
    circuit._check(node)
    reach = nx.descendants(circuit.graph, node) | {node}
    return frozenset(n for n in reach if circuit.kinds[n] == MEASUREMENT)


def labels(circuit: CausalCircuit) -> dict[str, frozenset[str]]:
    return {n.id: measurement_future(circuit, n.id) for n in circuit.nodes}


def common_cause_witnesses(circuit: CausalCircuit, parties: Iterable[str]) -> list[str]:
    ps = frozenset(parties)
    meas = set(circuit.measurements)
    for p in ps:
        if p not in meas:
            raise UnknownNodeError(p)
    return sorted(n for n, lab in labels(circuit).items() if ps <= lab)


def shares_common_cause(circuit: CausalCircuit, parties: Iterable[str]) -> bool:
    return bool(common_cause_witnesses(circuit, parties))


def fig1_circuit() -> CausalCircuit:
    """Four tripartite sources, six bipartite transformations, four parties.

    Each source feeds the three transformations whose label is a two-element
    subset of its own label; each transformation feeds its two parties.
    """
    sources = ["".join(c) for c in itertools.combinations(PARTIES, 3)]
    pairs = ["".join(c) for c in itertools.combinations(PARTIES, 2)]
    nodes = [(s, SOURCE) for s in sources] + [(t, TRANSFORMATION) for t in pairs]
    nodes += [(p, MEASUREMENT) for p in PARTIES]
    edges = [(s, t) for s in sources for t in pairs if set(t) <= set(s)]
    edges += [(t, p) for t in pairs for p in t]
    c = CausalCircuit.build(nodes, edges)
    return CausalCircuit(tuple(sorted(c.nodes, key=lambda n: n.id)),
                         tuple(sorted(c.edges, key=lambda w: (w.src, w.dst))))


def _label_id(label: frozenset[str], taken: set[str]) -> str:
    parts = sorted(label)
    base = "".join(parts) if all(len(p) == 1 for p in parts) else "|".join(parts)
    name = base
    while name in taken:
        name = "~" + name
    return name


def canonicalize(circuit: CausalCircuit) -> CausalCircuit:
    """Relabel non-measurement nodes by their measurement future and merge equal labels.

    Parallel wires between merged nodes collapse to one wire ``"src->dst"``.
    A merged group is a source when it contains a source and receives no wire
    from outside the group; otherwise it is a transformation. Nodes with an
    empty future (they cannot influence any outcome) are dropped.
    """
    report = validate(circuit)
    if not report.ok:
        raise CircuitError("invalid circuit: " + "; ".join(report.violations))
    labs = labels(circuit)
    meas = circuit.measurements
    taken = set(meas)
    groups: dict[frozenset[str], list[str]] = {}
    for n in circuit.nodes:
        if n.kind != MEASUREMENT and labs[n.id]:
            groups.setdefault(labs[n.id], []).append(n.id)
    rename: dict[str, str] = {m: m for m in meas}
    for lab in sorted(groups, key=lambda s: sorted(s)):
        gid = _label_id(lab, taken)
        taken.add(gid)
        for member in groups[lab]:
            rename[member] = gid

    pairs = set()
    for w in circuit.edges:
        if w.src in rename and w.dst in rename and rename[w.src] != rename[w.dst]:
            pairs.add((rename[w.src], rename[w.dst]))
    has_external_input = {dst for _, dst in pairs}
    nodes = [Node(m, MEASUREMENT, circuit.arities[m]) for m in meas]
    for lab, members in groups.items():
        gid = rename[members[0]]
        is_source = any(circuit.kinds[m] == SOURCE for m in members)
        kind = SOURCE if is_source and gid not in has_external_input else TRANSFORMATION
        nodes.append(Node(gid, kind))
    nodes.sort(key=lambda n: n.id)
    edges = [Wire(s, d, f"{s}->{d}") for s, d in sorted(pairs)]
    return CausalCircuit(tuple(nodes), tuple(edges))


@dataclass(frozen=True)
class Embedding:
    """Map of a canonicalized circuit into :func:`fig1_circuit`.

    ``party_map`` renames the circuit's measurements to A..D (sorted order);
    ``node_map`` sends every canonical node to a fig1 node whose label is a
    superset; ``wire_paths`` gives, per canonical wire id, the fig1 node path
    its endpoints map to (a single node when both ends share an image).
    """

    canonical: CausalCircuit
    party_map: Mapping[str, str]
    node_map: Mapping[str, str]
    wire_paths: Mapping[str, tuple[str, ...]]


def _bfs_path(g: nx.MultiDiGraph, a: str, b: str) -> tuple[str, ...] | None:
    if a == b:
        return (a,)
    prev = {a: None}
    queue = deque([a])
    while queue:
        u = queue.popleft()
        for v in sorted(set(g.successors(u))):
            if v not in prev:
                prev[v] = u
                if v == b:
                    path = [v]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return tuple(reversed(path))
                queue.append(v)
    return None


def embed_into_canonical(circuit: CausalCircuit) -> Embedding:
    """Embed a four-party circuit without a global common cause into fig1.

    Label size three maps to the fig1 source with that label, size two to the
    fig1 transformation, size one to the party itself.
    """
    meas = circuit.measurements
    if len(meas) != 4:
        raise CircuitError(f"expected 4 measurement nodes, got {len(meas)}")
    if shares_common_cause(circuit, meas):
        raise CommonCauseError("the four parties share a common cause")
    canon = canonicalize(circuit)
    party_map = dict(zip(meas, PARTIES))
    fig1 = fig1_circuit()
    fig1_ids = set(fig1.kinds)
    clabs = labels(canon)
    node_map: dict[str, str] = {}
    for n in canon.nodes:
        image = "".join(sorted(party_map[p] for p in clabs[n.id]))
        if image not in fig1_ids:  # pragma: no cover - excluded by the common-cause check
            raise CircuitError(f"label of {n.id!r} has no fig1 counterpart")
        node_map[n.id] = image
    wire_paths = {}
    for w in canon.edges:
        path = _bfs_path(fig1.graph, node_map[w.src], node_map[w.dst])
        if path is None:  # pragma: no cover - labels shrink along wires
            raise CircuitError(f"wire {w.id!r} has no fig1 path")
        wire_paths[w.id] = path
    return Embedding(canon, party_map, node_map, wire_paths)


# -- file format -------------------------------------------------------------

def circuit_to_dict(circuit: CausalCircuit) -> dict:
    nodes = []
    for n in sorted(circuit.nodes, key=lambda n: n.id):
        d = {"id": n.id, "kind": n.kind}
        if n.kind == MEASUREMENT:
            d["arity"] = n.arity
        nodes.append(d)
    edges = []
    for w in sorted(circuit.edges, key=lambda w: (w.src, w.dst, w.id)):
        d = {"from": w.src, "to": w.dst, "id": w.id}
        if w.dim is not None:
            d["dim"] = w.dim
        edges.append(d)
    return {"schema_version": 1, "nodes": nodes, "edges": edges}


def circuit_from_dict(data: Mapping) -> CausalCircuit:
    try:
        nodes = [Node(str(n["id"]), n["kind"], int(n.get("arity", 2))) for n in data["nodes"]]
        edges = [
            Wire(str(e["from"]), str(e["to"]), str(e["id"]), e.get("dim")) if "id" in e
            else (str(e["from"]), str(e["to"]))
            for e in data["edges"]
        ]
    except (KeyError, TypeError) as exc:
        raise CircuitError(f"malformed circuit document: missing {exc}") from exc
    return CausalCircuit.build(nodes, edges)


def dumps_circuit(circuit: CausalCircuit) -> str:
    return json.dumps(circuit_to_dict(circuit), indent=2) + "\n"


def loads_circuit(text: str) -> CausalCircuit:
    return circuit_from_dict(json.loads(text))
