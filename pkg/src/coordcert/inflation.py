"""The fig2 quantum inflation, its word algebra and the moment relaxation.

The inflation duplicates the sources ABD, ACD and the transformations AC, AD,
BD of the fig1 circuit. Source ABC feeds *both* copies of AC through one
shared wire and BCD feeds both copies of BD (the two shared-source links).
Because two transformations act on the same Hilbert space, their downstream
measurements (A with C, B with D) are not jointly implementable: their
Heisenberg-picture projectors need not commute.

Wire ids follow ``"src->dst"``. A shared wire or a wire nobody consumes is
named after the fig1 target (``"ABC->AC"``, ``"ACD(1)->CD"``), so that every
copy keeps the wire order of its fig1 original and fig1 matrices can be reused
verbatim.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .circuit import MEASUREMENT, PARTIES, SOURCE, TRANSFORMATION, CausalCircuit, Wire, fig1_circuit, validate
from .quantum import (QuantumRealization, WireGraph, _validate_on_graph,
                      heisenberg_on_graph, random_projectors, random_pure, random_unitary,
                      source_ancestors)

_COPY = re.compile(r"\(\d+\)$")


def base_name(node: str) -> str:
    """``"AC(2)"`` -> ``"AC"``."""
    return _COPY.sub("", node)


# -- the inflation structure ---------------------------------------------------

# source copy -> fig1 transformation -> consumer copies (empty: dangling)
_SOURCE_LINKS = {
    "ACD(1)": {"AC": ("AC(1)",), "AD": ("AD(1)",), "CD": ()},
    "ABD(1)": {"AB": ("AB",), "AD": ("AD(1)",), "BD": ("BD(1)",)},
    "ABC": {"AB": ("AB",), "AC": ("AC(1)", "AC(2)"), "BC": ("BC",)},
    "BCD": {"BC": ("BC",), "BD": ("BD(1)", "BD(2)"), "CD": ("CD",)},
    "ACD(2)": {"AC": ("AC(2)",), "AD": ("AD(2)",), "CD": ("CD",)},
    "ABD(2)": {"AB": (), "AD": ("AD(2)",), "BD": ("BD(2)",)},
}
# transformation copy -> parties it feeds (the other output dangles)
_TRANSFORMATION_LINKS = {
    "AD(1)": ("A",), "AC(1)": ("A",), "AB": ("A", "B"), "BD(1)": ("B",), "BC": ("B", "C"),
    "AC(2)": ("C",), "CD": ("C", "D"), "BD(2)": ("D",), "AD(2)": ("D",),
}


@dataclass(frozen=True)
class InflationSpec:
    """Nodes, wires (one producer, any number of consumers) and shared-source links."""

    kinds: Mapping[str, str]
    wires: Mapping[str, tuple[str, tuple[str, ...]]]

    @cached_property
    def sources(self) -> list[str]:
        return sorted(n for n, k in self.kinds.items() if k == SOURCE)

    @cached_property
    def transformations(self) -> list[str]:
        return sorted(n for n, k in self.kinds.items() if k == TRANSFORMATION)

    @cached_property
    def measurements(self) -> list[str]:
        return sorted(n for n, k in self.kinds.items() if k == MEASUREMENT)

    @cached_property
    def dots(self) -> dict[str, tuple[str, ...]]:
        """Shared-source links: wire id -> the transformation copies it feeds."""
        return {w: cs for w, (_, cs) in sorted(self.wires.items()) if len(cs) > 1}

    def wire_graph(self, dims: Mapping[str, int] | None = None) -> WireGraph:
        dims = dims or {}
        return WireGraph(dict(self.kinds), {w: p for w, (p, _) in self.wires.items()},
                         {w: cs for w, (_, cs) in self.wires.items()},
                         {w: int(dims.get(w, 2)) for w in self.wires})

    def downstream_measurements(self, node: str) -> set[str]:
        out, stack = set(), [node]
        while stack:
            n = stack.pop()
            if self.kinds[n] == MEASUREMENT:
                out.add(n)
            for w, (p, cs) in self.wires.items():
                if p == n:
                    stack.extend(cs)
        return out

    @cached_property
    def incompatible_pairs(self) -> frozenset[tuple[str, str]]:
        pairs = set()
        for cs in self.dots.values():
            for a, b in itertools.combinations(cs, 2):
                for x in self.downstream_measurements(a):
                    for y in self.downstream_measurements(b):
                        if x != y:
                            pairs.add(tuple(sorted((x, y))))
        return frozenset(pairs)

    def compatible(self, x: str, y: str) -> bool:
        return x != y and tuple(sorted((x, y))) not in self.incompatible_pairs

    def source_ancestors(self, party: str) -> set[str]:
        return source_ancestors(self.wire_graph(), party)

    def selection_circuit(self, selection: Mapping[str, str]) -> CausalCircuit:
        """Keep one link per shared wire (``selection[wire] = copy``); drop dangling wires."""
        nodes = [(n, k) for n, k in sorted(self.kinds.items())]
        edges = []
        for w, (p, cs) in sorted(self.wires.items()):
            keep = (selection[w],) if w in self.dots else cs
            for c in keep:
                edges.append(Wire(p, c, w))
        return CausalCircuit.build(nodes, edges)


def fig2_inflation() -> InflationSpec:
    kinds = {s: SOURCE for s in _SOURCE_LINKS}
    kinds.update({t: TRANSFORMATION for t in _TRANSFORMATION_LINKS})
    kinds.update({p: MEASUREMENT for p in PARTIES})
    wires = {}
    for s, links in _SOURCE_LINKS.items():
        for target, consumers in links.items():
            name = consumers[0] if len(consumers) == 1 else target
            wires[f"{s}->{name}"] = (s, consumers)
    for t, parties in _TRANSFORMATION_LINKS.items():
        for p in base_name(t):
            wires[f"{t}->{p}"] = (t, (p,) if p in parties else ())
    return InflationSpec(kinds, wires)


def check_inflation(spec: InflationSpec) -> list[str]:
    """Violated InflationSpec invariants; empty when the structure is sound."""
    out = []
    for w, cs in spec.dots.items():
        if len(cs) != 2:
            out.append(f"shared wire {w} has {len(cs)} links, expected 2")
        if len({base_name(c) for c in cs}) != 1:
            out.append(f"shared wire {w} feeds copies of different transformations")
    for sel in selections(spec):
        rep = validate(spec.selection_circuit(sel))
        if not rep.ok:
            out.append(f"selection {sel}: " + "; ".join(rep.violations))
    return out


def selections(spec: InflationSpec) -> list[dict[str, str]]:
    dots = spec.dots
    return [dict(zip(dots, choice)) for choice in itertools.product(*dots.values())]


# -- valid subcircuits -----------------------------------------------------------

def _pair_subnetwork(circuit: CausalCircuit, x: str, y: str):
    """Edges into the ancestors of ``x`` or ``y`` (or into them), as (src, dst) pairs."""
    g = circuit.graph
    keep = {x, y}
    for p in (x, y):
        keep |= nx.ancestors(g, p)
    edges = {(w.src, w.dst) for w in circuit.edges if w.dst in keep}
    return keep, edges


def reproduces_fig1_pair(circuit: CausalCircuit, x: str, y: str) -> bool:
    """True when the ancestral subnetwork of ``{x, y}`` equals fig1's up to copy labels."""
    nodes, edges = _pair_subnetwork(circuit, x, y)
    bases = [base_name(n) for n in nodes]
    if len(set(bases)) != len(bases):
        return False
    _, ref = _pair_subnetwork(fig1_circuit(), x, y)
    return {(base_name(a), base_name(b)) for a, b in edges} == ref


@dataclass(frozen=True)
class Subcircuit:
    selection: Mapping[str, str]
    circuit: CausalCircuit
    reproduced_pairs: tuple[tuple[str, str], ...]


def valid_subcircuits(spec: InflationSpec) -> list[Subcircuit]:
    out = []
    for sel in selections(spec):
        c = spec.selection_circuit(sel)
        pairs = tuple(p for p in itertools.combinations(spec.measurements, 2)
                      if reproduces_fig1_pair(c, *p))
        out.append(Subcircuit(sel, c, pairs))
    return out


# -- words -----------------------------------------------------------------------

Letter = tuple[str, int]
Word = tuple[Letter, ...]
ZERO = None


def word_str(w: Word | None) -> str:
    if w is None:
        return "0"
    return " ".join(f"{p}{o}" for p, o in w) if w else "1"


def parse_word(text: str) -> Word:
    text = text.strip()
    if text in ("", "1"):
        return ()
    return tuple((tok[0], int(tok[1:])) for tok in text.split())


def _commutes(compatible: Callable[[str, str], bool], a: Letter, b: Letter) -> bool:
    return a[0] != b[0] and compatible(a[0], b[0])


def canonical_word(word: Iterable[Letter], compatible: Callable[[str, str], bool]) -> Word | None:
    """Normal form of a product of projectors; ``None`` is the zero operator.

    Letters of compatible parties commute; same-party letters are idempotent
    (equal outcome) or orthogonal (different outcome). The normal form
    repeatedly emits the smallest letter that every earlier letter commutes
    with, then merges same-party letters separated only by letters commuting
    with them, until nothing changes. Equivalent words always reach the same
    form, whatever rewrites produced them.
    """
    w = list(word)
    while True:
        # lexicographically least representative of the commutation class
        rest, out = list(w), []
        while rest:
            best = None
            for i, a in enumerate(rest):
                if all(_commutes(compatible, b, a) for b in rest[:i]):
                    if best is None or a < rest[best]:
                        best = i
            out.append(rest.pop(best))
        merged = _merge(out, compatible)
        if merged is None:
            return None
        if merged == w:
            return tuple(w)
        w = merged


def _merge(w: list[Letter], compatible) -> list[Letter] | None:
    for i, a in enumerate(w):
        for j in range(i + 1, len(w)):
            b = w[j]
            if b[0] == a[0]:
                if b[1] != a[1]:
                    return None
                return w[:j] + w[j + 1:]
            if not _commutes(compatible, a, b):
                break
    return w


def dagger(word: Word | None, compatible) -> Word | None:
    return None if word is None else canonical_word(tuple(reversed(word)), compatible)


# -- moment problem --------------------------------------------------------------

class MomentProblemError(ValueError):
    pass


@dataclass
class MomentProblem:
    """Moment matrix relaxation ``M[v, w] = <v^dagger w>`` over a word index.

    ``keys[i][j]`` is the moment identifier of entry ``(i, j)`` (``None`` for
    the zero operator). In the default real relaxation a moment and its
    adjoint share one identifier. ``constraints`` are ``({(i, j): coef}, rhs)``
    equalities on the upper triangle; ``objective`` is ``{(i, j): coef}`` plus
    ``offset``.
    """

    index: list[Word]
    keys: list[list[object]]
    constraints: list[tuple[dict[tuple[int, int], float], float]]
    objective: dict[tuple[int, int], float]
    offset: float
    level: int
    alpha: float
    delta: float
    complex_moments: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.index)

    def entry_of(self, word: Word) -> tuple[int, int]:
        """A matrix entry holding the moment of ``word`` (searched over ``(v, w)`` splits)."""
        for i, v in enumerate(self.index):
            for j, u in enumerate(self.index):
                if self._key_word(i, j) == word:
                    return (i, j) if i <= j else (j, i)
        raise KeyError(word_str(word))

    def _key_word(self, i, j):
        return self._words[i][j]

    def to_sdp(self):
        from .sdp import SdpProblem
        n = self.size
        if not self.complex_moments:
            return SdpProblem.from_entries(n, self.constraints, self.objective, self.offset)
        return SdpProblem.from_entries(2 * n, self.constraints, self.objective, self.offset)

    def export(self) -> str:
        """Plain-text dump: index, constraints as coordinate triples, objective."""
        lines = ["# moment problem", f"level {self.level}", f"alpha {self.alpha!r}",
                 f"delta {self.delta!r}", f"complex {int(self.complex_moments)}",
                 f"size {self.size}", "index"]
        lines += [f"  {k} {word_str(w)}" for k, w in enumerate(self.index)]
        lines.append(f"constraints {len(self.constraints)}")
        for coefs, rhs in self.constraints:
            terms = " ".join(f"({i},{j},{c!r})" for (i, j), c in sorted(coefs.items()))
            lines.append(f"  {terms} = {rhs!r}")
        lines.append("objective")
        lines.append("  " + " ".join(f"({i},{j},{c!r})" for (i, j), c in sorted(self.objective.items()))
                     + f" + {self.offset!r}")
        return "\n".join(lines) + "\n"


def word_index(letters: Sequence[Letter], level: int, compatible) -> list[Word]:
    seen: dict[Word, None] = {(): None}
    for n in range(1, level + 1):
        for combo in itertools.product(letters, repeat=n):
            c = canonical_word(combo, compatible)
            if c is not None and len(c) == n:
                seen.setdefault(c, None)
    return sorted(seen, key=lambda w: (len(w), w))


def _split_AD(word: Word) -> tuple[Word, Word] | None:
    parties = {p for p, _ in word}
    if parties and parties <= {"A", "D"} and len(parties) == 2:
        return tuple(l for l in word if l[0] == "A"), tuple(l for l in word if l[0] == "D")
    return None


def build_moment_problem(spec: InflationSpec | None = None, level: int = 2, alpha: float = 0.0,
                         delta: float = 0.0, *, fixed_correlators: Mapping[str, float] | None = None,
                         fixed_moments: Mapping[Word, float] | None = None,
                         complex_moments: bool = False) -> MomentProblem:
    """Moment relaxation of the inflation at fixed ``<A> = alpha`` and ``<D> = delta``.

    The objective is ``<AB> + <BC> + <CD> - alpha*delta/2`` with
    ``<XY> = 1 - 2<X0> - 2<Y0> + 4<X0 Y0>``. ``fixed_correlators`` adds
    linear constraints such as ``{"AB": 1.0}``; ``fixed_moments`` pins
    individual moments.
    """
    if level < 1:
        raise MomentProblemError("level must be at least 1")
    for name, v in (("alpha", alpha), ("delta", delta)):
        if not -1.0 <= v <= 1.0:
            raise MomentProblemError(f"{name}={v} outside [-1, 1]")
    spec = spec or fig2_inflation()
    comp = spec.compatible
    letters = [(p, 0) for p in spec.measurements]
    index = word_index(letters, level, comp)
    n = len(index)

    words = [[canonical_word(tuple(reversed(v)) + u, comp) for u in index] for v in index]

    def key(word):
        if word is None:
            return None
        if complex_moments:
            return word
        d = dagger(word, comp)
        return min(word, d)

    keys = [[key(words[i][j]) for j in range(n)] for i in range(n)]

    # known scalar values
    pa, pd = (1 + alpha) / 2, (1 + delta) / 2
    values: dict[object, float] = {}

    def pin(word, value, why):
        k = key(canonical_word(word, comp))
        if k is None:
            if abs(value) > 0:
                raise MomentProblemError(f"{why}: zero operator fixed to {value}")
            return
        if k in values and abs(values[k] - value) > 1e-12:
            raise MomentProblemError(f"{why}: moment {word_str(k)} fixed to {values[k]} and {value}")
        values[k] = value

    pin((), 1.0, "normalization")
    pin((("A", 0),), pa, "<A>")
    pin((("D", 0),), pd, "<D>")
    single = {(): 1.0, (("A", 0),): pa, (("D", 0),): pd}
    all_words = {words[i][j] for i in range(n) for j in range(n) if words[i][j] is not None}
    for w in sorted(all_words):
        split = _split_AD(w)
        if split is not None:
            a = canonical_word(split[0], comp)
            d = canonical_word(split[1], comp)
            if a in single and d in single:
                pin(w, single[a] * single[d], "independence")
    for w, v in (fixed_moments or {}).items():
        pin(tuple(w), float(v), "fixed moment")

    def entry_for(word):
        k = key(canonical_word(word, comp))
        for i in range(n):
            for j in range(i, n):
                if keys[i][j] == k:
                    return (i, j)
        raise MomentProblemError(f"moment {word_str(word)} not in the index at level {level}")

    constraints: list[tuple[dict, float]] = []
    objective: dict[tuple[int, int], float] = {}
    offset = 0.0

    def add(coefs: dict, target: dict, scale=1.0):
        for (i, j), c in coefs.items():
            target[(i, j)] = target.get((i, j), 0.0) + scale * c

    if not complex_moments:
        reps: dict[object, tuple[int, int]] = {}
        for i in range(n):
            for j in range(i, n):
                k = keys[i][j]
                if k is None:
                    constraints.append(({(i, j): 1.0}, 0.0))
                elif k in reps:
                    constraints.append(({reps[k]: 1.0, (i, j): -1.0}, 0.0))
                else:
                    reps[k] = (i, j)
        for k, v in values.items():
            if k not in reps:
                continue
            constraints.append(({reps[k]: 1.0}, v))

        def moment(word):
            return {entry_for(word): 1.0}
    else:
        # Hermitian M = R + iI embedded as [[R, -I], [I, R]] of size 2n
        for i in range(n):
            for j in range(i, n):
                constraints.append(({(i, j): 1.0, (n + i, n + j): -1.0}, 0.0))
                constraints.append(({(i, n + j): 1.0, (j, n + i): 1.0}, 0.0))
        reps: dict[object, tuple[int, int]] = {}
        for i in range(n):
            for j in range(i, n):
                k = keys[i][j]
                if k is None:
                    constraints.append(({(i, j): 1.0}, 0.0))
                    constraints.append(({(i, n + j): 1.0}, 0.0))
                    continue
                d = dagger(k, comp)
                if k in reps:
                    r = reps[k]
                    constraints.append(({r: 1.0, (i, j): -1.0}, 0.0))
                    constraints.append(({(r[0], n + r[1]): 1.0, (i, n + j): -1.0}, 0.0))
                elif d in reps:
                    # the adjoint moment: equal real part, opposite imaginary part
                    r = reps[d]
                    constraints.append(({r: 1.0, (i, j): -1.0}, 0.0))
                    constraints.append(({(r[0], n + r[1]): 1.0, (i, n + j): 1.0}, 0.0))
                else:
                    reps[k] = (i, j)
                    if d == k:
                        constraints.append(({(i, n + j): 1.0}, 0.0))
        for k, v in values.items():
            for cand in (k, dagger(k, comp)):
                if cand in reps:
                    constraints.append(({reps[cand]: 1.0}, v))
                    break

        def moment(word):
            # real part of the moment; (i, n+j) holds minus the imaginary part
            return {entry_for(word): 1.0}

    def correlator(x, y):
        coefs: dict = {}
        add(moment(((x, 0),)), coefs, -2.0)
        add(moment(((y, 0),)), coefs, -2.0)
        add(moment(((x, 0), (y, 0))), coefs, 4.0)
        return coefs, 1.0

    for pair in ("AB", "BC", "CD"):
        coefs, const = correlator(pair[0], pair[1])
        add(coefs, objective)
        offset += const
    offset -= alpha * delta / 2

    for name, value in (fixed_correlators or {}).items():
        if len(name) == 1:
            coefs = {}
            add(moment(((name, 0),)), coefs, 2.0)
            constraints.append((coefs, value + 1.0))
        elif len(name) == 2:
            if not comp(name[0], name[1]):
                raise MomentProblemError(f"<{name}> involves incompatible parties")
            coefs, const = correlator(name[0], name[1])
            constraints.append((coefs, value - const))
        else:
            raise MomentProblemError(f"unsupported correlator {name!r}")

    mp = MomentProblem(index, keys, constraints, objective, offset, level, alpha, delta, complex_moments)
    mp._words = words
    return mp


# -- explicit inflation realizations -------------------------------------------------

@dataclass(frozen=True)
class InflationRealization:
    spec: InflationSpec
    realization: QuantumRealization

    @cached_property
    def graph(self) -> WireGraph:
        return self.spec.wire_graph(self.realization.wire_dims)

    def validate(self, tol: float = 1e-10) -> None:
        _validate_on_graph(self.graph, self.realization, tol)


def inflate_realization(fig1_real: QuantumRealization, spec: InflationSpec | None = None) -> InflationRealization:
    """Give every inflation copy the matrices of its fig1 original."""
    spec = spec or fig2_inflation()
    fig1 = fig1_circuit()
    dims = {}
    for w, (p, cs) in spec.wires.items():
        target = base_name(cs[0]) if len(cs) == 1 else w.split("->")[1]
        dims[w] = int(fig1_real.wire_dims.get(f"{base_name(p)}->{base_name(target)}", 2))
    for w in fig1.edges:
        dims.setdefault(w.id, int(fig1_real.wire_dims.get(w.id, 2)))
    states = {s: fig1_real.states[base_name(s)] for s in spec.sources}
    unitaries = {t: fig1_real.unitaries[base_name(t)] for t in spec.transformations}
    projectors = {m: fig1_real.projectors[m] for m in spec.measurements}
    return InflationRealization(spec, QuantumRealization(states, unitaries, projectors,
                                                         {w: dims[w] for w in spec.wires}))


def random_inflation_realization(rng: np.random.Generator, spec: InflationSpec | None = None,
                                 dim: int = 2) -> InflationRealization:
    """Independent random pure states, unitaries and projective measurements for every copy."""
    spec = spec or fig2_inflation()
    g = spec.wire_graph({w: dim for w in spec.wires})
    states = {s: random_pure(g.dim(g.out_wires(s)), rng) for s in spec.sources}
    unitaries = {t: random_unitary(g.dim(g.in_wires(t)), rng) for t in spec.transformations}
    projectors = {m: random_projectors(g.dim(g.in_wires(m)), rng) for m in spec.measurements}
    return InflationRealization(spec, QuantumRealization(states, unitaries, projectors, dict(g.dims)))


class _GlobalState:
    """The product of all inflation source states as one tensor, with operator application."""

    def __init__(self, infl: InflationRealization):
        g = infl.graph
        real = infl.realization
        self.legs: list[str] = []
        self.dims: dict[str, int] = dict(g.dims)
        psi = np.ones((), dtype=complex)
        for s in g.nodes(SOURCE):
            ws = g.out_wires(s)
            st = np.asarray(real.states[s], dtype=complex)
            shape = tuple(g.dims[w] for w in ws)
            if st.ndim == 2:
                # purify onto an ancilla leg nobody acts on
                lam, vecs = np.linalg.eigh((st + st.conj().T) / 2)
                keep = lam > 1e-14 * max(lam.max(), 1.0)
                lam, vecs = lam[keep], vecs[:, keep]
                vec = (vecs * np.sqrt(lam)).reshape(shape + (len(lam),))
                anc = f"{s}->~"
                self.dims[anc] = len(lam)
                ws = ws + [anc]
                st = vec
            else:
                st = st.reshape(shape)
            psi = np.multiply.outer(psi, st)
            self.legs += ws
        self.psi = psi
        self.families = {m: heisenberg_on_graph(g, real, m) for m in g.nodes(MEASUREMENT)}

    def apply(self, party: str, outcome: int, vec: np.ndarray) -> np.ndarray:
        fam = self.families[party]
        op = fam.ops[outcome].reshape(fam.dims * 2)
        k = len(fam.dims)
        idx = [self.legs.index(w) for w in fam.support]
        out = np.tensordot(op, vec, axes=(list(range(k, 2 * k)), idx))
        rest = [i for i in range(vec.ndim) if i not in idx]
        order = np.argsort(idx + rest)
        return np.transpose(out, order)

    def moment(self, word: Word) -> complex:
        vec = self.psi
        for p, o in reversed(word):
            vec = self.apply(p, o, vec)
        return complex(np.vdot(self.psi, vec))


def inflation_moment(infl: InflationRealization, word: Word) -> complex:
    return _GlobalState(infl).moment(word)


def moment_matrix(infl: InflationRealization, index: Sequence[Word]) -> np.ndarray:
    """``M[v, w] = <phi| v^dagger w |phi>`` computed numerically."""
    gs = _GlobalState(infl)
    vecs = []
    for w in index:
        vec = gs.psi
        for p, o in reversed(w):
            vec = gs.apply(p, o, vec)
        vecs.append(vec.ravel())
    v = np.array(vecs)
    return v.conj() @ v.T


@dataclass(frozen=True)
class SosChainReport:
    r_ab: float
    r_bc: float
    r_cd: float
    r_ad: float
    triangle_bound: float
    independence_gap: float
    coordination_gap: float
    p_a: float
    p_d: float
    p_ad: float
    pairs_coordinated: bool
    end_to_end_within: bool

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def sos_chain_check(infl: InflationRealization, tol: float = 1e-10, validate_input: bool = True) -> SosChainReport:
    """Residuals ``||(P_X - P_Y)|phi>||^2`` of the outcome-0 Heisenberg projectors.

    ``triangle_bound`` is ``(sqrt r_AB + sqrt r_BC + sqrt r_CD)^2``, which the
    end-to-end residual can never exceed. ``coordination_gap`` is
    ``|<P_A> - <P_A><P_D>|``, the value the independence gap takes when the
    chain collapses to ``P_A|phi> = P_D|phi>``.
    """
    if validate_input:
        infl.validate()
    gs = _GlobalState(infl)
    v = {p: gs.apply(p, 0, gs.psi) for p in PARTIES}

    def res(x, y):
        return max(float(np.linalg.norm((v[x] - v[y]).ravel()) ** 2), 0.0)

    r_ab, r_bc, r_cd, r_ad = res("A", "B"), res("B", "C"), res("C", "D"), res("A", "D")
    p_a = float(np.vdot(gs.psi, v["A"]).real)
    p_d = float(np.vdot(gs.psi, v["D"]).real)
    p_ad = float(np.vdot(v["A"], v["D"]).real)
    bound = (np.sqrt(r_ab) + np.sqrt(r_bc) + np.sqrt(r_cd)) ** 2
    coordinated = max(r_ab, r_bc, r_cd) <= tol
    return SosChainReport(r_ab, r_bc, r_cd, r_ad, float(bound), abs(p_ad - p_a * p_d),
                          abs(p_a - p_a * p_d), p_a, p_d, p_ad, bool(coordinated),
                          bool(r_ad <= bound + 1e-9))
