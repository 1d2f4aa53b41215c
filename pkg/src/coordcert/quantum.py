"""Quantum realizations of causal circuits and their exact simulation.

Conventions
-----------
* Every node's wires are ordered by wire id. A source state lives on the
  tensor product of its outgoing wires, a transformation maps its incoming
  wires to its outgoing wires (row index = outputs, column index = inputs) and
  a measurement's projectors act on its incoming wires.
* The global space is the tensor product of all source wires ordered
  lexicographically by ``(source id, wire id)``.
* Behaviors list parties in sorted measurement-id order; ``probs`` has one
  axis per party.
* Outcomes map to signs by ``o -> (-1)**o``.

:func:`simulate` contracts the circuit as a tensor network (ket/bra doubled,
or ket-only when every state is pure and that is cheaper). :func:`simulate_dense`
builds the global operators with explicit permutation matrices and is kept
as an independent oracle.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import opt_einsum as oe
from scipy.stats import unitary_group

from .circuit import MEASUREMENT, SOURCE, TRANSFORMATION, CausalCircuit
from .serialization import SCHEMA_VERSION, complex_to_pairs, pairs_to_complex, round_sig

CONSTRUCTION_TOL = 1e-10
BEHAVIOR_TOL = 1e-8

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
I2 = np.eye(2, dtype=complex)


class RealizationError(ValueError):
    """A realization does not fit its circuit; ``node`` names the culprit."""

    def __init__(self, node: str | None, message: str):
        self.node = node
        super().__init__(f"{node}: {message}" if node else message)


class BehaviorError(ValueError):
    pass


# -- matrix predicates ---------------------------------------------------------

def is_hermitian(m: np.ndarray, tol: float = CONSTRUCTION_TOL) -> bool:
    m = np.asarray(m)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(m, m.conj().T, atol=tol, rtol=0)


def is_unitary(u: np.ndarray, tol: float = CONSTRUCTION_TOL) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return np.allclose(u.conj().T @ u, np.eye(u.shape[0]), atol=tol, rtol=0)


def is_projector(p: np.ndarray, tol: float = CONSTRUCTION_TOL) -> bool:
    p = np.asarray(p)
    return is_hermitian(p, tol) and np.allclose(p @ p, p, atol=tol, rtol=0)


def is_density(rho: np.ndarray, tol: float = CONSTRUCTION_TOL) -> bool:
    rho = np.asarray(rho)
    if not is_hermitian(rho, tol) or abs(np.trace(rho) - 1) > tol:
        return False
    return bool(np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() >= -tol)


def as_density(state: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        return np.outer(state, state.conj())
    return state


# -- realizations --------------------------------------------------------------

@dataclass(frozen=True)
class QuantumRealization:
    """Concrete states, unitaries and projector families for a circuit.

    ``states`` values are vectors (pure) or density matrices. ``projectors``
    values have shape ``(arity, d, d)``. ``wire_dims`` overrides the circuit's
    own wire annotations; unlisted wires default to 2.
    """

    states: Mapping[str, np.ndarray]
    unitaries: Mapping[str, np.ndarray]
    projectors: Mapping[str, np.ndarray]
    wire_dims: Mapping[str, int] = field(default_factory=dict)

    def replace(self, **changes) -> "QuantumRealization":
        d = {"states": self.states, "unitaries": self.unitaries,
             "projectors": self.projectors, "wire_dims": self.wire_dims}
        for k, v in changes.items():
            d[k] = {**d[k], **v}
        return QuantumRealization(**d)

    @property
    def is_pure(self) -> bool:
        return all(np.ndim(s) == 1 for s in self.states.values())


@dataclass(frozen=True)
class WireGraph:
    """Wires with one producer and any number of consumers.

    Causal circuits have exactly one consumer per wire; inflations reuse a
    source wire in several transformation copies (shared-source links) and
    may leave transformation outputs unconsumed.
    """

    kinds: Mapping[str, str]
    producer: Mapping[str, str]
    consumers: Mapping[str, tuple[str, ...]]
    dims: Mapping[str, int]

    @classmethod
    def from_circuit(cls, circuit: CausalCircuit, realization: QuantumRealization | None = None):
        dims = {}
        override = realization.wire_dims if realization is not None else {}
        for w in circuit.edges:
            dims[w.id] = int(override.get(w.id, w.dim if w.dim is not None else 2))
        return cls(dict(circuit.kinds), {w.id: w.src for w in circuit.edges},
                   {w.id: (w.dst,) for w in circuit.edges}, dims)

    def in_wires(self, node: str) -> list[str]:
        return sorted(w for w, cs in self.consumers.items() if node in cs)

    def out_wires(self, node: str) -> list[str]:
        return sorted(w for w, p in self.producer.items() if p == node)

    def nodes(self, kind: str) -> list[str]:
        return sorted(n for n, k in self.kinds.items() if k == kind)

    def global_wires(self) -> list[str]:
        """Source wires in the documented global order."""
        return [w for s in self.nodes(SOURCE) for w in self.out_wires(s)]

    def dim(self, wires: Iterable[str]) -> int:
        return int(np.prod([self.dims[w] for w in wires], dtype=np.int64))

    def topological(self, nodes: Iterable[str]) -> list[str]:
        todo = set(nodes)
        order: list[str] = []
        while todo:
            ready = sorted(n for n in todo
                           if all(self.producer[w] not in todo for w in self.in_wires(n)))
            if not ready:
                raise RealizationError(None, "wiring contains a cycle")
            order.extend(ready)
            todo.difference_update(ready)
        return order


def validate_realization(circuit: CausalCircuit, real: QuantumRealization,
                         tol: float = CONSTRUCTION_TOL) -> WireGraph:
    """Check every realization invariant; raise :class:`RealizationError` on the first failure."""
    g = WireGraph.from_circuit(circuit, real)
    for w, d in g.dims.items():
        if d < 1:
            raise RealizationError(w, f"wire dimension must be positive, got {d}")
    _validate_on_graph(g, real, tol, arities=circuit.arities)
    return g


def _validate_on_graph(g: WireGraph, real: QuantumRealization, tol: float,
                       arities: Mapping[str, int] | None = None) -> None:
    for s in g.nodes(SOURCE):
        if s not in real.states:
            raise RealizationError(s, "missing source state")
        st = np.asarray(real.states[s])
        d = g.dim(g.out_wires(s))
        if not np.all(np.isfinite(st)):
            raise RealizationError(s, "state has non-finite entries")
        if st.ndim == 1:
            if st.shape != (d,):
                raise RealizationError(s, f"state vector has length {st.shape[0]}, expected {d}")
            if abs(np.linalg.norm(st) - 1) > tol:
                raise RealizationError(s, "state vector is not normalized")
        else:
            if st.shape != (d, d):
                raise RealizationError(s, f"density matrix has shape {st.shape}, expected {(d, d)}")
            if not is_density(st, tol):
                raise RealizationError(s, "not a density matrix (Hermitian, PSD, trace 1)")
    for t in g.nodes(TRANSFORMATION):
        if t not in real.unitaries:
            raise RealizationError(t, "missing unitary")
        u = np.asarray(real.unitaries[t])
        din, dout = g.dim(g.in_wires(t)), g.dim(g.out_wires(t))
        if din != dout:
            raise RealizationError(t, f"input dimension {din} differs from output dimension {dout}")
        if u.shape != (dout, din):
            raise RealizationError(t, f"unitary has shape {u.shape}, expected {(dout, din)}")
        if not np.all(np.isfinite(u)) or not is_unitary(u, tol):
            raise RealizationError(t, "matrix is not unitary")
    for m in g.nodes(MEASUREMENT):
        if m not in real.projectors:
            raise RealizationError(m, "missing projector family")
        fam = np.asarray(real.projectors[m])
        d = g.dim(g.in_wires(m))
        arity = (arities or {}).get(m, fam.shape[0] if fam.ndim == 3 else 2)
        if fam.shape != (arity, d, d):
            raise RealizationError(m, f"projector family has shape {fam.shape}, expected {(arity, d, d)}")
        check_projector_family(fam, tol, node=m)


def check_projector_family(fam: np.ndarray, tol: float = CONSTRUCTION_TOL, node: str | None = None) -> None:
    if not np.all(np.isfinite(fam)):
        raise RealizationError(node, "projector has non-finite entries")
    for o, p in enumerate(fam):
        if not is_projector(p, tol):
            raise RealizationError(node, f"outcome {o}: not a Hermitian idempotent projector")
    for a, b in itertools.combinations(range(len(fam)), 2):
        if not np.allclose(fam[a] @ fam[b], 0, atol=tol):
            raise RealizationError(node, f"outcomes {a} and {b}: projectors not orthogonal")
    if not np.allclose(fam.sum(axis=0), np.eye(fam.shape[1]), atol=tol):
        raise RealizationError(node, "projectors do not sum to the identity")


# -- behaviors -----------------------------------------------------------------

@dataclass(frozen=True)
class Behavior:
    parties: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != len(self.parties):
            raise BehaviorError(f"table has {p.ndim} axes for {len(self.parties)} parties")
        if np.any(p < -1e-12):
            raise BehaviorError(f"negative probability {p.min():.3g}")
        if abs(p.sum() - 1) > CONSTRUCTION_TOL:
            raise BehaviorError(f"probabilities sum to {p.sum():.12g}")
        object.__setattr__(self, "parties", tuple(self.parties))
        object.__setattr__(self, "probs", p)

    @property
    def arities(self) -> tuple[int, ...]:
        return self.probs.shape

    def marginal(self, parties: Sequence[str]) -> np.ndarray:
        keep = [self.parties.index(p) for p in parties]
        drop = tuple(i for i in range(len(self.parties)) if i not in keep)
        m = self.probs.sum(axis=drop)
        order = np.argsort(np.argsort(keep))
        return np.transpose(m, order) if m.ndim > 1 else m

    @classmethod
    def from_outcomes(cls, parties: Sequence[str], weights: Mapping[tuple[int, ...], float],
                      arities: Sequence[int] | None = None) -> "Behavior":
        arities = tuple(arities or (2,) * len(parties))
        p = np.zeros(arities)
        for o, w in weights.items():
            p[tuple(o)] += w
        return cls(tuple(parties), p)


def shared_random_bit(parties: Sequence[str] = ("A", "B", "C", "D")) -> Behavior:
    n = len(parties)
    return Behavior.from_outcomes(parties, {(0,) * n: 0.5, (1,) * n: 0.5})


def expectation(probs: np.ndarray, axes: Sequence[int]) -> float:
    """``E[prod (-1)^o]`` over the listed outcome axes of a binary table."""
    if any(probs.shape[a] != 2 for a in axes):
        raise BehaviorError("correlators need binary outcomes")
    p = probs.sum(axis=tuple(a for a in range(probs.ndim) if a not in axes)) if probs.ndim else probs
    sign = np.ones((2,) * len(axes))
    for k in range(len(axes)):
        shape = [1] * len(axes)
        shape[k] = 2
        sign = sign * np.array([1.0, -1.0]).reshape(shape)
    return float((p * sign).sum())


@dataclass(frozen=True)
class Correlators:
    A: float
    B: float
    C: float
    D: float
    AB: float
    AC: float
    AD: float
    BC: float
    BD: float
    CD: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def correlators(behavior: Behavior) -> Correlators:
    """Single and pair correlators of a four-party binary behavior (parties in listed order)."""
    if len(behavior.parties) != 4:
        raise BehaviorError(f"need four parties, got {len(behavior.parties)}")
    if behavior.arities != (2, 2, 2, 2):
        raise BehaviorError(f"correlators need binary outcomes, got arities {behavior.arities}")
    p = behavior.probs
    names = "ABCD"
    vals = {names[i]: expectation(p, [i]) for i in range(4)}
    for i, j in itertools.combinations(range(4), 2):
        vals[names[i] + names[j]] = expectation(p, [i, j])
    return Correlators(**vals)


def is_perfect_coordination(behavior: Behavior, tol: float = BEHAVIOR_TOL) -> bool:
    p = behavior.probs
    if any(a != 2 for a in p.shape):
        return False
    zero, one = (0,) * p.ndim, (1,) * p.ndim
    rest = p.copy()
    rest[zero] = rest[one] = 0.0
    return bool(abs(p[zero] - 0.5) <= tol and abs(p[one] - 0.5) <= tol and rest.max() <= tol)


@dataclass(frozen=True)
class SettingsBehavior:
    """Outcome tables indexed by settings: ``probs[x_1..x_n, o_1..o_n]``."""

    parties: tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        n = len(self.parties)
        if p.ndim != 2 * n:
            raise BehaviorError(f"table has {p.ndim} axes, expected {2 * n}")
        sums = p.reshape(int(np.prod(p.shape[:n])), -1).sum(axis=1)
        if np.any(p < -1e-12) or np.any(np.abs(sums - 1) > CONSTRUCTION_TOL):
            raise BehaviorError("an entry is not a normalized probability table")
        object.__setattr__(self, "parties", tuple(self.parties))
        object.__setattr__(self, "probs", p)

    @property
    def n_settings(self) -> tuple[int, ...]:
        return self.probs.shape[:len(self.parties)]

    @property
    def arities(self) -> tuple[int, ...]:
        return self.probs.shape[len(self.parties):]

    def behavior(self, settings: Sequence[int]) -> Behavior:
        if len(settings) != len(self.parties):
            raise BehaviorError("one setting per party required")
        for x, n in zip(settings, self.n_settings):
            if not 0 <= x < n:
                raise BehaviorError(f"missing setting {tuple(settings)}")
        return Behavior(self.parties, self.probs[tuple(settings)])

    def expectation(self, settings: Mapping[str, int]) -> float:
        """``E[prod (-1)^o]`` over the named parties at the given settings."""
        idx = [self.parties.index(p) for p in settings]
        full = [0] * len(self.parties)
        for p, x in settings.items():
            full[self.parties.index(p)] = x
        return expectation(self.probs[tuple(full)], idx)

    def no_signaling_violation(self) -> float:
        """Largest change of any marginal under a change of the other parties' settings."""
        n = len(self.parties)
        worst = 0.0
        for r in range(1, n):
            for sub in itertools.combinations(range(n), r):
                rest = tuple(i for i in range(n) if i not in sub)
                m = self.probs.sum(axis=tuple(n + i for i in rest))
                worst = max(worst, float(np.ptp(m, axis=rest).max()))
        return worst


# -- simulation ----------------------------------------------------------------

def _sym(i: int) -> str:
    return oe.get_symbol(i)


@lru_cache(maxsize=256)
def _expression(eq: str, shapes: tuple) -> tuple:
    path, info = oe.contract_path(eq, *shapes, shapes=True, optimize="greedy")
    return oe.contract_expression(eq, *shapes, optimize=path), float(info.opt_cost)


def _network(g: WireGraph, real: QuantumRealization, pure: bool):
    """Einsum operands for the circuit; ket-only when ``pure``."""
    wires = sorted(g.dims)
    ket = {w: _sym(2 * i) for i, w in enumerate(wires)}
    bra = {w: _sym(2 * i + 1) for i, w in enumerate(wires)}
    meas = g.nodes(MEASUREMENT)
    outs = {m: _sym(2 * len(wires) + k) for k, m in enumerate(meas)}
    terms, ops = [], []

    def shape(ws):
        return tuple(g.dims[w] for w in ws)

    for s in g.nodes(SOURCE):
        ws = g.out_wires(s)
        st = np.asarray(real.states[s], dtype=complex)
        if pure:
            terms.append("".join(ket[w] for w in ws))
            ops.append(st.reshape(shape(ws)))
        else:
            terms.append("".join(ket[w] for w in ws) + "".join(bra[w] for w in ws))
            ops.append(as_density(st).reshape(shape(ws) * 2))
    for t in g.nodes(TRANSFORMATION):
        wi, wo = g.in_wires(t), g.out_wires(t)
        u = np.asarray(real.unitaries[t], dtype=complex).reshape(shape(wo) + shape(wi))
        terms.append("".join(ket[w] for w in wo) + "".join(ket[w] for w in wi))
        ops.append(u)
        if not pure:
            terms.append("".join(bra[w] for w in wo) + "".join(bra[w] for w in wi))
            ops.append(u.conj())
    out = "".join(outs[m] for m in meas)
    for m in meas:
        wi = g.in_wires(m)
        fam = np.asarray(real.projectors[m], dtype=complex)
        terms.append(outs[m] + "".join(bra[w] for w in wi) + "".join(ket[w] for w in wi))
        ops.append(fam.reshape((fam.shape[0],) + shape(wi) * 2))
        if pure:
            out += "".join(bra[w] for w in wi)
    return ",".join(terms) + "->" + out, ops, len(meas)


def _contract(g: WireGraph, real: QuantumRealization, pure: bool) -> np.ndarray:
    eq, ops, n = _network(g, real, pure)
    expr, _ = _expression(eq, tuple(o.shape for o in ops))
    res = expr(*ops)
    if pure:
        res = (np.abs(res.reshape(res.shape[:n] + (-1,))) ** 2).sum(axis=-1)
    return np.real(res)


_MODE_CACHE: dict = {}


def outcome_table(g: WireGraph, real: QuantumRealization, mode: str = "auto") -> np.ndarray:
    """Raw outcome table on a validated wire graph (no checks)."""
    if mode == "auto":
        mode = "doubled"
        if real.is_pure:
            eq_k, ops_k, _ = _network(g, real, True)
            key = (eq_k, tuple(o.shape for o in ops_k))
            if key not in _MODE_CACHE:
                eq_d, ops_d, _ = _network(g, real, False)
                cost_d = _expression(eq_d, tuple(o.shape for o in ops_d))[1]
                _MODE_CACHE[key] = _expression(*key)[1] <= cost_d
            if _MODE_CACHE[key]:
                mode = "ket"
    return _contract(g, real, mode == "ket")


def simulate(circuit: CausalCircuit, real: QuantumRealization, *, check: bool = True,
             mode: str = "auto") -> Behavior:
    """Outcome probabilities ``Tr[(⊗ Π^o) U ρ U†]`` for every outcome tuple.

    ``mode`` is ``"auto"``, ``"ket"`` (pure states only) or ``"doubled"``.
    """
    g = validate_realization(circuit, real) if check else WireGraph.from_circuit(circuit, real)
    if mode == "ket" and not real.is_pure:
        raise RealizationError(None, "ket mode needs pure states")
    p = outcome_table(g, real, mode)
    p[np.abs(p) < 1e-15] = 0.0
    return Behavior(tuple(g.nodes(MEASUREMENT)), p)


def permutation_matrix(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    """``P`` with ``P @ v`` reordering tensor legs of ``v`` (shape ``dims``) into ``order``."""
    total = int(np.prod(dims, dtype=np.int64))
    src = np.arange(total).reshape(dims).transpose(order).ravel()
    p = np.zeros((total, total))
    p[np.arange(total), src] = 1.0
    return p


def _kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def simulate_dense(circuit: CausalCircuit, real: QuantumRealization) -> Behavior:
    """Brute-force oracle: explicit global state, unitary and measurement operators."""
    g = validate_realization(circuit, real)
    rho = _kron_all(as_density(real.states[s]) for s in g.nodes(SOURCE))
    cur = g.global_wires()
    total = g.dim(cur)
    u_all = np.eye(total, dtype=complex)
    for t in circuit.topological_order():
        if g.kinds[t] != TRANSFORMATION:
            continue
        wi, wo = g.in_wires(t), g.out_wires(t)
        rest = [w for w in cur if w not in wi]
        perm = permutation_matrix([g.dims[w] for w in cur], [cur.index(w) for w in wi + rest])
        step = np.kron(real.unitaries[t], np.eye(g.dim(rest)))
        u_all = step @ perm @ u_all
        cur = wo + rest
    meas = g.nodes(MEASUREMENT)
    final = [w for m in meas for w in g.in_wires(m)]
    perm = permutation_matrix([g.dims[w] for w in cur], [cur.index(w) for w in final])
    u_all = perm @ u_all
    rho = u_all @ rho @ u_all.conj().T
    fams = [np.asarray(real.projectors[m]) for m in meas]
    probs = np.zeros(tuple(f.shape[0] for f in fams))
    for o in itertools.product(*(range(f.shape[0]) for f in fams)):
        pi = _kron_all(f[k] for f, k in zip(fams, o))
        probs[o] = np.real(np.trace(pi @ rho))
    probs[np.abs(probs) < 1e-15] = 0.0
    return Behavior(tuple(meas), probs)


def simulate_settings(circuit: CausalCircuit, base: QuantumRealization,
                      settings: Mapping[str, Sequence[np.ndarray]]) -> SettingsBehavior:
    """Simulate every setting tuple; ``settings[party][x]`` is a projector family."""
    meas = circuit.measurements
    for m in meas:
        if m not in settings or len(settings[m]) == 0:
            raise RealizationError(m, "missing setting")
    counts = [len(settings[m]) for m in meas]
    for m in meas:
        for fam in settings[m]:
            check_projector_family(np.asarray(fam), node=m)
    first = base.replace(projectors={m: settings[m][0] for m in meas})
    g = validate_realization(circuit, first)
    arities = tuple(np.asarray(settings[m][0]).shape[0] for m in meas)
    probs = np.zeros(tuple(counts) + arities)
    for xs in itertools.product(*(range(c) for c in counts)):
        real = base.replace(projectors={m: settings[m][x] for m, x in zip(meas, xs)})
        probs[xs] = outcome_table(g, real)
    probs[np.abs(probs) < 1e-15] = 0.0
    return SettingsBehavior(tuple(meas), probs)


def state_settings_behavior(rho: np.ndarray, parties: Sequence[str],
                            settings: Sequence[Sequence[np.ndarray]]) -> SettingsBehavior:
    """Settings behavior of a multi-qubit (or qudit) state measured locally, one subsystem per party."""
    rho = as_density(rho)
    dims = [np.asarray(s[0]).shape[1] for s in settings]
    n = len(parties)
    r = rho.reshape(tuple(dims) * 2)
    counts = [len(s) for s in settings]
    arities = [np.asarray(s[0]).shape[0] for s in settings]
    probs = np.zeros(tuple(counts) + tuple(arities))
    letters = [_sym(i) for i in range(3 * n + 1)]
    ket, bra, outs = letters[:n], letters[n:2 * n], letters[2 * n:3 * n]
    eq = "".join(ket) + "".join(bra) + "," + ",".join(outs[i] + bra[i] + ket[i] for i in range(n))
    eq += "->" + "".join(outs)
    for xs in itertools.product(*(range(c) for c in counts)):
        fams = [np.asarray(settings[i][x]) for i, x in enumerate(xs)]
        probs[xs] = np.real(oe.contract(eq, r, *fams))
    probs[np.abs(probs) < 1e-15] = 0.0
    return SettingsBehavior(tuple(parties), probs)


# -- Heisenberg picture ----------------------------------------------------------

@dataclass(frozen=True)
class HeisenbergFamily:
    """Conjugated projectors ``U_X† Π_X^o U_X`` on the source wires in ``support``."""

    party: str
    support: tuple[str, ...]
    dims: tuple[int, ...]
    ops: np.ndarray

    def embed(self, global_wires: Sequence[str], global_dims: Sequence[int]) -> np.ndarray:
        """The family as operators on the full space ``global_wires`` (identity elsewhere)."""
        rest = [w for w in global_wires if w not in self.support]
        rest_dims = [global_dims[list(global_wires).index(w)] for w in rest]
        order = list(self.support) + rest
        dims = list(self.dims) + rest_dims
        perm = permutation_matrix(dims, [order.index(w) for w in global_wires])
        eye = np.eye(int(np.prod(rest_dims, dtype=np.int64)))
        return np.stack([perm @ np.kron(o, eye) @ perm.T for o in self.ops])


def upstream_transformations(g: WireGraph, party: str) -> list[str]:
    seen: set[str] = set()
    stack = [party]
    while stack:
        n = stack.pop()
        for w in g.in_wires(n):
            p = g.producer[w]
            if g.kinds[p] == TRANSFORMATION and p not in seen:
                seen.add(p)
                stack.append(p)
    return g.topological(seen)


def source_ancestors(g: WireGraph, party: str) -> set[str]:
    nodes = upstream_transformations(g, party) + [party]
    return {g.producer[w] for n in nodes for w in g.in_wires(n) if g.kinds[g.producer[w]] == SOURCE}


def heisenberg_on_graph(g: WireGraph, real: QuantumRealization, party: str) -> HeisenbergFamily:
    ts = upstream_transformations(g, party)
    used = {w for n in ts + [party] for w in g.in_wires(n)}
    support = [w for w in g.global_wires() if w in used]
    sdims = [g.dims[w] for w in support]
    dsup = int(np.prod(sdims, dtype=np.int64))
    v = np.eye(dsup, dtype=complex).reshape(tuple(sdims) + (dsup,))
    legs = list(support)
    for t in ts:
        wi, wo = g.in_wires(t), g.out_wires(t)
        missing = [w for w in wi if w not in legs]
        if missing:
            raise RealizationError(t, f"input wire {missing[0]} is not available")
        u = np.asarray(real.unitaries[t], dtype=complex)
        u = u.reshape(tuple(g.dims[w] for w in wo) + tuple(g.dims[w] for w in wi))
        v = np.tensordot(u, v, axes=(list(range(len(wo), len(wo) + len(wi))),
                                     [legs.index(w) for w in wi]))
        legs = wo + [w for w in legs if w not in wi]
    mine = g.in_wires(party)
    rest = [w for w in legs if w not in mine]
    v = np.transpose(v, [legs.index(w) for w in mine + rest] + [len(legs)])
    dm = g.dim(mine)
    v = v.reshape(dm, -1, dsup)
    fam = np.asarray(real.projectors[party], dtype=complex)
    if fam.shape[1:] != (dm, dm):
        raise RealizationError(party, f"projector dimension {fam.shape[1]} != {dm}")
    ops = np.einsum("kri,okl,lrj->oij", v.conj(), fam, v, optimize=True)
    return HeisenbergFamily(party, tuple(support), tuple(sdims), ops)


def heisenberg_projectors(circuit: CausalCircuit, real: QuantumRealization, party: str) -> HeisenbergFamily:
    """``Π̃_X^o = U_X† Π_X^o U_X`` where ``U_X`` collects every transformation upstream of ``party``."""
    g = validate_realization(circuit, real)
    if g.kinds.get(party) != MEASUREMENT:
        raise RealizationError(party, "not a measurement node")
    return heisenberg_on_graph(g, real, party)


# -- reference states and measurements ---------------------------------------------

def ghz4() -> np.ndarray:
    psi = np.zeros(16, dtype=complex)
    psi[0] = psi[15] = 1 / np.sqrt(2)
    return psi


def noisy_ghz4(v: float) -> np.ndarray:
    """``v |GHZ4><GHZ4| + (1 - v) I/16``."""
    if not 0.0 <= v <= 1.0 or not np.isfinite(v):
        raise ValueError(f"visibility must lie in [0, 1], got {v}")
    return v * as_density(ghz4()) + (1 - v) * np.eye(16) / 16


def observable_projectors(obs: np.ndarray) -> np.ndarray:
    """Binary projective family of a ±1-valued observable: outcome 0 ↔ eigenvalue +1."""
    obs = np.asarray(obs, dtype=complex)
    eye = np.eye(obs.shape[0])
    return np.stack([(eye + obs) / 2, (eye - obs) / 2])


def bloch_observable(theta: float, phi: float) -> np.ndarray:
    return (np.cos(theta) * SIGMA_Z + np.sin(theta) * np.cos(phi) * SIGMA_X
            + np.sin(theta) * np.sin(phi) * SIGMA_Y)


def computational_projectors(d: int, arity: int = 2) -> np.ndarray:
    """``Π^0`` projects on ``|0>``, the last outcome takes the rest."""
    fam = np.zeros((arity, d, d), dtype=complex)
    for k in range(d):
        fam[min(k, arity - 1), k, k] = 1
    return fam


# -- random realizations --------------------------------------------------------

def random_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    if d == 1:
        return np.exp(2j * np.pi * rng.random()).reshape(1, 1)
    return unitary_group.rvs(d, random_state=rng)


def random_pure(d: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.normal(size=d) + 1j * rng.normal(size=d)
    return z / np.linalg.norm(z)


def random_density(d: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    rank = rank or d
    z = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = z @ z.conj().T
    return rho / np.trace(rho).real


def random_projectors(d: int, rng: np.random.Generator, arity: int = 2) -> np.ndarray:
    """Random projective measurement: a random basis split into ``arity`` random blocks."""
    u = random_unitary(d, rng)
    labels = rng.integers(0, arity, size=d)
    fam = np.zeros((arity, d, d), dtype=complex)
    for k in range(d):
        col = u[:, k:k + 1]
        fam[labels[k]] += col @ col.conj().T
    return fam


def random_realization(circuit: CausalCircuit, rng: np.random.Generator, *,
                       dims: Sequence[int] = (2,), mixed: float = 0.0) -> QuantumRealization:
    """Random states, unitaries and measurements.

    Source wires get dimensions drawn from ``dims``; a transformation's outputs
    reuse a random permutation of its input dimensions when the wire counts
    agree, otherwise all its wires take its first input's dimension. A source
    is mixed with probability ``mixed``.
    """
    wd: dict[str, int] = {}
    for s in circuit.sources:
        for w in circuit.out_wires(s):
            wd[w.id] = int(rng.choice(dims))
    for t in circuit.topological_order():
        if circuit.kinds[t] != TRANSFORMATION:
            continue
        wi = [wd[w.id] for w in circuit.in_wires(t)]
        wo = circuit.out_wires(t)
        if len(wo) == len(wi):
            for w, d in zip(wo, rng.permutation(wi)):
                wd[w.id] = int(d)
        else:
            if len(set(wi)) > 1:
                raise ValueError(f"{t}: cannot balance dimensions {wi}")
            for w in wo:
                wd[w.id] = wi[0]
    g = WireGraph(dict(circuit.kinds), {w.id: w.src for w in circuit.edges},
                  {w.id: (w.dst,) for w in circuit.edges}, wd)
    states = {}
    for s in circuit.sources:
        d = g.dim(g.out_wires(s))
        states[s] = random_density(d, rng, int(rng.integers(1, d + 1))) if rng.random() < mixed \
            else random_pure(d, rng)
    unitaries = {t: random_unitary(g.dim(g.in_wires(t)), rng) for t in circuit.transformations}
    projectors = {m: random_projectors(g.dim(g.in_wires(m)), rng, circuit.arities[m])
                  for m in circuit.measurements}
    return QuantumRealization(states, unitaries, projectors, wd)


def product_realization(circuit: CausalCircuit, dims: Mapping[str, int] | None = None) -> QuantumRealization:
    """All sources ``|0...0>``, identity unitaries, computational measurements."""
    g = WireGraph.from_circuit(circuit, QuantumRealization({}, {}, {}, dict(dims or {})))
    states = {}
    for s in circuit.sources:
        psi = np.zeros(g.dim(g.out_wires(s)), dtype=complex)
        psi[0] = 1
        states[s] = psi
    unitaries = {t: np.eye(g.dim(g.in_wires(t)), dtype=complex) for t in circuit.transformations}
    projectors = {m: computational_projectors(g.dim(g.in_wires(m)), circuit.arities[m])
                  for m in circuit.measurements}
    return QuantumRealization(states, unitaries, projectors, dict(g.dims))


# -- file formats ---------------------------------------------------------------

def realization_to_dict(real: QuantumRealization) -> dict:
    states = {}
    for s in sorted(real.states):
        st = np.asarray(real.states[s])
        states[s] = {"vector" if st.ndim == 1 else "density": complex_to_pairs(st)}
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "realization",
        "wire_dims": {w: int(real.wire_dims[w]) for w in sorted(real.wire_dims)},
        "states": states,
        "unitaries": {t: complex_to_pairs(real.unitaries[t]) for t in sorted(real.unitaries)},
        "measurements": {m: [complex_to_pairs(p) for p in real.projectors[m]]
                         for m in sorted(real.projectors)},
    }


def realization_from_dict(data: Mapping, circuit: CausalCircuit | None = None) -> QuantumRealization:
    """Parse a realization; with ``circuit`` given every invariant is validated."""
    try:
        states = {}
        for s, entry in data["states"].items():
            if "vector" in entry:
                states[s] = pairs_to_complex(entry["vector"])
            elif "density" in entry:
                states[s] = pairs_to_complex(entry["density"])
            else:
                raise RealizationError(s, "state needs a 'vector' or 'density' field")
        unitaries = {t: pairs_to_complex(u) for t, u in data.get("unitaries", {}).items()}
        projectors = {m: np.stack([pairs_to_complex(p) for p in fam])
                      for m, fam in data.get("measurements", {}).items()}
        dims = {w: int(d) for w, d in data.get("wire_dims", {}).items()}
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, RealizationError):
            raise
        raise RealizationError(None, f"malformed realization document: {exc}") from exc
    real = QuantumRealization(states, unitaries, projectors, dims)
    if circuit is not None:
        validate_realization(circuit, real)
    return real


def dumps_realization(real: QuantumRealization) -> str:
    from .serialization import dumps
    return dumps(realization_to_dict(real))


def behavior_to_dict(b: Behavior) -> dict:
    table = [{"outcome": list(o), "p": round_sig(b.probs[o])}
             for o in itertools.product(*(range(a) for a in b.arities))]
    return {"schema_version": SCHEMA_VERSION, "kind": "behavior", "parties": list(b.parties),
            "arities": list(b.arities), "table": table}


def settings_behavior_to_dict(sb: SettingsBehavior) -> dict:
    n = len(sb.parties)
    table = []
    for xs in itertools.product(*(range(c) for c in sb.n_settings)):
        for o in itertools.product(*(range(a) for a in sb.arities)):
            table.append({"settings": list(xs), "outcome": list(o), "p": round_sig(sb.probs[xs + o])})
    return {"schema_version": SCHEMA_VERSION, "kind": "settings-behavior", "parties": list(sb.parties),
            "settings": list(sb.n_settings), "arities": list(sb.arities)[:n], "table": table}


def behavior_from_dict(data: Mapping) -> Behavior | SettingsBehavior:
    try:
        parties = tuple(data["parties"])
        arities = tuple(int(a) for a in data["arities"])
        if data.get("kind") == "settings-behavior":
            counts = tuple(int(c) for c in data["settings"])
            p = np.zeros(counts + arities)
            for row in data["table"]:
                p[tuple(row["settings"]) + tuple(row["outcome"])] = float(row["p"])
            return SettingsBehavior(parties, p)
        p = np.zeros(arities)
        for row in data["table"]:
            p[tuple(row["outcome"])] = float(row["p"])
    except (KeyError, TypeError, IndexError) as exc:
        raise BehaviorError(f"malformed behavior document: {exc}") from exc
    return Behavior(parties, p)


def loads_behavior(text: str) -> Behavior | SettingsBehavior:
    return behavior_from_dict(json.loads(text))
