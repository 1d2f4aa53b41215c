"""The quantum coordination bound from the inflation moment relaxation.

``<A><D>`` is bilinear in moments, so the independence of A and D is imposed
at fixed ``<A> = alpha`` and ``<D> = delta`` and the resulting linear SDPs are
scanned over a grid of ``(alpha, delta)``, then refined around the best cell.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .inflation import InflationSpec, MomentProblem, Word, build_moment_problem, fig2_inflation
from .parallel import pmap
from .quantum import bloch_observable, observable_projectors
from .sdp import (OPTIMAL, Certificate, FeasibilityReport, SdpOptions, check_feasible_point,
                  infeasibility_certificate, solve)

EQ1_QUANTUM = 3 * math.sqrt(3) / 2
WITNESS_ANGLES = {"A": 0.0, "B": math.pi / 6, "C": math.pi / 3, "D": math.pi / 2}
TIE_TOL = 1e-6


# -- witness --------------------------------------------------------------------------

def witness_operators(angles: dict[str, float] | None = None) -> dict[str, np.ndarray]:
    """Outcome-0 projectors of chained qubit observables, lifted to two qubits.

    On ``|Phi+>``, ``P (x) I`` and ``I (x) P^T`` have the same statistics, so
    A and C act on the first qubit and B and D on the second. The lifted
    operators commute exactly where the inflation says they must (only the
    pairs A,C and B,D fail to), while every moment equals the normalized
    single-qubit trace ``tr(v^dagger w) / 2``.
    """
    angles = angles or WITNESS_ANGLES
    eye = np.eye(2)
    ops = {}
    for p, th in angles.items():
        proj = observable_projectors(bloch_observable(th, 0.0))[0]
        ops[p] = np.kron(proj, eye) if p in "AC" else np.kron(eye, proj.T)
    return ops


def _phi_plus() -> np.ndarray:
    return np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


def witness_moment_matrix(index: Sequence[Word], angles: dict[str, float] | None = None,
                          complex_moments: bool = False) -> np.ndarray:
    ops = witness_operators(angles)
    phi = _phi_plus()
    vecs = []
    for w in index:
        v = phi
        for p, o in reversed(w):
            op = ops[p] if o == 0 else np.eye(4) - ops[p]
            v = op @ v
        vecs.append(v)
    v = np.array(vecs)
    m = v.conj() @ v.T
    if complex_moments:
        return np.block([[m.real, -m.imag], [m.imag, m.real]])
    return m.real


@dataclass(frozen=True)
class WitnessReport:
    value: float
    feasibility: FeasibilityReport
    gap_to_bound: float

    def as_dict(self) -> dict:
        f = self.feasibility
        return {"value": self.value, "max_violation": f.max_violation,
                "min_eigenvalue": f.min_eigenvalue, "feasible": f.feasible,
                "gap_to_bound": self.gap_to_bound}


def witness_report(level: int = 2, spec: InflationSpec | None = None,
                   complex_moments: bool = False) -> WitnessReport:
    """Check the chained-observable witness against the ``alpha = delta = 0`` problem."""
    mp = build_moment_problem(spec, level, 0.0, 0.0, complex_moments=complex_moments)
    p = mp.to_sdp()
    rep = check_feasible_point(p, witness_moment_matrix(mp.index, complex_moments=complex_moments))
    return WitnessReport(rep.objective, rep, rep.objective - EQ1_QUANTUM)


# -- grid scan ------------------------------------------------------------------------

@dataclass(frozen=True)
class Cell:
    alpha: float
    delta: float
    status: str
    value: float
    dual_value: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass(frozen=True)
class BoundResult:
    level: int
    bound: float
    alpha: float
    delta: float
    cells: tuple[Cell, ...]
    failures: int
    witness: WitnessReport

    def as_dict(self) -> dict:
        return {"level": self.level, "bound": self.bound, "argmax": [self.alpha, self.delta],
                "failures": self.failures, "cells": len(self.cells),
                "witness": self.witness.as_dict()}

    def table(self) -> list[dict]:
        return [{"alpha": c.alpha, "delta": c.delta, "status": c.status, "value": c.value,
                 "dual_value": c.dual_value, "iterations": c.iterations} for c in self.cells]


def _solve_cell(args) -> Cell:
    spec, level, alpha, delta, options, complex_moments = args
    mp = build_moment_problem(spec, level, alpha, delta, complex_moments=complex_moments)
    try:
        sol = solve(mp.to_sdp(), options)
    except (np.linalg.LinAlgError, ValueError) as exc:
        return Cell(alpha, delta, f"error: {exc}", float("nan"), float("nan"), 0)
    return Cell(alpha, delta, sol.status, sol.value, sol.dual_value, sol.iterations)


def grid_points(step: float, center: tuple[float, float] = (0.0, 0.0), radius: float = 1.0) -> list[tuple[float, float]]:
    """Points ``center + k*step`` within ``radius`` (per axis), clipped to ``[-1, 1]^2``."""
    if step <= 0:
        raise ValueError("grid step must be positive")
    k = int(round(radius / step))
    pts = []
    for axis_c in (center[0], center[1]):
        vals = [round(axis_c + i * step, 12) for i in range(-k, k + 1)]
        pts.append(sorted({v for v in vals if -1 - 1e-12 <= v <= 1 + 1e-12}))
    return [(max(-1.0, min(1.0, a)), max(-1.0, min(1.0, d))) for a in pts[0] for d in pts[1]]


def _best(cells: Sequence[Cell]) -> Cell | None:
    good = [c for c in cells if c.ok]
    if not good:
        return None
    top = max(c.value for c in good)
    near = [c for c in good if c.value >= top - TIE_TOL]
    # ties resolved toward the origin, then lexicographically
    return min(near, key=lambda c: (c.alpha ** 2 + c.delta ** 2, c.alpha, c.delta))


def coordination_bound(level: int = 2, grid_step: float = 0.1, refine_step: float = 0.01,
                       refine_radius: float = 0.1, jobs: int | None = 1,
                       options: SdpOptions | None = None, spec: InflationSpec | None = None,
                       complex_moments: bool = False) -> BoundResult:
    """Maximize ``<AB> + <BC> + <CD> - <A><D>/2`` over the relaxation and the grid."""
    if level < 1:
        raise ValueError("level must be at least 1")
    spec = spec or fig2_inflation()
    options = options or SdpOptions()
    pts = grid_points(grid_step)
    cells = pmap(_solve_cell, [(spec, level, a, d, options, complex_moments) for a, d in pts], jobs)
    best = _best(cells)
    if best is not None and refine_step > 0 and refine_radius > 0:
        done = {(c.alpha, c.delta) for c in cells}
        extra = [p for p in grid_points(refine_step, (best.alpha, best.delta), refine_radius) if p not in done]
        cells += pmap(_solve_cell, [(spec, level, a, d, options, complex_moments) for a, d in extra], jobs)
        best = _best(cells)
    failures = sum(not c.ok for c in cells)
    witness = witness_report(level, spec, complex_moments)
    if best is None:
        return BoundResult(level, float("nan"), float("nan"), float("nan"), tuple(cells), failures, witness)
    top = max(c.value for c in cells if c.ok)
    return BoundResult(level, top, best.alpha, best.delta, tuple(cells), failures, witness)


# -- perfect coordination ----------------------------------------------------------------

def perfect_coordination_problem(level: int = 2, spec: InflationSpec | None = None,
                                 complex_moments: bool = False) -> MomentProblem:
    """``<AB> = <BC> = <CD> = 1`` with ``<A> = <D> = 0`` and ``<A0 D0> = 1/4``."""
    return build_moment_problem(spec, level, 0.0, 0.0, complex_moments=complex_moments,
                                fixed_correlators={"AB": 1.0, "BC": 1.0, "CD": 1.0})


def perfect_coordination_certificate(level: int = 2, options: SdpOptions | None = None,
                                     complex_moments: bool = False) -> Certificate | None:
    return infeasibility_certificate(perfect_coordination_problem(level, complex_moments=complex_moments).to_sdp(),
                                     options)
