"""End-to-end acceptance checks, one test per criterion.

Each test prints ``criterion N: PASS|FAIL ...``; the lines are repeated in the
terminal summary.
"""
import json
import math
import time

import numpy as np
import pytest

from coordcert.circuit import fig1_circuit
from coordcert.cli import main
from coordcert.inequalities import chsh_tsirelson_calibration, eval_ineq1
from coordcert.inflation import InflationRealization, fig2_inflation, random_inflation_realization, sos_chain_check
from coordcert.quantum import (QuantumRealization, computational_projectors, is_perfect_coordination,
                               random_realization, simulate, simulate_dense)

from netgen import random_case

pytestmark = pytest.mark.acceptance

Q = 3 * math.sqrt(3) / 2


def cli(capsys, argv):
    t0 = time.perf_counter()
    code = main(argv)
    elapsed = time.perf_counter() - t0
    return code, json.loads(capsys.readouterr().out), elapsed


def test_criterion_1_shared_random_bit(capsys, verdict):
    code, rep, dt = cli(capsys, ["ineq1", "--fixture", "shared-random-bit"])
    r = rep["report"]
    ok = code == 0 and abs(r["lhs"] - 3) <= 1e-12 and abs(r["rhs"] - Q) <= 1e-12 and dt < 1
    assert verdict(1, ok, f"lhs={r['lhs']!r} rhs={r['rhs']!r} time={dt:.3f}s")


def test_criterion_2_level2_bound(capsys, verdict):
    code, rep, dt = cli(capsys, ["bound", "--level", "2", "--jobs", "1"])
    w = rep["witness"]
    ok = (code == 0 and abs(rep["bound"] - Q) <= 1e-3 and w["feasible"]
          and abs(w["value"] - Q) <= 1e-9 and dt < 120)
    assert verdict(2, ok, f"bound={rep['bound']:.10f} witness={w['value']:.12f} "
                          f"failures={rep['failures']}/{rep['cells']} time={dt:.1f}s")


def test_criterion_3_perfect_coordination_certificate(capsys, verdict):
    code, rep, dt = cli(capsys, ["certify"])
    c = rep["certificate"]
    ok = code == 0 and c is not None and c["valid"] and c["margin"] > 1e-9 and dt < 5
    assert verdict(3, ok, f"margin={c and c['margin']:.3e} min_eig={c and c['min_eig']:.2e} time={dt:.2f}s")


def test_criterion_4_ghz4_lhs(capsys, verdict):
    code, rep, dt = cli(capsys, ["ineq2", "--fixture", "ghz4"])
    lhs = rep["report"]["lhs"]
    assert verdict(4, code == 0 and abs(lhs - 24) <= 1e-6 and dt < 1, f"lhs={lhs!r} time={dt:.3f}s")


def test_criterion_5_visibility_threshold(capsys, verdict):
    code, rep, dt = cli(capsys, ["threshold", "--jobs", "1"])
    v = rep["v_star"]
    ok = code == 0 and abs(v - 0.9417) <= 0.005 and dt < 600
    assert verdict(5, ok, f"v*={v:.4f} bracket={rep['bracket']} time={dt:.1f}s")


def test_criterion_6_no_coordination_in_fig1(capsys, verdict):
    t0 = time.perf_counter()
    c = fig1_circuit()
    rng = np.random.default_rng(20240601)
    worst, coordinated = -math.inf, 0
    for _ in range(1000):
        b = simulate(c, random_realization(c, rng, dims=(2, 3), mixed=0.2))
        worst = max(worst, eval_ineq1(b).violation)
        coordinated += is_perfect_coordination(b)
    code, rep, _ = cli(capsys, ["search", "--dim", "2", "--restarts", "32", "--jobs", "1"])
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and coordinated == 0 and code == 0 and rep["score"] < 1 - 1e-3 and dt < 600
    assert verdict(6, ok, f"max violation={worst:.4f} coordinated={coordinated} "
                          f"search score={rep['score']:.6f} time={dt:.1f}s")


def test_criterion_7_staged_vs_dense(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    err = 0.0
    for _ in range(50):
        c, real = random_case(rng, max_dim=64)
        err = max(err, float(np.abs(simulate(c, real).probs - simulate_dense(c, real).probs).max()))
    dt = time.perf_counter() - t0
    assert verdict(7, err <= 1e-10 and dt < 60, f"max |staged - dense|={err:.2e} time={dt:.2f}s")


def _coordinated_instances():
    spec = fig2_inflation()
    g = spec.wire_graph()
    out = []
    for outcome in (0, 1):
        states = {}
        for s in spec.sources:
            psi = np.zeros(g.dim(g.out_wires(s)))
            psi[0] = 1
            states[s] = psi
        unitaries = {t: np.eye(g.dim(g.in_wires(t))) for t in spec.transformations}
        projectors = {}
        for m in spec.measurements:
            fam = computational_projectors(g.dim(g.in_wires(m)))
            projectors[m] = fam[::-1] if outcome else fam
        out.append(InflationRealization(spec, QuantumRealization(states, unitaries, projectors, dict(g.dims))))
    return out


def test_criterion_8_chained_residuals(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    instances = [random_inflation_realization(rng) for _ in range(100)] + _coordinated_instances()
    slack, gap_err, n_coord = math.inf, 0.0, 0
    for infl in instances:
        r = sos_chain_check(infl)
        slack = min(slack, r.triangle_bound + 1e-9 - r.r_ad)
        if max(r.r_ab, r.r_bc, r.r_cd) <= 1e-10:
            n_coord += 1
            gap_err = max(gap_err, abs(r.independence_gap - abs(r.p_a - r.p_a * r.p_d)))
    dt = time.perf_counter() - t0
    ok = slack >= 0 and gap_err <= 1e-8 and n_coord >= 2 and dt < 120
    assert verdict(8, ok, f"min slack={slack:.3e} coordinated={n_coord} gap error={gap_err:.1e} time={dt:.1f}s")


def test_criterion_9_chsh_calibration(verdict):
    t0 = time.perf_counter()
    val = chsh_tsirelson_calibration()
    dt = time.perf_counter() - t0
    assert verdict(9, abs(val - 2 * math.sqrt(2)) <= 1e-6 and dt < 30, f"chsh={val!r} time={dt:.2f}s")
