import os
import subprocess
import sys

import numpy as np
import pytest

from coordcert import kernels
from coordcert.inequalities import MeasurementSettings, eval_ineq2, ghz_settings_behavior
from coordcert.inflation import build_moment_problem
from coordcert.quantum import noisy_ghz4
from coordcert.sdp import _csr

IMPLS = kernels.implementations()
needs_numba = pytest.mark.skipif(kernels.numba is None, reason="numba not installed")

SP, SM = np.array([1.0, 1, 1, -1]), np.array([1.0, 1, -1, 1])


def _schur_args(seed):
    a, _, _ = build_moment_problem(level=2).to_sdp().matrices()
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(a.shape[1],) * 2)
    return a, g @ g.T


@pytest.mark.parametrize("seed", range(3))
def test_schur_numpy_matches_dense_definition(seed):
    a, w = _schur_args(seed)
    ref = np.einsum("iab,bc,jcd,da->ij", a, w, a, w)
    assert IMPLS["schur_complement"]["numpy"](w, *_csr(a)) == pytest.approx(ref, abs=1e-9)


@needs_numba
@pytest.mark.parametrize("seed", range(3))
def test_schur_numba_matches_numpy(seed):
    a, w = _schur_args(seed)
    args = (w, *_csr(a))
    np.testing.assert_allclose(IMPLS["schur_complement"]["numba"](*args),
                               IMPLS["schur_complement"]["numpy"](*args), atol=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_ineq2_terms_match_behavior_evaluation(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(0.5, 1)
    settings = MeasurementSettings(rng.uniform(0, 2 * np.pi, 18))
    rep = eval_ineq2(ghz_settings_behavior(v, settings))
    for label, fn in IMPLS["ineq2_terms"].items():
        if fn is None:
            continue
        cd, chsh_m, chsh_p, sigma = fn(noisy_ghz4(v).astype(np.complex128), settings.observables(), SP, SM)
        assert (1 + cd) / 2 == pytest.approx(rep.p_plus, abs=1e-10), label
        assert chsh_m == pytest.approx(rep.chsh_minus, abs=1e-9), label
        assert chsh_p == pytest.approx(rep.chsh_plus, abs=1e-9), label
        assert sigma == pytest.approx(rep.sigma, abs=1e-10), label


def test_ineq2_terms_empty_branch_is_nan():
    # C1 = D1 = Z on GHZ gives C1 D1 = +1 surely, so the -1 branch is empty
    obs = MeasurementSettings(np.zeros(18)).observables()
    for fn in IMPLS["ineq2_terms"].values():
        if fn is not None:
            out = fn(noisy_ghz4(1.0).astype(np.complex128), obs, SP, SM)
            assert np.isnan(out[1]) and np.isfinite(out[2])


@needs_numba
def test_ascent_numba_matches_numpy():
    x0 = np.random.default_rng(0).uniform(0, 2 * np.pi, 18)
    args = (x0, noisy_ghz4(0.95).astype(np.complex128), SP, SM, 100.0, 3, 1e-5, 1e-12)
    xa, fa, _ = IMPLS["ineq2_ascent"]["numpy"](*args)
    xb, fb, _ = IMPLS["ineq2_ascent"]["numba"](*args)
    assert fa == pytest.approx(fb, abs=1e-8)
    np.testing.assert_allclose(xa, xb, atol=1e-6)


def test_jit_can_be_disabled():
    code = ("from coordcert import kernels; "
            "print(kernels.JIT_ENABLED, kernels.ineq2_terms is kernels._ineq2_terms_numpy)")
    env = dict(os.environ, COORDCERT_DISABLE_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["False", "True"]


def test_fallback_path_gives_same_ghz_value():
    code = ("from coordcert.inequalities import optimize_settings, OptimizerOptions; "
            "print(repr(optimize_settings(1.0, options=OptimizerOptions(restarts=2, sweeps=5)).objective))")
    vals = []
    for flag in ("1", "0"):
        env = dict(os.environ, COORDCERT_DISABLE_JIT=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        vals.append(float(out.stdout))
    assert vals[0] == pytest.approx(vals[1], abs=1e-8)
