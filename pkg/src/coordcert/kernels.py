"""Hot numeric kernels, compiled with numba when available.

Each kernel has a numba implementation (``*_numba``) and a vectorized numpy
implementation (``*_numpy``). The public names point at the numba versions
unless numba is missing or ``COORDCERT_DISABLE_JIT=1`` is set in the
environment before import.

Kernels:

``schur_complement``
    Interior-point normal matrix ``M[i, j] = <A_i, W A_j W>`` for sparse
    symmetric constraint matrices stored in CSR-like form.
``ineq2_terms``
    Four-qubit correlators of a 16x16 density matrix needed by the GHZ
    inequality: ``<C1 D1>``, the two conditioned CHSH values and the chain sum.
``ineq2_ascent``
    Coordinate Newton ascent of the regime-aware GHZ objective over the 18 Bloch
    angles of the nine qubit observables.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and os.environ.get("COORDCERT_DISABLE_JIT", "0") not in ("1", "true", "yes")

# Order of the nine qubit observables passed to ineq2_terms.
OBS_ORDER = ("A0", "A1", "B0", "B1", "B2", "C0", "C1", "D0", "D1")
BRANCH_EPS = 1e-12


# -- schur complement ----------------------------------------------------------

def _schur_numpy(W, ptr, rows, cols, vals):
    m = ptr.shape[0] - 1
    n = W.shape[0]
    dense = np.zeros((m, n, n))
    for k in range(m):
        sl = slice(ptr[k], ptr[k + 1])
        np.add.at(dense[k], (rows[sl], cols[sl]), vals[sl])
    waw = W @ dense @ W
    return dense.reshape(m, -1) @ waw.reshape(m, -1).T


if numba is not None:

    @njit(cache=True)
    def _schur_numba(W, ptr, rows, cols, vals):
        m = ptr.shape[0] - 1
        out = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                acc = 0.0
                for a in range(ptr[i], ptr[i + 1]):
                    p = rows[a]
                    q = cols[a]
                    va = vals[a]
                    for b in range(ptr[j], ptr[j + 1]):
                        acc += va * vals[b] * W[q, rows[b]] * W[cols[b], p]
                out[i, j] = acc
                out[j, i] = acc
        return out


# -- GHZ inequality terms ------------------------------------------------------

def _ineq2_terms_numpy(rho, obs, sign_plus, sign_minus):
    r = rho.reshape((2,) * 8)
    eye = np.eye(2, dtype=np.complex128)

    def corr(a, b, c, d):
        # Tr(rho (a x b x c x d)) with rho indexed [ket..., bra...]
        return np.einsum("ijklmnop,mi,nj,ok,pl->", r, a, b, c, d).real

    A = obs[0:2]
    B = obs[2:5]
    C0, C1, D0, D1 = obs[5], obs[6], obs[7], obs[8]
    cd = corr(eye, eye, C1, D1)
    chsh_p = 0.0
    chsh_m = 0.0
    k = 0
    for x in range(2):
        for y in range(2):
            ab = corr(A[x], B[y], eye, eye)
            abcd = corr(A[x], B[y], C1, D1)
            chsh_p += sign_plus[k] * (ab + abcd)
            chsh_m += sign_minus[k] * (ab - abcd)
            k += 1
    # a branch of probability zero has no conditioned value
    chsh_p = chsh_p / (1.0 + cd) if 1.0 + cd > BRANCH_EPS else np.nan
    chsh_m = chsh_m / (1.0 - cd) if 1.0 - cd > BRANCH_EPS else np.nan
    sigma = corr(A[0], B[2], eye, eye) + corr(eye, B[2], C0, eye) + corr(eye, eye, C0, D0)
    return np.array([cd, chsh_m, chsh_p, sigma])


if numba is not None:

    @njit(cache=True)
    def _corr4(rho, a, b, c, d):
        acc = 0.0 + 0.0j
        for i in range(16):
            i0 = (i >> 3) & 1
            i1 = (i >> 2) & 1
            i2 = (i >> 1) & 1
            i3 = i & 1
            for j in range(16):
                j0 = (j >> 3) & 1
                j1 = (j >> 2) & 1
                j2 = (j >> 1) & 1
                j3 = j & 1
                acc += rho[i, j] * a[j0, i0] * b[j1, i1] * c[j2, i2] * d[j3, i3]
        return acc.real

    @njit(cache=True)
    def _ineq2_terms_numba(rho, obs, sign_plus, sign_minus):
        eye = np.eye(2, dtype=np.complex128)
        C0 = obs[5]
        C1 = obs[6]
        D0 = obs[7]
        D1 = obs[8]
        cd = _corr4(rho, eye, eye, C1, D1)
        chsh_p = 0.0
        chsh_m = 0.0
        k = 0
        for x in range(2):
            for y in range(2):
                ab = _corr4(rho, obs[x], obs[2 + y], eye, eye)
                abcd = _corr4(rho, obs[x], obs[2 + y], C1, D1)
                chsh_p += sign_plus[k] * (ab + abcd)
                chsh_m += sign_minus[k] * (ab - abcd)
                k += 1
        chsh_p = chsh_p / (1.0 + cd) if 1.0 + cd > BRANCH_EPS else np.nan
        chsh_m = chsh_m / (1.0 - cd) if 1.0 - cd > BRANCH_EPS else np.nan
        sigma = (_corr4(rho, obs[0], obs[4], eye, eye)
                 + _corr4(rho, eye, obs[4], C0, eye)
                 + _corr4(rho, eye, eye, C0, D0))
        out = np.empty(4)
        out[0] = cd
        out[1] = chsh_m
        out[2] = chsh_p
        out[3] = sigma
        return out


# -- settings optimizer ----------------------------------------------------------
#
# params holds (theta, phi) per observable in OBS_ORDER; the observable is
# cos(theta) Z + sin(theta) (cos(phi) X + sin(phi) Y).

def _make_ascent(terms, bloch, jit):
    def objective(params, rho, sign_plus, sign_minus, penalty):
        t = terms(rho, bloch(params), sign_plus, sign_minus)
        if not (np.isfinite(t[1]) and np.isfinite(t[2])):
            return -1e300
        # signed square: monotone in the chain sum, equal to the printed
        # term once 3*sigma >= 8
        chain = 3.0 * t[3] - 8.0
        return t[1] * t[1] + t[2] * t[2] + 8.0 * chain * abs(chain) - penalty * t[0] * t[0]

    def ascent(params, rho, sign_plus, sign_minus, penalty, sweeps, h, tol):
        x = params.copy()
        f0 = objective(x, rho, sign_plus, sign_minus, penalty)
        used = 0
        for sweep in range(sweeps):
            used = sweep + 1
            start = f0
            for i in range(x.shape[0]):
                xi = x[i]
                x[i] = xi + h
                fp = objective(x, rho, sign_plus, sign_minus, penalty)
                x[i] = xi - h
                fm = objective(x, rho, sign_plus, sign_minus, penalty)
                g = (fp - fm) / (2.0 * h)
                c = (fp - 2.0 * f0 + fm) / (h * h)
                if c < -1e-8:
                    step = -g / c
                else:
                    step = 0.25 if g > 0 else -0.25
                if step > 1.5:
                    step = 1.5
                elif step < -1.5:
                    step = -1.5
                x[i] = xi
                for _ in range(30):
                    x[i] = xi + step
                    f1 = objective(x, rho, sign_plus, sign_minus, penalty)
                    if f1 > f0:
                        f0 = f1
                        break
                    step *= 0.5
                    x[i] = xi
            if f0 - start <= tol:
                break
        return x, f0, used

    if jit:
        objective = njit(cache=True)(objective)
        ascent = njit(cache=True)(ascent)
    return objective, ascent


def _bloch_numpy(params):
    th = params[0::2]
    ph = params[1::2]
    obs = np.empty((th.shape[0], 2, 2), dtype=np.complex128)
    obs[:, 0, 0] = np.cos(th)
    obs[:, 1, 1] = -np.cos(th)
    obs[:, 0, 1] = np.sin(th) * np.exp(-1j * ph)
    obs[:, 1, 0] = np.sin(th) * np.exp(1j * ph)
    return obs


_ineq2_objective_numpy, _ineq2_ascent_numpy = _make_ascent(_ineq2_terms_numpy, _bloch_numpy, False)

if numba is not None:

    @njit(cache=True)
    def _bloch_numba(params):
        n = params.shape[0] // 2
        obs = np.empty((n, 2, 2), dtype=np.complex128)
        for k in range(n):
            th = params[2 * k]
            ph = params[2 * k + 1]
            obs[k, 0, 0] = np.cos(th)
            obs[k, 1, 1] = -np.cos(th)
            obs[k, 0, 1] = np.sin(th) * np.exp(-1j * ph)
            obs[k, 1, 0] = np.sin(th) * np.exp(1j * ph)
        return obs

    _ineq2_objective_numba, _ineq2_ascent_numba = _make_ascent(_ineq2_terms_numba, _bloch_numba, True)


if JIT_ENABLED:
    schur_complement = _schur_numba
    ineq2_terms = _ineq2_terms_numba
    bloch_observables = _bloch_numba
    ineq2_objective = _ineq2_objective_numba
    ineq2_ascent = _ineq2_ascent_numba
else:
    schur_complement = _schur_numpy
    ineq2_terms = _ineq2_terms_numpy
    bloch_observables = _bloch_numpy
    ineq2_objective = _ineq2_objective_numpy
    ineq2_ascent = _ineq2_ascent_numpy


def implementations():
    """Return ``{kernel: {"numpy": f, "numba": f or None}}`` for tests and benchmarks."""
    return {
        "schur_complement": {"numpy": _schur_numpy,
                             "numba": _schur_numba if numba is not None else None},
        "ineq2_terms": {"numpy": _ineq2_terms_numpy,
                        "numba": _ineq2_terms_numba if numba is not None else None},
        "ineq2_ascent": {"numpy": _ineq2_ascent_numpy,
                         "numba": _ineq2_ascent_numba if numba is not None else None},
    }
