"""Compare the numba kernels with their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is called once untimed (compilation), then timed over ``repeat``
calls. Outputs of the two implementations are checked for agreement first.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from coordcert import kernels
from coordcert.inflation import build_moment_problem
from coordcert.quantum import noisy_ghz4
from coordcert.sdp import _csr


def _schur_case():
    p = build_moment_problem(level=3).to_sdp()
    a, _, _ = p.matrices()
    rng = np.random.default_rng(0)
    g = rng.normal(size=(p.n, p.n))
    w = g @ g.T + p.n * np.eye(p.n)
    return (w, *_csr(a))


def _ineq2_case():
    rng = np.random.default_rng(0)
    obs = kernels._bloch_numpy(rng.uniform(0, 2 * np.pi, 18))
    return (noisy_ghz4(0.95).astype(np.complex128), obs,
            np.array([1.0, 1, 1, -1]), np.array([1.0, 1, -1, 1]))


def _ascent_case():
    rng = np.random.default_rng(0)
    return (rng.uniform(0, 2 * np.pi, 18), noisy_ghz4(0.95).astype(np.complex128),
            np.array([1.0, 1, 1, -1]), np.array([1.0, 1, -1, 1]), 100.0, 5, 1e-5, 1e-12)


CASES = {"schur_complement": _schur_case, "ineq2_terms": _ineq2_case, "ineq2_ascent": _ascent_case}


def _first(out):
    return out[1] if isinstance(out, tuple) else out


def bench(repeat: int) -> list[tuple[str, float, float | None]]:
    rows = []
    for name, impls in kernels.implementations().items():
        args = CASES[name]()
        ref = impls["numpy"](*args)
        times = {}
        for label, fn in impls.items():
            if fn is None:
                continue
            out = fn(*args)
            if not np.allclose(_first(out), _first(ref), atol=1e-8):
                raise AssertionError(f"{name}: {label} disagrees with numpy")
            t0 = time.perf_counter()
            for _ in range(repeat):
                fn(*args)
            times[label] = (time.perf_counter() - t0) / repeat
        rows.append((name, times["numpy"], times.get("numba")))
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, t_np, t_nb in bench(args.repeat):
        if t_nb is None:
            print(f"{name:<18}{1e3 * t_np:>12.3f}{'n/a':>12}{'':>10}")
        else:
            print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
