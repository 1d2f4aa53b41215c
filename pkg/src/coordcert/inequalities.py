"""The two coordination inequalities and the optimizers built around them.

Eq. 1 bounds the chain of pair correlators of any four-party behavior without
a global common cause::

    <AB> + <BC> + <CD> <= <A><D>/2 + 3*sqrt(3)/2

Eq. 2 combines two CHSH expressions, each conditioned on the product of the
outcomes of C and D at their setting 1, with the chain sum
``S = <A0 B2> + <B2 C0> + <C0 D0>``::

    CHSH_-^2 + CHSH_+^2 + 8 (3 S - 8)^2 <= 16

The printed precondition is ``p(C1 D1 = 1) = p(C1 D1 = -1)``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .parallel import pmap
from .quantum import (SIGMA_Z, Behavior, BehaviorError, SettingsBehavior, as_density,
                      correlators, noisy_ghz4, observable_projectors, state_settings_behavior)
from .serialization import round_sig

EQ1_BOUND = 3 * math.sqrt(3) / 2
EQ2_BOUND = 16.0
REPORT_TOL = 1e-9
PRECONDITION_TOL = 1e-6
PARTIES = ("A", "B", "C", "D")
SETTING_COUNTS = (2, 3, 2, 2)


# -- Eq. 1 -----------------------------------------------------------------------

@dataclass(frozen=True)
class Ineq1Report:
    lhs: float
    rhs: float
    violation: float
    violated: bool
    tol: float = REPORT_TOL

    def as_dict(self) -> dict:
        return asdict(self)


def eval_ineq1(behavior: Behavior, tol: float = REPORT_TOL) -> Ineq1Report:
    c = correlators(behavior)
    lhs = c.AB + c.BC + c.CD
    rhs = c.A * c.D / 2 + EQ1_BOUND
    return Ineq1Report(lhs, rhs, lhs - rhs, bool(lhs - rhs > tol), tol)


# -- Eq. 2 -----------------------------------------------------------------------

@dataclass(frozen=True)
class CHSHVariant:
    """Signs applied to ``<A0B0>, <A0B1>, <A1B0>, <A1B1>``."""

    signs: tuple[int, int, int, int]

    def __post_init__(self):
        signs = tuple(int(s) for s in self.signs)
        if len(signs) != 4 or any(s not in (-1, 1) for s in signs):
            raise ValueError(f"CHSH signs must be four values in {{-1, +1}}, got {self.signs}")
        if signs.count(-1) not in (1, 3):
            raise ValueError(f"{self.signs} is not a CHSH facet (needs one or three minus signs)")
        object.__setattr__(self, "signs", signs)

    @classmethod
    def parse(cls, text: str) -> "CHSHVariant":
        """Accept ``"++-+"`` or ``"1,1,-1,1"``."""
        text = text.strip()
        if set(text) <= {"+", "-"}:
            return cls(tuple(1 if ch == "+" else -1 for ch in text))
        return cls(tuple(int(p) for p in text.split(",")))

    def __str__(self) -> str:
        return "".join("+" if s > 0 else "-" for s in self.signs)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.signs, dtype=float)


# Branch +1 conditions AB onto (|00>+|11>)/sqrt2, branch -1 onto (|00>-|11>)/sqrt2.
VARIANT_PLUS = CHSHVariant((1, 1, 1, -1))
VARIANT_MINUS = CHSHVariant((1, 1, -1, 1))


def branch_probability(sb: SettingsBehavior, branch: int) -> float:
    cd = sb.expectation({"C": 1, "D": 1})
    return (1 + branch * cd) / 2


def conditioned_chsh(sb: SettingsBehavior, branch: int, variant: CHSHVariant) -> float:
    """CHSH of A and B conditioned on ``C1 * D1 = branch`` (outcomes as signs)."""
    if branch not in (-1, 1):
        raise ValueError("branch must be +1 or -1")
    if sb.parties[:4] != PARTIES or len(sb.parties) != 4:
        raise BehaviorError(f"expected parties {PARTIES}, got {sb.parties}")
    if sb.n_settings[2] < 2 or sb.n_settings[3] < 2:
        raise BehaviorError("C and D need a setting 1")
    cd = sb.expectation({"C": 1, "D": 1})
    if 1 + branch * cd <= kernels.BRANCH_EPS:
        raise BehaviorError(f"branch C1*D1={branch:+d} has zero probability")
    total = 0.0
    k = 0
    for x in range(2):
        for y in range(2):
            ab = sb.expectation({"A": x, "B": y})
            abcd = sb.expectation({"A": x, "B": y, "C": 1, "D": 1})
            total += variant.signs[k] * (ab + branch * abcd) / (1 + branch * cd)
            k += 1
    return total


@dataclass(frozen=True)
class Ineq2Report:
    p_plus: float
    p_minus: float
    chsh_minus: float
    chsh_plus: float
    sigma: float
    chain_excess: float
    lhs: float
    bound: float
    precondition_satisfied: bool
    violated: bool

    def as_dict(self) -> dict:
        return asdict(self)


def eval_ineq2(sb: SettingsBehavior, variant_plus: CHSHVariant = VARIANT_PLUS,
               variant_minus: CHSHVariant = VARIANT_MINUS, tol: float = REPORT_TOL) -> Ineq2Report:
    """Evaluate the printed lhs; ``violated`` requires the printed precondition."""
    if tuple(sb.n_settings) != SETTING_COUNTS:
        raise BehaviorError(f"settings must be {SETTING_COUNTS}, got {tuple(sb.n_settings)}")
    if tuple(sb.arities) != (2, 2, 2, 2):
        raise BehaviorError("Eq. 2 needs binary outcomes")
    p_plus = branch_probability(sb, 1)
    p_minus = branch_probability(sb, -1)
    chsh_m = conditioned_chsh(sb, -1, variant_minus)
    chsh_p = conditioned_chsh(sb, 1, variant_plus)
    sigma = (sb.expectation({"A": 0, "B": 2}) + sb.expectation({"B": 2, "C": 0})
             + sb.expectation({"C": 0, "D": 0}))
    lhs = chsh_m ** 2 + chsh_p ** 2 + 8 * (3 * sigma - 8) ** 2
    pre = abs(p_plus - p_minus) <= PRECONDITION_TOL
    return Ineq2Report(p_plus, p_minus, chsh_m, chsh_p, sigma, 3 * sigma - 8, lhs, EQ2_BOUND,
                       pre, bool(pre and lhs - EQ2_BOUND > tol))


# -- measurement settings ----------------------------------------------------------

OBS_ORDER = kernels.OBS_ORDER


@dataclass(frozen=True)
class MeasurementSettings:
    """Bloch angles ``(theta, phi)`` per observable, in :data:`OBS_ORDER`.

    The observable is ``cos(theta) Z + sin(theta) (cos(phi) X + sin(phi) Y)``;
    outcome 0 is its +1 eigenspace.
    """

    angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).reshape(len(OBS_ORDER), 2)
        if not np.all(np.isfinite(a)):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "angles", a)

    @classmethod
    def documented(cls) -> "MeasurementSettings":
        """A0=B2=C0=D0=Z, C1=D1=X, A1=X, B0=(Z+X)/sqrt2, B1=(Z-X)/sqrt2."""
        z, x = (0.0, 0.0), (math.pi / 2, 0.0)
        table = {"A0": z, "A1": x, "B0": (math.pi / 4, 0.0), "B1": (-math.pi / 4, 0.0),
                 "B2": z, "C0": z, "C1": x, "D0": z, "D1": x}
        return cls(np.array([table[k] for k in OBS_ORDER]))

    @property
    def params(self) -> np.ndarray:
        return self.angles.ravel().copy()

    def observables(self) -> np.ndarray:
        return kernels._bloch_numpy(self.params)

    def projector_families(self) -> dict[str, list[np.ndarray]]:
        obs = dict(zip(OBS_ORDER, self.observables()))
        return {p: [observable_projectors(obs[f"{p}{x}"]) for x in range(n)]
                for p, n in zip(PARTIES, SETTING_COUNTS)}

    def as_dict(self) -> dict:
        return {k: [float(t), float(f)] for k, (t, f) in zip(OBS_ORDER, self.angles)}


def ghz_settings_behavior(v: float = 1.0, settings: MeasurementSettings | None = None) -> SettingsBehavior:
    settings = settings or MeasurementSettings.documented()
    fams = settings.projector_families()
    return state_settings_behavior(noisy_ghz4(v), PARTIES, [fams[p] for p in PARTIES])


def documented_lhs(v: float) -> float:
    """Closed form of the Eq. 2 lhs at the documented settings: ``16 v^2 + 8 (9 v - 8)^2``."""
    return 16 * v * v + 8 * (9 * v - 8) ** 2


@dataclass(frozen=True)
class SettingsOptimum:
    settings: MeasurementSettings
    objective: float
    restart: int
    report: Ineq2Report


@dataclass(frozen=True)
class OptimizerOptions:
    restarts: int = 64
    sweeps: int = 200
    step: float = 1e-5
    tol: float = 1e-12
    penalty: float = 100.0
    seed: int = 0
    jobs: int | None = 1


def _restart_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _ascent_task(args):
    seq, rho, sp, sm, opts = args
    x0 = np.random.default_rng(seq).uniform(0, 2 * math.pi, 2 * len(OBS_ORDER))
    x, f, _ = kernels.ineq2_ascent(x0, rho, sp, sm, opts.penalty, opts.sweeps, opts.step, opts.tol)
    return x, float(f)


def optimize_settings(v: float, variant_plus: CHSHVariant = VARIANT_PLUS,
                      variant_minus: CHSHVariant = VARIANT_MINUS,
                      options: OptimizerOptions = OptimizerOptions()) -> SettingsOptimum:
    """Multi-start coordinate ascent of the Eq. 2 lhs over qubit settings for ``noisy_ghz4(v)``.

    The ascent maximizes ``CHSH_-^2 + CHSH_+^2 + 8 (3S-8)|3S-8| - penalty <C1D1>^2``.
    The chain term is the printed one whenever ``3S >= 8`` and the penalty
    steers toward the printed precondition. Ties go to the lowest restart index.
    """
    rho = noisy_ghz4(v).astype(np.complex128)
    sp, sm = variant_plus.array, variant_minus.array
    seeds = _restart_seeds(options.seed, options.restarts)
    results = pmap(_ascent_task, [(s, rho, sp, sm, options) for s in seeds], options.jobs)
    best = max(range(len(results)), key=lambda i: (results[i][1], -i))
    settings = MeasurementSettings(np.mod(results[best][0], 2 * math.pi))
    report = eval_ineq2(ghz_settings_behavior(v, settings), variant_plus, variant_minus)
    return SettingsOptimum(settings, results[best][1], best, report)


@dataclass
class ThresholdResult:
    v_star: float
    bracket: tuple[float, float]
    window: tuple[float, float]
    lhs_at_one: float
    samples: list[tuple[float, Ineq2Report]] = field(default_factory=list)
    settings: MeasurementSettings | None = None

    def as_dict(self) -> dict:
        return {
            "v_star": self.v_star,
            "bracket": list(self.bracket),
            "window": list(self.window),
            "lhs_at_one": self.lhs_at_one,
            "settings": self.settings.as_dict() if self.settings is not None else None,
            "samples": [{"v": v, **r.as_dict()} for v, r in sorted(self.samples, key=lambda s: s[0])],
        }


class ThresholdError(RuntimeError):
    pass


def visibility_threshold(variant_plus: CHSHVariant = VARIANT_PLUS,
                         variant_minus: CHSHVariant = VARIANT_MINUS,
                         options: OptimizerOptions = OptimizerOptions(),
                         window: tuple[float, float] = (0.85, 1.0),
                         resolution: float = 0.002) -> ThresholdResult:
    """Bisect for the visibility above which the optimized lhs exceeds 16.

    Claims are restricted to ``window``. ``v_star`` is the largest sampled
    visibility without violation, so every sampled ``v > v_star`` violates.
    """
    lo, hi = window
    samples = []
    top = optimize_settings(hi, variant_plus, variant_minus, options)
    samples.append((hi, top.report))
    if not top.report.violated:
        raise ThresholdError(f"no violation found at v={hi}; lhs={top.report.lhs:.6g}")
    bottom = optimize_settings(lo, variant_plus, variant_minus, options)
    samples.append((lo, bottom.report))
    if bottom.report.violated:
        return ThresholdResult(lo, (lo, lo), window, top.report.lhs, samples, bottom.settings)
    best = top
    while hi - lo > resolution:
        mid = (lo + hi) / 2
        opt = optimize_settings(mid, variant_plus, variant_minus, options)
        samples.append((mid, opt.report))
        if opt.report.violated:
            hi, best = mid, opt
        else:
            lo = mid
    return ThresholdResult(lo, (lo, hi), window, top.report.lhs, samples, best.settings)


CSV_COLUMNS = ("v", "lhs", "chsh_minus", "chsh_plus", "sigma", "violated")


def threshold_csv(result: ThresholdResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for v, r in sorted(result.samples, key=lambda s: s[0]):
        w.writerow([repr(round_sig(x)) for x in (v, r.lhs, r.chsh_minus, r.chsh_plus, r.sigma)]
                   + [str(r.violated).lower()])
    return buf.getvalue()


# -- CHSH calibration ------------------------------------------------------------

def coordinate_ascent(f, x0: np.ndarray, sweeps: int = 200, h: float = 1e-5,
                      tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Coordinate Newton ascent with central differences (same scheme as the compiled kernel)."""
    x = np.array(x0, dtype=float)
    f0 = f(x)
    for _ in range(sweeps):
        start = f0
        for i in range(x.size):
            xi = x[i]
            x[i] = xi + h
            fp = f(x)
            x[i] = xi - h
            fm = f(x)
            g = (fp - fm) / (2 * h)
            c = (fp - 2 * f0 + fm) / (h * h)
            step = -g / c if c < -1e-8 else math.copysign(0.25, g)
            step = max(-1.5, min(1.5, step))
            x[i] = xi
            for _ in range(30):
                x[i] = xi + step
                f1 = f(x)
                if f1 > f0:
                    f0 = f1
                    break
                step *= 0.5
                x[i] = xi
        if f0 - start <= tol:
            break
    return x, f0


_PHI_PLUS = as_density(np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2))
_CHSH_SIGNS = (1, 1, 1, -1)


def _chsh_value(obs: Sequence[np.ndarray], rho: np.ndarray = _PHI_PLUS) -> float:
    a0, a1, b0, b1 = obs
    val = 0.0
    for s, (a, b) in zip(_CHSH_SIGNS, ((a0, b0), (a0, b1), (a1, b0), (a1, b1))):
        val += s * np.real(np.trace(rho @ np.kron(a, b)))
    return float(val)


def chsh_tsirelson_calibration(iterations: int = 200, restarts: int = 4, seed: int = 0,
                               classical: bool = False) -> float:
    """Maximize CHSH on ``(|00>+|11>)/sqrt2`` over qubit observables; the optimum is 2*sqrt(2).

    ``classical=True`` restricts every observable to ``cos(t) Z`` (commuting and
    diagonal), which caps the value at 2. ``iterations=0`` returns the best
    starting value.
    """
    if classical:
        def f(x):
            return _chsh_value([np.cos(t) * SIGMA_Z for t in x])
        dim = 4
    else:
        def f(x):
            return _chsh_value(list(kernels._bloch_numpy(x)))
        dim = 8
    best = -math.inf
    for seq in _restart_seeds(seed, restarts):
        x0 = np.random.default_rng(seq).uniform(0, 2 * math.pi, dim)
        _, val = coordinate_ascent(f, x0, sweeps=iterations) if iterations > 0 else (x0, f(x0))
        best = max(best, val)
    return best


__all__ = [
    "EQ1_BOUND", "EQ2_BOUND", "Ineq1Report", "eval_ineq1", "CHSHVariant", "VARIANT_PLUS",
    "VARIANT_MINUS", "conditioned_chsh", "Ineq2Report", "eval_ineq2", "MeasurementSettings",
    "ghz_settings_behavior", "documented_lhs", "optimize_settings", "OptimizerOptions",
    "visibility_threshold", "ThresholdResult", "ThresholdError", "threshold_csv",
    "chsh_tsirelson_calibration", "coordinate_ascent",
]
