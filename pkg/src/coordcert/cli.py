"""Command-line entry point: ``coordcert <command> [options]``.

Every command prints a JSON report on stdout. With ``--out DIR`` (or the
``COORDCERT_OUT`` environment variable) the report and any data files are
also written to ``DIR``. Exit status: 0 on success, 2 on invalid input,
3 when a solver or optimizer fails to converge.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .circuit import CircuitError, canonicalize, dumps_circuit, fig1_circuit, loads_circuit
from .inflation import InflationRealization, MomentProblemError, fig2_inflation, random_inflation_realization, sos_chain_check
from .parallel import default_jobs
from .quantum import (BehaviorError, RealizationError, SettingsBehavior, behavior_to_dict, correlators,
                      dumps_realization, is_perfect_coordination, loads_behavior, realization_from_dict,
                      shared_random_bit, simulate)
from .serialization import SCHEMA_VERSION, dumps

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
FIXTURES = ("shared-random-bit", "ghz4")
U64_MAX = 2 ** 64 - 1


class ConfigError(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    inputs: tuple[str, ...] = ()
    out: str | None = None
    seed: int = 0
    jobs: int | None = None
    tol: float | None = None
    level: int = 2
    grid_step: float = 0.1
    refine_step: float = 0.01
    restarts: int | None = None
    sweeps: int = 200
    iterations: int = 150
    dim: int = 2
    v: float | None = None
    resolution: float = 0.002
    window: tuple[float, float] = (0.85, 1.0)
    variant_plus: str = "+++-"
    variant_minus: str = "++-+"
    fixture: str | None = None
    random: bool = False
    complex_moments: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) \
                or not 0 <= int(self.seed) <= U64_MAX:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise ConfigError(f"unknown fixture {self.fixture!r}; choose from {', '.join(FIXTURES)}")
        for p in self.inputs:
            if not Path(p).exists() and p != "fig1":
                raise ConfigError(f"input file not found: {p}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError("jobs must be positive")
        if self.level < 1:
            raise ConfigError("level must be at least 1")
        if self.grid_step <= 0 or self.refine_step < 0:
            raise ConfigError("grid steps must be positive")
        if self.restarts is not None and self.restarts < 1:
            raise ConfigError("restarts must be positive")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "inputs" in data:
            data["inputs"] = tuple(data["inputs"])
        if "window" in data:
            data["window"] = tuple(data["window"])
        return cls(**data)

    @property
    def out_dir(self) -> Path | None:
        out = self.out or os.environ.get("COORDCERT_OUT")
        return Path(out) if out else None

    @property
    def n_jobs(self) -> int:
        return self.jobs or default_jobs()


@dataclass
class Outcome:
    report: dict
    files: dict[str, str] = field(default_factory=dict)
    status: int = EXIT_OK


def _report(command: str, body: Mapping) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, **body}


def _read(path: str) -> str:
    return Path(path).read_text()


def _load_circuit(path: str):
    return fig1_circuit() if path == "fig1" else loads_circuit(_read(path))


def _load_realization(path: str, circuit=None):
    try:
        data = json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return realization_from_dict(data, circuit)


# -- commands -----------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> Outcome:
    if len(cfg.inputs) != 2:
        raise ConfigError("simulate needs <circuit> <realization>")
    circuit = _load_circuit(cfg.inputs[0])
    real = _load_realization(cfg.inputs[1], circuit)
    behavior = simulate(circuit, real)
    body = {"behavior": behavior_to_dict(behavior),
            "perfect_coordination": is_perfect_coordination(behavior)}
    if len(behavior.parties) == 4 and behavior.arities == (2, 2, 2, 2):
        body["correlators"] = correlators(behavior).as_dict()
    return Outcome(_report("simulate", body), {"behavior.json": dumps(behavior_to_dict(behavior))})


def _behavior_input(cfg: RunConfig):
    if cfg.fixture == "shared-random-bit":
        return shared_random_bit()
    if len(cfg.inputs) == 1:
        return loads_behavior(_read(cfg.inputs[0]))
    if len(cfg.inputs) == 2:
        circuit = _load_circuit(cfg.inputs[0])
        return simulate(circuit, _load_realization(cfg.inputs[1], circuit))
    raise ConfigError("ineq1 needs --fixture shared-random-bit, a behavior file, or <circuit> <realization>")


def cmd_ineq1(cfg: RunConfig) -> Outcome:
    from .inequalities import REPORT_TOL, eval_ineq1
    behavior = _behavior_input(cfg)
    if isinstance(behavior, SettingsBehavior):
        raise ConfigError("ineq1 takes a behavior without settings")
    rep = eval_ineq1(behavior, cfg.tol or REPORT_TOL)
    return Outcome(_report("ineq1", {"report": rep.as_dict(),
                                     "correlators": correlators(behavior).as_dict()}))


def cmd_ineq2(cfg: RunConfig) -> Outcome:
    from .inequalities import REPORT_TOL, CHSHVariant, eval_ineq2, ghz_settings_behavior
    vp, vm = CHSHVariant.parse(cfg.variant_plus), CHSHVariant.parse(cfg.variant_minus)
    if cfg.fixture == "ghz4" or (cfg.v is not None and not cfg.inputs):
        v = 1.0 if cfg.v is None else cfg.v
        if not 0 <= v <= 1:
            raise ConfigError("visibility must lie in [0, 1]")
        sb = ghz_settings_behavior(v)
        source = {"fixture": "ghz4", "v": v}
    elif len(cfg.inputs) == 1:
        sb = loads_behavior(_read(cfg.inputs[0]))
        if not isinstance(sb, SettingsBehavior):
            raise ConfigError("ineq2 needs a settings-behavior file")
        source = {"file": Path(cfg.inputs[0]).name}
    else:
        raise ConfigError("ineq2 needs --fixture ghz4 [--v V] or a settings-behavior file")
    rep = eval_ineq2(sb, vp, vm, cfg.tol or REPORT_TOL)
    return Outcome(_report("ineq2", {"input": source, "variant_plus": str(vp),
                                     "variant_minus": str(vm), "report": rep.as_dict()}))


def cmd_threshold(cfg: RunConfig) -> Outcome:
    from .inequalities import (CHSHVariant, OptimizerOptions, ThresholdError, threshold_csv,
                               visibility_threshold)
    opts = OptimizerOptions(restarts=cfg.restarts or 64, sweeps=cfg.sweeps, seed=cfg.seed, jobs=cfg.n_jobs)
    try:
        res = visibility_threshold(CHSHVariant.parse(cfg.variant_plus), CHSHVariant.parse(cfg.variant_minus),
                                   opts, tuple(cfg.window), cfg.resolution)
    except ThresholdError as exc:
        raise NotConverged(str(exc)) from exc
    body = res.as_dict()
    body["options"] = {"restarts": opts.restarts, "sweeps": opts.sweeps, "seed": opts.seed,
                       "resolution": cfg.resolution}
    return Outcome(_report("threshold", body), {"threshold.csv": threshold_csv(res)})


def _cells_csv(rows: Sequence[Mapping]) -> str:
    from .serialization import round_sig
    lines = ["alpha,delta,status,value,dual_value,iterations"]
    for r in rows:
        lines.append(",".join([repr(round_sig(r["alpha"])), repr(round_sig(r["delta"])), r["status"],
                               repr(round_sig(r["value"])), repr(round_sig(r["dual_value"])),
                               str(r["iterations"])]))
    return "\n".join(lines) + "\n"


def cmd_bound(cfg: RunConfig) -> Outcome:
    from .bound import coordination_bound
    from .sdp import FEAS_TOL, SdpOptions
    res = coordination_bound(cfg.level, cfg.grid_step, cfg.refine_step, jobs=cfg.n_jobs,
                             options=SdpOptions(feas_tol=cfg.tol or FEAS_TOL),
                             complex_moments=cfg.complex_moments)
    status = EXIT_OK
    if not np.isfinite(res.bound) or res.witness.value > res.bound + 1e-6:
        status = EXIT_NOT_CONVERGED
    body = res.as_dict()
    body["grid_step"] = cfg.grid_step
    body["refine_step"] = cfg.refine_step
    return Outcome(_report("bound", body), {"bound_cells.csv": _cells_csv(res.table())}, status)


def cmd_certify(cfg: RunConfig) -> Outcome:
    from .bound import perfect_coordination_problem
    from .sdp import solve
    mp = perfect_coordination_problem(cfg.level, complex_moments=cfg.complex_moments)
    sol = solve(mp.to_sdp())
    cert = sol.certificate
    body = {"level": cfg.level, "status": sol.status,
            "certificate": cert.as_dict() if cert is not None else None}
    status = EXIT_OK if cert is not None and cert.valid else EXIT_NOT_CONVERGED
    return Outcome(_report("certify", body), {"moment_problem.txt": mp.export()}, status)


def cmd_sos_check(cfg: RunConfig) -> Outcome:
    spec = fig2_inflation()
    if cfg.random:
        infl = random_inflation_realization(np.random.default_rng(cfg.seed), spec, cfg.dim)
        source = {"random": True, "seed": cfg.seed, "dim": cfg.dim}
    elif len(cfg.inputs) == 1:
        infl = InflationRealization(spec, _load_realization(cfg.inputs[0]))
        source = {"file": Path(cfg.inputs[0]).name}
    else:
        raise ConfigError("sos-check needs an inflation realization file or --random")
    rep = sos_chain_check(infl, cfg.tol or 1e-10)
    return Outcome(_report("sos-check", {"input": source, "report": rep.as_dict()}))


def cmd_canonicalize(cfg: RunConfig) -> Outcome:
    if len(cfg.inputs) != 1:
        raise ConfigError("canonicalize needs <circuit>")
    canon = canonicalize(_load_circuit(cfg.inputs[0]))
    text = dumps_circuit(canon)
    return Outcome(_report("canonicalize", {"circuit": json.loads(text)}), {"canonical_circuit.json": text})


def cmd_search(cfg: RunConfig) -> Outcome:
    from .search import max_coordination_search
    res = max_coordination_search(cfg.dim, cfg.restarts or 32, cfg.seed, cfg.iterations, cfg.n_jobs)
    body = {"dim": cfg.dim, "restarts": len(res.scores), "seed": cfg.seed, "score": res.score,
            "best_restart": res.restart, "scores": list(res.scores),
            "perfect_coordination": is_perfect_coordination(res.behavior),
            "behavior": behavior_to_dict(res.behavior)}
    return Outcome(_report("search", body), {"realization.json": dumps_realization(res.realization)})


COMMANDS = {
    "simulate": cmd_simulate,
    "ineq1": cmd_ineq1,
    "ineq2": cmd_ineq2,
    "threshold": cmd_threshold,
    "bound": cmd_bound,
    "certify": cmd_certify,
    "sos-check": cmd_sos_check,
    "canonicalize": cmd_canonicalize,
    "search": cmd_search,
}


def run(cfg: RunConfig, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        outcome = COMMANDS[cfg.command](cfg)
    except (ConfigError, CircuitError, RealizationError, BehaviorError, MomentProblemError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    text = dumps(outcome.report)
    stdout.write(text)
    out = cfg.out_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.command}.json").write_text(text)
        for name, content in outcome.files.items():
            (out / name).write_text(content)
    return outcome.status


# -- argument parsing ---------------------------------------------------------------------

def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed {text!r}")
    if not 0 <= value <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=0, help="unsigned 64-bit seed (default 0)")
    common.add_argument("--jobs", type=int, default=None, help="parallel workers (default: logical cores)")
    common.add_argument("--tol", type=float, default=None, help="report/feasibility tolerance override")
    common.add_argument("--out", default=None, help="output directory (default: $COORDCERT_OUT)")
    common.add_argument("--config", default=None, help="JSON file with RunConfig fields; flags override it")

    parser = argparse.ArgumentParser(
        prog="coordcert",
        description="Certify that multipartite coordination needs a common cause.",
        epilog="Commands: " + ", ".join(COMMANDS),
    )
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate a circuit realization")
    p.add_argument("inputs", nargs="*", metavar="circuit realization",
                   help="circuit file (or 'fig1') and realization file")

    p = sub.add_parser("ineq1", parents=[common], help="evaluate the chain inequality <AB>+<BC>+<CD> <= <A><D>/2 + 3sqrt3/2")
    p.add_argument("inputs", nargs="*", metavar="input", help="behavior file, or circuit and realization files")
    p.add_argument("--fixture", choices=FIXTURES, help="built-in input")

    p = sub.add_parser("ineq2", parents=[common], help="evaluate the conditioned-CHSH inequality")
    p.add_argument("inputs", nargs="*", metavar="settings-behavior")
    p.add_argument("--fixture", choices=FIXTURES, help="built-in input (ghz4)")
    p.add_argument("--v", type=float, default=None, help="GHZ visibility for --fixture ghz4")
    _variants(p)

    p = sub.add_parser("threshold", parents=[common], help="visibility threshold of noisy GHZ4")
    p.add_argument("--restarts", type=int, default=None, help="optimizer restarts per visibility (default 64)")
    p.add_argument("--sweeps", type=int, default=200, help="coordinate sweeps per restart")
    p.add_argument("--resolution", type=float, default=0.002, help="bisection resolution in v")
    _variants(p)

    p = sub.add_parser("bound", parents=[common], help="inflation SDP bound on the chain expression")
    p.add_argument("--level", type=int, default=2, help="relaxation level (max word length)")
    p.add_argument("--grid-step", type=float, default=0.1, help="(alpha, delta) grid step")
    p.add_argument("--refine-step", type=float, default=0.01, help="refinement step around the best cell (0: off)")
    p.add_argument("--complex", dest="complex_moments", action="store_true",
                   help="complex Hermitian moments (real-symmetric doubling)")

    p = sub.add_parser("certify", parents=[common], help="infeasibility certificate for perfect coordination")
    p.add_argument("--level", type=int, default=2, help="relaxation level")
    p.add_argument("--complex", dest="complex_moments", action="store_true")

    p = sub.add_parser("sos-check", parents=[common], help="sum-of-squares chain residuals on an inflation realization")
    p.add_argument("inputs", nargs="*", metavar="inflation-realization")
    p.add_argument("--random", action="store_true", help="draw a random realization from --seed")
    p.add_argument("--dim", type=int, default=2, help="wire dimension for --random")

    p = sub.add_parser("canonicalize", parents=[common], help="reduce a circuit to canonical form")
    p.add_argument("inputs", nargs="*", metavar="circuit")

    p = sub.add_parser("search", parents=[common], help="variational search for maximal coordination")
    p.add_argument("--dim", type=int, default=2, help="wire dimension")
    p.add_argument("--restarts", type=int, default=None, help="random restarts (default 32)")
    p.add_argument("--iterations", type=int, default=150, help="L-BFGS-B iterations per smoothing stage")
    return parser


def _variants(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant-plus", default="+++-", help="CHSH signs on the C1*D1=+1 branch")
    p.add_argument("--variant-minus", default="++-+", help="CHSH signs on the C1*D1=-1 branch")


def config_from_args(args: argparse.Namespace, argv: Sequence[str]) -> RunConfig:
    data: dict = {}
    if args.config:
        data.update(json.loads(_read(args.config)))
    given = vars(args).copy()
    given.pop("config", None)
    parser_defaults = vars(build_parser().parse_args([args.command]))
    for key, value in given.items():
        if key not in data or value != parser_defaults.get(key):
            data[key] = value
    if "inputs" in data:
        data["inputs"] = tuple(data["inputs"])
    return RunConfig.from_mapping(data)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args, argv)
    except (ConfigError, OSError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
