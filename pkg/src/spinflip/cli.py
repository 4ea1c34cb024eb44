"""Command-line front end.

Each subcommand writes plot-ready CSV/JSON files plus ``manifest.json`` into
the output directory. Exit codes: 0 success, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

import spinflip
from spinflip import cvnn, equilibria, stability, strong
from spinflip.config import ConfigError, RunConfig, load_config
from spinflip.equilibria import BranchId, ContinuationError, RootError
from spinflip.model import stokes
from spinflip.sim import IntegrationError, integrate, write_trajectory_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

STATE_COLUMNS = ("ReE-", "ReE+", "ImE-", "ImE+", "N", "n")
EQUILIBRIUM_COLUMNS = ("lambda", "branch") + STATE_COLUMNS + ("residual", "s1", "s2", "s3")
REFERENCE_COLUMNS = ("segment", "t_start", "t_end") + STATE_COLUMNS + ("s1", "s2", "s3", "endpoint_distance")
ACTIVATION_CURVE_COLUMNS = ("lambda", "re_rho", "im_rho")
NNFIT_COLUMNS = ("width", "sup_error", "rmse")

_NUMERIC_ERRORS = (
    IntegrationError,
    RootError,
    ContinuationError,
    stability.QRNoConvergence,
    strong.ContractionFailure,
    cvnn.DomainViolation,
    FloatingPointError,
)


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _row(v) -> list[str]:
    return [repr(float(x)) for x in v]


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _uhat_unit(u: np.ndarray) -> tuple[float, np.ndarray]:
    m = float(np.linalg.norm(u))
    return m, u / m


def cmd_simulate(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    if cfg.schedule is None:
        raise ConfigError("simulate needs a schedule")
    traj = integrate(cfg.state0(), cfg.schedule, cfg.t0, cfg.schedule.horizon, cfg.params, cfg.tol)
    write_trajectory_csv(out / "trajectory.csv", traj)
    pieces = cfg.schedule.pieces(cfg.t0, cfg.schedule.horizon)

    def reference(k):
        a, b, u = pieces[k]
        lam, uh = _uhat_unit(u)
        pts = [e for e in equilibria.equilibria_at(lam, uh, cfg.params) if e.branch is BranchId.PLUS_X]
        if not pts:
            raise ContinuationError(f"no +X equilibrium for segment {k}")
        st = pts[0].state
        end = traj.states[traj.segment_ends[k]]
        dist = float(np.linalg.norm(end - st.to_real()))
        return [str(k), repr(a), repr(b)] + _row(st.to_real()) + _row(stokes(st.E)) + [repr(dist)]

    _write_csv(out / "reference.csv", REFERENCE_COLUMNS, _pmap(reference, range(len(pieces)), threads))
    return ["trajectory.csv", "reference.csv"]


def _s_max(cfg: RunConfig) -> float:
    sec = cfg.section("equilibria")
    if "s_max" in sec:
        return float(sec["s_max"])
    if not cfg.lambdas:
        raise ConfigError("equilibria needs at least one lambda")
    return 1.05 * max(abs(x) for x in cfg.lambdas)


def cmd_equilibria(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    u = cfg.uhat
    if np.any(u == 0):
        raise ConfigError("injection.uhat: both components must be nonzero")
    if not cfg.lambdas:
        raise ConfigError("injection: empty lambda sweep")
    p = cfg.params
    rhat = equilibria.rhat_from_uhat(u, p)
    s_max = _s_max(cfg)

    def trace(b):
        try:
            return b, equilibria.continue_branch(b, rhat, s_max, p, mode="arclength")
        except ContinuationError:
            return b, None

    paths = dict(_pmap(trace, list(BranchId), threads))
    equilibria.write_paths_csv(out / "paths.csv", paths)
    try:
        ell = equilibria.estimate_ell(u, p)
    except ContinuationError:
        ell = None
    summary = equilibria.paths_summary(paths, ell)
    folds = equilibria.fold_summary(u, p)
    summary["first_singular"] = {
        str(b): None if f is None else {"s": f.s, "kind": f.kind} for b, f in folds.items()
    }
    lam_ok = [x for x in cfg.lambdas if x != 0]

    def census(lam):
        rows = []
        for e in equilibria.equilibria_at(lam, u, p, paths=paths):
            rows.append([repr(lam), str(e.branch)] + _row(e.state.to_real()) + [repr(e.residual)] + _row(stokes(e.E)))
        return rows

    rows = [r for block in _pmap(census, lam_ok, threads) for r in block]
    summary["census"] = {repr(l): sum(1 for r in rows if r[0] == repr(l)) for l in lam_ok}
    _write_csv(out / "equilibria.csv", EQUILIBRIUM_COLUMNS, rows)
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return ["paths.csv", "equilibria.csv", "summary.json"]


def cmd_stability(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    if not cfg.lambdas:
        raise ConfigError("injection: empty lambda sweep")
    p, u = cfg.params, cfg.uhat
    lam_ok = [x for x in cfg.lambdas if x != 0]
    rhat = equilibria.rhat_from_uhat(u, p)
    paths = equilibria.branch_paths(rhat, 1.05 * max(abs(x) for x in lam_ok), p)

    def one(lam):
        return [(e.branch, lam, stability.classify(e, p)) for e in equilibria.equilibria_at(lam, u, p, paths=paths)]

    rows = [r for block in _pmap(one, lam_ok, threads) for r in block]
    stability.write_stability_csv(out / "stability.csv", rows)
    return ["stability.csv"]


def cmd_strong(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    lams = cfg.section("strong").get("lambdas", [10.0, 100.0, 1000.0, 10000.0])
    if not lams:
        raise ConfigError("strong.lambdas: empty")
    rows = _pmap(lambda L: strong.strong_sweep_row(float(L), cfg.uhat, cfg.params), lams, threads)
    strong.write_strong_csv(out / "strong.csv", rows)
    return ["strong.csv"]


def _table(cfg: RunConfig) -> cvnn.ActivationTable:
    sec = cfg.section("activation")
    try:
        return cvnn.tabulate_rho(
            cfg.uhat,
            cfg.params,
            int(sec.get("n_samples", 512)),
            float(sec.get("extent", 0.3)),
        )
    except ValueError as exc:
        if isinstance(exc, _NUMERIC_ERRORS):
            raise
        raise ConfigError(f"activation: {exc}") from exc


def cmd_activation(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    table = _table(cfg)
    cvnn.save_json(out / "activation.json", cvnn.table_to_json(table))
    lam = np.linspace(-table.extent, table.extent, 601)
    rho = cvnn.rho_eval(table, lam, strict=False)
    _write_csv(out / "activation_curve.csv", ACTIVATION_CURVE_COLUMNS, [_row((l, r.real, r.imag)) for l, r in zip(lam, rho)])
    return ["activation.json", "activation_curve.csv"]


def cmd_nnfit(cfg: RunConfig, out: Path, threads: int) -> list[str]:
    sec = cfg.section("nnfit")
    widths = [int(w) for w in sec.get("widths", [25, 100, 400])]
    if any(w < 0 for w in widths):
        raise ConfigError("nnfit.widths: must be nonnegative")
    table = _table(cfg)
    nets: list = []
    res = cvnn.width_experiment(
        table,
        lambda z: z,
        widths,
        R=float(sec.get("R", 1.0)),
        seed=cfg.seed,
        n_train=int(sec.get("n_train", 2000)),
        nets=nets,
    )
    _write_csv(out / "nnfit.csv", NNFIT_COLUMNS, [[str(w), repr(e), repr(r)] for w, e, r in res])
    cvnn.save_json(out / "weights.json", {str(n.b.size): cvnn.net_to_json(n) for n in nets})
    return ["nnfit.csv", "weights.json"]


HELP = {
    "simulate": "integrate the rate equations over an injection schedule",
    "equilibria": "trace weak-injection branches, folds and the equilibrium census",
    "stability": "classify equilibria over a lambda sweep",
    "strong": "strong-injection sweep of e(lambda) and the intensity ratio",
    "activation": "tabulate the injection-locking activation rho",
    "nnfit": "random-feature network width experiment",
}

COMMANDS = {
    "simulate": cmd_simulate,
    "equilibria": cmd_equilibria,
    "stability": cmd_stability,
    "strong": cmd_strong,
    "activation": cmd_activation,
    "nnfit": cmd_nnfit,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinflip", description="Injection-locked spin-flip laser analysis.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=HELP[name])
        sp.add_argument("--config", type=Path, default=None, help="TOML config file")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--tol", type=float, default=None, help="relative tolerance for the integrator")
        sp.add_argument("--seed", type=int, default=None, help="random seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    return ap


def _manifest(cmd: str, cfg: RunConfig, files: list[str], args) -> dict:
    return {
        "command": cmd,
        "argv": sys.argv[1:],
        "config": cfg.echo(),
        "seed": cfg.seed,
        "threads": args.threads,
        "versions": {
            "spinflip": spinflip.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "outputs": files,
    }


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.tol is not None:
            if not (args.tol > 0 and math.isfinite(args.tol)):
                raise ConfigError("--tol must be positive")
            cfg.tol = replace(cfg.tol, ode_rtol=args.tol, ode_atol=args.tol * 1e-3)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        args.out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    (args.out / "manifest.json").write_text(json.dumps(_manifest(args.command, cfg, files, args), indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
