"""TOML run configuration with unit-suffixed keys.

Example::

    [laser]
    kappa_per_ns = 300.0
    gamma_per_ns = 1.0
    alpha = 0.0
    delta = 1.4
    mu = 1.2

    [injection]
    theta_rad = 0.7853981633974483   # uhat = sqrt(mu - 1) (cos, sin)
    lambdas = [0.01, 0.2]
    # or: lambda_sweep = { start = -0.08, stop = 0.08, num = 161 }

    [schedule]                 # simulate only
    t0_ns = -4.0
    horizon_ns = 24.0
    segments = [ { start_ns = -4.0, lambda = 0.25, theta_rad = 0.5236 } ]

    [tolerances]
    ode_rtol = 1e-9
    ode_atol = 1e-12
    root_residual = 1e-10

    [run]
    seed = 0
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from spinflip.model import LaserParams, LaserState, ToleranceSet
from spinflip.sim import InjectionSchedule, reference_schedule

__all__ = ["ConfigError", "RunConfig", "load_config", "default_config", "uhat_from_angle"]

_LASER_KEYS = {
    "kappa_per_ns": "kappa",
    "gamma_per_ns": "gamma",
    "alpha": "alpha",
    "delta": "delta",
    "mu": "mu",
}
_TOL_KEYS = {"ode_rtol", "ode_atol", "root_residual", "jacobian_fd"}
_SECTIONS = {"laser", "injection", "schedule", "tolerances", "run", "equilibria", "strong", "activation", "nnfit"}


class ConfigError(ValueError):
    pass


def uhat_from_angle(theta: float, p: LaserParams) -> np.ndarray:
    return math.sqrt(p.mu - 1) * np.array([math.cos(theta), math.sin(theta)], dtype=complex)


@dataclass
class RunConfig:
    params: LaserParams = field(default_factory=LaserParams)
    uhat: np.ndarray | None = None
    lambdas: list[float] = field(default_factory=list)
    schedule: InjectionSchedule | None = None
    t0: float = -4.0
    tol: ToleranceSet = field(default_factory=ToleranceSet)
    seed: int = 0
    sections: dict = field(default_factory=dict)
    source: str = "<defaults>"

    def __post_init__(self):
        if self.uhat is None:
            self.uhat = uhat_from_angle(math.pi / 4, self.params)

    def state0(self) -> LaserState:
        """Initial state of a simulation: zero field and zero carriers."""
        return LaserState(np.zeros(2, dtype=complex), 0.0, 0.0)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def echo(self) -> dict:
        p = self.params
        return {
            "source": self.source,
            "laser": {
                "kappa_per_ns": p.kappa,
                "gamma_per_ns": p.gamma,
                "alpha": p.alpha,
                "delta": p.delta,
                "mu": p.mu,
            },
            "uhat": [[z.real, z.imag] for z in self.uhat],
            "lambdas": list(self.lambdas),
            "schedule": None
            if self.schedule is None
            else {
                "t0_ns": self.t0,
                "horizon_ns": self.schedule.horizon,
                "segments": [
                    {"start_ns": t, "u": [[z.real, z.imag] for z in u]} for t, u in self.schedule.segments
                ],
            },
            "tolerances": vars(self.tol),
            "seed": self.seed,
            "sections": self.sections,
        }


def default_config() -> RunConfig:
    p = LaserParams()
    return RunConfig(params=p, lambdas=[0.01], schedule=reference_schedule(p), t0=-4.0)


def _num(d: dict, key: str, where: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _parse_uhat(inj: dict, p: LaserParams) -> np.ndarray:
    if "uhat" in inj:
        raw = inj["uhat"]
        try:
            u = np.array([complex(re, im) for re, im in raw])
        except (TypeError, ValueError) as exc:
            raise ConfigError("injection.uhat: expected [[re, im], [re, im]]") from exc
        if u.shape != (2,):
            raise ConfigError("injection.uhat: need exactly two components")
        return u
    theta = _num(inj, "theta_rad", "injection") if "theta_rad" in inj else math.pi / 4
    return uhat_from_angle(theta, p)


def _parse_lambdas(inj: dict) -> list[float]:
    if "lambdas" in inj and "lambda_sweep" in inj:
        raise ConfigError("injection: give either lambdas or lambda_sweep, not both")
    if "lambda_sweep" in inj:
        sw = inj["lambda_sweep"]
        try:
            start, stop, num = float(sw["start"]), float(sw["stop"]), int(sw["num"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("injection.lambda_sweep: need start, stop, num") from exc
        if num < 1:
            raise ConfigError("injection.lambda_sweep.num: must be >= 1")
        return list(np.linspace(start, stop, num))
    if "lambdas" in inj:
        lams = inj["lambdas"]
        if not isinstance(lams, list) or not all(isinstance(v, (int, float)) for v in lams):
            raise ConfigError("injection.lambdas: expected a list of numbers")
        return [float(v) for v in lams]
    if "lambda" in inj:
        return [_num(inj, "lambda", "injection")]
    return [0.01]


def _parse_schedule(sc: dict, p: LaserParams) -> tuple[InjectionSchedule, float]:
    segs = sc.get("segments")
    if not isinstance(segs, list) or not segs:
        raise ConfigError("schedule.segments: at least one segment required")
    out = []
    for k, seg in enumerate(segs):
        where = f"schedule.segments[{k}]"
        if not isinstance(seg, dict) or "start_ns" not in seg or "lambda" not in seg:
            raise ConfigError(f"{where}: need start_ns and lambda")
        u = _parse_uhat(seg, p)
        out.append((_num(seg, "start_ns", where), _num(seg, "lambda", where) * u))
    t0 = float(sc.get("t0_ns", out[0][0]))
    if "horizon_ns" not in sc:
        raise ConfigError("schedule.horizon_ns: required")
    try:
        sched = InjectionSchedule(tuple(out), _num(sc, "horizon_ns", "schedule"))
    except ValueError as exc:
        raise ConfigError(f"schedule: {exc}") from exc
    return sched, t0


def load_config(path: Path | str | None) -> RunConfig:
    """Parse and validate a TOML file; ``None`` gives the defaults."""
    if path is None:
        return default_config()
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    laser = raw.get("laser", {})
    kw = {}
    for key, val in laser.items():
        if key not in _LASER_KEYS:
            hint = " (rates need the _per_ns suffix)" if key in ("kappa", "gamma") else ""
            raise ConfigError(f"laser.{key}: unknown key{hint}")
        kw[_LASER_KEYS[key]] = _num(laser, key, "laser")
    try:
        p = LaserParams(**kw)
    except ValueError as exc:
        raise ConfigError(f"laser: {exc}") from exc

    inj = raw.get("injection", {})
    uhat = _parse_uhat(inj, p)
    lambdas = _parse_lambdas(inj)

    if "schedule" in raw:
        sched, t0 = _parse_schedule(raw["schedule"], p)
    else:
        sched, t0 = reference_schedule(p), -4.0

    tol_raw = raw.get("tolerances", {})
    bad = set(tol_raw) - _TOL_KEYS
    if bad:
        raise ConfigError(f"tolerances: unknown key(s) {', '.join(sorted(bad))}")
    tol = ToleranceSet(**{k: _num(tol_raw, k, "tolerances") for k in tol_raw})
    if any(v <= 0 for v in vars(tol).values()):
        raise ConfigError("tolerances: values must be positive")

    run = raw.get("run", {})
    seed = run.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("run.seed: expected an integer")

    sections = {k: raw[k] for k in ("equilibria", "strong", "activation", "nnfit") if k in raw}
    return RunConfig(p, uhat, lambdas, sched, t0, tol, seed, sections, str(path))
