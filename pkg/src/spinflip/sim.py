"""Time-domain integration under piecewise-constant injection."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from spinflip.model import LaserParams, LaserState, ToleranceSet, rhs_real

__all__ = [
    "InjectionSchedule",
    "Trajectory",
    "IntegrationError",
    "StepSizeUnderflow",
    "ScheduleGap",
    "integrate",
    "settle",
    "reference_schedule",
    "write_trajectory_csv",
    "TRAJECTORY_COLUMNS",
]

TRAJECTORY_COLUMNS = ("t", "ReE-", "ReE+", "ImE-", "ImE+", "N", "n")


class IntegrationError(RuntimeError):
    pass


class StepSizeUnderflow(IntegrationError):
    def __init__(self, t: float, state: LaserState):
        super().__init__(f"step size underflow at t={t!r}")
        self.t = t
        self.state = state


class ScheduleGap(IntegrationError):
    pass


@dataclass(frozen=True)
class InjectionSchedule:
    """Piecewise-constant injection: ``u(t) = u_k`` for ``t_k <= t < t_{k+1}``."""

    segments: tuple[tuple[float, np.ndarray], ...]
    horizon: float

    def __post_init__(self):
        segs = tuple((float(t), np.asarray(u, dtype=complex).reshape(2)) for t, u in self.segments)
        if not segs:
            raise ValueError("schedule has no segments")
        starts = [t for t, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        if self.horizon <= starts[-1]:
            raise ValueError("horizon must lie after the last segment start")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def constant(cls, u, t0: float, t1: float) -> "InjectionSchedule":
        return cls(((t0, u),), t1)

    def breakpoints(self) -> list[float]:
        return [t for t, _ in self.segments] + [self.horizon]

    def u_at(self, t: float) -> np.ndarray:
        if t < self.segments[0][0] or t > self.horizon:
            raise ScheduleGap(f"t={t} not covered by schedule")
        u = self.segments[0][1]
        for ts, us in self.segments:
            if ts <= t:
                u = us
        return u

    def pieces(self, t0: float, t1: float) -> list[tuple[float, float, np.ndarray]]:
        """Sub-intervals of [t0, t1] on which u is constant."""
        if t0 < self.segments[0][0] or t1 > self.horizon:
            raise ScheduleGap(f"[{t0}, {t1}] not covered by schedule")
        bps = self.breakpoints()
        out = []
        for k, (ts, u) in enumerate(self.segments):
            a, b = max(ts, t0), min(bps[k + 1], t1)
            if b > a:
                out.append((a, b, u))
        return out


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_samples, 6) real rows
    n_accepted: int = 0
    n_rejected: int = 0
    segment_ends: list[int] = field(default_factory=list)

    def state(self, i: int) -> LaserState:
        return LaserState.from_real(self.states[i])

    @property
    def final(self) -> LaserState:
        return self.state(-1)


# Dormand-Prince 5(4) tableau
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array(
    [5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4


def _dopri(f, t0, y0, t1, rtol, atol, h0=None, h_min=1e-14) -> Iterator[tuple[float, np.ndarray, bool]]:
    """Yield ``(t, y, accepted)`` after every attempted step on [t0, t1].

    PI step-size control (Gustafsson); the last step is clipped to hit t1.
    """
    t, y = t0, np.array(y0, dtype=float)
    k1 = f(y)
    span = t1 - t0
    if h0 is None:
        d0 = np.linalg.norm(y / (atol + rtol * np.abs(y))) / np.sqrt(y.size)
        d1 = np.linalg.norm(k1 / (atol + rtol * np.abs(y))) / np.sqrt(y.size)
        h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h = min(h0, span)
    err_prev = 1e-4
    K = np.empty((7, y.size))
    while t < t1:
        if t + h >= t1 or t1 - (t + h) < 1e-12 * max(1.0, abs(t1)):
            h = t1 - t
        K[0] = k1
        for i in range(1, 7):
            K[i] = f(y + h * (_A[i] @ K[:i]))
        y_new = y + h * (_B5 @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((h * (_E @ K) / scale) ** 2))
        if not np.all(np.isfinite(y_new)):
            err = np.inf
        if err <= 1.0:
            t = t1 if h == t1 - t else t + h
            y = y_new
            k1 = K[6]
            fac = 0.9 * err ** (-0.7 / 5) * err_prev ** (0.4 / 5) if err > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            yield t, y, True
        else:
            fac = 0.9 * err ** (-1 / 5) if np.isfinite(err) else 0.1
            h *= max(0.1, fac)
            yield t, y, False
        if h < h_min * max(1.0, abs(t)) and t < t1:
            raise StepSizeUnderflow(t, LaserState.from_real(y))


def integrate(
    state0: LaserState,
    sched: InjectionSchedule,
    t0: float,
    t1: float,
    p: LaserParams,
    tol: ToleranceSet = ToleranceSet(),
) -> Trajectory:
    """Integrate from ``state0`` at ``t0`` to ``t1`` following the schedule.

    Each constant-injection piece is integrated separately so no step
    straddles a jump in u; the piece boundaries appear as samples.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    pieces = sched.pieces(t0, t1)
    if abs(pieces[0][0] - t0) > 0 or abs(pieces[-1][1] - t1) > 0:
        raise ScheduleGap("schedule does not cover the integration interval")
    y = state0.to_real()
    times, rows = [t0], [y.copy()]
    acc = rej = 0
    ends = []
    for a, b, u in pieces:
        def f(v, u=u):
            return rhs_real(v, u, p)

        for t, yy, ok in _dopri(f, a, y, b, tol.ode_rtol, tol.ode_atol):
            if ok:
                acc += 1
                times.append(t)
                rows.append(yy.copy())
                y = yy
            else:
                rej += 1
        ends.append(len(times) - 1)
    return Trajectory(np.array(times), np.array(rows), acc, rej, ends)


def settle(
    u,
    state0: LaserState,
    t_max: float,
    eps: float,
    p: LaserParams,
    tol: ToleranceSet = ToleranceSet(),
) -> tuple[LaserState, bool]:
    """Integrate with constant ``u`` until ``|rhs| < eps`` or ``t_max`` elapses."""
    if t_max <= 0 or eps <= 0:
        raise ValueError("t_max and eps must be positive")
    u = np.asarray(u, dtype=complex)
    y = state0.to_real()

    def f(v):
        return rhs_real(v, u, p)

    if np.linalg.norm(f(y)) < eps:
        return state0, True
    for _, yy, ok in _dopri(f, 0.0, y, t_max, tol.ode_rtol, tol.ode_atol):
        if ok:
            y = yy
            if np.linalg.norm(f(y)) < eps:
                return LaserState.from_real(y), True
    return LaserState.from_real(y), False


def reference_schedule(p: LaserParams) -> InjectionSchedule:
    """Piecewise-constant injection of the reference time-domain experiment.

    Starts at t = -4 ns from a zero state; lambda alternates 0.25 / 0.01 every
    4 ns and the polarization angle steps pi/6 -> pi/4 -> 11pi/24 every 8 ns.
    """
    def uhat(th):
        return np.sqrt(p.mu - 1) * np.array([np.cos(th), np.sin(th)], dtype=complex)

    plan = [
        (-4.0, 0.25, np.pi / 6),
        (4.0, 0.01, np.pi / 6),
        (8.0, 0.25, np.pi / 4),
        (12.0, 0.01, np.pi / 4),
        (16.0, 0.25, 11 * np.pi / 24),
        (20.0, 0.01, 11 * np.pi / 24),
    ]
    return InjectionSchedule(tuple((t, lam * uhat(th)) for t, lam, th in plan), 24.0)


def write_trajectory_csv(path: Path | str, traj: Trajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t, row in zip(traj.times, traj.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
