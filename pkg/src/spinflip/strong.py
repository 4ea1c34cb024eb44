"""Strong-injection equilibrium by fixed-point iteration of G."""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spinflip.equilibria import BranchId, EquilibriumPoint, RootError, refine_root
from spinflip.model import (
    DxF,
    F_map,
    G_map,
    LaserParams,
    assemble_equilibrium,
    reduce_injection,
    rhs,
)

__all__ = [
    "StrongSolveReport",
    "ContractionFailure",
    "fixed_point_strong",
    "strong_equilibrium",
    "uniqueness_probe",
    "strong_sweep_row",
    "write_strong_csv",
    "STRONG_COLUMNS",
]

STRONG_COLUMNS = ("lambda_abs", "e_norm", "e_norm_times_lambda23", "intensity_ratio")


class ContractionFailure(RuntimeError):
    pass


@dataclass
class StrongSolveReport:
    x: np.ndarray
    iterations: int
    final_delta: float
    ratios: list[float] = field(default_factory=list)
    method: str = "fixed-point"
    residual: float = float("nan")
    e_lambda: np.ndarray | None = None
    lam: complex | None = None


def fixed_point_strong(
    s: float,
    rhat,
    p: LaserParams,
    tol: float = 1e-12,
    max_iter: int = 500,
) -> StrongSolveReport:
    """Solve ``x = G(s, x)`` starting from ``x0 = s * rhat``.

    ``rhat`` is normalized first; its length is folded into ``s``. If the
    observed contraction ratio exceeds 0.9 the iteration hands over to
    Newton's method on F, which is then reported in ``method``.
    """
    if not s > 0:
        raise ValueError("strong regime requires s > 0")
    rhat = np.asarray(rhat, dtype=float)
    if rhat.shape != (2,) or np.any(rhat <= 0):
        raise ValueError("rhat must have two strictly positive components")
    nr = float(np.linalg.norm(rhat))
    rn, s_eff = rhat / nr, s * nr

    x = s_eff * rn
    deltas: list[float] = []
    ratios: list[float] = []
    method = "fixed-point"
    it = 0
    for it in range(1, max_iter + 1):
        xn = G_map(s_eff, x, rn, p)
        d = float(np.linalg.norm(xn - x))
        if not np.isfinite(d):
            raise ContractionFailure("fixed-point iteration diverged")
        if deltas and deltas[-1] > 0:
            ratios.append(d / deltas[-1])
        deltas.append(d)
        x = xn
        if d <= max(tol, 4 * np.finfo(float).eps * np.linalg.norm(x)):
            break
        if len(ratios) >= 3 and ratios[-1] > 0.9:
            method = "newton"
            try:
                x = refine_root(s_eff, x, rn, p)
            except RootError as exc:
                raise ContractionFailure(f"no contraction at s={s:g} and Newton failed") from exc
            break
    else:
        raise ContractionFailure(f"no convergence in {max_iter} iterations")
    res = float(np.linalg.norm(F_map(s_eff, x, rn, p)))
    if res > max(tol, 1e-14 * (1 + np.linalg.norm(x))) * 10:
        raise ContractionFailure(f"residual {res:.3e} above tolerance")
    return StrongSolveReport(x, it, deltas[-1], ratios, method, res)


def strong_equilibrium(lam: complex, uhat, p: LaserParams, tol: float = 1e-12):
    """Equilibrium for ``u = lam * uhat`` at large ``|lam|``.

    Returns ``(EquilibriumPoint, StrongSolveReport)``. The report carries
    ``e(lam)`` defined by ``E = lam e^{i theta} / |1 + i alpha| (uhat + e)``.
    """
    lam = complex(lam)
    u = np.asarray(uhat, dtype=complex)
    if np.any(u == 0):
        raise ValueError("both uhat components must be nonzero")
    if lam == 0:
        raise ValueError("lambda must be nonzero")
    r, phases = reduce_injection(lam * u, p)
    s = float(np.linalg.norm(r))
    rep = fixed_point_strong(s, r / s, p, tol=tol)
    st = assemble_equilibrium(rep.x, phases, p)
    pref = lam * np.exp(1j * p.theta) / p.gain_modulus
    rep.e_lambda = st.E / pref - u
    rep.lam = lam
    residual = float(np.linalg.norm(rhs(st, lam * u, p)))
    return EquilibriumPoint(st, BranchId.PLUS_X, lam, residual, rep.x), rep


def uniqueness_probe(
    s: float,
    rhat,
    p: LaserParams,
    n_grid: int = 21,
    half_width: float | None = None,
) -> int:
    """Number of distinct roots of F(s, .) found by multi-start Newton.

    Starts lie on an ``n_grid`` x ``n_grid`` lattice over
    ``[-w, w]^2`` with ``w = 3 max(s, 1)`` unless given.
    """
    if s < 0:
        raise ValueError("s must be nonnegative")
    rhat = np.asarray(rhat, dtype=float)
    w = 3 * max(s, 1.0) if half_width is None else half_width
    g = np.linspace(-w, w, n_grid)
    roots: list[np.ndarray] = []
    for a, b in itertools.product(g, g):
        try:
            x = refine_root(s, (a, b), rhat, p, max_iter=60)
        except RootError:
            continue
        if np.linalg.norm(F_map(s, x, rhat, p)) > 1e-10 * (1 + s):
            continue
        if abs(np.linalg.det(DxF(x, p))) < 1e-10:
            continue
        if all(np.linalg.norm(x - r) > 1e-6 * (1 + s) for r in roots):
            roots.append(x)
    return len(roots)


def strong_sweep_row(lam_abs: float, uhat, p: LaserParams) -> tuple[float, float, float, float]:
    eq, rep = strong_equilibrium(lam_abs, uhat, p)
    u = np.asarray(uhat, dtype=complex)
    e = float(np.linalg.norm(rep.e_lambda))
    ratio = float(np.linalg.norm(eq.E) / (lam_abs * np.linalg.norm(u) / p.gain_modulus))
    return lam_abs, e, e * lam_abs ** (2 / 3), ratio


def write_strong_csv(path: Path | str, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STRONG_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
