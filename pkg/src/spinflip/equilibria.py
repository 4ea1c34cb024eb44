"""Weak-injection equilibrium branches.

Zeros of ``F(s, x) = X(y(x)) x - s rhat`` are traced from the nine zeros at
s = 0, then mapped back to field equilibria with the injection phases.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from spinflip.model import (
    DxF,
    F_map,
    LaserParams,
    LaserState,
    PhaseData,
    assemble_equilibrium,
    reduce_injection,
    rhs,
)

__all__ = [
    "BranchId",
    "StepControl",
    "SingularPoint",
    "BranchPath",
    "EquilibriumPoint",
    "AsymptoticCoeffs",
    "RootError",
    "ContinuationError",
    "branch_seed",
    "seed_inverse_jacobian",
    "refine_root",
    "continue_branch",
    "branch_paths",
    "scalar_branch",
    "scalar_branch_path",
    "equilibria_at",
    "w_hat",
    "asymptotic_coeffs",
    "asymptotic_E",
    "fold_summary",
    "estimate_ell",
    "rhat_from_uhat",
    "write_paths_csv",
    "paths_summary",
    "PATH_COLUMNS",
]


class BranchId(str, enum.Enum):
    O = "O"
    PLUS_L = "+L"
    MINUS_L = "-L"
    PLUS_R = "+R"
    MINUS_R = "-R"
    PLUS_X = "+X"
    MINUS_X = "-X"
    PLUS_Y = "+Y"
    MINUS_Y = "-Y"

    def __str__(self) -> str:
        return self.value

    @property
    def sign(self) -> int:
        return -1 if self.value.startswith("-") else 1

    @property
    def family(self) -> str:
        return self.value[-1]


class RootError(RuntimeError):
    pass


class ContinuationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepControl:
    ds0: float = 1e-3
    ds_min: float = 1e-9
    ds_max: float = 1e-2
    max_newton: int = 8
    newton_tol: float = 1e-12
    fold_rel: float = 1e-8
    max_steps: int = 20000


@dataclass(frozen=True)
class SingularPoint:
    """Point where det DxF vanishes along a path.

    ``kind`` is ``"fold"`` when s turns back there and ``"branch"`` when the
    path passes through with s still increasing.
    """

    s: float
    x: np.ndarray
    kind: str


@dataclass
class BranchPath:
    branch: BranchId
    rhat: np.ndarray
    s: list[float] = field(default_factory=list)
    x: list[np.ndarray] = field(default_factory=list)
    det: list[float] = field(default_factory=list)
    mode: list[str] = field(default_factory=list)
    post_fold: list[bool] = field(default_factory=list)
    singular: list[SingularPoint] = field(default_factory=list)

    @property
    def fold(self) -> SingularPoint | None:
        """First singular point; the IVP solution ends here."""
        return self.singular[0] if self.singular else None

    def _add(self, s, x, p, mode, post):
        self.s.append(float(s))
        self.x.append(np.array(x, dtype=float))
        self.det.append(float(np.linalg.det(DxF(x, p))))
        self.mode.append(mode)
        self.post_fold.append(post)

    def s_array(self) -> np.ndarray:
        return np.asarray(self.s)

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x).reshape(-1, 2)

    def monotone_end(self) -> int:
        """Index of the last sample before s first decreases."""
        s = self.s
        for k in range(1, len(s)):
            if s[k] < s[k - 1]:
                return k - 1
        return len(s) - 1


@dataclass(frozen=True)
class EquilibriumPoint:
    state: LaserState
    branch: BranchId
    lam: complex
    residual: float
    x: np.ndarray

    @property
    def E(self) -> np.ndarray:
        return self.state.E

    @property
    def N(self) -> float:
        return self.state.N

    @property
    def n(self) -> float:
        return self.state.n


@dataclass(frozen=True)
class AsymptoticCoeffs:
    zeroth: np.ndarray
    first: np.ndarray


def branch_seed(branch: BranchId, p: LaserParams) -> np.ndarray:
    """Zero of F(0, .) labelled by ``branch``."""
    branch = BranchId(branch)
    if branch is BranchId.O:
        return np.zeros(2)
    c_lr = math.sqrt(p.delta * (p.mu - 1) / (1 + p.delta))
    c_xy = math.sqrt((p.mu - 1) / 2)
    base = {
        "L": (c_lr, 0.0),
        "R": (0.0, c_lr),
        "X": (c_xy, c_xy),
        "Y": (c_xy, -c_xy),
    }[branch.family]
    return branch.sign * np.array(base)


def seed_inverse_jacobian(branch: BranchId, p: LaserParams) -> np.ndarray:
    """Closed-form inverse of DxF at the seed of ``branch``."""
    branch = BranchId(branch)
    mu, d = p.mu, p.delta
    m = mu - 1
    fam = "O" if branch is BranchId.O else branch.family
    if fam == "O":
        return -np.eye(2) / m
    if fam == "L":
        return np.diag([mu, -(1 + d)]) / (2 * m)
    if fam == "R":
        return np.diag([-(1 + d), mu]) / (2 * m)
    q = 2 * mu + d - 1
    o = (1 - d) if fam == "X" else (d - 1)
    return np.array([[q, o], [o, q]]) / (4 * m)


_ALIGN = 0.95


def _fold_threshold(J: np.ndarray, rel: float) -> float:
    return rel * (1 + np.linalg.norm(J) ** 2)


def refine_root(
    s: float,
    x_guess,
    rhat,
    p: LaserParams,
    tol: float = 1e-10,
    max_iter: int = 40,
    info: dict | None = None,
) -> np.ndarray:
    """Newton's method on F(s, .) with the analytic Jacobian.

    Iterates past ``tol`` until the update stalls so the returned root is
    polished to rounding level. ``info`` (if given) receives the iteration
    count and residual history.
    """
    x = np.array(x_guess, dtype=float)
    hist = []
    its = 0
    for its in range(max_iter + 1):
        r = F_map(s, x, rhat, p)
        nr = float(np.linalg.norm(r))
        hist.append(nr)
        if nr < 1e-15 * (1 + np.linalg.norm(x)):
            break
        if its == max_iter:
            break
        J = DxF(x, p)
        if abs(np.linalg.det(J)) < 1e-14 * (1 + np.linalg.norm(J) ** 2):
            raise RootError(f"singular Jacobian at x={x}")
        dx = np.linalg.solve(J, -r)
        x = x + dx
        if np.linalg.norm(dx) < 1e-15 * (1 + np.linalg.norm(x)):
            hist.append(float(np.linalg.norm(F_map(s, x, rhat, p))))
            its += 1
            break
        if nr < tol and len(hist) > 2 and hist[-1] > 0.5 * hist[-2]:
            # converged and no longer contracting
            break
    if info is not None:
        info["iterations"] = its
        info["residuals"] = hist
    if not np.all(np.isfinite(x)) or hist[-1] >= tol:
        raise RootError(f"Newton did not converge (|F|={hist[-1]:.3e})")
    return x


def _tangent(x, rhat, p, prev=None) -> np.ndarray:
    """Unit tangent (ds, dx1, dx2) of the zero curve of F."""
    J = DxF(x, p)
    A = np.column_stack([-np.asarray(rhat), J])
    t = np.cross(A[0], A[1])
    nt = np.linalg.norm(t)
    if nt == 0:
        # exactly at a branch point; keep the previous direction
        return prev.copy() if prev is not None else np.array([1.0, 0.0, 0.0])
    t /= nt
    if prev is not None:
        if t @ prev < 0:
            t = -t
    elif t[0] < 0:
        t = -t
    return t


def _arc_correct(z_pred, t, rhat, p, ctrl: StepControl):
    """Bordered Newton on [F(z); t.(z - z_pred)] = 0."""
    z = z_pred.copy()
    for it in range(1, ctrl.max_newton + 1):
        r = F_map(z[0], z[1:], rhat, p)
        g = t @ (z - z_pred)
        M = np.zeros((3, 3))
        M[:2, 0] = -np.asarray(rhat)
        M[:2, 1:] = DxF(z[1:], p)
        M[2] = t
        try:
            dz = np.linalg.solve(M, -np.r_[r, g])
        except np.linalg.LinAlgError:
            return None, it
        z = z + dz
        if np.linalg.norm(dz) < ctrl.newton_tol * (1 + np.linalg.norm(z)):
            if np.linalg.norm(F_map(z[0], z[1:], rhat, p)) < 1e-11:
                return z, it
    if np.linalg.norm(F_map(z[0], z[1:], rhat, p)) < 1e-12:
        return z, ctrl.max_newton
    return None, ctrl.max_newton


def _arc_step(z, t, ds, rhat, p, ctrl):
    z_pred = z + ds * t
    w, its = _arc_correct(z_pred, t, rhat, p, ctrl)
    if w is None or np.linalg.norm(w - z_pred) > 0.5 * ds:
        return None, its
    # reject jumps onto a crossing branch
    if abs(_tangent(w[1:], rhat, p, t) @ t) < _ALIGN:
        return None, its
    return w, its


def _locate_singular(z0, t0, ds, rhat, p, ctrl, which: str = "det"):
    """Singular point on the arc between z0 and the step of length ds.

    ``which="det"`` finds det DxF = 0; ``which="turn"`` finds the point where
    the s-component of the tangent vanishes (needed at symmetric branch
    points, where det DxF touches zero without changing sign).
    """
    cache = {}

    def point(sig):
        if sig == 0:
            return z0
        if sig not in cache:
            zp = z0 + sig * t0
            w, _ = _arc_correct(zp, t0, rhat, p, ctrl)
            if w is None:
                # bordered system degenerates at a branch point; fix s instead
                try:
                    w = np.r_[zp[0], refine_root(zp[0], zp[1:], rhat, p, tol=1e-11)]
                except RootError as exc:
                    raise ContinuationError("corrector failed while locating fold") from exc
            cache[sig] = w
        return cache[sig]

    def det_at(sig):
        return np.linalg.det(DxF(point(sig)[1:], p))

    def turn_at(sig):
        return _tangent(point(sig)[1:], rhat, p, t0)[0]

    try:
        fn = det_at if which == "det" else turn_at
        sig = brentq(fn, 0.0, ds, xtol=1e-14, rtol=1e-14, maxiter=200)
    except (ValueError, ContinuationError):
        sig = ds
    z = point(sig)
    return z, _tangent(z[1:], rhat, p, t0)


def continue_branch(
    branch: BranchId,
    rhat,
    s_max: float,
    p: LaserParams,
    ctrl: StepControl = StepControl(),
    mode: str = "natural",
) -> BranchPath:
    """Trace the zero branch of F starting at the seed of ``branch``.

    ``mode="natural"`` steps in s with the tangent ``DxF^-1 rhat`` as
    predictor and stops at the first singular point, i.e. it follows the
    initial value problem for as long as it exists. ``mode="arclength"``
    switches to pseudo-arclength there and keeps going through folds until
    s leaves [0, s_max].
    """
    if mode not in ("natural", "arclength"):
        raise ValueError(f"unknown mode {mode!r}")
    branch = BranchId(branch)
    rhat = np.asarray(rhat, dtype=float)
    if not np.any(rhat):
        raise ValueError("rhat must be nonzero")
    if s_max <= 0:
        raise ValueError("s_max must be positive")
    path = BranchPath(branch, rhat)
    x = branch_seed(branch, p)
    J0 = DxF(x, p)
    if abs(np.linalg.det(J0)) < _fold_threshold(J0, ctrl.fold_rel):
        raise ContinuationError("fold at s = 0; cannot start")
    path._add(0.0, x, p, "natural", False)

    s = 0.0
    ds = ctrl.ds0
    det_prev = np.linalg.det(J0)
    singular_hit = False
    steps = 0
    while s < s_max and steps < ctrl.max_steps:
        steps += 1
        h = min(ds, s_max - s)
        v = np.linalg.solve(DxF(x, p), rhat)
        pred = x + h * v
        ok = True
        try:
            info = {}
            xn = refine_root(s + h, pred, rhat, p, tol=1e-11, max_iter=ctrl.max_newton, info=info)
            if np.linalg.norm(xn - pred) > 0.5 * max(np.linalg.norm(pred - x), h):
                ok = False
            elif _tangent(xn, rhat, p) @ _tangent(x, rhat, p) < _ALIGN:
                ok = False
        except RootError:
            ok = False
        if ok:
            det_n = np.linalg.det(DxF(xn, p))
            if np.sign(det_n) != np.sign(det_prev):
                singular_hit = True
                break
            s, x, det_prev = s + h, xn, det_n
            path._add(s, x, p, "natural", False)
            if info["iterations"] <= 3:
                ds = min(2 * ds, ctrl.ds_max)
        else:
            ds /= 2
            if ds < ctrl.ds_min:
                singular_hit = True
                break

    if not singular_hit:
        return path

    # locate the singular point with arclength steps, restarting a little
    # upstream where the tangent is still well conditioned
    k = len(path.s) - 1
    while k > 0 and path.s[k] > s - 2 * ctrl.ds0:
        k -= 1
    z = np.r_[path.s[k], path.x[k]]
    t = _tangent(path.x[k], rhat, p)
    post = False
    ds = min(ctrl.ds0, ctrl.ds_max)
    located_first = False
    steps = 0
    while steps < ctrl.max_steps:
        steps += 1
        w, its = _arc_step(z, t, ds, rhat, p, ctrl)
        if w is None:
            ds /= 2
            if ds < ctrl.ds_min:
                if not located_first:
                    raise ContinuationError(f"corrector diverged near s={z[0]:.6g}")
                break
            continue
        det_z = np.linalg.det(DxF(z[1:], p))
        det_w = np.linalg.det(DxF(w[1:], p))
        t_new = _tangent(w[1:], rhat, p, t)
        turned = np.sign(t_new[0]) != np.sign(t[0])
        crossed = np.sign(det_w) != np.sign(det_z) and det_z != 0
        if crossed or turned:
            zs, _ = _locate_singular(z, t, ds, rhat, p, ctrl, "det" if crossed else "turn")
            kind = "fold" if turned else "branch"
            path.singular.append(SingularPoint(float(zs[0]), zs[1:].copy(), kind))
            md = "natural" if not located_first else "pseudo-arclength"
            path._add(zs[0], zs[1:], p, md, post)
            located_first = True
            if mode == "natural":
                return path
            post = post or kind == "fold"
        z, t = w, t_new
        if not located_first and z[0] < 0:
            raise ContinuationError("path returned to s < 0 before a singular point")
        if located_first:
            if z[0] < 0 or z[0] > s_max:
                break
            path._add(z[0], z[1:], p, "pseudo-arclength", post)
        if its <= 3:
            ds = min(2 * ds, ctrl.ds_max)
    return path


@functools.lru_cache(maxsize=256)
def _cached_paths(rhat_key: tuple[float, float], s_max: float, p: LaserParams, mode: str):
    rhat = np.array(rhat_key)
    out = {}
    for b in BranchId:
        try:
            out[b] = continue_branch(b, rhat, s_max, p, mode=mode)
        except ContinuationError:
            out[b] = None
    return out


def branch_paths(rhat, s_max: float, p: LaserParams, mode: str = "arclength") -> dict:
    """All nine paths for one rhat (cached)."""
    r = np.asarray(rhat, dtype=float)
    return _cached_paths((float(r[0]), float(r[1])), float(s_max), p, mode)


def rhat_from_uhat(uhat, p: LaserParams) -> np.ndarray:
    return np.abs(np.asarray(uhat, dtype=complex)) / p.gain_modulus


def _eval_path(path: BranchPath, s: float, p: LaserParams) -> np.ndarray | None:
    """Root on the monotone (pre-turn) part of ``path`` at parameter s."""
    end = path.monotone_end()
    ss = path.s_array()[: end + 1]
    xs = path.x_array()[: end + 1]
    if s > ss[-1] or s < 0:
        return None
    if path.singular and abs(s - ss[-1]) < 1e-12 and path.singular[0].kind == "fold":
        return None
    k = int(np.searchsorted(ss, s))
    if k < len(ss) and ss[k] == s:
        guess = xs[k]
        span = 0.0
    else:
        k = max(k, 1)
        w = (s - ss[k - 1]) / (ss[k] - ss[k - 1])
        guess = (1 - w) * xs[k - 1] + w * xs[k]
        span = np.linalg.norm(xs[k] - xs[k - 1])
    try:
        x = refine_root(s, guess, path.rhat, p)
    except RootError:
        return None
    if np.linalg.norm(x - guess) > span + 1e-6:
        return None
    return x


def equilibria_at(lam: complex, uhat, p: LaserParams, paths: dict | None = None) -> list[EquilibriumPoint]:
    """Equilibria on the nine weak-injection branches for ``u = lam * uhat``.

    Branches that have folded before ``|lam|`` are omitted.
    """
    lam = complex(lam)
    if lam == 0:
        raise ValueError("lambda = 0 is excluded; use branch_seed + assemble_equilibrium")
    uhat = np.asarray(uhat, dtype=complex)
    s = abs(lam)
    rhat = rhat_from_uhat(uhat, p)
    _, phases = reduce_injection(lam * uhat, p)
    if paths is None:
        paths = branch_paths(rhat, 1.05 * s, p)
    u = lam * uhat
    out = []
    for b, path in paths.items():
        if path is None:
            continue
        x = _eval_path(path, s, p)
        if x is None:
            continue
        st = assemble_equilibrium(x, phases, p)
        res = float(np.linalg.norm(rhs(st, u, p)))
        out.append(EquilibriumPoint(st, b, lam, res, x))
    return out


def scalar_branch_path(branch: BranchId, rhat1: float, s_grid, p: LaserParams) -> np.ndarray:
    """Diagonal branch eta(s) on an increasing grid of s >= 0.

    Solves ``eta (1 - mu (delta + 2 eta^2) / (delta + 2 (1 + delta) eta^2
    + 4 eta^4)) = s rhat1`` by damped Newton, walking the grid from the
    seed so each solve starts next to its root.
    """
    branch = BranchId(branch)
    if branch not in (BranchId.O, BranchId.PLUS_X, BranchId.MINUS_X):
        raise ValueError("scalar reduction only holds for branches O, +X, -X")
    mu, d = p.mu, p.delta

    def g(e):
        q = d + 2 * (1 + d) * e * e + 4 * e**4
        return e * (1 - mu * (d + 2 * e * e) / q)

    def dg(e):
        e2 = e * e
        q = d + 2 * (1 + d) * e2 + 4 * e2 * e2
        num = d + 2 * e2
        # d/de [e * num / q]
        dq = 4 * (1 + d) * e + 16 * e2 * e
        return 1 - mu * ((num + 4 * e2) * q - e * num * dq) / (q * q)

    eta = float(branch_seed(branch, p)[0])
    slope0 = np.sign(dg(eta))
    s_prev = 0.0
    out = []
    for s in np.asarray(s_grid, dtype=float):
        if s < s_prev:
            raise ValueError("s_grid must be nondecreasing and start at s >= 0")
        n_sub = max(1, int(math.ceil((s - s_prev) / 2e-3)))
        for sk in np.linspace(s_prev, s, n_sub + 1)[1:]:
            for _ in range(60):
                dgv = dg(eta)
                if np.sign(dgv) != slope0 or abs(dgv) < 1e-12:
                    raise RootError(f"no root in bracket: branch folds before s={sk:.6g}")
                step = -(g(eta) - sk * rhat1) / dgv
                if abs(step) > 0.05:
                    step = math.copysign(0.05, step)
                eta += step
                if abs(step) < 1e-16 * (1 + abs(eta)):
                    break
            if abs(g(eta) - sk * rhat1) > 1e-13:
                raise RootError(f"no root in bracket at s={sk:.6g}")
        out.append(eta)
        s_prev = s
    return np.array(out)


def scalar_branch(branch: BranchId, rhat1: float, s: float, p: LaserParams) -> float:
    return float(scalar_branch_path(branch, rhat1, [s], p)[0])


def w_hat(branch: BranchId, uhat, p: LaserParams) -> np.ndarray:
    """First-order coefficient of the small-injection expansion."""
    branch = BranchId(branch)
    u = np.asarray(uhat, dtype=complex)
    a1, a2 = np.abs(u)
    m, mu, d = p.mu - 1, p.mu, p.delta
    g = p.gain_modulus
    if branch is BranchId.O:
        return -u / (g * m)
    fam = branch.family
    if fam == "L":
        return np.array([mu * u[0], -(1 + d) * u[1]]) / (2 * g * m)
    if fam == "R":
        return np.array([-(1 + d) * u[0], mu * u[1]]) / (2 * g * m)
    q = 2 * mu + d - 1
    c = (1 - d) if fam == "X" else (d - 1)
    return np.array([(q + c * a2 / a1) * u[0], (c * a1 / a2 + q) * u[1]]) / (4 * g * m)


def asymptotic_coeffs(branch: BranchId, uhat, p: LaserParams) -> AsymptoticCoeffs:
    u = np.asarray(uhat, dtype=complex)
    unit = u / np.abs(u)
    return AsymptoticCoeffs(branch_seed(branch, p) * unit, w_hat(branch, u, p))


def asymptotic_E(branch: BranchId, lam: complex, uhat, p: LaserParams) -> np.ndarray:
    """Zeroth plus first-order approximation of the branch equilibrium field."""
    u = np.asarray(uhat, dtype=complex)
    if np.any(u == 0):
        raise ValueError("asymptotics need both uhat components nonzero")
    lam = complex(lam)
    c = asymptotic_coeffs(branch, u, p)
    return np.exp(1j * p.theta) * lam / abs(lam) * (c.zeroth + abs(lam) * c.first)


def fold_summary(uhat, p: LaserParams, s_max: float | None = None) -> dict:
    """First singular point (or None) of every branch in natural mode."""
    rhat = rhat_from_uhat(uhat, p)
    if s_max is None:
        # every zero with s below this bound has |x| <= sqrt(2 mu)
        s_max = 2.0 * math.sqrt(p.mu) / np.linalg.norm(rhat)
    out = {}
    for b in BranchId:
        if b is BranchId.PLUS_X:
            path = continue_branch(b, rhat, s_max, p, mode="natural")
        else:
            path = continue_branch(b, rhat, s_max, p, mode="natural")
        out[b] = path.fold
    return out


def estimate_ell(uhat, p: LaserParams) -> float:
    """Largest |lambda| below which all nine branches coexist.

    Taken as the smallest first-fold parameter over the eight branches that
    terminate; the +X branch is the one that persists.
    """
    u = np.asarray(uhat, dtype=complex)
    if np.any(u == 0):
        raise ValueError("estimate_ell needs both uhat components nonzero")
    rhat = rhat_from_uhat(u, p)
    s_max = 2.0 * math.sqrt(p.mu) / np.linalg.norm(rhat)
    folds = []
    for b in BranchId:
        if b is BranchId.PLUS_X:
            continue
        path = continue_branch(b, rhat, s_max, p, mode="natural")
        if path.fold is None:
            raise ContinuationError(f"branch {b} did not terminate below s={s_max:.3g}")
        folds.append(path.fold.s)
    return float(min(folds))


PATH_COLUMNS = ("branch", "s", "x1", "x2", "detDxF", "mode")


def write_paths_csv(path, paths: dict) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PATH_COLUMNS)
        for b, bp in paths.items():
            if bp is None:
                continue
            for s, x, d, m, post in zip(bp.s, bp.x, bp.det, bp.mode, bp.post_fold):
                w.writerow([str(b), repr(s), repr(float(x[0])), repr(float(x[1])), repr(d), m + ("+post-fold" if post else "")])


def paths_summary(paths: dict, ell: float | None) -> dict:
    out = {"ell": ell, "branches": {}}
    for b, bp in paths.items():
        if bp is None:
            out["branches"][str(b)] = {"status": "failed"}
            continue
        out["branches"][str(b)] = {
            "status": "ok",
            "samples": len(bp.s),
            "singular": [{"s": q.s, "x": q.x.tolist(), "kind": q.kind} for q in bp.singular],
        }
    return out
