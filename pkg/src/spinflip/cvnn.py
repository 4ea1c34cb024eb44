"""Injection-locking activation and single-hidden-layer complex network.

The activation is the stable branch response: for a linearly polarized
direction ``uhat`` the locked field is ``rho(lam) * uhat``. Since
``rho(lam e^{i psi}) = e^{i psi} rho(lam)`` it is stored as a radial profile
``g(|lam|)`` and a phase factor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from spinflip.equilibria import BranchId, estimate_ell, scalar_branch_path
from spinflip.model import LaserParams, LaserState, carrier_y
from spinflip.stability import classify

__all__ = [
    "ActivationTable",
    "CVNet",
    "FitResult",
    "DomainViolation",
    "tabulate_rho",
    "rho_eval",
    "nn_forward",
    "feature_matrix",
    "sample_features",
    "fit_readout",
    "width_experiment",
    "table_to_json",
    "table_from_json",
    "net_to_json",
    "net_from_json",
    "save_json",
]


class DomainViolation(ValueError):
    pass


@dataclass
class ActivationTable:
    uhat: np.ndarray
    ell: float
    s_grid: np.ndarray
    g: np.ndarray
    params: LaserParams
    extent: float
    verdicts: list[tuple[float, str]] = field(default_factory=list)
    _spline: CubicSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        self._spline = CubicSpline(self.s_grid, self.g)

    @property
    def phase(self) -> complex:
        return complex(np.exp(1j * self.params.theta))

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        out = self._spline(r)
        # exact values on grid nodes
        k = np.clip(np.searchsorted(self.s_grid, r), 0, self.s_grid.size - 1)
        hit = self.s_grid[k] == r
        return np.where(hit, self.g[k], out)


def tabulate_rho(
    uhat,
    p: LaserParams,
    n_samples: int = 512,
    extent: float | None = None,
    n_verdicts: int = 16,
) -> ActivationTable:
    """Sample the +X branch profile on ``n_samples`` radii in [0, extent].

    ``extent`` defaults to the coexistence radius ell. A few samples are
    also classified for linear stability and stored in ``verdicts``.
    """
    u = np.asarray(uhat, dtype=complex)
    a = np.abs(u)
    if a[0] == 0 or not np.isclose(a[0], a[1], rtol=1e-12, atol=0):
        raise ValueError("activation requires linear polarization |u-| = |u+| != 0")
    if n_samples < 4:
        raise ValueError("need at least 4 radial samples")
    ell = estimate_ell(u, p)
    ext = ell if extent is None else float(extent)
    s = np.linspace(0.0, ext, n_samples)
    r1 = a[0] / p.gain_modulus
    eta = scalar_branch_path(BranchId.PLUS_X, r1, s, p)
    g = eta / a[0]
    verdicts = []
    for k in np.linspace(1, n_samples - 1, min(n_verdicts, n_samples - 1)).astype(int):
        # real positive lambda: E = e^{i theta} eta e^{i arg u}
        x = np.array([eta[k], eta[k]])
        E = np.exp(1j * p.theta) * eta[k] * u / a
        N, n = carrier_y(x, p)
        verdicts.append((float(s[k]), classify(LaserState(E, N, n), p).verdict))
    return ActivationTable(u, ell, s, g, p, ext, verdicts)


def rho_eval(table: ActivationTable, lam, strict: bool = True):
    """Evaluate rho at complex ``lam`` (scalar or array); rho(0) = 0.

    With ``strict`` the domain is |lam| < ell; otherwise it is the tabulated
    extent.
    """
    lam = np.asarray(lam, dtype=complex)
    r = np.abs(lam)
    bound = table.ell if strict else table.extent
    bad = r >= bound if strict else r > bound
    if np.any(bad):
        raise DomainViolation(f"|lambda| = {float(np.max(r)):.6g} outside domain (bound {bound:.6g})")
    safe = np.where(r == 0, 1.0, r)
    val = table.phase * (lam / safe) * table.radial(r)
    val = np.where(r == 0, 0.0, val)
    return complex(val) if val.ndim == 0 else val


@dataclass
class CVNet:
    a: np.ndarray  # (j0, i0)
    b: np.ndarray  # (j0,)
    c: np.ndarray  # (k0, j0)
    ell: float
    R: float

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=complex).ravel()
        a = np.asarray(self.a, dtype=complex)
        self.a = a if a.ndim == 2 else a.reshape(self.b.size, -1)
        self.c = np.asarray(self.c, dtype=complex)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.a.shape[1], self.b.size, self.c.shape[0]

    def feature_bound(self) -> np.ndarray:
        """Upper bound of |a_j . z + b_j| over the polydisk max|z_i| <= R."""
        if self.b.size == 0:
            return np.zeros(0)
        return np.abs(self.a).sum(axis=1) * self.R + np.abs(self.b)

    def feasible(self) -> bool:
        return bool(np.all(self.feature_bound() < self.ell))


def feature_matrix(a, b, table: ActivationTable, Z, ell: float | None = None) -> np.ndarray:
    """``Phi[m, j] = rho(a_j . z_m + b_j)`` for inputs ``Z`` of shape (m, i0)."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    Z = np.atleast_2d(np.asarray(Z, dtype=complex))
    if b.size == 0:
        return np.zeros((Z.shape[0], 0), dtype=complex)
    pre = Z @ a.T + b[None, :]
    lim = table.ell if ell is None else ell
    if np.any(np.abs(pre) >= lim):
        raise DomainViolation("pre-activation outside |.| < ell")
    return rho_eval(table, pre, strict=False)


def nn_forward(net: CVNet, table: ActivationTable, z) -> np.ndarray:
    """Network output for one input ``z`` (shape (i0,)) or a batch (m, i0)."""
    Z = np.asarray(z, dtype=complex)
    single = Z.ndim == 1
    Z = np.atleast_2d(Z)
    if np.any(np.abs(Z) > net.R * (1 + 1e-12)):
        raise DomainViolation("input outside the admissible polydisk")
    Phi = feature_matrix(net.a, net.b, table, Z, net.ell)
    out = Phi @ net.c.T if net.b.size else np.zeros((Z.shape[0], net.c.shape[0]), dtype=complex)
    return out[0] if single else out


def sample_features(i0: int, j0: int, R: float, ell: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random feasible features for inputs with max|z_i| <= R.

    Offsets have modulus in [0.05, 0.9] ell; each weight row is scaled so
    that ``sum_i |a_ji| R + |b_j| <= 0.95 ell``.
    """
    if R <= 0 or ell <= 0:
        raise ValueError("R and ell must be positive")
    rng = np.random.default_rng(seed)
    if j0 == 0:
        return np.zeros((0, i0), dtype=complex), np.zeros(0, dtype=complex)
    bmod = rng.uniform(0.05, 0.9, j0) * ell
    b = bmod * np.exp(2j * np.pi * rng.uniform(size=j0))
    a = np.sqrt(rng.uniform(size=(j0, i0))) * np.exp(2j * np.pi * rng.uniform(size=(j0, i0)))
    room = 0.95 * ell - bmod
    rowsum = np.abs(a).sum(axis=1) * R
    scale = rng.uniform(0.2, 1.0, j0) * room / np.where(rowsum == 0, 1.0, rowsum)
    a *= scale[:, None]
    return a, b


@dataclass
class FitResult:
    c: np.ndarray
    residual: float
    rank: int
    rank_deficient: bool


def fit_readout(features, table: ActivationTable, data, ridge: float = 1e-10) -> FitResult:
    """Least-squares readout ``c`` for data ``[(z, target), ...]``.

    Solved by an orthogonal (SVD-based) least-squares routine; if the
    feature matrix is rank deficient the ridge-regularized normal equations
    are used instead.
    """
    a, b = features
    Z = np.array([np.atleast_1d(z) for z, _ in data], dtype=complex)
    T = np.array([np.atleast_1d(t) for _, t in data], dtype=complex)
    Phi = feature_matrix(a, b, table, Z)
    j0 = Phi.shape[1]
    if j0 == 0:
        return FitResult(np.zeros((T.shape[1], 0), dtype=complex), float(np.linalg.norm(T)), 0, False)
    C, _, rank, _ = np.linalg.lstsq(Phi, T, rcond=None)
    deficient = rank < j0
    if deficient:
        G = Phi.conj().T @ Phi + ridge * np.eye(j0)
        C = np.linalg.solve(G, Phi.conj().T @ T)
    res = float(np.linalg.norm(Phi @ C - T))
    return FitResult(C.T, res, int(rank), bool(deficient))


def _disk_points(rng, m: int, R: float) -> np.ndarray:
    return R * np.sqrt(rng.uniform(size=m)) * np.exp(2j * np.pi * rng.uniform(size=m))


def width_experiment(
    table: ActivationTable,
    target,
    widths=(25, 100, 400),
    R: float = 1.0,
    seed: int = 0,
    n_train: int = 2000,
    n_test: int = 61,
    nets: list | None = None,
) -> list[tuple[int, float, float]]:
    """Fit ``target`` on the disk |z| <= R for each width (i0 = k0 = 1).

    Returns ``(width, sup_error, rmse)`` on a held-out square grid clipped
    to the disk. Fitted networks are appended to ``nets`` when given.
    """
    rng = np.random.default_rng(seed)
    Ztr = _disk_points(rng, n_train, R)
    g = np.linspace(-R, R, n_test)
    Zte = (g[:, None] + 1j * g[None, :]).ravel()
    Zte = Zte[np.abs(Zte) <= R]
    out = []
    for w in widths:
        a, b = sample_features(1, w, R, table.ell, seed)
        fit = fit_readout((a, b), table, [(z, target(z)) for z in Ztr])
        net = CVNet(a, b, fit.c, table.ell, R)
        if nets is not None:
            nets.append(net)
        pred = nn_forward(net, table, Zte[:, None])[:, 0]
        err = np.abs(pred - np.array([target(z) for z in Zte]))
        out.append((int(w), float(err.max()), float(np.sqrt(np.mean(err**2)))))
    return out


def _cpx(v) -> list:
    v = np.asarray(v, dtype=complex)
    return np.stack([v.real, v.imag], axis=-1).tolist()


def _uncpx(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return np.zeros(v.shape[:-1] if v.ndim > 1 else 0, dtype=complex)
    return v[..., 0] + 1j * v[..., 1]


def table_to_json(table: ActivationTable) -> dict:
    p = table.params
    return {
        "params": {"kappa": p.kappa, "alpha": p.alpha, "gamma": p.gamma, "delta": p.delta, "mu": p.mu},
        "uhat": _cpx(table.uhat),
        "ell": table.ell,
        "extent": table.extent,
        "phase": _cpx(table.phase),
        "s": table.s_grid.tolist(),
        "g": table.g.tolist(),
        "verdicts": [[s, v] for s, v in table.verdicts],
    }


def table_from_json(d: dict) -> ActivationTable:
    p = LaserParams(**d["params"])
    return ActivationTable(
        _uncpx(d["uhat"]),
        float(d["ell"]),
        np.array(d["s"]),
        np.array(d["g"]),
        p,
        float(d["extent"]),
        [(float(s), str(v)) for s, v in d.get("verdicts", [])],
    )


def net_to_json(net: CVNet) -> dict:
    return {"a": _cpx(net.a), "b": _cpx(net.b), "c": _cpx(net.c), "ell": net.ell, "R": net.R}


def net_from_json(d: dict) -> CVNet:
    return CVNet(_uncpx(d["a"]), _uncpx(d["b"]), _uncpx(d["c"]), float(d["ell"]), float(d["R"]))


def save_json(path: Path | str, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2))
