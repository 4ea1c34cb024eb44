"""Closed-form quantities of the spin-flip rate equations.

Real state vectors are always ordered ``(Re E-, Re E+, Im E-, Im E+, N, n)``.
Complex pairs are numpy arrays of shape ``(2,)`` ordered ``(minus, plus)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "LaserParams",
    "LaserState",
    "PhaseData",
    "ToleranceSet",
    "REFERENCE_PARAMS",
    "mat_X",
    "mat_Y",
    "det_Y",
    "carrier_y",
    "rhs",
    "rhs_real",
    "jacobian_real",
    "F_map",
    "DxF",
    "G_map",
    "ab_decompose",
    "reduce_injection",
    "injection_from",
    "assemble_equilibrium",
    "stokes",
]


@dataclass(frozen=True)
class LaserParams:
    """Physical constants of the laser.

    Rates are in ns^-1; ``delta`` is the spin-mixing ratio gamma_s/gamma and
    ``mu`` the normalized pump. The coupling efficiency is absorbed into the
    injected field.
    """

    kappa: float = 300.0
    alpha: float = 0.0
    gamma: float = 1.0
    delta: float = 1.4
    mu: float = 1.2

    def __post_init__(self):
        checks = {
            "kappa": self.kappa > 0,
            "gamma": self.gamma > 0,
            "delta": self.delta > 0,
            "mu": self.mu > 1,
        }
        for name, ok in checks.items():
            if not ok:
                raise ValueError(f"invalid LaserParams: {name}={getattr(self, name)!r}")
        if not np.isfinite(self.alpha):
            raise ValueError("invalid LaserParams: alpha must be finite")

    @property
    def theta(self) -> float:
        """Phase offset -arg(1 + i alpha)."""
        return -float(np.angle(1 + 1j * self.alpha))

    @property
    def gain_modulus(self) -> float:
        """|1 + i alpha|."""
        return float(np.hypot(1.0, self.alpha))

    def with_(self, **kw) -> "LaserParams":
        return replace(self, **kw)


REFERENCE_PARAMS = LaserParams()


@dataclass(frozen=True)
class ToleranceSet:
    root_residual: float = 1e-10
    jacobian_fd: float = 1e-6
    ode_rtol: float = 1e-9
    ode_atol: float = 1e-12


@dataclass(frozen=True)
class LaserState:
    E: np.ndarray
    N: float
    n: float

    def __post_init__(self):
        E = np.asarray(self.E, dtype=complex).reshape(2)
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "N", float(self.N))
        object.__setattr__(self, "n", float(self.n))

    def to_real(self) -> np.ndarray:
        return np.array(
            [self.E[0].real, self.E[1].real, self.E[0].imag, self.E[1].imag, self.N, self.n]
        )

    @classmethod
    def from_real(cls, v) -> "LaserState":
        v = np.asarray(v, dtype=float)
        return cls(np.array([v[0] + 1j * v[2], v[1] + 1j * v[3]]), v[4], v[5])

    @classmethod
    def off(cls, p: LaserParams) -> "LaserState":
        """Zero field with carriers at their unpumped-field equilibrium (mu, 0)."""
        return cls(np.zeros(2, dtype=complex), p.mu, 0.0)


@dataclass(frozen=True)
class PhaseData:
    phi: np.ndarray
    theta: float
    # True where the injected component vanishes and phi is arbitrary
    nonunique: tuple[bool, bool] = field(default=(False, False))

    @property
    def phi_minus(self) -> float:
        return float(self.phi[0])

    @property
    def phi_plus(self) -> float:
        return float(self.phi[1])


def mat_X(z) -> np.ndarray:
    z1, z2 = z
    return np.diag([1 - (z1 - z2), 1 - (z1 + z2)])


def mat_Y(z, p: LaserParams) -> np.ndarray:
    a1, a2 = np.abs(np.asarray(z)) ** 2
    off = a2 - a1
    return np.array([[1 + a1 + a2, off], [off, p.delta + a1 + a2]])


def det_Y(x, p: LaserParams) -> float:
    x1, x2 = x
    r2 = x1 * x1 + x2 * x2
    return p.delta + (1 + p.delta) * r2 + 4 * x1 * x1 * x2 * x2


def carrier_y(x, p: LaserParams) -> np.ndarray:
    """Carrier pair (N, n) solving Y(x) (N, n) = (mu, 0)."""
    x1, x2 = x
    d = det_Y(x, p)
    assert d >= p.delta
    return p.mu / d * np.array([p.delta + x1 * x1 + x2 * x2, x1 * x1 - x2 * x2])


def rhs(state: LaserState, u, p: LaserParams) -> np.ndarray:
    return rhs_real(state.to_real(), np.asarray(u, dtype=complex), p)


def rhs_real(v, u, p: LaserParams) -> np.ndarray:
    """Right-hand side of the real 6-dimensional system."""
    er1, er2, ei1, ei2, N, n = v
    g1 = 1 - (N - n)
    g2 = 1 - (N + n)
    k, a = p.kappa, p.alpha
    # (1 + i a) * X E, split into real/imag parts
    xr1, xi1 = g1 * er1, g1 * ei1
    xr2, xi2 = g2 * er2, g2 * ei2
    i1 = er1 * er1 + ei1 * ei1
    i2 = er2 * er2 + ei2 * ei2
    return np.array(
        [
            -k * (xr1 - a * xi1 - u[0].real),
            -k * (xr2 - a * xi2 - u[1].real),
            -k * (xi1 + a * xr1 - u[0].imag),
            -k * (xi2 + a * xr2 - u[1].imag),
            -p.gamma * ((1 + i1 + i2) * N + (i2 - i1) * n - p.mu),
            -p.gamma * ((i2 - i1) * N + (p.delta + i1 + i2) * n),
        ]
    )


def jacobian_real(state: LaserState, p: LaserParams) -> np.ndarray:
    """6x6 Jacobian of the real system; independent of the injection."""
    E, N, n = state.E, state.N, state.n
    k, a, g = p.kappa, p.alpha, p.gamma
    X = mat_X((N, n))
    Fre = np.array([[E[0].real, -E[0].real], [E[1].real, E[1].real]])
    Fim = np.array([[E[0].imag, -E[0].imag], [E[1].imag, E[1].imag]])
    IX = np.eye(2) - X
    top = np.hstack([k * X, -a * k * X, -k * (Fre - a * Fim)])
    mid = np.hstack([a * k * X, k * X, -k * (a * Fre + Fim)])
    bot = np.hstack([2 * g * Fre.T @ IX, 2 * g * Fim.T @ IX, g * mat_Y(E, p)])
    return -np.vstack([top, mid, bot])


def _Xyx(x, p: LaserParams) -> np.ndarray:
    N, n = carrier_y(x, p)
    return np.array([(1 - (N - n)) * x[0], (1 - (N + n)) * x[1]])


def F_map(s: float, x, rhat, p: LaserParams) -> np.ndarray:
    """Reduced equilibrium map X(y(x)) x - s * rhat."""
    return _Xyx(np.asarray(x, dtype=float), p) - s * np.asarray(rhat, dtype=float)


def _p11(x1, x2, p):
    d, mu = p.delta, p.mu
    return mu * (d + 2 * x2 * x2) * (-d + (1 + d) * (x1 * x1 - x2 * x2) + 4 * x1 * x1 * x2 * x2)


def _p12(x1, x2, p):
    d, mu = p.delta, p.mu
    return 2 * mu * (d - 1) * (d + 2 * x1 * x1) * x1 * x2


def DxF(x, p: LaserParams) -> np.ndarray:
    x1, x2 = x
    P = np.array(
        [[_p11(x1, x2, p), _p12(x1, x2, p)], [_p12(x2, x1, p), _p11(x2, x1, p)]]
    )
    return np.eye(2) + P / det_Y(x, p) ** 2


def G_map(s: float, x, rhat, p: LaserParams) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x - F_map(s, x, rhat, p)


def ab_decompose(x, p: LaserParams) -> tuple[float, float]:
    """Radial and tangential coefficients of X(y(x)) x relative to |x|."""
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[0], x[1])
    if r == 0:
        raise ValueError("ab_decompose needs a nonzero vector")
    xh = x / r
    xp = np.array([xh[1], -xh[0]])
    v = _Xyx(x, p)
    return float(v @ xh / r), float(v @ xp / r)


def reduce_injection(u, p: LaserParams) -> tuple[np.ndarray, PhaseData]:
    """Split an injected field into moduli r and phases phi.

    ``u = (1 + i alpha) * (r_- e^{i phi_-}, r_+ e^{i phi_+})``. A vanishing
    component gets phi = 0 and is flagged as non-unique.
    """
    u = np.asarray(u, dtype=complex).reshape(2)
    r = np.abs(u) / p.gain_modulus
    w = u / (1 + 1j * p.alpha)
    zero = tuple(bool(c == 0) for c in u)
    phi = np.where(np.array(zero), 0.0, np.angle(w))
    return r, PhaseData(phi=phi, theta=p.theta, nonunique=zero)


def injection_from(r, phases: PhaseData, p: LaserParams) -> np.ndarray:
    return (1 + 1j * p.alpha) * np.asarray(r) * np.exp(1j * phases.phi)


def assemble_equilibrium(x, phases: PhaseData, p: LaserParams) -> LaserState:
    """Equilibrium (E, N, n) for the injection ``injection_from(X(y(x))x, phases)``."""
    x = np.asarray(x, dtype=float)
    E = x * np.exp(1j * phases.phi)
    N, n = carrier_y(x, p)
    return LaserState(E, N, n)


def stokes(E) -> np.ndarray:
    """Normalized Stokes coordinates (s1, s2, s3) of a circular-basis field.

    Linear polarizations lie on s3 = 0; a pure ``plus`` field has s3 = +1.
    """
    Em, Ep = np.asarray(E, dtype=complex)
    Ex = (Ep + Em) / np.sqrt(2)
    Ey = -1j * (Ep - Em) / np.sqrt(2)
    S0 = abs(Ex) ** 2 + abs(Ey) ** 2
    if S0 == 0:
        return np.zeros(3)
    c = Ex * np.conj(Ey)
    return np.array([abs(Ex) ** 2 - abs(Ey) ** 2, 2 * c.real, 2 * c.imag]) / S0
