"""Linear stability of equilibria from the spectrum of the real Jacobian.

The eigenvalues of the 6x6 Jacobian are computed by a small in-module
solver: diagonal balancing, Householder reduction to upper Hessenberg form
and Francis double-shift QR with deflation.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from spinflip.model import LaserParams, LaserState, carrier_y, jacobian_real

__all__ = [
    "Spectrum",
    "StabilityReport",
    "QRNoConvergence",
    "balance",
    "hessenberg",
    "hqr_eigenvalues",
    "spectrum6",
    "eigvec_backward_error",
    "analytic_spectrum_special",
    "matching_distance",
    "classify",
    "kernel_checks",
    "zeroth_order_state",
    "write_stability_csv",
    "STABILITY_COLUMNS",
]

_EPS = np.finfo(float).eps

STABILITY_COLUMNS = ("branch", "lambda", "maxRe", "verdict")


class QRNoConvergence(RuntimeError):
    pass


@dataclass(frozen=True)
class Spectrum:
    """Unordered tuple of eigenvalues (stored sorted by real part, descending)."""

    eigenvalues: np.ndarray

    def __post_init__(self):
        ev = np.asarray(self.eigenvalues, dtype=complex).ravel()
        order = np.lexsort((-ev.imag, -ev.real))
        object.__setattr__(self, "eigenvalues", ev[order])

    def __len__(self) -> int:
        return self.eigenvalues.size

    @property
    def max_re(self) -> float:
        return float(self.eigenvalues.real.max())


@dataclass(frozen=True)
class StabilityReport:
    spectrum: Spectrum
    max_re: float
    verdict: str
    margin: float
    note: str = ""


def balance(A: np.ndarray, radix: float = 2.0) -> np.ndarray:
    """Similarity scaling by powers of ``radix`` to equalize row/column norms."""
    a = np.array(A, dtype=float)
    n = a.shape[0]
    sqrdx = radix * radix
    # off-diagonal mass below this is noise at working precision
    tiny = _EPS * float(np.abs(a).sum())
    done = False
    while not done:
        done = True
        for i in range(n):
            c = np.abs(a[:, i]).sum() - abs(a[i, i])
            r = np.abs(a[i, :]).sum() - abs(a[i, i])
            if c <= tiny or r <= tiny:
                continue
            g = r / radix
            f = 1.0
            s = c + r
            while c < g:
                f *= radix
                c *= sqrdx
            g = r * radix
            while c > g:
                f /= radix
                c /= sqrdx
            if (c + r) / f < 0.95 * s:
                done = False
                a[i, :] /= f
                a[:, i] *= f
    return a


def hessenberg(A: np.ndarray) -> np.ndarray:
    """Upper Hessenberg form by Householder reflections (similarity)."""
    H = np.array(A, dtype=float)
    n = H.shape[0]
    for k in range(n - 2):
        x = H[k + 1 :, k].copy()
        big = np.abs(x).max()
        if big == 0:
            continue
        # scale first so the squares cannot underflow
        v = x / big
        alpha = np.linalg.norm(v)
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        H[k + 1 :, k:] -= 2.0 * np.outer(v, v @ H[k + 1 :, k:])
        H[:, k + 1 :] -= 2.0 * np.outer(H[:, k + 1 :] @ v, v)
        H[k + 2 :, k] = 0.0
    return H


def hqr_eigenvalues(H: np.ndarray, max_total: int | None = None) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.

    Exceptional shifts every ten iterations on a stuck block; raises
    ``QRNoConvergence`` after ``max_total`` sweeps (default 30 n^2).
    """
    n = H.shape[0]
    if max_total is None:
        max_total = 30 * n * n
    # 1-based working copy keeps the index arithmetic close to the textbook form
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = H
    wr = np.zeros(n + 1)
    wi = np.zeros(n + 1)
    anorm = 0.0
    for i in range(1, n + 1):
        for j in range(max(i - 1, 1), n + 1):
            anorm += abs(a[i, j])
    nn = n
    t = 0.0
    total = 0
    while nn >= 1:
        its = 0
        while True:
            l = 1
            for ll in range(nn, 1, -1):
                s = abs(a[ll - 1, ll - 1]) + abs(a[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(a[ll, ll - 1]) + s == s or abs(a[ll, ll - 1]) <= _EPS * anorm:
                    a[ll, ll - 1] = 0.0
                    l = ll
                    break
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= max_total:
                raise QRNoConvergence(f"QR iteration cap {max_total} reached")
            if its and its % 10 == 0:
                t += x
                for i in range(1, nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = min(nn, k + 3)
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr[1:] + 1j * wi[1:]


def spectrum6(M) -> Spectrum:
    """Eigenvalues of a small real matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("square matrix required")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.shape[0] == 1:
        return Spectrum(M[0].astype(complex))
    big = float(np.abs(M).max())
    if big == 0:
        return Spectrum(np.zeros(M.shape[0], dtype=complex))
    # exact power-of-two scaling keeps the QR away from under/overflow
    k = math.frexp(big)[1]
    ev = hqr_eigenvalues(hessenberg(balance(np.ldexp(M, -k))))
    return Spectrum(np.ldexp(ev.real, k) + 1j * np.ldexp(ev.imag, k))


def eigvec_backward_error(M, lam: complex, iters: int = 20) -> float:
    """``|M v - lam v| / (|M| |v|)`` with v from shifted inverse iteration.

    The start vector is a fixed generic vector so that it is not orthogonal
    to structured eigenspaces; the smallest residual over ``iters`` steps is
    returned.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    big = float(np.abs(M).max())
    if big == 0:
        return 0.0
    k = math.frexp(big)[1]
    lam = complex(lam)
    M, lam = np.ldexp(M, -k), complex(math.ldexp(lam.real, -k), math.ldexp(lam.imag, -k))
    nrm = float(np.linalg.norm(M, 2))
    v0 = np.cos(np.arange(1, n + 1) * 1.618) + 1j * np.sin(np.arange(1, n + 1) * 0.7071)
    for offset in (1e-13 * (1 + 1j), 1e-12 * np.exp(0.3j), 1e-11 * np.exp(1.1j)):
        A = M - (lam + offset * nrm) * np.eye(n)
        v = v0 / np.linalg.norm(v0)
        best = math.inf
        try:
            for _ in range(iters):
                v = np.linalg.solve(A, v)
                v /= np.linalg.norm(v)
                r = float(np.linalg.norm(M @ v - lam * v)) / nrm
                if not r < best:
                    break
                best = r
        except np.linalg.LinAlgError:
            # the shift hit an exact eigenvalue; move it and try again
            continue
        if math.isfinite(best):
            return best
    # inverse iteration broke down: use the smallest right singular vector
    v = np.linalg.svd(M - lam * np.eye(n))[2][-1].conj()
    return float(np.linalg.norm(M @ v - lam * v)) / nrm


def analytic_spectrum_special(p: LaserParams) -> Spectrum:
    """Closed-form spectrum at |E+-|^2 = (mu-1)/2, N = 1, n = 0 (alpha = 0)."""
    if p.alpha != 0:
        raise ValueError("closed form holds only for alpha = 0")
    c0 = 2 * p.kappa * p.gamma * (p.mu - 1)

    def quad(b):
        disc = complex(b * b - 4 * c0)
        r = np.sqrt(disc)
        return (-b + r) / 2, (-b - r) / 2

    th = quad(p.gamma * p.mu) + quad(p.gamma * (p.delta + p.mu - 1))
    return Spectrum(np.array([0, 0, *th], dtype=complex))


def matching_distance(A, B) -> float:
    """min over permutations of max |a_k - b_perm(k)| (exhaustive)."""
    a = np.asarray(A.eigenvalues if isinstance(A, Spectrum) else A, dtype=complex).ravel()
    b = np.asarray(B.eigenvalues if isinstance(B, Spectrum) else B, dtype=complex).ravel()
    if a.size != b.size:
        raise ValueError("spectra must have equal length")
    D = np.abs(a[:, None] - b[None, :])
    idx = np.arange(a.size)
    best = math.inf
    for perm in itertools.permutations(range(a.size)):
        best = min(best, float(D[idx, list(perm)].max()))
    return best


def classify(eq_pt, p: LaserParams, margin: float | None = None) -> StabilityReport:
    """Verdict from the largest real part with a symmetric margin band.

    ``eq_pt`` may be an ``EquilibriumPoint`` or a bare ``LaserState``. The
    default margin is 1e-6 times the Frobenius norm of the Jacobian.
    """
    state = getattr(eq_pt, "state", eq_pt)
    J = jacobian_real(state, p)
    if margin is None:
        margin = 1e-6 * float(np.linalg.norm(J))
    spec = spectrum6(J)
    mr = spec.max_re
    if mr < -margin:
        verdict = "Stable"
    elif mr > margin:
        verdict = "Unstable"
    else:
        verdict = "Inconclusive"
    note = "" if p.alpha == 0 else "beyond-proved-regime: alpha != 0"
    return StabilityReport(spec, mr, verdict, margin, note)


def kernel_checks(state: LaserState, p: LaserParams) -> dict:
    """Residuals of the two field-rotation kernel vectors (alpha = 0)."""
    if p.alpha != 0:
        raise ValueError("kernel identities hold only for alpha = 0")
    J = jacobian_real(state, p)
    E, N, n = state.E, state.N, state.n
    v1 = np.array([E[0].imag, 0, -E[0].real, 0, 0, 0])
    v2 = np.array([0, E[1].imag, 0, -E[1].real, 0, 0])
    r1 = (J + p.kappa * (1 - (N - n)) * np.eye(6)) @ v1
    r2 = (J + p.kappa * (1 - (N + n)) * np.eye(6)) @ v2
    return {
        "minus_residual": float(np.linalg.norm(r1)),
        "plus_residual": float(np.linalg.norm(r2)),
        "minus_vacuous": bool(E[0] == 0),
        "plus_vacuous": bool(E[1] == 0),
    }


def zeroth_order_state(branch, lam: complex, uhat, p: LaserParams) -> LaserState:
    """Leading-order equilibrium: seed moduli with the injection phases."""
    from spinflip.equilibria import branch_seed

    u = np.asarray(uhat, dtype=complex)
    x = branch_seed(branch, p)
    E = np.exp(1j * p.theta) * lam / abs(lam) * x * u / np.abs(u)
    N, n = carrier_y(x, p)
    return LaserState(E, N, n)


def write_stability_csv(path: Path | str, rows) -> None:
    """Rows are ``(branch, lam, report)`` triples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STABILITY_COLUMNS)
        for branch, lam, rep in rows:
            w.writerow([str(branch), repr(complex(lam)) if complex(lam).imag else repr(float(complex(lam).real)), repr(rep.max_re), rep.verdict])
