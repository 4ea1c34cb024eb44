import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spinflip.equilibria import BranchId, equilibria_at
from spinflip.model import LaserParams, LaserState, jacobian_real, rhs_real
from spinflip.sim import settle
from spinflip.stability import (
    STABILITY_COLUMNS,
    QRNoConvergence,
    Spectrum,
    analytic_spectrum_special,
    balance,
    classify,
    eigvec_backward_error,
    hessenberg,
    hqr_eigenvalues,
    kernel_checks,
    matching_distance,
    spectrum6,
    write_stability_csv,
    zeroth_order_state,
)

finite = st.floats(-50, 50, allow_nan=False, allow_subnormal=False)
mat6 = arrays(np.float64, (6, 6), elements=finite)


def special_state(p):
    a = math.sqrt((p.mu - 1) / 2)
    return LaserState(np.array([a, a], dtype=complex), 1.0, 0.0)


class TestSolver:
    def test_diagonal(self):
        d = np.array([3.0, -1.0, 0.5, 7.0, -2.0, 0.0])
        assert matching_distance(spectrum6(np.diag(d)), d) < 1e-14

    def test_companion(self):
        poly = np.polymul(np.polymul([1, 1.2, 120], [1, 1.6, 120]), [1, 0, 0])
        C = np.zeros((6, 6))
        C[0] = -poly[1:] / poly[0]
        C[1:, :-1] = np.eye(5)
        expect = np.concatenate([np.roots([1, 1.2, 120]), np.roots([1, 1.6, 120]), [0, 0]])
        assert matching_distance(spectrum6(C), expect) < 1e-7

    def test_hessenberg_shape_and_similarity(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(6, 6))
        H = hessenberg(A)
        assert np.all(np.tril(H, -2) == 0)
        assert np.trace(H) == pytest.approx(np.trace(A))
        assert np.linalg.det(H) == pytest.approx(np.linalg.det(A))

    def test_balance_preserves_spectrum(self):
        A = np.array([[1, 1e6, 0], [1e-6, 2, 1e5], [0, 1e-5, 3.0]])
        B = balance(A)
        assert np.linalg.norm(B) < np.linalg.norm(A)
        assert matching_distance(np.linalg.eigvals(B), np.linalg.eigvals(A)) < 1e-8

    @given(mat6)
    def test_against_numpy(self, M):
        ours = spectrum6(M)
        ref = np.linalg.eigvals(M)
        scale = max(1.0, np.linalg.norm(M))
        # eigenvalue sensitivity: compare through the backward error when the oracle disagrees
        d = matching_distance(ours, ref)
        assert d <= 1e-8 * scale or all(eigvec_backward_error(M, z) < 1e-9 for z in ours.eigenvalues)

    @given(mat6)
    def test_conjugate_symmetry(self, M):
        ev = spectrum6(M).eigenvalues
        assert matching_distance(ev, ev.conj()) <= 1e-9 * max(1.0, np.linalg.norm(M))

    @given(mat6)
    def test_symmetric_real(self, M):
        S = M + M.T
        ev = spectrum6(S).eigenvalues
        assert np.all(ev.imag == 0) or np.abs(ev.imag).max() < 1e-9 * max(1.0, np.linalg.norm(S))

    @given(mat6)
    @settings(max_examples=30)
    def test_backward_error(self, M):
        for z in spectrum6(M).eigenvalues:
            assert eigvec_backward_error(M, z) < 1e-9

    def test_iteration_cap(self):
        rng = np.random.default_rng(3)
        with pytest.raises(QRNoConvergence):
            hqr_eigenvalues(hessenberg(rng.normal(size=(6, 6))), max_total=1)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            spectrum6(np.ones((2, 3)))
        with pytest.raises(ValueError):
            spectrum6(np.full((3, 3), np.nan))


class TestMatching:
    @given(arrays(np.complex128, 5, elements=st.complex_numbers(max_magnitude=10)))
    def test_zero_on_permutation(self, a):
        assert matching_distance(a, np.random.default_rng(1).permutation(a)) == 0

    @given(
        arrays(np.complex128, 4, elements=st.complex_numbers(max_magnitude=10)),
        arrays(np.complex128, 4, elements=st.complex_numbers(max_magnitude=10)),
        arrays(np.complex128, 4, elements=st.complex_numbers(max_magnitude=10)),
    )
    def test_metric(self, a, b, c):
        ab, ba = matching_distance(a, b), matching_distance(b, a)
        assert ab == pytest.approx(ba)
        assert matching_distance(a, c) <= ab + matching_distance(b, c) + 1e-9

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            matching_distance([1, 2], [1])

    def test_spectrum_ordering(self):
        s = Spectrum(np.array([1j, -2, 3]))
        assert s.eigenvalues[0] == 3 and len(s) == 3 and s.max_re == 3


class TestSpecialPoint:
    def test_closed_form(self, p):
        c0 = 2 * p.kappa * p.gamma * (p.mu - 1)
        exact = np.concatenate([[0, 0], np.roots([1, p.gamma * p.mu, c0]), np.roots([1, p.gamma * (p.delta + p.mu - 1), c0])])
        ana = analytic_spectrum_special(p)
        assert matching_distance(ana, exact) < 1e-12
        assert matching_distance(spectrum6(jacobian_real(special_state(p), p)), ana) < 1e-8
        # four-decimal reference values: -0.6 +- 10.9380i, -0.8 +- 10.9252i
        rounded = [0, 0, -0.6 + 10.9380j, -0.6 - 10.9380j, -0.8 + 10.9252j, -0.8 - 10.9252j]
        assert matching_distance(ana, rounded) < 1e-4

    def test_closed_form_needs_alpha_zero(self):
        with pytest.raises(ValueError):
            analytic_spectrum_special(LaserParams(alpha=1))


class TestClassify:
    @pytest.mark.parametrize("lam", [0.01, -0.01])
    def test_pattern(self, p, uhat45, lam):
        reps = {e.branch: classify(e, p) for e in equilibria_at(lam, uhat45, p)}
        assert len(reps) == 9
        assert [b for b, r in reps.items() if r.verdict == "Stable"] == [BranchId.PLUS_X]
        assert sum(r.verdict == "Unstable" for r in reps.values()) == 8

    def test_limits(self, p, uhat45):
        reps = {e.branch: classify(e, p) for e in equilibria_at(1e-3, uhat45, p)}
        assert reps[BranchId.O].max_re == pytest.approx(p.kappa * (p.mu - 1), rel=0.05)
        for b in ("+L", "-L", "+R", "-R"):
            assert reps[BranchId(b)].max_re == pytest.approx(2 * p.kappa * (p.mu - 1) / (1 + p.delta), rel=0.05)

    def test_unperturbed_convergence(self, p, uhat45):
        # distance to the zeroth-order spectrum shrinks with each decade
        for b in BranchId:
            d = []
            for lam in (1e-2, 1e-3, 1e-4):
                e = next(q for q in equilibria_at(lam, uhat45, p) if q.branch is b)
                d.append(matching_distance(spectrum6(jacobian_real(e.state, p)),
                                           spectrum6(jacobian_real(zeroth_order_state(b, lam, uhat45, p), p))))
            assert d[0] > d[1] > d[2]

    def test_inconclusive_band(self, p):
        r = classify(special_state(p), p)
        assert r.verdict == "Inconclusive" and abs(r.max_re) <= r.margin

    def test_alpha_note(self, uhat45):
        q = LaserParams(alpha=3.0)
        e = equilibria_at(0.01, uhat45, q)[0]
        assert "alpha" in classify(e, q).note
        assert classify(e, LaserParams()).note == ""


class TestKernel:
    def test_residuals(self, p, uhat45):
        for e in equilibria_at(0.01, uhat45, p):
            k = kernel_checks(e.state, p)
            if not k["minus_vacuous"]:
                assert k["minus_residual"] < 1e-9
            if not k["plus_vacuous"]:
                assert k["plus_residual"] < 1e-9

    def test_vacuous_origin(self, p):
        k = kernel_checks(LaserState(np.zeros(2, complex), 0.0, 0.0), p)
        assert k["minus_vacuous"] and k["plus_vacuous"]

    def test_alpha_rejected(self):
        with pytest.raises(ValueError):
            kernel_checks(LaserState(np.ones(2, complex), 1, 0), LaserParams(alpha=1))


@pytest.mark.parametrize("lam", list(np.random.default_rng(11).uniform(0.005, 0.05, size=4)))
def test_verdict_matches_dynamics(p, uhat45, lam):
    """Stable points stay put under a small kick; unstable ones are left."""
    u = lam * uhat45
    rng = np.random.default_rng(int(lam * 1e6))
    for e in equilibria_at(lam, uhat45, p):
        rep = classify(e, p)
        y0 = e.state.to_real()
        kick = rng.normal(size=6)
        kick *= 1e-6 / np.linalg.norm(kick)
        end, _ = settle(u, LaserState.from_real(y0 + kick), 40.0, 1e-13, p)
        dist = np.linalg.norm(end.to_real() - y0)
        if rep.verdict == "Stable":
            assert dist < 1e-5
        else:
            assert dist > 1e-3, (e.branch, dist)


def test_csv(tmp_path, p, uhat45):
    rows = [(e.branch, 0.01, classify(e, p)) for e in equilibria_at(0.01, uhat45, p)]
    f = tmp_path / "s.csv"
    write_stability_csv(f, rows)
    lines = f.read_text().splitlines()
    assert tuple(lines[0].split(",")) == STABILITY_COLUMNS and len(lines) == 10
    assert sum(",Stable" in l for l in lines) == 1
