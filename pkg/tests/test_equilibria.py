import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq, fsolve

from spinflip.equilibria import (
    PATH_COLUMNS,
    BranchId,
    ContinuationError,
    RootError,
    StepControl,
    asymptotic_E,
    asymptotic_coeffs,
    branch_seed,
    continue_branch,
    equilibria_at,
    estimate_ell,
    fold_summary,
    paths_summary,
    refine_root,
    rhat_from_uhat,
    scalar_branch,
    scalar_branch_path,
    seed_inverse_jacobian,
    w_hat,
    write_paths_csv,
)
from spinflip.model import F_map, LaserParams

SYM = np.array([math.sqrt(0.1), math.sqrt(0.1)])


def fsolve_census(s, rhat, p, half=1.0, n=25):
    """Distinct roots of F(s, .) from a multi-start scipy solve."""
    roots = []
    for a, b in itertools.product(np.linspace(-half, half, n), repeat=2):
        x, info, ok, _ = fsolve(lambda v: F_map(s, v, rhat, p), (a, b), full_output=True, xtol=1e-13)
        if ok != 1 or np.linalg.norm(F_map(s, x, rhat, p)) > 1e-11:
            continue
        if all(np.linalg.norm(x - r) > 1e-7 for r in roots):
            roots.append(x)
    return roots


def diag_g(eta, p):
    return F_map(0.0, np.array([eta, eta]), np.zeros(2), p)[0]


def scalar_oracle(b, r1, s, p):
    """Bracketing solve of g(eta) = s r1 around the first-order predictor."""
    eta_pred = branch_seed(b, p)[0] + s * (seed_inverse_jacobian(b, p) @ np.array([r1, r1]))[0]
    return brentq(lambda e: diag_g(e, p) - s * r1, eta_pred - 0.03, eta_pred + 0.03, xtol=1e-15)


class TestSeeds:
    def test_enum(self):
        assert len(BranchId) == 9
        assert {b.value for b in BranchId} == {"O", "+L", "-L", "+R", "-R", "+X", "-X", "+Y", "-Y"}

    def test_zero_grid_search_finds_only_seeds(self, p):
        rhat = np.array([0.6, 0.8])
        roots = fsolve_census(0.0, rhat, p, half=2.0, n=41)
        seeds = [branch_seed(b, p) for b in BranchId]
        assert len(roots) == 9
        for r in roots:
            assert min(np.linalg.norm(r - s) for s in seeds) < 1e-9


class TestRefine:
    def test_seed_unchanged(self, p):
        for b in BranchId:
            x = branch_seed(b, p)
            np.testing.assert_array_equal(refine_root(0.0, x, SYM, p), x)

    @pytest.mark.parametrize("b", list(BranchId))
    def test_first_order_guess_fast(self, p, b):
        s = 1e-3
        rhat = np.array([0.3, 0.5])
        guess = branch_seed(b, p) + s * seed_inverse_jacobian(b, p) @ rhat
        info = {}
        x = refine_root(s, guess, rhat, p, info=info)
        assert info["iterations"] <= 4
        assert np.linalg.norm(F_map(s, x, rhat, p)) < 1e-10

    def test_far_guess_never_spurious(self, p):
        seeds = [branch_seed(b, p) for b in BranchId]
        rng = np.random.default_rng(5)
        for g in rng.uniform(-3, 3, size=(60, 2)):
            try:
                x = refine_root(0.0, g, SYM, p)
            except RootError:
                continue
            assert min(np.linalg.norm(x - s) for s in seeds) < 1e-9

    def test_singular_jacobian_error(self, p):
        # DxF vanishes identically nowhere, but is singular on the fold curve;
        # stop exactly on a computed fold point
        f = continue_branch("+L", SYM, 1.0, p).fold
        with pytest.raises(RootError):
            refine_root(f.s + 1e-3, f.x, SYM, p, max_iter=3)


class TestContinuation:
    def test_argument_errors(self, p):
        with pytest.raises(ValueError):
            continue_branch("O", (0, 0), 0.1, p)
        with pytest.raises(ValueError):
            continue_branch("O", SYM, 0.0, p)
        with pytest.raises(ValueError):
            continue_branch("O", SYM, 0.1, p, mode="bogus")

    @pytest.mark.parametrize("b", list(BranchId))
    def test_initial_slope(self, p, b):
        rhat = np.array([0.35, 0.2])
        path = continue_branch(b, rhat, 0.004, p, StepControl(ds0=1e-4, ds_max=1e-4))
        s, x = path.s[1], path.x[1]
        slope = (x - branch_seed(b, p)) / s
        np.testing.assert_allclose(slope, seed_inverse_jacobian(b, p) @ rhat, atol=50 * s)

    def test_origin_slope_value(self, p):
        rhat = np.array([0.6, 0.8])
        np.testing.assert_allclose(seed_inverse_jacobian("O", p) @ rhat, -5 * rhat, rtol=1e-12)

    def test_samples_certified_and_natural_monotone(self, p):
        for b in BranchId:
            path = continue_branch(b, SYM, 0.2, p, mode="arclength")
            for s, x in zip(path.s, path.x):
                assert np.linalg.norm(F_map(s, x, SYM, p)) < 1e-10
            nat = [s for s, m in zip(path.s, path.mode) if m == "natural"]
            assert np.all(np.diff(nat) >= 0)

    @pytest.mark.parametrize("b", ["O", "+X", "-X"])
    def test_diagonal_symmetry(self, p, b):
        path = continue_branch(b, SYM, 0.1, p)
        X = path.x_array()
        assert np.abs(X[:, 0] - X[:, 1]).max() < 1e-10

    def test_swap_symmetry(self, p):
        for a, b in (("+Y", "-Y"), ("+L", "+R"), ("-L", "-R")):
            pa = continue_branch(a, SYM, 0.05, p)
            pb = continue_branch(b, SYM, 0.05, p)
            np.testing.assert_allclose(pa.s, pb.s, atol=1e-14)
            np.testing.assert_allclose(pa.x_array(), pb.x_array()[:, ::-1], atol=1e-10)

    def test_minus_X_singular_point(self, p, uhat45):
        rhat = rhat_from_uhat(uhat45, p)
        path = continue_branch("-X", rhat, 0.2, p)
        f = path.fold
        assert f is not None and path.s[-1] == f.s
        assert 0.068 <= f.s <= 0.076
        # computed independently: root of the antisymmetric DxF eigenvalue on the diagonal
        from spinflip.model import DxF

        eta = brentq(lambda e: (lambda J: J[0, 0] - J[0, 1])(DxF([e, e], p)), -0.22, -0.18, xtol=1e-15)
        assert f.s == pytest.approx(diag_g(eta, p) / rhat[0], abs=1e-8)
        assert f.kind == "branch"

    def test_arclength_passes_folds(self, p):
        path = continue_branch("+L", SYM, 0.2, p, mode="arclength")
        assert path.fold.kind == "fold"
        assert any(path.post_fold)
        assert "pseudo-arclength" in path.mode
        i = path.monotone_end()
        assert path.s[i] == pytest.approx(path.fold.s, abs=1e-12)

    def test_threshold_scale_at_fold(self, p):
        from spinflip.model import DxF

        f = continue_branch("O", SYM, 0.2, p).fold
        J = DxF(f.x, p)
        assert abs(np.linalg.det(J)) < 1e-8 * (1 + np.linalg.norm(J) ** 2)


class TestScalar:
    def test_seeds(self, p):
        assert scalar_branch("+X", 0.3, 0.0, p) == pytest.approx(math.sqrt(0.1), abs=1e-15)
        assert scalar_branch("O", 0.3, 0.0, p) == 0.0

    def test_bad_branch(self, p):
        with pytest.raises(ValueError):
            scalar_branch("+L", 0.3, 0.01, p)

    def test_no_root_past_fold(self, p):
        with pytest.raises(RootError):
            scalar_branch("O", SYM[0], 0.1, p)

    @pytest.mark.parametrize("b", ["O", "+X", "-X"])
    def test_against_bracketing_oracle(self, p, b):
        for s in (0.005, 0.02, 0.05):
            assert scalar_branch(b, SYM[0], s, p) == pytest.approx(scalar_oracle(b, SYM[0], s, p), abs=1e-12)

    @pytest.mark.parametrize("b", ["O", "+X", "-X"])
    def test_against_continuation(self, p, b):
        path = continue_branch(b, SYM, 0.05, p)
        eta = scalar_branch_path(b, SYM[0], path.s, p)
        assert np.abs(eta - path.x_array()[:, 0]).max() < 1e-8


class TestCensus:
    def test_nine_at_small_lambda(self, p, uhat45):
        eqs = equilibria_at(0.01, uhat45, p)
        assert len(eqs) == 9 and {e.branch for e in eqs} == set(BranchId)
        assert max(e.residual for e in eqs) < 1e-9
        for a, b in itertools.combinations(eqs, 2):
            assert np.linalg.norm(a.state.to_real() - b.state.to_real()) > 1e-3

    def test_matches_fsolve_census(self, p, uhat45):
        rhat = rhat_from_uhat(uhat45, p)
        for lam, count in ((0.01, 9), (0.06, 5), (0.0715, 3), (0.2, 1)):
            ours = sorted(tuple(np.round(e.x, 7)) for e in equilibria_at(lam, uhat45, p))
            ref = sorted(tuple(np.round(x, 7)) for x in fsolve_census(lam, rhat, p))
            assert len(ours) == count
            assert ours == ref

    def test_one_at_large_lambda(self, p, uhat45):
        eqs = equilibria_at(0.2, uhat45, p)
        assert [e.branch for e in eqs] == [BranchId.PLUS_X]

    def test_real_valued_for_real_inputs(self, p, uhat45):
        for e in equilibria_at(0.01, uhat45, p):
            assert np.all(e.E.imag == 0)

    def test_lambda_zero_rejected(self, p, uhat45):
        with pytest.raises(ValueError):
            equilibria_at(0, uhat45, p)

    def test_zero_component_flagged(self, p):
        eqs = equilibria_at(0.01, np.array([0.4, 0.0]), p)
        assert all(e.residual < 1e-9 for e in eqs)

    @given(st.floats(0, 2 * math.pi), st.floats(-1, 1))
    @settings(max_examples=15)
    def test_phase_covariance(self, psi, alpha):
        q = LaserParams(alpha=alpha)
        u = np.array([0.3 + 0.1j, -0.2 + 0.25j])
        base = {e.branch: e.E for e in equilibria_at(0.01, u, q)}
        rot = {e.branch: e.E for e in equilibria_at(0.01 * np.exp(1j * psi), u, q)}
        assert base.keys() == rot.keys()
        for b in base:
            np.testing.assert_allclose(rot[b], np.exp(1j * psi) * base[b], atol=1e-12)

    @given(st.floats(0.2, math.pi / 2 - 0.2), st.floats(0, 2 * math.pi))
    @settings(max_examples=15)
    def test_nine_distinct_for_any_direction(self, th, ph):
        p = LaserParams()
        u = math.sqrt(p.mu - 1) * np.array([math.cos(th), math.sin(th) * np.exp(1j * ph)])
        eqs = equilibria_at(0.005, u, p)
        assert len(eqs) == 9
        X = np.array([e.x for e in eqs])
        d = np.linalg.norm(X[:, None] - X[None, :], axis=-1) + np.eye(9)
        assert d.min() > 1e-3


class TestAsymptotics:
    def test_leading_origin_term(self, p, uhat45):
        lam = 0.37 - 0.2j
        c = asymptotic_coeffs("O", uhat45, p)
        np.testing.assert_array_equal(c.zeroth, 0)
        lead = np.exp(1j * p.theta) * lam / abs(lam) * abs(lam) * c.first
        np.testing.assert_allclose(lead, -lam * uhat45 / (p.gain_modulus * (p.mu - 1)), atol=1e-15)

    def test_plus_X_zeroth_is_uhat(self, p, uhat45):
        np.testing.assert_allclose(asymptotic_coeffs("+X", uhat45, p).zeroth, uhat45, atol=1e-15)

    @pytest.mark.parametrize("b", list(BranchId))
    @pytest.mark.parametrize("alpha", [0.0, 2.0])
    def test_w_hat_equals_inverse_route(self, b, alpha):
        q = LaserParams(alpha=alpha, mu=1.7, delta=0.6)
        u = np.array([0.3 * np.exp(0.4j), 0.5 * np.exp(-1.1j)])
        rhat = np.abs(u) / q.gain_modulus
        expect = (u / np.abs(u)) * (seed_inverse_jacobian(b, q) @ rhat)
        np.testing.assert_allclose(w_hat(b, u, q), expect, atol=1e-14)

    @pytest.mark.parametrize("b", list(BranchId))
    def test_remainder_superlinear(self, p, b):
        u = np.array([0.3, 0.35 * np.exp(0.7j)])
        lams = np.array([1e-2, 1e-3, 1e-4, 1e-5])
        err = []
        for lam in lams:
            e = next(q for q in equilibria_at(lam, u, p) if q.branch is b)
            err.append(np.linalg.norm(e.E - asymptotic_E(b, lam, u, p)))
        slope = np.polyfit(np.log(lams), np.log(np.maximum(err, 1e-300)), 1)[0]
        assert slope > 1

    def test_needs_nonzero_components(self, p):
        with pytest.raises(ValueError):
            asymptotic_E("O", 0.01, np.array([0.3, 0]), p)


class TestEll:
    def test_reference_value(self, p, uhat45):
        assert 0.054 <= estimate_ell(uhat45, p) <= 0.060

    def test_scaling(self, p, uhat45):
        e1 = estimate_ell(uhat45, p)
        assert estimate_ell(2.5 * uhat45, p) == pytest.approx(e1 / 2.5, rel=1e-9)

    def test_remaining_folds(self, p, uhat45):
        folds = fold_summary(uhat45, p)
        assert folds[BranchId.PLUS_X] is None
        late = sorted({round(f.s, 6) for f in folds.values() if f is not None and f.s > 0.06})
        assert late and all(0.068 <= s <= 0.076 for s in late)
        assert late == pytest.approx([0.071011, 0.072353], abs=2e-6)

    def test_needs_nonzero_components(self, p):
        with pytest.raises(ValueError):
            estimate_ell(np.array([0.3, 0]), p)


def test_path_outputs(tmp_path, p):
    paths = {b: continue_branch(b, SYM, 0.1, p, mode="arclength") for b in BranchId}
    paths[BranchId.O] = None
    f = tmp_path / "paths.csv"
    write_paths_csv(f, paths)
    rows = f.read_text().splitlines()
    assert tuple(rows[0].split(",")) == PATH_COLUMNS
    assert not any(r.startswith("O,") for r in rows[1:])
    summ = json.loads(json.dumps(paths_summary(paths, 0.05)))
    assert summ["branches"]["O"]["status"] == "failed"
    assert summ["branches"]["+L"]["singular"][0]["kind"] == "fold"
