import math

import numpy as np
import pytest
import scipy.linalg

import oracles
from conftest import smooth_frame
from elasto.io import DisplacementField, RfFrame
from elasto.solver import (
    AdaptiveEps,
    FrameInterpolator,
    NumericError,
    SolverConfig,
    SparseSystem,
    adaptive_eps,
    assemble_system,
    cost_value,
    first_order_derivs,
    irls_weight,
    make_solver_config,
    refine,
    second_order_derivs,
    smoothed_abs,
    solve_sparse,
    warp_and_gradient,
)


class TestScalarOps:
    def test_smoothed_abs_values(self):
        assert smoothed_abs(0.0, 1e-4) == pytest.approx(1e-4)
        assert smoothed_abs(3.0, 4.0) == pytest.approx(5.0)
        with pytest.raises(ValueError):
            smoothed_abs(1.0, 0.0)

    def test_smoothed_abs_bound(self, rng):
        # |xi(u) - |u|| <= eta^2 / (2 |u|)
        for _ in range(200):
            u = float(rng.uniform(0.01, 10.0)) * (1 if rng.random() < 0.5 else -1)
            eta = float(rng.uniform(1e-5, 1.0))
            assert abs(smoothed_abs(u, eta) - abs(u)) <= eta * eta / (2 * abs(u)) + 1e-15

    def test_irls_weight_values(self):
        assert irls_weight(0.0, 0.5) == pytest.approx(1.0)
        eta = 0.3
        assert irls_weight(eta, eta) == pytest.approx(1.0 / math.sqrt(2.0))
        assert irls_weight(100 * eta, eta) == pytest.approx(eta / (100 * eta), rel=1e-4)

    def test_surrogate_tangency_and_majorization(self, rng):
        # quadratic surrogate w * irls * u^2 + const touches 2 w eta xi(u)
        # at u_prev and majorizes it everywhere
        for _ in range(300):
            u_prev = float(rng.normal(0.0, 2.0))
            u = float(rng.normal(0.0, 4.0))
            eta = float(rng.uniform(1e-4, 1.0))
            w = float(rng.uniform(0.1, 10.0))
            factor = w * irls_weight(u_prev, eta)
            const = 2 * w * eta * smoothed_abs(u_prev, eta) - factor * u_prev**2
            surrogate = factor * u * u + const
            true_val = 2 * w * eta * smoothed_abs(u, eta)
            assert surrogate >= true_val - 1e-10
            at_prev = factor * u_prev**2 + const
            assert at_prev == pytest.approx(2 * w * eta * smoothed_abs(u_prev, eta), rel=1e-12)
            # first derivative match at u_prev
            g_surr = 2 * factor * u_prev
            g_true = 2 * w * eta * u_prev / smoothed_abs(u_prev, eta)
            assert g_surr == pytest.approx(g_true, rel=1e-12)


class TestAdaptiveEps:
    def test_column_slope(self):
        a = np.zeros((10, 4))
        a[:, 1] = np.linspace(0.0, 9.0, 10)
        field = DisplacementField(a, np.zeros_like(a), stage="integer_prior")
        eps = adaptive_eps(field)
        assert eps.eps_a[1] == pytest.approx(1.0)
        assert eps.eps_a[0] == 0.0

    def test_zero_and_uniform_prior(self):
        zero = DisplacementField(np.zeros((6, 5)), np.zeros((6, 5)), stage="integer_prior")
        eps = adaptive_eps(zero)
        assert not eps.eps_a.any() and not eps.eps_l.any()
        const = DisplacementField(np.full((6, 5), 7.0), np.full((6, 5), 2.0),
                                  stage="integer_prior")
        eps = adaptive_eps(const)
        assert not eps.eps_a.any() and not eps.eps_l.any()

    def test_requires_integer_prior(self):
        refined = DisplacementField(np.zeros((6, 5)), np.zeros((6, 5)), stage="refined")
        with pytest.raises(ValueError):
            adaptive_eps(refined)


class TestDerivatives:
    def test_ramp_cancels_slope_bias(self):
        m, n = 8, 5
        eps = AdaptiveEps(np.full(n, 0.25), np.zeros(m))
        a = 0.25 * np.arange(m)[:, None] * np.ones((1, n))
        d = DisplacementField(a, np.zeros((m, n)))
        dya, _, _, _ = first_order_derivs(d, None, eps)
        assert np.allclose(dya[1:], 0.0, atol=1e-14)

    def test_zero_field_gives_minus_eps(self):
        m, n = 8, 5
        eps = AdaptiveEps(np.full(n, 0.25), np.full(m, 0.1))
        d = DisplacementField(np.zeros((m, n)), np.zeros((m, n)))
        dya, dxa, dyl, dxl = first_order_derivs(d, None, eps)
        assert np.allclose(dya[1:], -0.25)
        assert np.allclose(dya[0], 0.0)  # anchor: total displacement, no bias
        assert np.allclose(dxa[:, 1:], -0.25)
        assert np.allclose(dyl[1:], -0.1)
        assert np.allclose(dxl[:, 1:], -0.1)

    def test_first_order_matches_symbolic_recomputation(self, rng):
        # independent loop evaluation of the biased differences on a 5x5 toy
        m = n = 5
        a = rng.standard_normal((m, n))
        l = rng.standard_normal((m, n))
        da = rng.standard_normal((m, n))
        dl = rng.standard_normal((m, n))
        eps = AdaptiveEps(rng.standard_normal(n), rng.standard_normal(m))
        d = DisplacementField(a, l)
        dya, dxa, dyl, dxl = first_order_derivs(d, (da, dl), eps)
        for i in range(m):
            for j in range(n):
                ta, tl = a + da, l + dl
                if i == 0:
                    assert dya[i, j] == pytest.approx(ta[0, j], rel=1e-12)
                else:
                    assert dya[i, j] == pytest.approx(
                        ta[i, j] - ta[i - 1, j] - eps.eps_a[j], rel=1e-12)
                if j > 0:
                    assert dxa[i, j] == pytest.approx(
                        ta[i, j] - ta[i, j - 1] - eps.eps_a[j], rel=1e-12)
                if i > 0:
                    assert dyl[i, j] == pytest.approx(
                        tl[i, j] - tl[i - 1, j] - eps.eps_l[i], rel=1e-12)
                if j > 0:
                    assert dxl[i, j] == pytest.approx(
                        tl[i, j] - tl[i, j - 1] - eps.eps_l[i], rel=1e-12)

    def test_second_order_of_affine_is_zero(self):
        m, n = 7, 6
        a = 1.3 * np.arange(m)[:, None] + 0.4 * np.arange(n)[None, :] + 2.0
        d = DisplacementField(a, a.copy())
        for arr in second_order_derivs(d):
            assert np.allclose(arr, 0.0, atol=1e-12)

    def test_second_order_of_quadratic(self):
        m, n = 7, 4
        a = (np.arange(m)[:, None] ** 2) * np.ones((1, n))
        d = DisplacementField(a, np.zeros((m, n)))
        sya, _, _, _ = second_order_derivs(d)
        assert np.allclose(sya[1:-1], 2.0)

    def test_second_order_matches_stencil_convolution(self, rng):
        m = n = 6
        a = rng.standard_normal((m, n))
        d = DisplacementField(a, a[::-1].copy())
        sya, sxa, syl, sxl = second_order_derivs(d)
        for col in range(n):
            ref = np.convolve(a[:, col], [1.0, -2.0, 1.0], mode="valid")
            assert np.allclose(sya[1:-1, col], ref, atol=1e-12)
        for row in range(m):
            ref = np.convolve(a[row, :], [1.0, -2.0, 1.0], mode="valid")
            assert np.allclose(sxa[row, 1:-1], ref, atol=1e-12)


class TestWarp:
    def test_zero_displacement_identity(self, rng):
        i1 = smooth_frame(rng, 16, 8)
        i2 = smooth_frame(rng, 16, 8)
        d = DisplacementField(np.zeros((16, 8)), np.zeros((16, 8)))
        warp = warp_and_gradient(i1, i2, d)
        assert np.allclose(warp.warped, i2.samples, atol=1e-12)
        assert np.allclose(warp.residual, i1.samples - i2.samples, atol=1e-12)
        assert warp.valid.all()

    def test_integer_shift_exact(self, rng):
        i2 = smooth_frame(rng, 16, 8)
        d = DisplacementField(np.full((16, 8), 3.0), np.zeros((16, 8)))
        warp = warp_and_gradient(i2, i2, d)
        assert np.allclose(warp.warped[:12], i2.samples[3:15], atol=1e-12)
        assert not warp.valid[14:].any()  # rows 14, 15 map past the last row

    def test_half_sample_on_linear_data_is_midpoint(self):
        ramp = np.outer(np.arange(12, dtype=float), np.ones(6))
        i2 = RfFrame(ramp, 0.02, 0.2, 7.27, 40.0)
        d = DisplacementField(np.full((12, 6), 0.5), np.zeros((12, 6)))
        warp = warp_and_gradient(i2, i2, d)
        inside = warp.valid
        expect = ramp + 0.5
        assert np.allclose(warp.warped[inside], expect[inside], atol=1e-9)

    def test_gradient_consistent_with_warp(self, rng):
        # analytic spline gradient equals finite differences of the warp
        i1 = smooth_frame(rng, 20, 9)
        i2 = smooth_frame(rng, 20, 9)
        interp = FrameInterpolator(i2.samples)
        a = 0.3 * rng.standard_normal((20, 9))
        l = 0.2 * rng.standard_normal((20, 9))
        d = DisplacementField(a, l)
        warp = interp.warp(i1, d)
        h = 1e-6
        up = interp.warp(i1, DisplacementField(a + h, l))
        dn = interp.warp(i1, DisplacementField(a - h, l))
        inside = warp.valid & up.valid & dn.valid
        fd = (up.warped - dn.warped) / (2 * h)
        assert np.allclose(fd[inside], warp.grad_axial[inside], atol=1e-6)


def base_config(**kwargs):
    cfg = SolverConfig(alpha1=0.8, alpha2=0.5, beta1=0.7, beta2=0.4,
                       theta1=0.6, theta2=0.3, lambda1=0.45, lambda2=0.25,
                       gamma=0.2, tikhonov=0.0)
    for key, value in kwargs.items():
        setattr(cfg, key, value)
    return cfg


def random_problem(rng, m=5, n=4, integer=True, as_arrays=False):
    i1 = smooth_frame(rng, max(m, 4), max(n, 4))
    i2 = smooth_frame(rng, max(m, 4), max(n, 4))
    if as_arrays:
        i1 = i1.samples[:m, :n]
        i2 = i2.samples[:m, :n]
    if integer:
        a = rng.integers(-1, 2, (m, n)).astype(float)
        l = rng.integers(-1, 2, (m, n)).astype(float)
        # keep warp positions strictly interior so validity cannot flip
        a = np.clip(a, 1 - np.arange(m)[:, None], m - 2 - np.arange(m)[:, None])
        l = np.clip(l, 1 - np.arange(n)[None, :], n - 2 - np.arange(n)[None, :])
    else:
        a = 0.4 * rng.standard_normal((m, n))
        l = 0.3 * rng.standard_normal((m, n))
    d = DisplacementField(a, l)
    eps = AdaptiveEps(0.2 * rng.standard_normal(n), 0.1 * rng.standard_normal(m))
    return i1, i2, d, eps


class TestAssemble:
    @pytest.mark.parametrize("norms", [("l2", "l2", "l2"), ("l1", "l1", "l2"),
                                       ("l1", "l2", "l1"), ("l1", "l1", "l1")])
    def test_matches_reference_surrogate(self, rng, norms):
        # A and rhs against central differences of an independently coded
        # surrogate; central differences are exact for quadratics
        i1, i2, d, eps = random_problem(rng, m=3, n=3, as_arrays=True)
        cfg = base_config(norm_first=norms[0], norm_second=norms[1], norm_data=norms[2])
        warp = warp_and_gradient(i1, i2, d)
        system = assemble_system(i1, i2, d, cfg, eps, warp=warp)
        size = 2 * 3 * 3

        def ref(x):
            da = x[0::2].reshape(3, 3).T.copy()
            dl = x[1::2].reshape(3, 3).T.copy()
            return oracles.reference_surrogate(i1, warp, d.axial, d.lateral,
                                               da, dl, cfg, eps.eps_a, eps.eps_l)

        # central differences of a quadratic are exact, so entrywise 1e-9 holds
        h = 1e-4
        grad0 = np.empty(size)
        for k in range(size):
            e = np.zeros(size)
            e[k] = h
            grad0[k] = (ref(e) - ref(-e)) / (2 * h)
        assert np.allclose(system.rhs, -grad0, atol=1e-9)

        for k in range(size):
            e = np.zeros(size)
            e[k] = 1.0
            grad_k = np.empty(size)
            for t in range(size):
                et = np.zeros(size)
                et[t] = h
                grad_k[t] = (ref(e + et) - ref(e - et)) / (2 * h)
            col = np.asarray(system.matrix[:, k].todense()).ravel()
            assert np.allclose(col, grad_k - grad0, atol=1e-9)

    def test_unregularized_single_sample_formula(self, rng):
        i1, i2, d, eps = random_problem(rng, m=4, n=4)
        cfg = SolverConfig(alpha1=0, alpha2=0, beta1=0, beta2=0, theta1=0, theta2=0,
                           lambda1=0, lambda2=0, gamma=0, tikhonov=0.5)
        warp = warp_and_gradient(i1, i2, d)
        system = assemble_system(i1, i2, d, cfg, eps, warp=warp)
        x = solve_sparse(system)
        # per-sample 2x2 systems: (g g^T + delta I) delta_d = g mu
        for i in range(4):
            for j in range(4):
                g = np.array([warp.grad_axial[i, j], warp.grad_lateral[i, j]])
                block = np.outer(g, g) + 0.5 * np.eye(2)
                expect = np.linalg.solve(block, g * warp.residual[i, j])
                p = 2 * (j * 4 + i)
                assert np.allclose(x[p : p + 2], expect, atol=1e-10)

    def test_bias_vector_closed_form(self, rng):
        # zero field, identical frames, L2, gamma=0: rhs is exactly the
        # slope-bias vector, recomputed by loops
        m, n = 5, 4
        i1 = smooth_frame(rng, m, n)
        d = DisplacementField(np.zeros((m, n)), np.zeros((m, n)))
        eps = AdaptiveEps(rng.standard_normal(n), rng.standard_normal(m))
        cfg = base_config(gamma=0.0)
        system = assemble_system(i1, i1, d, cfg, eps)

        expect = np.zeros(2 * m * n)
        pos = lambda i, j: 2 * (j * m + i)
        for i in range(1, m):
            for j in range(n):
                expect[pos(i, j)] += cfg.alpha1 * eps.eps_a[j]
                expect[pos(i - 1, j)] -= cfg.alpha1 * eps.eps_a[j]
                expect[pos(i, j) + 1] += cfg.beta1 * eps.eps_l[i]
                expect[pos(i - 1, j) + 1] -= cfg.beta1 * eps.eps_l[i]
        for i in range(m):
            for j in range(1, n):
                expect[pos(i, j)] += cfg.alpha2 * eps.eps_a[j]
                expect[pos(i, j - 1)] -= cfg.alpha2 * eps.eps_a[j]
                expect[pos(i, j) + 1] += cfg.beta2 * eps.eps_l[i]
                expect[pos(i, j - 1) + 1] -= cfg.beta2 * eps.eps_l[i]
        assert np.allclose(system.rhs, expect, atol=1e-12)

    def test_bias_vanishes_without_eps(self, rng):
        m, n = 5, 4
        i1 = smooth_frame(rng, m, n)
        d = DisplacementField(np.zeros((m, n)), np.zeros((m, n)))
        cfg = base_config(gamma=0.0)
        system = assemble_system(i1, i1, d, cfg, AdaptiveEps.zeros(m, n))
        assert not system.rhs.any()

    def test_symmetry_and_choleskyable(self, rng):
        i1, i2, d, eps = random_problem(rng, m=6, n=5)
        for norms in (("l2", "l2"), ("l1", "l1")):
            cfg = base_config(norm_first=norms[0], norm_second=norms[1], tikhonov=None)
            system = assemble_system(i1, i2, d, cfg, eps)
            dense = system.matrix.toarray()
            assert np.abs(dense - dense.T).max() < 1e-12
            scipy.linalg.cholesky(dense)  # raises if not positive definite

    def test_nonzero_budget(self, rng):
        i1, i2, d, eps = random_problem(rng, m=8, n=6)
        system = assemble_system(i1, i2, d, base_config(), eps)
        assert system.matrix.nnz <= 26 * 8 * 6

    def test_all_invalid_raises(self, rng):
        m, n = 6, 5
        i1 = smooth_frame(rng, m, n)
        d = DisplacementField(np.full((m, n), 100.0), np.zeros((m, n)))
        with pytest.raises(NumericError):
            assemble_system(i1, i1, d, base_config(), AdaptiveEps.zeros(m, n))

    def test_large_eta_l1_matches_l2_weights(self, rng):
        # eta >> derivatives makes every reweighting factor 1, so the L1
        # subproblem coincides with the L2 one entrywise
        i1, i2, d, eps = random_problem(rng, m=5, n=4)
        l2 = assemble_system(i1, i2, d, base_config(norm_first="l2", norm_second="l2"), eps)
        l1 = assemble_system(
            i1, i2, d,
            base_config(norm_first="l1", norm_second="l1", eta0=1e9, eta1=1e9, eta2=1e9),
            eps)
        assert np.abs((l2.matrix - l1.matrix).toarray()).max() < 1e-9
        assert np.allclose(l2.rhs, l1.rhs, atol=1e-9)


class TestSolve:
    def test_identity(self):
        import scipy.sparse as sp

        rhs = np.arange(1.0, 11.0)
        system = SparseSystem(sp.identity(10, format="csr"), rhs, 0.0)
        assert np.allclose(solve_sparse(system), rhs)

    def test_zero_rhs(self):
        import scipy.sparse as sp

        system = SparseSystem(sp.identity(6, format="csr"), np.zeros(6), 0.0)
        assert not solve_sparse(system).any()

    def test_matches_dense_cholesky(self, rng):
        i1, i2, d, eps = random_problem(rng, m=20, n=10)
        cfg = base_config(norm_first="l1", norm_second="l1")
        system = assemble_system(i1, i2, d, cfg, eps)
        x = solve_sparse(system)
        dense = system.matrix.toarray()
        factor = scipy.linalg.cho_factor(dense)
        ref = scipy.linalg.cho_solve(factor, system.rhs)
        assert np.abs(x - ref).max() <= 1e-9


class TestCost:
    def test_zero_field_identical_frames_l2(self, rng):
        m, n = 8, 6
        i1 = smooth_frame(rng, m, n)
        d = DisplacementField(np.zeros((m, n)), np.zeros((m, n)))
        cfg = base_config(gamma=0.0)
        assert cost_value(i1, i1, d, cfg, AdaptiveEps.zeros(m, n)) == pytest.approx(0.0, abs=1e-18)

    def test_zero_field_l1_floor(self, rng):
        # each included term contributes 2 w eta^2 since xi(0) = eta
        m, n = 8, 6
        i1 = smooth_frame(rng, m, n)
        d = DisplacementField(np.zeros((m, n)), np.zeros((m, n)))
        cfg = base_config(norm_first="l1", norm_second="l1")
        value = cost_value(i1, i1, d, cfg, AdaptiveEps.zeros(m, n))
        expect = (2 * cfg.gamma * cfg.eta0**2 * n
                  + 2 * cfg.eta1**2 * ((cfg.alpha1 + cfg.beta1) * (m - 1) * n
                                       + (cfg.alpha2 + cfg.beta2) * m * (n - 1))
                  + 2 * cfg.eta2**2 * ((cfg.theta1 + cfg.lambda1) * (m - 2) * n
                                       + (cfg.theta2 + cfg.lambda2) * m * (n - 2)))
        assert value == pytest.approx(expect, rel=1e-12)

    def test_gradient_matches_assembled_system(self, rng):
        # finite differences of the exact cost against the assembled
        # surrogate gradient at an integer linearization point
        for norms in (("l2", "l2", "l2"), ("l1", "l1", "l2"), ("l1", "l1", "l1")):
            i1, i2, d, eps = random_problem(rng, m=10, n=8)
            cfg = base_config(norm_first=norms[0], norm_second=norms[1],
                              norm_data=norms[2])
            system = assemble_system(i1, i2, d, cfg, eps)
            grad_assembled = -2.0 * system.rhs
            h = 1e-5
            size = 2 * 10 * 8
            for k in rng.choice(size, size=25, replace=False):
                idx = int(k) // 2
                i, j = idx % 10, idx // 10
                which = int(k) % 2
                dplus = DisplacementField(d.axial + (h if which == 0 else 0) * _one(10, 8, i, j),
                                          d.lateral + (h if which == 1 else 0) * _one(10, 8, i, j))
                dminus = DisplacementField(d.axial - (h if which == 0 else 0) * _one(10, 8, i, j),
                                           d.lateral - (h if which == 1 else 0) * _one(10, 8, i, j))
                fd = (cost_value(i1, i2, dplus, cfg, eps)
                      - cost_value(i1, i2, dminus, cfg, eps)) / (2 * h)
                scale = max(abs(fd), abs(grad_assembled[k]), 1e-9)
                assert abs(fd - grad_assembled[k]) / scale < 1e-4


def _one(m, n, i, j):
    out = np.zeros((m, n))
    out[i, j] = 1.0
    return out


class TestPresets:
    def test_known_presets(self):
        glue = make_solver_config("glue")
        assert glue.theta1 == glue.lambda2 == 0.0
        assert glue.norm_first == "l2" and glue.iterations == 1
        soul = make_solver_config("soul", second_order_multiplier=1000.0)
        assert soul.theta1 == pytest.approx(5000.0)
        assert soul.lambda2 == pytest.approx(1000.0)
        l1 = make_solver_config("l1soul")
        assert l1.norm_first == "l1" and l1.norm_second == "l1"
        assert l1.theta1 == pytest.approx(100.0 * l1.alpha1)
        ow = make_solver_config("overwind")
        assert ow.theta1 == 0.0 and ow.norm_first == "l1"

    def test_multiplier_applies_to_overridden_weights(self):
        cfg = make_solver_config("l1soul", second_order_multiplier=50.0, alpha1=60.0)
        assert cfg.theta1 == pytest.approx(3000.0)

    def test_first_order_presets_reject_second_order(self):
        with pytest.raises(ValueError):
            make_solver_config("glue", second_order_multiplier=10.0)
        with pytest.raises(ValueError):
            make_solver_config("overwind", theta1=5.0)

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            make_solver_config("magic")


class TestRefine:
    def test_identity_pair_stays_zero(self, rng):
        m, n = 24, 8
        i1 = smooth_frame(rng, m, n)
        prior = DisplacementField(np.zeros((m, n)), np.zeros((m, n)),
                                  stage="integer_prior")
        for preset in ("glue", "l1soul"):
            refined, trace = refine(i1, i1, prior, make_solver_config(preset))
            assert not refined.axial.any() and not refined.lateral.any()
            assert refined.stage == "refined"

    def test_subsample_shift_recovery(self, speckle_pair):
        pre, post, truth = speckle_pair
        m, n = pre.m, pre.n
        prior = DisplacementField(np.full((m, n), 3.0), np.zeros((m, n)),
                                  stage="integer_prior")
        refined, trace = refine(pre, post, prior, make_solver_config("l1soul"))
        interior = refined.axial[15:-15, 3:-3]
        assert np.sqrt(np.mean((interior - 3.4) ** 2)) <= 0.05
        assert trace[-1].cost < trace[0].cost

    def test_trust_radius_clamps_step(self, speckle_pair):
        pre, post, _ = speckle_pair
        m, n = pre.m, pre.n
        # prior off by 3 keeps the first update at the clamp
        prior = DisplacementField(np.zeros((m, n)), np.zeros((m, n)),
                                  stage="integer_prior")
        cfg = make_solver_config("glue", iterations=1, trust_radius=0.3)
        refined, trace = refine(pre, post, prior, cfg)
        assert np.abs(refined.axial).max() <= 0.3 + 1e-12

    def test_huge_weights_return_slope_field(self, rng):
        # regularization-dominated limit with depth terms only (the
        # single-column case): the solve returns first differences equal to
        # the adaptive slope and an anchored first sample
        m, n = 12, 4
        i1 = smooth_frame(rng, m, n, scale=1e-3)
        i2 = smooth_frame(rng, m, n, scale=1e-3)
        a = np.zeros((m, n))
        a[-1, :] = m - 1.0  # slope 1 sample/row
        prior = DisplacementField(a, np.zeros((m, n)), stage="integer_prior")
        cfg = SolverConfig(alpha1=1e8, alpha2=0.0, beta1=1e8, beta2=0.0,
                           theta1=0.0, theta2=0.0, lambda1=0.0, lambda2=0.0,
                           gamma=1e8, iterations=1, trust_radius=1e9)
        refined, _ = refine(i1, i2, prior, cfg)
        diffs = np.diff(refined.axial, axis=0)
        assert np.allclose(diffs, 1.0, atol=1e-4)
        assert np.allclose(refined.axial[0], 0.0, atol=1e-4)

    def test_trace_has_system_size(self, speckle_pair):
        pre, post, _ = speckle_pair
        m, n = pre.m, pre.n
        prior = DisplacementField(np.zeros((m, n)), np.zeros((m, n)),
                                  stage="integer_prior")
        _, trace = refine(pre, post, prior, make_solver_config("glue"))
        assert trace[0].iteration == 0 and math.isnan(trace[0].step_inf)
        assert trace[1].system_nbytes > 0


class TestConfigValidation:
    def test_negative_weight(self):
        with pytest.raises(ValueError):
            SolverConfig(alpha1=-1.0).validate()

    def test_l1_needs_positive_eta(self):
        with pytest.raises(ValueError):
            SolverConfig(norm_first="l1", eta1=0.0).validate()

    def test_bad_norm_name(self):
        with pytest.raises(ValueError):
            SolverConfig(norm_first="l3").validate()
