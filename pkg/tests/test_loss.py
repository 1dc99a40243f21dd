import math

import numpy as np
import pytest

from tempdyn import loss as tl
from tempdyn.kernel import block_diagonal_kernel


class TestSoftmax:
    def test_symmetric_two_class(self):
        assert np.allclose(tl.softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_analytic_value(self):
        got = tl.softmax(np.array([math.log(2.0), 0.0]))
        assert np.allclose(got, [2.0 / 3.0, 1.0 / 3.0], rtol=1e-14)

    def test_shift_invariance_exact(self, rng):
        Z = rng.standard_normal((5, 4))
        assert np.array_equal(tl.softmax(Z), tl.softmax(Z + 100.0))

    def test_rows_sum_to_one(self, rng):
        for _ in range(50):
            s = tl.softmax(rng.standard_normal((8, 6)) * 30)
            assert np.abs(s.sum(axis=-1) - 1.0).max() < 1e-12
            assert s.min() >= 0.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            tl.softmax(np.array([0.0, math.nan]))


def one_hot(labels, k):
    Y = np.zeros((len(labels), k))
    Y[np.arange(len(labels)), labels] = 1.0
    return Y


class TestXentLoss:
    def test_zero_logits_gives_log_k(self):
        for k in (2, 5, 10):
            Y = one_hot([0] * 4, k)
            assert np.isclose(tl.xent_loss(np.zeros((4, k)), Y), math.log(k), rtol=1e-14)

    def test_large_margin_loss_vanishes(self):
        Y = one_hot([1, 0], 2)
        Z = np.array([[-50.0, 50.0], [50.0, -50.0]])
        assert tl.xent_loss(Z, Y) < 1e-20

    def test_matches_scalar_loop(self, rng):
        Z = rng.standard_normal((7, 4)) * 3
        labels = rng.integers(0, 4, 7)
        Y = one_hot(labels, 4)
        total = 0.0
        for m in range(7):
            p = math.fsum(math.exp(v) for v in Z[m])
            total += -math.log(math.exp(Z[m, labels[m]]) / p)
        assert np.isclose(tl.xent_loss(Z, Y), total / 7, rtol=1e-12)

    def test_equals_negative_log_correct_prob(self, rng):
        Z = rng.standard_normal((6, 3))
        labels = rng.integers(0, 3, 6)
        Y = one_hot(labels, 3)
        probs = tl.softmax(Z)
        expected = -np.log(probs[np.arange(6), labels]).mean()
        assert np.isclose(tl.xent_loss(Z, Y), expected, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            tl.xent_loss(np.zeros((2, 3)), np.zeros((2, 2)))


class TestResidual:
    def test_zero_logits(self):
        Y = one_hot([0, 1], 2)
        assert np.allclose(tl.residual(np.zeros((2, 2)), Y), Y - 0.5)

    def test_vanishes_at_fit(self):
        Y = one_hot([0], 2)
        Z = np.array([[60.0, -60.0]])
        assert np.abs(tl.residual(Z, Y)).max() < 1e-15

    def test_rows_sum_to_zero(self, rng):
        Z = rng.standard_normal((10, 5)) * 5
        R = tl.residual(Z, one_hot(rng.integers(0, 5, 10), 5))
        assert np.abs(R.sum(axis=1)).max() < 1e-14

    def test_norm_saturates_at_both_ends(self, rng):
        direction = rng.standard_normal((12, 3))
        Y = one_hot(rng.integers(0, 3, 12), 3)
        norms = {s: np.linalg.norm(tl.residual(s * direction, Y))
                 for s in (1e-8, 1e-7, 1e7, 1e8)}
        assert np.isclose(norms[1e-8], norms[1e-7], rtol=1e-6)
        assert np.isclose(norms[1e7], norms[1e8], rtol=1e-6)


class TestSoftmaxJacobian:
    def test_two_class_zero_logits(self):
        got = tl.softmax_jacobian(np.zeros(2))
        assert np.allclose(got, [[0.25, -0.25], [-0.25, 0.25]], rtol=1e-14)

    def test_uniform_spectrum(self):
        # K-1 eigenvalues 1/K and one exact zero at Z = 0
        for k in (3, 6):
            w = np.sort(np.linalg.eigvalsh(tl.softmax_jacobian(np.zeros(k))))
            assert abs(w[0]) < 1e-15
            assert np.allclose(w[1:], 1.0 / k, rtol=1e-12)

    def test_matches_finite_differences(self, rng):
        z = rng.standard_normal(5)
        got = tl.softmax_jacobian(z)
        eps = 1e-6
        fd = np.zeros((5, 5))
        for j in range(5):
            zp, zm = z.copy(), z.copy()
            zp[j] += eps
            zm[j] -= eps
            fd[:, j] = (tl.softmax(zp) - tl.softmax(zm)) / (2 * eps)
        assert np.abs(got - fd).max() < 1e-9

    def test_symmetric_psd_with_null_one_vector(self, rng):
        for _ in range(25):
            z = rng.standard_normal(6) * 4
            D = tl.softmax_jacobian(z)
            assert np.array_equal(D, D.T)
            assert np.linalg.eigvalsh(D).min() > -1e-15
            assert np.abs(D @ np.ones(6)).max() < 1e-15


class TestLargeBetaSpectrum:
    def test_two_class_ratio_approaches_one(self):
        z = np.array([1.0, 0.0])
        ratios = []
        for beta in (5.0, 10.0, 20.0):
            approx = tl.dsoftmax_spectrum_largebeta(z, beta).eigenvalues[0]
            exact = np.linalg.eigvalsh(tl.softmax_jacobian(beta * z)).max()
            ratios.append(approx / exact)
        assert abs(ratios[-1] - 1.0) < abs(ratios[0] - 1.0)
        assert abs(ratios[-1] - 1.0) < 1e-8

    def test_two_class_exact_second_eigenvalue_is_zero(self):
        # dsigma has the exact null vector 1; lambda_2 only tracks its scale
        z = np.array([1.0, 0.0])
        beta = 8.0
        exact = np.sort(np.linalg.eigvalsh(tl.softmax_jacobian(beta * z)))
        assert abs(exact[0]) < 1e-17
        approx = tl.dsoftmax_spectrum_largebeta(z, beta).eigenvalues[1]
        assert np.isclose(abs(approx), 0.5 * math.exp(-2 * beta), rtol=1e-12)

    def test_three_class_error_shrinks_with_beta(self):
        z = np.array([2.0, 1.0, 0.0])
        errs = []
        for beta in (8.0, 16.0, 32.0):
            exact = np.sort(np.linalg.eigvalsh(tl.softmax_jacobian(beta * z)))[::-1]
            lam3 = tl.dsoftmax_spectrum_largebeta(z, beta).eigenvalues[2]
            errs.append(abs(lam3 - exact[1]) / exact[1])
        assert errs[1] < errs[0] and errs[2] < errs[1]

    def test_eigenvector_structure(self):
        sp = tl.dsoftmax_spectrum_largebeta(np.array([3.0, 1.5, 0.2]), 6.0)
        root2 = 1.0 / math.sqrt(2.0)
        assert np.allclose(sp.eigenvectors[:, 0], [root2, -root2, 0.0])
        assert np.allclose(sp.eigenvectors[:, 1], [root2, root2, 0.0])
        assert sp.eigenvectors[2, 2] == 1.0

    def test_ties_rejected(self):
        with pytest.raises(ValueError):
            tl.dsoftmax_spectrum_largebeta(np.array([1.0, 1.0, 0.0]), 5.0)


class TestConditionBound:
    def test_diagonal_case(self):
        lo, hi = tl.condition_bound(np.diag([1.0, 2.0]), np.diag([3.0, 4.0]))
        assert np.isclose(lo, 2.0 / 3.0)
        assert np.isclose(hi, 8.0 / 3.0)
        k = tl.kappa(np.diag([1.0, 2.0]) @ np.diag([3.0, 4.0]))
        assert lo <= k <= hi

    def test_identity_first_factor(self, rng):
        B = rng.standard_normal((4, 4))
        lo, hi = tl.condition_bound(np.eye(4), B)
        assert np.isclose(lo, tl.kappa(B), rtol=1e-12)
        assert np.isclose(hi, tl.kappa(B), rtol=1e-12)

    def test_brackets_random_pairs(self, rng):
        for _ in range(300):
            A = rng.standard_normal((4, 4))
            B = rng.standard_normal((4, 4))
            lo, hi = tl.condition_bound(A, B)
            k = tl.kappa(A @ B)
            assert lo * (1 - 1e-9) <= k <= hi * (1 + 1e-9)

    def test_singular_reported_not_raised(self):
        A = np.zeros((3, 3))
        lo, hi = tl.condition_bound(A, np.eye(3))
        assert lo == 0.0 and math.isinf(hi)


class TestHessianNearEquilibrium:
    def test_zero_equilibrium_condition_number(self, rng):
        M, K = 8, 3
        A = rng.standard_normal((M, M))
        theta_x = A @ A.T / M + 0.4 * np.eye(M)
        kern = block_diagonal_kernel(theta_x, K)
        rep = tl.hessian_near_equilibrium(kern, np.zeros((M, K)), beta=1.7)
        assert np.isclose(rep.condition_number, tl.kappa(theta_x), rtol=1e-8)
        # top eigenvalue is beta^2 / K times the kernel top eigenvalue
        lam_top = np.linalg.eigvalsh(theta_x).max()
        assert np.isclose(rep.eigenvalues[0], 1.7 ** 2 / K * lam_top, rtol=1e-10)

    def test_large_regularizer_dominates(self, rng):
        M, K = 5, 2
        A = rng.standard_normal((M, M))
        theta_x = A @ A.T / M + 0.4 * np.eye(M)
        kern = block_diagonal_kernel(theta_x, K)
        lam = 1e8 * np.linalg.eigvalsh(theta_x).max()
        rep = tl.hessian_near_equilibrium(kern, np.zeros((M, K)), 1.0, lam)
        assert rep.condition_number < 1.0 + 1e-6

    def test_saturated_two_class_conditioning_blows_up(self, rng):
        M, K = 6, 2
        A = rng.standard_normal((M, M))
        theta_x = A @ A.T / M + 0.5 * np.eye(M)
        kern = block_diagonal_kernel(theta_x, K)
        margins = rng.uniform(0.5, 1.5, M)
        z_star = np.stack([margins, -margins], axis=1)
        conds = []
        for beta in (2.0, 4.0, 8.0):
            rep = tl.hessian_near_equilibrium(kern, beta * z_star, beta)
            conds.append(rep.condition_number)
        # exponential growth in beta: each doubling multiplies kappa
        assert conds[1] > 10 * conds[0]
        assert conds[2] > 10 * conds[1]

    def test_matrix_matches_definition(self, rng):
        M, K = 4, 3
        A = rng.standard_normal((M * K, M * K))
        values = A @ A.T / (M * K)
        Z = rng.standard_normal((M, K))
        beta, lam = 1.3, 0.2
        rep = tl.hessian_near_equilibrium(values, Z, beta, lam)
        D = np.zeros((M * K, M * K))
        for m in range(M):
            D[m * K:(m + 1) * K, m * K:(m + 1) * K] = tl.softmax_jacobian(Z[m])
        expected = beta ** 2 * values @ D + lam * np.eye(M * K)
        assert np.allclose(rep.matrix, expected, rtol=1e-12)
