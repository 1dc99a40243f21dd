import math

import numpy as np
import pytest

from tempdyn import model as tm


def small_spec(**kw):
    defaults = dict(input_dim=5, hidden_widths=(7,), num_classes=3,
                    activation="relu", weight_scale=1.3, bias_scale=0.0)
    defaults.update(kw)
    return tm.NetworkSpec(**defaults)


def loop_forward(spec, theta, x):
    """Scalar-loop reference forward pass."""
    layers = tm.unpack(spec, theta)
    h = list(x)
    for l, (W, b) in enumerate(layers):
        scale = spec.weight_scale / math.sqrt(W.shape[1])
        out = []
        for i in range(W.shape[0]):
            acc = 0.0
            for j in range(W.shape[1]):
                acc += scale * W[i, j] * h[j]
            out.append(acc + spec.bias_scale * b[i])
        if l < len(layers) - 1:
            if spec.activation == "relu":
                out = [max(v, 0.0) for v in out]
            else:
                out = [math.erf(v) for v in out]
        h = out
    return np.array(h)


class TestSpecValidation:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            small_spec(num_classes=1)
        with pytest.raises(ValueError):
            small_spec(weight_scale=0.0)
        with pytest.raises(ValueError):
            small_spec(activation="tanh")
        with pytest.raises(ValueError):
            small_spec(hidden_widths=(0,))

    def test_dict_round_trip(self):
        spec = small_spec(bias_scale=0.2)
        assert tm.NetworkSpec.from_dict(spec.to_dict()) == spec


class TestInitParams:
    def test_same_seed_identical(self):
        spec = small_spec()
        a = tm.init_params(spec, 7)
        b = tm.init_params(spec, 7)
        assert np.array_equal(a, b)
        assert a.dtype == np.float64

    def test_different_seed_differs(self):
        spec = small_spec()
        assert not np.array_equal(tm.init_params(spec, 7), tm.init_params(spec, 8))

    def test_standard_normal_statistics(self):
        spec = small_spec(hidden_widths=(128, 128))
        theta = tm.init_params(spec, 0)
        n = theta.size
        assert abs(theta.mean()) < 4.0 / math.sqrt(n)
        assert abs(theta.var() - 1.0) < 0.1

    def test_param_count_matches_layout(self):
        spec = small_spec(hidden_widths=(4, 6), bias_scale=0.1)
        slices = tm.layer_slices(spec)
        total = sum(s.stop - s.start for w, _, b in slices for s in (w, b))
        assert total == tm.param_count(spec)


class TestPackUnpack:
    def test_round_trip_exact(self, rng):
        spec = small_spec(hidden_widths=(4, 9))
        theta = rng.standard_normal(tm.param_count(spec))
        repacked = tm.pack(spec, tm.unpack(spec, theta))
        assert np.array_equal(theta, repacked)

    def test_wrong_length_rejected(self):
        spec = small_spec()
        with pytest.raises(ValueError):
            tm.unpack(spec, np.zeros(tm.param_count(spec) + 1))


class TestForward:
    def test_single_linear_layer_scaling(self, rng):
        # z = (sigma_w / sqrt(N)) W x for a net with no hidden layers
        spec = tm.NetworkSpec(4, (), 2, "relu", 2.0, 0.0)
        theta = tm.init_params(spec, 0)
        W, _ = tm.unpack(spec, theta)[0]
        x = rng.standard_normal(4)
        z = tm.forward(spec, theta, x[None, :])[0]
        assert np.allclose(z, (2.0 / math.sqrt(4)) * W @ x, rtol=1e-13)

    def test_zero_parameters_zero_output(self, rng):
        spec = small_spec()
        z = tm.forward(spec, np.zeros(tm.param_count(spec)), rng.standard_normal((3, 5)))
        assert np.array_equal(z, np.zeros((3, 3)))

    @pytest.mark.parametrize("activation", ["relu", "erf"])
    def test_matches_loop_reference(self, activation, rng):
        spec = small_spec(hidden_widths=(6, 4), activation=activation, bias_scale=0.3)
        theta = tm.init_params(spec, 3)
        x = rng.standard_normal(5)
        got = tm.forward(spec, theta, x[None, :])[0]
        assert np.allclose(got, loop_forward(spec, theta, x), rtol=1e-12)

    def test_shape_mismatch_raises(self):
        spec = small_spec()
        with pytest.raises(ValueError):
            tm.forward(spec, tm.init_params(spec, 0), np.zeros((2, 4)))


def fd_jacobian(spec, theta, x, eps=1e-5):
    J = np.zeros((spec.num_classes, theta.size))
    for i in range(theta.size):
        tp, tmn = theta.copy(), theta.copy()
        tp[i] += eps
        tmn[i] -= eps
        J[:, i] = (tm.forward(spec, tp, x[None, :])[0]
                   - tm.forward(spec, tmn, x[None, :])[0]) / (2 * eps)
    return J


class TestJacobian:
    def test_linear_model_rows_are_inputs(self, rng):
        spec = tm.NetworkSpec(6, (), 3, "relu", 1.0, 0.0)
        theta = tm.init_params(spec, 1)
        x = rng.standard_normal(6)
        J = tm.jacobian(spec, theta, x)
        scale = 1.0 / math.sqrt(6)
        for k in range(3):
            expected = np.zeros_like(theta)
            wsl, (n_out, n_in), _ = tm.layer_slices(spec)[0]
            block = np.zeros((n_out, n_in))
            block[k] = scale * x
            expected[wsl] = block.ravel()
            assert np.allclose(J[k], expected, atol=1e-14)

    @pytest.mark.parametrize("activation", ["relu", "erf"])
    def test_matches_finite_differences(self, activation, rng):
        spec = small_spec(hidden_widths=(8, 6), activation=activation, bias_scale=0.1)
        theta = tm.init_params(spec, 2)
        x = rng.standard_normal(5)
        J = tm.jacobian(spec, theta, x)
        Jfd = fd_jacobian(spec, theta, x)
        err = np.abs(J - Jfd).max(axis=1) / np.abs(J).max(axis=1)
        assert err.max() < 1e-5

    def test_zero_input_no_bias_first_layer_grad_zero(self):
        spec = small_spec(bias_scale=0.0)
        theta = tm.init_params(spec, 4)
        J = tm.jacobian(spec, theta, np.zeros(5))
        wsl, _, _ = tm.layer_slices(spec)[0]
        assert np.array_equal(J[:, wsl], np.zeros_like(J[:, wsl]))

    def test_vjp_contracts_jacobian(self, rng):
        spec = small_spec(hidden_widths=(6,), bias_scale=0.2)
        theta = tm.init_params(spec, 5)
        X = rng.standard_normal((4, 5))
        R = rng.standard_normal((4, 3))
        expected = np.zeros_like(theta)
        for m in range(4):
            expected += tm.jacobian(spec, theta, X[m]).T @ R[m]
        assert np.allclose(tm.vjp(spec, theta, X, R), expected, rtol=1e-10)


class TestScaleLogits:
    def test_identity_at_one(self, rng):
        z = rng.standard_normal((3, 2))
        assert np.array_equal(tm.scale_logits(z, 1.0), z)

    def test_homogeneity(self, rng):
        z = rng.standard_normal((3, 2))
        Z = tm.scale_logits(z, 2.0)
        assert np.array_equal(Z, 2.0 * z)
        assert np.isclose(np.linalg.norm(Z), 2.0 * np.linalg.norm(z))

    def test_zero_and_bad_beta(self):
        assert np.array_equal(tm.scale_logits(np.zeros((2, 2)), 5.0), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            tm.scale_logits(np.zeros((2, 2)), 0.0)


class TestCorrelatedInit:
    def setup_method(self):
        self.spec = small_spec(hidden_widths=(16,), num_classes=2, bias_scale=0.0)
        self.X = np.random.default_rng(0).standard_normal((6, 5))

    def test_c_range_enforced(self):
        with pytest.raises(ValueError):
            tm.correlated_init(self.spec, 0, 1.5)

    def test_anticorrelated_cancels_exactly(self):
        m = tm.correlated_init(self.spec, 3, -1.0)
        assert np.abs(m.z(self.X)).max() < 1e-12

    def test_fully_correlated_is_sqrt2_base(self):
        m = tm.correlated_init(self.spec, 3, 1.0)
        assert np.allclose(m.z(self.X), math.sqrt(2.0) * m.base_logits(self.X), rtol=1e-12)

    def test_branch1_matches_plain_init(self):
        m = tm.correlated_init(self.spec, 3, 0.4)
        assert np.array_equal(m.params1, tm.init_params(self.spec, 3))

    def test_kernel_bit_identical_across_c(self):
        kernels = [tm.correlated_init(self.spec, 3, c).kernel(self.X).values
                   for c in (-0.8, 0.0, 0.7)]
        assert np.array_equal(kernels[0], kernels[1])
        assert np.array_equal(kernels[0], kernels[2])

    def test_norm_law_in_expectation(self):
        # E||Z0||^2 = beta^2 (1 + c) ||z0||^2, paired over seeds
        beta, c = 1.5, 0.3
        diffs = []
        for seed in range(120):
            m = tm.correlated_init(self.spec, seed, c)
            z0 = m.base_logits(self.X)
            Z0 = beta * m.z(self.X)
            diffs.append(np.linalg.norm(Z0) ** 2
                         - beta ** 2 * (1 + c) * np.linalg.norm(z0) ** 2)
        diffs = np.asarray(diffs)
        se = diffs.std(ddof=1) / math.sqrt(diffs.size)
        assert abs(diffs.mean()) < 3.0 * se

    def test_branch2_frozen_under_updates(self):
        m = tm.correlated_init(self.spec, 3, 0.2)
        before = m.params2.copy()
        m.theta = m.theta + 1.0
        assert np.array_equal(m.params2, before)


class TestCorrelationTarget:
    def test_inverts_norm_law(self):
        c = tm.correlation_for_z0_target(2.0, 3.0, 6.0)
        assert np.isclose(2.0 * math.sqrt(1 + c) * 3.0, 6.0)

    def test_unreachable_returns_none(self):
        assert tm.correlation_for_z0_target(1.0, 1.0, 2.0) is None

    def test_zero_target_gives_minus_one(self):
        assert tm.correlation_for_z0_target(1.0, 1.0, 0.0) == -1.0
