import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nes_lab import losses as L
from nes_lab.errors import CorrectionUnavailableError, DomainError, NotDifferentiableError
from nes_lab.noise import TransitionMatrix, build_symmetric

BASES = [L.LossSpec(k) for k in L.BASE_KINDS]


def rand_simplex(rng, n, c, floor=0.02):
    Q = rng.dirichlet(np.ones(c), size=n) + floor
    return Q / Q.sum(axis=1, keepdims=True)


def all_specs():
    T = build_symmetric(4, 0.3)
    out = list(BASES)
    for b in BASES:
        out.append(L.forward_correct(b, T))
        out.append(L.backward_correct(b, T))
    return out


class TestValues:
    def test_known_values(self):
        q = np.array([0.5, 0.25, 0.25])
        assert L.loss(L.LossSpec("CE"), q, 0) == pytest.approx(np.log(2))
        assert L.loss(L.LossSpec("MSE"), q, 0) == pytest.approx(0.25 + 0.0625 * 2)
        assert L.loss(L.LossSpec("GCE", rho=0.7), q, 1) == pytest.approx((1 - 0.25 ** 0.7) / 0.7)
        # reverse CE with log 0 -> -4 contributes 4 * (1 - q_y)
        assert L.loss(L.LossSpec("SCE"), q, 0) == pytest.approx(np.log(2) + 4 * 0.5)

    def test_ce_is_infinite_at_zero(self):
        assert L.loss(L.LossSpec("CE"), [0.0, 1.0], 0) == np.inf

    def test_zero_one(self):
        spec = L.LossSpec("ZeroOne")
        np.testing.assert_array_equal(L.loss_values(spec, [[0.6, 0.4], [0.3, 0.7]], [0, 0]), [0, 1])
        with pytest.raises(NotDifferentiableError):
            L.loss_gradient(spec, [0.5, 0.5], 0)

    def test_gce_rho_one_is_linear(self):
        q = np.array([0.2, 0.8])
        assert L.loss(L.LossSpec("GCE", rho=1.0), q, 1) == pytest.approx(0.2)

    def test_label_range_checked(self):
        with pytest.raises(DomainError):
            L.loss_values(L.LossSpec(), [[0.5, 0.5]], [2])

    @pytest.mark.parametrize("kw", [dict(rho=0.0), dict(rho=1.5), dict(alpha=-1.0)])
    def test_bad_hyperparameters(self, kw):
        with pytest.raises(DomainError):
            L.LossSpec("GCE", **kw)

    def test_correction_needs_matrix(self):
        with pytest.raises(DomainError):
            L.LossSpec("FCE")

    def test_singular_matrix_blocks_backward(self):
        T = TransitionMatrix(np.full((3, 3), 1 / 3))
        with pytest.raises(CorrectionUnavailableError):
            L.backward_correct(L.LossSpec(), T)
        L.forward_correct(L.LossSpec(), T)  # forward correction needs no inverse

    def test_forward_is_base_of_noisy_posterior(self):
        T = build_symmetric(3, 0.3)
        q = np.array([0.7, 0.2, 0.1])
        assert L.loss(L.forward_correct(L.LossSpec(), T), q, 2) == pytest.approx(-np.log((T.entries @ q)[2]))


class TestGradients:
    @pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.describe().split(" matrix")[0])
    def test_probability_gradient_matches_finite_differences(self, spec):
        rng = np.random.default_rng(0)
        Q = rand_simplex(rng, 8, 4)
        y = rng.integers(0, 4, 8)
        G = L.loss_gradients(spec, Q, y)
        h = 1e-6
        for i in range(Q.shape[0]):
            for k in range(4):
                e = np.zeros(4)
                e[k] = h
                fd = (L.loss(spec, Q[i] + e, y[i]) - L.loss(spec, Q[i] - e, y[i])) / (2 * h)
                assert G[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-6)

    @pytest.mark.parametrize("spec", all_specs(), ids=lambda s: s.describe().split(" matrix")[0])
    def test_logit_gradient_matches_finite_differences(self, spec):
        rng = np.random.default_rng(1)
        Z = rng.normal(size=(5, 4))
        y = rng.integers(0, 4, 5)
        values, dZ = L.values_and_logit_grads(spec, Z, y)
        np.testing.assert_allclose(values, L.loss_values(spec, L.softmax(Z), y), rtol=1e-10)
        h = 1e-6
        for i in range(5):
            for k in range(4):
                Zp, Zm = Z.copy(), Z.copy()
                Zp[i, k] += h
                Zm[i, k] -= h
                fd = (L.values_and_logit_grads(spec, Zp, y)[0][i] - L.values_and_logit_grads(spec, Zm, y)[0][i]) / (2 * h)
                assert dZ[i, k] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_fused_ce_stays_finite_when_saturated(self):
        Z = np.array([[800.0, -800.0]])
        values, dZ = L.values_and_logit_grads(L.LossSpec(), Z, [1])
        assert np.isfinite(values).all() and np.isfinite(dZ).all()
        assert values[0] == pytest.approx(1600.0)


class TestBackwardUnbiased:
    @given(c=st.integers(2, 4), seed=st.integers(0, 10_000), base=st.sampled_from(list(L.BASE_KINDS)))
    @settings(max_examples=60, deadline=None)
    def test_expected_noisy_equals_clean(self, c, seed, base):
        rng = np.random.default_rng(seed)
        # diagonally heavy random matrix keeps the inverse well conditioned
        t = rng.dirichlet(np.ones(c), size=c).T * 0.4 + 0.6 * np.eye(c)
        T = TransitionMatrix(t)
        spec = L.backward_correct(L.LossSpec(base), T)
        q = rand_simplex(rng, 1, c)[0]
        for y in range(c):
            noisy = sum(t[k, y] * L.loss(spec, q, k) for k in range(c))
            assert noisy == pytest.approx(L.loss(L.LossSpec(base), q, y), rel=1e-9, abs=1e-9)


def test_softmax_rows_sum_to_one():
    Z = np.random.default_rng(0).normal(size=(6, 5)) * 50
    np.testing.assert_allclose(L.softmax(Z).sum(axis=1), 1.0)
    np.testing.assert_allclose(np.exp(L.log_softmax(Z)), L.softmax(Z), atol=1e-15)
