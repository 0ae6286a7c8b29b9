import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nes_lab import noise as nz
from nes_lab.errors import DegenerateGeometryError, DomainError, InvalidPairingError


def column_stochastic(T):
    t = np.asarray(T)
    return np.all(t >= 0) and np.allclose(t.sum(axis=0), 1.0, atol=1e-12)


class TestTransitionMatrix:
    def test_rejects_row_stochastic_input(self):
        with pytest.raises(DomainError):
            nz.TransitionMatrix(np.array([[0.9, 0.1], [0.5, 0.5]]))

    @pytest.mark.parametrize("bad", [np.ones((2, 3)) / 2, np.array([[1.0]]), np.array([[1.2, 0], [-0.2, 1]])])
    def test_rejects_bad_shapes_and_values(self, bad):
        with pytest.raises(DomainError):
            nz.TransitionMatrix(bad)

    def test_entries_are_read_only(self):
        T = nz.build_symmetric(3, 0.3)
        with pytest.raises(ValueError):
            T.entries[0, 0] = 0.5

    def test_text_round_trip_is_exact(self, tmp_path):
        T = nz.FIVE_CLASS_T
        path = tmp_path / "t.txt"
        T.save(path)
        assert nz.TransitionMatrix.load(path) == T

    def test_from_text_skips_comments(self):
        T = nz.TransitionMatrix.from_text("# comment\n2\n0.75 0.25\n0.25 0.75\n")
        np.testing.assert_array_equal(T.entries, [[0.75, 0.25], [0.25, 0.75]])


class TestBuilders:
    def test_symmetric_entries(self):
        T = np.asarray(nz.build_symmetric(4, 0.3))
        np.testing.assert_allclose(np.diag(T), 0.7)
        np.testing.assert_allclose(T[0, 1:], 0.1)

    def test_include_original_mode_rescales_rate(self):
        # resampling 90% of labels uniformly over all ten leaves 19% unchanged
        T = nz.symmetric_injection(10, 0.9, include_original=True)
        np.testing.assert_allclose(np.diag(T), 1 - 0.81)
        assert nz.symmetric_injection(10, 0.9) == nz.build_symmetric(10, 0.9)

    def test_circular_moves_to_next_label(self):
        T = np.asarray(nz.build_circular(3, 0.2))
        np.testing.assert_allclose(T, [[0.8, 0, 0.2], [0.2, 0.8, 0], [0, 0.2, 0.8]])

    def test_pairwise_cifar_pairs(self):
        T = np.asarray(nz.build_pairwise(10, nz.CIFAR10_PAIRS, 0.4))
        assert T[1, 9] == pytest.approx(0.4) and T[9, 9] == pytest.approx(0.6)
        assert T[3, 5] == pytest.approx(0.4) and T[5, 3] == pytest.approx(0.4)
        assert T[6, 6] == 1.0

    @pytest.mark.parametrize("pairs", [[(0, 1), (0, 2)], [(0, 2), (1, 2)], [(1, 1)], [(0, 5)]])
    def test_pairwise_rejects_bad_pairings(self, pairs):
        with pytest.raises(InvalidPairingError):
            nz.build_pairwise(3, pairs, 0.3)

    def test_asym_mnist_blocks(self):
        T = np.asarray(nz.build_asym_mnist(0.3))
        np.testing.assert_allclose(T[:3, :3], [[0.7, 0.3, 0.3], [0.3, 0.7, 0.3], [0, 0, 0.4]])
        assert T[9, 9] == 1.0
        with pytest.raises(DomainError):
            nz.build_asym_mnist(0.6)

    def test_superclass_circular_needs_partition(self):
        T = np.asarray(nz.build_superclass_circular([[0, 1], [2, 3, 4]], 0.25))
        assert T[1, 0] == pytest.approx(0.25) and T[0, 1] == pytest.approx(0.25)
        assert T[3, 2] == pytest.approx(0.25) and T[2, 4] == pytest.approx(0.25)
        with pytest.raises(DomainError):
            nz.build_superclass_circular([[0, 1], [1, 2]], 0.2)

    def test_ternary_matrix(self):
        T = np.asarray(nz.ternary_asymmetric(0.3))
        np.testing.assert_allclose(T, [[0.55, 0.15, 0.3], [0.3, 0.55, 0.15], [0.15, 0.3, 0.55]])

    @given(c=st.integers(2, 12), eta=st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_symmetric_is_column_stochastic(self, c, eta):
        assert column_stochastic(nz.build_symmetric(c, eta))

    @given(c=st.integers(2, 9), eta=st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_circular_is_column_stochastic(self, c, eta):
        assert column_stochastic(nz.build_circular(c, eta))

    def test_rates_outside_unit_interval_rejected(self):
        for eta in (-0.1, 1.1, float("nan")):
            with pytest.raises(DomainError):
                nz.build_symmetric(3, eta)


class TestClassPreservation:
    def test_symmetric_threshold_is_nine_tenths(self):
        thr = nz.class_preserving_threshold(lambda e: nz.build_symmetric(10, e))
        assert thr == pytest.approx(0.9, abs=1e-8)

    def test_asym_mnist_threshold_is_one_third(self):
        thr = nz.class_preserving_threshold(nz.build_asym_mnist)
        assert thr == pytest.approx(1 / 3, abs=1e-8)

    def test_include_original_mode_never_crosses(self):
        thr = nz.class_preserving_threshold(lambda e: nz.symmetric_injection(10, e, True))
        assert thr == pytest.approx(1.0, abs=1e-8)

    def test_above_threshold_is_not_preserving(self):
        onehot = np.eye(10)[3]
        assert nz.is_class_preserving_at(nz.build_symmetric(10, 0.95), onehot) is False
        assert nz.is_class_preserving_at(nz.build_symmetric(10, 0.5), onehot) is True

    def test_exact_threshold_is_a_tie(self):
        assert nz.is_class_preserving_at(nz.build_symmetric(10, 0.9), np.eye(10)[0]) is None

    def test_clean_tie_is_undecided(self):
        assert nz.is_class_preserving_at(nz.build_symmetric(3, 0.1), [0.5, 0.5, 0.0]) is None

    def test_posterior_off_simplex_rejected(self):
        with pytest.raises(DomainError):
            nz.is_class_preserving_at(nz.build_symmetric(3, 0.1), [0.5, 0.6, 0.0])

    def test_taxonomy_flags(self):
        rep = nz.taxonomy(nz.build_symmetric(4, 0.2))
        assert rep.symmetric and rep.diagonally_dominant and not rep.circular
        rep = nz.taxonomy(nz.build_circular(3, 0.2))
        assert rep.circular and rep.pairwise and not rep.symmetric
        assert rep.eta == pytest.approx(0.2)
        assert not nz.taxonomy(nz.build_circular(3, 0.6)).diagonally_dominant

    @given(c=st.integers(2, 10), eta=st.floats(0, 0.999))
    @settings(max_examples=80, deadline=None)
    def test_symmetric_dominance_matches_threshold(self, c, eta):
        rep = nz.taxonomy(nz.build_symmetric(c, eta), tol=0.0)
        thr = (c - 1) / c
        if abs(eta - thr) > 1e-9:
            assert rep.diagonally_dominant == (eta < thr)


class TestSampling:
    def test_seeded_and_reproducible(self):
        y = np.arange(1000) % 10
        T = nz.build_symmetric(10, 0.4)
        np.testing.assert_array_equal(nz.apply_noise(y, T, seed=5), nz.apply_noise(y, T, seed=5))
        assert np.any(nz.apply_noise(y, T, seed=5) != nz.apply_noise(y, T, seed=6))

    def test_empirical_transition_frequencies(self):
        n = 60000
        y = np.repeat(np.arange(3), n // 3)
        T = nz.ternary_asymmetric(0.3)
        noisy = nz.apply_noise(y, T, seed=1)
        for j in range(3):
            freq = np.bincount(noisy[y == j], minlength=3) / (n // 3)
            sd = np.sqrt(T.entries[:, j] * (1 - T.entries[:, j]) / (n // 3))
            assert np.all(np.abs(freq - T.entries[:, j]) <= 4 * sd)

    def test_identity_keeps_labels(self):
        y = np.array([0, 2, 1, 1])
        np.testing.assert_array_equal(nz.apply_noise(y, nz.build_symmetric(3, 0.0), seed=0), y)

    def test_rejects_out_of_range_labels(self):
        with pytest.raises(DomainError):
            nz.apply_noise([0, 3], nz.build_symmetric(3, 0.1))

    def test_non_uniform_field_needs_instances(self):
        field = nz.ClassifierInducedNoise(lambda X: np.tile([1.0, 0.0], (len(X), 1)), 0.5, 2)
        with pytest.raises(DomainError):
            nz.apply_noise([0, 1], field)


class TestInstanceDependent:
    def test_pca_split_sides_use_each_matrix(self):
        rng = np.random.default_rng(0)
        X = np.concatenate([rng.normal(size=(200, 2)) * [5, 0.1] + k * 20 for k in range(3)])
        y = np.repeat(np.arange(3), 200)
        A = nz.build_circular(3, 1.0)
        B = nz.build_pairwise(3, [(0, 2), (2, 0)], 1.0)
        field = nz.build_pca_split_field(X, y, 1.0, A, B)
        side = field.side(X, y)
        assert 0.3 < side.mean() < 0.7
        cols = field.columns(X, y)
        np.testing.assert_allclose(cols[side], A.entries[:, y[side]].T)
        np.testing.assert_allclose(cols[~side], B.entries[:, y[~side]].T)

    def test_pca_split_degenerate_class(self):
        X = np.vstack([np.ones((5, 2)), np.random.default_rng(0).normal(size=(5, 2))])
        y = np.repeat([0, 1], 5)
        with pytest.raises(DegenerateGeometryError):
            nz.build_pca_split_field(X, y, 0.3, c=2)

    def test_power_iteration_finds_leading_direction(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(500, 3)) * [0.1, 3.0, 0.5]
        v = nz._power_iteration(X - X.mean(axis=0))
        assert abs(v[1]) == pytest.approx(1.0, abs=1e-3)

    def test_classifier_induced_columns(self):
        pred = lambda X: np.eye(3)[np.asarray(X[:, 0], dtype=int)]
        field = nz.build_classifier_induced_field(pred, 0.4, 3)
        X = np.array([[2.0], [0.0]])
        cols = field.columns(X, np.array([0, 0]))
        np.testing.assert_allclose(cols, [[0.6, 0, 0.4], [1.0, 0, 0]])
        assert field.predictor_accuracy(X, np.array([2, 1])) == 0.5

    def test_matrix_at_is_column_stochastic(self):
        pred = lambda X: np.tile([0.2, 0.8], (len(X), 1))
        field = nz.ClassifierInducedNoise(pred, 0.3, 2)
        T = field.matrix_at(np.array([0.0]))
        np.testing.assert_allclose(np.asarray(T), [[0.7, 0.0], [0.3, 1.0]])
