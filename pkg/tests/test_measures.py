import numpy as np
import pytest

from wfrqe.measures import BoundedHistogram, generalized_kl, new_histogram, total_mass


class TestNewHistogram:
    def test_identity_when_in_range(self):
        h = new_histogram([0.5, 0.5])
        np.testing.assert_array_equal(h.values, [0.5, 0.5])

    def test_clamps_to_bounds(self):
        h = new_histogram([1.2, -0.1])
        np.testing.assert_array_equal(h.values, [1.0, h.mass_floor])

    def test_floor_applied_to_zero(self):
        h = new_histogram([0.0], mass_floor=1e-6)
        np.testing.assert_array_equal(h.values, [1e-6])

    def test_idempotent(self):
        h = new_histogram(np.random.default_rng(0).uniform(-1, 2, 32))
        again = new_histogram(h.values, h.mass_floor)
        np.testing.assert_array_equal(h.values, again.values)

    def test_empty_vector_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            new_histogram([])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            new_histogram([0.5, np.nan])
        with pytest.raises(ValueError, match="finite"):
            new_histogram([np.inf])

    def test_values_read_only(self):
        h = new_histogram([0.5])
        with pytest.raises(ValueError):
            h.values[0] = 0.9

    def test_dimension(self):
        assert new_histogram([0.1, 0.2, 0.3]).d == 3
        assert len(new_histogram([0.1])) == 1


class TestTotalMass:
    def test_simple_sums(self):
        assert total_mass(new_histogram([0.5, 0.5])) == 1.0
        assert total_mass(new_histogram([1, 1, 1, 1])) == 4.0

    def test_all_floor(self):
        h = new_histogram(np.zeros(400), mass_floor=1e-6)
        assert total_mass(h) == pytest.approx(4e-4)


class TestGeneralizedKL:
    def test_identical_vectors_zero(self):
        assert generalized_kl([0.3], [0.3]) == 0.0

    def test_zero_a_leaves_b_sum(self):
        assert generalized_kl([0.0], [0.8]) == pytest.approx(0.8)

    def test_direct_evaluation(self):
        expected = 0.5 * np.log(2.0) - 0.25
        assert generalized_kl([0.5], [0.25]) == pytest.approx(expected)

    def test_infinite_when_b_zero_a_positive(self):
        assert generalized_kl([0.5, 0.1], [0.5, 0.0]) == np.inf

    def test_zero_log_zero_convention(self):
        assert generalized_kl([0.0, 0.5], [0.8, 0.5]) == pytest.approx(0.8)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            generalized_kl([0.1], [0.1, 0.2])

    def test_self_divergence_zero_random(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = rng.uniform(0.01, 2.0, size=rng.integers(1, 20))
            assert generalized_kl(a, a) == pytest.approx(0.0, abs=1e-12)

    def test_nonnegative_random(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = rng.integers(1, 20)
            a = rng.uniform(0, 2.0, n)
            b = rng.uniform(0.01, 2.0, n)
            assert generalized_kl(a, b) >= -1e-12
