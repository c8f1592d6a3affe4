"""
Tests for gaussproto.embedding module.
"""

import math

import numpy as np
import pytest

from gaussproto.embedding import (
    LOG_2PI,
    VARIANCE_CEILING,
    VARIANCE_FLOOR,
    ProbRepr,
    ReprBatch,
    fuse,
    fuse_arrays,
    mls,
    mls_arrays,
    mls_grad,
)
from gaussproto.errors import ContractViolation, get_diagnostics


def _random_repr(rng, dim):
    return ProbRepr(rng.normal(size=dim), rng.uniform(0.2, 3.0, size=dim))


class TestProbRepr:
    """Tests for ProbRepr construction."""

    def test_fields_are_float_vectors(self):
        """Test that fields are stored as read-only float64 vectors."""
        r = ProbRepr([1, 2], [0.5, 0.25])
        assert r.mu.dtype == np.float64
        assert r.dim == 2
        with pytest.raises(ValueError):
            r.mu[0] = 3.0

    def test_rejects_dimension_mismatch(self):
        """Test that mu and sigma2 must share a dimension."""
        with pytest.raises(ContractViolation, match="dimension"):
            ProbRepr([0.0, 1.0], [1.0])

    def test_rejects_nonpositive_variance(self):
        """Test that zero or negative variances are refused."""
        with pytest.raises(ContractViolation):
            ProbRepr([0.0], [0.0])
        with pytest.raises(ContractViolation):
            ProbRepr([0.0], [-1.0])

    def test_rejects_non_finite(self):
        """Test that NaN and inf entries are refused."""
        with pytest.raises(ContractViolation):
            ProbRepr([np.nan], [1.0])
        with pytest.raises(ContractViolation):
            ProbRepr([0.0], [np.inf])

    def test_clamps_extreme_variance(self):
        """Test that variances outside the supported range are clamped and counted."""
        before = get_diagnostics().get("variance_clamped")
        r = ProbRepr([0.0, 0.0], [1e-12, 1e12])
        assert r.sigma2[0] == VARIANCE_FLOOR
        assert r.sigma2[1] == VARIANCE_CEILING
        assert get_diagnostics().get("variance_clamped") == before + 2

    def test_precision(self):
        """Test precision is the reciprocal variance."""
        r = ProbRepr([0.0, 0.0], [0.5, 4.0])
        np.testing.assert_allclose(r.precision, [2.0, 0.25])


class TestReprBatch:
    """Tests for ReprBatch."""

    def test_indexing(self):
        """Test integer indexing yields ProbRepr and slices yield batches."""
        batch = ReprBatch(np.zeros((3, 2)), np.ones((3, 2)))
        assert isinstance(batch[0], ProbRepr)
        assert isinstance(batch[1:], ReprBatch)
        assert len(batch[np.array([0, 2])]) == 2

    def test_from_and_to_reprs(self):
        """Test conversion between lists and batches."""
        reps = [ProbRepr([1.0], [2.0]), ProbRepr([3.0], [4.0])]
        batch = ReprBatch.from_reprs(reps)
        assert batch.dim == 1
        back = batch.to_reprs()
        assert back[1].mu[0] == 3.0

    def test_concat_skips_empty(self):
        """Test concatenation ignores empty batches."""
        a = ReprBatch(np.ones((2, 3)), np.ones((2, 3)))
        out = ReprBatch.concat([ReprBatch.empty(3), a, ReprBatch.empty(3)], 3)
        assert len(out) == 2
        assert len(ReprBatch.concat([], 3)) == 0


class TestMLS:
    """Tests for the mutual likelihood score."""

    def test_zero_distance_unit_variance_sum(self):
        """Test the one-dimensional zero-distance case."""
        r = ProbRepr([0.0], [0.5])
        assert mls(r, r) == pytest.approx(-0.5 * LOG_2PI, abs=1e-12)
        assert mls(r, r) == pytest.approx(-0.918939, abs=1e-6)

    def test_two_dimensional_value(self):
        """Test a hand-evaluated two-dimensional score."""
        a = ProbRepr([1.0, 0.0], [1.0, 1.0])
        b = ProbRepr([0.0, 0.0], [1.0, 1.0])
        expected = -0.25 - math.log(2.0) - LOG_2PI
        assert mls(a, b) == pytest.approx(expected, abs=1e-12)
        assert mls(a, b) == pytest.approx(-2.781024, abs=1e-6)

    def test_symmetry(self):
        """Test mls(a, b) == mls(b, a) for random pairs."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            a, b = _random_repr(rng, 5), _random_repr(rng, 5)
            assert mls(a, b) == pytest.approx(mls(b, a), rel=1e-14)

    def test_dimension_mismatch(self):
        """Test that different dimensions raise a contract violation."""
        with pytest.raises(ContractViolation, match="dimension mismatch"):
            mls(ProbRepr([0.0], [1.0]), ProbRepr([0.0, 0.0], [1.0, 1.0]))

    def test_decreases_with_variance_at_zero_distance(self):
        """Test that growing any variance lowers the score when means coincide."""
        mu = np.array([0.3, -0.2, 1.0])
        base = ProbRepr(mu, np.array([0.5, 0.5, 0.5]))
        previous = mls(base, base)
        for scale in (1.5, 2.0, 4.0):
            wider = ProbRepr(mu, np.array([0.5, 0.5 * scale, 0.5]))
            current = mls(wider, base)
            assert current < previous
            previous = current

    def test_arrays_broadcast(self):
        """Test the array form scores one anchor against many targets."""
        rng = np.random.default_rng(1)
        a = _random_repr(rng, 4)
        targets = [_random_repr(rng, 4) for _ in range(3)]
        scores = mls_arrays(
            a.mu[None, :],
            a.sigma2[None, :],
            np.stack([t.mu for t in targets]),
            np.stack([t.sigma2 for t in targets]),
        )
        expected = [mls(a, t) for t in targets]
        np.testing.assert_allclose(scores, expected, rtol=1e-14)


class TestMLSGrad:
    """Tests for the analytic MLS gradients."""

    def test_zero_mean_gradient_at_equal_means(self):
        """Test the mean gradient vanishes when the means coincide."""
        a = ProbRepr([1.0, 2.0], [0.5, 1.0])
        b = ProbRepr([1.0, 2.0], [2.0, 0.3])
        grad = mls_grad(a, b)
        np.testing.assert_array_equal(grad.d_mu_a, np.zeros(2))

    def test_mean_gradients_are_opposite(self):
        """Test d/d mu_a equals minus d/d mu_b."""
        rng = np.random.default_rng(2)
        a, b = _random_repr(rng, 6), _random_repr(rng, 6)
        grad = mls_grad(a, b)
        np.testing.assert_array_equal(grad.d_mu_a, -grad.d_mu_b)

    def test_matches_finite_differences(self):
        """Test every partial derivative against central finite differences."""
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(10):
            a, b = _random_repr(rng, 4), _random_repr(rng, 4)
            grad = mls_grad(a, b)
            fields = {
                "d_mu_a": (0, "mu"),
                "d_sigma2_a": (0, "sigma2"),
                "d_mu_b": (1, "mu"),
                "d_sigma2_b": (1, "sigma2"),
            }
            for name, (which, attr) in fields.items():
                numeric = np.zeros(4)
                for d in range(4):
                    pair = [
                        {"mu": a.mu.copy(), "sigma2": a.sigma2.copy()},
                        {"mu": b.mu.copy(), "sigma2": b.sigma2.copy()},
                    ]
                    pair[which][attr][d] += h
                    plus = mls(ProbRepr(**pair[0]), ProbRepr(**pair[1]))
                    pair[which][attr][d] -= 2 * h
                    minus = mls(ProbRepr(**pair[0]), ProbRepr(**pair[1]))
                    numeric[d] = (plus - minus) / (2 * h)
                np.testing.assert_allclose(
                    getattr(grad, name), numeric, rtol=1e-5, atol=1e-8
                )


class TestFuse:
    """Tests for precision-weighted fusion."""

    def test_equal_precision_average(self):
        """Test two equal-variance inputs average their means."""
        out = fuse([ProbRepr([0.0], [2.0]), ProbRepr([4.0], [2.0])])
        assert out.mu[0] == pytest.approx(2.0)
        assert out.sigma2[0] == pytest.approx(1.0)

    def test_hand_evaluated_case(self):
        """Test a hand-evaluated fusion with unequal variances."""
        out = fuse([ProbRepr([0.0], [1.0]), ProbRepr([4.0], [3.0])])
        assert out.sigma2[0] == pytest.approx(0.75, rel=1e-12)
        assert out.mu[0] == pytest.approx(1.0, rel=1e-12)

    def test_singleton_is_identity(self):
        """Test fusing one representation returns it exactly."""
        r = ProbRepr([0.1, 0.2], [0.3, 0.4])
        assert fuse([r]) is r
        batch_out = fuse(ReprBatch(r.mu[None, :], r.sigma2[None, :]))
        np.testing.assert_array_equal(batch_out.mu, r.mu)
        np.testing.assert_array_equal(batch_out.sigma2, r.sigma2)

    def test_empty_raises(self):
        """Test fusing nothing is a contract violation."""
        with pytest.raises(ContractViolation):
            fuse([])

    def test_precision_additivity(self):
        """Test fused precision is the sum of input precisions."""
        rng = np.random.default_rng(4)
        reps = [_random_repr(rng, 8) for _ in range(12)]
        out = fuse(reps)
        expected = sum(r.precision for r in reps)
        np.testing.assert_allclose(out.precision, expected, rtol=1e-12)

    def test_convexity(self):
        """Test each fused mean lies within the input range."""
        rng = np.random.default_rng(5)
        for _ in range(20):
            reps = [_random_repr(rng, 3) for _ in range(7)]
            out = fuse(reps)
            mus = np.stack([r.mu for r in reps])
            assert np.all(out.mu >= mus.min(axis=0))
            assert np.all(out.mu <= mus.max(axis=0))

    def test_associativity(self):
        """Test fusing two fused halves equals fusing the union."""
        rng = np.random.default_rng(6)
        reps = [_random_repr(rng, 5) for _ in range(10)]
        split = fuse([fuse(reps[:4]), fuse(reps[4:])])
        whole = fuse(reps)
        np.testing.assert_allclose(split.mu, whole.mu, rtol=1e-10)
        np.testing.assert_allclose(split.sigma2, whole.sigma2, rtol=1e-10)

    def test_permutation_invariance_is_bitwise(self):
        """Test shuffling the inputs gives a bit-identical result."""
        rng = np.random.default_rng(7)
        mu = rng.normal(size=(15, 4))
        sigma2 = rng.uniform(0.1, 2.0, size=(15, 4))
        ref_mu, ref_sigma2 = fuse_arrays(mu, sigma2)
        for _ in range(5):
            order = rng.permutation(15)
            out_mu, out_sigma2 = fuse_arrays(mu[order], sigma2[order])
            np.testing.assert_array_equal(out_mu, ref_mu)
            np.testing.assert_array_equal(out_sigma2, ref_sigma2)
