"""
Tests for gaussproto.negatives module.
"""

import numpy as np
import pytest

from gaussproto.embedding import ReprBatch
from gaussproto.errors import ContractViolation, get_diagnostics
from gaussproto.negatives import (
    MemoryBank,
    VNScale,
    filter_valid,
    generate_vn,
    generate_vn_array,
    memory_bank_baseline,
    negative_class_distribution,
    sample_anchors,
    sample_real_negatives,
)
from gaussproto.prototypes import GlobalPrototype, PrototypeBank


def _bank_1d(means, sigma2=0.5):
    bank = PrototypeBank(len(means), 1)
    for c, m in enumerate(means):
        bank.absorb(c, np.array([m]), np.array([sigma2]))
    return bank


def _pool(n, value, dim=2):
    return ReprBatch(np.full((n, dim), float(value)), np.ones((n, dim)))


class TestFilterValid:
    """Tests for filter_valid."""

    def test_threshold_is_strict(self):
        """Test only confidences strictly above the threshold are kept."""
        kept = filter_valid(np.array([0.6, 0.71, 0.9]), 0.7)
        assert kept.tolist() == [1, 2]
        assert filter_valid(np.array([0.7]), 0.7).tolist() == []

    def test_idempotent(self):
        """Test filtering the kept confidences again keeps all of them."""
        confidences = np.random.default_rng(2).uniform(size=500)
        kept = filter_valid(confidences, 0.7)
        again = filter_valid(confidences[kept], 0.7)
        np.testing.assert_array_equal(again, np.arange(len(kept)))
        np.testing.assert_array_equal(kept[again], kept)

    def test_zero_threshold(self):
        """Test a zero threshold keeps every positive confidence."""
        kept = filter_valid(np.array([0.0, 0.1, 1.0]), 0.0)
        assert kept.tolist() == [1, 2]


class TestSampleAnchors:
    """Tests for sample_anchors."""

    def test_confident_pixels_are_not_anchors(self):
        """Test confidences at or above the strong threshold give no anchors."""
        rng = np.random.default_rng(0)
        out = sample_anchors(np.array([0.8, 0.95, 0.99]), 0.8, 5, rng)
        assert out.size == 0

    def test_small_pool_returned_whole(self):
        """Test a pool smaller than k is returned entirely."""
        rng = np.random.default_rng(0)
        out = sample_anchors(np.array([0.75, 0.9, 0.72]), 0.8, 5, rng)
        assert out.tolist() == [0, 2]

    def test_large_pool_subsampled(self):
        """Test k distinct anchors are drawn from a large pool."""
        rng = np.random.default_rng(0)
        conf = np.full(100, 0.75)
        out = sample_anchors(conf, 0.8, 10, rng)
        assert len(out) == 10
        assert len(set(out.tolist())) == 10
        assert np.all(np.diff(out) > 0)

    def test_reproducible(self):
        """Test the same seed gives the same anchors."""
        conf = np.linspace(0.7, 0.79, 50)
        a = sample_anchors(conf, 0.8, 7, np.random.default_rng(9))
        b = sample_anchors(conf, 0.8, 7, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_negative_k(self):
        """Test a negative anchor count is refused."""
        with pytest.raises(ContractViolation):
            sample_anchors(np.array([0.5]), 0.8, -1, np.random.default_rng(0))


class TestNegativeClassDistribution:
    """Tests for negative_class_distribution."""

    def test_two_equidistant_classes(self):
        """Test two candidates at equal score share the mass evenly."""
        bank = _bank_1d([0.0, -1.0, 1.0])
        dist = negative_class_distribution(0, bank)
        assert dist[1] == pytest.approx(0.5)
        assert dist[2] == pytest.approx(0.5)

    def test_single_candidate(self):
        """Test a single other class gets probability one."""
        bank = _bank_1d([0.0, 3.0])
        assert negative_class_distribution(0, bank) == {1: pytest.approx(1.0)}

    def test_three_candidates(self):
        """Test scores spaced like (-1, -2, -4) give the matching softmax."""
        # unit variance sum: score offsets are -0.5 * distance**2
        bank = _bank_1d([0.0, 0.0, np.sqrt(2.0), np.sqrt(6.0)])
        dist = negative_class_distribution(0, bank, temperature_n=1.0)
        assert dist[1] == pytest.approx(0.705, abs=1e-3)
        assert dist[2] == pytest.approx(0.259, abs=1e-3)
        assert dist[3] == pytest.approx(0.035, abs=1e-3)
        assert sum(dist.values()) == pytest.approx(1.0)

    def test_no_other_class(self):
        """Test an empty distribution when only the anchor class is known."""
        bank = PrototypeBank(3, 1)
        bank.absorb(1, np.array([0.0]), np.array([1.0]))
        assert negative_class_distribution(1, bank) == {}

    def test_candidates_restrict(self):
        """Test the candidate set excludes classes not listed."""
        bank = _bank_1d([0.0, 1.0, 2.0, 3.0])
        dist = negative_class_distribution(0, bank, candidates=[0, 2])
        assert list(dist) == [2]

    def test_uninitialized_anchor(self):
        """Test an anchor class without prototype is refused."""
        bank = PrototypeBank(2, 1)
        with pytest.raises(ContractViolation):
            negative_class_distribution(0, bank)

    def test_temperature_must_be_positive(self):
        """Test a non-positive temperature is refused."""
        bank = _bank_1d([0.0, 1.0])
        with pytest.raises(ContractViolation):
            negative_class_distribution(0, bank, temperature_n=0.0)


class TestSampleRealNegatives:
    """Tests for sample_real_negatives."""

    def test_zero_total(self):
        """Test nothing is drawn when k_total is zero."""
        rng = np.random.default_rng(0)
        out = sample_real_negatives({1: _pool(3, 1)}, {1: 1.0}, 0, rng)
        assert out == {}

    def test_degenerate_distribution(self):
        """Test a one-class distribution draws every negative from it."""
        pools = {1: _pool(3, 1.0), 2: _pool(4, 2.0)}
        out = sample_real_negatives(pools, {2: 1.0}, 10, np.random.default_rng(0))
        assert list(out) == [2]
        assert len(out[2]) == 10
        assert np.all(out[2].mu == 2.0)

    def test_empty_pool_is_redrawn(self):
        """Test labels of empty classes are redrawn or dropped, never sampled."""
        pools = {0: _pool(5, 0.0)}
        before = get_diagnostics().get("negative_redraw_skipped")
        out = sample_real_negatives(
            pools, {0: 0.5, 1: 0.5}, 200, np.random.default_rng(1)
        )
        skipped = get_diagnostics().get("negative_redraw_skipped") - before
        assert list(out) == [0]
        assert len(out[0]) + skipped == 200

    def test_class_frequencies(self):
        """Test drawn class counts stay within 3 standard errors of the distribution."""
        pools = {c: _pool(4, c) for c in range(3)}
        dist = {0: 0.2, 1: 0.3, 2: 0.5}
        n = 100_000
        out = sample_real_negatives(pools, dist, n, np.random.default_rng(8))
        assert sum(len(b) for b in out.values()) == n
        for c, p in dist.items():
            se = np.sqrt(n * p * (1.0 - p))
            assert abs(len(out[c]) - n * p) < 3 * se

    def test_reproducible(self):
        """Test the same seed draws the same negatives."""
        rng_values = np.random.default_rng(5)
        pools = {
            c: ReprBatch(rng_values.normal(size=(6, 2)), np.ones((6, 2)))
            for c in range(3)
        }
        dist = {0: 0.2, 1: 0.3, 2: 0.5}
        a = sample_real_negatives(pools, dist, 32, np.random.default_rng(3))
        b = sample_real_negatives(pools, dist, 32, np.random.default_rng(3))
        assert a.keys() == b.keys()
        for c in a:
            np.testing.assert_array_equal(a[c].mu, b[c].mu)


class TestVirtualNegatives:
    """Tests for generate_vn."""

    def setup_method(self):
        self.gdp = GlobalPrototype(
            2, np.array([1.0, -2.0, 0.5]), np.array([0.5, 0.2, 1.5]), 3
        )

    def test_zero_radius(self):
        """Test beta 0 collapses every negative onto the prototype mean."""
        vns = generate_vn(self.gdp, 0.0, 5, np.random.default_rng(0))
        assert len(vns) == 5
        for vn in vns:
            assert vn.class_id == 2
            np.testing.assert_array_equal(vn.value, self.gdp.mu_hat)
            np.testing.assert_array_equal(vn.sigma2, np.zeros(3))

    def test_zero_count(self):
        """Test count 0 gives no negatives."""
        assert generate_vn(self.gdp, 1.0, 0, np.random.default_rng(0)) == []

    def test_uninitialized_prototype(self):
        """Test drawing from an empty prototype is refused."""
        empty = GlobalPrototype.uninitialized(0, 3)
        with pytest.raises(ContractViolation):
            generate_vn(empty, 1.0, 1, np.random.default_rng(0))

    @pytest.mark.parametrize("beta", [0.5, 1.0])
    def test_sample_statistics(self, beta):
        """Test the sample mean and spread match mu_hat and beta * sigma2_hat."""
        n = 100_000
        values = generate_vn_array(self.gdp, beta, n, np.random.default_rng(11))
        expected_std = beta * self.gdp.sigma2_hat
        mean_se = expected_std / np.sqrt(n)
        std_se = expected_std / np.sqrt(2.0 * n)
        assert np.all(np.abs(values.mean(axis=0) - self.gdp.mu_hat) < 3 * mean_se)
        assert np.all(np.abs(values.std(axis=0, ddof=1) - expected_std) < 3 * std_se)

    def test_stddev_scale(self):
        """Test the stddev scale uses the square root of the variance."""
        values = generate_vn_array(
            self.gdp, 1.0, 50_000, np.random.default_rng(12), VNScale.STDDEV
        )
        expected = np.sqrt(self.gdp.sigma2_hat)
        np.testing.assert_allclose(values.std(axis=0), expected, rtol=0.03)

    def test_reproducible(self):
        """Test the same seed draws the same negatives."""
        a = generate_vn_array(self.gdp, 1.0, 8, np.random.default_rng(4))
        b = generate_vn_array(self.gdp, 1.0, 8, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)


class TestMemoryBank:
    """Tests for the memory-bank baseline."""

    def test_fifo_eviction(self):
        """Test the oldest entries of a class leave first once its queue is full."""
        bank = memory_bank_baseline(3, 1)
        for value in (1.0, 2.0, 3.0, 4.0, 5.0):
            bank.enqueue(_pool(1, value, dim=1), np.array([0]))
        assert bank.count(0) == 3
        assert bank.stored(0).mu[:, 0].tolist() == [3.0, 4.0, 5.0]

    def test_oversized_batch_keeps_newest(self):
        """Test a batch larger than the capacity keeps only its last rows."""
        bank = MemoryBank(2, 1)
        batch = ReprBatch(np.arange(5.0)[:, None], np.ones((5, 1)))
        bank.enqueue(batch, np.zeros(5))
        assert bank.stored(0).mu[:, 0].tolist() == [3.0, 4.0]

    def test_classes_do_not_evict_each_other(self):
        """Test a burst of one class leaves the other class untouched."""
        bank = MemoryBank(4, 2)
        bank.enqueue(_pool(2, 1.0), np.array([0, 0]))
        bank.enqueue(_pool(4, 2.0), np.array([1, 1, 1, 1]))
        assert len(bank) == 6
        assert bank.count(0) == 2
        out = bank.sample(0, 2, np.random.default_rng(0))
        assert len(out) == 2
        assert np.all(out.mu == 1.0)

    def test_sample_from_class(self):
        """Test sampling only returns entries of the requested class."""
        bank = MemoryBank(10, 2)
        bank.enqueue(_pool(3, 1.0), np.array([0, 0, 0]))
        bank.enqueue(_pool(3, 5.0), np.array([1, 1, 1]))
        out = bank.sample(1, 4, np.random.default_rng(0))
        assert len(out) == 4
        assert np.all(out.mu == 5.0)

    def test_empty_sample(self):
        """Test sampling an empty bank returns an empty batch."""
        bank = MemoryBank(10, 2)
        assert len(bank.sample(0, 4, np.random.default_rng(0))) == 0

    def test_nbytes_grows_until_full(self):
        """Test stored bytes grow with the queue and stop at capacity."""
        bank = MemoryBank(4, 2)
        assert bank.nbytes == 0
        bank.enqueue(_pool(2, 0.0), np.zeros(2))
        assert bank.nbytes == MemoryBank.capacity_bytes(2, 2)
        bank.enqueue(_pool(6, 0.0), np.zeros(6))
        assert bank.nbytes == MemoryBank.capacity_bytes(4, 2)
        bank.enqueue(_pool(6, 1.0), np.ones(6))
        assert bank.nbytes == MemoryBank.capacity_bytes(4, 2, 2)

    def test_capacity_bytes_at_scale(self):
        """Test a 65536-slot bank at D=256 holds about 0.27 GB."""
        size = MemoryBank.capacity_bytes(65536, 256)
        assert size == 65536 * 2 * 256 * 8
        assert size / 1e9 == pytest.approx(0.27, abs=0.005)

    def test_invalid_capacity(self):
        """Test a non-positive capacity is refused."""
        with pytest.raises(ContractViolation):
            MemoryBank(0, 2)
