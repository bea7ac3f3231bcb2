import math

import numpy as np
import pytest
from scipy.stats import norm

from mhsaem.errors import ValidationError
from mhsaem.families import GaussianFamily, GaussianParams
from mhsaem.model import MixtureParams
from mhsaem.synthgen import GenSpec, generate, max_overlap, pairwise_overlap


def mixture(means, chols, weights):
    D = len(means[0])
    fam = GaussianFamily(D)
    comps = np.stack([fam.pack(GaussianParams(np.asarray(m, float), np.asarray(L, float)))
                      for m, L in zip(means, chols)])
    return MixtureParams.from_weights(np.asarray(weights, float), comps, "gaussian", D)


def two_point_overlap(delta, w1=0.5):
    """Exact 1-D overlap of N(0,1) and N(2*delta,1) with weights (w1, 1-w1)."""
    cut = delta + math.log(w1 / (1 - w1)) / (2 * delta)
    return norm.cdf(-cut) + norm.cdf(cut - 2 * delta)


class TestPairwiseOverlap:
    def test_one_dimensional_closed_form(self):
        theta = mixture([[0.0], [2.0]], [[[1.0]], [[1.0]]], [0.5, 0.5])
        est, se = pairwise_overlap(theta, 1, 2, 200_000, np.random.default_rng(0))
        assert two_point_overlap(1.0) == pytest.approx(2 * norm.cdf(-1.0))
        assert two_point_overlap(1.0) == pytest.approx(0.3173, abs=1e-4)
        assert abs(est - two_point_overlap(1.0)) < 3 * se

    @pytest.mark.parametrize("delta,w1", [(0.5, 0.7), (1.5, 0.2), (0.8, 0.5)])
    def test_unequal_weights_closed_form(self, delta, w1):
        theta = mixture([[0.0], [2 * delta]], [[[1.0]], [[1.0]]], [w1, 1 - w1])
        est, se = pairwise_overlap(theta, 1, 2, 200_000, np.random.default_rng(1))
        assert abs(est - two_point_overlap(delta, w1)) < 3 * se

    def test_nearly_identical_components(self):
        theta = mixture([[0.0, 0.0], [1e-6, 0.0]], [np.eye(2)] * 2, [0.5, 0.5])
        est, _ = pairwise_overlap(theta, 1, 2, 50_000, np.random.default_rng(2))
        assert est == pytest.approx(1.0, abs=0.02)

    def test_symmetric(self, rng):
        theta = mixture([[0.0, 0.0], [1.5, 0.5]], [np.eye(2), [[1.2, 0], [0.3, 0.7]]], [0.4, 0.6])
        a, sa = pairwise_overlap(theta, 1, 2, 100_000, np.random.default_rng(3))
        b, sb = pairwise_overlap(theta, 2, 1, 100_000, np.random.default_rng(4))
        assert abs(a - b) < 3 * math.hypot(sa, sb)

    def test_monotone_in_covariance_scale(self):
        means = [[0.0, 0.0], [2.0, 1.0], [-1.0, 2.5]]
        L = [np.eye(2), [[0.8, 0], [0.2, 1.1]], [[1.3, 0], [-0.4, 0.6]]]
        w = [0.3, 0.3, 0.4]
        small = mixture(means, L, w)
        big = mixture(means, [math.sqrt(2) * np.asarray(l) for l in L], w)
        for k, l in ((1, 2), (1, 3), (2, 3)):
            a, sa = pairwise_overlap(small, k, l, 50_000, np.random.default_rng(5))
            b, sb = pairwise_overlap(big, k, l, 50_000, np.random.default_rng(6))
            assert b > a - 3 * math.hypot(sa, sb)
            assert b > a

    def test_rejections(self):
        theta = mixture([[0.0], [0.0]], [[[1.0]], [[1.0]]], [0.5, 0.5])
        with pytest.raises(ValidationError):
            pairwise_overlap(theta, 1, 2, 100, np.random.default_rng(0))
        with pytest.raises(ValidationError):
            pairwise_overlap(theta, 1, 1, 100, np.random.default_rng(0))
        with pytest.raises(IndexError):
            pairwise_overlap(theta, 0, 2, 100, np.random.default_rng(0))
        with pytest.raises(IndexError):
            pairwise_overlap(theta, 1, 3, 100, np.random.default_rng(0))

    def test_max_overlap_picks_closest_pair(self):
        theta = mixture([[0.0], [0.5], [10.0]], [[[1.0]]] * 3, [1 / 3] * 3)
        val, pair = max_overlap(theta, 20_000, np.random.default_rng(0))
        assert pair == (1, 2)
        assert val == pytest.approx(two_point_overlap(0.25), abs=0.02)


class TestGenerate:
    def test_spec_validation(self):
        for bad in ({"omega": 0.0}, {"omega": 1.0}, {"D": 0}, {"mc_samples": 0}, {"tolerance": 0.0}):
            args = {"D": 2, "K": 3, "N": 10, "omega": 0.3, **bad}
            with pytest.raises(ValidationError):
                GenSpec(**args)

    def test_single_component(self):
        theta, X, labels, achieved = generate(GenSpec(3, 1, 50, 0.2, seed=1))
        assert achieved == 0.0 and theta.K == 1
        assert X.shape == (50, 3) and set(labels.tolist()) == {1}

    def test_replica_overlap_reached(self):
        spec = GenSpec(2, 10, 1000, 0.5, seed=0)
        theta, X, labels, achieved = generate(spec)
        assert 0.45 <= achieved <= 0.55
        # independent re-estimate on the emitted parameters, all pairs
        fresh, _ = max_overlap(theta, 20_000, np.random.default_rng(99))
        assert 0.45 <= fresh <= 0.55
        assert X.shape == (1000, 2)
        assert labels.min() >= 1 and labels.max() <= 10

    def test_deterministic(self):
        spec = GenSpec(2, 4, 100, 0.2, seed=5, mc_samples=2000)
        a, b = generate(spec), generate(spec)
        assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
        assert np.array_equal(a[0].components, b[0].components) and a[3] == b[3]

    def test_labels_follow_components(self):
        theta, X, labels, _ = generate(GenSpec(2, 3, 3000, 0.05, seed=2, mc_samples=5000))
        fam = theta.family
        for k in range(3):
            mean = fam.unpack(theta.components[k])[0]
            pts = X[labels == k + 1]
            assert np.abs(pts.mean(axis=0) - mean).max() < 5 * pts.std(axis=0).max() / math.sqrt(len(pts))
        freq = np.bincount(labels - 1, minlength=3) / labels.size
        assert np.abs(freq - theta.weights).max() < 0.03
