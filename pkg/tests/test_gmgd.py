import json

import numpy as np
import pytest

from reactgen.gmgd import (GaussianMixtureGraphDistribution, from_flat,
                           from_json, log_density, sample, summarize, to_flat,
                           to_json)
from reactgen.graphs import AttributeGraph
from reactgen.numeric import DomainError, Rng


def latents(count, nodes=3, dims=2, seed=0):
    rng = Rng(seed)
    return [AttributeGraph(rng.normal(0.0, 1.0, (nodes, dims)))
            for _ in range(count)]


class TestSummarize:
    def test_means_copy_node_features_bitwise(self):
        graphs = latents(3, seed=1)
        dist = summarize(graphs, sigma=0.6)
        for m, g in enumerate(graphs):
            np.testing.assert_array_equal(dist.means[:, m, :], g.node_features)
        np.testing.assert_array_equal(dist.sigmas, 0.6)
        np.testing.assert_allclose(dist.weights, 1.0 / 3.0)

    def test_identical_latents_collapse(self):
        g = latents(1, seed=2)[0]
        dist = summarize([g, g, g], sigma=0.4)
        assert np.ptp(dist.means, axis=1).max() == 0.0

    def test_single_component(self):
        dist = summarize(latents(1, seed=3), sigma=0.5)
        assert dist.components == 1

    def test_shape_mismatch_rejected(self):
        a = AttributeGraph(np.zeros((3, 2)))
        b = AttributeGraph(np.zeros((4, 2)))
        with pytest.raises(DomainError):
            summarize([a, b], sigma=0.6)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(DomainError):
            summarize(latents(2), sigma=0.0)


class TestSample:
    def test_zero_sigma_returns_component_mean_exactly(self):
        graphs = latents(2, seed=4)
        dist = summarize(graphs, sigma=0.6)
        degenerate = GaussianMixtureGraphDistribution(
            dist.means, np.zeros_like(dist.sigmas), dist.weights)
        drawn = sample(degenerate, Rng(7))
        for i in range(drawn.nodes):
            assert any(np.array_equal(drawn.node_features[i], dist.means[i, m])
                       for m in range(dist.components))

    def test_paper_sigma_within_five_sigma(self):
        dist = summarize(latents(4, seed=5), sigma=0.6)
        drawn = sample(dist, Rng(11))
        gaps = np.min(np.abs(drawn.node_features[:, None, :] - dist.means),
                      axis=1)
        assert gaps.max() < 5.0 * 0.6

    def test_symmetric_mixture_monte_carlo_mean(self):
        mu = 2.5
        means = np.array([[[-mu], [mu]]])  # one node, two components, one dim
        dist = GaussianMixtureGraphDistribution(
            means, np.full((1, 2), 0.3), np.array([0.5, 0.5]))
        rng = Rng(13)
        draws = np.array([sample(dist, rng).node_features[0, 0]
                          for _ in range(100000)])
        # oracle: Monte Carlo estimate; mixture mean is the midpoint, and the
        # standard error follows from the mixture's variance
        mixture_std = float(np.sqrt(0.3 ** 2 + mu ** 2))
        stderr = mixture_std / np.sqrt(draws.size)
        assert abs(draws.mean() - 0.0) < 3.0 * stderr

    def test_reproducible_under_seed(self):
        dist = summarize(latents(3, seed=6), sigma=0.6)
        np.testing.assert_array_equal(sample(dist, Rng(21)).node_features,
                                      sample(dist, Rng(21)).node_features)

    def test_distinct_seeds_differ(self):
        dist = summarize(latents(3, seed=6), sigma=0.6)
        assert not np.array_equal(sample(dist, Rng(1)).node_features,
                                  sample(dist, Rng(2)).node_features)

    def test_global_mode_uses_one_component(self):
        graphs = latents(2, nodes=4, seed=8)
        dist = summarize(graphs, sigma=1e-12)
        drawn = sample(dist, Rng(5), component_mode="global")
        gaps = np.abs(drawn.node_features[:, None, :] - dist.means).max(axis=2)
        picks = gaps.argmin(axis=1)
        assert len(set(picks.tolist())) == 1

    def test_unknown_mode_rejected(self):
        dist = summarize(latents(2, seed=9), sigma=0.6)
        with pytest.raises(DomainError):
            sample(dist, Rng(0), component_mode="sideways")


class TestFlatPacking:
    def test_round_trip_bitwise(self):
        dist = summarize(latents(3, nodes=4, dims=2, seed=10), sigma=0.6)
        grid = to_flat(dist)
        back = from_flat(grid, dist.components, dist.dims, sigma=0.6)
        np.testing.assert_array_equal(back.means, dist.means)

    def test_single_component_grid_equals_means(self):
        dist = summarize(latents(1, seed=11), sigma=0.5)
        np.testing.assert_array_equal(to_flat(dist), dist.means[:, 0, :])

    def test_layout_is_component_blocks(self):
        dist = summarize(latents(2, nodes=2, dims=3, seed=12), sigma=0.6)
        grid = to_flat(dist)
        np.testing.assert_array_equal(grid[:, :3], dist.means[:, 0, :])
        np.testing.assert_array_equal(grid[:, 3:], dist.means[:, 1, :])

    def test_bad_width_rejected(self):
        with pytest.raises(DomainError):
            from_flat(np.zeros((3, 7)), components=2, dims=3, sigma=0.6)


class TestDensity:
    def test_component_mean_is_local_peak_along_support(self):
        dist = summarize(latents(2, nodes=2, dims=2, seed=13), sigma=0.5)
        center = dist.means[:, 0, :]
        at_mean = log_density(dist, center)
        direction = dist.means[:, 1, :] - dist.means[:, 0, :]
        for step in (0.25, 0.5):
            off = center + step * direction
            assert log_density(dist, off) < at_mean

    def test_degenerate_sigma_rejected(self):
        dist = summarize(latents(2, seed=14), sigma=0.6)
        degenerate = GaussianMixtureGraphDistribution(
            dist.means, np.zeros_like(dist.sigmas), dist.weights)
        with pytest.raises(DomainError):
            log_density(degenerate, dist.means[:, 0, :])


class TestJson:
    def test_round_trip(self):
        dist = summarize(latents(3, nodes=4, dims=2, seed=15), sigma=0.6)
        doc = to_json(dist)
        back = from_json(doc)
        np.testing.assert_array_equal(back.means, dist.means)
        np.testing.assert_array_equal(back.sigmas, dist.sigmas)
        parsed = json.loads(doc)
        assert set(parsed) == {"I", "D", "M", "sigma", "means"}

    def test_malformed_rejected(self):
        with pytest.raises(DomainError):
            from_json("{not json")
        with pytest.raises(DomainError):
            from_json(json.dumps({"I": 2, "D": 2, "M": 1, "sigma": 0.5,
                                  "means": [[[0.0]]]}))


class TestValidation:
    def test_negative_sigma_rejected(self):
        with pytest.raises(DomainError):
            GaussianMixtureGraphDistribution(
                np.zeros((2, 1, 2)), np.full((2, 1), -0.1), np.array([1.0]))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(DomainError):
            GaussianMixtureGraphDistribution(
                np.zeros((2, 2, 2)), np.ones((2, 2)), np.array([0.7, 0.7]))
