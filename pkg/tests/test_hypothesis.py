import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from belieflab import (AbsoluteContinuityError, AssumptionViolation, ConfigError,
                       HypothesisSpace, LikelihoodModel, alpha_lower_bound,
                       build_hellinger_covering, build_kl_covering, check_assumption3,
                       gamma, gamma_all, hellinger_joint, hellinger_single, kl_ball,
                       kl_divergence, max_delta_separated)
from belieflab.hypothesis import (default_hellinger_radii, hellinger_matrix, series_verdict)

import oracles
from conftest import random_model


def model_with_gammas(gammas):
    """Single-agent Bernoulli model whose rows realise the requested KL values."""
    from scipy.optimize import brentq
    rows = [[0.5, 0.5]]
    for g in gammas[1:]:
        q = brentq(lambda q: oracles.kl([0.5, 0.5], [q, 1 - q]) - g, 1e-12, 0.5)
        rows.append([q, 1 - q])
    return LikelihoodModel([rows], 0)


class TestDivergences:
    def test_kl_identical(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_kl_point_mass(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_kl_hand_value(self):
        assert kl_divergence([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.143841, abs=1e-6)

    def test_kl_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityError) as exc:
            kl_divergence([0.5, 0.5], [1.0, 0.0])
        assert exc.value.symbol == 1

    def test_kl_length_mismatch(self):
        with pytest.raises(ConfigError):
            kl_divergence([1.0], [0.5, 0.5])

    def test_hellinger_single_values(self):
        assert hellinger_single([0.3, 0.7], [0.3, 0.7]) == 0.0
        assert hellinger_single([1, 0], [0, 1]) == 1.0
        h = hellinger_single([0.5, 0.5], [0.25, 0.75])
        assert h ** 2 == pytest.approx(1 - (math.sqrt(0.125) + math.sqrt(0.375)), abs=1e-12)
        assert h == pytest.approx(0.184592, abs=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
    def test_kl_nonnegative_and_matches_oracle(self, size, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))
        assert kl_divergence(p, q) >= 0
        assert kl_divergence(p, q) == pytest.approx(max(oracles.kl(p, q), 0), rel=1e-9, abs=1e-12)


class TestJointQuantities:
    def test_joint_self_distance(self, pair_model):
        assert hellinger_joint(pair_model, 3, 3) == 0.0

    def test_joint_single_agent(self):
        m = LikelihoodModel([[[0.5, 0.5], [0.25, 0.75]]], 0)
        assert hellinger_joint(m, 0, 1) == pytest.approx(hellinger_single([0.5, 0.5], [0.25, 0.75]))

    def test_joint_disjoint_two_agents(self):
        m = LikelihoodModel([[[1, 0], [0, 1]], [[1, 0], [0, 1]]], 0)
        assert hellinger_joint(m, 0, 1) == pytest.approx(1 / math.sqrt(2), abs=1e-12)
        assert oracles.joint_hellinger_bruteforce(m.tables, 0, 1) == pytest.approx(1 / math.sqrt(2))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
    def test_joint_matches_bruteforce(self, n, m, seed):
        model = random_model(np.random.default_rng(seed), n, m)
        H = hellinger_matrix(model)
        for a in range(m):
            for b in range(m):
                ref = oracles.joint_hellinger_bruteforce(model.tables, a, b)
                assert abs(H[a, b] - ref) <= 1e-10
                assert abs(hellinger_joint(model, a, b) - ref) <= 1e-10

    def test_gamma_values(self):
        m = LikelihoodModel([[[0.5, 0.5], [0.25, 0.75]]], 0)
        assert gamma(m, 0) == 0.0
        assert gamma(m, 1) == pytest.approx(kl_divergence([0.5, 0.5], [0.25, 0.75]))

    def test_gamma_two_agent_mean(self):
        # per-agent KLs 0.2 and 0.4, realised through the Bernoulli helper
        a = model_with_gammas([0, 0.2]).tables[0]
        b = model_with_gammas([0, 0.4]).tables[0]
        m = LikelihoodModel([a, b], 0)
        assert gamma(m, 1) == pytest.approx(0.3, abs=1e-9)
        np.testing.assert_allclose(gamma_all(m), [0, 0.3], atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 4), st.integers(2, 8), st.integers(0, 2 ** 31 - 1))
    def test_gamma_all_matches_pointwise(self, n, m, seed):
        model = random_model(np.random.default_rng(seed), n, m)
        np.testing.assert_allclose(gamma_all(model), [gamma(model, t) for t in range(m)],
                                   atol=1e-12)

    def test_gamma_absolute_continuity(self):
        m = LikelihoodModel([[[0.5, 0.5], [1.0, 0.0]]], 0)
        with pytest.raises(AbsoluteContinuityError):
            gamma_all(m)


class TestBalls:
    def test_zero_radius(self):
        m = model_with_gammas([0, 0.1, 0.5])
        np.testing.assert_array_equal(kl_ball(m, 0.0), [0])

    def test_infinite_radius(self):
        m = model_with_gammas([0, 0.1, 0.5])
        np.testing.assert_array_equal(kl_ball(m, math.inf), [0, 1, 2])

    def test_threshold(self):
        m = model_with_gammas([0, 0.1, 0.5])
        np.testing.assert_array_equal(kl_ball(m, 0.2), [0, 1])

    def test_negative_radius(self):
        with pytest.raises(ConfigError):
            kl_ball(model_with_gammas([0, 0.1]), -1.0)


class TestKLCovering:
    def test_all_inside(self):
        cov = build_kl_covering(model_with_gammas([0, 0.05]), [0.1, 0.5])
        assert cov.cardinalities == [0]
        assert len(cov.overflow) == 0

    def test_hand_example(self):
        cov = build_kl_covering(model_with_gammas([0, 0.3, 0.7]), [0.1, 0.5, 1.0])
        assert [b.tolist() for b in cov.bands] == [[1], [2]]
        assert cov.cardinalities == [1, 1]

    def test_overflow(self):
        cov = build_kl_covering(model_with_gammas([0, 0.3, 0.7]), [0.1, 0.5])
        assert cov.overflow.tolist() == [2]
        assert cov.band_lower_radii() == [(0.1, 1), (0.5, 1)]

    def test_rejects_non_increasing(self):
        with pytest.raises(ConfigError):
            build_kl_covering(model_with_gammas([0, 0.3]), [0.5, 0.5])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 3), st.integers(2, 20), st.integers(0, 2 ** 31 - 1),
           st.lists(st.floats(0.01, 2.0), min_size=1, max_size=6, unique=True))
    def test_partition_identity(self, n, m, seed, radii):
        model = random_model(np.random.default_rng(seed), n, m)
        radii = sorted(radii)
        cov = build_kl_covering(model, radii)
        g = gamma_all(model)
        parts = [cov.inner, cov.overflow] + list(cov.bands)
        assert sum(len(p) for p in parts) == m
        assert sorted(np.concatenate(parts).tolist()) == list(range(m))
        for l, band in enumerate(cov.bands):
            assert np.all(g[band] > radii[l]) and np.all(g[band] <= radii[l + 1])


class TestAssumption3:
    def test_empty_tail_converges(self):
        rep = series_verdict([1, 2, 3, 4], [math.log(2), -math.inf, -math.inf, -math.inf])
        assert rep.verdict == "converged"
        assert rep.increments[1:] == [0.0, 0.0, 0.0]

    def test_gaussian_tail_converges(self):
        levels = np.arange(1, 7)
        rep = series_verdict(levels, np.zeros(6))
        np.testing.assert_allclose(rep.increments, np.exp(-levels ** 2.0), rtol=1e-12)
        np.testing.assert_allclose(rep.partial_sums, np.cumsum(np.exp(-levels ** 2.0)))
        assert rep.verdict == "converged"

    def test_growing_counts_diverge(self):
        levels = np.arange(1, 7, dtype=float)
        rep = series_verdict(levels, 2 * levels ** 2)
        np.testing.assert_allclose(rep.increments, np.exp(levels ** 2), rtol=1e-12)
        assert rep.verdict == "diverging"

    def test_from_covering(self):
        m = model_with_gammas([0, 0.3, 0.7, 1.5])
        cov = build_kl_covering(m, [0.1, 0.5, 1.0, 2.0])
        rep = check_assumption3(cov, tail_levels=2)
        assert rep.verdict in {"converged", "inconclusive", "diverging"}
        assert len(rep.partial_sums) == 3


class TestNets:
    def test_single_point(self):
        assert max_delta_separated([4], 0.5, lambda a, b: abs(a - b)) == [4]

    def test_close_pair(self):
        assert max_delta_separated([0.0, 0.1], 0.5, lambda a, b: abs(a - b)) == [0.0]

    def test_greedy_order(self):
        assert max_delta_separated([0.0, 0.5, 1.0], 0.6, lambda a, b: abs(a - b)) == [0.0, 1.0]

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30), st.floats(0.05, 3.0))
    def test_separated_and_maximal(self, pts, delta):
        d = lambda a, b: abs(a - b)
        net = max_delta_separated(pts, delta, d)
        assert net == oracles.greedy_net(pts, delta, d)
        for i, a in enumerate(net):
            for b in net[i + 1:]:
                assert d(a, b) >= delta
        for p in pts:
            assert min(d(p, z) for z in net) < delta or p in net


def small_grid_model(n=2):
    space = HypothesisSpace.grid([(0, 4), (0, 4)], (4, 4))
    pts = space.points
    rng = np.random.default_rng(7)
    anchors = rng.uniform(0, 4, size=(n, 2))
    tables = []
    for a in anchors:
        dist = np.linalg.norm(pts - a, axis=1)
        logits = -np.abs(np.arange(4)[None, :] - dist[:, None])
        t = np.exp(logits)
        tables.append(t / t.sum(axis=1, keepdims=True))
    return LikelihoodModel(tables, 5), space


class TestHellingerCovering:
    def test_default_radii(self):
        np.testing.assert_allclose(default_hellinger_radii(0.25), [1, 0.5, 0.25])
        np.testing.assert_allclose(default_hellinger_radii(0.3), [1, 0.5, 0.25])

    def test_all_inside(self):
        model, space = small_grid_model()
        cov = build_hellinger_covering(model, space, 0.99, radii=[1.0, 0.99])
        assert cov.L_r == 2
        h = hellinger_matrix(model)[model.theta_star]
        if np.all(h <= 0.99):
            assert cov.cardinalities == [0]

    def test_no_bands_when_first_radius_is_target(self):
        model, space = small_grid_model()
        cov = build_hellinger_covering(model, space, 1.0)
        assert cov.L_r == 1 and cov.bands == []
        assert len(cov.inner) == model.num_hypotheses

    def test_cells_partition_bands(self):
        model, space = small_grid_model()
        cov = build_hellinger_covering(model, space, 0.1)
        H = hellinger_matrix(model)
        total = len(cov.inner) + len(cov.overflow) + sum(cov.cardinalities)
        assert total == model.num_hypotheses
        for band, net, cells, delta in zip(cov.bands, cov.nets, cov.cells, cov.deltas):
            assert sorted(np.concatenate(cells).tolist() if cells else []) == band.tolist()
            for z, cell in zip(net, cells):
                assert z in cell
                np.testing.assert_array_equal(H[cell, z], H[np.ix_(cell, net)].min(axis=1))
                assert np.all(H[cell, z] < delta)

    def test_packing_comparison_recorded(self):
        model, space = small_grid_model()
        cov = build_hellinger_covering(model, space, 0.1)
        comp = cov.packing_comparison()
        assert len(comp) == cov.L_r - 1
        for row, net in zip(comp, cov.nets):
            assert row["K"] == len(net)
            assert row["K_ge_delta_pow"] == (len(net) >= row["delta"] ** -2)

    def test_rejects_bad_radii(self):
        model, space = small_grid_model()
        with pytest.raises(ConfigError):
            build_hellinger_covering(model, space, 0.3, radii=[0.9, 0.3])
        with pytest.raises(ConfigError):
            build_hellinger_covering(model, space, 1.5)


class TestAlpha:
    def test_uniform(self):
        m = LikelihoodModel([np.full((3, 4), 0.25)], 0)
        assert alpha_lower_bound(m) == 0.25

    def test_min_entry(self):
        m = LikelihoodModel([[[0.5, 0.45, 0.05], [0.2, 0.3, 0.5]], [[0.9, 0.1], [0.1, 0.9]]], 0)
        assert alpha_lower_bound(m) == 0.05

    def test_zero_relevant_entry(self):
        m = LikelihoodModel([[[0.5, 0.5], [1.0, 0.0]]], 0)
        with pytest.raises(AssumptionViolation) as exc:
            alpha_lower_bound(m)
        assert exc.value.offenders == [(0, 1, 1)]

    def test_irrelevant_zero_ignored(self):
        m = LikelihoodModel([[[1.0, 0.0], [0.6, 0.4]]], 0)
        assert alpha_lower_bound(m) == 0.6


class TestSpacesAndModels:
    def test_grid_points_are_cell_centres(self):
        s = HypothesisSpace.grid([(0, 9), (0, 9)], (9, 9))
        assert s.size == 81
        np.testing.assert_allclose(s.points[0], [0.5, 0.5])
        np.testing.assert_allclose(s.points[1], [0.5, 1.5])
        assert s.index_of([6.5, 2.5]) == 6 * 9 + 2
        np.testing.assert_allclose(s.weights.sum(), s.volume)

    def test_off_grid_point(self):
        with pytest.raises(ConfigError):
            HypothesisSpace.grid([(0, 1)], (2,)).index_of([0.3])

    def test_space_roundtrip(self):
        for s in (HypothesisSpace.finite(4), HypothesisSpace.countable(10),
                  HypothesisSpace.grid([(0, 1), (0, 2)], (3, 4))):
            assert HypothesisSpace.from_dict(s.to_dict()) == s

    def test_model_roundtrip(self, pair_model):
        back = LikelihoodModel.from_json(pair_model.to_json())
        assert back.theta_star == pair_model.theta_star
        for a, b in zip(back.tables, pair_model.tables):
            np.testing.assert_array_equal(a, b)

    def test_row_sum_rejected(self):
        with pytest.raises(ConfigError, match="row 1 of agent 0"):
            LikelihoodModel([[[0.5, 0.5], [0.5, 0.6]]], 0)

    def test_bad_theta_star(self):
        with pytest.raises(ConfigError):
            LikelihoodModel([[[0.5, 0.5]]], 3)
