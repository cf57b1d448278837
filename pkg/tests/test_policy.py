import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calband.domain import ContentDistribution, InvalidRecord, UserContext
from calband.policy import (
    ActionSet,
    BusinessMixPolicy,
    EpsilonGreedyPolicy,
    FixedActionPolicy,
    GaussianLogging,
    ModelNotTrained,
    SteckPolicy,
    UniformLogging,
    UnsupportedCatalog,
    epsilon_greedy,
    gaussian_logging,
    mb_policy,
    mixture_pmf,
    sc_policy,
    truncated_gaussian_pmf,
    uniform_logging,
)

GRID = ActionSet.grid()


def ctx(agg90=(0.0, 0.0), agg7=(0.0, 0.0), hour=8, dow=1):
    return UserContext("u1", 0, "SE", "mobile", hour, dow, {"7d": agg7, "90d": agg90})


class StubModel:
    """Scores actions by closeness to a fixed podcast share."""

    trained = True

    def __init__(self, share=0.3):
        self.share = share
        self.spec = self

    def encode_context(self, c):
        return np.zeros(3)

    def score_actions(self, x):
        return -np.abs(GRID.podcast_shares - self.share)

    def score_actions_batch(self, X):
        return np.tile(self.score_actions(None), (len(X), 1))


def frequencies_match(pmf, draws, n):
    """Every action's empirical count within 3 binomial standard errors."""
    counts = np.bincount(draws, minlength=pmf.size)
    se = np.sqrt(n * pmf * (1 - pmf))
    return np.all(np.abs(counts - n * pmf) <= 3 * np.maximum(se, 1e-9))


class TestActionSet:
    def test_default_grid(self):
        assert len(GRID) == 11
        assert GRID[0] == ContentDistribution([1.0, 0.0])
        np.testing.assert_allclose(GRID.podcast_shares, np.linspace(0, 1, 11), atol=1e-12)

    def test_distinct(self):
        a = ContentDistribution([0.5, 0.5])
        with pytest.raises(InvalidRecord):
            ActionSet((a, a))

    def test_nearest_tie_goes_low(self):
        assert GRID[GRID.nearest([0.65, 0.35])] == GRID[3]
        assert GRID.nearest([0.65, 0.35]) == 3


class TestUniform:
    def test_propensity(self):
        d = uniform_logging(None, GRID, 0)
        assert d.propensity == 1 / 11

    def test_singleton(self):
        single = ActionSet((ContentDistribution([0.5, 0.5]),))
        d = uniform_logging(None, single, 7)
        assert (d.action_index, d.propensity) == (0, 1.0)

    def test_frequencies(self):
        rng = np.random.default_rng(0)
        pol = UniformLogging(GRID)
        draws = np.array([pol.decide(None, rng).action_index for _ in range(110_000)])
        assert frequencies_match(pol.pmf(), draws, 110_000)


class TestGaussian:
    def test_symmetric(self):
        p = truncated_gaussian_pmf(0.5, GRID.podcast_shares, 0.15)
        assert p[4] == pytest.approx(p[6], abs=1e-15)

    def test_flat_limit(self):
        p = truncated_gaussian_pmf(0.5, GRID.podcast_shares, 1e6)
        np.testing.assert_allclose(p, 1 / 11, atol=1e-3)

    def test_mode(self):
        p = truncated_gaussian_pmf(0.2, GRID.podcast_shares, 0.1)
        assert int(np.argmax(p)) == 2

    @given(st.floats(0, 1), st.floats(1e-3, 10))
    def test_sums_to_one(self, center, sigma):
        assert truncated_gaussian_pmf(center, GRID.podcast_shares, sigma).sum() == pytest.approx(1.0, abs=1e-12)

    def test_propensity_is_pmf(self):
        d = gaussian_logging(None, ContentDistribution([0.7, 0.3]), GRID, 0.15, 3)
        p = truncated_gaussian_pmf(0.3, GRID.podcast_shares, 0.15)
        assert d.propensity == p[d.action_index]

    def test_three_types_unsupported(self):
        three = ActionSet((ContentDistribution([1.0, 0.0, 0.0]), ContentDistribution([0.0, 1.0, 0.0])))
        with pytest.raises(UnsupportedCatalog):
            GaussianLogging(three)

    def test_uses_window_aggregate(self):
        pol = GaussianLogging(GRID, 0.1, window="90d")
        np.testing.assert_array_equal(pol.pmf(ctx(agg90=(0.8, 0.2))),
                                      truncated_gaussian_pmf(0.2, GRID.podcast_shares, 0.1))

    @pytest.mark.parametrize("sigma", [0.05, 0.15, 0.3])
    def test_frequencies(self, sigma):
        rng = np.random.default_rng(int(sigma * 100))
        pol = GaussianLogging(GRID, sigma)
        c = ctx(agg90=(0.65, 0.35))
        draws = np.array([pol.decide(c, rng).action_index for _ in range(100_000)])
        assert frequencies_match(pol.pmf(c), draws, 100_000)


class TestEpsilonGreedy:
    def test_pure_exploitation(self):
        d = epsilon_greedy(np.zeros(3), GRID, StubModel(0.3), 0.0, UniformLogging(GRID), 1)
        assert (d.action_index, d.propensity) == (3, 1.0)

    def test_pure_exploration(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = epsilon_greedy(np.zeros(3), GRID, StubModel(0.3), 1.0, UniformLogging(GRID), rng)
            assert d.propensity == pytest.approx(1 / 11, abs=1e-12)

    def test_mixture_arithmetic(self):
        p = mixture_pmf(3, np.full(11, 1 / 11), 0.015)
        assert p[3] == pytest.approx(0.985 + 0.015 / 11, abs=1e-12)
        assert p[3] == pytest.approx(0.986363636, abs=1e-9)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

    def test_ties_go_to_lowest_index(self):
        class Flat(StubModel):
            def score_actions(self, x):
                return np.zeros(11)
        d = epsilon_greedy(np.zeros(3), GRID, Flat(), 0.0, UniformLogging(GRID), 0)
        assert d.action_index == 0

    def test_untrained(self):
        m = StubModel()
        m.trained = False
        with pytest.raises(ModelNotTrained):
            EpsilonGreedyPolicy(GRID, m)

    def test_reproducible(self):
        pol = EpsilonGreedyPolicy(GRID, StubModel(0.6), 0.3, UniformLogging(GRID))
        a = [pol.decide(ctx(), np.random.default_rng(9)) for _ in range(3)]
        assert len(set(a)) == 1

    def test_batch_matches_single(self):
        pol = EpsilonGreedyPolicy(GRID, StubModel(0.6), 0.1)
        cs = [ctx(agg90=(0.9, 0.1)), ctx(agg90=(0.3, 0.7)), ctx()]
        np.testing.assert_allclose(pol.pmf_batch(cs), np.stack([pol.pmf(c) for c in cs]), atol=1e-15)

    @pytest.mark.parametrize("logger", ["uniform", "gaussian"])
    def test_frequencies(self, logger):
        log = UniformLogging(GRID) if logger == "uniform" else GaussianLogging(GRID, 0.15)
        pol = EpsilonGreedyPolicy(GRID, StubModel(0.3), 0.2, log)
        c = ctx(agg90=(0.5, 0.5))
        rng = np.random.default_rng(4)
        decisions = [pol.decide(c, rng) for _ in range(100_000)]
        draws = np.array([d.action_index for d in decisions])
        pmf = pol.pmf(c)
        assert frequencies_match(pmf, draws, 100_000)
        # reported propensity is the pmf entry, greedy overlap included
        for d in decisions[:500]:
            assert d.propensity == pytest.approx(pmf[d.action_index], abs=1e-12)


class TestBaselines:
    def test_sc_exact_hit(self):
        assert sc_policy(ctx(agg90=(0.8, 0.2)), "90d", GRID).action_index == 2

    def test_sc_nearest(self):
        d = sc_policy(ctx(agg90=(0.77, 0.23)), "90d", GRID)
        assert GRID[d.action_index] == GRID[2]
        assert d.propensity == 1.0

    def test_sc_no_history(self):
        assert sc_policy(ctx(), "90d", GRID).action_index == 5

    def test_sc_window(self):
        c = ctx(agg90=(0.8, 0.2), agg7=(0.1, 0.9))
        assert SteckPolicy(GRID, "7d").choose(c) == 9
        assert SteckPolicy(GRID, "90d").choose(c) == 2

    @pytest.mark.parametrize("mix,idx", [((0.7, 0.3), 3), ((1.0, 0.0), 0), ((0.65, 0.35), 3)])
    def test_mb(self, mix, idx):
        d = mb_policy(GRID, ContentDistribution(mix))
        assert (d.action_index, d.propensity) == (idx, 1.0)

    def test_mb_mode(self):
        with pytest.raises(InvalidRecord):
            BusinessMixPolicy(GRID, [0.7, 0.3], mode="random")

    def test_fixed(self):
        pol = FixedActionPolicy(GRID, 4)
        assert pol.decide(ctx()).action_index == 4
        np.testing.assert_array_equal(pol.pmf(ctx()), np.eye(11)[4])
