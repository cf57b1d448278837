import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calband.domain import LoggedTriplet
from calband.ope import (
    MissingGroundTruth,
    OpeConfig,
    PropensityUnderflow,
    TargetProbabilityUnavailable,
    bootstrap_ci,
    importance_ratios,
    ips_estimate,
    ips_from_arrays,
    precision_at_1,
    relative_lift,
)


def logs_from(actions, rewards, prop=1 / 11):
    return [LoggedTriplet(np.zeros(2), a, prop, r, i) for i, (a, r) in enumerate(zip(actions, rewards))]


def onehot_target(actions, n=11):
    return np.eye(n)[actions]


class TestIps:
    def test_hand_example(self):
        logs = logs_from([2, 5, 7], [1, 0, 1])
        # target agrees with logged actions 1 and 3 only
        target = onehot_target([2, 4, 7])
        r = ips_estimate(logs, target, OpeConfig(cap=math.inf, bootstrap_resamples=0))
        assert r.ips_value == pytest.approx(22 / 3, abs=1e-12)
        assert r.ips_value == pytest.approx(7.333333, abs=1e-6)
        r5 = ips_estimate(logs, target, OpeConfig(cap=5, bootstrap_resamples=0))
        assert r5.capped_ips_value == pytest.approx(10 / 3, abs=1e-12)
        assert r5.ips_value == r.ips_value
        assert r5.clipped_fraction == pytest.approx(2 / 3)

    def test_self_evaluation_exact(self):
        rng = np.random.default_rng(0)
        pmf = rng.dirichlet(np.ones(11))
        actions = rng.choice(11, size=5000, p=pmf)
        rewards = (rng.random(5000) < 0.37).astype(int)
        logs = [LoggedTriplet(np.zeros(2), int(a), float(pmf[a]), int(y), i)
                for i, (a, y) in enumerate(zip(actions, rewards))]
        r = ips_estimate(logs, np.tile(pmf, (5000, 1)), OpeConfig(cap=math.inf, bootstrap_resamples=0))
        assert r.ips_value == sum(int(y) for y in rewards) / 5000
        assert r.capped_ips_value == r.ips_value

    def test_all_zero_rewards(self):
        logs = logs_from([0, 1, 2], [0, 0, 0])
        for cap in (1, 10, math.inf):
            r = ips_estimate(logs, onehot_target([0, 1, 2]), OpeConfig(cap=cap, bootstrap_resamples=0))
            assert r.ips_value == 0.0 and r.capped_ips_value == 0.0

    def test_ratio_short_circuit(self):
        np.testing.assert_array_equal(importance_ratios(np.array([0.3, 0.2]), np.array([0.3, 0.4])),
                                      [1.0, 0.5])

    def test_propensity_underflow(self):
        logs = logs_from([0], [1], prop=1e-6)
        with pytest.raises(PropensityUnderflow):
            ips_estimate(logs, onehot_target([0]))

    def test_target_shape(self):
        logs = logs_from([0, 1], [1, 0])
        with pytest.raises(TargetProbabilityUnavailable):
            ips_estimate(logs, np.ones((3, 11)) / 11)
        with pytest.raises(TargetProbabilityUnavailable):
            ips_estimate(logs, None)
        with pytest.raises(TargetProbabilityUnavailable):
            ips_estimate(logs, np.ones((2, 1)))

    def test_target_forms_agree(self):
        logs = logs_from([3, 4, 3, 0], [1, 1, 0, 1])
        pmf = np.full(11, 1 / 11)
        cfg = OpeConfig(bootstrap_resamples=0)
        a = ips_estimate(logs, np.tile(pmf, (4, 1)), cfg).capped_ips_value
        b = ips_estimate(logs, np.full(4, 1 / 11), cfg).capped_ips_value
        c = ips_estimate(logs, lambda t: pmf, cfg).capped_ips_value
        assert a == b == c

    def test_config(self):
        with pytest.raises(ValueError):
            OpeConfig(cap=0.5)
        with pytest.raises(ValueError):
            OpeConfig(min_propensity=0.0)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        k = 50
        mu = rng.uniform(0.01, 1.0, size=k)
        pi = rng.uniform(0.0, 1.0, size=k)
        r = (rng.random(k) < 0.5).astype(float)
        caps = [1.0, 2.0, 5.0, 10.0, 50.0, math.inf]
        vals = [ips_from_arrays(r, mu, pi, OpeConfig(cap=c, bootstrap_resamples=0)) for c in caps]
        capped = [v.capped_ips_value for v in vals]
        assert capped == sorted(capped)
        assert all(v.capped_ips_value <= v.ips_value for v in vals)
        ratio = pi / mu
        for c, v in zip(caps, vals):
            if ratio.max() <= c:
                assert v.capped_ips_value == v.ips_value
            assert 0.0 <= v.clipped_fraction <= 1.0
        perm = rng.permutation(k)
        again = ips_from_arrays(r[perm], mu[perm], pi[perm], OpeConfig(cap=5.0, bootstrap_resamples=0))
        assert again.capped_ips_value == vals[2].capped_ips_value

    def test_bootstrap_contains_mean_and_is_seeded(self):
        v = np.random.default_rng(1).random(500)
        lo, hi = bootstrap_ci(v, 400, seed=3)
        assert lo < v.mean() < hi
        assert (lo, hi) == bootstrap_ci(v, 400, seed=3)

    def test_effective_sample_size(self):
        r = ips_from_arrays(np.ones(4), np.full(4, 0.5), np.full(4, 0.5), OpeConfig(bootstrap_resamples=0))
        assert r.effective_sample_size == pytest.approx(4.0)


class TestPrecision:
    def test_all_hits(self):
        assert precision_at_1([0, 1, 1], [0, 1, 1]).overall == 1.0

    def test_no_engagement(self):
        rep = precision_at_1([0, 1, 1], [-1, -1, -1])
        assert rep.overall == 0.0 and rep.per_content == {"music": 0.0, "podcast": 0.0}

    def test_counting(self):
        rep = precision_at_1([0, 1, 0, 1], [0, 0, 0, 1])
        assert rep.overall == 0.75
        assert rep.per_content == {"music": 1.0, "podcast": 0.5}

    def test_weighted(self):
        rep = precision_at_1([1, 1], [1, 0], weights=np.array([3.0, 1.0]))
        assert rep.per_content["podcast"] == 0.75
        assert math.isnan(rep.per_content["music"])

    def test_missing(self):
        with pytest.raises(MissingGroundTruth):
            precision_at_1([0, 1], [0, None])
        with pytest.raises(MissingGroundTruth):
            precision_at_1([0, 1], [0])

    def test_attached_to_report(self):
        logs = logs_from([2, 5, 7, 2], [1, 0, 1, 1])
        r = ips_estimate(logs, onehot_target([2, 4, 7, 3]), OpeConfig(bootstrap_resamples=0),
                         rank1_content=[1, 0, 0, 1], engaged_content=[1, -1, 1, 1])
        # only requests 1 and 3 carry weight: one podcast hit, one music miss
        assert r.precision.per_content == {"music": 0.0, "podcast": 1.0}
        assert r.precision.overall == 0.5


def test_relative_lift():
    assert relative_lift(1.35, 1.0) == pytest.approx(0.35)
    assert relative_lift(0.8, 0.8) == 0.0
    assert math.isnan(relative_lift(1.0, 0.0))
