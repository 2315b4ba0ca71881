import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from sacbayes.arms import ArmsStats, Envelope, EnvelopeError, arms
from sacbayes.diagnostics import batch_means_se


def run(logf, xl, xr, init, x0, n, seed):
    rng = np.random.default_rng(seed)
    stats = ArmsStats()
    x = x0
    out = np.empty(n)
    for i in range(n):
        x = arms(logf, xl, xr, init, x, rng, stats=stats)
        out[i] = x
    return out, stats


class TestEnvelope:
    @settings(max_examples=40)
    @given(st.lists(st.floats(-4, 4), min_size=3, max_size=12, unique=True),
           st.floats(0.2, 3.0), st.floats(-1.0, 1.0))
    def test_dominates_concave_target(self, xs, scale, shift):
        xs = sorted(xs)
        if min(np.diff(xs)) < 1e-3:
            return
        logf = lambda x: -0.5 * ((x - shift) / scale) ** 2  # noqa: E731
        env = Envelope(xs, [logf(x) for x in xs], -6.0, 6.0)
        grid = np.linspace(-6, 6, 2001)
        assert all(env.value(x) >= logf(x) - 1e-9 for x in grid)

    def test_too_few_points(self):
        with pytest.raises(EnvelopeError):
            Envelope([0.0, 1.0], [0.0, 0.0], -1, 2)

    def test_samples_lie_in_support(self, rng):
        env = Envelope([-1.0, 0.0, 1.0], [-0.5, 0.0, -0.5], -3.0, 3.0)
        xs = [env.sample(rng)[0] for _ in range(2000)]
        assert min(xs) >= -3.0 and max(xs) <= 3.0

    def test_sample_returns_hull_value(self, rng):
        env = Envelope([-1.0, 0.0, 1.0], [-0.5, 0.0, -0.5], -3.0, 3.0)
        for _ in range(50):
            x, w = env.sample(rng)
            assert w == pytest.approx(env.value(x), abs=1e-9)


class TestArms:
    def test_normal_target(self):
        # log-concave: Metropolis stage always accepts
        xs, stats = run(lambda x: -0.5 * (x - 1.0) ** 2, -10, 10, (-2.0, 0.0, 3.0), 0.0, 20_000, 1)
        assert abs(xs.mean() - 1.0) < 3 * batch_means_se(xs)
        assert xs.var() == pytest.approx(1.0, rel=0.05)
        assert stats.mh_accepts == stats.mh_proposals
        assert stats.fallbacks == 0

    def test_gamma_target(self):
        logf = lambda x: 2.0 * math.log(x) - x  # noqa: E731  gamma(3, 1)
        xs, _ = run(logf, 0.0, 50.0, (0.5, 2.0, 6.0), 3.0, 20_000, 2)
        assert abs(xs.mean() - 3.0) < 3 * batch_means_se(xs)

    def test_bimodal_target(self):
        # not log-concave: exactness comes from the Metropolis stage
        def logf(x):
            return float(np.logaddexp(-0.5 * (x + 2) ** 2 + math.log(0.3), -0.5 * (x - 2) ** 2 + math.log(0.7)))

        xs, stats = run(logf, -10, 10, (-4.0, -1.0, 1.0, 4.0), 0.0, 30_000, 3)
        assert abs(xs.mean() - 0.8) < 3 * batch_means_se(xs)
        p_pos = 0.3 * norm.sf(2.0) + 0.7 * norm.cdf(2.0)
        assert abs((xs > 0).mean() - p_pos) < 3 * batch_means_se((xs > 0).astype(float))
        assert stats.mh_proposals == 30_000

    def test_fallback_on_nonfinite_abscissa(self, rng):
        stats = ArmsStats()
        logf = lambda x: -math.inf if x < 0 else -x  # noqa: E731
        x = arms(logf, -1.0, 5.0, (-0.5, 1.0, 2.0), 1.0, rng, stats=stats)
        assert stats.fallbacks == 1
        assert -1.0 < x < 5.0

    def test_deterministic(self):
        a, _ = run(lambda x: -x * x, -5, 5, (-1.0, 0.0, 1.0), 0.0, 100, 11)
        b, _ = run(lambda x: -x * x, -5, 5, (-1.0, 0.0, 1.0), 0.0, 100, 11)
        assert np.array_equal(a, b)

    def test_stats_dict(self):
        _, stats = run(lambda x: -x * x, -5, 5, (-1.0, 0.0, 1.0), 0.0, 10, 0)
        d = stats.as_dict()
        assert d["calls"] == 10 and d["mh_accept_rate"] == 1.0 and d["fallback_accept_rate"] is None
