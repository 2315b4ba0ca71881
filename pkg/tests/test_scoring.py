import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.interpolate import PchipInterpolator

from sacbayes import scoring
from sacbayes.scoring import (
    FamilyError,
    SymmetricWeight,
    asymmetric_rule,
    build_asymmetric_family,
    build_symmetric_family,
    check_C1,
    check_C2,
    combined_rule,
    expected_score,
    foster_rule,
    foster_score,
    log_rule,
    min_asymmetric_offset,
    multichoice_expected_score,
    multichoice_log_score,
    optimal_report,
    quadratic_rule,
    sabotage_threshold,
    scaled_asymmetric_rule,
)

GRID = np.linspace(0.0, 1.0, 501)[1:-1]


class TestConcreteRules:
    @pytest.mark.parametrize("q, correct, expected", [(1.0, True, 1.0), (0.7, False, -0.7), (0.0, False, 0.0)])
    def test_foster_score(self, q, correct, expected):
        assert foster_score(q, correct) == expected

    def test_foster_score_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            foster_score(1.2, True)

    def test_log_rule_values(self):
        r = log_rule()
        assert r.right(0.5) == 0.0
        assert r.right(1.0) == 1.0
        assert r.wrong(1.0) == -math.inf
        assert r.right(0.0) == -math.inf

    def test_quadratic_values(self):
        r = quadratic_rule()
        assert r.right(1.0) == 1.0
        assert r.wrong(0.0) == 1.0
        assert expected_score(r, 0.5, 0.5) == pytest.approx(0.75, abs=1e-15)

    def test_asymmetric_values(self):
        r = asymmetric_rule()
        assert expected_score(r, 0.6, 0.6) == pytest.approx(0.36, abs=1e-15)
        assert r.wrong(1.0) == -1.0
        assert r.right(0.0) == 0.0
        assert expected_score(r, 0.9, 0.9) == pytest.approx(0.81, abs=1e-15)

    def test_scaled_asymmetric_values(self):
        r = scaled_asymmetric_rule()
        assert r.right(1.0) == 1.0
        assert r.wrong(1.0) == -3.0
        assert r.wrong(0.0) == -1.0

    def test_combined_values(self):
        r = combined_rule()
        assert r.right(0.5) == 1.0
        assert r.wrong(0.0) == 0.0
        assert r.wrong(1.0) == -math.inf

    @pytest.mark.parametrize("name", sorted(scoring.RULES))
    def test_get_rule_round_trip(self, name):
        assert scoring.get_rule(name).name == name

    def test_unknown_rule(self):
        with pytest.raises(KeyError):
            scoring.get_rule("brier")

    @pytest.mark.parametrize("rule", [log_rule(), quadratic_rule()])
    def test_symmetric_rules_mirror(self, rule):
        assert np.allclose(rule.wrong(GRID), rule.right(1.0 - GRID), atol=1e-10, rtol=0)

    def test_asymmetric_truthful_payoff_is_p_squared(self):
        p = np.linspace(0, 1, 1001)
        assert np.allclose(expected_score(asymmetric_rule(), p, p), p**2, atol=1e-12, rtol=0)


class TestExpectedScore:
    def test_log_rule_centre(self):
        assert expected_score(log_rule(), 0.5, 0.5) == 0.0

    def test_foster_example(self):
        assert expected_score(foster_rule(), 0.7, 0.4) == pytest.approx(0.16, abs=1e-15)

    def test_log_rule_matches_binary_entropy_form(self, rng):
        p, q = rng.random(10_000), rng.uniform(1e-6, 1 - 1e-6, 10_000)
        h = expected_score(log_rule(), p, q)
        ref = (p * np.log(q) + (1 - p) * np.log(1 - q) + np.log(2)) / np.log(2)
        assert np.max(np.abs(h - ref)) < 1e-12

    def test_divergent_branch_with_zero_weight_is_ignored(self):
        assert expected_score(log_rule(), 1.0, 1.0) == 1.0
        assert expected_score(log_rule(), 0.0, 0.0) == 1.0

    def test_divergent_branch_with_positive_weight(self):
        assert expected_score(log_rule(), 0.3, 0.0) == -math.inf
        assert expected_score(combined_rule(), 0.3, 1.0) == -math.inf

    def test_foster_is_linear_in_q(self):
        r = foster_rule()
        for p in np.linspace(0, 1, 21):
            h = [expected_score(r, p, q) for q in (0.1, 0.5, 0.9)]
            assert h[1] - h[0] == pytest.approx(h[2] - h[1], abs=1e-14)
            assert (h[2] - h[0]) / 0.8 == pytest.approx(2 * p - 1, abs=1e-12)


class TestOptimalReport:
    def test_foster_extremes(self):
        assert optimal_report(foster_rule(), 0.7) == 1.0
        assert optimal_report(foster_rule(), 0.3) == 0.0

    def test_log_rule_truthful(self):
        assert optimal_report(log_rule(), 0.3) == pytest.approx(0.3, abs=1e-3)

    def test_tie_goes_to_smallest_q(self):
        # at p = 1/2 every report scores zero under Foster's rule
        assert optimal_report(foster_rule(), 0.5) == 0.0

    def test_divergent_endpoints_are_dropped(self):
        q = scoring.report_grid(log_rule(), 11)
        assert q[0] > 0 and q[-1] < 1
        assert scoring.report_grid(quadratic_rule(), 11).size == 11


class TestSymmetricFamily:
    def test_constant_weight_gives_natural_log(self):
        rule = build_symmetric_family(lambda t: np.ones_like(t))
        p = np.linspace(0.01, 0.99, 99)
        assert np.allclose(rule.right(p), np.log(2 * p), atol=1e-9, rtol=0)

    def test_parabola_weight_matches_quadratic_up_to_constant(self):
        rule = build_symmetric_family(lambda t: 2 * t * (1 - t))
        diff = rule.right(GRID) - quadratic_rule().right(GRID)
        assert np.allclose(diff, -0.75, atol=1e-10, rtol=0)
        # f' = 2(1 - q)
        q = np.linspace(0.05, 0.95, 19)
        h = 1e-5
        slope = (rule.right(q + h) - rule.right(q - h)) / (2 * h)
        assert np.allclose(slope, 2 * (1 - q), atol=1e-6)

    def test_anchor_at_half(self):
        rule = build_symmetric_family(lambda t: 1 + np.cos(2 * np.pi * t) ** 2)
        assert rule.right(0.5) == 0.0

    def test_rejects_asymmetric_weight(self):
        with pytest.raises(ValueError, match="symmetric"):
            build_symmetric_family(lambda t: 1 + t)

    def test_rejects_nonpositive_weight(self):
        with pytest.raises(ValueError, match="positive"):
            build_symmetric_family(lambda t: np.cos(2 * np.pi * t))

    def test_mirror_identity(self):
        rule = build_symmetric_family(SymmetricWeight(lambda t: 1 + (t * (1 - t)) ** 2, "quartic"))
        assert np.allclose(rule.wrong(GRID), rule.right(1 - GRID), atol=1e-10, rtol=0)
        assert "quartic" in rule.name

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0.0, 2.0), min_size=1, max_size=4), st.floats(0.1, 3.0))
    def test_random_weights_satisfy_conditions(self, coeffs, c0):
        # m(x) = c0 + sum c_k (x(1-x))^k is positive and symmetric
        def m(t):
            u = t * (1 - t)
            return c0 + sum(c * u ** (k + 1) for k, c in enumerate(coeffs))

        rule = build_symmetric_family(m, quad_points=1025)
        assert check_C1(rule).passed
        assert check_C2(rule, 0.5).passed
        assert not check_C2(rule, 0.0).passed


class TestAsymmetricFamily:
    def test_linear_derivative_recovers_asymmetric_rule(self):
        f_deriv = lambda t: 2 * (1 - t)  # noqa: E731
        offset = min_asymmetric_offset(f_deriv)
        assert offset == pytest.approx(1.0, abs=1e-9)
        rule = build_asymmetric_family(f_deriv, offset=offset + 1e-9)
        ref = asymmetric_rule()
        # both functions shifted by the same constant 1/4
        assert np.allclose(rule.right(GRID) - ref.right(GRID), 0.25, atol=1e-8)
        assert np.allclose(rule.wrong(GRID) - ref.wrong(GRID), 0.25, atol=1e-8)

    def test_reciprocal_derivative(self):
        rule = build_asymmetric_family(lambda t: 1 / t, offset=10.0)
        p = np.linspace(0.05, 0.95, 19)
        assert np.allclose(rule.right(p), 10 + np.log(2 * p), atol=1e-8)
        assert np.allclose(rule.wrong(p), np.log(2 * (1 - p)), atol=1e-8)

    def test_offset_too_small(self):
        with pytest.raises(FamilyError) as exc:
            build_asymmetric_family(lambda t: 2 * (1 - t), offset=0.75)
        assert exc.value.violations.size > 0

    def test_rejects_nonpositive_derivative(self):
        with pytest.raises(ValueError):
            build_asymmetric_family(lambda t: t - 0.5, offset=5.0)

    @settings(max_examples=20, deadline=None)
    @given(st.lists(st.floats(0.05, 3.0), min_size=2, max_size=5))
    def test_random_positive_derivatives(self, knots):
        # PCHIP through positive knots stays positive and is smooth enough for Simpson
        f_deriv = PchipInterpolator(np.linspace(0, 1, len(knots)), knots)
        offset = min_asymmetric_offset(f_deriv) + 0.1
        rule = build_asymmetric_family(f_deriv, offset)
        assert check_C1(rule).passed
        assert check_C2(rule, 0.0).passed


class TestConditionChecks:
    @pytest.mark.parametrize("rule", [log_rule(), quadratic_rule(), asymmetric_rule(),
                                      scaled_asymmetric_rule(), combined_rule()])
    def test_truthful_rules_pass_C1(self, rule):
        assert check_C1(rule).passed

    def test_foster_fails_C1(self):
        rep = check_C1(foster_rule())
        assert not rep.passed
        assert len(rep.failures) > 400
        assert "C1: fail" in rep.summary()

    def test_C2(self):
        assert check_C2(log_rule(), 0.5).passed
        assert not check_C2(log_rule(), 0.0).passed
        assert check_C2(asymmetric_rule(), 0.0).passed

    def test_grid_bounds(self):
        with pytest.raises(ValueError):
            check_C1(log_rule(), grid_size=50)
        with pytest.raises(ValueError):
            check_C2(log_rule(), j_lower=1.0)


class TestWeightSpec:
    def test_polynomial(self):
        rule = scoring.rule_from_spec({"kind": "polynomial", "coefficients": [0, 2, -2]})
        assert np.allclose(rule.right(GRID), quadratic_rule().right(GRID) - 0.75, atol=1e-10)

    def test_cosine_is_symmetric(self):
        m = scoring.weight_function("cosine", [1.0, 0.3, -0.2])
        assert np.allclose(m(GRID), m(1 - GRID), atol=1e-14)

    def test_asymmetric_spec(self):
        rule = scoring.rule_from_spec({"family": "asymmetric", "kind": "constant",
                                       "coefficients": [2.0], "offset": 2.0})
        assert check_C2(rule, 0.0).passed

    @pytest.mark.parametrize("spec", [{"kind": "spline", "coefficients": [1]},
                                      {"kind": "constant", "coefficients": [1, 2]},
                                      {"kind": "constant", "coefficients": []},
                                      {"kind": "constant", "coefficients": [1], "family": "other"}])
    def test_bad_specs(self, spec):
        with pytest.raises(ValueError):
            scoring.rule_from_spec(spec)


class TestMultichoice:
    def test_uniform(self):
        for i in range(4):
            assert multichoice_log_score([0.25] * 4, i) == pytest.approx(math.log(0.25))

    def test_certain(self):
        assert multichoice_log_score([1, 0, 0], 0) == 0.0
        assert multichoice_log_score([1, 0, 0], 1) == -math.inf

    @pytest.mark.parametrize("probs, idx", [([0.5, 0.6], 0), ([-0.1, 1.1], 0), ([0.5, 0.5], 2)])
    def test_malformed(self, probs, idx):
        with pytest.raises((ValueError, IndexError)):
            multichoice_log_score(probs, idx)

    def test_expected_score_maximised_at_truth(self):
        step = 0.05
        lattice = [np.array([i, j, 20 - i - j]) * step
                   for i in range(21) for j in range(21 - i)]
        truth = np.array([0.2, 0.35, 0.45])
        scores = [multichoice_expected_score(truth, q) for q in lattice]
        best = lattice[int(np.argmax(scores))]
        assert np.allclose(best, truth, atol=1e-12)
        assert sum(s == max(scores) for s in scores) == 1


class TestSabotage:
    def test_report(self):
        rep = sabotage_threshold()
        assert rep.sabotage_payoff == 0.0
        assert rep.stated == 0.2
        assert "DISCREPANCY" in rep.summary()
        assert "0.2" in rep.summary()

    def test_threshold_against_closed_form(self):
        # truthful payoff 2p - H2(p) < 0 exactly when p < 1/2
        rep = sabotage_threshold(10001)
        assert rep.threshold == pytest.approx(0.4999, abs=1e-12)
        p = rep.threshold
        h2 = -(p * math.log2(p) + (1 - p) * math.log2(1 - p))
        assert 2 * p - h2 < 0

    def test_truthful_payoff_zero_at_half(self):
        assert expected_score(combined_rule(), 0.5, 0.5) == 0.0


class TestSurface:
    def test_cells_match_expected_score(self):
        s = scoring.expected_score_surface(quadratic_rule(), 11)
        i, j = 3, 7
        assert s.values[i, j] == pytest.approx(expected_score(quadratic_rule(), s.p[i], s.q[j]))

    def test_csv_header_and_clip(self):
        s = scoring.expected_score_surface(log_rule(), 5)
        text = s.to_csv(clip_floor=-3.0)
        lines = text.splitlines()
        assert lines[0] == "p,q,h"
        assert len(lines) == 26
        vals = np.array([float(x.split(",")[2]) for x in lines[1:]])
        assert vals.min() == -3.0
        # storage keeps -inf
        assert np.isneginf(s.values).any()
