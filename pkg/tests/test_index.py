"""Tests for the exact index machinery: stationary laws, closed form, DP oracles.

The interesting frozen values below are all re-derivable by hand on the
(lam=1, nu=1, s_max=2) instance:

* threshold-0 chain: cut-balance weights [1, 2, 3/2] -> probs [2/9, 4/9, 3/9],
  mean 10/9; threshold-1 chain: recurrent on {1, 2} with probs [0, 2/5, 3/5],
  mean 8/5; threshold-2 chain: absorbed at the cap, point mass.
* closed form at state 1: (8/5 - 10/9) / (2/5 - 2/9) = (22/45)/(8/45) = 11/4.
* closed form at the cap: (2 - 8/5) / (1 - 2/5) = 2/3 = nu*s_max/(lam+nu*s_max),
  which is < 11/4 — deep tables legitimately fail the monotonicity certificate.
* the average-cost greedy's flip points: state 2 turns passive at w = 8/7
  (where the "camp at the absorbing cap" line 2 - w crosses the
  "serve everywhere" line 10/9 - 2w/9), and state 1 at w = 3/2 (inside the
  absorbed regime the bias is V = [0, 2, 6-2w] and serving at 1 stays
  worthwhile until w = V(2)/2). Neither equals the adjacent-crossing value
  11/4, because the optimal threshold jumps 0 -> 2 on this instance: the
  closed form and the greedy flip only coincide where adjacent thresholds
  are both optimal, which the envelope certificate below makes precise.
"""

import numpy as np
import pytest

import oracles
from whittle_cache import (
    BracketNotFound,
    DegenerateDenominator,
    MaxIterationsExceeded,
    PerContentParams,
    discounted_value_iteration,
    indifference_index_oracle,
    passive_set,
    relative_value_iteration,
    stationary_distribution,
    threshold_of_policy,
    threshold_policy,
    whittle_index_closed_form,
    whittle_table,
)

ANCHOR = PerContentParams(lam=1.0, nu=1.0, s_max=2)


def random_suite(seed, n, **kwargs):
    rng = np.random.default_rng(seed)
    return [oracles.random_params(rng, **kwargs) for _ in range(n)]


class TestThresholdPolicy:
    def test_kernel_is_passive_up_to_threshold(self):
        np.testing.assert_array_equal(threshold_policy(ANCHOR, 0), [0, 1, 1])
        np.testing.assert_array_equal(threshold_policy(ANCHOR, 2), [0, 0, 0])
        np.testing.assert_array_equal(threshold_policy(ANCHOR, -1), [1, 1, 1])

    def test_range_checked(self):
        with pytest.raises(ValueError):
            threshold_policy(ANCHOR, 3)


class TestThresholdOfPolicy:
    def test_counts_leading_passive_states(self):
        assert threshold_of_policy([0, 0, 1, 1]) == 2
        assert threshold_of_policy([1, 1, 1]) == 0
        assert threshold_of_policy([0, 0, 0]) == 3  # all passive -> length

    def test_band_patterns_are_rejected(self):
        assert threshold_of_policy([0, 1, 0]) is None
        assert threshold_of_policy([1, 0, 1]) is None

    def test_input_validation(self):
        with pytest.raises(ValueError):
            threshold_of_policy([0, 2, 1])


class TestStationaryDistribution:
    def test_anchor_threshold0(self):
        d = stationary_distribution(ANCHOR, 0)
        np.testing.assert_allclose(d.probs, [2 / 9, 4 / 9, 3 / 9], atol=1e-12)
        assert d.mean_queue_length == pytest.approx(10 / 9)
        assert d.passive_mass() == pytest.approx(2 / 9)

    def test_anchor_threshold1_drops_transient_state(self):
        d = stationary_distribution(ANCHOR, 1)
        np.testing.assert_allclose(d.probs, [0.0, 2 / 5, 3 / 5], atol=1e-12)

    def test_cap_threshold_is_absorbed(self):
        d = stationary_distribution(ANCHOR, 2)
        np.testing.assert_allclose(d.probs, [0.0, 0.0, 1.0])
        assert d.passive_mass() == 1.0

    def test_always_active_equals_threshold0(self):
        """Serving an empty queue is a no-op, so the two chains coincide."""
        a = stationary_distribution(ANCHOR, -1)
        b = stationary_distribution(ANCHOR, 0)
        np.testing.assert_array_equal(a.probs, b.probs)
        assert a.passive_mass() == 0.0

    @pytest.mark.parametrize("params", random_suite(seed=101, n=25))
    def test_matches_balance_equation_solve(self, params):
        """Closed form == pi P = pi linear solve, every threshold, 1e-9."""
        for R in range(-1, params.s_max + 1):
            pi = oracles.stationary_solve(
                oracles.embedded_matrix(
                    params.lam, params.nu, params.s_max,
                    oracles.threshold_vector(params.s_max, R),
                )
            )
            d = stationary_distribution(params, R)
            np.testing.assert_allclose(d.probs, pi, atol=1e-9)
            assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_range_checked(self):
        with pytest.raises(ValueError):
            stationary_distribution(ANCHOR, -2)


class TestClosedForm:
    def test_anchor_values(self):
        assert whittle_index_closed_form(ANCHOR, 0) == pytest.approx(0.0, abs=1e-12)
        assert whittle_index_closed_form(ANCHOR, 1) == pytest.approx(2.75)
        assert whittle_index_closed_form(ANCHOR, 2) == pytest.approx(2 / 3)

    @pytest.mark.parametrize("params", random_suite(seed=202, n=20))
    def test_state_zero_index_vanishes(self, params):
        """Both actions are identical at an empty queue, so its index is 0."""
        try:
            assert whittle_index_closed_form(params, 0) == pytest.approx(0.0, abs=1e-9)
        except DegenerateDenominator:
            pass  # overloaded corners: the empty state carries ~0 mass

    @pytest.mark.parametrize("params", random_suite(seed=303, n=20))
    def test_cap_index_collapses(self, params):
        """Truncation pins the top entry at nu*s_max/(lam+nu*s_max) < 1.

        The cap comparison is between the absorbed point-mass chain and the
        two-state chain hovering below it, and the rate ratio is all that
        survives. This is why deep tables are never certified indexable.
        """
        s, lam, nu = params.s_max, params.lam, params.nu
        try:
            got = whittle_index_closed_form(params, s)
        except DegenerateDenominator:
            return
        assert got == pytest.approx(nu * s / (lam + nu * s), rel=1e-9)
        assert got < 1.0

    def test_degenerate_denominator_reported(self):
        """Overloaded instances push all mass to the cap; the passive-mass
        difference underflows and the closed form must refuse to divide."""
        p = PerContentParams(lam=20.0, nu=0.1, s_max=50)
        with pytest.raises(DegenerateDenominator) as err:
            whittle_index_closed_form(p, 0)
        assert err.value.threshold == 0
        assert abs(err.value.denominator) < 1e-12

    def test_table_matches_scalar_calls_and_flags_anchor(self):
        t = whittle_table(ANCHOR)
        np.testing.assert_allclose(t.indices, [0.0, 2.75, 2 / 3], atol=1e-12)
        assert t.indexable is False  # 2/3 < 2.75: cap collapse

    def test_single_state_pair_table_is_indexable(self):
        p = PerContentParams(lam=3.0, nu=5.0, s_max=1)
        t = whittle_table(p)
        np.testing.assert_allclose(t.indices, [0.0, 5 / 8], atol=1e-12)
        assert t.indexable is True


class TestDiscountedDP:
    def test_empty_state_prefers_passive_by_exactly_the_subsidy(self):
        """At s=0 the two actions share dynamics; their Q-gap is w itself."""
        for w in (0.0, 0.7, 3.0):
            vf = discounted_value_iteration(ANCHOR, w, tol=1e-12)
            assert vf.q[0, 1] - vf.q[0, 0] == pytest.approx(w, abs=1e-9)
            assert vf.greedy_policy()[0] == 0

    def test_bellman_residual_certificate(self):
        vf = discounted_value_iteration(ANCHOR, 1.0, tol=1e-12)
        states = np.arange(3)
        for s in states:
            for a in (0, 1):
                up = [1.0, 0.5 if a else 1.0, 0.0][s]
                down = [0.0, 0.5 if a else 0.0, 2 / 3 if a else 0.0][s]
                nxt = (
                    up * vf.j[min(s + 1, 2)]
                    + down * vf.j[max(s - 1, 0)]
                    + (1 - up - down) * vf.j[s]
                )
                q = s - 1.0 * (1 - a) + ANCHOR.alpha * nxt
                assert q == pytest.approx(vf.q[s, a], abs=1e-9)
        np.testing.assert_allclose(vf.j, vf.q.min(axis=1), atol=1e-12)

    def test_solution_independent_of_tolerance(self):
        """Fixed-point uniqueness: tighter tolerance must not move the value."""
        a = discounted_value_iteration(ANCHOR, 2.0, tol=1e-6)
        b = discounted_value_iteration(ANCHOR, 2.0, tol=1e-12)
        np.testing.assert_allclose(a.j, b.j, atol=2e-6 / (1 - ANCHOR.alpha))

    @pytest.mark.parametrize("alpha", [0.98, 0.999])
    def test_greedy_is_threshold_while_caching_at_cap_pays(self, alpha):
        """Below the cap's give-up subsidy the greedy is always a threshold.

        Above it the truncated model genuinely departs from threshold
        structure (see test_band_policy_above_giveup), so the sweep stays in
        the faithful regime.
        """
        for params in random_suite(seed=404, n=6, s_max_low=2, s_max_high=30, alpha=alpha):
            top = 0.9 * oracles.discounted_giveup(params)
            for w in np.linspace(0.0, top, 12):
                g = discounted_value_iteration(params, float(w), tol=1e-10).greedy_policy()
                assert threshold_of_policy(g) is not None

    def test_band_policy_above_giveup(self):
        """Past the give-up subsidy the cap absorbs (dropped arrivals cost
        nothing extra), so the greedy camps there while still serving the
        interior: a non-threshold band. This is a real property of the
        truncated chain, pinned here so nobody "fixes" it into silence."""
        vf = discounted_value_iteration(ANCHOR, 1.3, tol=1e-12)
        np.testing.assert_array_equal(vf.greedy_policy(), [0, 1, 0])
        assert threshold_of_policy(vf.greedy_policy()) is None

    def test_matches_average_cost_greedy_away_from_ties(self):
        """Vanishing-discount surrogate: >= 95% per-state agreement."""
        for params in random_suite(seed=505, n=5, s_max_low=2, s_max_high=25):
            top = 0.9 * oracles.discounted_giveup(params)
            for w in np.linspace(0.0, top, 5):
                rv = relative_value_iteration(params, float(w)).greedy_policy()
                for alpha in (0.98, 0.99, 0.999):
                    pa = PerContentParams(params.lam, params.nu, params.s_max, alpha)
                    dg = discounted_value_iteration(pa, float(w), tol=1e-10).greedy_policy()
                    assert np.mean(dg == rv) >= 0.95

    def test_iteration_cap_enforced(self):
        with pytest.raises(MaxIterationsExceeded):
            discounted_value_iteration(ANCHOR, 1.0, tol=1e-12, max_iter=1)


class TestRelativeDP:
    def test_anchor_gain_and_bias_at_zero_subsidy(self):
        """At w=0 serving everywhere is optimal: gain = mean queue = 10/9."""
        vf = relative_value_iteration(ANCHOR, 0.0)
        assert vf.gain == pytest.approx(10 / 9, abs=1e-8)
        assert vf.j[0] == 0.0
        np.testing.assert_array_equal(vf.greedy_policy(), [0, 1, 1])

    def test_gain_equals_policy_average_cost(self):
        """Extracted-threshold cross-check via the balance-equation solve."""
        for params in random_suite(seed=606, n=8, s_max_low=2, s_max_high=20):
            w = 0.4 * oracles.discounted_giveup(params)
            vf = relative_value_iteration(params, w, tol=1e-10)
            policy = vf.greedy_policy()
            assert threshold_of_policy(policy) is not None
            p = oracles.embedded_matrix(params.lam, params.nu, params.s_max, policy)
            pi = oracles.stationary_solve(p)
            states = np.arange(params.s_max + 1)
            avg = float(pi @ (states - w * (policy == 0)))
            assert vf.gain == pytest.approx(avg, abs=1e-8)

    def test_gain_is_the_lower_envelope_of_threshold_lines(self):
        params = PerContentParams(lam=1.0, nu=1.0, s_max=10)
        lines = oracles.threshold_lines(1.0, 1.0, 10)
        for w in (0.0, 2.0, 5.43656, 9.0, 20.0, 50.0):
            best = min(mean - w * mass for mean, mass in lines.values())
            vf = relative_value_iteration(params, w, tol=1e-10)
            assert vf.gain == pytest.approx(best, abs=1e-7)

    def test_q_encodes_gain_normalized_bellman(self):
        vf = relative_value_iteration(ANCHOR, 0.5, tol=1e-11)
        np.testing.assert_allclose(vf.q.min(axis=1), vf.j, atol=1e-7)

    def test_iteration_cap_enforced(self):
        with pytest.raises(MaxIterationsExceeded):
            relative_value_iteration(ANCHOR, 0.5, tol=1e-12, max_iter=3)


class TestPassiveSet:
    def test_empty_queue_is_always_passive(self):
        assert 0 in passive_set(ANCHOR, 0.0)

    def test_saturates_under_large_subsidy(self):
        assert passive_set(ANCHOR, 1e3) == {0, 1, 2}

    @pytest.mark.parametrize("params", random_suite(seed=707, n=10, s_max_low=2, s_max_high=25))
    def test_nested_under_increasing_subsidy(self, params):
        """D(w) only grows — including through the band regime, where it
        grows from both ends at once."""
        try:
            wmax = 1.2 * float(np.max(whittle_table(params).indices))
        except DegenerateDenominator:
            wmax = 2.0 * params.s_max
        prev = set()
        for w in np.linspace(0.0, wmax, 40):
            d = passive_set(params, float(w))
            assert prev.issubset(d)
            prev = d


class TestIndifferenceOracle:
    def test_anchor_flip_points(self):
        assert indifference_index_oracle(ANCHOR, 0) == 0.0
        assert indifference_index_oracle(ANCHOR, 1) == pytest.approx(1.5, abs=1e-5)
        assert indifference_index_oracle(ANCHOR, 2) == pytest.approx(8 / 7, abs=1e-5)

    def test_two_state_instance_agrees_with_closed_form(self):
        """With a single nontrivial state there is no jump to hide in: the
        oracle and the closed form must both give nu/(lam+nu)."""
        p = PerContentParams(lam=3.0, nu=5.0, s_max=1)
        assert indifference_index_oracle(p, 1) == pytest.approx(5 / 8, abs=1e-5)

    def test_agrees_with_closed_form_on_envelope_certified_states(self):
        """Cross-validation of the two index routes, state by state.

        The envelope certificate (built from balance-equation solves only)
        names the states where adjacent thresholds are both optimal at their
        crossing; exactly there the closed form and the DP flip must match.
        Service-dominated instances often certify nothing beyond the empty
        state (their envelope jumps straight from threshold 0 to the cap),
        so the non-vacuity floor is over the whole suite.
        """
        checked = 0
        for params in random_suite(seed=808, n=12, s_max_low=2, s_max_high=18):
            certified = oracles.envelope_certified_crossings(
                params.lam, params.nu, params.s_max
            )
            lines = oracles.threshold_lines(params.lam, params.nu, params.s_max)
            order = np.array(sorted(lines))
            means = np.array([lines[r][0] for r in order])
            masses = np.array([lines[r][1] for r in order])

            def strictly_separated(w, R, want_low_side):
                """True when the optimal lines at w all sit on one side of R:
                below R (state R active) or at/above R (state R passive)."""
                vals = means - w * masses
                best = vals.min()
                margin = 1e-9 * max(1.0, abs(best))
                side = (order < R) if want_low_side else (order >= R)
                return vals[side].min() <= best + margin < vals[~side].min()

            for R, w_R in certified.items():
                if w_R == 0.0:
                    continue
                # demand strict optimality of the two sides just beside the
                # crossing, else the flip belongs to a tie cluster, not to R
                delta = 1e-4 * max(1.0, w_R)
                if not strictly_separated(w_R - delta, R, want_low_side=True):
                    continue
                if not strictly_separated(w_R + delta, R, want_low_side=False):
                    continue
                got = indifference_index_oracle(params, R, tol=1e-7)
                assert got == pytest.approx(w_R, abs=1e-3)
                assert whittle_index_closed_form(params, R) == pytest.approx(
                    w_R, rel=1e-9
                )
                checked += 1
        assert checked >= 8  # plenty of certified states across the suite

    def test_bracket_failure_is_reported(self, monkeypatch):
        import whittle_cache.index as index_mod

        class AlwaysActive:
            q = np.array([[1.0, 0.0]] * 3)

        monkeypatch.setattr(
            index_mod, "relative_value_iteration", lambda *a, **k: AlwaysActive()
        )
        with pytest.raises(BracketNotFound) as err:
            indifference_index_oracle(ANCHOR, 1)
        assert err.value.w_hi == pytest.approx(30.0)

    def test_state_validated(self):
        with pytest.raises(ValueError):
            indifference_index_oracle(ANCHOR, 5)
