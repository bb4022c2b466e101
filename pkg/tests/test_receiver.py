"""
Unit tests for receiver module.

Tests cover local combining, the decoding statistics, LSFD / P-LSFD, the
closed forms and the fronthaul counts.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from access import ServiceMap
from channel import compute_estimation_stats, draw_channels, estimate_channels
from netgen import NetworkConfig, generate_network
from pilots import PilotPlan, assign_random
from receiver import (
    DecodingStats,
    DecodingStatsAccumulator,
    closed_form_mr_stats,
    closed_form_normalized_stats,
    closed_form_switching_stats,
    combine_local,
    decode,
    estimate_decoding_stats,
    fronthaul_complexity,
    fronthaul_counts,
    lsfd_weights,
    prelog_factor,
    se_closed_form_mr,
    se_closed_form_switching,
    se_monte_carlo,
    simulate_decoding_stats,
    uatf_sinr,
)


def _mr_setup(net, service, tau_p: int = 4):
    plan = assign_random(net.K, tau_p, seed=5)
    powers = np.full(net.K, 0.1)
    stats = closed_form_mr_stats(net, service, plan, powers, net.noise_power)
    return plan, powers, stats


class TestPrelog:
    """Tests for the prelog factor."""

    def test_reference_value(self) -> None:
        """Verify tau_p = 10, tau_c = 200 gives 0.95."""
        assert prelog_factor(10, 200) == pytest.approx(0.95)

    def test_rejects_pilot_only_block(self) -> None:
        """Verify tau_p must be smaller than tau_c."""
        with pytest.raises(ValueError):
            prelog_factor(200, 200)


class TestFronthaul:
    """Tests for the fronthaul and complexity counts."""

    def test_lsfd_counts(self) -> None:
        """Verify |M_k| = 20, K = 40 gives 321200 scalars and 11460 multiplications."""
        assert fronthaul_counts(20, 40) == (321200, 11460)

    def test_partial_counts_do_not_grow_with_k(self, small_service) -> None:
        """Verify P-LSFD figures depend on |P_k| only."""
        few = fronthaul_complexity(small_service, K=8, tau_p=4, partial=True)
        many = fronthaul_complexity(small_service, K=1000, tau_p=4, partial=True)

        assert few["fronthaul_scalars"].tolist() == many["fronthaul_scalars"].tolist()
        assert np.all(few["interferers"] <= few["interferer_bound"])

    def test_full_counts_grow_with_k(self, small_service) -> None:
        """Verify LSFD fronthaul increases with K."""
        few = fronthaul_complexity(small_service, K=8, tau_p=4, partial=False)
        many = fronthaul_complexity(small_service, K=16, tau_p=4, partial=False)

        assert np.all(many["fronthaul_scalars"] > few["fronthaul_scalars"])


class TestCombining:
    """Tests for local combiners."""

    @pytest.mark.parametrize("kind", ["MR", "MR_normalized", "LP_MMSE"])
    def test_zero_outside_serving_aps(self, kind: str, small_network, small_service) -> None:
        """Verify a_kl = 0 whenever AP l does not serve UE k."""
        net = small_network
        plan = assign_random(net.K, 4, seed=1)
        powers = np.full(net.K, 0.1)
        stats = compute_estimation_stats(net, plan, powers, net.noise_power)
        batch = draw_channels(net, 3, seed=2)
        estimates = estimate_channels(batch, stats, plan, powers, net.noise_power, seed=3)

        combiners = combine_local(kind, batch, estimates, stats, small_service, powers, net.noise_power)

        unserved = ~small_service.A.T
        assert np.all(combiners[:, unserved] == 0)

    @pytest.mark.parametrize("N", [1, 2])
    def test_normalized_mr_unit_gain_per_antenna(self, N: int) -> None:
        """Verify E{a^H h_hat} = N on every serving AP for a = B^{-1} h_hat (1 for N = 1)."""
        net = generate_network(NetworkConfig(L=4, K=3, N=N, side_length=100.0, seed=3))
        service = ServiceMap.from_assignment(np.ones((4, 3), dtype=bool))
        plan = PilotPlan(t=np.array([0, 0, 1]), tau_p=2, scheme="random")
        powers = np.full(3, 0.1)
        noise = net.noise_power
        stats = compute_estimation_stats(net, plan, powers, noise)
        batch = draw_channels(net, 4000, seed=14)
        estimates = estimate_channels(batch, stats, plan, powers, noise, seed=15)

        combiners = combine_local("MR_normalized", batch, estimates, stats, service, powers, noise)

        gain = np.mean(np.sum(np.conj(combiners) * estimates, axis=3), axis=0)
        np.testing.assert_allclose(gain.real, N, rtol=0.06)

    def test_single_user_lp_mmse_is_mr_direction(self) -> None:
        """Verify LP-MMSE for a lone UE with R = beta I is parallel to h_hat."""
        net = generate_network(NetworkConfig(L=4, K=1, N=2, side_length=100.0, uncorrelated=True, seed=4))
        service = ServiceMap.from_assignment(np.ones((4, 1), dtype=bool))
        plan = PilotPlan(t=np.array([0]), tau_p=1, scheme="random")
        powers = np.array([0.1])
        noise = net.noise_power
        stats = compute_estimation_stats(net, plan, powers, noise)
        batch = draw_channels(net, 5, seed=16)
        estimates = estimate_channels(batch, stats, plan, powers, noise, seed=17)

        combiners = combine_local("LP_MMSE", batch, estimates, stats, service, powers, noise)

        inner = np.abs(np.sum(np.conj(combiners) * estimates, axis=3))
        norms = np.linalg.norm(combiners, axis=3) * np.linalg.norm(estimates, axis=3)
        assert np.all(1.0 - inner / norms < 1e-9)

    def test_lp_mmse_beats_mr(self, small_network, small_service) -> None:
        """Verify LP-MMSE gives a higher average SE than MR on the same realizations."""
        plan = assign_random(small_network.K, 4, seed=6)
        powers = np.full(small_network.K, 0.1)
        noise = small_network.noise_power
        se = {}
        for kind in ("MR", "LP_MMSE"):
            stats = simulate_decoding_stats(small_network, small_service, plan, kind, powers, powers, 300, seed=8)
            se[kind] = decode(stats, "LSFD", small_service, powers, noise, 0.95).se

        assert np.mean(se["LP_MMSE"]) > np.mean(se["MR"])

    def test_unknown_combiner(self, small_network, small_service) -> None:
        """Verify an unknown combiner name is rejected."""
        with pytest.raises(ValueError, match="Unknown combiner"):
            combine_local("ZF", None, np.zeros((1, 8, 16, 2)), None, small_service, None, 1.0)


class TestDecodingStats:
    """Tests for the Monte-Carlo accumulation."""

    def test_chunks_merge_to_whole(self, small_service) -> None:
        """Verify merged partial sums equal one accumulation over all trials."""
        rng = np.random.default_rng(4)
        shape = (6, 8, 16, 2)
        combiners = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        whole = DecodingStatsAccumulator(small_service)
        whole.add(combiners, h)
        first = DecodingStatsAccumulator(small_service)
        first.add(combiners[:2], h[:2])
        second = DecodingStatsAccumulator(small_service)
        second.add(combiners[2:], h[2:])
        first.merge(second)

        expected, merged = whole.result(), first.result()
        for k in range(8):
            np.testing.assert_allclose(merged.v[k], expected.v[k])
            np.testing.assert_allclose(merged.lambda1[k], expected.lambda1[k])

    def test_conditional_without_error_is_plain(self, small_service) -> None:
        """Verify conditioning on perfect estimates (C = 0) reproduces the sample sums."""
        rng = np.random.default_rng(5)
        shape = (4, 8, 16, 2)
        combiners = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

        plain = DecodingStatsAccumulator(small_service)
        plain.add(combiners, h)
        conditional = DecodingStatsAccumulator(small_service)
        conditional.add_conditional(combiners, h, np.zeros((8, 16, 2, 2), dtype=complex))

        expected, result = plain.result(), conditional.result()
        for k in range(8):
            np.testing.assert_allclose(result.v[k], expected.v[k])
            np.testing.assert_allclose(result.lambda1[k], expected.lambda1[k])
            np.testing.assert_allclose(result.lambda2[k], expected.lambda2[k])

    def test_conditional_adds_error_power_on_diagonal(self, small_service) -> None:
        """Verify the diagonal of Lambda1 gains a^H C a and the off-diagonal is unchanged."""
        rng = np.random.default_rng(6)
        shape = (3, 8, 16, 2)
        combiners = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        estimates = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        C = np.broadcast_to(0.25 * np.eye(2, dtype=complex), (8, 16, 2, 2))

        plain = DecodingStatsAccumulator(small_service)
        plain.add(combiners, estimates)
        conditional = DecodingStatsAccumulator(small_service)
        conditional.add_conditional(combiners, estimates, C)

        expected, result = plain.result(), conditional.result()
        for k, aps in enumerate(small_service.M):
            power = 0.25 * np.mean(np.sum(np.abs(combiners[:, k][:, aps]) ** 2, axis=2), axis=0)
            gap = result.lambda1[k] - expected.lambda1[k]
            for i in range(8):
                np.testing.assert_allclose(gap[i], np.diag(power), atol=1e-12)

    def test_v_is_zero_outside_serving_aps(self, small_network, small_service) -> None:
        """Verify expand_v leaves non-serving entries at exactly zero."""
        plan = assign_random(small_network.K, 4, seed=6)
        powers = np.full(small_network.K, 0.1)

        stats = simulate_decoding_stats(small_network, small_service, plan, "MR", powers, powers, 10, seed=1)

        for k in range(small_network.K):
            full = stats.expand_v(k, small_network.L)
            assert np.all(full[~small_service.A[:, k]] == 0)

    def test_batch_estimate_matches_accumulator(self, small_network, small_service) -> None:
        """Verify estimate_decoding_stats is one accumulation over the batch."""
        batch = draw_channels(small_network, 6, seed=2)
        rng = np.random.default_rng(3)
        combiners = rng.standard_normal(batch.h.shape) + 1j * rng.standard_normal(batch.h.shape)
        accumulator = DecodingStatsAccumulator(small_service)
        accumulator.add(combiners, batch.h)

        stats = estimate_decoding_stats(combiners, batch, small_service, trials=6)

        expected = accumulator.result()
        for k in range(small_network.K):
            np.testing.assert_allclose(stats.v[k], expected.v[k])
            np.testing.assert_allclose(stats.lambda2[k], expected.lambda2[k])

    def test_batch_trial_count_checked(self, small_network, small_service) -> None:
        """Verify a mismatched trial count is rejected."""
        batch = draw_channels(small_network, 4, seed=2)
        combiners = np.zeros(batch.h.shape, dtype=complex)

        with pytest.raises(ValueError, match="Expected 3 trials"):
            estimate_decoding_stats(combiners, batch, small_service, trials=3)

    def test_single_trial_rejected(self, small_service) -> None:
        """Verify the sample means need at least two trials."""
        accumulator = DecodingStatsAccumulator(small_service)
        accumulator.add(np.zeros((1, 8, 16, 2), dtype=complex), np.zeros((1, 8, 16, 2), dtype=complex))

        with pytest.raises(ValueError, match="at least 2 trials"):
            accumulator.result()


class TestLsfd:
    """Tests for LSFD / P-LSFD weights and the bound."""

    def test_partial_with_all_users_is_full(self, small_network, small_service) -> None:
        """Verify P-LSFD with P_k = all UEs reproduces LSFD exactly."""
        _, powers, stats = _mr_setup(small_network, small_service)
        everyone = [np.arange(small_network.K)] * small_network.K

        full = lsfd_weights(stats, powers, small_network.noise_power)
        partial = lsfd_weights(stats, powers, small_network.noise_power, partial=True, P=everyone)

        for k in range(small_network.K):
            assert np.array_equal(full[k], partial[k])

    def test_lsfd_beats_random_weights(self, small_network, small_service) -> None:
        """Verify no random weight vector exceeds the LSFD SINR."""
        _, powers, stats = _mr_setup(small_network, small_service)
        noise = small_network.noise_power
        optimal = uatf_sinr(stats, lsfd_weights(stats, powers, noise), powers, noise)
        rng = np.random.default_rng(9)

        for _ in range(100):
            weights = [rng.standard_normal(len(m)) + 1j * rng.standard_normal(len(m)) for m in stats.serving]
            assert np.all(uatf_sinr(stats, weights, powers, noise) <= optimal * (1 + 1e-9))

    def test_partial_needs_interferer_sets(self, small_network, small_service) -> None:
        """Verify P-LSFD without P is rejected."""
        _, powers, stats = _mr_setup(small_network, small_service)

        with pytest.raises(ValueError, match="interferer sets"):
            lsfd_weights(stats, powers, 1.0, partial=True)

    def test_scalar_interference_free_se(self) -> None:
        """Verify SE = prelog * log2(1 + |v|^2 / (Lambda1 - |v|^2 + noise * Lambda2 / p))."""
        stats = DecodingStats(
            serving=(np.array([0]),),
            v=(np.array([2.0 + 0j]),),
            lambda1=(np.array([[[5.0 + 0j]]]),),
            lambda2=(np.array([3.0]),),
        )
        service = ServiceMap.from_assignment(np.ones((1, 1), dtype=bool))

        result = decode(stats, "LSFD", service, np.array([1.0]), noise=0.5, prelog=0.95)

        assert result.sinr[0] == pytest.approx(4.0 / 2.5)
        assert result.se[0] == pytest.approx(0.95 * np.log2(2.6))

    def test_se_from_given_weights(self, small_network, small_service) -> None:
        """Verify se_monte_carlo with LSFD weights matches the LSFD decoder."""
        _, powers, stats = _mr_setup(small_network, small_service)
        noise = small_network.noise_power
        weights = lsfd_weights(stats, powers, noise)

        result = se_monte_carlo(stats, weights, powers, noise, prelog=0.95)

        expected = decode(stats, "LSFD", small_service, powers, noise, 0.95)
        np.testing.assert_allclose(result.se, expected.se)
        np.testing.assert_allclose(result.se, 0.95 * np.log2(1.0 + result.sinr))

    def test_unknown_decoder(self, small_network, small_service) -> None:
        """Verify an unknown decoder name is rejected."""
        _, powers, stats = _mr_setup(small_network, small_service)

        with pytest.raises(ValueError, match="Unknown decoder"):
            decode(stats, "MMSE", small_service, powers, 1.0, 0.95)


class TestClosedForms:
    """Tests for the closed-form expectations."""

    def test_mr_uncorrelated_reduces_to_scalars(self, uncorrelated_network) -> None:
        """Verify u_kk = tau_p q N beta^2 / (tau_p sum_{S_k} q beta + noise) for R = beta I."""
        net = uncorrelated_network
        service = ServiceMap.from_assignment(np.ones((net.L, net.K), dtype=bool))
        plan = PilotPlan(t=np.array([0, 0, 1]), tau_p=2, scheme="random")
        q = np.full(net.K, 0.1)
        noise = net.noise_power

        stats = closed_form_mr_stats(net, service, plan, q, noise)

        beta = net.beta
        expected = 2 * 0.1 * net.N * beta[0] ** 2 / (2 * 0.1 * (beta[0] + beta[1]) + noise)
        np.testing.assert_allclose(stats.v[0].real, expected, rtol=1e-9)
        np.testing.assert_allclose(stats.lambda2[0], expected, rtol=1e-9)

    def test_switching_is_average_over_pilot_draws(self) -> None:
        """Verify the switching expectations average the two sharing outcomes with 1/tau_p."""
        net = generate_network(NetworkConfig(L=4, K=2, N=1, side_length=100.0, seed=8))
        service = ServiceMap.from_assignment(np.ones((4, 2), dtype=bool))
        tau_p, q, noise = 3, np.array([0.1, 0.05]), net.noise_power
        shared = closed_form_normalized_stats(
            net, service, PilotPlan(t=np.array([0, 0]), tau_p=tau_p, scheme="random"), q, noise
        )
        apart = closed_form_normalized_stats(
            net, service, PilotPlan(t=np.array([0, 1]), tau_p=tau_p, scheme="random"), q, noise
        )

        switching = closed_form_switching_stats(net, service, tau_p, q, noise)

        for k in range(2):
            for name in ("v", "lambda1", "lambda2"):
                expected = getattr(shared, name)[k] / tau_p + getattr(apart, name)[k] * (1 - 1 / tau_p)
                np.testing.assert_allclose(getattr(switching, name)[k], expected, rtol=1e-9)

    def test_mr_se_decodes_closed_form_stats(self, small_network, small_service) -> None:
        """Verify se_closed_form_mr decodes the MR closed-form expectations."""
        plan, powers, stats = _mr_setup(small_network, small_service)
        noise = small_network.noise_power

        result = se_closed_form_mr(small_network, small_service, plan, powers, noise, decoder="P_LSFD")

        expected = decode(stats, "P_LSFD", small_service, powers, noise, 0.95)
        assert result.method == "closed_form_mr"
        np.testing.assert_allclose(result.se, expected.se)
        assert np.all(np.isfinite(result.se)) and np.all(result.se > 0)

    def test_switching_se_decodes_switching_stats(self, small_network, small_service) -> None:
        """Verify se_closed_form_switching decodes the switching expectations."""
        powers = np.full(small_network.K, 0.1)
        noise = small_network.noise_power
        stats = closed_form_switching_stats(small_network, small_service, 4, powers, noise)

        result = se_closed_form_switching(small_network, small_service, powers, noise, 4, decoder="LSFD")

        expected = decode(stats, "LSFD", small_service, powers, noise, 0.95)
        assert result.method == "closed_form_switching"
        np.testing.assert_allclose(result.se, expected.se)
        assert np.all(np.isfinite(result.se)) and np.all(result.se > 0)

    def test_mr_closed_form_close_to_monte_carlo(self, uncorrelated_network) -> None:
        """Verify the Monte-Carlo coherent gain approaches the closed form."""
        net = uncorrelated_network
        service = ServiceMap.from_assignment(np.ones((net.L, net.K), dtype=bool))
        plan = PilotPlan(t=np.array([0, 0, 1]), tau_p=2, scheme="random")
        q = np.full(net.K, 0.1)

        closed = closed_form_mr_stats(net, service, plan, q, net.noise_power)
        simulated = simulate_decoding_stats(net, service, plan, "MR", q, q, 10_000, seed=12)

        for k in range(net.K):
            error = np.linalg.norm(simulated.v[k] - closed.v[k]) / np.linalg.norm(closed.v[k])
            assert error < 0.05
