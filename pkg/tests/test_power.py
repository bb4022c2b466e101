"""
Unit tests for power module.

Tests cover fractional power control and the large-scale SIR.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from access import ServiceMap
from power import aggregate_gains, fractional_power, large_scale_sir


def _full_service(L: int, K: int) -> ServiceMap:
    return ServiceMap.from_assignment(np.ones((L, K), dtype=bool))


class TestFractionalPower:
    """Tests for p_k = eta * p_bar / (sum beta)^theta."""

    def test_theta_zero_is_equal_power(self) -> None:
        """Verify theta = 0 gives every UE p_bar."""
        beta = np.array([[0.5, 0.5], [1.0, 1.0], [0.1, 0.3]])

        policy = fractional_power(beta, _full_service(2, 3), theta=0.0, p_bar=0.1)

        np.testing.assert_allclose(policy.powers, 0.1)

    def test_theta_one_inverts_gains(self) -> None:
        """Verify aggregate gains 1 and 2 give p_bar and p_bar / 2."""
        beta = np.array([[0.5, 0.5], [1.0, 1.0]])

        policy = fractional_power(beta, _full_service(2, 2), theta=1.0, p_bar=0.1)

        np.testing.assert_allclose(policy.powers, [0.1, 0.05])

    def test_only_serving_aps_count(self) -> None:
        """Verify gains of non-serving APs are ignored."""
        beta = np.array([[1.0, 100.0], [1.0, 1.0]])
        service = ServiceMap.from_assignment(np.array([[True, True], [False, True]]))

        np.testing.assert_allclose(aggregate_gains(beta, service), [1.0, 2.0])

    def test_scaling_gains_keeps_powers(self) -> None:
        """Verify scaling every beta by a constant leaves the powers unchanged."""
        beta = np.random.default_rng(1).lognormal(size=(5, 4))
        service = _full_service(4, 5)

        base = fractional_power(beta, service, theta=0.5, p_bar=0.1)
        scaled = fractional_power(beta * 37.0, service, theta=0.5, p_bar=0.1)

        np.testing.assert_allclose(scaled.powers, base.powers)

    def test_weakest_ue_at_full_power(self) -> None:
        """Verify the UE with the weakest aggregate gain transmits at p_bar."""
        beta = np.random.default_rng(2).lognormal(size=(6, 3))

        policy = fractional_power(beta, _full_service(3, 6), theta=0.7, p_bar=0.2)

        weakest = int(np.argmin(beta.sum(axis=1)))
        assert policy.powers[weakest] == pytest.approx(0.2)
        assert np.all(policy.powers <= 0.2 + 1e-15)

    @pytest.mark.parametrize("theta", [-0.1, 1.5])
    def test_rejects_theta_outside_unit_interval(self, theta: float) -> None:
        """Verify theta must lie in [0, 1]."""
        with pytest.raises(ValueError, match="theta"):
            fractional_power(np.ones((1, 1)), _full_service(1, 1), theta=theta, p_bar=0.1)

    def test_rejects_unserved_ue(self) -> None:
        """Verify a UE without serving APs is an error."""
        service = ServiceMap.from_assignment(np.array([[True, False]]))

        with pytest.raises(ValueError, match="without serving APs"):
            fractional_power(np.ones((2, 1)), service, theta=1.0, p_bar=0.1)


class TestLargeScaleSir:
    """Tests for the large-scale SIR."""

    def test_two_ues_one_ap(self) -> None:
        """Verify SIR = p_k beta_k^2 / (p_i beta_k beta_i) for a shared AP."""
        beta = np.array([[1.0], [2.0]])

        sir = large_scale_sir(beta, _full_service(1, 2), np.array([1.0, 1.0]))

        np.testing.assert_allclose(sir, [0.5, 2.0])

    def test_isolated_ue_has_infinite_sir(self) -> None:
        """Verify a UE whose serving APs see no other UE has SIR = inf."""
        beta = np.array([[1.0, 0.0], [0.0, 1.0]])
        service = ServiceMap.from_assignment(np.eye(2, dtype=bool))

        sir = large_scale_sir(beta, service, np.array([1.0, 1.0]))

        assert np.all(np.isinf(sir))
