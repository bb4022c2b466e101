"""
Unit tests for netgen module.

Tests cover AP layouts, wrap-around geometry, the local scattering model and
drop determinism.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from netgen import (
    NetworkConfig,
    generate_network,
    grid_positions,
    load_network,
    local_scattering_R,
    pathloss_db,
    save_network,
    wrap_around_geometry,
)


class TestGeometry:
    """Tests for AP placement and wrap-around distances."""

    def test_grid_positions_are_cell_centers(self) -> None:
        """Verify a 2x2 grid over 100 m puts APs at 25 m and 75 m."""
        positions = grid_positions(4, 100.0)

        expected = np.array([[25.0, 25.0], [25.0, 75.0], [75.0, 25.0], [75.0, 75.0]])
        np.testing.assert_allclose(positions, expected)

    def test_wrap_around_uses_nearest_mirror(self) -> None:
        """Verify (0,0) to (490,490) on a 500 m torus is about 14.14 m."""
        distances, _ = wrap_around_geometry(np.array([[0.0, 0.0]]), np.array([[490.0, 490.0]]), 500.0)

        assert distances[0, 0] == pytest.approx(np.hypot(10.0, 10.0))

    def test_wrap_around_is_symmetric_and_shorter(self) -> None:
        """Verify swapping the roles gives the same distance, never above Euclidean."""
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 500, size=(20, 2))
        b = rng.uniform(0, 500, size=(15, 2))

        forward, _ = wrap_around_geometry(a, b, 500.0)
        backward, _ = wrap_around_geometry(b, a, 500.0)
        euclidean = np.linalg.norm(a[:, None] - b[None], axis=-1)

        np.testing.assert_allclose(forward, backward.T)
        assert np.all(forward <= euclidean + 1e-9)

    def test_grid_requires_square_ap_count(self) -> None:
        """Verify a grid with a non-square L is rejected."""
        with pytest.raises(ValueError, match="perfect square"):
            NetworkConfig(L=10)

    def test_random_deployment_stays_inside_area(self) -> None:
        """Verify uniform_random APs lie in the coverage square."""
        net = generate_network(NetworkConfig(L=10, K=5, N=1, side_length=300.0, deployment="uniform_random"))

        assert np.all((net.ap_positions >= 0) & (net.ap_positions <= 300.0))


class TestLocalScattering:
    """Tests for the spatial correlation model."""

    def test_off_diagonal_magnitude(self) -> None:
        """Verify N=2, theta=0, ASD 15 degrees gives |R_01| = 0.7131 beta."""
        R = local_scattering_R(0.0, np.deg2rad(15.0), beta=2.0, N=2)

        assert abs(R[0, 1]) == pytest.approx(2.0 * 0.7131, rel=1e-3)

    def test_trace_matches_beta(self, small_network) -> None:
        """Verify trace(R)/N equals beta for every UE-AP pair."""
        traces = np.real(np.trace(small_network.R, axis1=-2, axis2=-1)) / small_network.N

        np.testing.assert_allclose(traces, small_network.beta, rtol=1e-10)

    def test_matrices_are_hermitian(self, small_network) -> None:
        """Verify every R equals its conjugate transpose."""
        R = small_network.R
        np.testing.assert_allclose(R, np.conj(np.swapaxes(R, -1, -2)), atol=1e-15)

    def test_uncorrelated_mode(self) -> None:
        """Verify the uncorrelated flag gives beta * I."""
        net = generate_network(NetworkConfig(L=4, K=2, N=3, uncorrelated=True, seed=2))

        expected = net.beta[..., None, None] * np.eye(3)
        np.testing.assert_allclose(net.R, expected)


class TestGenerateNetwork:
    """Tests for drop generation."""

    def test_same_seed_same_drop(self, small_config) -> None:
        """Verify a drop is reproducible from its seed."""
        first = generate_network(small_config)
        second = generate_network(small_config)

        np.testing.assert_array_equal(first.ue_positions, second.ue_positions)
        np.testing.assert_array_equal(first.beta, second.beta)
        np.testing.assert_array_equal(first.R, second.R)

    def test_different_seed_different_drop(self, small_config) -> None:
        """Verify another seed moves the UEs."""
        first = generate_network(small_config)
        other = generate_network(NetworkConfig(L=16, K=8, N=2, side_length=200.0, seed=2))

        assert not np.array_equal(first.ue_positions, other.ue_positions)

    def test_arrays_are_read_only(self, small_network) -> None:
        """Verify a drop cannot be modified in place."""
        with pytest.raises(ValueError):
            small_network.beta[0, 0] = 1.0

    def test_shadowing_spread(self) -> None:
        """Verify the shadowing sample std is within 10% of 4 dB."""
        net = generate_network(NetworkConfig(L=100, K=100, N=1, seed=7))
        cfg = net.config

        shadowing = 10 * np.log10(net.beta) - pathloss_db(net.distances, cfg.pathloss)

        assert np.std(shadowing) == pytest.approx(cfg.pathloss.shadow_std_db, rel=0.1)

    def test_snapshot_round_trip(self, small_network, tmp_path: Path) -> None:
        """Verify a saved drop loads back identical."""
        path = tmp_path / "drop.npz"
        save_network(small_network, str(path))

        loaded = load_network(str(path))

        assert loaded.config == small_network.config
        np.testing.assert_array_equal(loaded.R, small_network.R)
