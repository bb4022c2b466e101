"""
Shared pytest fixtures for cellfree_access tests.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from access import ServiceMap, initial_access
from netgen import NetworkConfig, generate_network


@pytest.fixture
def small_config() -> NetworkConfig:
    """16 grid APs with 2 antennas and 8 UEs on a 200 m square."""
    return NetworkConfig(L=16, K=8, N=2, side_length=200.0, seed=1)


@pytest.fixture
def small_network(small_config):
    return generate_network(small_config)


@pytest.fixture
def small_service(small_network) -> ServiceMap:
    """Competitive initial access with tau_p = 4."""
    return initial_access(small_network.beta, 4)


@pytest.fixture
def uncorrelated_network():
    """R = beta I, fully served, so closed forms reduce to scalars."""
    return generate_network(NetworkConfig(L=4, K=3, N=2, side_length=100.0, uncorrelated=True, seed=3))


@pytest.fixture
def fig5_instance():
    """
    5 UEs, 9 APs; serving sets (1-based APs): UE1 {1,2,3}, UE2 {3,4},
    UE3 {5,6}, UE4 {6,7}, UE5 {4,5,9}.
    """
    serving = [[0, 1, 2], [2, 3], [4, 5], [5, 6], [3, 4, 8]]
    A = np.zeros((9, 5), dtype=bool)
    for k, aps in enumerate(serving):
        A[aps, k] = True
    beta = np.linspace(1.0, 2.0, 45).reshape(5, 9)
    return beta, ServiceMap.from_assignment(A)
