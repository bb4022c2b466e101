"""
Scalable fractional uplink power control.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PowerPolicy:
    """Data powers p_k = eta * p_bar / (sum_{l in M_k} beta_kl)^theta."""

    theta: float
    p_bar: float
    powers: np.ndarray  # [K] watts
    eta: float


def aggregate_gains(beta: np.ndarray, service) -> np.ndarray:
    """sum_{l in M_k} beta_kl for every UE."""
    return np.sum(np.asarray(beta, dtype=float) * service.A.T, axis=1)


def fractional_power(beta: np.ndarray, service, theta: float, p_bar: float) -> PowerPolicy:
    """
    Fractional power control over the serving APs of each UE.

    Args:
        beta: [K, L] large-scale gains.
        service: ServiceMap.
        theta: Compression exponent in [0, 1]; 0 gives equal power.
        p_bar: Maximum UE power in watts.

    Returns:
        PowerPolicy; the UE with the weakest aggregate gain transmits at p_bar.

    Raises:
        ValueError: On theta outside [0, 1], non-positive p_bar or a UE without
            serving APs.
    """
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    if p_bar <= 0:
        raise ValueError(f"p_bar must be positive, got {p_bar}")

    aggregate = aggregate_gains(beta, service)
    empty = np.flatnonzero(aggregate <= 0)
    if empty.size:
        raise ValueError(f"UEs without serving APs: {empty.tolist()}")

    compressed = aggregate**theta
    eta = float(np.min(compressed))
    powers = np.minimum(eta / compressed, 1.0) * p_bar
    logger.debug(
        f"Power control theta={theta}: powers in [{powers.min():.3e}, {powers.max():.3e}] W"
    )
    return PowerPolicy(theta=theta, p_bar=p_bar, powers=powers, eta=eta)


def large_scale_sir(beta: np.ndarray, service, powers: np.ndarray) -> np.ndarray:
    """
    SIR_k = p_k (sum_{l in M_k} beta_kl)^2 / sum_{i != k} p_i sum_{l in M_k} beta_kl beta_il.

    Returns +inf for a UE without interferers.
    """
    beta = np.asarray(beta, dtype=float)
    powers = np.asarray(powers, dtype=float)
    served = beta * service.A.T  # [K, L], zero outside M_k
    aggregate = served.sum(axis=1)

    coupling = served @ beta.T  # [k, i] = sum_{l in M_k} beta_kl beta_il
    np.fill_diagonal(coupling, 0.0)
    interference = coupling @ powers

    sir = np.full(len(powers), np.inf)
    interfered = interference > 0
    sir[interfered] = powers[interfered] * aggregate[interfered] ** 2 / interference[interfered]
    return sir
