#!/usr/bin/env python3
"""
Network geometry, large-scale fading and spatial correlation for one drop.

A drop places L APs (square grid or uniformly at random) and K UEs in a square
coverage area, measures wrap-around distances, draws log-normal shadowing on
top of the pathloss model, and builds the local-scattering correlation
matrices R_kl with tr(R_kl)/N == beta_kl.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Tuple

import numpy as np

from seeding import GEOMETRY, stream_rng

logger = logging.getLogger(__name__)

DEPLOYMENTS = ("grid", "uniform_random")
MIN_DISTANCE_M = 1.0


@dataclass(frozen=True)
class PathlossModel:
    """beta[dB] = intercept_db - slope_db * log10(d / 1 m) + shadowing."""

    intercept_db: float = -30.5
    slope_db: float = 36.7
    shadow_std_db: float = 4.0


@dataclass(frozen=True)
class NetworkConfig:
    """
    Parameters of one network drop.

    Attributes:
        L: Number of APs.
        K: Number of UEs.
        N: Antennas per AP.
        side_length: Side of the square coverage area in meters.
        deployment: "grid" (requires L to be a perfect square) or "uniform_random".
        pathloss: Pathloss and shadowing parameters.
        asd_degrees: Angular standard deviation of the local scattering model.
        uncorrelated: If True, R_kl = beta_kl * I (infinite-ASD limit).
        noise_power_dbm: Receiver noise power.
        seed: Base seed of the drop.
    """

    L: int = 100
    K: int = 50
    N: int = 4
    side_length: float = 500.0
    deployment: str = "grid"
    pathloss: PathlossModel = field(default_factory=PathlossModel)
    asd_degrees: float = 15.0
    uncorrelated: bool = False
    noise_power_dbm: float = -94.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.L < 1 or self.K < 1 or self.N < 1:
            raise ValueError(f"L, K, N must be >= 1 (got L={self.L}, K={self.K}, N={self.N})")
        if self.side_length <= 0:
            raise ValueError(f"side_length must be positive, got {self.side_length}")
        if self.deployment not in DEPLOYMENTS:
            raise ValueError(f"Unknown deployment '{self.deployment}', expected one of {DEPLOYMENTS}")
        if self.deployment == "grid" and math.isqrt(self.L) ** 2 != self.L:
            raise ValueError(f"Grid deployment requires L to be a perfect square, got L={self.L}")
        if self.asd_degrees <= 0:
            raise ValueError(f"asd_degrees must be positive, got {self.asd_degrees}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def noise_power(self) -> float:
        """Noise power in watts."""
        return dbm_to_watts(self.noise_power_dbm)

    @classmethod
    def from_dict(cls, values: dict) -> "NetworkConfig":
        values = dict(values)
        if "pathloss" in values and isinstance(values["pathloss"], dict):
            values["pathloss"] = PathlossModel(**values["pathloss"])
        return cls(**values)


@dataclass(frozen=True)
class NetworkRealization:
    """Geometry and channel statistics of one drop. Arrays are read-only."""

    config: NetworkConfig
    ap_positions: np.ndarray  # [L, 2] meters
    ue_positions: np.ndarray  # [K, 2] meters
    distances: np.ndarray  # [K, L] meters, wrap-around minimum
    angles: np.ndarray  # [K, L] radians, nominal angle seen from the AP
    beta: np.ndarray  # [K, L] linear gain
    R: np.ndarray  # [K, L, N, N] complex

    @property
    def K(self) -> int:
        return self.ue_positions.shape[0]

    @property
    def L(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def N(self) -> int:
        return self.R.shape[-1]

    @property
    def noise_power(self) -> float:
        return self.config.noise_power


def dbm_to_watts(dbm: float) -> float:
    return 10 ** ((dbm - 30.0) / 10.0)


def pathloss_db(distances: np.ndarray, model: PathlossModel) -> np.ndarray:
    """Deterministic part of the large-scale gain in dB."""
    d = np.maximum(distances, MIN_DISTANCE_M)
    return model.intercept_db - model.slope_db * np.log10(d)


def grid_positions(L: int, side_length: float) -> np.ndarray:
    """APs centered in the cells of a sqrt(L) x sqrt(L) grid."""
    per_side = math.isqrt(L)
    spacing = side_length / per_side
    coords = (np.arange(per_side) + 0.5) * spacing
    xs, ys = np.meshgrid(coords, coords, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()])


def wrap_around_geometry(
    ue_positions: np.ndarray, ap_positions: np.ndarray, side_length: float
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distances and nominal angles to the nearest of the 9 mirror images of each AP.

    Args:
        ue_positions: [K, 2] UE coordinates.
        ap_positions: [L, 2] AP coordinates.
        side_length: Side of the square area.

    Returns:
        (distances [K, L], angles [K, L]); the angle is measured at the AP
        towards the UE, counterclockwise from the x-axis.
    """
    shifts = np.array([(dx, dy) for dx in (-1, 0, 1) for dy in (-1, 0, 1)], dtype=float)
    mirrors = ap_positions[None, :, :] + side_length * shifts[:, None, :]  # [9, L, 2]
    offsets = ue_positions[:, None, None, :] - mirrors[None, :, :, :]  # [K, 9, L, 2]
    lengths = np.linalg.norm(offsets, axis=-1)  # [K, 9, L]
    nearest = np.argmin(lengths, axis=1)  # [K, L]

    chosen = np.take_along_axis(offsets, nearest[:, None, :, None], axis=1)[:, 0]  # [K, L, 2]
    distances = np.take_along_axis(lengths, nearest[:, None, :], axis=1)[:, 0]
    angles = np.arctan2(chosen[..., 1], chosen[..., 0])
    return distances, angles


def local_scattering_R(
    nominal_angle: float, asd: float, beta: float, N: int, uncorrelated: bool = False
) -> np.ndarray:
    """
    Gaussian local-scattering correlation matrix of a half-wavelength ULA.

    Entry (m, n) = beta * exp(j*pi*(m-n)*sin(theta)) * exp(-(asd^2/2) * (pi*(m-n)*cos(theta))^2).

    Args:
        nominal_angle: Nominal angle of arrival theta in radians.
        asd: Angular standard deviation in radians.
        beta: Large-scale gain; the result satisfies trace/N == beta.
        N: Number of antennas.
        uncorrelated: Return beta * I instead.

    Returns:
        Hermitian PSD [N, N] complex matrix.
    """
    if uncorrelated:
        return beta * np.eye(N, dtype=complex)

    lag = np.subtract.outer(np.arange(N), np.arange(N)).astype(float)
    phase = np.exp(1j * np.pi * lag * np.sin(nominal_angle))
    spread = np.exp(-(asd**2 / 2.0) * (np.pi * lag * np.cos(nominal_angle)) ** 2)
    R = phase * spread
    R = 0.5 * (R + R.conj().T)
    return beta * R * (N / np.real(np.trace(R)))


def generate_network(cfg: NetworkConfig) -> NetworkRealization:
    """
    Generate one network drop.

    Deterministic given cfg.seed: AP positions (random deployment only),
    UE positions and shadowing come from dedicated streams.
    """
    L, K, N = cfg.L, cfg.K, cfg.N
    if cfg.deployment == "grid":
        ap_positions = grid_positions(L, cfg.side_length)
    else:
        ap_positions = stream_rng(cfg.seed, GEOMETRY, 0).uniform(0.0, cfg.side_length, size=(L, 2))
    ue_positions = stream_rng(cfg.seed, GEOMETRY, 1).uniform(0.0, cfg.side_length, size=(K, 2))

    distances, angles = wrap_around_geometry(ue_positions, ap_positions, cfg.side_length)
    distances = np.maximum(distances, MIN_DISTANCE_M)

    shadowing = stream_rng(cfg.seed, GEOMETRY, 2).normal(0.0, cfg.pathloss.shadow_std_db, size=(K, L))
    beta = 10 ** ((pathloss_db(distances, cfg.pathloss) + shadowing) / 10.0)

    asd = np.deg2rad(cfg.asd_degrees)
    R = np.empty((K, L, N, N), dtype=complex)
    for k in range(K):
        for l in range(L):
            R[k, l] = local_scattering_R(angles[k, l], asd, beta[k, l], N, cfg.uncorrelated)

    for array in (ap_positions, ue_positions, distances, angles, beta, R):
        array.setflags(write=False)

    logger.debug(
        f"Generated drop seed={cfg.seed}: L={L}, K={K}, N={N}, "
        f"beta range [{10 * np.log10(beta.min()):.1f}, {10 * np.log10(beta.max()):.1f}] dB"
    )
    return NetworkRealization(cfg, ap_positions, ue_positions, distances, angles, beta, R)


def save_network(net: NetworkRealization, path: str) -> None:
    """Write a binary snapshot (npz) of a drop for replay."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    config_json = json.dumps(asdict(net.config), sort_keys=True)
    np.savez_compressed(
        path,
        config=np.array(config_json),
        ap_positions=net.ap_positions,
        ue_positions=net.ue_positions,
        distances=net.distances,
        angles=net.angles,
        beta=net.beta,
        R=net.R,
    )
    logger.info(f"Network snapshot saved: {os.path.basename(path)}")


def load_network(path: str) -> NetworkRealization:
    """Read a snapshot written by save_network."""
    with np.load(path) as data:
        cfg = NetworkConfig.from_dict(json.loads(str(data["config"])))
        arrays = {
            name: np.array(data[name])
            for name in ("ap_positions", "ue_positions", "distances", "angles", "beta", "R")
        }
    for array in arrays.values():
        array.setflags(write=False)
    return NetworkRealization(config=cfg, **arrays)
