"""
Correlated Rayleigh channel draws, pilot reception and MMSE channel estimation.

Trials are drawn from per-trial streams, so any trial index can be regenerated
on its own and chunks of trials can be processed independently.
"""

import logging
from dataclasses import dataclass

import numpy as np

from hermitian import batched_solve, hermitize, psd_sqrt
from seeding import CHANNEL, PILOT_NOISE, stream_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ChannelBatch:
    """Channel realizations h[trial, k, l, :] of consecutive trials."""

    h: np.ndarray  # [T, K, L, N] complex
    trial_seed_base: int
    first_trial: int = 0

    @property
    def trials(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class EstimationStats:
    """
    MMSE estimation statistics for one pilot plan.

    Attributes:
        Psi: [tau_p, L, N, N] correlation of the received pilot signal.
        B: [K, L, N, N] covariance of the estimate.
        C: [K, L, N, N] covariance of the estimation error (R - B).
        filters: [K, L, N, N] sqrt(tau_p p_k) R_kl Psi^{-1}, applied to y to get h_hat.
        tau_p: Number of orthogonal pilots.
    """

    Psi: np.ndarray
    B: np.ndarray
    C: np.ndarray
    filters: np.ndarray
    tau_p: int


def complex_normal(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """Standard circularly-symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_from_covariance(
    R: np.ndarray, trials: int, seed: int, first_trial: int = 0
) -> np.ndarray:
    """
    Draw h = R^{1/2} z for every covariance in R, one stream per trial.

    Args:
        R: [..., N, N] Hermitian PSD covariances.
        trials: Number of trials to draw.
        seed: Base seed of the channel streams.
        first_trial: Index of the first trial (selects its stream).

    Returns:
        [trials, ..., N] complex array.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")

    root = psd_sqrt(R)
    h = np.empty((trials,) + R.shape[:-1], dtype=complex)
    for offset in range(trials):
        z = complex_normal(stream_rng(seed, CHANNEL, first_trial + offset), R.shape[:-1])
        h[offset] = np.einsum("...mn,...n->...m", root, z)
    return h


def draw_channels(net, trials: int, seed: int, first_trial: int = 0) -> ChannelBatch:
    """Draw independent channel realizations of a network drop."""
    h = draw_from_covariance(net.R, trials, seed, first_trial)
    logger.debug(f"Drew channels for trials {first_trial}..{first_trial + trials - 1}")
    return ChannelBatch(h=h, trial_seed_base=seed, first_trial=first_trial)


def estimation_stats(
    R: np.ndarray,
    pilot_index: np.ndarray,
    tau_p: int,
    pilot_powers: np.ndarray,
    noise: float,
) -> EstimationStats:
    """
    Psi, B and C for correlation matrices R[K, L, N, N] and pilot indices t_k.

    Raises:
        numpy.linalg.LinAlgError: If some Psi is not positive definite.
    """
    K, L, N, _ = R.shape
    pilot_index = np.asarray(pilot_index, dtype=int)
    powers = np.asarray(pilot_powers, dtype=float)

    Psi = np.zeros((tau_p, L, N, N), dtype=complex)
    np.add.at(Psi, pilot_index, tau_p * powers[:, None, None, None] * R)
    Psi += noise * np.eye(N)
    Psi = hermitize(Psi)
    np.linalg.cholesky(Psi)

    # X = Psi^{-1} R, so R Psi^{-1} = X^H
    X = batched_solve(Psi[pilot_index], R, label="pilot correlation")
    R_psi_inv = np.conj(np.swapaxes(X, -1, -2))
    scale = tau_p * powers[:, None, None, None]
    B = hermitize(scale * (R_psi_inv @ R))
    C = hermitize(R - B)
    filters = np.sqrt(scale) * R_psi_inv
    return EstimationStats(Psi=Psi, B=B, C=C, filters=filters, tau_p=tau_p)


def compute_estimation_stats(net, plan, pilot_powers: np.ndarray, noise: float) -> EstimationStats:
    """
    Estimation statistics of a drop under a pilot plan.

    Args:
        net: NetworkRealization.
        plan: PilotPlan; every UE must hold a pilot index.
        pilot_powers: [K] pilot transmit powers in watts.
        noise: Noise power in watts.

    Returns:
        EstimationStats with Psi_tl = sum_{t_i = t} tau_p p_i R_il + noise * I.
    """
    if len(plan.t) != net.K:
        raise ValueError(f"Pilot plan covers {len(plan.t)} UEs, network has {net.K}")
    return estimation_stats(net.R, plan.t, plan.tau_p, pilot_powers, noise)


def received_pilots(
    h: np.ndarray,
    pilot_index: np.ndarray,
    tau_p: int,
    pilot_powers: np.ndarray,
    noise: float,
    seed: int,
    first_trial: int = 0,
) -> np.ndarray:
    """Despread pilot signals y[trial, t, l, :] with fresh noise per trial."""
    T, K, L, N = h.shape
    gains = np.zeros((tau_p, K))
    gains[pilot_index, np.arange(K)] = np.sqrt(tau_p * np.asarray(pilot_powers, dtype=float))
    y = np.einsum("pk,tkln->tpln", gains, h)
    for offset in range(T):
        rng = stream_rng(seed, PILOT_NOISE, first_trial + offset)
        y[offset] += np.sqrt(noise) * complex_normal(rng, (tau_p, L, N))
    return y


def estimate_channels(
    batch: ChannelBatch,
    stats: EstimationStats,
    plan,
    pilot_powers: np.ndarray,
    noise: float,
    seed: int,
) -> np.ndarray:
    """
    MMSE estimates h_hat_kl = sqrt(tau_p p_k) R_kl Psi_{t_k l}^{-1} y_{t_k l}.

    Args:
        batch: Channel realizations.
        stats: Statistics computed for the same plan.
        plan: PilotPlan used during the pilot phase.
        pilot_powers: [K] pilot powers in watts.
        noise: Noise power in watts.
        seed: Base seed of the pilot-noise streams.

    Returns:
        [T, K, L, N] complex estimates.
    """
    if batch.h.shape[1] != len(plan.t):
        raise ValueError(f"Batch has {batch.h.shape[1]} UEs, pilot plan covers {len(plan.t)}")

    y = received_pilots(batch.h, plan.t, stats.tau_p, pilot_powers, noise, seed, batch.first_trial)
    return np.einsum("klmn,tkln->tklm", stats.filters, y[:, plan.t])
