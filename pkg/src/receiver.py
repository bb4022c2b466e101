"""
Local combining, large-scale fading decoding and spectral efficiency.

Each AP l combines its received signal for every served UE k with a local
vector a_kl (MR, normalized MR or LP-MMSE). The CPU weights the local
estimates with LSFD (interference statistics of all UEs) or P-LSFD (only
UEs sharing a serving AP). Spectral efficiency follows from the
use-and-then-forget bound, either with expectations estimated by Monte-Carlo
or with closed forms for MR combining (fixed plans) and normalized MR
combining under random pilot switching.

All per-UE statistics are stored on the serving-AP coordinates M_k only.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from channel import ChannelBatch, compute_estimation_stats, draw_channels, estimate_channels
from hermitian import batched_inverse, batched_solve, hermitian_solve, hermitize
from pilots import redraw
from seeding import PILOT_NOISE, derive_seed

logger = logging.getLogger(__name__)

COMBINERS = ("MR", "MR_normalized", "LP_MMSE")
DECODERS = ("LSFD", "P_LSFD")
METHODS = ("monte_carlo", "closed_form_mr", "closed_form_normalized", "closed_form_switching")

# Complex entries per chunk of channel realizations
CHUNK_BUDGET = 2_000_000


@dataclass(frozen=True)
class CombinerSpec:
    """Local combiner; MR_normalized uses a_kl = B_kl^{-1} h_hat_kl."""

    kind: str

    def __post_init__(self) -> None:
        if self.kind not in COMBINERS:
            raise ValueError(f"Unknown combiner '{self.kind}', expected one of {COMBINERS}")


@dataclass(frozen=True)
class DecodingStats:
    """
    Expectations of the use-and-then-forget bound, per UE on M_k coordinates.

    Attributes:
        serving: Per UE, the serving APs M_k (defines the coordinates).
        v: Per UE, [m] E{a_kl^H h_kl}.
        lambda1: Per UE, [K, m, m] E{g_ki g_ki^H} with g_ki = [a_kl^H h_il]_l.
        lambda2: Per UE, [m] E{||a_kl||^2}.
        method: How the expectations were obtained.
    """

    serving: Tuple[np.ndarray, ...]
    v: Tuple[np.ndarray, ...]
    lambda1: Tuple[np.ndarray, ...]
    lambda2: Tuple[np.ndarray, ...]
    method: str = "monte_carlo"

    @property
    def K(self) -> int:
        return len(self.v)

    def expand_v(self, k: int, L: int) -> np.ndarray:
        """v_k on all L APs; entries outside M_k are exactly zero."""
        full = np.zeros(L, dtype=complex)
        full[self.serving[k]] = self.v[k]
        return full


@dataclass(frozen=True)
class SeResult:
    """Per-UE spectral efficiency in bit/s/Hz."""

    se: np.ndarray
    method: str
    prelog: float
    sinr: Optional[np.ndarray] = None

    @property
    def summary(self) -> Dict[str, float]:
        return {
            "average": float(np.mean(self.se)),
            "percentile_5": float(np.percentile(self.se, 5)),
            "max_minus_min": float(np.max(self.se) - np.min(self.se)),
        }


def prelog_factor(tau_p: int, tau_c: int) -> float:
    """Fraction of the coherence block used for data, 1 - tau_p/tau_c."""
    if not 1 <= tau_p < tau_c:
        raise ValueError(f"Need 1 <= tau_p < tau_c (got tau_p={tau_p}, tau_c={tau_c})")
    return 1.0 - tau_p / tau_c


# Local combining
def _served_mask(service) -> np.ndarray:
    """[K, L] float mask of serving pairs."""
    return service.A.T.astype(float)


def combine_local(kind, batch, estimates, stats, service, powers, noise: float) -> np.ndarray:
    """
    Local combining vectors for one batch of trials.

    Args:
        kind: Combiner name or CombinerSpec.
        batch: ChannelBatch the estimates belong to.
        estimates: [T, K, L, N] channel estimates.
        stats: EstimationStats of the active pilot plan.
        service: ServiceMap.
        powers: [K] data powers (LP-MMSE only).
        noise: Noise power in watts.

    Returns:
        [T, K, L, N] combiners a_kl; zero where AP l does not serve UE k.
    """
    kind = kind.kind if isinstance(kind, CombinerSpec) else CombinerSpec(kind).kind
    mask = _served_mask(service)
    T, K, L, N = estimates.shape
    if batch is not None and batch.h.shape != estimates.shape:
        raise ValueError(f"Batch shape {batch.h.shape} does not match estimates {estimates.shape}")

    if kind == "MR":
        return estimates * mask[None, :, :, None]

    if kind == "MR_normalized":
        ks, ls = np.nonzero(mask)
        B_inv = np.zeros((K, L, N, N), dtype=complex)
        B_inv[ks, ls] = batched_inverse(stats.B[ks, ls], label="estimate covariance")
        return np.einsum("klmn,tkln->tklm", B_inv, estimates) * mask[None, :, :, None]

    # LP-MMSE: Z_l = sum_{i in D_l} p_i (h_hat h_hat^H + C_il) + noise I
    weights = np.asarray(powers, dtype=float)[:, None] * mask
    Z = np.einsum("kl,tkln,tklm->tlnm", weights, estimates, np.conj(estimates))
    Z += np.einsum("kl,klnm->lnm", weights, stats.C)[None]
    Z += noise * np.eye(N)
    solved = batched_solve(Z, np.transpose(estimates, (0, 2, 3, 1)), label="LP-MMSE system")
    combiners = np.transpose(solved, (0, 3, 1, 2)) * np.asarray(powers, dtype=float)[None, :, None, None]
    return combiners * mask[None, :, :, None]


# Decoding statistics
class DecodingStatsAccumulator:
    """Running sums of the bound's expectations; chunks can arrive in any order."""

    def __init__(self, service):
        self.serving = tuple(service.M)
        K = len(self.serving)
        self.trials = 0
        self.v_sum = [np.zeros(len(m), dtype=complex) for m in self.serving]
        self.l1_sum = [np.zeros((K, len(m), len(m)), dtype=complex) for m in self.serving]
        self.l2_sum = [np.zeros(len(m)) for m in self.serving]

    def add(self, combiners: np.ndarray, h: np.ndarray) -> None:
        """Sample sums of g_ki = [a_kl^H h_il]_l over the true channels."""
        self.trials += combiners.shape[0]
        for k, aps in enumerate(self.serving):
            a_k = combiners[:, k][:, aps]  # [T, m, N]
            g = np.einsum("tmn,timn->tim", np.conj(a_k), h[:, :, aps])
            self._accumulate(k, a_k, g)

    def add_conditional(self, combiners: np.ndarray, estimates: np.ndarray, error_covariance: np.ndarray) -> None:
        """
        Sums of the expectations conditioned on the channel estimates.

        The MMSE error h - h_hat is zero-mean with covariance C and independent
        of all estimates at the AP, hence of the combiners, so it is averaged out
        analytically:
        E{g_ki | h_hat} = [a_kl^H h_hat_il]_l, and the diagonal of
        E{g_ki g_ki^H | h_hat} gains a_kl^H C_il a_kl.

        Args:
            combiners: [T, K, L, N] local combiners.
            estimates: [T, K, L, N] channel estimates the combiners were built from.
            error_covariance: [K, L, N, N] C of the active pilot plan.
        """
        self.trials += combiners.shape[0]
        for k, aps in enumerate(self.serving):
            a_k = combiners[:, k][:, aps]
            g = np.einsum("tmn,timn->tim", np.conj(a_k), estimates[:, :, aps])
            residual = np.einsum(
                "tma,imab,tmb->im", np.conj(a_k), error_covariance[:, aps], a_k, optimize=True
            ).real
            self._accumulate(k, a_k, g, residual)

    def _accumulate(self, k: int, a_k: np.ndarray, g: np.ndarray, residual: Optional[np.ndarray] = None) -> None:
        self.v_sum[k] += g[:, k].sum(axis=0)
        second = np.einsum("tim,tin->imn", g, np.conj(g))
        if residual is not None:
            diagonal = np.arange(g.shape[2])
            second[:, diagonal, diagonal] += residual
        self.l1_sum[k] += second
        self.l2_sum[k] += np.sum(np.abs(a_k) ** 2, axis=(0, 2))

    def merge(self, other: "DecodingStatsAccumulator") -> None:
        self.trials += other.trials
        for k in range(len(self.serving)):
            self.v_sum[k] += other.v_sum[k]
            self.l1_sum[k] += other.l1_sum[k]
            self.l2_sum[k] += other.l2_sum[k]

    def result(self) -> DecodingStats:
        if self.trials < 2:
            raise ValueError(f"Need at least 2 trials, got {self.trials}")
        n = float(self.trials)
        return DecodingStats(
            serving=self.serving,
            v=tuple(s / n for s in self.v_sum),
            lambda1=tuple(hermitize(s / n) for s in self.l1_sum),
            lambda2=tuple(s / n for s in self.l2_sum),
            method="monte_carlo",
        )


def estimate_decoding_stats(combiners: np.ndarray, batch, service, trials: Optional[int] = None) -> DecodingStats:
    """
    Sample means of v, Lambda1 and Lambda2 over one batch.

    Args:
        combiners: [T, K, L, N] local combiners.
        batch: ChannelBatch with the true channels.
        service: ServiceMap.
        trials: Optional check on the number of trials.
    """
    if trials is not None and trials != combiners.shape[0]:
        raise ValueError(f"Expected {trials} trials, combiners hold {combiners.shape[0]}")
    accumulator = DecodingStatsAccumulator(service)
    accumulator.add(combiners, batch.h)
    return accumulator.result()


def chunk_size(K: int, L: int, N: int) -> int:
    return max(1, CHUNK_BUDGET // (K * L * N))


def simulate_decoding_stats(
    net,
    service,
    plan,
    kind: str,
    pilot_powers: np.ndarray,
    data_powers: np.ndarray,
    trials: int,
    seed: int,
) -> DecodingStats:
    """
    Monte-Carlo estimate of the decoding statistics of a drop.

    Channels, pilot noise and (for switching plans) pilot draws come from
    per-trial streams of seed, so the result does not depend on the chunking.
    The estimation error is averaged out analytically per trial
    (DecodingStatsAccumulator.add_conditional); only the estimates are sampled.

    Args:
        net: NetworkRealization.
        service: ServiceMap.
        plan: PilotPlan; switching plans are redrawn in every trial.
        kind: Combiner name.
        pilot_powers: [K] pilot powers in watts.
        data_powers: [K] data powers in watts.
        trials: Number of coherence blocks.
        seed: Base seed of the trial streams.

    Returns:
        DecodingStats with method "monte_carlo".
    """
    noise = net.noise_power
    noise_seed = derive_seed(seed, PILOT_NOISE)
    accumulator = DecodingStatsAccumulator(service)
    step = chunk_size(net.K, net.L, net.N)
    fixed_stats = None if plan.switching else compute_estimation_stats(net, plan, pilot_powers, noise)

    for start in range(0, trials, step):
        batch = draw_channels(net, min(step, trials - start), seed, first_trial=start)
        if fixed_stats is not None:
            estimates = estimate_channels(batch, fixed_stats, plan, pilot_powers, noise, noise_seed)
            combiners = combine_local(kind, batch, estimates, fixed_stats, service, data_powers, noise)
            accumulator.add_conditional(combiners, estimates, fixed_stats.C)
            continue
        for offset in range(batch.trials):
            block = batch.first_trial + offset
            block_plan = redraw(plan, block)
            block_stats = compute_estimation_stats(net, block_plan, pilot_powers, noise)
            single = ChannelBatch(h=batch.h[offset : offset + 1], trial_seed_base=seed, first_trial=block)
            estimates = estimate_channels(single, block_stats, block_plan, pilot_powers, noise, noise_seed)
            combiners = combine_local(kind, single, estimates, block_stats, service, data_powers, noise)
            accumulator.add_conditional(combiners, estimates, block_stats.C)
        logger.debug(f"Accumulated {accumulator.trials}/{trials} trials")

    return accumulator.result()


# LSFD and the bound
def lsfd_weights(
    stats: DecodingStats,
    powers: np.ndarray,
    noise: float,
    partial: bool = False,
    P: Optional[Sequence[np.ndarray]] = None,
) -> List[np.ndarray]:
    """
    LSFD (all UEs) or P-LSFD (UEs in P_k) weights.

    w_k = (sum_i p_i Lambda1_ki + noise * Lambda2_k)^{-1} v_k, with i over all
    K UEs or over P_k.

    Args:
        stats: Decoding statistics.
        powers: [K] data powers.
        noise: Noise power in watts.
        partial: Sum the interference over P_k only.
        P: Interferer sets, required when partial.

    Returns:
        Per UE, [m] complex weights.
    """
    if partial and P is None:
        raise ValueError("P-LSFD needs the interferer sets P")
    powers = np.asarray(powers, dtype=float)
    weights = []
    for k in range(stats.K):
        users = np.asarray(P[k]) if partial else np.arange(stats.K)
        matrix = np.tensordot(powers[users], stats.lambda1[k][users], axes=1)
        matrix = matrix + noise * np.diag(stats.lambda2[k])
        weights.append(hermitian_solve(matrix, stats.v[k], label=f"LSFD system of UE {k}"))
    return weights


def uatf_sinr(stats: DecodingStats, weights: Sequence[np.ndarray], powers: np.ndarray, noise: float) -> np.ndarray:
    """
    SINR_k = p_k |w^H v|^2 / w^H (sum_i p_i Lambda1_ki - p_k v v^H + noise Lambda2) w.
    """
    powers = np.asarray(powers, dtype=float)
    sinr = np.empty(stats.K)
    for k in range(stats.K):
        w, v = weights[k], stats.v[k]
        gain = np.abs(np.vdot(w, v)) ** 2
        total = np.tensordot(powers, stats.lambda1[k], axes=1) + noise * np.diag(stats.lambda2[k])
        denominator = np.real(np.vdot(w, total @ w)) - powers[k] * gain
        sinr[k] = powers[k] * gain / denominator if denominator > 0 else np.inf
    return sinr


def se_monte_carlo(
    stats: DecodingStats,
    weights: Sequence[np.ndarray],
    powers: np.ndarray,
    noise: float,
    prelog: float,
) -> SeResult:
    """SE_k = prelog * log2(1 + SINR_k) for the given weights."""
    sinr = uatf_sinr(stats, weights, powers, noise)
    return SeResult(se=prelog * np.log2(1.0 + sinr), method=stats.method, prelog=prelog, sinr=sinr)


def decode(stats: DecodingStats, decoder: str, service, powers: np.ndarray, noise: float, prelog: float) -> SeResult:
    """LSFD or P-LSFD weights followed by the SE evaluation."""
    if decoder not in DECODERS:
        raise ValueError(f"Unknown decoder '{decoder}', expected one of {DECODERS}")
    weights = lsfd_weights(stats, powers, noise, partial=decoder == "P_LSFD", P=service.P)
    return se_monte_carlo(stats, weights, powers, noise, prelog)


# Closed forms
def _trace_products(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """tr(left_l right_il) for left [m, N, N] and right [K, m, N, N]."""
    return np.einsum("lab,ilba->il", left, right)


def _assemble(serving, v, coherent, omega1, lambda2, coefficient, method) -> DecodingStats:
    lambda1 = []
    for k in range(len(serving)):
        outer = np.einsum("im,in->imn", coherent[k], np.conj(coherent[k]))
        diag = np.einsum("im,mn->imn", omega1[k], np.eye(len(serving[k])))
        lambda1.append(hermitize(diag + coefficient[k][:, None, None] * outer))
    return DecodingStats(
        serving=tuple(serving),
        v=tuple(v),
        lambda1=tuple(lambda1),
        lambda2=tuple(lambda2),
        method=method,
    )


def closed_form_mr_stats(net, service, plan, pilot_powers: np.ndarray, noise: float) -> DecodingStats:
    """
    Exact expectations for MR combining a_kl = h_hat_kl with a fixed pilot plan.

    u_ki,l = tau_p q_k tr(Psi^{-1} R_kl R_il), Omega1_ki = diag tr(B_kl R_il),
    Lambda2_k = diag tr(B_kl), Lambda1_ki = Omega1_ki + (q_i/q_k) u_ki u_ki^H
    for pilot-sharing i, where q are pilot powers.
    """
    stats = compute_estimation_stats(net, plan, pilot_powers, noise)
    q = np.asarray(pilot_powers, dtype=float)
    sharing = plan.sharing_matrix()
    serving, v, coherent, omega1, lambda2, coefficient = [], [], [], [], [], []
    for k, aps in enumerate(service.M):
        R_i = net.R[:, aps]
        psi = stats.Psi[plan.t[k], aps]
        X = batched_solve(psi, net.R[k, aps], label="pilot correlation")
        u = plan.tau_p * q[k] * _trace_products(X, R_i)
        B_k = stats.B[k, aps]
        serving.append(aps)
        v.append(u[k])
        coherent.append(u)
        omega1.append(np.real(_trace_products(B_k, R_i)))
        lambda2.append(np.real(np.einsum("lnn->l", B_k)))
        coefficient.append(np.where(sharing[k], q / q[k], 0.0))
    return _assemble(serving, v, coherent, omega1, lambda2, coefficient, "closed_form_mr")


def _normalized_stats(net, service, psi_of, coefficient_of, method) -> DecodingStats:
    """Shared assembly for normalized MR: a_kl = B_kl^{-1} h_hat_kl = R_kl^{-1} y / sqrt(tau_p q_k)."""
    serving, v, coherent, omega1, lambda2, coefficient = [], [], [], [], [], []
    for k, aps in enumerate(service.M):
        R_inv = batched_inverse(net.R[k, aps], label="channel correlation")
        psi, scale = psi_of(k, aps)
        B_inv = hermitize(R_inv @ psi @ R_inv / scale)
        R_i = net.R[:, aps]
        u = _trace_products(R_inv, R_i)
        serving.append(aps)
        v.append(u[k])
        coherent.append(u)
        omega1.append(np.real(_trace_products(B_inv, R_i)))
        lambda2.append(np.real(np.einsum("lnn->l", B_inv)))
        coefficient.append(coefficient_of(k))
    return _assemble(serving, v, coherent, omega1, lambda2, coefficient, method)


def closed_form_normalized_stats(net, service, plan, pilot_powers: np.ndarray, noise: float) -> DecodingStats:
    """
    Exact expectations for normalized MR combining with a fixed pilot plan.

    u_ki,l = tr(R_kl^{-1} R_il), B_kl^{-1} = R^{-1} Psi R^{-1} / (tau_p q_k),
    Lambda1_ki = diag tr(B_kl^{-1} R_il) + (q_i/q_k) u_ki u_ki^H for pilot-sharing i.
    """
    stats = compute_estimation_stats(net, plan, pilot_powers, noise)
    q = np.asarray(pilot_powers, dtype=float)
    sharing = plan.sharing_matrix()
    return _normalized_stats(
        net,
        service,
        lambda k, aps: (stats.Psi[plan.t[k], aps], plan.tau_p * q[k]),
        lambda k: np.where(sharing[k], q / q[k], 0.0),
        "closed_form_normalized",
    )


def closed_form_switching_stats(net, service, tau_p: int, pilot_powers: np.ndarray, noise: float) -> DecodingStats:
    """
    Expectations for normalized MR combining under random pilot switching.

    The pilot draw enters linearly, so E{chi_ik} = 1/tau_p folds in directly:
    Psi_bar = tau_p q_k R_kl + sum_{i != k} q_i R_il + noise I, and the coherent
    term of UE i != k is weighted by q_i / (tau_p q_k).
    """
    q = np.asarray(pilot_powers, dtype=float)
    N = net.N
    weighted = np.einsum("k,klmn->lmn", q, net.R)  # sum_i q_i R_il

    def psi_of(k, aps):
        own = net.R[k, aps]
        psi = (tau_p - 1) * q[k] * own + weighted[aps] + noise * np.eye(N)
        return psi, tau_p * q[k]

    def coefficient_of(k):
        coefficient = q / (tau_p * q[k])
        coefficient[k] = 1.0
        return coefficient

    return _normalized_stats(net, service, psi_of, coefficient_of, "closed_form_switching")


def se_closed_form_mr(
    net, service, plan, powers: np.ndarray, noise: float, decoder: str = "P_LSFD",
    prelog: float = 0.95, pilot_powers: Optional[np.ndarray] = None,
) -> SeResult:
    """SE with MR combining from the exact expectations (fixed pilot plan)."""
    pilot_powers = powers if pilot_powers is None else pilot_powers
    stats = closed_form_mr_stats(net, service, plan, pilot_powers, noise)
    return decode(stats, decoder, service, powers, noise, prelog)


def se_closed_form_switching(
    net, service, powers: np.ndarray, noise: float, tau_p: int, decoder: str = "P_LSFD",
    prelog: float = 0.95, pilot_powers: Optional[np.ndarray] = None,
) -> SeResult:
    """SE with normalized MR combining under random pilot switching."""
    pilot_powers = powers if pilot_powers is None else pilot_powers
    stats = closed_form_switching_stats(net, service, tau_p, pilot_powers, noise)
    return decode(stats, decoder, service, powers, noise, prelog)


# Fronthaul and complexity
def fronthaul_counts(serving: int, users: int) -> Tuple[int, int]:
    """
    Fronthaul scalars and complex multiplications of one weight vector.

    Args:
        serving: |M_k|.
        users: K for LSFD, |P_k| for P-LSFD.
    """
    m, n = serving, users
    fronthaul = n * m + (m**2 * n**2 + n * m) // 2
    multiplications = ((m**2 + m) // 2) * n + (m**3 - m) // 3 + m**2
    return fronthaul, multiplications


def fronthaul_complexity(service, K: int, tau_p: int, partial: bool) -> pd.DataFrame:
    """
    Per-UE fronthaul load and weight-computation cost.

    Args:
        service: ServiceMap.
        K: Number of UEs.
        tau_p: Number of pilots (bounds |P_k|).
        partial: P-LSFD (|P_k| UEs) instead of LSFD (all K).

    Returns:
        DataFrame with columns ue, serving_aps, interferers, interferer_bound,
        fronthaul_scalars, complexity_mults.
    """
    rows = []
    for k, aps in enumerate(service.M):
        users = len(service.P[k]) if partial else K
        fronthaul, multiplications = fronthaul_counts(len(aps), users)
        rows.append(
            {
                "ue": k,
                "serving_aps": len(aps),
                "interferers": len(service.P[k]),
                "interferer_bound": (tau_p - 1) * len(aps) + 1,
                "fronthaul_scalars": fronthaul,
                "complexity_mults": multiplications,
            }
        )
    return pd.DataFrame(rows)
