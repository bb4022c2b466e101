#!/usr/bin/env python3
"""
Cross-validation of the closed-form SE expressions against Monte-Carlo.

Two suites run on a small instance (L=16, K=8, N=2, tau_p=4, grid APs):
  - "mr": MR combining with a fixed random pilot plan.
  - "switching": normalized MR combining with random pilot switching; the
    Monte-Carlo side redraws the pilots in every coherence block.

A drop passes when its per-UE SE gap, pooled over the UEs of the drop
(norm of the gap over norm of the closed-form SE), is within the suite
tolerance. The worst single-UE gap is reported alongside.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import pandas as pd

from access import initial_access
from netgen import NetworkConfig, generate_network
from pilots import assign_random, assign_switching
from power import fractional_power
from receiver import (
    decode,
    prelog_factor,
    se_closed_form_mr,
    se_closed_form_switching,
    simulate_decoding_stats,
)
from seeding import CHANNEL, PILOTS, derive_seed

logger = logging.getLogger(__name__)

SUITES = ("mr", "switching")
TOLERANCES: Dict[str, float] = {"mr": 0.02, "switching": 0.03}
VALIDATION_NETWORK = NetworkConfig(L=16, K=8, N=2, deployment="grid")
VALIDATION_TAU_P = 4
VALIDATION_TRIALS = 10_000


@dataclass
class ValidationReport:
    """Per-UE comparison rows and the overall verdict."""

    rows: pd.DataFrame
    passed: bool

    def worst(self) -> pd.DataFrame:
        """Largest pooled and single-UE relative error per suite."""
        return self.rows.groupby("suite")[["pooled_error", "relative_error"]].max().reset_index()


def pooled_error(closed: np.ndarray, simulated: np.ndarray) -> float:
    """||simulated - closed|| / ||closed|| over the UEs of one drop."""
    closed = np.asarray(closed, dtype=float)
    gap = np.asarray(simulated, dtype=float) - closed
    return float(np.linalg.norm(gap) / np.linalg.norm(closed))


def _comparison_rows(suite: str, seed: int, closed, simulated) -> list:
    pooled = pooled_error(closed.se, simulated.se)
    passed = bool(pooled <= TOLERANCES[suite])
    rows = []
    for k, (cf, mc) in enumerate(zip(closed.se, simulated.se)):
        error = abs(mc - cf) / cf if cf > 0 else abs(mc - cf)
        rows.append(
            {
                "suite": suite,
                "seed": seed,
                "ue": k,
                "closed_form": float(cf),
                "monte_carlo": float(mc),
                "relative_error": float(error),
                "pooled_error": pooled,
                "tolerance": TOLERANCES[suite],
                "passed": passed,
            }
        )
    return rows


def compare_suite(
    suite: str,
    seed: int,
    trials: int = VALIDATION_TRIALS,
    network: NetworkConfig = VALIDATION_NETWORK,
    tau_p: int = VALIDATION_TAU_P,
    tau_c: int = 200,
    p_bar: float = 0.1,
    theta: float = 1.0,
    decoder: str = "P_LSFD",
) -> list:
    """
    Closed-form and Monte-Carlo SE of every UE on one drop.

    Args:
        suite: "mr" or "switching".
        seed: Drop seed.
        trials: Monte-Carlo coherence blocks.
        network: Network parameters (the seed field is replaced).
        tau_p, tau_c: Pilot and coherence-block lengths.
        p_bar: Maximum UE power in watts.
        theta: Power-control exponent.
        decoder: LSFD or P_LSFD.

    Returns:
        List of row dicts, one per UE.
    """
    if suite not in SUITES:
        raise ValueError(f"Unknown validation suite '{suite}', expected one of {SUITES}")

    net = generate_network(dataclasses.replace(network, seed=seed))
    service = initial_access(net.beta, tau_p)
    powers = fractional_power(net.beta, service, theta, p_bar).powers
    pilot_powers = np.full(net.K, p_bar)
    prelog = prelog_factor(tau_p, tau_c)
    noise = net.noise_power
    channel_seed = derive_seed(seed, CHANNEL)

    if suite == "mr":
        plan = assign_random(net.K, tau_p, derive_seed(seed, PILOTS, 0))
        closed = se_closed_form_mr(
            net, service, plan, powers, noise, decoder=decoder, prelog=prelog, pilot_powers=pilot_powers
        )
        combiner = "MR"
    else:
        plan = assign_switching(net.K, tau_p, derive_seed(seed, PILOTS, 1))
        closed = se_closed_form_switching(
            net, service, powers, noise, tau_p, decoder=decoder, prelog=prelog, pilot_powers=pilot_powers
        )
        combiner = "MR_normalized"

    stats = simulate_decoding_stats(net, service, plan, combiner, pilot_powers, powers, trials, channel_seed)
    simulated = decode(stats, decoder, service, powers, noise, prelog)
    return _comparison_rows(suite, seed, closed, simulated)


def validate_closed_forms(
    seeds: Sequence[int] = range(5),
    trials: int = VALIDATION_TRIALS,
    suites: Sequence[str] = SUITES,
    **options,
) -> ValidationReport:
    """
    Run the validation suites over several drops.

    A failing drop is logged and counts as a failure; the others still run.

    Args:
        seeds: Drop seeds.
        trials: Monte-Carlo coherence blocks per drop.
        suites: Subset of SUITES.
        **options: Forwarded to compare_suite.

    Returns:
        ValidationReport; passed is True iff every drop is within tolerance.
    """
    rows = []
    failures = 0
    jobs = [(suite, seed) for suite in suites for seed in seeds]
    for suite, seed in jobs:
        try:
            suite_rows = compare_suite(suite, seed, trials=trials, **options)
            rows.extend(suite_rows)
            worst = max(row["relative_error"] for row in suite_rows)
            logger.info(
                f"Validation {suite} seed {seed}: pooled relative error {suite_rows[0]['pooled_error']:.4f}, "
                f"worst UE {worst:.4f}"
            )
        except Exception as e:
            failures += 1
            logger.error(f"Validation {suite} seed {seed} failed: {e}", exc_info=True)

    frame = pd.DataFrame(rows)
    passed = failures == 0 and not frame.empty and bool(frame["passed"].all())
    logger.info(f"Validation completed: {len(jobs) - failures} run(s) out of {len(jobs)}, passed={passed}")
    return ValidationReport(rows=frame, passed=passed)
