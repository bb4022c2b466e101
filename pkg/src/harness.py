#!/usr/bin/env python3
"""
Experiment orchestration: configuration, network drops, scheme sweeps,
result persistence, summaries and CDF export.

One repetition generates a network drop, runs initial access, then for every
pilot scheme, combiner, power-control exponent and decoder evaluates the SE of
every UE. Repetitions are independent and may run in worker processes; rows
are sorted before they are written, so results do not depend on scheduling.
"""

import dataclasses
import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from access import InfeasibleAccessError, initial_access, strongest_ues_access
from netgen import NetworkConfig, generate_network
from pilots import SCHEMES, assign_pilots, online_complexity_report
from power import fractional_power, large_scale_sir
from receiver import (
    COMBINERS,
    DECODERS,
    closed_form_mr_stats,
    closed_form_normalized_stats,
    closed_form_switching_stats,
    decode,
    fronthaul_complexity,
    prelog_factor,
    simulate_decoding_stats,
)
from seeding import CHANNEL, DROP, PILOTS, derive_seed

logger = logging.getLogger(__name__)

RESULT_COLUMNS: List[str] = ["drop", "ue", "scheme", "combiner", "decoder", "theta", "se_bits_per_hz"]
SORT_KEY: List[str] = ["drop", "ue", "scheme", "combiner", "decoder", "theta"]
DEFAULT_GROUP_BY: Tuple[str, ...] = ("scheme", "combiner", "decoder", "theta")
ACCESS_SCHEMES = ("competitive", "strongest")
METHODS = ("monte_carlo", "closed_form")


@dataclass
class ExperimentSpec:
    """
    Experiment-level parameters; defaults mirror the reference setup.

    Attributes:
        network: Drop parameters (L=100, N=4, 500 m square, grid APs by default).
        tau_p: Pilots per coherence block.
        tau_c: Coherence block length in channel uses.
        p_bar: Maximum UE power in watts (pilots always use p_bar).
        access: "competitive" initial access or the "strongest" benchmark.
        schemes: Pilot schemes to sweep.
        combiners: Local combiners to sweep.
        decoders: LSFD and/or P_LSFD.
        theta_values: Power-control exponents to sweep.
        trials: Monte-Carlo coherence blocks per drop.
        repetitions: Independent network drops.
        method: "monte_carlo", or "closed_form" for MR-type combiners.
        kp: K-means training points (default 10 K).
        epsilon: K-means convergence threshold.
        kmeans_max_iter: K-means iteration cap.
        delta0: Initial User-Group threshold (default: reference table).
        bisection_max_iters: User-Group bisection cap.
        workers: Worker processes for repetitions.
        output_dir: Where results are written.
        export_sir: Also write the large-scale SIR of every UE.
        per_drop_percentile: Summaries average per-drop statistics instead of pooling.
    """

    network: NetworkConfig = field(default_factory=NetworkConfig)
    tau_p: int = 10
    tau_c: int = 200
    p_bar: float = 0.1
    access: str = "competitive"
    schemes: List[str] = field(default_factory=lambda: ["random", "gb_km", "ib_km", "user_group"])
    combiners: List[str] = field(default_factory=lambda: ["LP_MMSE"])
    decoders: List[str] = field(default_factory=lambda: ["LSFD", "P_LSFD"])
    theta_values: List[float] = field(default_factory=lambda: [1.0])
    trials: int = 1000
    repetitions: int = 1
    method: str = "monte_carlo"
    kp: Optional[int] = None
    epsilon: float = 1e-3
    kmeans_max_iter: int = 100
    delta0: Optional[float] = None
    bisection_max_iters: int = 50
    workers: int = 1
    output_dir: str = os.path.join("data", "results")
    export_sir: bool = False
    per_drop_percentile: bool = False

    def __post_init__(self) -> None:
        if isinstance(self.network, dict):
            self.network = NetworkConfig.from_dict(self.network)
        self.schemes = list(self.schemes)
        self.combiners = list(self.combiners)
        self.decoders = list(self.decoders)
        self.theta_values = [float(theta) for theta in self.theta_values]

        if not 1 <= self.tau_p < self.tau_c:
            raise ValueError(f"Need 1 <= tau_p < tau_c (got tau_p={self.tau_p}, tau_c={self.tau_c})")
        if self.p_bar <= 0:
            raise ValueError(f"p_bar must be positive, got {self.p_bar}")
        if self.access not in ACCESS_SCHEMES:
            raise ValueError(f"Unknown access '{self.access}', expected one of {ACCESS_SCHEMES}")
        _check_members("schemes", self.schemes, SCHEMES)
        _check_members("combiners", self.combiners, COMBINERS)
        _check_members("decoders", self.decoders, DECODERS)
        if not self.theta_values or any(not 0.0 <= t <= 1.0 for t in self.theta_values):
            raise ValueError(f"theta_values must be non-empty and lie in [0, 1], got {self.theta_values}")
        if self.trials < 2:
            raise ValueError(f"trials must be >= 2, got {self.trials}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.method not in METHODS:
            raise ValueError(f"Unknown method '{self.method}', expected one of {METHODS}")
        if self.method == "closed_form" and "LP_MMSE" in self.combiners:
            raise ValueError("closed_form evaluation supports MR and MR_normalized combining only")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    @property
    def seed(self) -> int:
        return self.network.seed

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form of the spec."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _check_members(name: str, values: Sequence[str], allowed: Sequence[str]) -> None:
    unknown = [v for v in values if v not in allowed]
    if not values or unknown:
        raise ValueError(f"{name} must be a non-empty subset of {tuple(allowed)}, got {list(values)}")


def _reject_unknown(section: str, values: dict, known) -> None:
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValueError(f"Unknown key(s) in {section}: {unknown}")


def spec_from_dict(values: dict) -> ExperimentSpec:
    """Build an ExperimentSpec from nested dicts, rejecting unknown keys."""
    values = dict(values or {})
    _reject_unknown("experiment", values, [f.name for f in dataclasses.fields(ExperimentSpec)])
    network = dict(values.pop("network", {}) or {})
    _reject_unknown("network", network, [f.name for f in dataclasses.fields(NetworkConfig)])
    if "pathloss" in network:
        _reject_unknown("network.pathloss", network["pathloss"], ["intercept_db", "slope_db", "shadow_std_db"])
    return ExperimentSpec(network=NetworkConfig.from_dict(network), **values)


def load_spec(path: str) -> ExperimentSpec:
    """
    Read an experiment configuration file (YAML).

    Args:
        path: Path to the YAML file.

    Returns:
        Validated ExperimentSpec.

    Raises:
        ValueError: On unknown keys or invalid values.
    """
    with open(path, "r", encoding="utf-8") as handle:
        values = yaml.safe_load(handle) or {}
    if not isinstance(values, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    spec = spec_from_dict(values)
    logger.info(f"Configuration loaded: {os.path.basename(path)} (hash {spec.config_hash()[:12]})")
    return spec


def with_overrides(spec: ExperimentSpec, **overrides) -> ExperimentSpec:
    """Copy of spec with CLI overrides applied; None values are ignored."""
    overrides = {key: value for key, value in overrides.items() if value is not None}
    seed = overrides.pop("seed", None)
    network = dataclasses.replace(spec.network, seed=seed) if seed is not None else spec.network
    return dataclasses.replace(spec, network=network, **overrides)


@dataclass
class ResultStore:
    """Per-UE SE rows of an experiment with their provenance."""

    rows: pd.DataFrame
    provenance: Dict[str, object]
    sir: Optional[pd.DataFrame] = None
    aborted: List[int] = field(default_factory=list)
    access_summaries: Dict[int, Dict[str, float]] = field(default_factory=dict)

    def write(self, output_dir: str) -> Dict[str, str]:
        """Write results.csv, summary.json and (if present) sir.csv."""
        os.makedirs(output_dir, exist_ok=True)
        paths = {"results": os.path.join(output_dir, "results.csv")}
        self.rows.to_csv(paths["results"], index=False)

        summary = summarize(self, per_drop=bool(self.provenance.get("per_drop_percentile", False)))
        payload = {
            "provenance": self.provenance,
            "aborted_drops": self.aborted,
            "access": {str(k): v for k, v in sorted(self.access_summaries.items())},
            "summary": summary.to_dict(orient="records"),
        }
        paths["summary"] = os.path.join(output_dir, "summary.json")
        with open(paths["summary"], "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True)

        if self.sir is not None:
            paths["sir"] = os.path.join(output_dir, "sir.csv")
            self.sir.to_csv(paths["sir"], index=False)

        for path in paths.values():
            logger.info(f"File saved: {os.path.basename(path)}")
        return paths

    @classmethod
    def read(cls, output_dir: str) -> "ResultStore":
        rows = pd.read_csv(os.path.join(output_dir, "results.csv"))
        provenance: Dict[str, object] = {}
        summary_path = os.path.join(output_dir, "summary.json")
        if os.path.exists(summary_path):
            with open(summary_path, "r", encoding="utf-8") as handle:
                provenance = json.load(handle).get("provenance", {})
        return cls(rows=rows, provenance=provenance)


def _decoding_stats(spec: ExperimentSpec, net, service, plan, combiner, pilot_powers, data_powers, channel_seed):
    """Closed-form statistics where available, Monte-Carlo otherwise."""
    noise = net.noise_power
    if spec.method == "closed_form":
        if plan.switching and combiner == "MR_normalized":
            return closed_form_switching_stats(net, service, spec.tau_p, pilot_powers, noise)
        if not plan.switching and combiner == "MR":
            return closed_form_mr_stats(net, service, plan, pilot_powers, noise)
        if not plan.switching and combiner == "MR_normalized":
            return closed_form_normalized_stats(net, service, plan, pilot_powers, noise)
        logger.warning(f"No closed form for {plan.scheme}/{combiner}; using Monte-Carlo")
    return simulate_decoding_stats(
        net, service, plan, combiner, pilot_powers, data_powers, spec.trials, channel_seed
    )


def run_repetition(spec: ExperimentSpec, drop: int) -> Tuple[List[dict], List[dict], Dict[str, float]]:
    """
    Evaluate every scheme/combiner/theta/decoder combination on one drop.

    Args:
        spec: Experiment specification.
        drop: Repetition index (selects the drop seed).

    Returns:
        (SE rows, SIR rows, access summary)
    """
    drop_seed = derive_seed(spec.seed, DROP, drop)
    net = generate_network(dataclasses.replace(spec.network, seed=drop_seed))
    access = initial_access if spec.access == "competitive" else strongest_ues_access
    service = access(net.beta, spec.tau_p)
    access_summary = service.summary()
    logger.info(
        f"Drop {drop}: {spec.access} access, serving APs per UE "
        f"{access_summary['serving_aps_min']}..{access_summary['serving_aps_max']}, "
        f"max |P_k| {access_summary['interferers_max']}"
    )

    K = net.K
    prelog = prelog_factor(spec.tau_p, spec.tau_c)
    pilot_powers = np.full(K, spec.p_bar)
    channel_seed = derive_seed(drop_seed, CHANNEL)
    policies = {theta: fractional_power(net.beta, service, theta, spec.p_bar) for theta in spec.theta_values}

    sir_rows: List[dict] = []
    if spec.export_sir:
        for theta, policy in policies.items():
            sir = large_scale_sir(net.beta, service, policy.powers)
            sir_rows.extend(
                {"drop": drop, "ue": k, "theta": theta, "power_w": float(policy.powers[k]), "sir": float(sir[k])}
                for k in range(K)
            )

    rows: List[dict] = []
    for scheme in spec.schemes:
        plan = assign_pilots(
            scheme,
            net,
            service,
            spec.tau_p,
            derive_seed(drop_seed, PILOTS, SCHEMES.index(scheme)),
            kp=spec.kp,
            epsilon=spec.epsilon,
            max_iter=spec.kmeans_max_iter,
            delta0=spec.delta0,
            max_iters=spec.bisection_max_iters,
        )
        for combiner in spec.combiners:
            reusable = None
            for theta, policy in policies.items():
                if reusable is None or combiner == "LP_MMSE":
                    stats = _decoding_stats(
                        spec, net, service, plan, combiner, pilot_powers, policy.powers, channel_seed
                    )
                    reusable = stats
                stats = reusable
                for decoder in spec.decoders:
                    result = decode(stats, decoder, service, policy.powers, net.noise_power, prelog)
                    rows.extend(
                        {
                            "drop": drop,
                            "ue": k,
                            "scheme": scheme,
                            "combiner": combiner,
                            "decoder": decoder,
                            "theta": theta,
                            "se_bits_per_hz": float(result.se[k]),
                        }
                        for k in range(K)
                    )
                    summary = result.summary
                    logger.info(
                        f"Drop {drop} {scheme}/{combiner}/{decoder} theta={theta}: "
                        f"average {summary['average']:.3f}, 95%-likely {summary['percentile_5']:.3f} bit/s/Hz"
                    )
    return rows, sir_rows, access_summary


def _run_repetition_safe(spec: ExperimentSpec, drop: int):
    """run_repetition that logs and swallows failures."""
    try:
        return drop, run_repetition(spec, drop), None
    except Exception as e:
        logger.error(f"Drop {drop} aborted: {e}", exc_info=True)
        return drop, None, str(e)


def run_experiment(spec: ExperimentSpec) -> ResultStore:
    """
    Run all repetitions of an experiment.

    A failing repetition is logged and skipped; the others proceed.

    Args:
        spec: Experiment specification.

    Returns:
        ResultStore with rows sorted by (drop, ue, scheme, combiner, decoder, theta).

    Raises:
        InfeasibleAccessError: If K > L * tau_p (no drop could succeed).
    """
    cfg = spec.network
    if cfg.K > cfg.L * spec.tau_p:
        raise InfeasibleAccessError(
            f"{cfg.K} UEs exceed the total capacity L * tau_p = {cfg.L * spec.tau_p}"
        )

    logger.info(
        f"Starting experiment: {spec.repetitions} drop(s), L={cfg.L}, K={cfg.K}, N={cfg.N}, "
        f"tau_p={spec.tau_p}, schemes={spec.schemes}, combiners={spec.combiners}, theta={spec.theta_values}"
    )
    drops = list(range(spec.repetitions))
    if spec.workers > 1 and len(drops) > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            outcomes = list(pool.map(_run_repetition_safe, [spec] * len(drops), drops))
    else:
        outcomes = [_run_repetition_safe(spec, drop) for drop in drops]

    rows: List[dict] = []
    sir_rows: List[dict] = []
    aborted: List[int] = []
    access_summaries: Dict[int, Dict[str, float]] = {}
    for drop, outcome, error in sorted(outcomes, key=lambda item: item[0]):
        if outcome is None:
            aborted.append(drop)
            continue
        drop_rows, drop_sir, access_summary = outcome
        rows.extend(drop_rows)
        sir_rows.extend(drop_sir)
        access_summaries[drop] = access_summary

    frame = pd.DataFrame(rows, columns=RESULT_COLUMNS)
    frame = frame.sort_values(SORT_KEY, kind="mergesort").reset_index(drop=True)
    sir = None
    if spec.export_sir:
        sir = pd.DataFrame(sir_rows, columns=["drop", "ue", "theta", "power_w", "sir"])
        sir = sir.sort_values(["drop", "ue", "theta"], kind="mergesort").reset_index(drop=True)

    provenance = {
        "config_hash": spec.config_hash(),
        "seed": spec.seed,
        "per_drop_percentile": spec.per_drop_percentile,
        "spec": spec.to_dict(),
    }
    logger.info(
        f"Experiment completed: {len(drops) - len(aborted)} drop(s) out of {len(drops)}, {len(frame)} rows"
    )
    return ResultStore(rows=frame, provenance=provenance, sir=sir, aborted=aborted, access_summaries=access_summaries)


def _rows_of(store) -> pd.DataFrame:
    return store.rows if isinstance(store, ResultStore) else store


def summarize(store, group_by: Sequence[str] = DEFAULT_GROUP_BY, per_drop: bool = False) -> pd.DataFrame:
    """
    Average SE, 95%-likely SE (5th percentile) and SE_max - SE_min per group.

    Percentiles use linear interpolation on the per-UE SE pooled over drops;
    with per_drop, each statistic is computed per drop and then averaged.

    Args:
        store: ResultStore or results DataFrame.
        group_by: Columns defining the groups.
        per_drop: Average per-drop statistics instead of pooling.

    Returns:
        DataFrame with group_by columns plus average, percentile_5,
        max_minus_min and count.

    Raises:
        ValueError: On an empty store.
    """
    rows = _rows_of(store)
    if rows.empty:
        raise ValueError("Cannot summarize an empty result store")
    group_by = list(group_by)

    def statistics(se: pd.Series) -> pd.Series:
        values = se.to_numpy(dtype=float)
        return pd.Series(
            {
                "average": float(np.mean(values)),
                "percentile_5": float(np.percentile(values, 5)),
                "max_minus_min": float(np.max(values) - np.min(values)),
                "count": len(values),
            }
        )

    if per_drop:
        per = rows.groupby(group_by + ["drop"])["se_bits_per_hz"].apply(statistics).unstack()
        summary = per.groupby(level=list(range(len(group_by)))).mean()
        summary["count"] = rows.groupby(group_by)["se_bits_per_hz"].size()
    else:
        summary = rows.groupby(group_by)["se_bits_per_hz"].apply(statistics).unstack()
    summary["count"] = summary["count"].astype(int)
    return summary.reset_index()


def empirical_cdf(values) -> pd.DataFrame:
    """n sorted values with ordinates 1/n, ..., 1."""
    se = np.sort(np.asarray(values, dtype=float))
    return pd.DataFrame({"se": se, "cdf": np.arange(1, len(se) + 1) / len(se)})


def _group_name(keys) -> str:
    keys = keys if isinstance(keys, tuple) else (keys,)
    name = "_".join(str(k) for k in keys)
    return re.sub(r"[^A-Za-z0-9_.-]+", "-", name)


def export_cdf(store, group_by: Sequence[str] = DEFAULT_GROUP_BY, output_dir: str = "data") -> Dict[str, str]:
    """
    Write one empirical SE CDF per group as cdf_<group>.csv (columns se, cdf).

    Returns:
        Mapping of group name to written path.
    """
    rows = _rows_of(store)
    os.makedirs(output_dir, exist_ok=True)
    paths: Dict[str, str] = {}
    for keys, group in rows.groupby(list(group_by)):
        name = _group_name(keys)
        path = os.path.join(output_dir, f"cdf_{name}.csv")
        empirical_cdf(group["se_bits_per_hz"]).to_csv(path, index=False)
        paths[name] = path
        logger.info(f"CDF saved: {os.path.basename(path)} ({len(group)} points)")
    return paths


def complexity_tables(spec: ExperimentSpec) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """
    Online pilot-assignment counts and per-UE fronthaul/complexity of one drop.

    Returns:
        (online counts per scheme, fronthaul table with one row per UE and decoder)
    """
    cfg = spec.network
    online = pd.DataFrame([online_complexity_report(s, cfg.K, cfg.L, spec.tau_p) for s in SCHEMES])

    net = generate_network(dataclasses.replace(cfg, seed=derive_seed(spec.seed, DROP, 0)))
    access = initial_access if spec.access == "competitive" else strongest_ues_access
    service = access(net.beta, spec.tau_p)
    tables = []
    for decoder in DECODERS:
        table = fronthaul_complexity(service, cfg.K, spec.tau_p, partial=decoder == "P_LSFD")
        table.insert(0, "decoder", decoder)
        tables.append(table)
    return online, pd.concat(tables, ignore_index=True)
