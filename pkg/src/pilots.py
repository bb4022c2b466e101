"""
Pilot assignment.

Five schemes map every UE to one of tau_p orthogonal pilots:
- random: i.i.d. uniform pilots, fixed over all coherence blocks
- switching: i.i.d. uniform pilots, redrawn in every coherence block
- gb_km: K-means clustering of UE positions, orthogonal pilots inside a cluster
- ib_km: K-means clustering of serving-masked AP distance vectors
- user_group: groups of UEs with disjoint strongest serving AP sets share a pilot

Pilot indices are 0-based internally and 1-based in JSON exports.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.cluster import KMeans

from netgen import wrap_around_geometry
from seeding import KMEANS, PILOTS, SWITCHING, derive_seed, stream_rng

logger = logging.getLogger(__name__)

SCHEMES = ("random", "switching", "gb_km", "ib_km", "user_group")

# Bisection seeds for delta, measured with K = 40 UEs: {(L, tau_p): delta}
REFERENCE_DELTA: Dict[Tuple[int, int], float] = {
    (121, 4): 0.24,
    (121, 6): 0.27,
    (121, 8): 0.30,
    (121, 10): 0.32,
    (196, 4): 0.21,
    (196, 6): 0.23,
    (196, 8): 0.25,
    (196, 10): 0.27,
}
DEFAULT_DELTA = 0.5


@dataclass(frozen=True)
class PilotPlan:
    """
    Pilot index of every UE.

    Attributes:
        t: [K] pilot indices in 0..tau_p-1.
        tau_p: Number of orthogonal pilots.
        scheme: Name of the scheme that produced the plan.
        switching: If True, t is redrawn per coherence block (see redraw).
        seed: Seed the plan was drawn from (base of per-block seeds when switching).
        delta: Final User-Group threshold, if any.
        violations: Disjointness violations accepted by the User-Group fallback.
    """

    t: np.ndarray
    tau_p: int
    scheme: str
    switching: bool = False
    seed: Optional[int] = None
    delta: Optional[float] = None
    violations: int = 0

    def __post_init__(self) -> None:
        t = np.array(self.t, dtype=int)
        if t.ndim != 1 or np.any(t < 0) or np.any(t >= self.tau_p):
            raise ValueError(f"Pilot indices must lie in 0..{self.tau_p - 1}")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @property
    def K(self) -> int:
        return len(self.t)

    @property
    def S(self) -> Tuple[np.ndarray, ...]:
        """Pilot-sharing sets S_k = {i : t_i = t_k}, k included."""
        return tuple(np.flatnonzero(self.t == self.t[k]) for k in range(self.K))

    def sharing_matrix(self) -> np.ndarray:
        """[K, K] boolean, entry (k, i) iff t_k == t_i."""
        return self.t[:, None] == self.t[None, :]

    def to_json_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "tau_p": self.tau_p,
            "switching": self.switching,
            "pilots": (self.t + 1).tolist(),
            "delta": self.delta,
            "violations": self.violations,
        }


def redraw(plan: PilotPlan, block: int) -> PilotPlan:
    """Plan used in a given coherence block; fixed plans are returned unchanged."""
    if not plan.switching:
        return plan
    return assign_switching(plan.K, plan.tau_p, derive_seed(plan.seed, SWITCHING, block))


# Interference distance
def dis_metric(d_i: np.ndarray, a_i: np.ndarray, d_k: np.ndarray, a_k: np.ndarray) -> float:
    """
    Squared distance between serving-masked AP-distance vectors.

    Args:
        d_i: [L] distances of UE i to all APs.
        a_i: [L] serving indicator of UE i.
        d_k: [L] distances of UE k.
        a_k: [L] serving indicator of UE k.

    Returns:
        ||diag(d_i) a_i - diag(d_k) a_k||^2; smaller means stronger interference
        if the two UEs share a pilot.
    """
    diff = np.asarray(d_i, dtype=float) * np.asarray(a_i) - np.asarray(d_k, dtype=float) * np.asarray(a_k)
    return float(np.dot(diff, diff))


def masked_distances(distances: np.ndarray, A: np.ndarray) -> np.ndarray:
    """[K, L] rows diag(d_k) A[:, k]."""
    return np.asarray(distances, dtype=float) * np.asarray(A, dtype=float).T


# Random schemes
def assign_random(K: int, tau_p: int, seed: int, collision_free: bool = False) -> PilotPlan:
    """
    Uniform random pilots, used in every coherence block.

    With collision_free, each pilot is used floor(K/tau_p) or ceil(K/tau_p) times.
    """
    if tau_p < 1 or K < 1:
        raise ValueError(f"K and tau_p must be >= 1 (got K={K}, tau_p={tau_p})")
    rng = stream_rng(seed, PILOTS, 0)
    if collision_free:
        t = rng.permutation(np.resize(np.arange(tau_p), K))
    else:
        t = rng.integers(0, tau_p, size=K)
    return PilotPlan(t=t, tau_p=tau_p, scheme="random", seed=seed)


def assign_switching(K: int, tau_p: int, block_seed: int) -> PilotPlan:
    """Uniform random pilots of one coherence block; redraw() gives the next blocks."""
    if tau_p < 1 or K < 1:
        raise ValueError(f"K and tau_p must be >= 1 (got K={K}, tau_p={tau_p})")
    t = stream_rng(block_seed, SWITCHING).integers(0, tau_p, size=K)
    return PilotPlan(t=t, tau_p=tau_p, scheme="switching", switching=True, seed=block_seed)


# K-means schemes
@dataclass
class ClusterState:
    """Trained centroids and the UE clusters built around them."""

    centroids: np.ndarray
    clusters: List[np.ndarray] = field(default_factory=list)
    training_points: int = 0
    epsilon: float = 1e-3
    iterations: int = 0
    first_cluster: int = 0


def train_centroids(
    points: np.ndarray,
    initial: np.ndarray,
    epsilon: float,
    max_iter: int = 100,
) -> Tuple[np.ndarray, int]:
    """
    Lloyd iterations until the total squared centroid shift drops below epsilon.

    Args:
        points: [K_p, dim] training feature vectors.
        initial: [n, dim] starting centroids.
        epsilon: Absolute threshold on the sum over centroids of the squared shift
            between consecutive iterations (sklearn compares the same sum).
        max_iter: Iteration cap.

    Returns:
        (centroids [n, dim], iterations run)
    """
    n_clusters = initial.shape[0]
    if n_clusters == 1:
        return points.mean(axis=0, keepdims=True), 1

    # KMeans scales tol by the mean feature variance
    spread = float(np.mean(np.var(points, axis=0)))
    tol = epsilon / spread if spread > 0 else 0.0
    model = KMeans(
        n_clusters=n_clusters,
        init=initial,
        n_init=1,
        max_iter=max_iter,
        tol=tol,
        algorithm="lloyd",
    )
    model.fit(points)
    if model.n_iter_ >= max_iter:
        logger.warning(f"K-means stopped at the iteration cap ({max_iter}) before converging")
    return model.cluster_centers_, int(model.n_iter_)


def admit_to_clusters(dis: np.ndarray, capacity: int) -> List[np.ndarray]:
    """
    Capacity-limited cluster admission.

    All (UE, centroid) pairs are visited in one global ascending Dis order,
    not UE by UE; a UE joins the first centroid that still has room, so a
    UE can land in its second-nearest cluster when a closer UE filled the
    nearest one first. Ties break by UE index, then centroid index.

    Args:
        dis: [K, n] Dis between UE features and centroids.
        capacity: Maximum cluster size (tau_p).

    Returns:
        n sorted arrays of UE indices.
    """
    K, n = dis.shape
    if K > n * capacity:
        raise ValueError(f"{K} UEs do not fit in {n} clusters of {capacity}")
    order = np.lexsort((np.tile(np.arange(n), K), np.repeat(np.arange(K), n), dis.ravel()))
    members: List[List[int]] = [[] for _ in range(n)]
    placed = np.zeros(K, dtype=bool)
    for flat in order:
        k, m = divmod(int(flat), n)
        if placed[k] or len(members[m]) >= capacity:
            continue
        members[m].append(k)
        placed[k] = True
    return [np.array(sorted(c), dtype=int) for c in members]


def _first_cluster(clusters: List[np.ndarray], tau_p: int) -> int:
    """Lowest-index cluster with exactly tau_p UEs, else the largest one."""
    sizes = [len(c) for c in clusters]
    for m, size in enumerate(sizes):
        if size == tau_p:
            return m
    logger.warning(f"No cluster holds exactly tau_p={tau_p} UEs (sizes {sizes}); using the largest")
    return int(np.argmax(sizes))


def share_pilots(
    clusters: List[np.ndarray], first: int, ue_dis: np.ndarray, tau_p: int
) -> np.ndarray:
    """
    Orthogonal pilots inside the first cluster, then cross-cluster sharing.

    Each pilot holder claims, in every other cluster, the UE with the largest
    Dis to itself; a UE claimed by several holders shares the pilot of the one
    with the largest Dis, and the other holders claim again.

    Args:
        clusters: UE index arrays.
        first: Index of the cluster that receives orthogonal pilots.
        ue_dis: [K, K] pairwise Dis between UEs.
        tau_p: Number of pilots.

    Returns:
        [K] pilot indices.
    """
    K = ue_dis.shape[0]
    t = np.full(K, -1, dtype=int)
    clusters = [list(c) for c in clusters]
    holders = list(clusters[first])
    t[holders] = np.arange(len(holders))

    # leftover pilots go to the unassigned UEs farthest from all current holders
    for pilot in range(len(holders), min(tau_p, K)):
        free = [i for i in range(K) if t[i] < 0]
        spread = ue_dis[np.ix_(free, holders)].min(axis=1)
        pick = free[int(np.argmax(spread))]
        t[pick] = pilot
        holders.append(pick)
        for c in clusters:
            if pick in c:
                c.remove(pick)
    holders.sort()

    for m, cluster in enumerate(clusters):
        if m == first:
            continue
        waiting = sorted(cluster)
        claimers = list(holders)
        while waiting:
            if not claimers:
                claimers = list(holders)
            claims: Dict[int, List[int]] = {}
            for k in claimers:
                i_star = max(waiting, key=lambda i: (ue_dis[i, k], -i))
                claims.setdefault(i_star, []).append(k)
            for i in sorted(claims):
                k_star = max(claims[i], key=lambda k: (ue_dis[i, k], -k))
                t[i] = t[k_star]
                claimers.remove(k_star)
                waiting.remove(i)
    return t


def _kmeans_plan(
    scheme: str,
    ue_features: np.ndarray,
    training_features: np.ndarray,
    initial_features: np.ndarray,
    tau_p: int,
    epsilon: float,
    max_iter: int,
    seed: int,
) -> Tuple[PilotPlan, ClusterState]:
    K = ue_features.shape[0]
    centroids, iterations = train_centroids(training_features, initial_features, epsilon, max_iter)
    to_centroid = cdist(ue_features, centroids, "sqeuclidean")
    clusters = admit_to_clusters(to_centroid, tau_p)
    first = _first_cluster(clusters, tau_p)
    ue_dis = cdist(ue_features, ue_features, "sqeuclidean")
    t = share_pilots(clusters, first, ue_dis, tau_p)

    state = ClusterState(
        centroids=centroids,
        clusters=clusters,
        training_points=training_features.shape[0],
        epsilon=epsilon,
        iterations=iterations,
        first_cluster=first,
    )
    logger.debug(
        f"{scheme}: {len(clusters)} clusters (sizes {[len(c) for c in clusters]}) "
        f"after {iterations} K-means iterations"
    )
    return PilotPlan(t=t, tau_p=tau_p, scheme=scheme, seed=seed), state


def _training_positions(seed: int, count: int, side_length: float, stream: int) -> np.ndarray:
    return stream_rng(seed, KMEANS, stream).uniform(0.0, side_length, size=(count, 2))


def assign_gb_km(
    ue_positions: np.ndarray,
    K: int,
    tau_p: int,
    kp: Optional[int] = None,
    epsilon: float = 1e-3,
    seed: int = 0,
    side_length: Optional[float] = None,
    max_iter: int = 100,
    return_state: bool = False,
):
    """
    Geography-based K-means pilot assignment.

    Same pipeline as assign_ib_km, but on raw 2-D UE and training-point positions.

    Args:
        ue_positions: [K, 2] UE coordinates.
        K: Number of UEs.
        tau_p: Number of pilots.
        kp: Training points (default 10 K).
        epsilon: K-means convergence threshold.
        seed: Seed of the training points and initial centroids.
        side_length: Coverage side (default: bounding box of the UEs).
        max_iter: K-means iteration cap.
        return_state: Also return the ClusterState.

    Returns:
        PilotPlan, or (PilotPlan, ClusterState) with return_state.
    """
    ue_positions = np.asarray(ue_positions, dtype=float)
    if ue_positions.shape[0] != K:
        raise ValueError(f"Expected {K} UE positions, got {ue_positions.shape[0]}")
    side = side_length if side_length is not None else float(np.max(ue_positions)) or 1.0
    kp = kp or 10 * K
    n_clusters = math.ceil(K / tau_p)

    training = _training_positions(seed, kp, side, 0)
    initial = _training_positions(seed, n_clusters, side, 1)
    plan, state = _kmeans_plan("gb_km", ue_positions, training, initial, tau_p, epsilon, max_iter, seed)
    return (plan, state) if return_state else plan


def assign_ib_km(
    net,
    service,
    tau_p: int,
    kp: Optional[int] = None,
    epsilon: float = 1e-3,
    seed: int = 0,
    max_iter: int = 100,
    return_state: bool = False,
):
    """
    Interference-based K-means pilot assignment.

    1. Train ceil(K/tau_p) centroids on the AP-distance vectors of kp random
       points in the coverage area.
    2. Admit UEs by their serving-masked distance vectors diag(d_k) A[:, k],
       at most tau_p per cluster, smallest Dis first.
    3. A cluster of tau_p UEs receives all tau_p orthogonal pilots.
    4. Its UEs claim the max-Dis UE of every other cluster to share their pilot.

    Args:
        net: NetworkRealization (AP positions, distances, side length).
        service: ServiceMap from initial access.
        tau_p: Number of pilots.
        kp: Training points (default 10 K).
        epsilon: K-means convergence threshold.
        seed: Seed of the training points and initial centroids.
        max_iter: K-means iteration cap.
        return_state: Also return the ClusterState.

    Returns:
        PilotPlan, or (PilotPlan, ClusterState) with return_state.
    """
    K = net.K
    kp = kp or 10 * K
    side = net.config.side_length
    n_clusters = math.ceil(K / tau_p)

    def ap_distances(positions: np.ndarray) -> np.ndarray:
        distances, _ = wrap_around_geometry(positions, net.ap_positions, side)
        return distances

    training = ap_distances(_training_positions(seed, kp, side, 0))
    initial = ap_distances(_training_positions(seed, n_clusters, side, 1))
    ue_features = masked_distances(net.distances, service.A)
    plan, state = _kmeans_plan("ib_km", ue_features, training, initial, tau_p, epsilon, max_iter, seed)
    return (plan, state) if return_state else plan


# User-Group
@dataclass
class GroupingState:
    """Matrices and groups of one User-Group grouping pass."""

    S_mat: np.ndarray  # [L, K]
    T_mat: np.ndarray  # [K, K]
    R_rows: List[List[int]]
    delta: float
    groups: List[List[int]]


def reference_delta(L: int, tau_p: int) -> float:
    """Bisection seed for delta; DEFAULT_DELTA outside the reference table."""
    return REFERENCE_DELTA.get((L, tau_p), DEFAULT_DELTA)


def strongest_links(beta: np.ndarray, A: np.ndarray, delta: float) -> np.ndarray:
    """
    S matrix: the ceil(delta |A_bar|) strongest serving links.

    Args:
        beta: [K, L] large-scale gains.
        A: [L, K] serving matrix.
        delta: Fraction of serving links kept, in (0, 1].

    Returns:
        [L, K] 0/1 integer matrix.
    """
    ls, ks = np.nonzero(A)
    gains = beta[ks, ls]
    keep = math.ceil(delta * len(gains))
    order = np.lexsort((ks, ls, -gains))[:keep]
    S = np.zeros(A.shape, dtype=int)
    S[ls[order], ks[order]] = 1
    return S


def candidate_rows(T: np.ndarray) -> List[List[int]]:
    """R_k: ascending j > k with T[k, j] == 0."""
    K = T.shape[0]
    return [[j for j in range(k + 1, K) if T[k, j] == 0] for k in range(K)]


def group_users(R_rows: List[List[int]]) -> List[List[int]]:
    """
    Greedy grouping over the candidate rows.

    The lowest-index available UE seeds a group; members are added from its
    candidate row, which is intersected with each new member's row. The last
    UE has an empty row and forms its own group unless some group picked it.
    """
    K = len(R_rows)
    rows = [set(r) for r in R_rows]
    available = list(range(K))
    groups: List[List[int]] = []
    while available:
        seed_ue = available.pop(0)
        group = [seed_ue]
        for r in rows:
            r.discard(seed_ue)
        candidates = set(rows[seed_ue])
        while candidates:
            j = min(candidates)
            group.append(j)
            candidates &= rows[j]
            available.remove(j)
            for r in rows:
                r.discard(j)
        groups.append(group)
    return groups


def grouping_pass(beta: np.ndarray, A: np.ndarray, delta: float) -> GroupingState:
    S = strongest_links(beta, A, delta)
    T = S.T @ S
    R_rows = candidate_rows(T)
    return GroupingState(S_mat=S, T_mat=T, R_rows=R_rows, delta=delta, groups=group_users(R_rows))


def count_violations(T: np.ndarray, group: List[int]) -> int:
    """Pairs i < j inside a group with common strongest serving APs."""
    return sum(1 for a, i in enumerate(group) for j in group[a + 1 :] if T[i, j] > 0)


def _merge_groups(groups: List[List[int]], T: np.ndarray, target: int) -> List[List[int]]:
    groups = [sorted(g) for g in groups]
    while len(groups) > target:
        best = None
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                cost = int(T[np.ix_(groups[a], groups[b])].astype(bool).sum())
                if best is None or cost < best[0]:
                    best = (cost, a, b)
        _, a, b = best
        groups[a] = sorted(groups[a] + groups[b])
        del groups[b]
    return groups


def _split_groups(groups: List[List[int]], target: int) -> List[List[int]]:
    groups = [sorted(g) for g in groups]
    while len(groups) < target:
        largest = max(range(len(groups)), key=lambda m: (len(groups[m]), -m))
        if len(groups[largest]) < 2:
            break
        group = groups[largest]
        half = len(group) // 2
        groups[largest] = group[:half]
        groups.append(group[half:])
    return groups


def assign_user_group(
    net,
    service,
    tau_p: int,
    delta0: Optional[float] = None,
    beta: Optional[np.ndarray] = None,
    max_iters: int = 50,
    return_state: bool = False,
):
    """
    User-Group pilot assignment with bisection on delta.

    Each pass keeps the ceil(delta |A_bar|) strongest serving links as S,
    forms T = S^T S and groups UEs whose strongest serving AP sets are
    pairwise disjoint. delta is bisected in [0, 1] until the number of groups
    equals tau_p (or K when K < tau_p); every group then maps onto one pilot.

    If bisection fails, the pass with the fewest groups above the target is
    reduced by merging the pair of groups with the fewest violated pairs
    (logged as a warning); with only passes below the target, the largest
    groups are split.

    Args:
        net: NetworkRealization (beta and L are read from it).
        service: ServiceMap from initial access.
        tau_p: Number of pilots.
        delta0: Initial delta (default: reference table, else 0.5).
        beta: [K, L] gains to rank links by (default net.beta).
        max_iters: Bisection iteration cap.
        return_state: Also return the final GroupingState.

    Returns:
        PilotPlan, or (PilotPlan, GroupingState) with return_state.
    """
    beta = net.beta if beta is None else np.asarray(beta, dtype=float)
    A = service.A
    K = beta.shape[0]
    target = min(tau_p, K)
    delta = delta0 if delta0 is not None else reference_delta(A.shape[0], tau_p)
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")

    delta_min, delta_max = 0.0, 1.0
    above: Optional[GroupingState] = None
    below: Optional[GroupingState] = None
    state = None
    for iteration in range(max_iters):
        state = grouping_pass(beta, A, delta)
        M = len(state.groups)
        logger.debug(f"User-Group iteration {iteration}: delta={delta:.6f}, groups={M}")
        if M == target:
            break
        if M < target:
            delta_min = delta
            if below is None or M > len(below.groups):
                below = state
        else:
            delta_max = delta
            if above is None or M < len(above.groups):
                above = state
        delta = (delta_min + delta_max) / 2
    else:
        if above is not None:
            state = replace(above, groups=_merge_groups(above.groups, above.T_mat, target))
        else:
            state = replace(below, groups=_split_groups(below.groups, target))

    violations = sum(count_violations(state.T_mat, g) for g in state.groups)
    if violations:
        logger.warning(
            f"User-Group bisection did not reach {target} groups; "
            f"fallback grouping violates {violations} disjointness pairs"
        )

    t = np.empty(K, dtype=int)
    for pilot, group in enumerate(state.groups):
        t[group] = pilot
    plan = PilotPlan(t=t, tau_p=tau_p, scheme="user_group", delta=state.delta, violations=violations)
    return (plan, state) if return_state else plan


def online_complexity_report(scheme: str, K: int, L: int, tau_p: int) -> Dict[str, object]:
    """
    Online operation counts of a pilot scheme.

    random / switching: K; K-means schemes: K^2/tau_p + tau_p^2 (ceil(K/tau_p) - 1)
    (centroid training runs offline); User-Group: KL + K^2 L + K/2.
    """
    if scheme in ("random", "switching"):
        count, formula = K, "K"
    elif scheme in ("gb_km", "ib_km"):
        count = K**2 / tau_p + tau_p**2 * (math.ceil(K / tau_p) - 1)
        formula = "K^2/tau_p + tau_p^2 (ceil(K/tau_p) - 1)"
    elif scheme == "user_group":
        count, formula = K * L + K**2 * L + K / 2, "KL + K^2 L + K/2"
    else:
        raise ValueError(f"Unknown pilot scheme '{scheme}', expected one of {SCHEMES}")
    return {"scheme": scheme, "K": K, "L": L, "tau_p": tau_p, "operations": float(count), "formula": formula}


def assign_pilots(scheme: str, net, service, tau_p: int, seed: int, **options) -> PilotPlan:
    """
    Dispatch to one of the pilot schemes.

    Args:
        scheme: One of SCHEMES.
        net: NetworkRealization.
        service: ServiceMap.
        tau_p: Number of pilots.
        seed: Seed for the randomized schemes.
        **options: kp, epsilon, max_iter (K-means) and delta0, max_iters (User-Group).
    """
    if scheme == "random":
        return assign_random(net.K, tau_p, seed)
    if scheme == "switching":
        return assign_switching(net.K, tau_p, seed)
    if scheme == "gb_km":
        return assign_gb_km(
            net.ue_positions,
            net.K,
            tau_p,
            kp=options.get("kp"),
            epsilon=options.get("epsilon", 1e-3),
            seed=seed,
            side_length=net.config.side_length,
            max_iter=options.get("max_iter", 100),
        )
    if scheme == "ib_km":
        return assign_ib_km(
            net,
            service,
            tau_p,
            kp=options.get("kp"),
            epsilon=options.get("epsilon", 1e-3),
            seed=seed,
            max_iter=options.get("max_iter", 100),
        )
    if scheme == "user_group":
        return assign_user_group(
            net,
            service,
            tau_p,
            delta0=options.get("delta0"),
            max_iters=options.get("max_iters", 50),
        )
    raise ValueError(f"Unknown pilot scheme '{scheme}', expected one of {SCHEMES}")
