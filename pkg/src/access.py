"""
Initial access and AP selection.

Produces the service map (A, M_k, D_l, P_k) under the per-AP capacity of one
UE per pilot. The competitive procedure lets every UE grab APs in order of
decreasing large-scale gain; a full AP drops its weakest unprotected UE, which
blacklists that AP. A UE that has lost everywhere else is protected and
force-assigned the last AP it has left.
"""

import heapq
import logging
from dataclasses import dataclass
from typing import Dict, List, Set, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class InfeasibleAccessError(ValueError):
    """The capacity constraint cannot be met for every UE."""


@dataclass(frozen=True)
class ServiceMap:
    """
    Which AP serves which UE.

    Attributes:
        A: [L, K] boolean, A[l, k] iff AP l serves UE k.
        M: Per UE, sorted array of serving APs.
        D: Per AP, sorted array of served UEs.
        P: Per UE, sorted array of UEs sharing at least one serving AP (includes k).
    """

    A: np.ndarray
    M: Tuple[np.ndarray, ...]
    D: Tuple[np.ndarray, ...]
    P: Tuple[np.ndarray, ...]

    @classmethod
    def from_assignment(cls, A: np.ndarray) -> "ServiceMap":
        A = np.array(A, dtype=bool)
        A.setflags(write=False)
        M = tuple(np.flatnonzero(A[:, k]) for k in range(A.shape[1]))
        D = tuple(np.flatnonzero(A[l]) for l in range(A.shape[0]))
        return cls(A=A, M=M, D=D, P=derive_interferer_sets(A))

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @property
    def K(self) -> int:
        return self.A.shape[1]

    def check(self, tau_p: int) -> None:
        """Raise ValueError if capacity, coverage or the |P_k| bound is violated."""
        load = self.A.sum(axis=1)
        if np.any(load > tau_p):
            raise ValueError(f"AP {int(np.argmax(load))} serves {int(load.max())} UEs > tau_p={tau_p}")
        for k in range(self.K):
            if len(self.M[k]) == 0:
                raise ValueError(f"UE {k} has no serving AP")
            if len(self.P[k]) > (tau_p - 1) * len(self.M[k]) + 1:
                raise ValueError(f"UE {k}: |P_k|={len(self.P[k])} exceeds (tau_p-1)|M_k|+1")

    def summary(self) -> Dict[str, float]:
        """Per-AP load and per-UE serving/interferer statistics."""
        load = self.A.sum(axis=1)
        serving = np.array([len(m) for m in self.M])
        interferers = np.array([len(p) for p in self.P])
        return {
            "ap_load_min": int(load.min()),
            "ap_load_mean": float(load.mean()),
            "ap_load_max": int(load.max()),
            "serving_aps_min": int(serving.min()),
            "serving_aps_mean": float(serving.mean()),
            "serving_aps_max": int(serving.max()),
            "interferers_mean": float(interferers.mean()),
            "interferers_max": int(interferers.max()),
        }

    def to_json_dict(self) -> dict:
        return {
            "M": [m.tolist() for m in self.M],
            "D": [d.tolist() for d in self.D],
            "P": [p.tolist() for p in self.P],
        }


def derive_interferer_sets(A) -> Tuple[np.ndarray, ...]:
    """
    P_k = {i : A[l, k] A[l, i] != 0 for some l}.

    Args:
        A: [L, K] serving matrix, or a ServiceMap.

    Returns:
        Tuple of K sorted index arrays.
    """
    if isinstance(A, ServiceMap):
        A = A.A
    A = np.asarray(A, dtype=int)
    overlap = (A.T @ A) > 0
    return tuple(np.flatnonzero(overlap[k]) for k in range(A.shape[1]))


def _check_feasible(K: int, L: int, tau_p: int) -> None:
    if K < 1 or L < 1 or tau_p < 1:
        raise ValueError(f"K, L, tau_p must be >= 1 (got K={K}, L={L}, tau_p={tau_p})")
    if K > L * tau_p:
        raise InfeasibleAccessError(
            f"{K} UEs exceed the total capacity L * tau_p = {L} * {tau_p} = {L * tau_p}"
        )


def _weakest(candidates, gains: np.ndarray) -> int:
    """argmin of gains over candidates, lowest index on ties."""
    ordered = sorted(candidates)
    return min(ordered, key=lambda i: (gains[i], i))


class _AccessState:
    """Mutable bookkeeping of the competitive procedure."""

    def __init__(self, beta: np.ndarray, tau_p: int):
        self.beta = beta
        self.tau_p = tau_p
        self.K, self.L = beta.shape
        self.M: List[Set[int]] = [set() for _ in range(self.K)]
        self.blacklist: List[Set[int]] = [set() for _ in range(self.K)]
        self.D: List[Set[int]] = [set() for _ in range(self.L)]
        self.protected: Set[int] = set()
        self.finished: Set[int] = set()
        self.queue: List[int] = list(range(self.K))
        heapq.heapify(self.queue)
        self.competitions = 0

    def available(self, k: int) -> List[int]:
        return [l for l in range(self.L) if l not in self.M[k] and l not in self.blacklist[k]]

    def drop(self, k: int, l: int) -> None:
        """UE k loses AP l and blacklists it."""
        self.M[k].discard(l)
        self.D[l].discard(k)
        self.blacklist[k].add(l)
        if len(self.blacklist[k]) >= self.L - 1:
            self.protected.add(k)
        if k in self.finished and not self.M[k]:
            self.finished.discard(k)
            heapq.heappush(self.queue, k)
            logger.debug(f"UE {k} lost its last AP {l} and is queued again")

    def serve(self, k: int, l: int) -> None:
        self.M[k].add(l)
        self.D[l].add(k)

    def run_unprotected(self, k: int) -> None:
        while k not in self.protected:
            options = self.available(k)
            if not options:
                return
            l = max(options, key=lambda j: (self.beta[k, j], -j))
            self.serve(k, l)
            if len(self.D[l]) > self.tau_p:
                self.competitions += 1
                loser = _weakest(self.D[l] - self.protected, self.beta[:, l])
                logger.debug(f"AP {l} full: UE {k} contested, UE {loser} loses")
                self.drop(loser, l)
        self.run_protected(k)

    def run_protected(self, k: int) -> None:
        options = self.available(k)
        if not options:
            return
        final_ap = options[0]
        self.serve(k, final_ap)
        if len(self.D[final_ap]) > self.tau_p:
            candidates = self.D[final_ap] - self.protected
            if not candidates:
                raise InfeasibleAccessError(
                    f"Protected UE {k}: its last AP {final_ap} serves only protected UEs"
                )
            evicted = _weakest(candidates, self.beta[:, final_ap])
            logger.debug(f"Protected UE {k} takes AP {final_ap}, evicting UE {evicted}")
            self.drop(evicted, final_ap)


def initial_access(beta: np.ndarray, tau_p: int) -> ServiceMap:
    """
    Competitive initial access and AP selection.

    UEs are processed in ascending index order. Each UE repeatedly takes its
    strongest available AP; when that AP then holds more than tau_p UEs, the
    weakest unprotected UE among them loses the AP and blacklists it. A UE whose
    blacklist reaches L - 1 APs is protected and force-assigned the AP it has
    left, evicting the weakest unprotected incumbent. A finished UE that loses
    its last AP is queued again.

    Args:
        beta: [K, L] large-scale gains.
        tau_p: Pilots per coherence block (per-AP capacity).

    Returns:
        ServiceMap satisfying capacity and coverage.

    Raises:
        InfeasibleAccessError: If K > L * tau_p, or if a protected UE's last AP
            serves only protected UEs.
    """
    beta = np.asarray(beta, dtype=float)
    K, L = beta.shape
    _check_feasible(K, L, tau_p)

    state = _AccessState(beta, tau_p)
    while state.queue:
        k = heapq.heappop(state.queue)
        if k in state.finished:
            continue
        state.run_unprotected(k)
        state.finished.add(k)

    A = np.zeros((L, K), dtype=bool)
    for k, aps in enumerate(state.M):
        A[sorted(aps), k] = True
    service = ServiceMap.from_assignment(A)
    service.check(tau_p)
    logger.debug(
        f"Initial access done: {state.competitions} competitions, "
        f"{len(state.protected)} protected UEs"
    )
    return service


def strongest_ues_access(beta: np.ndarray, tau_p: int) -> ServiceMap:
    """
    Benchmark access: each AP serves its tau_p strongest UEs.

    A UE left without any AP is attached to its strongest AP that has room or
    whose weakest incumbent keeps another serving AP (that incumbent is dropped).

    Args:
        beta: [K, L] large-scale gains.
        tau_p: Per-AP capacity.

    Returns:
        ServiceMap satisfying capacity and coverage.
    """
    beta = np.asarray(beta, dtype=float)
    K, L = beta.shape
    _check_feasible(K, L, tau_p)

    A = np.zeros((L, K), dtype=bool)
    for l in range(L):
        strongest = np.argsort(-beta[:, l], kind="stable")[:tau_p]
        A[l, strongest] = True

    for k in np.flatnonzero(~A.any(axis=0)):
        for l in np.argsort(-beta[k], kind="stable"):
            if A[l].sum() < tau_p:
                A[l, k] = True
                break
            movable = [i for i in np.flatnonzero(A[l]) if A[:, i].sum() > 1]
            if movable:
                A[l, _weakest(movable, beta[:, l])] = False
                A[l, k] = True
                break

    service = ServiceMap.from_assignment(A)
    service.check(tau_p)
    return service
