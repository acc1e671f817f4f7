"""Chunk failure and straggler injection, and the sampling metadata it induces."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .partitioner import PartitionedDatabase
from ._validation import check_positive_int


@dataclass(frozen=True)
class StragglerModel:
    """Two-point latency model; chunks slower than ``timeout_ms`` count as unavailable."""

    slow_prob: float = 0.0
    fast_ms: float = 10.0
    slow_ms: float = 1000.0
    timeout_ms: float = float("inf")

    def __post_init__(self) -> None:
        if not 0 <= self.slow_prob <= 1:
            raise ValueError("slow_prob must lie in [0, 1]")


@dataclass(frozen=True)
class FailureEvent:
    M: int
    unavailable: frozenset[int]
    causes: Mapping[int, str] = field(default_factory=dict)
    p_f: float = 0.0
    seed: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "unavailable", frozenset(int(k) for k in self.unavailable))
        if any(k < 0 or k >= self.M for k in self.unavailable):
            raise ValueError("unavailable chunk id out of range")

    @property
    def surviving(self) -> np.ndarray:
        mask = np.ones(self.M, dtype=bool)
        mask[list(self.unavailable)] = False
        return np.flatnonzero(mask)

    @classmethod
    def none(cls, M: int) -> "FailureEvent":
        return cls(M, frozenset())


def inject(M: int, p_f: float = 0.0, seed: int = 0, *, fixed_unavailable: int | None = None,
           stragglers: StragglerModel | None = None) -> FailureEvent:
    """Draw the set of unavailable chunks.

    Parameters
    ----------
    M : int
        Chunk count.
    p_f : float
        Independent per-chunk failure probability, in [0, 1).
    seed : int
    fixed_unavailable : int, optional
        Fail exactly this many chunks chosen uniformly instead of Bernoulli losses.
    stragglers : StragglerModel, optional
        Latency model applied to chunks that did not fail.
    """
    check_positive_int(M, "M")
    if not 0 <= p_f < 1:
        raise ValueError("total loss" if p_f >= 1 else "p_f must be non-negative")
    rng = np.random.default_rng(seed)
    if fixed_unavailable is not None:
        if not 0 <= fixed_unavailable <= M:
            raise ValueError("fixed_unavailable out of range")
        failed = np.zeros(M, dtype=bool)
        failed[rng.choice(M, fixed_unavailable, replace=False)] = True
    else:
        failed = rng.random(M) < p_f
    causes = {int(k): "failed" for k in np.flatnonzero(failed)}
    if stragglers is not None:
        slow = rng.random(M) < stragglers.slow_prob
        latency = np.where(slow, stragglers.slow_ms, stragglers.fast_ms)
        for k in np.flatnonzero((latency > stragglers.timeout_ms) & ~failed):
            causes[int(k)] = "straggler"
    return FailureEvent(M, frozenset(causes), causes, p_f, seed)


@dataclass(frozen=True)
class HierarchyAvailability:
    pi: float
    s: int
    N_known: int | None
    N_hat: float
    affected: bool


@dataclass(frozen=True)
class AvailabilityProfile:
    hierarchies: Mapping[str, HierarchyAvailability]
    surviving_chunks: int
    M: int

    def __getitem__(self, name: str) -> HierarchyAvailability:
        return self.hierarchies[name]

    @property
    def failed_hierarchies(self) -> frozenset[str]:
        return frozenset(n for n, h in self.hierarchies.items() if h.affected)


def profile(pdb: PartitionedDatabase, event: FailureEvent, use_known_counts: bool = True) -> AvailabilityProfile:
    """Surviving cluster counts and cluster inclusion rates per hierarchy.

    With ``use_known_counts`` the true cluster count divides ``s``; otherwise
    the count is estimated as ``M * s / surviving_chunks``.
    """
    if event.M != pdb.M:
        raise ValueError("event and partitioning disagree on the chunk count")
    alive = event.surviving
    if len(alive) == 0:
        raise ValueError("query unanswerable: no chunk survives")
    out = {}
    for name in pdb.layouts:
        tallies = pdb.chunk_tallies(name)
        s = int(tallies[alive].sum())
        N = int(tallies.sum())
        N_hat = pdb.M * s / len(alive)
        denom = N if use_known_counts else N_hat
        pi = s / denom if denom > 0 else 0.0
        out[name] = HierarchyAvailability(pi, s, N if use_known_counts else None, N_hat, s < N)
    return AvailabilityProfile(out, len(alive), pdb.M)
