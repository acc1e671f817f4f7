"""Batch experiment drivers: accuracy sweeps, approximability tables and the stage-ordering study."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
import pandas as pd

from . import presets
from .datagen import GenConfig, generate
from .engine import (NotApproximable, StageDesign, Unanswerable, _Assembler, _row_values, execute,
                     truncated_variance)
from .failure import inject
from .oracle import exact_answer
from .partitioner import partition
from .planner import approximability_table, determine_stage_sequence, plan_query

RUN_COLUMNS = [
    "query", "design", "availability", "replication", "status", "approximable", "group",
    "aggregate", "estimate", "truth", "rel_error", "ci_low", "ci_high", "covered",
    "missing_group_fraction", "exact", "method",
]


@dataclass
class ExperimentConfig:
    """Settings of a failure-replication sweep.

    ``failure_mode`` is ``"fixed"`` (exactly ``round(M * (1 - a))`` chunks
    fail) or ``"bernoulli"`` (each chunk fails with probability ``1 - a``).
    """

    gen: GenConfig = field(default_factory=GenConfig)
    designs: tuple[str, ...] = ("SDWithout",)
    M: int = 20
    availabilities: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    queries: tuple[str, ...] = ("Q6",)
    replications: int = 10
    seed: int = 0
    failure_mode: str = "fixed"
    truncate_at: int | None = 2
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.failure_mode not in ("fixed", "bernoulli"):
            raise ValueError(f"unknown failure mode {self.failure_mode}")
        if self.M < 1:
            raise ValueError("M must be positive")
        for a in self.availabilities:
            if not 0 < a <= 1:
                raise ValueError(f"availability {a} outside (0, 1]")
        unknown = [d for d in self.designs if d not in presets.PRESETS]
        if unknown:
            raise ValueError(f"unknown design {unknown}")
        wl = presets.workload()
        unknown = [q for q in self.queries if q not in wl]
        if unknown:
            raise ValueError(f"unknown query {unknown}")


def _event_seed(base: int, *path: int) -> int:
    return int(np.random.SeedSequence(base, spawn_key=path).generate_state(1)[0])


def _block(args) -> list[dict]:
    config, d_idx, design, q_idx, qname, db = args
    query = presets.workload()[qname]
    scheme = presets.preset(design)
    pdb = partition(db, scheme, config.M, config.seed)
    approximable = bool(plan_query(query, scheme).decision)
    truth = exact_answer(query, db)
    out = []
    for a_idx, a in enumerate(config.availabilities):
        for r in range(config.replications):
            seed = _event_seed(config.seed, d_idx, q_idx, a_idx, r)
            if config.failure_mode == "fixed":
                event = inject(config.M, seed=seed, fixed_unavailable=int(round(config.M * (1 - a))))
            else:
                event = inject(config.M, 1 - a, seed=seed)
            base = {"query": qname, "design": design, "availability": a, "replication": r,
                    "approximable": approximable}
            try:
                rep = execute(query, pdb, event, truncate_at=config.truncate_at)
            except NotApproximable:
                out.append({**base, "status": "not-approximable"})
                continue
            except Unanswerable:
                out.append({**base, "status": "unanswerable"})
                continue
            got = {g.key: g for g in rep.groups}
            missing = 1 - len(set(got) & set(truth)) / len(truth) if truth else 0.0
            for key in sorted(got, key=repr):
                g = got[key]
                for name, est in g.estimates.items():
                    t = truth.get(key, {}).get(name)
                    rel = abs(est.point - t) / abs(t) if t not in (None, 0) else np.nan
                    covered = (est.ci_low <= t <= est.ci_high) if (t is not None and est.ci_low is not None) else (
                        est.point == t if g.exact else np.nan)
                    out.append({**base, "status": "ok", "group": "|".join(map(str, key)),
                                "aggregate": name, "estimate": est.point, "truth": t,
                                "rel_error": rel, "ci_low": est.ci_low, "ci_high": est.ci_high,
                                "covered": covered, "missing_group_fraction": missing,
                                "exact": g.exact, "method": g.method})
    return out


def run(config: ExperimentConfig) -> pd.DataFrame:
    """One row per (query, design, availability, replication, group, aggregate)."""
    db = generate(config.gen)
    blocks = [(config, d_idx, d, q_idx, q, db)
              for d_idx, d in enumerate(config.designs) for q_idx, q in enumerate(config.queries)]
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            parts = list(pool.map(_block, blocks))
    else:
        parts = [_block(b) for b in blocks]
    rows = [r for part in parts for r in part]
    return pd.DataFrame(rows, columns=RUN_COLUMNS)


def approximability_frame(designs=("SDWithout", "SDWith", "WD"),
                          queries=presets.SWEEP_QUERIES) -> pd.DataFrame:
    wl = presets.workload()
    table = approximability_table({d: presets.preset(d) for d in designs}, [wl[q] for q in queries])
    return pd.DataFrame(
        [{"design": d, **{q: "Y" if ok else "N" for q, ok in row.items()}} for d, row in table.items()],
        columns=["design", *queries],
    )


# stage-ordering variance study -------------------------------------------------

@dataclass
class VarianceStudyConfig:
    """Independent per-hierarchy failures with re-randomized cluster placement.

    Each hierarchy gets ``chunks`` chunks of its own; in every replication its
    clusters are placed uniformly at random and a fixed number of its chunks
    fail, leaving the configured availability.
    """

    scale: float = 4.0
    seed: int = 0
    cluster_correlation: float = 1.0
    chunks: int = 100
    availability: dict[str, float] = field(default_factory=lambda: {"H6": 0.03, "H7": 0.8, "H11": 0.9})
    replications: int = 10_000
    query: str = "Q9-sum"
    truncate_at: int = 2


@dataclass
class VarianceStudyResult:
    table: pd.DataFrame
    algorithm_order: tuple[str, ...]
    labels: dict[str, str]
    observed_variance: float
    truth: float
    skipped: int


def variance_study(config: VarianceStudyConfig) -> VarianceStudyResult:
    """Estimated over observed variance for every stage ordering of the three hierarchies."""
    db = generate(GenConfig(scale=config.scale, seed=config.seed,
                            cluster_correlation=config.cluster_correlation))
    scheme = presets.d1()
    query = presets.workload()[config.query]
    pdb = partition(db, scheme, 1, config.seed)
    plan = plan_query(query, scheme)
    rows = _Assembler(pdb, query, plan, np.arange(1)).rows()
    values = _values(query, rows)
    truth = float(values.sum())
    comps = {c.hierarchy: c for c in plan.affected_components}
    names = sorted(comps)
    N = {h: pdb.layouts[h].n_clusters for h in names}
    codes = {h: rows[f"_cl::{comps[h].id}"].to_numpy(dtype=np.int64) for h in names}
    n_fail = {h: int(round(config.chunks * (1 - config.availability[h]))) for h in names}

    # order the stage-ordering rule picks with the expected surviving counts
    expected = [
        replace(comps[h], pi=Fraction(config.availability[h]).limit_denominator(),
                s=Fraction(config.availability[h] * N[h]).limit_denominator())
        for h in names
    ]
    algo = tuple(
        next(c.hierarchy for c in expected if c.id == st.components[0])
        for st in determine_stage_sequence(expected).stages
    )
    orders = list(itertools.permutations(names))
    rng = np.random.default_rng(config.seed)
    estimates, est_vars, skipped = [], {o: [] for o in orders}, 0
    zeros = np.zeros(len(values), dtype=np.int64)
    for _ in range(config.replications):
        alive_rows = np.ones(len(values), dtype=bool)
        s = {}
        for h in names:
            chunk = rng.integers(0, config.chunks, N[h])
            dead = np.zeros(config.chunks, dtype=bool)
            dead[rng.choice(config.chunks, n_fail[h], replace=False)] = True
            alive = ~dead[chunk]
            s[h] = int(alive.sum())
            alive_rows &= alive[codes[h]]
        if min(s.values()) == 0:
            skipped += 1
            continue
        v = values[alive_rows]
        inflation = float(np.prod([N[h] / s[h] for h in names]))
        estimates.append(v.sum() * inflation)
        for order in orders:
            stages = [StageDesign("srswor", s[order[0]] / N[order[0]], N=N[order[0]], n=s[order[0]])]
            stages += [StageDesign("bernoulli", s[h] / N[h]) for h in order[1:]]
            units = [codes[h][alive_rows] for h in order]
            var, _ = truncated_variance(zeros[: len(v)], units, v, stages, config.truncate_at, n_groups=1)
            est_vars[order].append(var[0])
    observed = float(np.var(estimates, ddof=1))
    label = {h: "+".join(sorted(comps[h].cluster_attrs)) for h in names}
    table = pd.DataFrame([
        {"order": "-".join(label[h] for h in o), "estimated_variance": float(np.mean(est_vars[o])),
         "observed_variance": observed, "ratio": float(np.mean(est_vars[o])) / observed,
         "algorithm_order": o == algo}
        for o in orders
    ])
    return VarianceStudyResult(table, algo, label, observed, truth, skipped)


def _values(query, rows: pd.DataFrame) -> np.ndarray:
    agg = query.aggregates[0]
    return _row_values(rows, agg.expr if agg.func != "COUNT" else None).astype(float)
