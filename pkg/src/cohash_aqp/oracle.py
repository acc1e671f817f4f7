"""Ground truth for verification.

Exact query answers come from a plain index nested-loop evaluator over tuple
dictionaries, independent of the pandas engine.  Small sampling designs are
enumerated exhaustively; larger ones are checked by seeded Monte Carlo.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .datagen import Database
from .estimators import InclusionDesign, StageSample
from .query import Predicate, QuerySpec, eval_expr


# exact answers -----------------------------------------------------------

def _to_python(v):
    return v.item() if hasattr(v, "item") else v


def _tuples(db: Database, rel: str) -> list[dict]:
    return [{k: _to_python(v) for k, v in t.items()} for t in db.tuples(rel)]


def _holds(preds: Iterable[Predicate], row: dict) -> bool:
    return all(bool(p.evaluate(row)) for p in preds)


def _join_rows(db: Database, relations: Sequence[str], joins, preds) -> list[dict]:
    """Index nested-loop join; each relation's single-relation predicates filter its scan."""
    tables = {}
    for rel in relations:
        rows = _tuples(db, rel)
        attrs = set(db[rel].columns)
        local = [p for p in preds if p.attributes <= attrs]
        tables[rel] = [r for r in rows if _holds(local, r)]
    partial = [dict()]
    joined: list[str] = []
    remaining = list(relations)
    while remaining:
        # prefer a relation connected to what is already joined
        rel = next((r for r in remaining if any(
            (j.left == r and j.right in joined) or (j.right == r and j.left in joined) for j in joins)),
            remaining[0])
        remaining.remove(rel)
        pairs = []
        for j in joins:
            if j.left == rel and j.right in joined:
                pairs += [(b, a) for a, b in j.pairs]
            elif j.right == rel and j.left in joined:
                pairs += list(j.pairs)
        index: dict[tuple, list[dict]] = {}
        for t in tables[rel]:
            index.setdefault(tuple(t[b] for _, b in pairs), []).append(t)
        nxt = []
        for row in partial:
            for t in index.get(tuple(row[a] for a, _ in pairs), []):
                merged = dict(row)
                merged.update(t)
                nxt.append(merged)
        partial = nxt
        joined.append(rel)
    rest = [p for p in preds if not any(p.attributes <= set(db[r].columns) for r in relations)]
    return [r for r in partial if _holds(rest, r)]


def exact_answer(query: QuerySpec, db: Database) -> dict[tuple, dict[str, Any]]:
    """Exact result as ``{group key: {aggregate name: value}}``.

    SUM and COUNT are Python integers when inputs are integral; AVG is a float.
    Groups failing HAVING are dropped.
    """
    rows = _join_rows(db, query.relations, query.joins, query.where)
    if query.exists is not None:
        nested = query.exists
        inner = _join_rows(db, nested.relations, nested.joins, nested.where)
        keys = {tuple(r[b] for _, b in nested.correlation) for r in inner}
        rows = [r for r in rows if tuple(r[a] for a, _ in nested.correlation) in keys]
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault(tuple(r[g] for g in query.group_by), []).append(r)
    if not query.group_by and not groups:
        groups[()] = []
    out = {}
    for key, members in sorted(groups.items()):
        values = {}
        for agg in query.aggregates:
            if agg.func == "COUNT":
                values[agg.name] = len(members)
                continue
            vals = [_to_python(eval_expr(agg.expr, r)) for r in members]
            if agg.func == "SUM":
                values[agg.name] = sum(vals)
            else:
                values[agg.name] = math.fsum(vals) / len(vals) if vals else float("nan")
        if all(h.evaluate(values) for h in query.having):
            out[key] = values
    return out


# sample spaces ----------------------------------------------------------------

@dataclass
class NestedDesign:
    """A stage design plus, for inner stages, one nested design per population unit."""

    design: InclusionDesign
    inner: list["NestedDesign"] | None = None


@dataclass
class SampleSpace:
    outcomes: list[tuple[StageSample, float]]

    def __len__(self) -> int:
        return len(self.outcomes)

    @property
    def total_probability(self) -> float:
        return math.fsum(p for _, p in self.outcomes)

    def expectation(self, f: Callable[[StageSample], float]) -> float:
        return math.fsum(p * f(s) for s, p in self.outcomes)

    def variance(self, f: Callable[[StageSample], float]) -> float:
        mean = self.expectation(f)
        return math.fsum(p * (f(s) - mean) ** 2 for s, p in self.outcomes)


def _unit_subsets(design: InclusionDesign) -> list[tuple[tuple[int, ...], float]]:
    N = design.n_population
    if design.kind == "census":
        return [(tuple(range(N)), 1.0)]
    if design.kind == "srswor":
        combos = list(itertools.combinations(range(N), design.n_sample))
        return [(c, 1.0 / len(combos)) for c in combos]
    if design.kind == "bernoulli":
        p = design.p
        out = []
        for r in range(N + 1):
            for c in itertools.combinations(range(N), r):
                out.append((c, p ** r * (1 - p) ** (N - r)))
        return out
    if design.kind == "chunk_induced":
        M, a = design.n_chunks, design.n_sample
        combos = list(itertools.combinations(range(M), a))
        out = []
        for chunks in combos:
            units = tuple(int(u) for u in np.flatnonzero(np.isin(design.chunk_of, chunks)))
            out.append((units, 1.0 / len(combos)))
        return out
    raise ValueError(f"unknown design kind {design.kind}")


def _space_size(spec: NestedDesign) -> int:
    total = 0
    for units, _ in _unit_subsets(spec.design):
        size = 1
        for u in units:
            size *= _space_size(spec.inner[u]) if spec.inner is not None else 1
        total += size
    return total


def enumerate_design(spec: NestedDesign | InclusionDesign, population: Sequence, limit: int = 10 ** 6) -> SampleSpace:
    """Every possible sample with its probability.

    ``population`` mirrors the nesting: a list of unit values for the last
    stage, or a list of sub-populations (one per unit) for inner stages.
    """
    if isinstance(spec, InclusionDesign):
        spec = NestedDesign(spec)
    if len(population) != spec.design.n_population:
        raise ValueError("population size does not match the design")
    if _space_size(spec) > limit:
        raise ValueError("enumerate too large")
    return SampleSpace(list(_enumerate(spec, population)))


def _enumerate(spec: NestedDesign, population: Sequence):
    for units, prob in _unit_subsets(spec.design):
        if spec.inner is None:
            vals = [population[u] for u in units]
            yield StageSample(np.array(units, dtype=np.int64), spec.design, values=np.array(vals, dtype=float)), prob
            continue
        inner_spaces = [list(_enumerate(spec.inner[u], population[u])) for u in units]
        for combo in itertools.product(*inner_spaces):
            p = prob
            subs = []
            for sub, q in combo:
                p *= q
                subs.append(sub)
            yield StageSample(np.array(units, dtype=np.int64), spec.design, subsamples=subs), p


# Monte Carlo -------------------------------------------------------------------

class Welford:
    """Numerically stable streaming mean and variance."""

    def __init__(self) -> None:
        self.n = 0
        self.mean = 0.0
        self._m2 = 0.0

    def add(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self._m2 += d * (x - self.mean)

    @property
    def variance(self) -> float:
        """Population variance of the values seen (divisor n)."""
        return self._m2 / self.n if self.n else 0.0

    @property
    def sample_variance(self) -> float:
        return self._m2 / (self.n - 1) if self.n > 1 else 0.0


@dataclass(frozen=True)
class MonteCarloResult:
    mean: float
    variance: float
    replications: int
    coverage: float | None = None


def monte_carlo(procedure: Callable[[np.random.Generator], Any], replications: int, seed: int = 0,
                truth: float | None = None) -> MonteCarloResult:
    """Run ``procedure`` with independent per-replication generators.

    ``procedure`` returns either a point value or ``(point, ci_low, ci_high)``;
    coverage of ``truth`` is reported when intervals are returned.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    seqs = np.random.SeedSequence(seed).spawn(replications)
    stats = Welford()
    covered, with_ci = 0, 0
    for ss in seqs:
        out = procedure(np.random.default_rng(ss))
        if isinstance(out, tuple):
            point, lo, hi = out
            with_ci += 1
            if truth is not None and lo <= truth <= hi:
                covered += 1
        else:
            point = out
        stats.add(float(point))
    coverage = covered / with_ci if (with_ci and truth is not None) else None
    return MonteCarloResult(stats.mean, stats.sample_variance, stats.n, coverage)
