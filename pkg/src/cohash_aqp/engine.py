"""Query execution over the surviving chunks of a partitioned database."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import pandas as pd

from .catalog import JoinCondition
from .estimators import Estimate, make_estimate
from .failure import FailureEvent, profile
from .partitioner import PartitionedDatabase
from .planner import Component, GroupByKind, QueryPlan, StagePlan, plan_query
from .presets import GRAPH
from .query import Predicate, QuerySpec, eval_expr


class NotApproximable(RuntimeError):
    """The planner refused the query under the current failures."""


class Unanswerable(RuntimeError):
    """A required component has no surviving data."""


# variance of nested cluster samples ---------------------------------------

@dataclass(frozen=True)
class StageDesign:
    """Sampling model of one stage: ``srswor`` of ``n`` out of ``N`` units, or ``bernoulli``."""

    kind: str
    pi: float
    N: float | None = None
    n: int | None = None


def truncated_variance(groups: np.ndarray, units: Sequence[np.ndarray], values: np.ndarray,
                       stages: Sequence[StageDesign], truncate_at: int | None = 2,
                       n_groups: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Per-group truncated variance estimate of the nested HT total.

    Parameters
    ----------
    groups : int array, one entry per row
        Dense group ids ``0..G-1``.
    units : list of int arrays
        ``units[k]`` is the stage-``k`` unit of each row; units are nested, so
        a stage-``k`` unit is identified by the codes of stages ``0..k``.
    values : float array
        Row contributions.
    stages : list of StageDesign
    truncate_at : int or None
        Number of leading stage terms kept.
    n_groups : int, optional
        Group count when some groups have no rows.

    Returns
    -------
    variance, clamped : arrays of length G
    """
    K = len(stages)
    groups = np.asarray(groups, dtype=np.int64)
    if n_groups is None:
        n_groups = int(groups.max()) + 1 if len(groups) else 0
    var = np.zeros(n_groups)
    if K == 0 or n_groups == 0 or len(groups) == 0:
        return var, np.zeros(n_groups, dtype=bool)
    keep = K if truncate_at is None else min(K, truncate_at)
    # dense ids of the nested units (group, u0, ..., uk) for every level k
    level_ids, level_groups, cur = [], [], groups
    for k in range(K):
        u = np.asarray(units[k], dtype=np.int64)
        _, cur = np.unique(cur * (int(u.max()) + 1) + u, return_inverse=True)
        cur = cur.astype(np.int64)
        n_units = int(cur.max()) + 1
        g_of = np.zeros(n_units, dtype=np.int64)
        g_of[cur] = groups
        level_ids.append(cur)
        level_groups.append(g_of)
    totals = [None] * K
    totals[K - 1] = np.bincount(level_ids[K - 1], weights=values, minlength=len(level_groups[K - 1]))
    for k in range(K - 1, 0, -1):
        parent = np.zeros(len(level_groups[k]), dtype=np.int64)
        parent[level_ids[k]] = level_ids[k - 1]
        totals[k - 1] = np.bincount(parent, weights=totals[k] / stages[k].pi,
                                    minlength=len(level_groups[k - 1]))
    weight = 1.0
    for k in range(keep):
        st = stages[k]
        g = level_groups[k]
        v = totals[k]
        if k == 0 and st.kind == "srswor":
            n, N = st.n, st.N
            s1 = np.bincount(g, weights=v, minlength=n_groups)
            s2 = np.bincount(g, weights=v * v, minlength=n_groups)
            if n == 1 and N > 1:
                term = (1 - 1 / N) * (N * s1) ** 2
            elif n <= 1 or n >= N:
                term = np.zeros(n_groups)
            else:
                s_sq = (s2 - s1 * s1 / n) / (n - 1)
                term = N * N * (1 - n / N) * s_sq / n
        else:
            term = np.bincount(g, weights=(1 - st.pi) / st.pi ** 2 * v * v, minlength=n_groups)
        var += term / weight
        weight *= st.pi
    clamped = var < 0
    var[clamped] = 0.0
    return var, clamped


# reports ---------------------------------------------------------------------

@dataclass(frozen=True)
class GroupResult:
    key: tuple
    estimates: dict[str, Estimate]
    exact: bool
    method: str


@dataclass
class EstimateReport:
    query: str
    group_by: tuple[str, ...]
    aggregates: tuple[str, ...]
    groups: list[GroupResult]
    exact: bool
    method: str
    stage_plan: StagePlan | None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[tuple, dict[str, float]]:
        return {g.key: {a: e.point for a, e in g.estimates.items()} for g in self.groups}

    def value(self, aggregate: str, key: tuple = ()) -> float:
        for g in self.groups:
            if g.key == key:
                return g.estimates[aggregate].point
        raise KeyError(key)

    def estimate(self, aggregate: str, key: tuple = ()) -> Estimate:
        for g in self.groups:
            if g.key == key:
                return g.estimates[aggregate]
        raise KeyError(key)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for g in self.groups:
            for name in self.aggregates:
                e = g.estimates.get(name)
                if e is None:
                    continue
                row = dict(zip(self.group_by, g.key))
                row.update({
                    "aggregate": name, "estimate": e.point, "variance": e.variance,
                    "ci_low": e.ci_low, "ci_high": e.ci_high, "exact": g.exact, "method": g.method,
                })
                rows.append(row)
        cols = list(self.group_by) + ["aggregate", "estimate", "variance", "ci_low", "ci_high", "exact", "method"]
        return pd.DataFrame(rows, columns=cols)

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.to_frame().to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()


def exact_estimate(value: float) -> Estimate:
    return Estimate(value, 0.0, None, None)


# frame assembly ------------------------------------------------------------------

def _apply_predicates(df: pd.DataFrame, preds: Sequence[Predicate]) -> pd.DataFrame:
    if not preds or len(df) == 0:
        return df
    mask = np.ones(len(df), dtype=bool)
    for p in preds:
        mask &= np.asarray(p.evaluate(df), dtype=bool)
    return df[mask]


def deduplicate(df: pd.DataFrame, rid_cols: Sequence[str], tag: str | None = None) -> pd.DataFrame:
    """Keep one copy of each logical row (identified by its source row ids).

    ``tag`` names the provenance column that must be present for tuples that
    may repeat across clusters.
    """
    if tag is not None and tag not in df.columns:
        raise RuntimeError(f"internal error: provenance column {tag} missing")
    if not rid_cols:
        return df
    return df.drop_duplicates(subset=list(rid_cols), keep="first")


def _merge(left: pd.DataFrame, right: pd.DataFrame, conds: Sequence[JoinCondition],
           left_rels: set[str], extra: Sequence[str] = ()) -> pd.DataFrame:
    lk, rk = list(extra), list(extra)
    for c in conds:
        c = c if c.left in left_rels else c.reversed()
        lk += list(c.left_attrs)
        rk += list(c.right_attrs)
    if not lk:
        return left.merge(right, how="cross")
    return left.merge(right, left_on=lk, right_on=rk, how="inner")


def _rel_preds(query_preds: Sequence[Predicate], attrs: Sequence[str]) -> list[Predicate]:
    attrs = set(attrs)
    return [p for p in query_preds if p.attributes <= attrs]


class _Assembler:
    """Builds the joined rows of a query from surviving chunks."""

    def __init__(self, pdb: PartitionedDatabase, query: QuerySpec, plan: QueryPlan,
                 surviving: np.ndarray):
        self.pdb = pdb
        self.query = query
        self.plan = plan
        self.alive = np.zeros(pdb.M, dtype=bool)
        self.alive[surviving] = True
        self.db = pdb.db
        self.cache = pdb.__dict__.setdefault("_component_cache", {})

    def _joins_within(self, rels: set[str], joins) -> list[JoinCondition]:
        return [j for j in joins if j.left in rels and j.right in rels]

    def component_full(self, comp: Component) -> pd.DataFrame:
        """Component rows over every chunk, with cluster and chunk tags."""
        key = (comp.id, comp.relations, self.query.where, self.query.joins)
        if key in self.cache:
            return self.cache[key]
        h = comp.hierarchy
        cl, ch = f"_cl::{comp.id}", f"_chunk::{comp.id}"
        frames = {}
        for rel in comp.relations:
            src = self.db[rel]
            if h is None:
                df = src.copy()
                df[f"_rid::{rel}"] = np.arange(len(src))
            else:
                m = self.pdb.members(h, rel)
                df = src.iloc[m["rid"].to_numpy()].reset_index(drop=True)
                df[f"_rid::{rel}"] = m["rid"].to_numpy()
                df[cl] = m["cluster"].to_numpy()
                df[ch] = m["chunk"].to_numpy()
            frames[rel] = _apply_predicates(df, _rel_preds(self.query.where, src.columns))
        pq_edges = [(a, b) for a, b in self.plan.pq.edges if a in comp.relations and b in comp.relations]
        done = {comp.sub_root}
        out = frames[comp.sub_root]
        used: set[frozenset] = set()
        while len(done) < len(comp.relations):
            nxt = next(
                (b if a in done else a) for a, b in pq_edges
                if (a in done) != (b in done)
            )
            conds = [j for j in self.query.joins
                     if {j.left, j.right} <= done | {nxt} and nxt in (j.left, j.right)]
            used.update(frozenset((j.left, j.right)) for j in conds)
            extra = [cl, ch] if h is not None else []
            out = _merge(out, frames[nxt], conds, done, extra)
            done.add(nxt)
        self.cache[key] = out
        return out

    def component_rows(self, comp: Component) -> pd.DataFrame:
        full = self.component_full(comp)
        if comp.hierarchy is None:
            return full
        ch = f"_chunk::{comp.id}"
        alive = full[self.alive[full[ch].to_numpy()]]
        rids = [f"_rid::{r}" for r in comp.relations]
        return deduplicate(alive, rids, tag=f"_cl::{comp.id}")

    def ordered_components(self) -> list[Component]:
        rank = {}
        for i, st in enumerate(self.plan.stage_plan.stages):
            for cid in st.components:
                rank[cid] = i
        return sorted(self.plan.pq.components, key=lambda c: (rank.get(c.id, len(rank)), c.id))

    def rows(self) -> pd.DataFrame:
        comps = self.ordered_components()
        pending = list(comps)
        first = pending.pop(0)
        out = self.component_rows(first)
        rels = set(first.relations)
        used = {frozenset((j.left, j.right)) for j in self._joins_within(rels, self.query.joins)}
        while pending:
            idx = next(
                (i for i, c in enumerate(pending)
                 if any((j.left in rels and j.right in c.relations) or (j.right in rels and j.left in c.relations)
                        for j in self.query.joins)),
                0,
            )
            comp = pending.pop(idx)
            conds = [j for j in self.query.joins
                     if (j.left in rels and j.right in comp.relations) or (j.right in rels and j.left in comp.relations)]
            out = _merge(out, self.component_rows(comp), conds, rels)
            used.update(frozenset((j.left, j.right)) for j in conds)
            rels |= set(comp.relations)
            used.update(frozenset((j.left, j.right)) for j in self._joins_within(set(comp.relations), self.query.joins))
        leftover = [p for p in self.query.where
                    if not any(p.attributes <= set(self.db[r].columns) for r in self.query.relations)]
        out = _apply_predicates(out, leftover)
        for j in self.query.joins:
            mask = np.ones(len(out), dtype=bool)
            for a, b in j.pairs:
                mask &= (out[a].to_numpy() == out[b].to_numpy())
            out = out[mask]
        if self.query.exists is not None:
            out = self._semi_join(out)
        return out.reset_index(drop=True)

    def _inner_relation(self, rel: str) -> pd.DataFrame:
        src = self.db[rel]
        if rel in self.pdb.scheme.replicated or self.alive.all():
            return src
        rids = []
        for h in self.pdb.scheme.hierarchies_with(rel):
            m = self.pdb.members(h.name, rel)
            rids.append(m["rid"].to_numpy()[self.alive[m["chunk"].to_numpy()]])
        keep = np.unique(np.concatenate(rids)) if rids else np.zeros(0, dtype=np.int64)
        return src.iloc[keep]

    def _semi_join(self, out: pd.DataFrame) -> pd.DataFrame:
        nested = self.query.exists
        inner = None
        rels: set[str] = set()
        for rel in nested.relations:
            df = _apply_predicates(self._inner_relation(rel), _rel_preds(nested.where, self.db[rel].columns))
            if inner is None:
                inner = df
            else:
                conds = [j for j in nested.joins if {j.left, j.right} <= rels | {rel} and rel in (j.left, j.right)]
                inner = _merge(inner, df, conds, rels)
            rels.add(rel)
        leftover = [p for p in nested.where
                    if not any(p.attributes <= set(self.db[r].columns) for r in nested.relations)]
        inner = _apply_predicates(inner, leftover)
        outer_cols = [a for a, _ in nested.correlation]
        inner_cols = [b for _, b in nested.correlation]
        wanted = pd.MultiIndex.from_frame(inner[inner_cols].drop_duplicates())
        have = pd.MultiIndex.from_frame(out[outer_cols])
        return out[have.isin(wanted)]


# execution -------------------------------------------------------------------

def _row_values(rows: pd.DataFrame, expr: str | None) -> np.ndarray:
    if expr is None:
        return np.ones(len(rows), dtype=np.int64)
    env = {c: rows[c].to_numpy() for c in rows.columns if not c.startswith("_")}
    out = eval_expr(expr, env)
    return np.broadcast_to(np.asarray(out), (len(rows),)).copy()


def _group_ids(rows: pd.DataFrame, group_by: Sequence[str]) -> tuple[np.ndarray, list[tuple]]:
    if not group_by:
        return np.zeros(len(rows), dtype=np.int64), [()]
    if len(rows) == 0:
        return np.zeros(0, dtype=np.int64), []
    grouped = rows.groupby(list(group_by), sort=True)
    ids = grouped.ngroup().to_numpy(dtype=np.int64)
    keys = [k if isinstance(k, tuple) else (k,) for k in grouped.groups.keys()]
    keys = [tuple(v.item() if hasattr(v, "item") else v for v in k) for k in keys]
    return ids, keys


def _group_sums(ids: np.ndarray, values: np.ndarray, n_groups: int) -> np.ndarray:
    if np.issubdtype(values.dtype, np.integer):
        out = np.zeros(n_groups, dtype=np.int64)
        np.add.at(out, ids, values)
        return out
    return np.bincount(ids, weights=values.astype(float), minlength=n_groups)


def _py(x):
    return x.item() if hasattr(x, "item") else x


def execute(query: QuerySpec, pdb: PartitionedDatabase, event: FailureEvent | None = None, *,
            truncate_at: int | None = 2, level: float = 0.95, use_known_counts: bool = True,
            pi_scale: float = 1.0) -> EstimateReport:
    """Answer ``query`` from the chunks that survive ``event``.

    Parameters
    ----------
    truncate_at : int or None
        Stage terms kept in the variance estimate.
    use_known_counts : bool
        Use true cluster counts; otherwise estimate them from surviving chunks.
    pi_scale : float
        Common factor applied to every inclusion rate, e.g. ``1 - p_f``.  The
        ratio-normalized point estimate does not depend on it.
    """
    event = event or FailureEvent.none(pdb.M)
    prof = profile(pdb, event, use_known_counts)
    plan = plan_query(query, pdb.scheme, prof)
    if not plan.decision:
        raise NotApproximable(plan.decision.reason)
    for comp in plan.affected_components:
        if prof[comp.hierarchy].s == 0:
            raise Unanswerable(f"unanswerable: no surviving clusters of {comp.hierarchy}")
    rows = _Assembler(pdb, query, plan, event.surviving).rows()
    ids, keys = _group_ids(rows, query.group_by)
    n_groups = len(keys)
    diagnostics = {
        "surviving_chunks": prof.surviving_chunks,
        "pi": {n: prof[n].pi * pi_scale for n in prof.hierarchies},
        "failed_hierarchies": sorted(plan.failed),
        "clamped": 0,
    }
    exact = plan.exact
    if exact:
        return _exact_report(query, rows, ids, keys, plan, diagnostics)

    case = plan.group_case
    kept = [st for st in plan.stage_plan.stages
            if case.kind is not GroupByKind.RECLUSTERED or st.cluster_attrs - GRAPH.canonical_set(query.group_by)]
    stages, units, inflation = [], [], 1.0
    for i, st in enumerate(kept):
        hier_counts = [(prof[h].N_known if use_known_counts else prof[h].N_hat, prof[h].s) for h in st.hierarchies]
        for N, s in hier_counts:
            inflation *= N / s
        pi = float(st.pi) * pi_scale
        if i == 0 and len(st.hierarchies) == 1:
            N, s = hier_counts[0]
            stages.append(StageDesign("srswor", s / N, N=N, n=s))
        else:
            stages.append(StageDesign("bernoulli", pi / pi_scale))
        codes = rows[[f"_cl::{cid}" for cid in st.components]]
        units.append(codes.groupby(list(codes.columns), sort=False).ngroup().to_numpy()
                     if len(codes) else np.zeros(0, dtype=np.int64))
    method = "one-stage" if len(stages) == 1 else "two-stage-truncated"
    groups = [dict() for _ in range(n_groups)]
    clamped_total = 0

    def total_and_var(vals):
        nonlocal clamped_total
        tot = _group_sums(ids, vals, n_groups).astype(float) * inflation
        var, cl = truncated_variance(ids, units, vals.astype(float), stages, truncate_at, n_groups)
        clamped_total += int(cl.sum())
        return tot, var

    count_vals = np.ones(len(rows), dtype=np.int64)
    count_tot, count_var = None, None
    for agg in query.aggregates:
        if agg.func in ("SUM", "COUNT"):
            tot, var = total_and_var(_row_values(rows, agg.expr) if agg.func == "SUM" else count_vals)
            for g in range(n_groups):
                groups[g][agg.name] = make_estimate(tot[g], var[g], level)
        else:
            if count_tot is None:
                count_tot, count_var = total_and_var(count_vals)
            y = _row_values(rows, agg.expr).astype(float)
            y_tot = _group_sums(ids, y, n_groups) * inflation
            ratio = np.divide(y_tot, count_tot, out=np.zeros(n_groups), where=count_tot > 0)
            resid = y - ratio[ids]
            var, cl = truncated_variance(ids, units, resid, stages, truncate_at, n_groups)
            clamped_total += int(cl.sum())
            for g in range(n_groups):
                if count_tot[g] > 0:
                    groups[g][agg.name] = make_estimate(ratio[g], var[g] / count_tot[g] ** 2, level)
    diagnostics["clamped"] = clamped_total
    results = [GroupResult(keys[g], groups[g], False, method) for g in range(n_groups)]
    return EstimateReport(query.name, query.group_by, tuple(a.name for a in query.aggregates),
                          results, False, method, plan.stage_plan, diagnostics)


def _exact_report(query, rows, ids, keys, plan, diagnostics) -> EstimateReport:
    n_groups = len(keys)
    sums = {}
    count = _group_sums(ids, np.ones(len(rows), dtype=np.int64), n_groups)
    results = []
    for agg in query.aggregates:
        if agg.func == "SUM":
            sums[agg.name] = _group_sums(ids, _row_values(rows, agg.expr), n_groups)
        elif agg.func == "COUNT":
            sums[agg.name] = count
        else:
            tot = _group_sums(ids, _row_values(rows, agg.expr).astype(float), n_groups)
            sums[agg.name] = tot / np.maximum(count, 1)
    for g in range(n_groups):
        values = {name: _py(arr[g]) for name, arr in sums.items()}
        if not all(h.evaluate(values) for h in query.having):
            continue
        results.append(GroupResult(keys[g], {n: exact_estimate(v) for n, v in values.items()}, True, "exact"))
    return EstimateReport(query.name, query.group_by, tuple(a.name for a in query.aggregates),
                          results, True, "exact", plan.stage_plan, diagnostics)
