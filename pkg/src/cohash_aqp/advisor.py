"""Co-hash scheme recommendation from a query workload.

Schema edges are weighted by the size of the smaller relation times how often
the workload joins along them.  Maximum-weight spanning trees of that graph
seed candidate hierarchies; each candidate rooting is scored with the
partitioning cost measured on a sample database.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np
import pandas as pd
from networkx.algorithms.tree.mst import SpanningTreeIterator

from .catalog import CoHashHierarchy, CoHashScheme, SchemaGraph
from .datagen import Database
from .engine import _Assembler, _row_values
from .failure import FailureEvent, profile
from .partitioner import partition
from .planner import plan_query
from .query import QuerySpec

CV_FLOOR = 1e-6
CV_FALLBACK = 1.0
PENALTY_FACTOR = 10.0


@dataclass
class AnnotatedSchemaGraph:
    graph: SchemaGraph
    weights: dict[frozenset, float]

    def to_networkx(self, drop_zero: bool = True) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(sorted(self.graph.relations))
        for edge, w in sorted(self.weights.items(), key=lambda kv: sorted(kv[0])):
            if w < 0:
                raise ValueError("edge weights must be non-negative")
            if w > 0 or not drop_zero:
                a, b = sorted(edge)
                g.add_edge(a, b, weight=w)
        return g


def join_frequencies(graph: SchemaGraph, workload: Iterable[QuerySpec]) -> dict[frozenset, int]:
    freq = {e: 0 for e in graph.edges}
    for q in workload:
        pairs = {frozenset((j.left, j.right)) for j in q.joins}
        if q.exists is not None:
            for outer_attr, inner_attr in q.exists.correlation:
                pairs.add(frozenset((graph.owner(outer_attr), graph.owner(inner_attr))))
            pairs |= {frozenset((j.left, j.right)) for j in q.exists.joins}
        for p in pairs:
            if p in freq:
                freq[p] += 1
    return freq


def annotate(graph: SchemaGraph, workload: Iterable[QuerySpec],
             sizes: Mapping[str, int] | Database) -> AnnotatedSchemaGraph:
    """Weight each schema edge by ``min(|R|, |S|)`` times its join frequency."""
    if isinstance(sizes, Database):
        sizes = {r: sizes.size(r) for r in sizes.names()}
    freq = join_frequencies(graph, workload)
    weights = {}
    for e in graph.edges:
        a, b = sorted(e)
        weights[e] = float(min(sizes.get(a, 0), sizes.get(b, 0)) * freq[e])
    return AnnotatedSchemaGraph(graph, weights)


def _tree_weight(g: nx.Graph, edges) -> float:
    return sum(g.edges[e]["weight"] for e in edges)


def _edge_key(e) -> tuple:
    return tuple(sorted(e))


def max_spanning_forests(g: nx.Graph, rel_tol: float = 1e-12) -> list[list[tuple[str, str]]]:
    """Every maximum-weight spanning forest, one tree per connected component."""
    per_component = []
    for nodes in sorted(nx.connected_components(g), key=lambda c: sorted(c)):
        sub = g.subgraph(nodes)
        if sub.number_of_edges() == 0:
            per_component.append([[]])
            continue
        trees, best = [], None
        for t in SpanningTreeIterator(sub, weight="weight", minimum=False):
            w = t.size(weight="weight")
            if best is None:
                best = w
            if w < best - rel_tol * max(abs(best), 1.0):
                break
            trees.append(sorted(_edge_key(e) for e in t.edges()))
        per_component.append(sorted(trees))
    return [sum(combo, []) for combo in itertools.product(*per_component)]


def brute_force_max_spanning_weight(g: nx.Graph) -> float:
    """Reference maximum spanning-forest weight by trying every edge subset of forest size."""
    k = g.number_of_nodes() - nx.number_connected_components(g)
    best = 0.0
    for combo in itertools.combinations(g.edges(data="weight"), k):
        h = nx.Graph()
        h.add_nodes_from(g.nodes)
        h.add_edges_from((a, b) for a, b, _ in combo)
        if nx.is_forest(h) and nx.number_connected_components(h) == nx.number_connected_components(g):
            best = max(best, sum(w for _, _, w in combo))
    return best


def rooted_hierarchy(graph: SchemaGraph, nodes: Iterable[str], edges: Sequence[tuple[str, str]],
                     root: str, name: str) -> CoHashHierarchy:
    """Orient a tree away from ``root`` and hash the root on its key."""
    t = nx.Graph()
    t.add_nodes_from(nodes)
    t.add_edges_from(edges)
    children = []
    for parent, child in nx.bfs_edges(t, root):
        cond = graph.edge(child, parent)
        children.append((child, parent, list(cond.pairs)))
    return CoHashHierarchy.build(name, root, graph.key(root), children, graph)


def candidate_schemes(annotated: AnnotatedSchemaGraph,
                      replicate: Iterable[str] = ()) -> list[CoHashScheme]:
    """Every rooting of every maximum spanning forest; replicated relations are left out of the trees."""
    replicate = frozenset(replicate)
    g = annotated.to_networkx()
    g.remove_nodes_from(replicate)
    graph = annotated.graph
    out = []
    for forest in max_spanning_forests(g):
        f = nx.Graph()
        f.add_nodes_from(g.nodes)
        f.add_edges_from(forest)
        trees = [sorted(c) for c in sorted(nx.connected_components(f), key=lambda c: sorted(c))]
        for roots in itertools.product(*trees):
            hs = []
            for nodes, root in zip(trees, roots):
                sub_edges = [e for e in forest if e[0] in nodes]
                hs.append(rooted_hierarchy(graph, nodes, sub_edges, root, f"T_{root}"))
            out.append(CoHashScheme(tuple(hs), replicate))
    return out


# cost ------------------------------------------------------------------------

@dataclass
class QueryCost:
    query: str
    clustering: float
    correlation: float
    stages: int
    approximable: bool
    penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.penalty if not self.approximable else self.clustering + self.correlation


@dataclass
class PartitionCost:
    queries: list[QueryCost] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(q.total for q in self.queries))


def within_cluster_cv(clusters: np.ndarray, values: np.ndarray) -> float:
    """Average within-cluster coefficient of variation of ``values``.

    Degenerate cases (no cluster with two rows, or constant values as in
    COUNT) fall back to ``CV_FALLBACK``.
    """
    if len(values) == 0:
        return CV_FALLBACK
    df = pd.DataFrame({"c": clusters, "v": values.astype(float)})
    stats = df.groupby("c")["v"].agg(["mean", "std", "size"])
    stats = stats[(stats["size"] > 1) & (stats["mean"].abs() > 0)]
    if len(stats) == 0:
        return CV_FALLBACK
    cv = float((stats["std"] / stats["mean"].abs()).mean())
    return cv if cv > CV_FLOOR else CV_FALLBACK


def correlation_term(N: float, K: int) -> float:
    if K == 0 or N <= 0:
        return 0.0
    return float(sum((N - 1) ** (K - k) / N ** K for k in range(1, K + 1)))


def clustering_term(sizes: np.ndarray, cv_y: float) -> float:
    """``mean size * (cv of sizes / cv_y)^2``."""
    if len(sizes) == 0:
        return 0.0
    mean = float(np.mean(sizes))
    cv_n = float(np.std(sizes) / mean) if mean > 0 else 0.0
    return mean * (cv_n / (cv_y if cv_y > CV_FLOOR else CV_FALLBACK)) ** 2


def scheme_hierarchies(scheme: CoHashScheme) -> frozenset[str]:
    return frozenset(h.name for h in scheme.hierarchies)


def cost(scheme: CoHashScheme, workload: Sequence[QuerySpec], sample_db: Database,
         M: int = 10, seed: int = 0) -> PartitionCost:
    """Partitioning cost of ``scheme``, measured on a one-in-``M`` cluster sample of ``sample_db``."""
    pdb = partition(sample_db, scheme, M, seed)
    alive = np.array([0])
    prof = profile(pdb, FailureEvent(M, frozenset(range(1, M))))
    result = []
    for q in workload:
        plan = plan_query(q, scheme, prof, failed=scheme_hierarchies(scheme))
        if not plan.decision:
            result.append(QueryCost(q.name, 0.0, 0.0, len(plan.stage_plan), False))
            continue
        rows = _Assembler(pdb, q, plan, alive).rows()
        agg = q.aggregates[0]
        values = _row_values(rows, agg.expr if agg.func != "COUNT" else None)
        clus = 0.0
        for st in plan.stage_plan.stages:
            col = f"_cl::{st.components[0]}"
            codes = rows[col].to_numpy() if col in rows else np.zeros(0, dtype=np.int64)
            _, sizes = np.unique(codes, return_counts=True)
            clus += clustering_term(sizes, within_cluster_cv(codes, values))
        K = len(plan.stage_plan)
        N = float(plan.stage_plan.stages[0].s) if K else 0.0
        result.append(QueryCost(q.name, clus, correlation_term(N, K), K, True))
    _apply_penalty([PartitionCost(result)])
    return PartitionCost(result)


def _apply_penalty(costs: Sequence[PartitionCost]) -> None:
    """Charge each non-approximable query ten times the worst approximable query cost seen."""
    worst = max((q.total for c in costs for q in c.queries if q.approximable), default=1.0)
    for c in costs:
        for q in c.queries:
            if not q.approximable:
                q.penalty = PENALTY_FACTOR * max(worst, 1.0)


@dataclass
class Recommendation:
    scheme: CoHashScheme
    candidates: pd.DataFrame


def recommend(graph: SchemaGraph, workload: Sequence[QuerySpec], sample_db: Database,
              replicate: Iterable[str] = (), M: int = 10, seed: int = 0) -> Recommendation:
    """Cheapest rooted maximum spanning forest for ``workload``."""
    if not workload:
        raise ValueError("workload is empty")
    annotated = annotate(graph, workload, sample_db)
    schemes = candidate_schemes(annotated, replicate)
    costs = [cost(scheme, workload, sample_db, M, seed) for scheme in schemes]
    _apply_penalty(costs)
    rows, best, best_cost = [], None, None
    for i, (scheme, c) in enumerate(zip(schemes, costs)):
        desc = "; ".join(
            f"{h.root}<-" + ",".join(h.relations[1:]) if len(h.relations) > 1 else h.root
            for h in scheme.hierarchies
        )
        rows.append({"candidate": i, "roots": ",".join(h.root for h in scheme.hierarchies),
                     "hierarchies": desc, "cost": c.total,
                     "non_approximable": sum(not q.approximable for q in c.queries)})
        if best_cost is None or c.total < best_cost:
            best, best_cost = scheme, c.total
    return Recommendation(best, pd.DataFrame(rows))
