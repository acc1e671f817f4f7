"""Query-time analysis over a co-hash scheme.

The partitioning-query (PQ) graph keeps a query join edge when one hierarchy
stores both endpoints co-located on a condition implied by the query's
condition.  Its connected components are the sub-hierarchies read together;
a query is approximable when every failure-affected component hangs from a
non-redundant sub-root.  Algorithm :func:`determine_stage_sequence` orders the
components into the stages of a nested sample.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .catalog import CoHashHierarchy, CoHashScheme, SchemaGraph, is_subhierarchy_nonredundant
from .presets import GRAPH
from .query import QuerySpec


@dataclass(frozen=True)
class Component:
    """Connected sub-hierarchy of the PQ graph.

    ``hierarchy`` is None for replicated relations, which are complete in
    every chunk.  ``cluster_attrs`` are canonical names.
    """

    id: str
    relations: tuple[str, ...]
    hierarchy: str | None
    sub_root: str
    cluster_attrs: frozenset[str]
    pi: Fraction = Fraction(1)
    s: Fraction = Fraction(0)
    affected: bool = False


@dataclass
class PQGraph:
    vertices: tuple[str, ...]
    edges: list[tuple[str, str]]
    components: list[Component]
    assignment: dict[str, str | None]

    def component_of(self, rel: str) -> Component:
        for c in self.components:
            if rel in c.relations:
                return c
        raise KeyError(rel)


@dataclass(frozen=True)
class Decision:
    ok: bool
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _query_edge_canon(graph: SchemaGraph, pairs) -> frozenset:
    return graph.canonical_pairs(pairs)


def _pq_edges(query: QuerySpec, scheme: CoHashScheme, graph: SchemaGraph,
              assignment: Mapping[str, str | None]) -> list[tuple[str, str]]:
    edges = []
    for j in query.joins:
        ha, hb = assignment.get(j.left), assignment.get(j.right)
        if ha is None or ha != hb:
            continue
        h = scheme.hierarchy(ha)
        cond = h.edge_condition(j.left, j.right)
        if cond is None:
            continue
        if graph.canonical_pairs(cond.pairs) <= graph.canonical_pairs(j.pairs):
            edges.append((j.left, j.right))
    return edges


def assign_hierarchies(query: QuerySpec, scheme: CoHashScheme,
                       graph: SchemaGraph = GRAPH) -> dict[str, str | None]:
    """Pick the hierarchy serving each relation.

    Maximizes the number of PQ edges; ties go to hierarchies declared earlier.
    Replicated relations map to None.
    """
    order = {h.name: i for i, h in enumerate(scheme.hierarchies)}
    options: list[list[str | None]] = []
    for rel in query.relations:
        if rel in scheme.replicated:
            options.append([None])
            continue
        names = [h.name for h in scheme.hierarchies_with(rel)]
        if not names:
            raise ValueError(f"no hierarchy for relation {rel}")
        options.append(names)
    best, best_key = None, None
    for combo in itertools.product(*options):
        assignment = dict(zip(query.relations, combo))
        n_edges = len(_pq_edges(query, scheme, graph, assignment))
        key = (-n_edges, tuple(order.get(c, -1) for c in combo))
        if best_key is None or key < best_key:
            best, best_key = assignment, key
    return best


def build_pq_graph(query: QuerySpec, scheme: CoHashScheme, graph: SchemaGraph = GRAPH,
                   assignment: Mapping[str, str | None] | None = None) -> PQGraph:
    if assignment is None:
        assignment = assign_hierarchies(query, scheme, graph)
    for rel in query.relations:
        if rel not in assignment:
            raise ValueError(f"no hierarchy for relation {rel}")
        h = assignment[rel]
        if h is None and rel not in scheme.replicated:
            raise ValueError(f"no hierarchy for relation {rel}")
        if h is not None and rel not in scheme.hierarchy(h):
            raise ValueError(f"relation {rel} is not in hierarchy {h}")
    edges = _pq_edges(query, scheme, graph, assignment)
    g = nx.Graph()
    g.add_nodes_from(query.relations)
    g.add_edges_from(edges)
    comps = []
    for members in nx.connected_components(g):
        rels = tuple(r for r in query.relations if r in members)
        hname = assignment[rels[0]]
        if hname is None:
            comps.append(Component(f"replicated:{rels[0]}", rels, None, rels[0], frozenset()))
            continue
        h = scheme.hierarchy(hname)
        sub_root = min(rels, key=lambda r: (h.depth(r), r))
        comps.append(Component(f"{hname}:{sub_root}", rels, hname, sub_root,
                               graph.canonical_set(h.cluster_attrs)))
    comps.sort(key=lambda c: c.id)
    return PQGraph(tuple(query.relations), edges, comps, dict(assignment))


def is_approximable(pq: PQGraph, failed: Iterable[str], scheme: CoHashScheme) -> Decision:
    """Every affected component must hang from a non-redundant sub-root."""
    failed = set(failed)
    for comp in pq.components:
        if comp.hierarchy is None or comp.hierarchy not in failed:
            continue
        h = scheme.hierarchy(comp.hierarchy)
        if not is_subhierarchy_nonredundant(h, comp.sub_root):
            return Decision(False, f"sub-root {comp.sub_root} of {comp.hierarchy} is redundant")
    return Decision(True)


# group by / having / nesting --------------------------------------------

class GroupByKind(str, Enum):
    EXACT_MISSING_GROUPS = "exact-missing-groups"
    PER_GROUP = "per-group-samples"
    RECLUSTERED = "reclustered"


@dataclass(frozen=True)
class GroupByCase:
    kind: GroupByKind
    stages: tuple[frozenset[str], ...] = ()

    @property
    def exact(self) -> bool:
        return self.kind is GroupByKind.EXACT_MISSING_GROUPS


def classify_group_by(G: Iterable[str], C: Iterable[Iterable[str]] | Iterable[str]) -> GroupByCase:
    """Classify canonical grouping attributes ``G`` against stage attribute sets ``C``.

    ``C`` is either a list of per-stage attribute sets or one flat set.
    """
    G = frozenset(G)
    C = list(C)
    stages = [frozenset(C)] if C and all(isinstance(x, str) for x in C) else [frozenset(b) for b in C]
    union = frozenset().union(*stages) if stages else frozenset()
    if union <= G:
        return GroupByCase(GroupByKind.EXACT_MISSING_GROUPS)
    if not (union & G):
        return GroupByCase(GroupByKind.PER_GROUP, tuple(stages))
    reduced = tuple(b - G for b in stages if b - G)
    return GroupByCase(GroupByKind.RECLUSTERED, reduced)


def check_having(query: QuerySpec, case: GroupByCase, failed: Iterable[str]) -> Decision:
    if not query.having:
        return Decision(True)
    if len(set(failed)) <= 1 and case.exact:
        return Decision(True)
    return Decision(False, "HAVING needs complete groups from at most one failed hierarchy")


def _edge_names(graph: SchemaGraph, h: CoHashHierarchy, child: str) -> frozenset[str]:
    return graph.canonical_set(h.condition(child).left_attrs)


def _nested_edge(h: CoHashHierarchy, outer: str, inner: str, corr: frozenset[str],
                 graph: SchemaGraph) -> bool:
    if not h.is_descendant(inner, outer):
        return False
    path = h.path_to_root(inner)
    path = path[: path.index(outer)]
    # walk from the child of the outer relation down to the inner relation
    top_down = list(reversed(path))
    D = _edge_names(graph, h, top_down[0])
    return all(D <= _edge_names(graph, h, r) for r in top_down[1:]) and D <= corr


def nested_graph(query: QuerySpec, scheme: CoHashScheme, graph: SchemaGraph = GRAPH) -> nx.Graph:
    nested = query.exists
    g = nx.Graph()
    g.add_nodes_from(("outer", r) for r in query.relations)
    if nested is None:
        return g
    g.add_nodes_from(("inner", r) for r in nested.relations)
    for j in nested.joins:
        for h in scheme.hierarchies:
            cond = h.edge_condition(j.left, j.right)
            if cond is not None and graph.canonical_pairs(cond.pairs) <= graph.canonical_pairs(j.pairs):
                g.add_edge(("inner", j.left), ("inner", j.right))
                break
    by_pair: dict[tuple[str, str], set[str]] = {}
    for outer_attr, inner_attr in nested.correlation:
        o_rel = next((r for r in query.relations if outer_attr in graph.relations[r].attributes), None)
        i_rel = next((r for r in nested.relations if inner_attr in graph.relations[r].attributes), None)
        if o_rel is None or i_rel is None:
            raise ValueError(f"correlation {outer_attr}={inner_attr} references unknown attributes")
        names = by_pair.setdefault((o_rel, i_rel), set())
        if graph.canonical(outer_attr) == graph.canonical(inner_attr):
            names.add(graph.canonical(outer_attr))
    for (o_rel, i_rel), names in sorted(by_pair.items()):
        corr = frozenset(names)
        if i_rel in scheme.replicated or any(
            _nested_edge(h, o_rel, i_rel, corr, graph) for h in scheme.hierarchies
        ):
            g.add_edge(("outer", o_rel), ("inner", i_rel))
    return g


def check_nested(query: QuerySpec, scheme: CoHashScheme, graph: SchemaGraph = GRAPH) -> Decision:
    """A correlated EXISTS block is answerable when it attaches to the outer relations co-located."""
    nested = query.exists
    if nested is None:
        return Decision(True)
    if not nested.correlation:
        return Decision(False, "not approximable: uncorrelated nested query")
    g = nested_graph(query, scheme, graph)
    if nx.number_connected_components(g) == len(query.relations):
        return Decision(True)
    return Decision(False, "nested relations are not co-located with the outer relations")


# stage sequence ------------------------------------------------------------

@dataclass(frozen=True)
class Stage:
    cluster_attrs: frozenset[str]
    pi: Fraction
    s: Fraction
    components: tuple[str, ...]
    hierarchies: tuple[str, ...]


@dataclass(frozen=True)
class StagePlan:
    stages: tuple[Stage, ...]

    @property
    def element_pi(self) -> Fraction:
        out = Fraction(1)
        for st in self.stages:
            out *= st.pi
        return out

    def __len__(self) -> int:
        return len(self.stages)

    def order(self) -> list[frozenset[str]]:
        return [st.cluster_attrs for st in self.stages]


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def determine_stage_sequence(components: Sequence[Component]) -> StagePlan:
    """Greedy stage ordering by smallest surviving cluster count.

    The selected component absorbs every remaining component whose clustering
    attributes contain its own.  Absorbing a component of a different
    hierarchy multiplies the stage rate and count by that component's rate;
    a component of a hierarchy already in the stage shares its sample and
    leaves both unchanged.
    """
    pending = sorted(components, key=lambda c: c.id)
    stages = []
    while pending:
        first = min(pending, key=lambda c: (_frac(c.s), c.id))
        pending.remove(first)
        B, pi, s = first.cluster_attrs, _frac(first.pi), _frac(first.s)
        ids, hiers = [first.id], [first.hierarchy]
        for other in list(pending):
            if B <= other.cluster_attrs:
                if other.hierarchy not in hiers:
                    pi *= _frac(other.pi)
                    s *= _frac(other.pi)
                    hiers.append(other.hierarchy)
                ids.append(other.id)
                pending.remove(other)
        stages.append(Stage(B, pi, s, tuple(ids), tuple(hiers)))
    return StagePlan(tuple(stages))


# whole-query plan ------------------------------------------------------------

@dataclass
class QueryPlan:
    query: QuerySpec
    pq: PQGraph
    failed: frozenset[str]
    decision: Decision
    stage_plan: StagePlan
    group_case: GroupByCase

    @property
    def exact(self) -> bool:
        return not self.failed or self.group_case.exact

    @property
    def affected_components(self) -> list[Component]:
        return [c for c in self.pq.components if c.affected]


def plan_query(query: QuerySpec, scheme: CoHashScheme, availability=None,
               failed: Iterable[str] | None = None, graph: SchemaGraph = GRAPH) -> QueryPlan:
    """Build the PQ graph, check approximability and order the stages.

    Parameters
    ----------
    availability : AvailabilityProfile, optional
        Supplies per-hierarchy rates and surviving counts.
    failed : iterable of str, optional
        Failed hierarchies; defaults to those the profile marks affected, or
        to every hierarchy the query uses when no profile is given.
    """
    pq = build_pq_graph(query, scheme, graph)
    used = {c.hierarchy for c in pq.components if c.hierarchy is not None}
    if failed is None:
        failed = availability.failed_hierarchies if availability is not None else used
    failed = frozenset(failed) & used
    comps = []
    for c in pq.components:
        if c.hierarchy is not None and availability is not None:
            av = availability[c.hierarchy]
            c = replace(c, pi=_frac(av.pi) if av.pi > 0 else Fraction(0), s=Fraction(av.s))
        comps.append(replace(c, affected=c.hierarchy in failed))
    pq.components = comps
    decision = is_approximable(pq, failed, scheme)
    affected = [c for c in comps if c.affected]
    stage_plan = determine_stage_sequence(affected)
    case = classify_group_by(graph.canonical_set(query.group_by), stage_plan.order())
    if decision and failed:
        for extra in (check_nested(query, scheme, graph), check_having(query, case, failed)):
            if not extra:
                decision = extra
                break
    return QueryPlan(query, pq, failed, decision, stage_plan, case)


def approximability_table(schemes: Mapping[str, CoHashScheme], queries: Sequence[QuerySpec],
                          graph: SchemaGraph = GRAPH) -> dict[str, dict[str, bool]]:
    """Y/N per (design, query) with every hierarchy the query reads treated as failed."""
    return {
        name: {q.name: bool(plan_query(q, scheme, graph=graph).decision) for q in queries}
        for name, scheme in schemes.items()
    }
