"""Relational schemas, join graphs and co-hash schemes.

A co-hash hierarchy is a rooted in-tree over the schema graph.  The root is
hash partitioned on its clustering attributes and every other relation is
co-located with the parent tuples it joins.  This module holds the immutable
descriptions of those objects, checks them against a schema graph and decides
which relations of a hierarchy are free of tuple-level redundancy.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import yaml

Pair = tuple[str, str]


@dataclass(frozen=True)
class RelationSchema:
    name: str
    attributes: tuple[str, ...]
    key: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "attributes", tuple(self.attributes))
        object.__setattr__(self, "key", tuple(self.key))
        if len(set(self.attributes)) != len(self.attributes):
            raise ValueError(f"duplicate attribute in relation {self.name}")
        missing = set(self.key) - set(self.attributes)
        if missing:
            raise ValueError(f"key of {self.name} uses unknown attributes {sorted(missing)}")


@dataclass(frozen=True)
class JoinCondition:
    """Conjunction of equalities ``left.a = right.b`` for each ``(a, b)`` in ``pairs``."""

    left: str
    right: str
    pairs: tuple[Pair, ...]

    def __post_init__(self) -> None:
        pairs = tuple((str(a), str(b)) for a, b in self.pairs)
        if not pairs:
            raise ValueError(f"join condition {self.left}-{self.right} has no equality pairs")
        object.__setattr__(self, "pairs", pairs)

    def reversed(self) -> "JoinCondition":
        return JoinCondition(self.right, self.left, tuple((b, a) for a, b in self.pairs))

    def oriented(self, left: str) -> "JoinCondition":
        if left == self.left:
            return self
        if left == self.right:
            return self.reversed()
        raise ValueError(f"{left} is not an endpoint of {self.left}-{self.right}")

    @property
    def left_attrs(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.pairs)

    @property
    def right_attrs(self) -> tuple[str, ...]:
        return tuple(b for _, b in self.pairs)


class SchemaGraph:
    """Edge-labelled undirected join graph over relation schemas."""

    def __init__(self, relations: Iterable[RelationSchema], edges: Iterable[JoinCondition] = ()):
        self.relations: dict[str, RelationSchema] = {}
        for rel in relations:
            if rel.name in self.relations:
                raise ValueError(f"duplicate relation {rel.name}")
            self.relations[rel.name] = rel
        self._owner: dict[str, str] = {}
        for rel in self.relations.values():
            for attr in rel.attributes:
                self._owner.setdefault(attr, rel.name)
        self.edges: dict[frozenset, JoinCondition] = {}
        for cond in edges:
            for rel, attrs in ((cond.left, cond.left_attrs), (cond.right, cond.right_attrs)):
                if rel not in self.relations:
                    raise ValueError(f"edge endpoint {rel} is not a relation")
                bad = set(attrs) - set(self.relations[rel].attributes)
                if bad:
                    raise ValueError(f"edge {cond.left}-{cond.right} uses unknown attributes {sorted(bad)}")
            self.edges[frozenset((cond.left, cond.right))] = cond
        self._canonical = self._build_canonical_map()

    @property
    def vertices(self) -> set[str]:
        return set(self.relations)

    def edge(self, a: str, b: str) -> JoinCondition | None:
        cond = self.edges.get(frozenset((a, b)))
        return None if cond is None else cond.oriented(a)

    def neighbors(self, rel: str) -> list[str]:
        out = []
        for pair in self.edges:
            if rel in pair:
                other = [r for r in pair if r != rel]
                if other:
                    out.append(other[0])
        return sorted(out)

    def owner(self, attr: str) -> str:
        try:
            return self._owner[attr]
        except KeyError:
            raise KeyError(f"unknown attribute {attr}") from None

    def key(self, rel: str) -> tuple[str, ...]:
        return self.relations[rel].key

    # attribute renaming ------------------------------------------------

    def _build_canonical_map(self) -> dict[str, str]:
        parent: dict[str, str] = {}

        def find(x: str) -> str:
            parent.setdefault(x, x)
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for cond in self.edges.values():
            for a, b in cond.pairs:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[ra] = rb
        classes: dict[str, list[str]] = {}
        for attr in parent:
            classes.setdefault(find(attr), []).append(attr)
        sole_keys = {rel.key[0] for rel in self.relations.values() if len(rel.key) == 1}
        mapping: dict[str, str] = {}
        for members in classes.values():
            preferred = sorted(m for m in members if m in sole_keys)
            rep = preferred[0] if preferred else min(members)
            for m in members:
                mapping[m] = rep
        return mapping

    def canonical(self, attr: str) -> str:
        """Name of the join-equivalence class of ``attr`` (identity for non-join attributes)."""
        return self._canonical.get(attr, attr)

    def canonical_set(self, attrs: Iterable[str]) -> frozenset[str]:
        return frozenset(self.canonical(a) for a in attrs)

    def canonical_pairs(self, pairs: Iterable[Pair]) -> frozenset[frozenset[str]]:
        """Equality pairs as a set of canonical-name sets; a schema join collapses to one name."""
        return frozenset(frozenset((self.canonical(a), self.canonical(b))) for a, b in pairs)


@dataclass(frozen=True, eq=False)
class CoHashHierarchy:
    """Rooted in-tree with the root's clustering attributes.

    ``parents`` maps each non-root relation to the join condition with its
    parent, oriented so that ``left`` is the child.
    """

    name: str
    root: str
    cluster_attrs: tuple[str, ...]
    parents: Mapping[str, JoinCondition] = field(default_factory=dict)
    keys: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        name: str,
        root: str,
        cluster_attrs: Iterable[str],
        edges: Iterable[tuple[str, str, Iterable[Pair]]] = (),
        graph: SchemaGraph | None = None,
    ) -> "CoHashHierarchy":
        """``edges`` holds ``(child, parent, [(child_attr, parent_attr), ...])`` triples."""
        parents: dict[str, JoinCondition] = {}
        for child, par, pairs in edges:
            if child in parents or child == root:
                raise ValueError(f"relation {child} has more than one parent in {name}")
            parents[child] = JoinCondition(child, par, tuple(tuple(p) for p in pairs))
        keys = {}
        if graph is not None:
            for rel in {root, *parents}:
                if rel in graph.relations:
                    keys[rel] = graph.key(rel)
        return cls(name, root, tuple(cluster_attrs), parents, keys)

    @property
    def relations(self) -> list[str]:
        """Relations in breadth-first order from the root."""
        order, queue = [], deque([self.root])
        seen = set()
        while queue:
            rel = queue.popleft()
            if rel in seen:
                continue
            seen.add(rel)
            order.append(rel)
            queue.extend(self.children(rel))
        return order

    def __contains__(self, rel: str) -> bool:
        return rel == self.root or rel in self.parents

    def parent(self, rel: str) -> str | None:
        cond = self.parents.get(rel)
        return None if cond is None else cond.right

    def children(self, rel: str) -> list[str]:
        return sorted(c for c, cond in self.parents.items() if cond.right == rel)

    def condition(self, child: str) -> JoinCondition:
        return self.parents[child]

    def has_edge(self, a: str, b: str) -> bool:
        return self.parent(a) == b or self.parent(b) == a

    def edge_condition(self, a: str, b: str) -> JoinCondition | None:
        """Hierarchy join condition between ``a`` and ``b`` oriented with ``a`` on the left."""
        if self.parent(a) == b:
            return self.parents[a]
        if self.parent(b) == a:
            return self.parents[b].reversed()
        return None

    def depth(self, rel: str) -> int:
        d = 0
        while rel != self.root:
            nxt = self.parent(rel)
            if nxt is None:
                raise KeyError(f"unknown relation {rel} in hierarchy {self.name}")
            rel, d = nxt, d + 1
            if d > len(self.parents) + 1:
                raise ValueError(f"cycle in hierarchy {self.name}")
        return d

    def path_to_root(self, rel: str) -> list[str]:
        path = [rel]
        while path[-1] != self.root:
            nxt = self.parent(path[-1])
            if nxt is None or len(path) > len(self.parents) + 1:
                raise ValueError(f"{rel} does not reach the root of {self.name}")
            path.append(nxt)
        return path

    def is_descendant(self, rel: str, ancestor: str) -> bool:
        if rel not in self or ancestor not in self or rel == ancestor:
            return False
        return ancestor in self.path_to_root(rel)[1:]


@dataclass(frozen=True, eq=False)
class CoHashScheme:
    hierarchies: tuple[CoHashHierarchy, ...]
    replicated: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "hierarchies", tuple(self.hierarchies))
        object.__setattr__(self, "replicated", frozenset(self.replicated))
        names = [h.name for h in self.hierarchies]
        if len(set(names)) != len(names):
            raise ValueError("hierarchy names must be unique")

    def hierarchy(self, name: str) -> CoHashHierarchy:
        for h in self.hierarchies:
            if h.name == name:
                return h
        raise KeyError(f"unknown hierarchy {name}")

    def hierarchies_with(self, rel: str) -> list[CoHashHierarchy]:
        return [h for h in self.hierarchies if rel in h]

    @property
    def relations(self) -> set[str]:
        out = set(self.replicated)
        for h in self.hierarchies:
            out.update(h.relations)
        return out


def validate_scheme(scheme: CoHashScheme, graph: SchemaGraph) -> list[str]:
    """Return every violation of the hierarchy invariants; empty when the scheme is valid."""
    problems: list[str] = []
    for h in scheme.hierarchies:
        if h.root not in graph.relations:
            problems.append(f"{h.name}: root {h.root} is not in the schema graph")
            continue
        bad = set(h.cluster_attrs) - set(graph.relations[h.root].attributes)
        if bad:
            problems.append(f"{h.name}: clustering attributes {sorted(bad)} not in root {h.root}")
        for child, cond in h.parents.items():
            par = cond.right
            if child not in graph.relations or par not in graph.relations:
                problems.append(f"{h.name}: edge {child}->{par} uses an unknown relation")
                continue
            if par not in h:
                problems.append(f"{h.name}: parent {par} of {child} is not in the hierarchy")
                continue
            schema_edge = graph.edge(child, par)
            if schema_edge is None:
                problems.append(f"{h.name}: edge {child}->{par} is not in the schema graph")
                continue
            if not set(cond.pairs) <= set(schema_edge.pairs):
                problems.append(f"{h.name}: edge {child}->{par} condition does not match the schema graph")
            try:
                h.path_to_root(child)
            except ValueError:
                problems.append(f"{h.name}: {child} does not reach the root")
    for rel in sorted(graph.relations):
        if rel not in scheme.relations:
            problems.append(f"relation {rel} is not covered by any hierarchy")
    for rel in sorted(scheme.replicated - set(graph.relations)):
        problems.append(f"replicated relation {rel} is not in the schema graph")
    return sorted(problems)


def is_nonredundant(hierarchy: CoHashHierarchy, relation: str) -> bool:
    """Whether every tuple of ``relation`` is stored in at most one cluster of ``hierarchy``.

    The root always qualifies; a child qualifies when its join with the parent
    covers the parent's key and the parent qualifies.
    """
    if relation not in hierarchy:
        raise KeyError(f"unknown relation {relation}")
    rel = relation
    while rel != hierarchy.root:
        cond = hierarchy.condition(rel)
        parent_key = hierarchy.keys.get(cond.right)
        if parent_key is None:
            raise KeyError(f"no key recorded for {cond.right}; build the hierarchy with a schema graph")
        if not set(parent_key) <= set(cond.right_attrs):
            return False
        rel = cond.right
    return True


def is_subhierarchy_nonredundant(hierarchy: CoHashHierarchy, sub_root: str) -> bool:
    return is_nonredundant(hierarchy, sub_root)


# configuration files ----------------------------------------------------

def on_pairs(doc: Mapping) -> list:
    """Join pairs of a YAML entry; YAML 1.1 reads a bare ``on`` key as ``True``."""
    if "on" in doc:
        return doc["on"]
    if True in doc:
        return doc[True]
    raise KeyError("on")


def _graph_from_dict(doc: Mapping) -> SchemaGraph:
    rels = [
        RelationSchema(r["relation"], tuple(r["attributes"]), tuple(r.get("key", ())))
        for r in doc.get("relations", [])
    ]
    edges = []
    for e in doc.get("edges", []):
        a, b = e["edge"]
        edges.append(JoinCondition(a, b, tuple(tuple(p) for p in on_pairs(e))))
    return SchemaGraph(rels, edges)


def scheme_from_dict(doc: Mapping, graph: SchemaGraph) -> CoHashScheme:
    hierarchies = []
    for h in doc.get("hierarchies", []):
        edges = [(c["relation"], c["parent"], on_pairs(c)) for c in h.get("children", [])]
        hierarchies.append(
            CoHashHierarchy.build(h["hierarchy"], h["root"], h["cluster_attrs"], edges, graph)
        )
    return CoHashScheme(tuple(hierarchies), frozenset(doc.get("replicated", [])))


def scheme_to_dict(scheme: CoHashScheme) -> dict:
    out = []
    for h in scheme.hierarchies:
        children = [
            {"relation": rel, "parent": h.parent(rel), "on": [list(p) for p in h.condition(rel).pairs]}
            for rel in h.relations[1:]
        ]
        out.append({
            "hierarchy": h.name,
            "root": h.root,
            "cluster_attrs": list(h.cluster_attrs),
            "children": children,
        })
    return {"hierarchies": out, "replicated": sorted(scheme.replicated)}


def graph_to_dict(graph: SchemaGraph) -> dict:
    return {
        "relations": [
            {"relation": r.name, "attributes": list(r.attributes), "key": list(r.key)}
            for r in graph.relations.values()
        ],
        "edges": [
            {"edge": [c.left, c.right], "on": [list(p) for p in c.pairs]}
            for c in graph.edges.values()
        ],
    }


def load_catalog(source: str | Path) -> tuple[SchemaGraph, CoHashScheme | None]:
    """Read a schema (and optionally a scheme) from a YAML file or YAML text."""
    if _looks_like_path(source):
        text = Path(source).read_text()
    else:
        text = str(source)
    doc = yaml.safe_load(text) or {}
    graph = _graph_from_dict(doc)
    scheme = scheme_from_dict(doc, graph) if "hierarchies" in doc or "replicated" in doc else None
    return graph, scheme


def dump_catalog(graph: SchemaGraph, scheme: CoHashScheme | None = None) -> str:
    doc = graph_to_dict(graph)
    if scheme is not None:
        doc.update(scheme_to_dict(scheme))
    return yaml.safe_dump(doc, sort_keys=False)


def _looks_like_path(source: str | Path) -> bool:
    if isinstance(source, Path):
        return True
    return "\n" not in source and source.endswith((".yaml", ".yml", ".json"))
