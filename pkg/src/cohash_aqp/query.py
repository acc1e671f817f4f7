"""Aggregate query specifications.

Queries are select-project-join-aggregate blocks with conjunctive selection
predicates, optional grouping, HAVING filters on aggregates and at most one
correlated EXISTS subquery.  Expressions are restricted Python arithmetic over
attribute names, so they evaluate unchanged on scalars and on numpy columns.
"""

from __future__ import annotations

import ast
import operator
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml

from .catalog import JoinCondition, on_pairs

AGG_FUNCS = ("SUM", "COUNT", "AVG")
COMPARATORS = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "=": operator.eq,
    "!=": operator.ne,
}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.FloorDiv, ast.Div, ast.Mod, ast.USub, ast.UAdd,
)


@lru_cache(maxsize=None)
def compile_expr(expr: str):
    """Compile an arithmetic expression, rejecting anything but names, constants and operators."""
    tree = ast.parse(expr, mode="eval")
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"unsupported syntax in expression {expr!r}: {type(node).__name__}")
    names = frozenset(n.id for n in ast.walk(tree) if isinstance(n, ast.Name))
    return compile(tree, "<expr>", "eval"), names


def expr_attributes(expr: str) -> frozenset[str]:
    return compile_expr(expr)[1]


def eval_expr(expr: str, env: Mapping[str, Any]):
    code, _ = compile_expr(expr)
    return eval(code, {"__builtins__": {}}, dict(env))


@dataclass(frozen=True)
class Predicate:
    """``attr op value``; ``value`` may name another attribute via ``{"attr": name}``."""

    attr: str
    op: str
    value: Any

    def __post_init__(self) -> None:
        if self.op not in COMPARATORS and self.op not in ("in", "between"):
            raise ValueError(f"unknown comparison {self.op!r}")
        if self.op == "between" and len(self.value) != 2:
            raise ValueError("between needs two bounds")
        if isinstance(self.value, list):
            object.__setattr__(self, "value", tuple(self.value))

    @property
    def other_attr(self) -> str | None:
        if isinstance(self.value, Mapping):
            return self.value["attr"]
        return None

    @property
    def attributes(self) -> frozenset[str]:
        other = self.other_attr
        return frozenset({self.attr} | ({other} if other else set()))

    def evaluate(self, env: Mapping[str, Any]):
        """Works on scalar tuples and on column mappings alike."""
        left = env[self.attr]
        if self.op == "between":
            lo, hi = self.value
            return (left >= lo) & (left <= hi)
        if self.op == "in":
            if isinstance(left, (np.ndarray,)) or hasattr(left, "isin"):
                return np.isin(np.asarray(left), list(self.value))
            return left in self.value
        right = env[self.other_attr] if self.other_attr else self.value
        return COMPARATORS[self.op](left, right)


@dataclass(frozen=True)
class Aggregate:
    func: str
    expr: str | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        func = self.func.upper()
        if func not in AGG_FUNCS:
            raise ValueError(f"unknown aggregate {self.func}")
        object.__setattr__(self, "func", func)
        if func != "COUNT" and not self.expr:
            raise ValueError(f"{func} needs an expression")
        if self.expr:
            compile_expr(self.expr)
        if self.name is None:
            object.__setattr__(self, "name", f"{func.lower()}({self.expr or '*'})")

    @property
    def attributes(self) -> frozenset[str]:
        return expr_attributes(self.expr) if self.expr else frozenset()


@dataclass(frozen=True)
class HavingPredicate:
    aggregate: str
    op: str
    value: float

    def evaluate(self, values: Mapping[str, float]) -> bool:
        return bool(COMPARATORS[self.op](values[self.aggregate], self.value))


@dataclass(frozen=True)
class NestedQuery:
    """Correlated EXISTS block; ``correlation`` holds ``(outer_attr, inner_attr)`` equalities."""

    relations: tuple[str, ...]
    joins: tuple[JoinCondition, ...] = ()
    where: tuple[Predicate, ...] = ()
    correlation: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class QuerySpec:
    name: str
    relations: tuple[str, ...]
    aggregates: tuple[Aggregate, ...]
    joins: tuple[JoinCondition, ...] = ()
    where: tuple[Predicate, ...] = ()
    group_by: tuple[str, ...] = ()
    having: tuple[HavingPredicate, ...] = ()
    exists: NestedQuery | None = None

    def __post_init__(self) -> None:
        if len(set(self.relations)) != len(self.relations):
            raise ValueError(f"query {self.name} has a self-join")
        if not self.aggregates:
            raise ValueError(f"query {self.name} has no aggregate")
        for j in self.joins:
            if j.left not in self.relations or j.right not in self.relations:
                raise ValueError(f"join {j.left}-{j.right} references a relation outside FROM")
        names = [a.name for a in self.aggregates]
        if len(set(names)) != len(names):
            raise ValueError("aggregate names must be unique")
        for h in self.having:
            if h.aggregate not in names:
                raise ValueError(f"HAVING references unknown aggregate {h.aggregate}")

    def predicates_for(self, attributes: Iterable[str]) -> list[Predicate]:
        """Predicates whose attributes all lie in ``attributes``."""
        attrs = set(attributes)
        return [p for p in self.where if p.attributes <= attrs]


# structured text format ---------------------------------------------------

def _pred(d: Mapping) -> Predicate:
    return Predicate(d["attr"], d["op"], d["value"])


def _join(d: Mapping) -> JoinCondition:
    a, b = d["edge"]
    return JoinCondition(a, b, tuple(tuple(p) for p in on_pairs(d)))


def query_from_dict(doc: Mapping) -> QuerySpec:
    exists = None
    if doc.get("exists"):
        e = doc["exists"]
        exists = NestedQuery(
            tuple(e["from"]),
            tuple(_join(j) for j in e.get("joins", [])),
            tuple(_pred(p) for p in e.get("where", [])),
            tuple(tuple(c) for c in e.get("correlation", [])),
        )
    aggs = tuple(
        Aggregate(a["func"], a.get("expr"), a.get("name")) for a in doc.get("aggregates", [])
    )
    return QuerySpec(
        name=doc.get("name", "query"),
        relations=tuple(doc["from"]),
        aggregates=aggs,
        joins=tuple(_join(j) for j in doc.get("joins", [])),
        where=tuple(_pred(p) for p in doc.get("where", [])),
        group_by=tuple(doc.get("group_by", doc.get("select", [])) or ()),
        having=tuple(HavingPredicate(h["aggregate"], h["op"], h["value"]) for h in doc.get("having", [])),
        exists=exists,
    )


def query_to_dict(q: QuerySpec) -> dict:
    def pred(p: Predicate) -> dict:
        value = list(p.value) if isinstance(p.value, tuple) else p.value
        return {"attr": p.attr, "op": p.op, "value": value}

    def join(j: JoinCondition) -> dict:
        return {"edge": [j.left, j.right], "on": [list(p) for p in j.pairs]}

    doc: dict = {
        "name": q.name,
        "select": list(q.group_by),
        "aggregates": [{"func": a.func, "expr": a.expr, "name": a.name} for a in q.aggregates],
        "from": list(q.relations),
        "joins": [join(j) for j in q.joins],
        "where": [pred(p) for p in q.where],
        "group_by": list(q.group_by),
        "having": [{"aggregate": h.aggregate, "op": h.op, "value": h.value} for h in q.having],
    }
    if q.exists is not None:
        e = q.exists
        doc["exists"] = {
            "from": list(e.relations),
            "joins": [join(j) for j in e.joins],
            "where": [pred(p) for p in e.where],
            "correlation": [list(c) for c in e.correlation],
        }
    return doc


def load_queries(source: str | Path) -> list[QuerySpec]:
    try:
        text = Path(source).read_text()
    except (OSError, ValueError):
        text = str(source)
    doc = yaml.safe_load(text)
    if isinstance(doc, Mapping):
        doc = doc.get("queries", [doc])
    return [query_from_dict(d) for d in doc]
