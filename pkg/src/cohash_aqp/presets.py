"""Mini TPC-H schema, preset co-hash designs and the built-in query workload."""

from __future__ import annotations

from .catalog import CoHashHierarchy, CoHashScheme, JoinCondition, RelationSchema, SchemaGraph
from .query import Aggregate, NestedQuery, Predicate, QuerySpec

RELATIONS = {
    "customer": (("c_custkey", "c_nationkey", "c_mktsegment", "c_acctbal"), ("c_custkey",)),
    "orders": (
        ("o_orderkey", "o_custkey", "o_orderdate", "o_orderpriority", "o_shippriority", "o_totalprice"),
        ("o_orderkey",),
    ),
    "lineitem": (
        ("l_orderkey", "l_linenumber", "l_partkey", "l_suppkey", "l_quantity", "l_extendedprice",
         "l_discount", "l_tax", "l_returnflag", "l_shipdate", "l_commitdate", "l_receiptdate"),
        ("l_orderkey", "l_linenumber"),
    ),
    "part": (
        ("p_partkey", "p_brand", "p_type", "p_container", "p_size", "p_retailprice"),
        ("p_partkey",),
    ),
    "partsupp": (
        ("ps_partkey", "ps_suppkey", "ps_availqty", "ps_supplycost"),
        ("ps_partkey", "ps_suppkey"),
    ),
    "supplier": (("s_suppkey", "s_nationkey", "s_acctbal"), ("s_suppkey",)),
    "nation": (("n_nationkey", "n_regionkey", "n_name"), ("n_nationkey",)),
    "region": (("r_regionkey", "r_name"), ("r_regionkey",)),
}

EDGES = (
    ("customer", "orders", (("c_custkey", "o_custkey"),)),
    ("customer", "nation", (("c_nationkey", "n_nationkey"),)),
    ("nation", "region", (("n_regionkey", "r_regionkey"),)),
    ("orders", "lineitem", (("o_orderkey", "l_orderkey"),)),
    ("nation", "supplier", (("n_nationkey", "s_nationkey"),)),
    ("lineitem", "part", (("l_partkey", "p_partkey"),)),
    ("partsupp", "part", (("ps_partkey", "p_partkey"),)),
    ("partsupp", "supplier", (("ps_suppkey", "s_suppkey"),)),
    ("supplier", "lineitem", (("s_suppkey", "l_suppkey"),)),
    ("lineitem", "partsupp", (("l_partkey", "ps_partkey"), ("l_suppkey", "ps_suppkey"))),
)


def tpch_graph() -> SchemaGraph:
    rels = [RelationSchema(n, a, k) for n, (a, k) in RELATIONS.items()]
    return SchemaGraph(rels, [JoinCondition(a, b, p) for a, b, p in EDGES])


GRAPH = tpch_graph()

# child -> parent co-location conditions, child attribute first
_O_C = ("orders", "customer", [("o_custkey", "c_custkey")])
_L_O = ("lineitem", "orders", [("l_orderkey", "o_orderkey")])
_O_L = ("orders", "lineitem", [("o_orderkey", "l_orderkey")])
_PS_P = ("partsupp", "part", [("ps_partkey", "p_partkey")])
_L_PS = ("lineitem", "partsupp", [("l_partkey", "ps_partkey"), ("l_suppkey", "ps_suppkey")])
_PS_L = ("partsupp", "lineitem", [("ps_partkey", "l_partkey"), ("ps_suppkey", "l_suppkey")])
_P_L = ("part", "lineitem", [("p_partkey", "l_partkey")])
_S_L = ("supplier", "lineitem", [("s_suppkey", "l_suppkey")])
_C_O = ("customer", "orders", [("c_custkey", "o_custkey")])


def hierarchy(name, root, attrs, edges=(), graph: SchemaGraph = GRAPH) -> CoHashHierarchy:
    return CoHashHierarchy.build(name, root, attrs, edges, graph)


def h3() -> CoHashHierarchy:
    return hierarchy("H3", "customer", ["c_custkey"], [_O_C])


def h6() -> CoHashHierarchy:
    return hierarchy("H6", "customer", ["c_custkey"], [_O_C, _L_O])


def h7() -> CoHashHierarchy:
    return hierarchy("H7", "part", ["p_partkey"], [_PS_P])


def h9() -> CoHashHierarchy:
    return hierarchy("H9", "orders", ["o_orderkey"], [_L_O])


def h11() -> CoHashHierarchy:
    return hierarchy("H11", "supplier", ["s_suppkey"])


def redundant_orders() -> CoHashHierarchy:
    """Orders co-located with lineitem on a non-key attribute, so orders repeat across chunks."""
    return hierarchy("LO", "lineitem", ["l_linenumber"], [_O_L])


def sd_without() -> CoHashScheme:
    return CoHashScheme((h6(), h7()), frozenset({"supplier", "nation", "region"}))


def sd_with() -> CoHashScheme:
    root = hierarchy(
        "SD", "lineitem", ["l_orderkey", "l_linenumber"], [_O_L, _PS_L, _P_L, _S_L, _C_O]
    )
    return CoHashScheme((root,), frozenset({"nation", "region"}))


def wd() -> CoHashScheme:
    b = hierarchy("WD_B", "part", ["p_partkey"], [_PS_P, _L_PS, _O_L])
    a = hierarchy("WD_A", "customer", ["c_custkey"], [_O_C, _L_O, _P_L])
    return CoHashScheme((b, a), frozenset({"supplier", "nation", "region"}))


def d1() -> CoHashScheme:
    """Three independent hierarchies used by the stage-ordering variance study."""
    return CoHashScheme((h6(), h7(), h11()), frozenset({"nation", "region"}))


PRESETS = {"SDWithout": sd_without, "SDWith": sd_with, "WD": wd, "D1": d1}


def preset(name: str) -> CoHashScheme:
    try:
        return PRESETS[name]()
    except KeyError:
        raise KeyError(f"unknown preset {name}; choose from {sorted(PRESETS)}") from None


# workload -------------------------------------------------------------------

SEGMENTS = ("AUTOMOBILE", "BUILDING", "FURNITURE", "HOUSEHOLD", "MACHINERY")
PRIORITIES = ("1-URGENT", "2-HIGH", "3-MEDIUM", "4-NOT SPECIFIED", "5-LOW")
TYPE_SIZES = ("STANDARD", "SMALL", "MEDIUM", "LARGE", "ECONOMY", "PROMO")
TYPE_FINISH = ("ANODIZED", "BURNISHED", "PLATED", "POLISHED", "BRUSHED")
TYPE_METAL = ("TIN", "NICKEL", "BRASS", "STEEL", "COPPER")
CONTAINER_SIZES = ("SM", "MED", "LG", "JUMBO", "WRAP")
CONTAINER_KINDS = ("CASE", "BOX", "BAG", "JAR", "PKG", "PACK", "CAN", "DRUM")
BRANDS = tuple(f"Brand#{i}{j}" for i in range(1, 6) for j in range(1, 6))
TYPES = tuple(f"{a} {b} {c}" for a in TYPE_SIZES for b in TYPE_FINISH for c in TYPE_METAL)
CONTAINERS = tuple(f"{a} {b}" for a in CONTAINER_SIZES for b in CONTAINER_KINDS)
NATIONS = (
    "ALGERIA", "ARGENTINA", "BRAZIL", "CANADA", "EGYPT", "ETHIOPIA", "FRANCE", "GERMANY",
    "INDIA", "INDONESIA", "IRAN", "IRAQ", "JAPAN", "JORDAN", "KENYA", "MOROCCO", "MOZAMBIQUE",
    "PERU", "CHINA", "ROMANIA", "SAUDI ARABIA", "VIETNAM", "RUSSIA", "UNITED KINGDOM",
    "UNITED STATES",
)
REGIONS = ("AFRICA", "AMERICA", "ASIA", "EUROPE", "MIDDLE EAST")

REVENUE = "l_extendedprice * (100 - l_discount)"


def _j(a, b, *pairs) -> JoinCondition:
    return JoinCondition(a, b, tuple(pairs))


J_CO = _j("customer", "orders", ("c_custkey", "o_custkey"))
J_OL = _j("orders", "lineitem", ("o_orderkey", "l_orderkey"))
J_LP = _j("lineitem", "part", ("l_partkey", "p_partkey"))
J_LS = _j("lineitem", "supplier", ("l_suppkey", "s_suppkey"))
J_LPS = _j("lineitem", "partsupp", ("l_partkey", "ps_partkey"), ("l_suppkey", "ps_suppkey"))
J_SN = _j("supplier", "nation", ("s_nationkey", "n_nationkey"))


def _q1() -> QuerySpec:
    return QuerySpec(
        "Q1", ("lineitem",),
        (Aggregate("SUM", "l_quantity", "sum_qty"), Aggregate("SUM", "l_extendedprice", "sum_base_price"),
         Aggregate("AVG", "l_quantity", "avg_qty"), Aggregate("COUNT", None, "count_order")),
        where=(Predicate("l_shipdate", "<=", 2300),),
        group_by=("l_returnflag",),
    )


def _q3(grouped: bool = True) -> QuerySpec:
    return QuerySpec(
        "Q3" if grouped else "Q3-sum", ("customer", "orders", "lineitem"),
        (Aggregate("SUM", REVENUE, "revenue"),),
        joins=(J_CO, J_OL),
        where=(Predicate("c_mktsegment", "==", "BUILDING"), Predicate("o_orderdate", "<", 1500),
               Predicate("l_shipdate", ">", 1300)),
        group_by=("l_orderkey", "o_orderdate", "o_shippriority") if grouped else (),
    )


def _q4() -> QuerySpec:
    return QuerySpec(
        "Q4", ("orders",), (Aggregate("COUNT", None, "order_count"),),
        where=(Predicate("o_orderdate", "between", (700, 879)),),
        group_by=("o_orderpriority",),
        exists=NestedQuery(
            ("lineitem",),
            where=(Predicate("l_commitdate", "<", {"attr": "l_receiptdate"}),),
            correlation=(("o_orderkey", "l_orderkey"),),
        ),
    )


def _q6() -> QuerySpec:
    return QuerySpec(
        "Q6", ("lineitem",), (Aggregate("SUM", "l_extendedprice * l_discount", "revenue"),),
        where=(Predicate("l_shipdate", "between", (365, 1094)), Predicate("l_discount", "between", (5, 7)),
               Predicate("l_quantity", "<", 24)),
    )


def _q9(grouped: bool = True, metal: str = "BRASS") -> QuerySpec:
    return QuerySpec(
        "Q9" if grouped else "Q9-sum",
        ("part", "supplier", "lineitem", "partsupp", "orders", "nation"),
        (Aggregate("SUM", f"{REVENUE} - ps_supplycost * l_quantity * 100", "profit"),),
        joins=(J_LS, J_LPS, J_LP, J_OL, J_SN),
        where=(Predicate("p_type", "in", tuple(t for t in TYPES if t.endswith(metal))),),
        group_by=("n_name",) if grouped else (),
    )


def _q14() -> QuerySpec:
    return QuerySpec(
        "Q14", ("lineitem", "part"), (Aggregate("SUM", REVENUE, "revenue"),),
        joins=(J_LP,),
        where=(Predicate("l_shipdate", "between", (1000, 1089)),),
    )


def _q17() -> QuerySpec:
    return QuerySpec(
        "Q17", ("lineitem", "part"), (Aggregate("SUM", "l_extendedprice", "sum_price"),),
        joins=(J_LP,),
        where=(Predicate("p_brand", "in", ("Brand#23", "Brand#34")),),
        exists=NestedQuery(
            ("lineitem",),
            where=(Predicate("l_quantity", ">=", 45),),
            correlation=(("p_partkey", "l_partkey"),),
        ),
    )


def _q19() -> QuerySpec:
    return QuerySpec(
        "Q19", ("lineitem", "part"), (Aggregate("SUM", REVENUE, "revenue"),),
        joins=(J_LP,),
        where=(Predicate("p_brand", "in", ("Brand#12", "Brand#23", "Brand#34")),
               Predicate("p_size", "between", (1, 15)), Predicate("l_quantity", "between", (1, 30))),
    )


def _qc() -> QuerySpec:
    return QuerySpec(
        "QC", ("customer", "orders", "lineitem"),
        (Aggregate("SUM", "l_extendedprice", "spend"), Aggregate("COUNT", None, "lines")),
        joins=(J_CO, J_OL),
        group_by=("c_custkey",),
    )


def workload() -> dict[str, QuerySpec]:
    """Built-in analogues of the TPC-H queries, keyed by name."""
    qs = [_q1(), _q3(), _q3(False), _q4(), _q6(), _q9(), _q9(False), _q14(), _q17(), _q19(), _qc()]
    return {q.name: q for q in qs}


SWEEP_QUERIES = ("Q1", "Q3", "Q4", "Q6", "Q9", "Q14", "Q17", "Q19")
