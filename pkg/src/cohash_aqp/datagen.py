"""Deterministic synthetic mini TPC-H databases."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import presets
from ._validation import check_nonneg, check_positive

BASE_SIZES = {"customer": 150, "orders": 1500, "lineitem": 6000, "part": 200, "supplier": 10}
SUPPLIERS_PER_PART = 4
MAX_DATE = 2405


@dataclass(frozen=True)
class GenConfig:
    """Generator settings.

    Parameters
    ----------
    scale : float
        Size multiplier; 1.0 gives 150 customers, 1 500 orders, 6 000 lineitems,
        200 parts, 800 partsupps and 10 suppliers.
    skew_z : float
        Zipf exponent for orders-per-customer and lineitems-per-order. Zero gives
        equal fan-outs.
    seed : int
    cluster_correlation : float
        Weight of a per-customer offset added to ``l_extendedprice``; makes
        lineitems of one customer alike.
    orphan_fraction : float
        Fraction of orders whose customer key matches no customer.
    """

    scale: float = 1.0
    skew_z: float = 0.0
    seed: int = 0
    cluster_correlation: float = 0.0
    orphan_fraction: float = 0.0

    def __post_init__(self) -> None:
        check_positive(self.scale, "scale")
        check_nonneg(self.skew_z, "skew_z")
        check_nonneg(self.cluster_correlation, "cluster_correlation")
        if not 0.0 <= self.orphan_fraction < 1.0:
            raise ValueError("orphan_fraction must lie in [0, 1)")


class Database:
    """Named relations held as DataFrames."""

    def __init__(self, relations: dict[str, pd.DataFrame]):
        self.relations = dict(relations)

    def __getitem__(self, name: str) -> pd.DataFrame:
        return self.relations[name]

    def __contains__(self, name: str) -> bool:
        return name in self.relations

    def names(self) -> list[str]:
        return list(self.relations)

    def size(self, name: str) -> int:
        return len(self.relations[name])

    def tuples(self, name: str) -> list[dict]:
        return self.relations[name].to_dict("records")

    def to_csv(self, name: str) -> str:
        buf = io.StringIO()
        self.relations[name].to_csv(buf, index=False, lineterminator="\n")
        return buf.getvalue()

    def dump_csv(self, directory: str | Path) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in self.relations:
            path = out / f"{name}.csv"
            path.write_text(self.to_csv(name))
            paths.append(path)
        return paths

    @classmethod
    def load_csv(cls, directory: str | Path) -> "Database":
        rels = {}
        for name in presets.RELATIONS:
            path = Path(directory) / f"{name}.csv"
            if path.exists():
                rels[name] = pd.read_csv(path, keep_default_na=False)
        return cls(rels)


def _sizes(scale: float) -> dict[str, int]:
    sizes = {k: int(round(v * scale)) for k, v in BASE_SIZES.items()}
    if min(sizes.values()) < 1 or sizes["supplier"] < SUPPLIERS_PER_PART:
        raise ValueError("scale too small")
    return sizes


def allocate(total: int, parents: int, z: float, rng: np.random.Generator) -> np.ndarray:
    """Split ``total`` children among ``parents``: equal shares at z = 0, Zipf(z) weights otherwise."""
    if z == 0:
        base = np.full(parents, total // parents, dtype=np.int64)
        base[: total % parents] += 1
        return base
    weights = 1.0 / np.arange(1, parents + 1, dtype=float) ** z
    weights = weights[rng.permutation(parents)]
    return rng.multinomial(total, weights / weights.sum()).astype(np.int64)


def generate(config: GenConfig) -> Database:
    """Build a referentially intact database; equal configs give identical data."""
    n = _sizes(config.scale)
    rng = np.random.default_rng(config.seed)
    pick = lambda pool, k: np.asarray(pool, dtype=object)[rng.integers(0, len(pool), k)]

    region = pd.DataFrame({"r_regionkey": np.arange(5), "r_name": list(presets.REGIONS)})
    nation = pd.DataFrame({
        "n_nationkey": np.arange(25),
        "n_regionkey": np.arange(25) // 5,
        "n_name": list(presets.NATIONS),
    })
    n_cust, n_supp, n_part = n["customer"], n["supplier"], n["part"]
    customer = pd.DataFrame({
        "c_custkey": np.arange(1, n_cust + 1),
        "c_nationkey": rng.integers(0, 25, n_cust),
        "c_mktsegment": pick(presets.SEGMENTS, n_cust),
        "c_acctbal": rng.integers(-999, 10000, n_cust),
    })
    supplier = pd.DataFrame({
        "s_suppkey": np.arange(1, n_supp + 1),
        "s_nationkey": rng.integers(0, 25, n_supp),
        "s_acctbal": rng.integers(-999, 10000, n_supp),
    })
    part = pd.DataFrame({
        "p_partkey": np.arange(1, n_part + 1),
        "p_brand": pick(presets.BRANDS, n_part),
        "p_type": pick(presets.TYPES, n_part),
        "p_container": pick(presets.CONTAINERS, n_part),
        "p_size": rng.integers(1, 51, n_part),
        "p_retailprice": rng.integers(900, 2101, n_part),
    })
    ps_supp = np.concatenate([
        rng.choice(n_supp, SUPPLIERS_PER_PART, replace=False) + 1 for _ in range(n_part)
    ])
    partsupp = pd.DataFrame({
        "ps_partkey": np.repeat(part["p_partkey"].to_numpy(), SUPPLIERS_PER_PART),
        "ps_suppkey": ps_supp,
        "ps_availqty": rng.integers(1, 10000, n_part * SUPPLIERS_PER_PART),
        "ps_supplycost": rng.integers(1, 1001, n_part * SUPPLIERS_PER_PART),
    })

    n_ord = n["orders"]
    per_cust = allocate(n_ord, n_cust, config.skew_z, rng)
    o_cust = np.repeat(customer["c_custkey"].to_numpy(), per_cust)
    n_orphan = int(round(config.orphan_fraction * n_ord))
    if n_orphan:
        idx = rng.choice(n_ord, n_orphan, replace=False)
        o_cust[idx] = n_cust + 1 + np.arange(n_orphan)
    o_date = rng.integers(0, MAX_DATE, n_ord)
    orders = pd.DataFrame({
        "o_orderkey": np.arange(1, n_ord + 1),
        "o_custkey": o_cust,
        "o_orderdate": o_date,
        "o_orderpriority": pick(presets.PRIORITIES, n_ord),
        "o_shippriority": np.zeros(n_ord, dtype=np.int64),
        "o_totalprice": rng.integers(1000, 500000, n_ord),
    })

    n_line = n["lineitem"]
    per_order = allocate(n_line, n_ord, config.skew_z, rng)
    l_order = np.repeat(orders["o_orderkey"].to_numpy(), per_order)
    starts = np.repeat(np.cumsum(per_order) - per_order, per_order)
    l_number = np.arange(n_line) - starts + 1
    ps_idx = rng.integers(0, len(partsupp), n_line)
    l_part = partsupp["ps_partkey"].to_numpy()[ps_idx]
    l_supp = partsupp["ps_suppkey"].to_numpy()[ps_idx]
    qty = rng.integers(1, 51, n_line)
    price = qty * part["p_retailprice"].to_numpy()[l_part - 1]
    if config.cluster_correlation > 0:
        offset = np.round(config.cluster_correlation * 50000 * rng.random(n_cust + n_orphan + 1))
        cust_of_line = np.repeat(o_cust, per_order)
        price = price + offset.astype(np.int64)[cust_of_line - 1]
    o_date_line = np.repeat(o_date, per_order)
    ship = o_date_line + rng.integers(1, 122, n_line)
    commit = o_date_line + rng.integers(30, 91, n_line)
    receipt = ship + rng.integers(1, 31, n_line)
    flag = np.where(receipt <= 1500, pick(("R", "A"), n_line), "N")
    lineitem = pd.DataFrame({
        "l_orderkey": l_order,
        "l_linenumber": l_number,
        "l_partkey": l_part,
        "l_suppkey": l_supp,
        "l_quantity": qty,
        "l_extendedprice": price.astype(np.int64),
        "l_discount": rng.integers(0, 11, n_line),
        "l_tax": rng.integers(0, 9, n_line),
        "l_returnflag": flag.astype(object),
        "l_shipdate": ship,
        "l_commitdate": commit,
        "l_receiptdate": receipt,
    })
    return Database({
        "customer": customer, "orders": orders, "lineitem": lineitem, "part": part,
        "partsupp": partsupp, "supplier": supplier, "nation": nation, "region": region,
    })
