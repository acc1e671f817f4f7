import numpy as np
import pandas as pd
import pytest

from cohash_aqp import presets
from cohash_aqp.catalog import CoHashScheme, is_nonredundant
from cohash_aqp.datagen import Database, GenConfig, generate
from cohash_aqp.partitioner import cluster_of, hash_to_chunk, partition


@pytest.fixture
def five_customers():
    customer = pd.DataFrame({"c_custkey": [100, 101, 200, 201, 300]})
    orders = pd.DataFrame({"o_orderkey": [101010, 101011, 202020, 202024, 303030],
                           "o_custkey": [100, 100, 200, 200, 300]})
    lineitem = pd.DataFrame({"l_orderkey": [101010, 101010, 101011, 202024, 303030],
                             "l_linenumber": [1, 2, 1, 1, 1]})
    return Database({"customer": customer, "orders": orders, "lineitem": lineitem})


def test_hash_single_chunk():
    assert hash_to_chunk((123,), 1) == 0
    assert hash_to_chunk("abc", 1, seed=9) == 0


def test_hash_deterministic():
    assert hash_to_chunk((42, "x"), 16, seed=3) == hash_to_chunk((42, "x"), 16, seed=3)


def test_hash_balance():
    loads = np.bincount([hash_to_chunk((k,), 16) for k in range(10_000)], minlength=16)
    assert loads.max() / loads.min() < 1.6


def test_hash_rejects_bad_m():
    with pytest.raises(ValueError):
        hash_to_chunk((1,), 0)


def test_h6_co_location(five_customers):
    pdb = partition(five_customers, CoHashScheme((presets.h6(),)), 4, seed=0)
    c = cluster_of(pdb, "H6", 100)
    assert set(c.members["orders"]["o_orderkey"]) == {101010, 101011}
    assert len(c.members["lineitem"]) == 3
    # every tuple of the cluster sits in one chunk
    chunks = set()
    for rel in ("customer", "orders", "lineitem"):
        m = pdb.members("H6", rel)
        keys = five_customers[rel].iloc[m["rid"]]
        col = {"customer": "c_custkey", "orders": "o_custkey"}.get(rel)
        if col is None:
            mine = keys["l_orderkey"].isin([101010, 101011]).to_numpy()
        else:
            mine = (keys[col] == 100).to_numpy()
        chunks |= set(m["chunk"].to_numpy()[mine])
    assert len(chunks) == 1


def test_cluster_of_customer_200(five_customers):
    pdb = partition(five_customers, CoHashScheme((presets.h6(),)), 4)
    c = cluster_of(pdb, "H6", 200)
    assert set(c.members["orders"]["o_orderkey"]) == {202020, 202024}
    assert list(c.members["lineitem"]["l_orderkey"]) == [202024]


def test_cluster_of_childless_root(five_customers):
    pdb = partition(five_customers, CoHashScheme((presets.h6(),)), 4)
    c = cluster_of(pdb, "H6", 101)
    assert c.size() == 1 and len(c.members["orders"]) == 0


def test_cluster_of_unknown_key(five_customers):
    pdb = partition(five_customers, CoHashScheme((presets.h6(),)), 4)
    with pytest.raises(KeyError):
        cluster_of(pdb, "H6", 999)


def test_single_chunk_holds_everything(small_db):
    pdb = partition(small_db, presets.sd_without(), 1)
    chunk = pdb.chunk(0)
    for h in pdb.scheme.hierarchies:
        for rel in h.relations:
            assert len(chunk.fragments[(h.name, rel)]) == small_db.size(rel)
    assert set(chunk.replicated) == {"supplier", "nation", "region"}


def test_redundant_hierarchy_duplicates_order():
    orders = pd.DataFrame({"o_orderkey": [7]})
    lineitem = pd.DataFrame({"l_orderkey": [7, 7], "l_linenumber": [1, 2]})
    db = Database({"orders": orders, "lineitem": lineitem})
    seed = next(s for s in range(100) if hash_to_chunk((1,), 4, s) != hash_to_chunk((2,), 4, s))
    pdb = partition(db, CoHashScheme((presets.redundant_orders(),)), 4, seed)
    m = pdb.members("LO", "orders")
    assert len(m) == 2 and m["chunk"].nunique() == 2


@pytest.mark.parametrize("seed", range(50))
def test_placement_invariance(seed):
    db = generate(GenConfig(scale=0.5, seed=seed, skew_z=seed % 3 * 0.5))
    scheme = presets.wd() if seed % 2 else presets.sd_without()
    pdb = partition(db, scheme, 7, seed)
    for h in scheme.hierarchies:
        for rel in h.relations:
            m = pdb.members(h.name, rel)
            # every tuple is placed; non-redundant relations exactly once
            assert set(m["rid"]) == set(range(db.size(rel)))
            if is_nonredundant(h, rel):
                assert not m["rid"].duplicated().any()


def test_chunk_tallies_sum_to_cluster_count(sd_without_pdb):
    for name, n in sd_without_pdb.cluster_counts.items():
        assert sd_without_pdb.chunk_tallies(name).sum() == n


def test_orphans_get_own_clusters():
    db = generate(GenConfig(scale=0.5, seed=1, orphan_fraction=0.1))
    pdb = partition(db, presets.sd_without(), 5)
    lay = pdb.layouts["H6"]
    n_orphans = int((~db["orders"]["o_custkey"].isin(db["customer"]["c_custkey"])).sum())
    assert lay.n_clusters == lay.n_root_clusters + n_orphans


def test_dump_chunks(tmp_path, five_customers):
    pdb = partition(five_customers, CoHashScheme((presets.h6(),)), 3)
    pdb.dump_chunks(tmp_path)
    total = sum(len(pd.read_csv(p)) for p in tmp_path.glob("chunk_*/H6__orders.csv"))
    assert total == 5
