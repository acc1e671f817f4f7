import math

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from cohash_aqp import presets
from cohash_aqp.datagen import GenConfig, generate
from cohash_aqp.engine import (NotApproximable, StageDesign, Unanswerable, deduplicate, execute,
                               truncated_variance)
from cohash_aqp.estimators import StageSample, bernoulli, srswor, stage_variance_terms
from cohash_aqp.failure import FailureEvent, inject
from cohash_aqp.oracle import exact_answer
from cohash_aqp.partitioner import partition

CSV_COLUMNS = ["aggregate", "estimate", "variance", "ci_low", "ci_high", "exact", "method"]


@pytest.fixture(scope="module")
def mid_db():
    return generate(GenConfig(scale=1, seed=11))


def _assert_matches_oracle(report, truth):
    got = report.as_dict()
    assert set(got) == set(truth)
    for key, aggs in truth.items():
        for name, t in aggs.items():
            if isinstance(t, float):
                assert math.isclose(got[key][name], t, rel_tol=1e-9)
            else:
                assert got[key][name] == t


@pytest.mark.parametrize("design", ["sd_without_pdb", "sd_with_pdb", "wd_pdb"])
@pytest.mark.parametrize("qname", sorted(presets.workload()))
def test_census_equals_oracle(design, qname, request, small_db, workload):
    pdb = request.getfixturevalue(design)
    rep = execute(workload[qname], pdb)
    assert rep.exact and rep.method == "exact"
    assert all(e.ci_low is None for g in rep.groups for e in g.estimates.values())
    _assert_matches_oracle(rep, exact_answer(workload[qname], small_db))


@pytest.mark.parametrize("pf", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("qname", ["Q6", "Q1", "Q9-sum"])
def test_pi_scaling_cancels(pf, qname, workload, request):
    pdb = partition(request.getfixturevalue("small_db"), presets.d1(), 8, seed=2)
    event = inject(8, seed=4, fixed_unavailable=3)
    a = execute(workload[qname], pdb, event)
    b = execute(workload[qname], pdb, event, pi_scale=1 - pf)
    assert a.to_frame().equals(b.to_frame())


def test_half_available_sum(workload):
    # 450 clusters, about 225 surviving
    mid_db = generate(GenConfig(scale=3, seed=11))
    pdb = partition(mid_db, presets.sd_without(), 20, seed=0)
    event = inject(20, seed=3, fixed_unavailable=10)
    rep = execute(workload["Q6"], pdb, event)
    truth = exact_answer(workload["Q6"], mid_db)[()]["revenue"]
    assert rep.method == "one-stage"
    assert abs(rep.value("revenue") - truth) / truth < 0.10
    # point estimate is the surviving sum inflated by N / s
    lay = pdb.layouts["H6"]
    alive = np.isin(lay.chunk_of_cluster, event.surviving)
    inflation = lay.n_clusters / alive.sum()
    survivors = exact_answer(workload["Q6"], _surviving_db(mid_db, pdb, event))[()]["revenue"]
    assert_allclose(rep.value("revenue"), survivors * inflation, rtol=1e-12)


def _surviving_db(db, pdb, event):
    from cohash_aqp.datagen import Database
    rels = dict(db.relations)
    m = pdb.members("H6", "lineitem")
    keep = m[m["chunk"].isin(event.surviving)]["rid"].to_numpy()
    rels["lineitem"] = db["lineitem"].iloc[np.sort(keep)].reset_index(drop=True)
    return Database(rels)


def test_nested_count_unbiased(mid_db, workload):
    q = workload["Q4"]
    pdb = partition(mid_db, presets.sd_without(), 20, seed=0)
    truth = sum(v["order_count"] for v in exact_answer(q, mid_db).values())
    totals = []
    for r in range(1000):
        rep = execute(q, pdb, inject(20, seed=r, fixed_unavailable=10))
        totals.append(sum(v["order_count"] for v in rep.as_dict().values()))
    assert abs(np.mean(totals) - truth) / truth < 0.01


def test_not_approximable(sd_without_pdb, workload):
    with pytest.raises(NotApproximable):
        execute(workload["Q17"], sd_without_pdb, inject(8, seed=0, fixed_unavailable=2))


def test_unanswerable_when_hierarchy_empty(small_db, workload):
    pdb = partition(small_db, presets.sd_without(), 8, seed=1)
    with pytest.raises((Unanswerable, ValueError)):
        execute(workload["Q6"], pdb, FailureEvent(8, frozenset(range(8))))


def test_group_equals_cluster_attrs_exact(sd_without_pdb, small_db, workload):
    q = workload["QC"]
    truth = exact_answer(q, small_db)
    rep = execute(q, sd_without_pdb, inject(8, seed=5, fixed_unavailable=4))
    assert rep.exact
    assert set(rep.as_dict()) < set(truth)
    for key, aggs in rep.as_dict().items():
        assert aggs == truth[key]


def test_report_csv_schema(sd_without_pdb, workload):
    rep = execute(workload["Q1"], sd_without_pdb, inject(8, seed=1, fixed_unavailable=3))
    df = rep.to_frame()
    assert list(df.columns) == ["l_returnflag"] + CSV_COLUMNS
    assert rep.to_csv().splitlines()[0] == ",".join(["l_returnflag"] + CSV_COLUMNS)
    avg = df[df["aggregate"] == "avg_qty"]
    assert ((avg["ci_low"] <= avg["estimate"]) & (avg["estimate"] <= avg["ci_high"])).all()


def test_q9_three_stage_method(small_db, workload):
    pdb = partition(small_db, presets.d1(), 10, seed=0)
    rep = execute(workload["Q9-sum"], pdb, inject(10, seed=2, fixed_unavailable=3))
    assert rep.method == "two-stage-truncated" and len(rep.stage_plan) == 3


def test_dedup_identity_without_repeats():
    df = pd.DataFrame({"_rid::a": [0, 1, 2], "v": [1, 2, 3]})
    assert deduplicate(df, ["_rid::a"]).equals(df)


def test_dedup_counts_replica_once():
    df = pd.DataFrame({"_rid::orders": [4, 4, 5], "_chunk::X": [0, 1, 1]})
    out = deduplicate(df, ["_rid::orders"], tag="_chunk::X")
    assert sorted(out["_rid::orders"]) == [4, 5]


def test_dedup_survivor_kept():
    df = pd.DataFrame({"_rid::orders": [4, 4], "_chunk::X": [0, 1]})
    alive = df[df["_chunk::X"] == 1]
    out = deduplicate(alive, ["_rid::orders"], tag="_chunk::X")
    assert list(out["_chunk::X"]) == [1]


def test_dedup_missing_provenance():
    with pytest.raises(RuntimeError, match="internal error"):
        deduplicate(pd.DataFrame({"_rid::a": [1]}), ["_rid::a"], tag="_chunk::X")


def test_redundant_scheme_no_double_count(sd_with_pdb, small_db, workload):
    q = workload["Q3-sum"]
    assert execute(q, sd_with_pdb).value("revenue") == exact_answer(q, small_db)[()]["revenue"]


def test_truncated_variance_matches_nested_estimator():
    rng = np.random.default_rng(0)
    N1, n1, p2 = 6, 4, 0.5
    u1 = np.repeat(np.arange(n1), 3)
    u2 = np.tile(np.arange(3), n1) + 10 * u1
    vals = rng.integers(1, 9, len(u1)).astype(float)
    stages = [StageDesign("srswor", n1 / N1, N=N1, n=n1), StageDesign("bernoulli", p2)]
    var, clamped = truncated_variance(np.zeros(len(u1), dtype=np.int64), [u1, u2], vals, stages, 2, 1)
    subs = [StageSample(np.arange(3), bernoulli(3, p2), values=vals[u1 == i]) for i in range(n1)]
    ref = sum(stage_variance_terms(StageSample(np.arange(n1), srswor(n1, N1), subsamples=subs)))
    assert_allclose(var[0], max(ref, 0.0), rtol=1e-9)
    assert not clamped[0]
