import numpy as np
import pandas as pd
import pytest
import yaml

from cohash_aqp.catalog import load_catalog
from cohash_aqp.cli import EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK, main
from cohash_aqp.experiments import RUN_COLUMNS

GEN = ["--scale", "0.5", "--seed", "3"]


def _csv(path):
    return pd.read_csv(path, keep_default_na=False)


def test_help_exits_zero(capsys):
    assert main(["--help"]) == EXIT_OK


@pytest.mark.parametrize("argv", [
    [],
    ["nope"],
    ["gen", "--scale", "-1"],
    ["plan", "--query", "Q99"],
    ["partition", "--design", "NoSuchDesign"],
    ["run", "--query", "Q99"],
])
def test_config_errors_exit_two(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv and argv[0] != "nope" else argv) == EXIT_CONFIG


def test_unreadable_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["gen", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG


def test_invariant_violation_exit_three(tmp_path, monkeypatch):
    import cohash_aqp.cli as cli

    def broken(args):
        raise AssertionError("boom")

    monkeypatch.setattr(cli, "cmd_gen", broken)
    assert main(["gen", "--out", str(tmp_path)]) == EXIT_INVARIANT


def test_gen_writes_tables(tmp_path):
    assert main(["gen", *GEN, "--out", str(tmp_path)]) == EXIT_OK
    names = {p.stem for p in tmp_path.glob("*.csv")}
    assert {"customer", "orders", "lineitem", "part", "partsupp", "supplier"} <= names


def test_partition_tallies(tmp_path):
    assert main(["partition", *GEN, "-M", "5", "--out", str(tmp_path), "--dump-chunks"]) == EXIT_OK
    df = _csv(tmp_path / "partition.csv")
    assert list(df.columns) == ["hierarchy", "chunk", "clusters"]
    assert sorted(df["chunk"].unique()) == list(range(5))
    assert (tmp_path / "chunks").is_dir()


def test_partition_accepts_catalog_file(tmp_path):
    from cohash_aqp import presets
    from cohash_aqp.catalog import dump_catalog

    path = tmp_path / "wd.yaml"
    path.write_text(dump_catalog(presets.GRAPH, presets.wd()))
    assert main(["partition", *GEN, "-M", "4", "--design", str(path), "--out", str(tmp_path)]) == EXIT_OK
    assert set(_csv(tmp_path / "partition.csv")["hierarchy"]) == {h.name for h in presets.wd().hierarchies}


def test_plan_default_table(tmp_path):
    assert main(["plan", "--out", str(tmp_path)]) == EXIT_OK
    plan = _csv(tmp_path / "plan.csv")
    assert list(plan.columns) == ["design", "query", "approximable", "reason", "components", "stages", "group_case"]
    table = _csv(tmp_path / "approximability.csv").set_index("design")
    assert table.loc["SDWithout", "Q4"] == "Y"
    assert table.loc["SDWith", "Q4"] == "N"
    assert table.loc["WD", "Q4"] == "N"


def test_plan_selected(tmp_path):
    assert main(["plan", "--design", "WD", "--query", "Q6", "--out", str(tmp_path)]) == EXIT_OK
    plan = _csv(tmp_path / "plan.csv")
    assert len(plan) == 1 and plan.loc[0, "approximable"] == "Y"
    assert not (tmp_path / "approximability.csv").exists()


def _run_config(tmp_path, **over):
    doc = {"gen": {"scale": 0.5, "seed": 3}, "designs": ["SDWithout"], "queries": ["Q6", "Q3"],
           "M": 10, "availabilities": [0.5, 1.0], "replications": 2, **over}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def test_run_schema_and_replay(tmp_path):
    cfg = _run_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", "--config", str(cfg), "--out", str(b)]) == EXIT_OK
    assert (a / "run.csv").read_bytes() == (b / "run.csv").read_bytes()
    df = _csv(a / "run.csv")
    assert list(df.columns) == RUN_COLUMNS


def test_run_parallel_matches_serial(tmp_path):
    cfg = _run_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "s")]) == EXIT_OK
    assert main(["run", "--config", str(cfg), "--jobs", "2", "--out", str(tmp_path / "p")]) == EXIT_OK
    assert (tmp_path / "s" / "run.csv").read_bytes() == (tmp_path / "p" / "run.csv").read_bytes()


def test_run_full_availability_is_exact(tmp_path):
    cfg = _run_config(tmp_path, availabilities=[1.0])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    df = pd.read_csv(tmp_path / "run.csv")
    ok = df[df["status"] == "ok"]
    assert len(ok) > 0
    np.testing.assert_array_equal(ok["rel_error"].fillna(0).to_numpy(), 0.0)


def test_run_records_unanswerable(tmp_path):
    cfg = _run_config(tmp_path, queries=["Q17"], availabilities=[0.5])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
    df = _csv(tmp_path / "run.csv")
    assert set(df["status"]) == {"not-approximable"}


def test_run_rejects_unknown_key(tmp_path):
    cfg = _run_config(tmp_path, colour="blue")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_run_single_query_flags(tmp_path):
    argv = ["run", *GEN, "--query", "Q6", "-M", "10", "--fixed-unavailable", "3", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    df = _csv(tmp_path / "estimates_Q6.csv")
    assert len(df) == 1
    assert main(argv[:-2] + ["--straggler-timeout-ms", "100", "--estimate-counts", "--out", str(tmp_path)]) == EXIT_OK


def test_run_single_query_not_approximable(tmp_path):
    argv = ["run", *GEN, "--query", "Q17", "-M", "10", "--pf", "0.5", "--out", str(tmp_path)]
    assert main(argv) == EXIT_CONFIG


def test_advise_outputs(tmp_path):
    argv = ["advise", *GEN, "--query", "Q3", "--query", "Q9", "--replicate", "nation",
            "--replicate", "region", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    graph, scheme = load_catalog(tmp_path / "scheme.yaml")
    assert scheme is not None and len(scheme.hierarchies) >= 1
    cands = _csv(tmp_path / "candidates.csv")
    assert list(cands.columns) == ["candidate", "roots", "hierarchies", "cost", "non_approximable"]


def test_variance_study_small(tmp_path):
    cfg = tmp_path / "vs.yaml"
    cfg.write_text(yaml.safe_dump({"variance_study": {"scale": 1.0, "chunks": 20}}))
    argv = ["variance-study", "--config", str(cfg), "--replications", "20", "--out", str(tmp_path)]
    assert main(argv) == EXIT_OK
    df = _csv(tmp_path / "variance_study.csv")
    assert list(df.columns) == ["order", "estimated_variance", "observed_variance", "ratio", "algorithm_order"]
    assert len(df) == 6 and df["algorithm_order"].sum() == 1


QUERY_FILE = """\
queries:
  - name: big_orders
    from: [orders, lineitem]
    joins: [{edge: [lineitem, orders], on: [[l_orderkey, o_orderkey]]}]
    where: [{attr: l_quantity, op: ">", value: 40}]
    select: [o_orderpriority]
    aggregates: [{func: SUM, expr: l_extendedprice, name: spend}]
"""


def test_plan_queries_file_with_bare_on_key(tmp_path):
    path = tmp_path / "q.yaml"
    path.write_text(QUERY_FILE)
    assert main(["plan", "--queries-file", str(path), "--out", str(tmp_path)]) == EXIT_OK
    plan = _csv(tmp_path / "plan.csv")
    assert list(plan["query"]) == ["big_orders"] * 3
    assert set(plan["approximable"]) == {"Y"}


def test_run_ignores_variance_study_section(tmp_path):
    cfg = _run_config(tmp_path, variance_study={"replications": 5})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_OK
