"""Command-line entry point; every subcommand writes CSV."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import pandas as pd
import yaml

from . import presets
from .advisor import recommend
from .catalog import dump_catalog, load_catalog, validate_scheme
from .datagen import GenConfig, generate
from .engine import NotApproximable, Unanswerable, execute
from .experiments import ExperimentConfig, VarianceStudyConfig, approximability_frame, run, variance_study
from .failure import StragglerModel, inject
from .partitioner import partition
from .planner import plan_query
from .query import load_queries

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3


class ConfigError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return doc


def _gen_config(doc: dict, args) -> GenConfig:
    gen = dict(doc.get("gen", {}))
    for key in ("scale", "skew_z", "cluster_correlation", "orphan_fraction"):
        val = getattr(args, key, None)
        if val is not None:
            gen[key] = val
    if args.seed is not None:
        gen["seed"] = args.seed
    return GenConfig(**gen)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, lineterminator="\n")
    print(path)


def _scheme(name_or_path: str):
    if name_or_path in presets.PRESETS:
        return presets.preset(name_or_path)
    graph, scheme = load_catalog(Path(name_or_path))
    if scheme is None:
        raise ConfigError(f"{name_or_path} defines no scheme")
    return scheme


def _queries(names: list[str] | None, path: str | None):
    wl = presets.workload()
    out = []
    if path:
        out += load_queries(path)
    for n in names or ([] if path else list(presets.SWEEP_QUERIES)):
        if n not in wl:
            raise ConfigError(f"unknown query {n}")
        out.append(wl[n])
    return out


def cmd_gen(args) -> None:
    db = generate(_gen_config(_load_config(args.config), args))
    for p in db.dump_csv(_out_dir(args)):
        print(p)


def cmd_partition(args) -> None:
    doc = _load_config(args.config)
    db = generate(_gen_config(doc, args))
    scheme = _scheme(args.design)
    problems = validate_scheme(scheme, presets.GRAPH)
    if problems:
        raise ConfigError("; ".join(problems))
    pdb = partition(db, scheme, args.M, args.seed or 0)
    rows = []
    for name in pdb.layouts:
        for k, n in enumerate(pdb.chunk_tallies(name)):
            rows.append({"hierarchy": name, "chunk": k, "clusters": int(n)})
    out = _out_dir(args)
    if args.dump_chunks:
        pdb.dump_chunks(out / "chunks")
    _write(pd.DataFrame(rows), out / "partition.csv")


def cmd_plan(args) -> None:
    designs = args.design or ["SDWithout", "SDWith", "WD"]
    queries = _queries(args.query, args.queries_file)
    rows = []
    for d in designs:
        scheme = _scheme(d)
        for q in queries:
            plan = plan_query(q, scheme)
            rows.append({
                "design": d, "query": q.name, "approximable": "Y" if plan.decision else "N",
                "reason": plan.decision.reason,
                "components": " ".join(c.id for c in plan.pq.components),
                "stages": " > ".join("+".join(sorted(s.cluster_attrs)) for s in plan.stage_plan.stages),
                "group_case": plan.group_case.kind.value,
            })
    out = _out_dir(args)
    _write(pd.DataFrame(rows), out / "plan.csv")
    if not args.queries_file and not args.query and not args.design:
        _write(approximability_frame(), out / "approximability.csv")


def cmd_run(args) -> None:
    doc = _load_config(args.config)
    gen = _gen_config(doc, args)
    straggler = None
    if args.straggler_timeout_ms is not None:
        straggler = StragglerModel(args.straggler_prob, args.fast_ms, args.slow_ms, args.straggler_timeout_ms)
    if args.query:
        # single query, single failure event
        wl = presets.workload()
        if args.query not in wl:
            raise ConfigError(f"unknown query {args.query}")
        M = args.M or doc.get("M", 20)
        pdb = partition(generate(gen), _scheme(args.design or "SDWithout"), M, args.seed or 0)
        event = inject(M, args.pf or 0.0, args.seed or 0,
                       fixed_unavailable=args.fixed_unavailable, stragglers=straggler)
        try:
            report = execute(wl[args.query], pdb, event, use_known_counts=not args.estimate_counts)
        except (NotApproximable, Unanswerable) as exc:
            raise ConfigError(str(exc)) from exc
        _write(report.to_frame(), _out_dir(args) / f"estimates_{args.query}.csv")
        return
    exp = {k: v for k, v in doc.items() if k not in ("gen", "variance_study")}
    for key in ("designs", "queries", "availabilities"):
        if key in exp:
            exp[key] = tuple(exp[key])
    if args.M:
        exp["M"] = args.M
    if args.seed is not None:
        exp["seed"] = args.seed
    if args.replications:
        exp["replications"] = args.replications
    if args.pf is not None:
        exp["failure_mode"], exp["availabilities"] = "bernoulli", (1 - args.pf,)
    if args.fixed_unavailable is not None:
        M = exp.get("M", 20)
        exp["failure_mode"], exp["availabilities"] = "fixed", (1 - args.fixed_unavailable / M,)
    exp["jobs"] = args.jobs
    try:
        config = ExperimentConfig(gen=gen, **exp)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    _write(run(config), _out_dir(args) / "run.csv")


def cmd_advise(args) -> None:
    doc = _load_config(args.config)
    db = generate(_gen_config(doc, args))
    queries = _queries(args.query, args.queries_file)
    rec = recommend(presets.GRAPH, queries, db, replicate=args.replicate or ("nation", "region"),
                    seed=args.seed or 0)
    out = _out_dir(args)
    (out / "scheme.yaml").write_text(dump_catalog(presets.GRAPH, rec.scheme))
    print(out / "scheme.yaml")
    _write(rec.candidates, out / "candidates.csv")


def cmd_variance_study(args) -> None:
    doc = _load_config(args.config).get("variance_study", {})
    if args.replications:
        doc["replications"] = args.replications
    if args.seed is not None:
        doc["seed"] = args.seed
    res = variance_study(VarianceStudyConfig(**doc))
    _write(res.table, _out_dir(args) / "variance_study.csv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cohash-aqp", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1)

    def gen_flags(sp):
        sp.add_argument("--scale", type=float)
        sp.add_argument("--skew-z", dest="skew_z", type=float)
        sp.add_argument("--cluster-correlation", dest="cluster_correlation", type=float)
        sp.add_argument("--orphan-fraction", dest="orphan_fraction", type=float)

    sp = sub.add_parser("gen", help="generate a synthetic database as CSV")
    common(sp), gen_flags(sp)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("partition", help="partition and report per-chunk cluster tallies")
    common(sp), gen_flags(sp)
    sp.add_argument("--design", default="SDWithout", help="preset name or catalog YAML")
    sp.add_argument("-M", type=int, default=20)
    sp.add_argument("--dump-chunks", action="store_true")
    sp.set_defaults(func=cmd_partition)

    sp = sub.add_parser("plan", help="approximability and stage plans")
    common(sp)
    sp.add_argument("--design", action="append")
    sp.add_argument("--query", action="append")
    sp.add_argument("--queries-file")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("run", help="failure-replication experiment or a single query")
    common(sp), gen_flags(sp)
    sp.add_argument("--design")
    sp.add_argument("--query")
    sp.add_argument("-M", type=int)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--pf", type=float)
    sp.add_argument("--fixed-unavailable", dest="fixed_unavailable", type=int)
    sp.add_argument("--straggler-timeout-ms", dest="straggler_timeout_ms", type=float)
    sp.add_argument("--straggler-prob", dest="straggler_prob", type=float, default=0.1)
    sp.add_argument("--fast-ms", dest="fast_ms", type=float, default=10.0)
    sp.add_argument("--slow-ms", dest="slow_ms", type=float, default=1000.0)
    sp.add_argument("--estimate-counts", dest="estimate_counts", action="store_true",
                    help="estimate cluster counts from surviving chunks")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("advise", help="recommend a co-hash scheme for a workload")
    common(sp), gen_flags(sp)
    sp.add_argument("--query", action="append")
    sp.add_argument("--queries-file")
    sp.add_argument("--replicate", action="append")
    sp.set_defaults(func=cmd_advise)

    sp = sub.add_parser("variance-study", help="estimated vs observed variance per stage ordering")
    common(sp)
    sp.add_argument("--replications", type=int)
    sp.set_defaults(func=cmd_variance_study)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, RuntimeError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
