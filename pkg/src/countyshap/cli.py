"""Command-line entry point: ingest, fit, evaluate, explain, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Settings resolve as command-line flag > ``--config`` file > built-in default.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import data, synthetic
from .data import DataError, Dataset, Schema, SchemaError, SplitSpec
from .forest import ConfigError, Forest, ForestConfig, cross_validate, train_forest
from .metrics import compare_models
from .ols import OlsFit, fit_wls, summary_record, summary_table
from .report import Decomposition, write_explanations, write_scatter
from .shapley import ForestExplainer, batch_explain

log = logging.getLogger("countyshap")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "trees": 2000,
    "min_node": 5,
    "mtry": None,
    "max_depth": None,
    "test_fraction": 392 / 2630,
    "threads": 1,
    "model": "both",
    "ols_sample": "full",
    "cv_folds": 0,
    "grid_mtry": None,
    "grid_min_node": None,
}
_INT_KEYS = {"seed", "trees", "min_node", "mtry", "max_depth", "threads", "cv_folds"}
_FLOAT_KEYS = {"test_fraction"}

FOREST_FILE = "forest.json"
OLS_FILE = "ols.json"
RUN_FILE = "run.json"
SCHEMA_FILE = "schema.txt"


class UsageError(Exception):
    pass


def _resolve(args: argparse.Namespace, keys: Sequence[str]) -> dict[str, Any]:
    """Merge flags over config-file values over defaults."""
    file_values: dict[str, Any] = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        for k, v in data.parse_key_values(path.read_text(encoding="utf-8")):
            k = k.replace("-", "_").lower()
            if k not in DEFAULTS:
                raise UsageError(f"{path}: unknown setting {k!r}")
            if v.lower() in ("", "none"):
                file_values[k] = None
            elif k in _INT_KEYS:
                file_values[k] = int(v)
            elif k in _FLOAT_KEYS:
                file_values[k] = float(v)
            else:
                file_values[k] = v
    out = {}
    for k in keys:
        flag = getattr(args, k, None)
        out[k] = flag if flag is not None else file_values.get(k, DEFAULTS.get(k))
    if out.get("threads") is not None and out["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return out


def _schema(args: argparse.Namespace, fallback: Path | None = None) -> Schema:
    if getattr(args, "schema", None):
        path = Path(args.schema)
        if not path.exists():
            raise UsageError(f"schema file not found: {path}")
        return data.load_schema(path)
    if fallback is not None and fallback.exists():
        return data.load_schema(fallback)
    return Schema()


def _canonical_schema(schema: Schema) -> Schema:
    """Schema of a file already written in canonical form (fractions, canonical names)."""
    return Schema(**{**asdict(schema), "aliases": {}, "percent_scale": False})


def _load_dataset(path: str, schema: Schema, strict: bool = True) -> Dataset:
    ds = data.load_csv(path, schema)
    if strict and ds.report:
        for f in ds.report[:20]:
            log.error("row %s (%s): %s", f.row, f.key, f.reason)
        raise DataError(f"{path}: {len(ds.report)} rows failed validation; run 'ingest' first or fix the file")
    return ds


def _write_text(path: Path, text: str) -> None:
    path.write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8", newline="\n")


def _json_dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=1)


# --- ingest -----------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace) -> int:
    if not args.schema:
        raise UsageError("--schema is required")
    schema = _schema(args)
    frame = data.read_raw(args.counties, schema)
    findings: list[data.Finding] = []
    provenance = [str(args.counties)]
    key = schema.key
    frame[key] = [data.normalize_key(v, schema.key_pattern) for v in frame[key]]
    if args.precincts:
        shares = data.load_precincts(args.precincts)
        findings += shares.findings
        # precinct shares are fractions; match the county file's scale so from_frame rescales uniformly
        scale = 100.0 if schema.percent_scale else 1.0
        right = data.keyed_table({k: v * scale for k, v in shares.items()}, key, schema.key_pattern,
                                 column="perc_rep")
        frame, dropped = data.join_frames(frame, right, key)
        findings += [data.Finding(f.kind, f"precinct join: {f.reason}", key=f.key) for f in dropped]
        provenance.append(str(args.precincts))
    for path in args.enrich or ():
        right = data.read_raw(path, schema).drop(columns="_line")
        right = data.keyed_table(right, key, schema.key_pattern)
        frame, dropped = data.join_frames(frame, right, key)
        findings += [data.Finding(f.kind, f"join with {path}: {f.reason}", key=f.key) for f in dropped]
        provenance.append(str(path))
    ds = data.from_frame(frame, schema, origin=str(args.counties), provenance=provenance)
    findings += list(ds.report)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.to_csv(out)
    report = Path(args.report) if args.report else out.with_suffix(".report.jsonl")
    data.write_findings(findings, report)
    dropped_joins = sum(f.kind == "left_only" for f in findings)
    print(f"wrote {len(ds)} rows to {out}; {len(ds.report)} excluded, {dropped_joins} dropped by joins; "
          f"report: {report}")
    return EXIT_OK


# --- fit --------------------------------------------------------------------

def _forest_config(opts: dict[str, Any]) -> ForestConfig:
    return ForestConfig(n_trees=opts["trees"], min_node_size=opts["min_node"], mtry=opts["mtry"],
                        seed=opts["seed"], max_depth=opts["max_depth"])


def _grid(text: str | None) -> list[int | None]:
    if not text:
        return [None]
    return [int(t) for t in str(text).split(",") if t.strip()]


def cmd_fit(args: argparse.Namespace) -> int:
    keys = ["seed", "trees", "min_node", "mtry", "max_depth", "test_fraction", "threads", "model",
            "ols_sample", "cv_folds", "grid_mtry", "grid_min_node"]
    opts = _resolve(args, keys)
    schema = _schema(args)
    ds = _load_dataset(args.data, schema)
    try:
        config = _forest_config(opts)
        config.check(len(schema.predictors))
        spec = SplitSpec(opts["test_fraction"], opts["seed"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    train, test = data.train_test_split(ds, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / SCHEMA_FILE, data.dump_schema(_canonical_schema(schema)))
    run = {"data": str(args.data), "split": asdict(spec), "n_rows": len(ds), "n_train": len(train),
           "n_test": len(test), "model": opts["model"]}

    if opts["model"] in ("ols", "both"):
        full_fit = fit_wls(ds)
        train_fit = fit_wls(train)
        shown = full_fit if opts["ols_sample"] == "full" else train_fit
        _write_text(out / OLS_FILE, _json_dump({"full": full_fit.to_dict(), "train": train_fit.to_dict()}))
        _write_text(out / "ols_summary.txt", summary_table(shown))
        _write_text(out / "ols_summary.json", summary_record(shown))
        print(summary_table(shown))

    if opts["model"] in ("forest", "both"):
        if opts["cv_folds"]:
            configs = [ForestConfig(n_trees=config.n_trees, min_node_size=mn if mn else config.min_node_size,
                                    mtry=mt if mt else config.mtry, seed=config.seed, max_depth=config.max_depth)
                       for mt in _grid(opts["grid_mtry"]) for mn in _grid(opts["grid_min_node"])]
            for c in configs:
                c.check(len(schema.predictors))
            scores = cross_validate(train, configs, folds=opts["cv_folds"], seed=opts["seed"],
                                    n_jobs=opts["threads"])
            for c, s in scores:
                print(f"cv mtry={c.resolved_mtry(len(schema.predictors))} min_node={c.min_node_size}: MAE {s:.5f}")
            config = min(scores, key=lambda cs: cs[1])[0]
            run["cv"] = [{"mtry": c.resolved_mtry(len(schema.predictors)), "min_node": c.min_node_size,
                          "mae": s} for c, s in scores]
        t0 = time.perf_counter()
        forest = train_forest(train, config, n_jobs=opts["threads"])
        secs = time.perf_counter() - t0
        forest.save(out / FOREST_FILE)
        with open(out / "training_log.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"event": "start", "time": time.time(), "n_trees": len(forest)}) + "\n")
            for t, s in enumerate(forest.timings):
                fh.write(json.dumps({"event": "tree", "index": t, "seconds": s}) + "\n")
            fh.write(json.dumps({"event": "done", "seconds": secs}) + "\n")
        run["forest"] = asdict(config)
        print(f"trained {len(forest)} trees (mtry={config.resolved_mtry(forest.n_features)}, "
              f"min_node={config.min_node_size}) on {len(train)} rows in {secs:.1f}s -> {out / FOREST_FILE}")
    _write_text(out / RUN_FILE, _json_dump(run))
    return EXIT_OK


# --- evaluate ---------------------------------------------------------------

def _run_info(model_dir: Path) -> dict[str, Any]:
    path = model_dir / RUN_FILE
    if not path.exists():
        raise UsageError(f"{model_dir} has no {RUN_FILE}; run 'fit' first")
    return json.loads(path.read_text(encoding="utf-8"))


def _load_forest(model_dir: Path) -> Forest:
    path = model_dir / FOREST_FILE
    if not path.exists():
        raise UsageError(f"{model_dir} has no forest model; run 'fit --model forest' or '--model both'")
    return Forest.load(path)


def cmd_evaluate(args: argparse.Namespace) -> int:
    model_dir = Path(args.model_dir)
    run = _run_info(model_dir)
    schema = _schema(args, model_dir / SCHEMA_FILE)
    ds = _load_dataset(args.data or run["data"], schema)
    spec = SplitSpec(**run["split"])
    train, test = data.train_test_split(ds, spec)
    ols_path = model_dir / OLS_FILE
    ols_fit = OlsFit.from_dict(json.loads(ols_path.read_text())["train"]) if ols_path.exists() else fit_wls(train)
    forest = _load_forest(model_dir)
    cmp = compare_models(ols_fit, forest, test, weighted=args.weighted)
    print(cmp.to_text())
    if args.out:
        _write_text(Path(args.out), cmp.to_json())
    return EXIT_OK


# --- explain ----------------------------------------------------------------

def cmd_explain(args: argparse.Namespace) -> int:
    opts = _resolve(args, ["threads"])
    model_dir = Path(args.model_dir)
    run = _run_info(model_dir)
    schema = _schema(args, model_dir / SCHEMA_FILE)
    ds = _load_dataset(args.data or run["data"], schema)
    forest = _load_forest(model_dir)
    if tuple(forest.feature_names) != tuple(schema.predictors):
        raise UsageError(f"model features {forest.feature_names} differ from schema predictors {schema.predictors}")
    if args.fips:
        key = data.normalize_key(args.fips, schema.key_pattern)
        try:
            ds = ds.take([ds.locate(key)])
        except KeyError:
            raise UsageError(f"unknown fips {args.fips!r}") from None
    explainer = ForestExplainer(forest)
    step = max(1, len(ds) // 20)

    def progress(done: int, total: int) -> None:
        if done % step == 0 or done == total:
            log.info("explained %d/%d", done, total)

    batch = batch_explain(forest, ds, n_jobs=opts["threads"], explainer=explainer, progress=progress)
    out = Path(args.out_dir) if args.out_dir else model_dir / "explanations"
    out.mkdir(parents=True, exist_ok=True)
    write_explanations(batch.explanations, out / "explanations.jsonl")
    scatter = write_scatter(batch.explanations, out)
    if batch.failures:
        with open(out / "failures.jsonl", "w", encoding="utf-8") as fh:
            for pos, key, msg in batch.failures:
                fh.write(json.dumps({"row": pos, "fips": key, "error": msg}) + "\n")
    worst = max((abs(e.additivity_gap) for e in batch.explanations), default=0.0)
    if args.fips and batch.explanations:
        e = batch.explanations[0]
        frame = ds.frame
        title = e.obs_id
        if "name" in frame.columns:
            title = f"{frame['name'].iloc[0]}, {frame['state'].iloc[0]}" if "state" in frame.columns \
                else str(frame["name"].iloc[0])
        print(Decomposition.from_explanation(e, title=title, reference_rate=args.reference_rate).render())
    print(f"{len(batch.explanations)} explanations, {len(scatter)} scatter files in {out}; "
          f"{len(batch.failures)} failures; max additivity gap {worst:.2e}; "
          f"{batch.coalition_evaluations // max(1, len(batch.explanations) + len(batch.failures))} "
          f"coalitions/record; {batch.elapsed:.1f}s")
    return EXIT_RUNTIME if batch.failures else EXIT_OK


# --- bench ------------------------------------------------------------------

def cmd_bench(args: argparse.Namespace) -> int:
    opts = _resolve(args, ["seed", "threads"])
    t0 = time.perf_counter()
    if args.data:
        ds = _load_dataset(args.data, _schema(args))
    else:
        ds = synthetic.counties(args.rows, opts["seed"])
    phases = {"load": time.perf_counter() - t0}
    t0 = time.perf_counter()
    fit_wls(ds)
    phases["ols"] = time.perf_counter() - t0
    cfg = ForestConfig(n_trees=args.trees, min_node_size=args.min_node or 5, seed=opts["seed"])
    t0 = time.perf_counter()
    forest = train_forest(ds, cfg, n_jobs=opts["threads"])
    phases["train"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    forest.predict(ds, n_jobs=opts["threads"])
    phases["predict"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    batch = batch_explain(forest, ds, n_jobs=opts["threads"])
    phases["explain"] = time.perf_counter() - t0
    print(f"rows={len(ds)} trees={len(forest)} features={forest.n_features} threads={opts['threads']}")
    for k, v in phases.items():
        print(f"{k:<8}{v:10.3f}s")
    per = batch.coalition_evaluations / max(1, len(batch))
    print(f"coalition evaluations per record: {per:.0f}")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="countyshap", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, schema=True):
        sp.add_argument("--config", help="key = value settings file")
        if schema:
            sp.add_argument("--schema", help="schema file mapping columns to roles")

    sp = sub.add_parser("ingest", help="validate and merge input CSVs into a canonical dataset")
    common(sp)
    sp.add_argument("--counties", required=True)
    sp.add_argument("--precincts", help="flattened precinct CSV: fips, dem_votes, rep_votes")
    sp.add_argument("--enrich", action="append", help="extra keyed CSV to inner-join (repeatable)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("fit", help="fit the weighted OLS and/or random forest")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--model", choices=["ols", "forest", "both"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trees", type=int)
    sp.add_argument("--min-node", type=int)
    sp.add_argument("--mtry", type=int)
    sp.add_argument("--max-depth", type=int)
    sp.add_argument("--test-fraction", type=float)
    sp.add_argument("--threads", type=int)
    sp.add_argument("--ols-sample", choices=["full", "train"])
    sp.add_argument("--cv-folds", type=int, help="cross-validate a grid on the training split first")
    sp.add_argument("--grid-mtry", help="comma-separated mtry values for --cv-folds")
    sp.add_argument("--grid-min-node", help="comma-separated min node sizes for --cv-folds")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("evaluate", help="compare OLS and forest on the held-out split")
    common(sp)
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--data")
    sp.add_argument("--weighted", action="store_true", help="population-weighted metrics")
    sp.add_argument("--out", help="write the comparison record here")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain", help="exact Shapley attributions per county")
    common(sp)
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--data")
    sp.add_argument("--out-dir")
    sp.add_argument("--fips")
    sp.add_argument("--reference-rate", type=float, help="external reference rate shown beside the baseline")
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("bench", help="time each pipeline phase")
    common(sp)
    sp.add_argument("--data")
    sp.add_argument("--rows", type=int, default=200)
    sp.add_argument("--trees", type=int, default=200)
    sp.add_argument("--min-node", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--threads", type=int)
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, ConfigError, SchemaError) as exc:
        print(f"countyshap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"countyshap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
