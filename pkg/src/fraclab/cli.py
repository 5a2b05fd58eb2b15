"""Command line front end: ``fraclab run <config>`` and ``fraclab suite <dir>``.

Exit status 0 when every invariant passed, 1 when any failed, 2 on a
schema error.  Each run writes ``summary.json`` (no timings, byte-stable
for a fixed config and seed), ``checks.json``, one CSV per table and
``timing.json``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .experiments import ConfigError, run_experiment
from .io import write_csv, write_json

EXIT_OK, EXIT_FAIL, EXIT_SCHEMA = 0, 1, 2
log = logging.getLogger("fraclab")


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return cfg


def execute(config_path, out_dir=None, seed=None) -> dict:
    """Run one config and write its artifacts; returns a status record."""
    config_path = Path(config_path)
    name = config_path.stem
    try:
        cfg = load_config(config_path)
        out_root = Path(out_dir if out_dir is not None else cfg.get("output", "runs"))
        t0 = time.perf_counter()
        outcome = run_experiment(cfg, seed)
        elapsed = time.perf_counter() - t0
    except ConfigError as exc:
        return {"config": str(config_path), "name": name, "status": EXIT_SCHEMA, "error": str(exc),
                "checks_passed": 0, "checks_failed": 0}
    target = out_root / name
    target.mkdir(parents=True, exist_ok=True)
    write_json(target / "summary.json", outcome.summary)
    write_json(target / "checks.json", outcome.summary["checks"])
    for tname, (cols, rows) in outcome.tables.items():
        write_csv(target / f"{tname}.csv", cols, rows)
    write_json(target / "timing.json", {"seconds": elapsed})
    failed = sum(not c.passed for c in outcome.checks)
    return {"config": str(config_path), "name": name, "status": EXIT_FAIL if failed else EXIT_OK,
            "checks_passed": len(outcome.checks) - failed, "checks_failed": failed, "output": str(target),
            "seconds": elapsed}


def _report(rec, stream=None):
    stream = sys.stdout if stream is None else stream
    if rec["status"] == EXIT_SCHEMA:
        print(f"[schema error] {rec['name']}: {rec['error']}", file=stream)
        return
    word = "PASS" if rec["status"] == EXIT_OK else "FAIL"
    print(f"[{word}] {rec['name']}: {rec['checks_passed']} passed, {rec['checks_failed']} failed "
          f"-> {rec['output']}", file=stream)


def cmd_run(args) -> int:
    rec = execute(args.config, args.out, args.seed)
    _report(rec)
    if rec["status"] == EXIT_FAIL:
        checks = json.loads((Path(rec["output"]) / "checks.json").read_text())
        for c in checks:
            if not c["passed"]:
                print(f"  failed: {c['name']}")
    return rec["status"]


def cmd_suite(args) -> int:
    configs = sorted(Path(args.directory).glob("*.json"))
    if not configs:
        print(f"[schema error] no *.json configs in {args.directory}", file=sys.stderr)
        return EXIT_SCHEMA
    with ProcessPoolExecutor(max_workers=args.jobs) as pool:
        recs = list(pool.map(execute, configs, [args.out] * len(configs), [args.seed] * len(configs)))
    for r in recs:
        _report(r)
    n_pass = sum(r["status"] == EXIT_OK for r in recs)
    n_schema = sum(r["status"] == EXIT_SCHEMA for r in recs)
    agg = {"configs": len(recs), "passed": n_pass, "failed": len(recs) - n_pass - n_schema,
           "schema_errors": n_schema,
           "runs": [{k: r[k] for k in ("name", "status", "checks_passed", "checks_failed")} for r in recs]}
    out_root = Path(args.out if args.out is not None else "runs")
    out_root.mkdir(parents=True, exist_ok=True)
    write_json(out_root / "suite.json", agg)
    print(f"aggregate: pass {n_pass}/{len(recs)}")
    if n_schema:
        return EXIT_SCHEMA
    return EXIT_OK if n_pass == len(recs) else EXIT_FAIL


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fraclab", description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=None, help="output directory (default: config 'output' or ./runs)")
    ap.add_argument("--seed", type=_u64, default=None, help="override the config seed")
    ap.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one config")
    r.add_argument("config")
    s = sub.add_parser("suite", help="run every *.json config in a directory")
    s.add_argument("directory")
    s.add_argument("--jobs", type=int, default=None, help="worker processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args)
    return cmd_suite(args)


if __name__ == "__main__":
    sys.exit(main())
