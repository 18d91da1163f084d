"""``bdcalc <command> --config path [--out dir] [--threads N] [--sweep key=v1,v2,...]``.

Exit status: 0 when every configured threshold holds, 1 when a threshold fails,
2 for configuration errors and 3 for numerical failures. Schema violations carry a
JSON pointer to the offending key. Errors raised while building objects from a
valid config (``ValueError`` subclasses such as ``ConfigurationError`` or
``RangeError``) also exit with 2; budget, validation and solver failures
(``RuntimeError`` subclasses) exit with 3.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import os
import platform
import subprocess
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import BDCalcError, ConfigurationError
from .experiments import COMMANDS, check_command_config, jsonable, run_command
from .schema import SCHEMA_VERSION, check
from .spectral import set_workers

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_MODULE = 3

THREADS_ENV = "BDCALC_THREADS"
SWEEPABLE = (
    "seed",
    "grid.points_per_axis",
    "coefficients.delta_target",
    "coefficients.seed",
    "coefficients.A.delta_target",
    "coefficients.A.seed",
    "experiment.eps",
    "experiment.nu",
    "experiment.steps",
)


class CLIError(Exception):
    def __init__(self, code: int, payload: dict):
        super().__init__(payload.get("message", ""))
        self.code = code
        self.payload = payload


@lru_cache(maxsize=1)
def build_id() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=10,
            check=True,
        )
        return out.stdout.strip() or f"bdcalc-{__version__}"
    except (OSError, subprocess.SubprocessError):
        return f"bdcalc-{__version__}"


def build_info(threads: int) -> dict:
    return {
        "describe": build_id(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "threads": threads,
    }


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        if flag < 1:
            raise CLIError(EXIT_CONFIG, {"type": "ConfigurationError", "message": "--threads must be positive"})
        return flag
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        value = 0
    if value < 1:
        raise CLIError(EXIT_CONFIG, {"type": "ConfigurationError", "message": f"{THREADS_ENV} must be a positive integer", "value": raw})
    return value


def timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")


def digest(results: dict) -> str:
    text = json.dumps(results, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def evaluate_thresholds(thresholds: dict, metrics: dict) -> list:
    checks = []
    for name, bound in thresholds.items():
        value = metrics.get(name)
        ok = isinstance(value, (int, float)) and math.isfinite(value)
        if ok and "min" in bound:
            ok = value >= bound["min"]
        if ok and "max" in bound:
            ok = value <= bound["max"]
        checks.append(dict(metric=name, value=value, **bound, passed=bool(ok)))
    return checks


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CLIError(EXIT_CONFIG, {"type": "ConfigurationError", "message": f"cannot read config: {exc}", "pointer": "/"})
    except json.JSONDecodeError as exc:
        raise CLIError(
            EXIT_CONFIG,
            {"type": "ConfigurationError", "message": f"config is not valid JSON: {exc.msg}", "line": exc.lineno, "column": exc.colno},
        )
    return doc


def validate_config(command: str, config: dict) -> None:
    try:
        check("config", config)
        check_command_config(command, config)
    except ConfigurationError as exc:
        raise CLIError(EXIT_CONFIG, exc.to_dict())


def _write_json(path: Path, doc: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2) + "\n")
    os.replace(tmp, path)


def _write_csv(path: Path, rows: list) -> None:
    if not rows:
        return
    fields = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: json.dumps(v) if isinstance(v, (list, dict)) else v for k, v in jsonable(row).items()})


def _unique(outdir: Path, stem: str) -> Path:
    path = outdir / f"{stem}.json"
    i = 1
    while path.exists():
        path = outdir / f"{stem}-{i}.json"
        i += 1
    return path


def execute(command: str, config: dict, outdir: str, threads: int, stem: str | None = None) -> dict:
    """Run one command and write its report; returns a summary (also used by sweep workers)."""
    set_workers(threads)
    start = time.perf_counter()
    created = datetime.now(timezone.utc).isoformat()
    try:
        with threadpool_limits(limits=threads):
            resolved, outcome = run_command(command, config)
    except BDCalcError as exc:
        code = EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_MODULE
        return {"exit": code, "error": exc.to_dict()}
    except Exception as exc:  # a bug rather than a numerical failure; still report it structurally
        return {"exit": EXIT_MODULE, "error": {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}}
    results = jsonable(outcome.results)
    metrics = jsonable(outcome.metrics)
    checks = evaluate_thresholds(resolved.get("thresholds", {}), metrics)
    timings = {k: float(v) for k, v in outcome.timings.items()}
    timings["total_seconds"] = time.perf_counter() - start
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created": created,
        "build": build_info(threads),
        "config": jsonable(resolved),
        "timings": timings,
        "results": results,
        "results_sha256": digest(results),
        "metrics": metrics,
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    check("report", report)
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    path = _unique(out, stem or f"{command}-{timestamp()}")
    _write_json(path, report)
    if outcome.table:
        _write_csv(path.with_suffix(".csv"), outcome.table)
    return {
        "exit": EXIT_OK if report["passed"] else EXIT_CHECK_FAILED,
        "report": str(path),
        "created": created,
        "passed": report["passed"],
        "results_sha256": report["results_sha256"],
        "headline": metrics.get(COMMANDS[command].headline),
    }


def update_index(outdir: Path, command: str, entry: dict) -> None:
    """``index.json`` records every run and the latest report per command."""
    path = outdir / "index.json"
    try:
        index = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        index = {"schema_version": SCHEMA_VERSION, "latest": {}, "runs": []}
    rel = os.path.relpath(entry["report"], outdir)
    index["latest"][command] = rel
    index["runs"].append({k: v for k, v in dict(entry, report=rel, command=command).items() if k != "exit"})
    _write_json(path, index)


# ---------------------------------------------------------------------------
# sweeps


def parse_sweep(text: str) -> tuple:
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not raw.strip():
        raise CLIError(EXIT_CONFIG, {"type": "ConfigurationError", "message": "--sweep expects key=v1,v2,...", "value": text})
    if key not in SWEEPABLE:
        raise CLIError(
            EXIT_CONFIG,
            {"type": "ConfigurationError", "message": f"{key!r} is not sweepable", "pointer": "/" + key.replace(".", "/"), "sweepable": list(SWEEPABLE)},
        )
    values = []
    for piece in raw.split(","):
        piece = piece.strip()
        try:
            values.append(json.loads(piece))
        except json.JSONDecodeError:
            values.append(piece)
    return key, values


def with_value(config: dict, key: str, value) -> dict:
    out = copy.deepcopy(config)
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def _summary(values, headlines) -> dict:
    pairs = [(v, h) for v, h in zip(values, headlines) if isinstance(h, (int, float)) and math.isfinite(h)]
    if not pairs:
        return {"min": None, "max": None, "max_over_min": None, "loglog_slope": None, "loglog_prefactor": None}
    hs = [h for _, h in pairs]
    lo, hi = min(hs), max(hs)
    out = {"min": lo, "max": hi, "max_over_min": hi / lo if lo > 0 else None, "loglog_slope": None, "loglog_prefactor": None}
    xs = [(v, h) for v, h in pairs if isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0 and h > 0]
    if len({v for v, _ in xs}) >= 2:
        slope, intercept = np.polyfit(np.log([v for v, _ in xs]), np.log([h for _, h in xs]), 1)
        out["loglog_slope"], out["loglog_prefactor"] = float(slope), float(math.exp(intercept))
    return out


def run_sweep(command: str, config: dict, key: str, values: list, outdir: Path, threads: int) -> int:
    variants = [with_value(config, key, v) for v in values]
    for variant in variants:
        validate_config(command, variant)
    stamp = timestamp()
    jobdir = outdir / f"{command}-sweep-{stamp}"
    jobs = [(command, variant, str(jobdir), threads, f"{command}-{i:03d}") for i, variant in enumerate(variants)]
    workers = max(1, min(len(jobs), os.cpu_count() or 1))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        summaries = list(pool.map(execute, *zip(*jobs)))
    rows, errors = [], []
    for value, summary in zip(values, summaries):
        if "error" in summary:
            errors.append({"value": value, "exit": summary["exit"], "error": summary["error"]})
            continue
        update_index(outdir, command, summary)
        rows.append(
            {
                "value": value,
                "headline": summary["headline"],
                "passed": summary["passed"],
                "report": os.path.relpath(summary["report"], outdir),
                "results_sha256": summary["results_sha256"],
            }
        )
    if errors:
        print(json.dumps({"sweep_errors": jsonable(errors)}, indent=2), file=sys.stderr)
        return max(e["exit"] for e in errors)
    aggregate = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "build": build_info(threads),
        "parameter": key,
        "headline": COMMANDS[command].headline,
        "rows": jsonable(rows),
        "summary": _summary(values, [r["headline"] for r in rows]),
        "passed": all(r["passed"] for r in rows),
    }
    check("sweep", aggregate)
    path = _unique(outdir, f"{command}-sweep-{stamp}")
    _write_json(path, aggregate)
    _write_csv(path.with_suffix(".csv"), [{"value": r["value"], aggregate["headline"]: r["headline"], "passed": r["passed"]} for r in rows])
    print(str(path))
    return EXIT_OK if aggregate["passed"] else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdcalc", description="Experiments with perturbed Dirac operators on periodic grids.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory (overrides the config's 'output'; default ./bdcalc-out)")
    parser.add_argument("--threads", type=int, help=f"thread cap for FFT and BLAS (default ${THREADS_ENV} or 1)")
    parser.add_argument("--sweep", metavar="KEY=V1,V2,...", help="run the command once per value; sweepable: " + ", ".join(SWEEPABLE))
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        threads = resolve_threads(args.threads)
        config = load_config(args.config)
        validate_config(args.command, config)
        outdir = Path(args.out or config.get("output") or "bdcalc-out")
        if args.sweep:
            key, values = parse_sweep(args.sweep)
            return run_sweep(args.command, config, key, values, outdir, threads)
        summary = execute(args.command, config, str(outdir), threads)
    except CLIError as exc:
        print(json.dumps({"error": jsonable(exc.payload)}, indent=2), file=sys.stderr)
        return exc.code
    if "error" in summary:
        print(json.dumps({"error": jsonable(summary["error"])}, indent=2), file=sys.stderr)
        return summary["exit"]
    update_index(outdir, args.command, summary)
    print(summary["report"])
    return summary["exit"]


if __name__ == "__main__":
    sys.exit(main())
