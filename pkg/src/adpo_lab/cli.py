"""Command-line entry point: ``adpo-lab {train,eval,experiment}``.

Output layout (all JSON is key-sorted; only ``wall_time_s`` fields vary
between identical invocations):

    train       manifest.json  metrics.jsonl  summary.csv  params.final
    eval        manifest.json  report.json    histogram.csv
    experiment  manifest.json  curves/*.jsonl reports.json summary.csv histograms.csv

``manifest.json`` is written last and atomically; a failed run leaves none.
Failures print one JSON error record on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_yaml, parse_mapping
from .evaluation import evaluate
from .experiments import (
    atomic_write,
    cached_task,
    csv_text,
    dumps_jsonl,
    run_experiment,
    spec_from_config,
    write_outputs,
)
from .policy import PolicyParams
from .trainer import StepMetrics, train

log = logging.getLogger("adpo_lab")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
METRIC_FIELDS = [f.name for f in fields(StepMetrics)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adpo-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,eval,experiment}")

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults are used when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override train/eval seeds (and experiment seeds)")
        p.add_argument("--preset", choices=["toy", "large"], default="toy")
        p.add_argument("--workers", type=int, help="worker processes (env ADPO_LAB_WORKERS)")
        p.add_argument("-v", "--verbose", action="count", default=0)

    common(sub.add_parser("train", help="train one policy"))
    p_eval = sub.add_parser("eval", help="evaluate saved parameters")
    common(p_eval)
    p_eval.add_argument("--params", required=True, help="parameter file written by train")
    p_eval.add_argument("--verifier", help="parameter file whose score head re-scores answers")
    p_exp = sub.add_parser("experiment", help="run a paired-arm experiment")
    common(p_exp)
    p_exp.add_argument("--name", help="experiment kind, overriding experiment.kind")
    return parser


def load_config(args) -> RunConfig:
    raw = load_yaml(args.config) if args.config else {}
    if getattr(args, "name", None):
        if not isinstance(raw, dict):
            raise ConfigError("", "expected a mapping at top level")
        section = raw.get("experiment") or {}
        raw = {**raw, "experiment": {**section, "kind": args.name}}
    return parse_mapping(raw, preset=args.preset, seed=args.seed)


def worker_count(args, rc: RunConfig) -> int:
    if args.workers is not None:
        n = args.workers
    elif os.environ.get("ADPO_LAB_WORKERS"):
        try:
            n = int(os.environ["ADPO_LAB_WORKERS"])
        except ValueError:
            raise ConfigError("ADPO_LAB_WORKERS", "must be an integer") from None
    else:
        n = rc.experiment.workers
    if n < 1:
        raise ConfigError("workers", "must be >= 1")
    return n


def _manifest(command: str, rc: RunConfig, files: list[str], extra: dict | None = None) -> str:
    body = {
        "format_version": 1,
        "package_version": __version__,
        "command": command,
        "config": rc.resolved,
        "config_hash": rc.digest,
        "files": files,
        **(extra or {}),
    }
    return json.dumps(body, sort_keys=True, indent=1) + "\n"


def _start(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    stale = out / "manifest.json"
    if stale.exists():
        stale.unlink()


def cmd_train(args, rc: RunConfig) -> dict:
    out = Path(args.out)
    _start(out)
    task = cached_task(rc.task)
    records = []

    def on_step(m, dt):
        records.append({**m.record(), "wall_time_s": dt})
        log.info("step %d pass@1=%.3f fmax=%.3f", m.step, m.pass_at_1, m.fraction_max_score)

    result = train(rc.train, task, on_step=on_step)
    atomic_write(out / "metrics.jsonl", dumps_jsonl(records))
    rows = []
    if result.history:
        final = result.history[-1].record()
        rows.append({"stat": "final", **final})
        mean = {}
        for k in METRIC_FIELDS:
            vals = [r[k] for r in records if r[k] is not None]
            mean[k] = sum(vals) / len(vals) if vals else None
        rows.append({"stat": "mean", **mean})
    atomic_write(out / "summary.csv", csv_text(["stat", *METRIC_FIELDS], rows))
    result.params.save(out / ".params.final.tmp")
    os.replace(out / ".params.final.tmp", out / "params.final")
    files = ["metrics.jsonl", "summary.csv", "params.final"]
    atomic_write(out / "manifest.json", _manifest("train", rc, files, {"steps": len(records)}))
    return {"out": str(out), "steps": len(records)}


def cmd_eval(args, rc: RunConfig) -> dict:
    out = Path(args.out)
    params = PolicyParams.load(args.params)
    verifier = PolicyParams.load(args.verifier) if args.verifier else None
    task = cached_task(rc.task)
    expected = PolicyParams.zeros(rc.task).shapes
    for name, p in (("params", params), ("verifier", verifier)):
        if p is not None and p.shapes != expected:
            raise ValueError(f"{name} shapes {p.shapes} do not match the configured task {expected}")
    _start(out)
    report = evaluate(params, rc.eval, task, verifier)
    atomic_write(out / "report.json", json.dumps(report.record(), sort_keys=True, indent=1) + "\n")
    hist = [{"bin": b, "count": c} for b, c in enumerate(report.histogram)]
    atomic_write(out / "histogram.csv", csv_text(["bin", "count"], hist))
    extra = {"params": str(args.params), "verifier": args.verifier}
    atomic_write(out / "manifest.json", _manifest("eval", rc, ["report.json", "histogram.csv"], extra))
    return {"out": str(out), "accuracy": report.accuracy, "auc": report.auc}


def cmd_experiment(args, rc: RunConfig) -> dict:
    out = Path(args.out)
    spec = spec_from_config(rc)
    workers = worker_count(args, rc)
    _start(out)
    result = run_experiment(spec, workers=workers)
    write_outputs(result, out, rc.resolved, rc.digest)
    return {"out": str(out), "experiment": spec.name, "runs": len(result.runs)}


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "experiment": cmd_experiment}


def error_record(exc: BaseException) -> dict:
    if isinstance(exc, ConfigError):
        return exc.record()
    return {"error": type(exc).__name__, "message": str(exc)}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        rc = load_config(args)
        if args.command == "experiment":
            worker_count(args, rc)  # validate before compute starts
        done = COMMANDS[args.command](args, rc)
    except ConfigError as exc:
        print(json.dumps(error_record(exc), sort_keys=True), file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, FloatingPointError, KeyError) as exc:
        print(json.dumps(error_record(exc), sort_keys=True), file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(done, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
