"""Scripted paired-arm experiments and their on-disk outputs.

Every experiment is a list of arms (label plus config overrides) crossed with
a list of seeds.  All arms share the task and the seeds, so comparisons are
paired.  A run is a pure function of its spec: the output files other than
the ``wall_time_s`` fields are byte-identical across repetitions.

Output layout::

    manifest.json           spec echo, config hash, file list (written last)
    curves/<arm>.jsonl      one record per (seed, step): StepMetrics + wall_time_s
    reports.json            final EvalReports per (arm, seed)
    summary.csv             one row per arm, medians over seeds
    histograms.csv          eval-time score histogram per arm (summed over seeds)
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import functools
import io
import json
import os
import statistics
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import EvalConfig, evaluate, nested_reports
from .objective import AdvantageMode
from .rewards import VerificationMode
from .tasks import Task, TaskKind, TaskSpec
from .trainer import TrainConfig, train

FORMAT_VERSION = 1
COLLAPSE_LEVEL = 0.95
DEFAULT_GAMMAS = (0.025, 0.05, 0.1, 0.2, 0.25)


@dataclass(frozen=True)
class Arm:
    label: str
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    task: TaskSpec
    train: TrainConfig
    arms: tuple[Arm, ...]
    seeds: tuple[int, ...]
    eval: EvalConfig = field(default_factory=EvalConfig)
    eval_ns: tuple[int, ...] = (8,)

    def __post_init__(self):
        if not self.arms:
            raise ValueError("an experiment needs at least one arm")
        if not self.seeds:
            raise ValueError("an experiment needs at least one seed")
        labels = [a.label for a in self.arms]
        if len(set(labels)) != len(labels):
            raise ValueError(f"arm labels must be unique, got {labels}")


@dataclass
class ArmRun:
    label: str
    seed: int
    curve: list[dict]
    wall_times: list[float]
    reports: dict


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    runs: list[ArmRun]

    def by_arm(self) -> dict[str, list[ArmRun]]:
        out: dict[str, list[ArmRun]] = {a.label: [] for a in self.spec.arms}
        for run in self.runs:
            out[run.label].append(run)
        return out


# --- config plumbing ---------------------------------------------------------


def replace_path(obj, path: str, value):
    """``dataclasses.replace`` through a dotted attribute path."""
    head, _, rest = path.partition(".")
    if not hasattr(obj, head):
        raise KeyError(f"{type(obj).__name__} has no field '{head}'")
    if rest:
        value = replace_path(getattr(obj, head), rest, value)
    return dataclasses.replace(obj, **{head: value})


def arm_config(base: TrainConfig, arm: Arm, seed: int) -> TrainConfig:
    cfg = base
    for path, value in sorted(arm.overrides.items()):
        cfg = replace_path(cfg, path, value)
    return dataclasses.replace(cfg, seed=seed)


def jsonable(x):
    if dataclasses.is_dataclass(x):
        return {f.name: jsonable(getattr(x, f.name)) for f in dataclasses.fields(x)}
    if isinstance(x, enum.Enum):
        return x.value
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


# --- running -----------------------------------------------------------------


@functools.lru_cache(maxsize=8)
def cached_task(spec: TaskSpec) -> Task:
    return Task(spec)


def run_arm(spec: ExperimentSpec, arm: Arm, seed: int) -> ArmRun:
    task = cached_task(spec.task)
    cfg = arm_config(spec.train, arm, seed)
    times: list[float] = []
    result = train(cfg, task, on_step=lambda _m, dt: times.append(dt))
    ev = dataclasses.replace(spec.eval, seed=seed)
    reports = {
        "eval": evaluate(result.params, ev, task).record(),
        # scored at the training decode: low-temperature pools are often single-class
        "train_decode": evaluate(result.params, dataclasses.replace(ev, decode=cfg.decode), task).record(),
        "by_n": {str(n): r.record() for n, r in nested_reports(result.params, ev, task, spec.eval_ns).items()},
    }
    return ArmRun(arm.label, seed, [m.record() for m in result.history], times, reports)


def _job(args) -> ArmRun:
    return run_arm(*args)


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    """Run every (arm, seed) pair; results come back in (arm, seed) order."""
    jobs = [(spec, arm, seed) for arm in spec.arms for seed in spec.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            runs = list(pool.map(_job, jobs))
    else:
        runs = [_job(j) for j in jobs]
    return ExperimentResult(spec, runs)


# --- experiment definitions --------------------------------------------------


def _median(values):
    vals = [v for v in values if v is not None]
    return statistics.median(vals) if vals else None


def steps_to_level(curve, key: str = "fraction_max_score", level: float = COLLAPSE_LEVEL):
    for rec in curve:
        if rec[key] >= level:
            return rec["step"]
    return None


def arm_summary(runs: list[ArmRun]) -> dict:
    """Medians over seeds of the per-run statistics every experiment reports."""

    def med(fn):
        return _median([fn(r) for r in runs])

    def ev(key, which="eval"):
        return med(lambda r: r.reports[which][key])

    reached = [steps_to_level(r.curve) for r in runs]
    hist = np.sum([r.reports["eval"]["histogram"] for r in runs], axis=0)
    iou = [r.reports["eval"]["mean_iou"] for r in runs]
    return {
        "seeds": len(runs),
        "peak_fraction_max_score": med(lambda r: max((m["fraction_max_score"] for m in r.curve), default=None)),
        "final_fraction_max_score": med(lambda r: r.curve[-1]["fraction_max_score"] if r.curve else None),
        "seeds_reaching_collapse": sum(s is not None for s in reached),
        "median_steps_to_collapse": _median(reached),
        "pass1": ev("pass1"),
        "majority": ev("majority"),
        "best_of_n": ev("best_of_n"),
        "oracle_best_of_n": ev("oracle_best_of_n"),
        "mean_iou_pass1": _median([m["pass1"] if m else None for m in iou]),
        "mean_iou_best_of_n": _median([m["best_of_n"] if m else None for m in iou]),
        "auc": ev("auc", "train_decode"),
        "ap": ev("ap", "train_decode"),
        "auc_eval_decode": ev("auc"),
        "ap_eval_decode": ev("ap"),
        "hacking_witnesses": int(sum(m["hacking_witnesses"] for r in runs for m in r.curve)),
        "steps_with_witness": int(sum(m["hacking_witnesses"] > 0 for r in runs for m in r.curve)),
        "nonempty_bins": int((hist > 0).sum()),
        "extreme_bin_mass": float((hist[0] + hist[-1]) / hist.sum()) if hist.sum() else None,
        "histogram": hist.tolist(),
    }


def summarize(result: ExperimentResult) -> dict[str, dict]:
    return {label: arm_summary(runs) for label, runs in result.by_arm().items()}


def _verif_arm(label: str, verification: str, mode: str = "decoupled") -> Arm:
    return Arm(label, {"objective.verification": verification, "objective.mode": mode})


def collapse_spec(task: TaskSpec, train_cfg: TrainConfig, seeds, eval_cfg: EvalConfig, **_) -> ExperimentSpec:
    arms = (_verif_arm("binary", "binary"), _verif_arm("preference", "preference"))
    return ExperimentSpec("collapse", task, train_cfg, arms, tuple(seeds), eval_cfg)


def decoupling_spec(task: TaskSpec, train_cfg: TrainConfig, seeds, eval_cfg: EvalConfig, **_) -> ExperimentSpec:
    arms = (_verif_arm("entangled", "preference", "entangled"), _verif_arm("decoupled", "preference", "decoupled"))
    return ExperimentSpec("decoupling", task, train_cfg, arms, tuple(seeds), eval_cfg)


def scaling_spec(task: TaskSpec, train_cfg: TrainConfig, seeds, eval_cfg: EvalConfig, eval_ns=(1, 4, 8, 12), **_) -> ExperimentSpec:
    arms = (_verif_arm("adpo", "preference"),)
    return ExperimentSpec("scaling", task, train_cfg, arms, tuple(seeds), eval_cfg, tuple(eval_ns))


def margin_spec(task: TaskSpec, train_cfg: TrainConfig, seeds, eval_cfg: EvalConfig, gammas=DEFAULT_GAMMAS, **_) -> ExperimentSpec:
    if task.kind is not TaskKind.INTERVAL:
        raise ValueError("the margin sweep runs on the interval task")
    for g in gammas:
        if not g > 0.0:
            raise ValueError(f"margin gamma must be > 0, got {g}")
    arms = tuple(
        Arm(f"gamma={g:g}", {"thresholds.gamma": float(g), "objective.verification": "preference"}) for g in gammas
    )
    return ExperimentSpec("margin", task, train_cfg, arms, tuple(seeds), eval_cfg)


def score_distribution_spec(task: TaskSpec, train_cfg: TrainConfig, seeds, eval_cfg: EvalConfig, **_) -> ExperimentSpec:
    arms = (_verif_arm("binary", "binary"), _verif_arm("preference", "preference"))
    return ExperimentSpec("score_distribution", task, train_cfg, arms, tuple(seeds), eval_cfg)


SPEC_BUILDERS = {
    "collapse": collapse_spec,
    "decoupling": decoupling_spec,
    "scaling": scaling_spec,
    "margin": margin_spec,
    "score_distribution": score_distribution_spec,
}


def spec_from_config(rc) -> ExperimentSpec:
    """Build the named experiment from a parsed :class:`~adpo_lab.config.RunConfig`."""
    ex = rc.experiment
    return SPEC_BUILDERS[ex.kind](rc.task, rc.train, ex.seeds, rc.eval, gammas=ex.gammas, eval_ns=ex.eval_ns)


def _require(spec: ExperimentSpec, name: str):
    if spec.name != name:
        raise ValueError(f"expected a '{name}' experiment, got '{spec.name}'")


def run_collapse_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    modes = {VerificationMode(a.overrides.get("objective.verification", spec.train.objective.verification)) for a in spec.arms}
    if not {VerificationMode.BINARY, VerificationMode.PREFERENCE} <= modes:
        raise ValueError("the collapse experiment needs a binary and a preference arm")
    return run_experiment(spec, workers)


def run_decoupling_experiment(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    modes = {AdvantageMode(a.overrides.get("objective.mode", spec.train.objective.mode)) for a in spec.arms}
    if modes != {AdvantageMode.ENTANGLED, AdvantageMode.DECOUPLED}:
        raise ValueError("the decoupling experiment needs an entangled and a decoupled arm")
    return run_experiment(spec, workers)


def run_margin_sweep(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    _require(spec, "margin")
    return run_experiment(spec, workers)


def run_score_distribution(spec: ExperimentSpec, workers: int = 1) -> ExperimentResult:
    return run_experiment(spec, workers)


# --- output ------------------------------------------------------------------

SUMMARY_FIELDS = [
    "arm", "seeds", "peak_fraction_max_score", "final_fraction_max_score", "seeds_reaching_collapse",
    "median_steps_to_collapse", "pass1", "majority", "best_of_n", "oracle_best_of_n", "mean_iou_pass1",
    "mean_iou_best_of_n", "auc", "ap", "auc_eval_decode", "ap_eval_decode", "hacking_witnesses",
    "steps_with_witness", "nonempty_bins", "extreme_bin_mass",
]


def atomic_write(path: Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a partial file."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_jsonl(records) -> str:
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def csv_text(fields, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})
    return buf.getvalue()


def safe_label(label: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in label)


def write_outputs(result: ExperimentResult, out_dir, config: dict | None = None, config_hash: str | None = None) -> dict:
    out = Path(out_dir)
    spec = result.spec
    files = []
    for label, runs in result.by_arm().items():
        records = []
        for run in runs:
            for metrics, wall in zip(run.curve, run.wall_times):
                records.append({"arm": label, "seed": run.seed, **metrics, "wall_time_s": wall})
        name = f"curves/{safe_label(label)}.jsonl"
        atomic_write(out / name, dumps_jsonl(records))
        files.append(name)
    reports = [{"arm": r.label, "seed": r.seed, "reports": r.reports} for r in result.runs]
    atomic_write(out / "reports.json", json.dumps(reports, sort_keys=True, indent=1) + "\n")
    summary = summarize(result)
    rows = [{"arm": label, **s} for label, s in summary.items()]
    atomic_write(out / "summary.csv", csv_text(SUMMARY_FIELDS, rows))
    hist_rows = [
        {"arm": label, "bin": b, "count": c} for label, s in summary.items() for b, c in enumerate(s["histogram"])
    ]
    atomic_write(out / "histograms.csv", csv_text(["arm", "bin", "count"], hist_rows))
    files += ["reports.json", "summary.csv", "histograms.csv"]
    spec_echo = jsonable(spec)
    manifest = {
        "format_version": FORMAT_VERSION,
        "experiment": spec.name,
        "spec": spec_echo,
        "config": config,
        "config_hash": config_hash or _hash(spec_echo),
        "files": files,
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return summary


def _hash(obj) -> str:
    from .config import config_hash

    return config_hash(obj)
