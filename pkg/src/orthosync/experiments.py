"""Monte Carlo experiment orchestration.

Fans independent trials out over a worker pool, aggregates observed losses
against the theoretical risk sigma^2 d(d-1) / (2np), and serializes records
and summaries to versioned CSV/JSON.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .algorithms import (
    EigenFailure,
    IterationConfig,
    default_iteration_count,
    oracle_one_step,
    run_pipeline,
    skew_projection_check,
    spectral_init,
)
from .group_ops import loss
from .model import SyncParams, generate_instance

RESULTS_SCHEMA_VERSION = 1

# Calibration bands recorded in output metadata. The asymptotic statements
# carry (1 + o(1)) corrections, so finite-size runs are judged against these
# rather than exact equality.
RATIO_BANDS = {
    "pipeline": (0.85, 1.25),
    "oracle": (0.9, 1.1),
    "skew_variance": (0.45, 0.55),
}

# A run is considered failed when at least this fraction of trials is flagged.
MAX_FLAG_RATE = 0.01


class Mode(str, Enum):
    PIPELINE = "pipeline"
    ORACLE = "oracle"
    SPECTRAL_ONLY = "spectral-only"
    SKEW_CHECK = "skew-check"


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run: instance parameters (seed acts as master seed), trial
    count, iteration budget, and which observable to record."""

    params: SyncParams
    trials: int
    iteration: Optional[IterationConfig] = None
    mode: Mode = Mode.PIPELINE

    def __post_init__(self):
        if not isinstance(self.trials, (int, np.integer)) or self.trials < 1:
            raise ValueError(f"trials must be an integer >= 1 (got {self.trials!r})")
        object.__setattr__(self, "trials", int(self.trials))
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.iteration is None and self.mode is Mode.PIPELINE:
            object.__setattr__(
                self, "iteration", IterationConfig(default_iteration_count(self.params.sigma))
            )


@dataclass(frozen=True)
class TrialRecord:
    """One trial's observables.

    losses holds the recorded trajectory for pipeline mode and a single
    value otherwise; ratio is final observed / theory (NaN when theory is
    zero). Flagged records carry NaN observables and are excluded from
    summary means but counted.
    """

    trial_index: int
    seed_used: int
    losses: tuple
    theory: float
    ratio: float
    flagged: bool
    flagged_nodes: int = 0
    details: dict = field(default_factory=dict)

    @property
    def final(self) -> float:
        return self.losses[-1]


@dataclass(frozen=True)
class Summary:
    """Aggregates over the unflagged trials of one experiment."""

    mode: Mode
    trials: int
    used: int
    mean_final_loss: float
    stderr_final_loss: float
    min_final_loss: float
    max_final_loss: float
    mean_ratio: float
    theory: float
    flagged_trials: int
    flagged_nodes: int
    details: dict = field(default_factory=dict)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Sub-seed for one trial, split deterministically off the master seed."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(trial_index,))
    return int(ss.generate_state(1, np.uint64)[0])


def _safe_ratio(observed: float, theory: float) -> float:
    if theory > 0.0 and math.isfinite(observed):
        return observed / theory
    return math.nan


def _run_trial(job) -> TrialRecord:
    spec, index, seed = job
    params = replace(spec.params, seed=seed)
    theory = params.theory_risk()
    try:
        instance = generate_instance(params)
        if spec.mode is Mode.PIPELINE:
            traj = run_pipeline(instance, spec.iteration)
            return TrialRecord(
                trial_index=index,
                seed_used=seed,
                losses=traj.losses,
                theory=theory,
                ratio=_safe_ratio(traj.losses[-1], theory),
                flagged=False,
            )
        if spec.mode is Mode.ORACLE:
            result = oracle_one_step(instance)
            good = ~result.flagged
            observed = float(result.errors[good].mean()) if good.any() else math.nan
            flagged_nodes = int(result.flagged.sum())
            naive = params.sigma**2 * params.d**2 / (params.n * params.p)
            return TrialRecord(
                trial_index=index,
                seed_used=seed,
                losses=(observed,),
                theory=theory,
                ratio=_safe_ratio(observed, theory),
                flagged=flagged_nodes > 0,
                flagged_nodes=flagged_nodes,
                details={"naive_risk": naive},
            )
        if spec.mode is Mode.SPECTRAL_ONLY:
            z0 = spectral_init(instance)
            observed = loss(z0, instance.ztruth)
            return TrialRecord(
                trial_index=index,
                seed_used=seed,
                losses=(observed,),
                theory=theory,
                ratio=_safe_ratio(observed, theory),
                flagged=False,
            )
        result = skew_projection_check(instance)
        return TrialRecord(
            trial_index=index,
            seed_used=seed,
            losses=(result.variance_ratio,),
            theory=0.5,
            ratio=result.variance_ratio / 0.5,
            flagged=False,
            details={"max_abs_diagonal": result.max_abs_diagonal},
        )
    except EigenFailure as exc:
        return TrialRecord(
            trial_index=index,
            seed_used=seed,
            losses=(math.nan,),
            theory=theory,
            ratio=math.nan,
            flagged=True,
            details={"error": str(exc)},
        )


_BLAS_LIMITER = None


def _limit_worker_blas():
    # Keep pool workers single-threaded in BLAS so trials do not oversubscribe
    # the machine; the handle must stay alive for the limit to persist.
    global _BLAS_LIMITER
    try:
        from threadpoolctl import threadpool_limits

        _BLAS_LIMITER = threadpool_limits(limits=1)
    except Exception:
        _BLAS_LIMITER = None


def summarize(spec: ExperimentSpec, records: list) -> Summary:
    good = [r for r in records if not r.flagged]
    finals = np.array([r.final for r in good], dtype=float)
    ratios = np.array([r.ratio for r in good], dtype=float)
    if finals.size:
        mean = float(finals.mean())
        stderr = float(finals.std(ddof=1) / np.sqrt(finals.size)) if finals.size > 1 else 0.0
        lo, hi = float(finals.min()), float(finals.max())
        mean_ratio = float(ratios.mean())
    else:
        mean = stderr = lo = hi = mean_ratio = math.nan
    details = {}
    for key in sorted({k for r in good for k in r.details if isinstance(r.details[k], float)}):
        details[key] = float(np.mean([r.details[key] for r in good if key in r.details]))
    return Summary(
        mode=spec.mode,
        trials=len(records),
        used=len(good),
        mean_final_loss=mean,
        stderr_final_loss=stderr,
        min_final_loss=lo,
        max_final_loss=hi,
        mean_ratio=mean_ratio,
        theory=spec.params.theory_risk() if spec.mode is not Mode.SKEW_CHECK else 0.5,
        flagged_trials=sum(1 for r in records if r.flagged),
        flagged_nodes=sum(r.flagged_nodes for r in records),
        details=details,
    )


def run_experiment(spec: ExperimentSpec, workers: Optional[int] = None):
    """Run all trials and aggregate.

    Trial k derives its own seed from (master seed, k), so results are
    bit-identical regardless of worker count or completion order.
    """
    jobs = [(spec, k, trial_seed(spec.params.seed, k)) for k in range(spec.trials)]
    if workers is None:
        workers = os.cpu_count() or 1
    workers = max(1, min(int(workers), spec.trials))
    if workers == 1:
        records = [_run_trial(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_limit_worker_blas) as pool:
            records = list(pool.map(_run_trial, jobs, chunksize=1))
    records.sort(key=lambda r: r.trial_index)
    return records, summarize(spec, records)


@dataclass(frozen=True)
class SweepPoint:
    field: str
    value: float
    summary: Summary


def rate_sweep(base_spec: ExperimentSpec, sweep, workers: Optional[int] = None) -> list:
    """One experiment per (field, value) sweep point, same master seed.

    Allowed fields: n, p, sigma, d. Emitting observed/theory ratios next to
    the swept values makes the scaling laws show up as flat ratio curves.
    """
    points = []
    for name, values in sweep:
        if name not in ("n", "p", "sigma", "d"):
            raise ValueError(f"cannot sweep field {name!r}; pick one of n, p, sigma, d")
        for value in values:
            params = replace(base_spec.params, **{name: value})
            spec = replace(base_spec, params=params)
            _, summary = run_experiment(spec, workers=workers)
            points.append(SweepPoint(name, float(value), summary))
    return points


def _row_iter(records):
    for r in records:
        for it, value in enumerate(r.losses):
            yield {
                "schema_version": RESULTS_SCHEMA_VERSION,
                "trial": r.trial_index,
                "iter": it,
                "loss": value,
                "theory": r.theory,
                "ratio": _safe_ratio(value, r.theory),
                "flagged": int(r.flagged),
            }


def write_results_csv(records: list, path) -> None:
    """One row per trial and recorded iteration."""
    fields = ["schema_version", "trial", "iter", "loss", "theory", "ratio", "flagged"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in _row_iter(records):
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def write_results_json(records: list, path) -> None:
    payload = {"schema_version": RESULTS_SCHEMA_VERSION, "rows": list(_row_iter(records))}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def spec_echo(spec: ExperimentSpec) -> dict:
    p = spec.params
    return {
        "n": p.n,
        "d": p.d,
        "p": p.p,
        "sigma": p.sigma,
        "group": p.group_kind.value,
        "seed": p.seed,
        "trials": spec.trials,
        "max_iters": spec.iteration.max_iters if spec.iteration else None,
        "mode": spec.mode.value,
    }


def summary_to_dict(spec: ExperimentSpec, summary: Summary) -> dict:
    return {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "spec": spec_echo(spec),
        "summary": {
            "trials": summary.trials,
            "used": summary.used,
            "mean_final_loss": summary.mean_final_loss,
            "stderr_final_loss": summary.stderr_final_loss,
            "min_final_loss": summary.min_final_loss,
            "max_final_loss": summary.max_final_loss,
            "mean_ratio": summary.mean_ratio,
            "theory": summary.theory,
            "flagged_trials": summary.flagged_trials,
            "flagged_nodes": summary.flagged_nodes,
            "details": summary.details,
        },
        "tolerance_metadata": {
            "ratio_bands": {k: list(v) for k, v in RATIO_BANDS.items()},
            "max_flag_rate": MAX_FLAG_RATE,
        },
    }


def write_summary_json(spec: ExperimentSpec, summary: Summary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary_to_dict(spec, summary), fh, indent=1)
        fh.write("\n")
