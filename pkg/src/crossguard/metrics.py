"""Evaluation metrics over rollout traces: waiting time, queues, collisions.

AWT is the mean accumulated waiting time per completed vehicle, AQL the
time-average of the total queued-vehicle count over the eight entrance
movements, CR the number of collision incidents per hundred completed
crossings.  CR is undefined when nothing completes and is reported absent.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class EvalTrace:
    """Raw per-rollout record; everything a report needs, nothing more."""

    seed: int
    queue_series: list[int] = field(default_factory=list)
    completed_waits: list[float] = field(default_factory=list)
    collisions: int = 0
    throughput: int = 0
    steps: int = 0


@dataclass
class MetricsReport:
    awt: float
    aql: float
    cr: float | None
    throughput: int
    collisions: int
    steps: int
    seed: int


def compute_metrics(trace: EvalTrace) -> MetricsReport:
    if trace.steps != len(trace.queue_series):
        raise ValueError("queue series length must match the step count")
    awt = float(sum(trace.completed_waits) / len(trace.completed_waits)) if trace.completed_waits else 0.0
    aql = float(sum(trace.queue_series) / trace.steps) if trace.steps else 0.0
    cr = 100.0 * trace.collisions / trace.throughput if trace.throughput > 0 else None
    return MetricsReport(
        awt=awt,
        aql=aql,
        cr=cr,
        throughput=trace.throughput,
        collisions=trace.collisions,
        steps=trace.steps,
        seed=trace.seed,
    )


_CSV_FIELDS = ["variant", "seed", "awt", "aql", "cr", "throughput", "collisions", "steps"]


def reports_to_csv(rows: list[tuple[str, MetricsReport]], path: str | Path):
    """One row per (variant, seed); CR left blank when undefined."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for variant, rep in rows:
            writer.writerow(
                {
                    "variant": variant,
                    "seed": rep.seed,
                    "awt": f"{rep.awt:.6f}",
                    "aql": f"{rep.aql:.6f}",
                    "cr": "" if rep.cr is None else f"{rep.cr:.6f}",
                    "throughput": rep.throughput,
                    "collisions": rep.collisions,
                    "steps": rep.steps,
                }
            )


def summarize(rows: list[tuple[str, MetricsReport]]) -> dict:
    """Per-variant means over seeds, JSON-ready."""
    grouped: dict[str, list[MetricsReport]] = {}
    for variant, rep in rows:
        grouped.setdefault(variant, []).append(rep)
    out = {}
    for variant, reps in grouped.items():
        crs = [r.cr for r in reps if r.cr is not None]
        out[variant] = {
            "seeds": [r.seed for r in reps],
            "awt_mean": sum(r.awt for r in reps) / len(reps),
            "aql_mean": sum(r.aql for r in reps) / len(reps),
            "cr_mean": sum(crs) / len(crs) if crs else None,
            "throughput_total": sum(r.throughput for r in reps),
            "collisions_total": sum(r.collisions for r in reps),
        }
    return out


def write_summary(rows: list[tuple[str, MetricsReport]], path: str | Path) -> dict:
    summary = summarize(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary
