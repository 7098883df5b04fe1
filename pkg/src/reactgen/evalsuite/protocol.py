"""Repetition protocol and report serialization.

Each repetition regenerates its own sample set from a per-repetition seed
and recomputes every metric; the report carries the mean and the 95%
confidence half-width (normal approximation, 1.96 * sd / sqrt(reps)) per
metric. Desk scale runs 100 samples x 20 repetitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from reactgen.errors import ContractError

DEFAULT_REPS = 20
DEFAULT_SAMPLES_PER_REP = 100

CORE_METRICS = ("fid", "acc", "diversity", "multimodality", "ape", "ave")


@dataclass(frozen=True)
class MetricReport:
    fid: float
    acc: float
    diversity: float
    multimodality: float
    ape: float
    ave: float
    ci95: dict[str, float] = field(default_factory=dict)
    extras: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.fid < 0:
            raise ContractError(f"fid must be nonnegative, got {self.fid}")
        if not 0.0 <= self.acc <= 1.0:
            raise ContractError(f"acc must lie in [0, 1], got {self.acc}")

    def as_dict(self) -> dict:
        flat = {name: getattr(self, name) for name in CORE_METRICS}
        flat.update(self.extras)
        return {"metrics": flat, "ci95": dict(self.ci95)}


def run_protocol(rep_fn, reps: int = DEFAULT_REPS, seed: int = 0) -> MetricReport:
    """Aggregate `rep_fn(rep_index, rep_seed) -> {metric: value}` over
    repetitions. The callable must return every core metric; extra keys are
    carried through with their own confidence intervals."""
    if reps < 1:
        raise ContractError("reps must be >= 1")
    rows: dict[str, list[float]] = {}
    for rep in range(reps):
        values = rep_fn(rep, seed + rep)
        missing = [m for m in CORE_METRICS if m not in values]
        if missing:
            raise ContractError(f"repetition {rep} omitted metrics {missing}")
        for key, value in values.items():
            rows.setdefault(key, []).append(float(value))
        lengths = {len(v) for v in rows.values()}
        if len(lengths) != 1:
            raise ContractError(f"repetition {rep} changed the metric key set")

    means = {k: float(np.mean(v)) for k, v in rows.items()}
    ci95 = {
        k: float(1.96 * np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
        for k, v in rows.items()
    }
    extras = {k: v for k, v in means.items() if k not in CORE_METRICS}
    return MetricReport(
        fid=max(0.0, means["fid"]),
        acc=means["acc"],
        diversity=means["diversity"],
        multimodality=means["multimodality"],
        ape=means["ape"],
        ave=means["ave"],
        ci95=ci95,
        extras=extras,
    )


def format_report(report: MetricReport) -> str:
    """Flat `key = value` text, one metric per line with its half-width."""
    lines = []
    flat = report.as_dict()["metrics"]
    for key in sorted(flat, key=lambda k: (k not in CORE_METRICS, k)):
        half = report.ci95.get(key)
        tail = f" +- {half:.6g}" if half is not None else ""
        lines.append(f"{key} = {flat[key]:.6g}{tail}")
    return "\n".join(lines) + "\n"


def write_report(report: MetricReport, text_path, record_path) -> None:
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(format_report(report))
    with open(record_path, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(record_path) -> MetricReport:
    with open(record_path, encoding="utf-8") as fh:
        payload = json.load(fh)
    metrics = payload.get("metrics", {})
    missing = [m for m in CORE_METRICS if m not in metrics]
    if missing:
        raise ContractError(f"record file is missing metrics {missing}")
    extras = {k: v for k, v in metrics.items() if k not in CORE_METRICS}
    return MetricReport(
        **{m: metrics[m] for m in CORE_METRICS},
        ci95=payload.get("ci95", {}),
        extras=extras,
    )
