"""Seeded experiment runner and report serialization.

One experiment samples a population per trial, runs the full-history
baseline plus the requested sliding-window methods over the stream, and
records two errors per step: distance to the baseline estimate and distance
to the normalized true hidden counts.  Reports carry one row per
(trial, time step, method) and replay byte-identically from the same config
apart from wall-time measurements.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from . import __version__, _kernels
from .errors import SwsbpError, ValidationError
from .oracle import ipf_joint_projection
from .scenario import KIND_RANDOM_HMM, ScenarioConfig, simulate
from .window import StepResult, WindowVariant, advance, init_window

METHOD_BASELINE = "baseline"
METHOD_NAIVE = "naive"
METHOD_SWSBP1 = "swsbp1"
METHOD_SWSBP2 = "swsbp2"
METHODS = (METHOD_BASELINE, METHOD_NAIVE, METHOD_SWSBP1, METHOD_SWSBP2)

_VARIANTS = {
    METHOD_BASELINE: WindowVariant.BASELINE,
    METHOD_NAIVE: WindowVariant.NAIVE,
    METHOD_SWSBP1: WindowVariant.CONSTRAINED,
    METHOD_SWSBP2: WindowVariant.POTENTIAL,
}

ORACLE_CHECK_ATOL = 1e-6

CSV_HEADER = "trial,t,method,l1_vs_baseline,l1_vs_truth,step_seconds,converged,sweeps"


def l1_error(a, b) -> float:
    """Total variation style distance: sum of absolute differences."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


@dataclass(frozen=True)
class ExperimentRow:
    trial: int
    t: int
    method: str
    l1_vs_baseline: float
    l1_vs_truth: float
    step_seconds: float
    converged: bool
    sweeps: int


@dataclass(frozen=True)
class ExperimentReport:
    """Rows sorted by (trial, t, method), plus run metadata and summary."""

    rows: tuple[ExperimentRow, ...]
    metadata: dict
    summary: tuple[dict, ...]


def _stream_with_recovery(model, variant, config, observations):
    """Run one method over the stream, trading exceptions for gap markers.

    Returns (steps, error): ``steps`` has one entry per time step K+1..T,
    either a StepResult or None from the first failure onward; ``error`` is
    the failure message, if any.
    """
    remaining = len(observations) - config.window
    try:
        state = init_window(
            model,
            variant,
            config.window,
            observations[: config.window],
            tolerance=config.tolerance,
            max_sweeps=config.max_sweeps,
        )
    except SwsbpError as exc:
        return [None] * remaining, str(exc)
    steps: list[StepResult | None] = []
    error = None
    for y in observations[config.window :]:
        if error is not None:
            steps.append(None)
            continue
        try:
            state, step = advance(
                state, y, tolerance=config.tolerance, max_sweeps=config.max_sweeps
            )
            steps.append(step)
        except SwsbpError as exc:
            error = str(exc)
            steps.append(None)
    return steps, error


def _oracle_certify(model, config, observations) -> float:
    """Exact-scaling cross-check of the final full-chain solve.

    Solves the whole chain once more, projects the explicit joint onto the
    same constraints, and returns the worst node-marginal gap.  Raises if
    the gap exceeds ORACLE_CHECK_ATOL.
    """
    from .chain import obs as obs_node
    from .engine import run_sbp

    graph = model.chain(config.horizon)
    pins = {obs_node(t): y for t, y in enumerate(observations, start=1)}
    result = run_sbp(
        graph, pins, tolerance=config.tolerance, max_sweeps=config.max_sweeps
    )
    reference, _ = ipf_joint_projection(graph, pins)
    gap = max(
        float(np.abs(result.marginals.node(node) - reference.node(node)).max())
        for node in graph.nodes()
    )
    if gap > ORACLE_CHECK_ATOL:
        raise SwsbpError(
            f"oracle check failed: node marginal gap {gap:.3e} exceeds "
            f"{ORACLE_CHECK_ATOL:.0e}"
        )
    return gap


def run_experiment(
    config: ScenarioConfig,
    methods: Iterable[str] = METHODS,
    trials: int = 1,
    oracle_check: bool = False,
) -> ExperimentReport:
    """Run every requested method over freshly sampled data for each trial.

    The baseline stream is always computed because the per-step baseline
    error needs it; baseline rows are emitted only when requested.  A method
    failing mid-stream yields NaN-error rows for its remaining steps while
    the other methods keep running.
    """
    methods = sorted(set(methods))
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValidationError(
            f"unknown methods: {', '.join(unknown)}; choose from {', '.join(METHODS)}"
        )
    if not methods:
        raise ValidationError("at least one method is required")
    if trials < 1:
        raise ValidationError(f"trials must be positive, got {trials}")

    rows: list[ExperimentRow] = []
    errors: list[dict] = []
    oracle_gaps: list[float] = []
    times = list(range(config.window + 1, config.horizon + 1))
    for trial in range(trials):
        model, hidden_counts, observations = simulate(config, trial)
        truth = hidden_counts / config.population

        streams: dict[str, list[StepResult | None]] = {}
        base_steps, base_error = _stream_with_recovery(
            model, WindowVariant.BASELINE, config, observations
        )
        streams[METHOD_BASELINE] = base_steps
        if base_error is not None:
            errors.append(
                {"trial": trial, "method": METHOD_BASELINE, "message": base_error}
            )
        for method in methods:
            if method == METHOD_BASELINE:
                continue
            steps, failure = _stream_with_recovery(
                model, _VARIANTS[method], config, observations
            )
            streams[method] = steps
            if failure is not None:
                errors.append({"trial": trial, "method": method, "message": failure})

        if oracle_check:
            oracle_gaps.append(_oracle_certify(model, config, observations))

        for index, t in enumerate(times):
            base = base_steps[index]
            for method in methods:
                step = streams[method][index]
                if step is None:
                    rows.append(
                        ExperimentRow(
                            trial=trial,
                            t=t,
                            method=method,
                            l1_vs_baseline=math.nan,
                            l1_vs_truth=math.nan,
                            step_seconds=0.0,
                            converged=False,
                            sweeps=0,
                        )
                    )
                    continue
                if method == METHOD_BASELINE:
                    vs_base = 0.0
                elif base is None:
                    vs_base = math.nan
                else:
                    vs_base = l1_error(step.marginal, base.marginal)
                rows.append(
                    ExperimentRow(
                        trial=trial,
                        t=t,
                        method=method,
                        l1_vs_baseline=vs_base,
                        l1_vs_truth=l1_error(step.marginal, truth[t - 1]),
                        step_seconds=step.seconds,
                        converged=step.converged,
                        sweeps=step.sweeps,
                    )
                )

    rows.sort(key=lambda row: (row.trial, row.t, row.method))
    metadata = {
        "config": asdict(config),
        "methods": methods,
        "trials": trials,
        "version": __version__,
        "backend": _kernels.backend_name(),
        "convergence": (
            "largest absolute message change over one sweep <= tolerance"
        ),
        "errors": errors,
    }
    if config.kind == KIND_RANDOM_HMM:
        metadata["prior"] = "uniform over hidden states"
    if oracle_check:
        metadata["oracle_check"] = {
            "atol": ORACLE_CHECK_ATOL,
            "max_node_gap": max(oracle_gaps),
        }
    return ExperimentReport(
        rows=tuple(rows),
        metadata=metadata,
        summary=tuple(_summarize(rows, methods, times)),
    )


def _summarize(rows, methods, times):
    by_key: dict[tuple[str, int], list[ExperimentRow]] = {}
    for row in rows:
        by_key.setdefault((row.method, row.t), []).append(row)
    out = []
    for method in methods:
        for t in times:
            group = by_key.get((method, t), [])
            if not group:
                continue
            base = np.array([row.l1_vs_baseline for row in group])
            truth = np.array([row.l1_vs_truth for row in group])
            seconds = np.array([row.step_seconds for row in group])
            out.append(
                {
                    "method": method,
                    "t": t,
                    "trials": len(group),
                    "mean_l1_vs_baseline": float(base.mean()),
                    "std_l1_vs_baseline": float(base.std()),
                    "mean_l1_vs_truth": float(truth.mean()),
                    "std_l1_vs_truth": float(truth.std()),
                    "mean_step_seconds": float(seconds.mean()),
                }
            )
    return out


def _format_float(value: float) -> str:
    return f"{value:.17g}"


def _csv_lines(rows: Sequence[ExperimentRow]) -> list[str]:
    lines = [CSV_HEADER]
    for row in rows:
        lines.append(
            ",".join(
                (
                    str(row.trial),
                    str(row.t),
                    row.method,
                    _format_float(row.l1_vs_baseline),
                    _format_float(row.l1_vs_truth),
                    _format_float(row.step_seconds),
                    "true" if row.converged else "false",
                    str(row.sweeps),
                )
            )
        )
    return lines


def report_to_json(report: ExperimentReport) -> str:
    payload = {
        "metadata": report.metadata,
        "summary": list(report.summary),
        "rows": [asdict(row) for row in report.rows],
    }
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def report_to_csv(report: ExperimentReport) -> str:
    return "\n".join(_csv_lines(report.rows)) + "\n"


def emit_report(report: ExperimentReport, format: str, path) -> None:
    """Write the report as CSV (rows only) or JSON (rows plus metadata)."""
    if format == "csv":
        text = report_to_csv(report)
    elif format == "json":
        text = report_to_json(report)
    else:
        raise ValidationError(f"format must be 'csv' or 'json', got {format!r}")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
    except OSError as exc:
        raise SwsbpError(f"cannot write report to {path}: {exc}") from exc


def load_report(path) -> ExperimentReport:
    """Read back a JSON report produced by emit_report."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise SwsbpError(f"cannot read report from {path}: {exc}") from exc
    rows = tuple(ExperimentRow(**row) for row in payload["rows"])
    return ExperimentReport(
        rows=rows,
        metadata=payload["metadata"],
        summary=tuple(payload["summary"]),
    )
