"""Wall-time comparison of the execution backends.

Both backends run the same full-chain solve from the same plan contents;
only the inner message-update loop differs.  The compiled backend appears
in the results only when its extension module was built.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from ._kernels import ChainPlan, _sbp_py
from .chain import obs
from .errors import ValidationError
from .scenario import KIND_RANDOM_HMM, ScenarioConfig, simulate

_EXECUTORS = {"python": _sbp_py}
try:
    from ._kernels import _sbp as _compiled

    _EXECUTORS["compiled"] = _compiled
except ImportError:
    pass


@dataclass(frozen=True)
class BenchResult:
    """Best-of-``repeats`` timing for one backend on one solve."""

    backend: str
    seconds: float
    sweeps: int
    converged: bool


def available_backends() -> tuple[str, ...]:
    return tuple(_EXECUTORS)


def compare_backends(
    num_states: int = 25,
    horizon: int = 40,
    population: int = 10_000,
    seed: int = 0,
    repeats: int = 3,
    tolerance: float = 1e-9,
    max_sweeps: int = 1000,
) -> tuple[BenchResult, ...]:
    """Time one aggregate full-chain solve under every available backend.

    The plan is rebuilt before each run because a solve overwrites the
    message buffers in place; only the solve itself is timed.
    """
    if repeats < 1:
        raise ValidationError(f"repeats must be positive, got {repeats}")
    config = ScenarioConfig(
        kind=KIND_RANDOM_HMM,
        population=population,
        horizon=horizon,
        window=2,
        seed=seed,
        num_states=num_states,
        tolerance=tolerance,
        max_sweeps=max_sweeps,
    )
    model, _, observations = simulate(config, 0)
    graph = model.chain(horizon)
    pins = {obs(t): y for t, y in enumerate(observations, start=1)}

    results = []
    for name, executor in _EXECUTORS.items():
        best = None
        sweeps = 0
        converged = False
        for _ in range(repeats):
            plan = ChainPlan.build(graph, pins)
            start = time.perf_counter()
            sweeps, _, converged = executor.execute(plan, tolerance, max_sweeps)
            elapsed = time.perf_counter() - start
            best = elapsed if best is None else min(best, elapsed)
        results.append(
            BenchResult(
                backend=name, seconds=best, sweeps=sweeps, converged=converged
            )
        )
    return tuple(results)


def format_comparison(results) -> str:
    lines = [f"{'backend':<10} {'seconds':>12} {'sweeps':>8} {'converged':>10}"]
    for result in results:
        lines.append(
            f"{result.backend:<10} {result.seconds:>12.6f} "
            f"{result.sweeps:>8} {('yes' if result.converged else 'no'):>10}"
        )
    by_name = {result.backend: result for result in results}
    if "python" in by_name and "compiled" in by_name:
        fast = by_name["compiled"].seconds
        if fast > 0:
            ratio = by_name["python"].seconds / fast
            lines.append(f"speedup: {ratio:.1f}x (compiled over python)")
    return "\n".join(lines)
