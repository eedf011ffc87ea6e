"""Streaming marginal estimation over a growing observation sequence.

Aggregate observations arrive one time step at a time.  The full-history
baseline re-solves the entire chain after every arrival, which is exact but
costs more at every step.  The sliding-window strategies keep the chain
restricted to the most recent ``size`` time steps and differ only in how
they compensate for the history they drop:

- ``NAIVE`` drops it outright and re-solves the window from scratch.
- ``CONSTRAINED`` pins the marginal of the incoming window head to the
  estimate the previous window produced for that same node.
- ``POTENTIAL`` folds the messages that flowed from departing nodes into
  the window head into a node potential carried by the new window.

All three window variants solve graphs of identical shape, so their
per-step cost is flat in the stream length.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .chain import (
    AggregateObservation,
    ChainGraph,
    EdgePotential,
    HmmModel,
    NodeId,
    NodePotential,
    StateSpace,
    obs,
)
from .engine import (
    DEFAULT_MAX_SWEEPS,
    DEFAULT_TOLERANCE,
    SbpDiagnostics,
    run_sbp,
)
from .errors import ValidationError
from .estimates import MarginalEstimate

MIN_WINDOW = 2


class WindowVariant(enum.Enum):
    """How the streaming estimator treats observations that leave scope."""

    BASELINE = "baseline"
    NAIVE = "naive"
    CONSTRAINED = "constrained-marginal"
    POTENTIAL = "potential-update"


@dataclass(frozen=True)
class WindowState:
    """Everything needed to fold in the next observation.

    ``time`` is the newest time step whose observation has been absorbed;
    ``graph`` and ``observations`` describe the last solved problem, and
    ``store`` holds its converged messages keyed by directed node pairs.
    """

    variant: WindowVariant
    model: HmmModel
    size: int
    time: int
    graph: ChainGraph
    observations: Mapping[NodeId, AggregateObservation]
    store: Mapping
    marginals: MarginalEstimate
    diagnostics: SbpDiagnostics


@dataclass(frozen=True)
class StepResult:
    """Per-step summary: the newest node's estimate and what it cost.

    ``seconds`` is the wall time of the solve alone, so step timings compare
    how much message passing each strategy needs, not graph bookkeeping.
    """

    time: int
    marginal: np.ndarray
    seconds: float
    sweeps: int
    converged: bool


def _window_graph(
    model: HmmModel,
    first: int,
    count: int,
    head_pinned: bool = False,
    head_potential=None,
) -> ChainGraph:
    transition = EdgePotential(model.transition)
    observation = EdgePotential(model.observation)
    times = range(first, first + count)
    observed = {obs(s) for s in times}
    if head_pinned:
        observed.add(first)
    node_potentials = {}
    if head_potential is not None:
        node_potentials[first] = NodePotential(head_potential)
    return ChainGraph(
        first_time=first,
        num_hidden=count,
        hidden_space=StateSpace(model.num_states),
        obs_space=StateSpace(model.num_symbols),
        transitions={s: transition for s in times[:-1]},
        emissions={s: observation for s in times},
        observed=frozenset(observed),
        node_potentials=node_potentials,
    )


def init_window(
    model: HmmModel,
    variant: WindowVariant,
    size: int,
    observations: Sequence[AggregateObservation],
    tolerance: float = DEFAULT_TOLERANCE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> WindowState:
    """Solve the initial prefix of ``size`` time steps.

    Every variant starts from the same problem: the chain over times
    ``1..size`` with the model prior attached to the first node, so the
    variants only begin to differ once the window moves.
    """
    variant = WindowVariant(variant)
    if size < MIN_WINDOW:
        raise ValidationError(f"window size must be at least {MIN_WINDOW}, got {size}")
    observations = list(observations)
    if len(observations) != size:
        raise ValidationError(
            f"expected {size} initial observations, got {len(observations)}"
        )
    graph = model.chain(size)
    pins = {obs(t): y for t, y in enumerate(observations, start=1)}
    result = run_sbp(graph, pins, tolerance=tolerance, max_sweeps=max_sweeps)
    return WindowState(
        variant=variant,
        model=model,
        size=size,
        time=size,
        graph=graph,
        observations=pins,
        store=result.store,
        marginals=result.marginals,
        diagnostics=result.diagnostics,
    )


def _baseline_pieces(state: WindowState, t_new: int, y: AggregateObservation):
    graph = state.model.chain(t_new)
    pins = dict(state.observations)
    pins[obs(t_new)] = y
    return graph, pins, state.store


def _naive_pieces(state: WindowState, t_new: int, y: AggregateObservation):
    first = t_new - state.size + 1
    graph = _window_graph(state.model, first, state.size)
    pins = {
        node: value
        for node, value in state.observations.items()
        if node != obs(first - 1) and node != first - 1
    }
    pins[obs(t_new)] = y
    return graph, pins, None


def _constrained_pieces(state: WindowState, t_new: int, y: AggregateObservation):
    first = t_new - state.size + 1
    graph = _window_graph(state.model, first, state.size, head_pinned=True)
    pins = {
        node: value
        for node, value in state.observations.items()
        if node != obs(first - 1) and node != first - 1
    }
    pins[obs(t_new)] = y
    pins[first] = AggregateObservation(state.marginals.node(first), y.population)
    return graph, pins, state.store


def _potential_pieces(state: WindowState, t_new: int, y: AggregateObservation):
    first = t_new - state.size + 1
    # everything the departing node told the incoming head, kept as a prior
    carried = np.array(state.store[(first - 1, first)], dtype=float)
    previous = state.graph.node_potentials.get(first)
    if previous is not None:
        carried = carried * previous.values
    carried = carried / carried.sum()
    graph = _window_graph(state.model, first, state.size, head_potential=carried)
    pins = {
        node: value
        for node, value in state.observations.items()
        if node != obs(first - 1) and node != first - 1
    }
    pins[obs(t_new)] = y
    return graph, pins, state.store


_PIECES = {
    WindowVariant.BASELINE: _baseline_pieces,
    WindowVariant.NAIVE: _naive_pieces,
    WindowVariant.CONSTRAINED: _constrained_pieces,
    WindowVariant.POTENTIAL: _potential_pieces,
}


def advance(
    state: WindowState,
    observation: AggregateObservation,
    tolerance: float = DEFAULT_TOLERANCE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> tuple[WindowState, StepResult]:
    """Fold in the observation for the next time step and re-solve.

    Returns the new state and a step summary timing the solve itself.
    """
    t_new = state.time + 1
    graph, pins, warm = _PIECES[state.variant](state, t_new, observation)
    result = run_sbp(
        graph, pins, tolerance=tolerance, max_sweeps=max_sweeps, warm_start=warm
    )
    seconds = result.diagnostics.seconds
    new_state = WindowState(
        variant=state.variant,
        model=state.model,
        size=state.size,
        time=t_new,
        graph=graph,
        observations=pins,
        store=result.store,
        marginals=result.marginals,
        diagnostics=result.diagnostics,
    )
    step = StepResult(
        time=t_new,
        marginal=result.marginals.node(t_new),
        seconds=seconds,
        sweeps=result.diagnostics.sweeps,
        converged=result.diagnostics.converged,
    )
    return new_state, step


def run_stream(
    model: HmmModel,
    variant: WindowVariant,
    size: int,
    observations: Sequence[AggregateObservation],
    tolerance: float = DEFAULT_TOLERANCE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> tuple[WindowState, list[StepResult]]:
    """Process a whole observation sequence and collect per-step results.

    The first ``size`` observations form the initial window; each later one
    produces a StepResult.
    """
    observations = list(observations)
    if len(observations) < size:
        raise ValidationError(
            f"need at least {size} observations, got {len(observations)}"
        )
    state = init_window(
        model,
        variant,
        size,
        observations[:size],
        tolerance=tolerance,
        max_sweeps=max_sweeps,
    )
    steps = []
    for y in observations[size:]:
        state, step = advance(state, y, tolerance=tolerance, max_sweeps=max_sweeps)
        steps.append(step)
    return state, steps
