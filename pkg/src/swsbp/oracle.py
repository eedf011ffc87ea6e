"""Brute-force reference computations.

Everything here works on explicitly materialized joint tensors or classic
dense recursions, independent of the message-passing engine, so the two
implementations can certify each other in tests.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .chain import (
    AggregateObservation,
    ChainGraph,
    NodeId,
    _renormalized_rows,
    _renormalized_vector,
    node_sort_key,
)
from .errors import SizeError, SupportViolationError, SwsbpError, ValidationError
from .estimates import MarginalEstimate

#: refuse to materialize joints with more assignments than this
MAX_ASSIGNMENTS = 1_000_000


def tensor_axes(graph: ChainGraph) -> list:
    """Axis order of the materialized joint: hidden nodes by time, then leaves."""
    return list(graph.times) + [("obs", t) for t in graph.leaf_times]


def joint_tensor(graph: ChainGraph) -> np.ndarray:
    """Materialize the unnormalized joint (product of all potentials).

    Axes follow :func:`tensor_axes`.  Node potentials are multiplied in, so
    the tensor represents the same measure as the graph.

    Raises
    ------
    SizeError
        If the state space exceeds ``MAX_ASSIGNMENTS`` assignments.
    """
    axes = tensor_axes(graph)
    dims = [graph.dim_of(node) for node in axes]
    total = 1
    for d in dims:
        total *= d
        if total > MAX_ASSIGNMENTS:
            raise SizeError(
                f"joint has more than {MAX_ASSIGNMENTS} assignments; refusing"
            )
    index = {node: k for k, node in enumerate(axes)}

    tensor = np.ones(dims)
    for i, j in graph.edges():
        table = graph.potential(i, j)
        ai, aj = index[i], index[j]
        if ai > aj:
            table, ai, aj = table.T, aj, ai
        shape = [1] * len(dims)
        shape[ai], shape[aj] = table.shape
        tensor = tensor * table.reshape(shape)
    for node, pot in graph.node_potentials.items():
        shape = [1] * len(dims)
        shape[index[node]] = pot.size
        tensor = tensor * pot.values.reshape(shape)
    return tensor


def _axis_marginal(tensor: np.ndarray, axis: int) -> np.ndarray:
    others = tuple(k for k in range(tensor.ndim) if k != axis)
    return tensor.sum(axis=others)


def _estimate_from_tensor(graph: ChainGraph, tensor: np.ndarray) -> MarginalEstimate:
    axes = tensor_axes(graph)
    index = {node: k for k, node in enumerate(axes)}
    total = tensor.sum()
    if total <= 0:
        raise SwsbpError("joint tensor has zero total mass")
    q = tensor / total
    nodes = {node: _axis_marginal(q, index[node]) for node in axes}
    edges = {}
    for i, j in graph.edges():
        ai, aj = index[i], index[j]
        keep = (ai, aj) if ai < aj else (aj, ai)
        others = tuple(k for k in range(q.ndim) if k not in keep)
        table = q.sum(axis=others)
        if ai > aj:
            table = table.T
        edges[(i, j)] = table
    return MarginalEstimate(nodes=nodes, edges=edges)


def ipf_joint_projection(
    graph: ChainGraph,
    observations: Mapping[NodeId, AggregateObservation],
    tolerance: float = 1e-12,
    max_cycles: int = 10_000,
    on_cycle: Callable[[np.ndarray], None] | None = None,
):
    """I-project the normalized joint onto the observed marginal constraints.

    Iterative proportional fitting on the explicit joint tensor: starting
    from the normalized product of potentials, repeatedly rescale one
    constrained node's slices to match its observed distribution, cycling
    over constrained nodes in (time, leaf-first) order, until every observed
    marginal matches within ``tolerance`` (max L1 deviation).

    Parameters
    ----------
    graph : ChainGraph
    observations : mapping node id -> AggregateObservation
        Must cover exactly ``graph.observed``.
    tolerance : float
        Convergence threshold on the worst constraint deviation.
    max_cycles : int
        Safety cap; exceeded caps raise ``SwsbpError``.
    on_cycle : callable, optional
        Diagnostic hook, called with a copy of the current normalized joint
        after every full rescaling cycle.

    Returns
    -------
    (MarginalEstimate, float)
        Marginals of the projected joint and the achieved objective value
        KL(q || product-of-potentials), using the unnormalized product as
        reference measure.
    """
    if set(observations) != set(graph.observed):
        raise ValidationError(
            "observations must cover exactly the graph's observed nodes"
        )
    axes = tensor_axes(graph)
    index = {node: k for k, node in enumerate(axes)}
    reference = joint_tensor(graph)
    q = reference / reference.sum()

    targets = []
    for node in sorted(graph.observed, key=node_sort_key):
        y = observations[node].distribution
        if y.shape[0] != graph.dim_of(node):
            raise ValidationError(f"observation at {node!r} has wrong length")
        targets.append((node, index[node], y))

    converged = False
    for _ in range(max_cycles + 1):
        gap = 0.0
        for _, axis, y in targets:
            gap = max(gap, float(np.abs(_axis_marginal(q, axis) - y).sum()))
        if gap <= tolerance:
            converged = True
            break
        for node, axis, y in targets:
            marginal = _axis_marginal(q, axis)
            bad = (y > 0) & (marginal == 0)
            if np.any(bad):
                raise SupportViolationError(
                    f"observation at {node!r} requires states of zero mass"
                )
            factor = np.divide(y, marginal, out=np.zeros_like(y), where=y > 0)
            shape = [1] * q.ndim
            shape[axis] = y.shape[0]
            q = q * factor.reshape(shape)
        if on_cycle is not None:
            on_cycle(q.copy())
    if not converged:
        raise SwsbpError(
            f"projection did not reach tolerance {tolerance:g} "
            f"within {max_cycles} cycles"
        )

    positive = q > 0
    objective = float(np.sum(q[positive] * (np.log(q[positive]) - np.log(reference[positive]))))
    return _estimate_from_tensor(graph, q), objective


def brute_force_marginals(graph: ChainGraph) -> MarginalEstimate:
    """Exact unconstrained marginals by materializing the joint."""
    return _estimate_from_tensor(graph, joint_tensor(graph))


def forward_backward(
    prior,
    transition,
    observation,
    symbols: Sequence[int],
) -> np.ndarray:
    """Exact smoothed state marginals of an HMM given one symbol per step.

    Classic scaled alpha-beta recursion.  Returns an array of shape
    ``(len(symbols), d)`` whose row t is P(x_t | o_1..o_T).
    """
    transition = _renormalized_rows(transition, "transition matrix")
    observation = _renormalized_rows(observation, "observation matrix")
    prior = _renormalized_vector(prior, "prior")
    d, d_obs = observation.shape
    symbols = [int(s) for s in symbols]
    if not symbols:
        raise ValidationError("need at least one observed symbol")
    for s in symbols:
        if not 0 <= s < d_obs:
            raise ValidationError(f"symbol {s} outside 0..{d_obs - 1}")

    horizon = len(symbols)
    alpha = np.empty((horizon, d))
    vec = prior * observation[:, symbols[0]]
    total = vec.sum()
    if total == 0:
        raise SupportViolationError("observed sequence has zero likelihood")
    alpha[0] = vec / total
    for t in range(1, horizon):
        vec = (transition.T @ alpha[t - 1]) * observation[:, symbols[t]]
        total = vec.sum()
        if total == 0:
            raise SupportViolationError("observed sequence has zero likelihood")
        alpha[t] = vec / total

    beta = np.empty((horizon, d))
    beta[-1] = 1.0
    for t in range(horizon - 2, -1, -1):
        vec = transition @ (beta[t + 1] * observation[:, symbols[t + 1]])
        total = vec.sum()
        if total == 0:
            raise SupportViolationError("observed sequence has zero likelihood")
        beta[t] = vec / total

    posterior = alpha * beta
    return posterior / posterior.sum(axis=1, keepdims=True)
