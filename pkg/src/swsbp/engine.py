"""Marginal inference on chain graphs under aggregate observations.

The solver alternates two message rules on the tree: ordinary sum-product
updates at unconstrained nodes, and scaled updates at constrained nodes,
where the outgoing message is computed from the pinned marginal divided by
the incoming message (a Sinkhorn-style rescaling).  At a fixed point the
product of incoming messages at every constrained node equals its observed
distribution, and the estimate minimizes the tree free energy subject to
those constraints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import _kernels
from ._kernels.plan import ChainPlan
from .chain import (
    AggregateObservation,
    ChainGraph,
    NodeId,
    folded_edge_tables,
    is_observation_node,
    obs,
)
from .errors import DegeneracyError, StructureError, SupportViolationError, ValidationError
from .estimates import CONSISTENCY_ATOL, MarginalEstimate

DEFAULT_TOLERANCE = 1e-9
DEFAULT_MAX_SWEEPS = 1000

#: messages are kept normalized to this accuracy
MESSAGE_SUM_ATOL = 1e-12


@dataclass(frozen=True)
class SbpDiagnostics:
    """Convergence record of one solve."""

    sweeps: int
    residual: float
    converged: bool
    seconds: float


class SbpResult(NamedTuple):
    store: dict
    marginals: MarginalEstimate
    diagnostics: SbpDiagnostics


def _validate_observations(graph: ChainGraph, observations) -> dict:
    observations = dict(observations or {})
    missing = set(graph.observed) - set(observations)
    if missing:
        raise ValidationError(f"missing observations for {sorted(missing, key=str)}")
    extra = set(observations) - set(graph.observed)
    if extra:
        raise ValidationError(
            f"observations given for unconstrained nodes {sorted(extra, key=str)}"
        )
    for node, y in observations.items():
        if not isinstance(y, AggregateObservation):
            raise ValidationError(f"observation at {node!r} must be AggregateObservation")
        if y.size != graph.dim_of(node):
            raise ValidationError(
                f"observation at {node!r} has length {y.size}, "
                f"expected {graph.dim_of(node)}"
            )
    return observations


def run_sbp(
    graph: ChainGraph,
    observations: Mapping[NodeId, AggregateObservation],
    tolerance: float = DEFAULT_TOLERANCE,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    warm_start: Mapping | None = None,
) -> SbpResult:
    """Estimate all node and edge marginals given the aggregate observations.

    Parameters
    ----------
    graph : ChainGraph
    observations : mapping node id -> AggregateObservation
        Exactly one entry per node in ``graph.observed``.
    tolerance : float
        Convergence threshold: largest absolute message change over one full
        cycle through the constrained nodes.
    max_sweeps : int
        Cycle budget.  Exhausting it does not raise; the result's
        diagnostics carry ``converged=False``.
    warm_start : mapping, optional
        Messages from a previous solve, keyed by directed node pairs;
        matching entries seed the iteration, everything else starts uniform.

    Returns
    -------
    SbpResult
        ``(store, marginals, diagnostics)``.  Node marginals of constrained
        nodes equal their observations exactly; edge marginals are consistent
        with node marginals at convergence.
    """
    started = time.perf_counter()
    observations = _validate_observations(graph, observations)
    if tolerance < 0 or max_sweeps < 1:
        raise ValidationError("tolerance must be >= 0 and max_sweeps >= 1")
    plan = ChainPlan.build(graph, observations, warm_start)
    sweeps, residual, converged = _kernels.execute(plan, tolerance, max_sweeps)
    marginals = _marginals_from_plan(graph, plan)
    diagnostics = SbpDiagnostics(
        sweeps=sweeps,
        residual=float(residual),
        converged=bool(converged),
        seconds=time.perf_counter() - started,
    )
    return SbpResult(plan.export_store(), marginals, diagnostics)


def _pin_aware_factor(y, incoming, what):
    """y / incoming with 0/anything treated as 0; errors if y needs support
    the message cannot provide."""
    if np.any((y > 0) & (incoming == 0)):
        raise SupportViolationError(
            f"{what}: observation needs mass where the incoming message is zero"
        )
    return np.divide(y, incoming, out=np.zeros_like(y), where=y > 0)


def _normalized(vec, what):
    total = vec.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegeneracyError(f"{what} normalizes to {total!r}")
    return vec / total


def _marginals_from_plan(graph: ChainGraph, plan: ChainPlan) -> MarginalEstimate:
    n, first = plan.n, plan.first_time
    ones_d = np.ones(plan.d)

    def in_fwd(k):
        return plan.fwd[k - 1] if k > 0 else ones_d

    def in_bwd(k):
        return plan.bwd[k] if k < n - 1 else ones_d

    nodes = {}
    for k in range(n):
        t = first + k
        if plan.hid_obs[k]:
            nodes[t] = plan.y_hid[k].copy()
        else:
            nodes[t] = _normalized(
                in_fwd(k) * plan.up[k] * in_bwd(k), f"belief at node {t}"
            )
        if plan.has_leaf[k]:
            if plan.leaf_obs[k]:
                nodes[obs(t)] = plan.y_leaf[k].copy()
            else:
                nodes[obs(t)] = _normalized(
                    plan.down[k].copy(), f"belief at node {obs(t)!r}"
                )

    edges = {}
    for k in range(n - 1):
        t = first + k
        if plan.hid_obs[k]:
            left = _pin_aware_factor(plan.y_hid[k], in_bwd(k), f"edge ({t},{t + 1})")
        else:
            left = in_fwd(k) * plan.up[k]
        if plan.hid_obs[k + 1]:
            right = _pin_aware_factor(
                plan.y_hid[k + 1], plan.fwd[k], f"edge ({t},{t + 1})"
            )
        else:
            right = plan.up[k + 1] * in_bwd(k + 1)
        table = plan.trans[k] * np.outer(left, right)
        edges[(t, t + 1)] = _normalized(table, f"edge belief ({t},{t + 1})")
    for k in range(n):
        if not plan.has_leaf[k]:
            continue
        t = first + k
        leaf = obs(t)
        if plan.hid_obs[k]:
            left = _pin_aware_factor(plan.y_hid[k], plan.up[k], f"edge ({t},{leaf!r})")
        else:
            left = in_fwd(k) * in_bwd(k)
        if plan.leaf_obs[k]:
            right = _pin_aware_factor(
                plan.y_leaf[k], plan.down[k], f"edge ({t},{leaf!r})"
            )
        else:
            right = np.ones(plan.d_obs)
        table = plan.emis[k] * np.outer(left, right)
        edges[(t, leaf)] = _normalized(table, f"edge belief ({t},{leaf!r})")

    return MarginalEstimate(nodes=nodes, edges=edges)


# -- message-level operations (reference implementations on plain dicts) ----


def uniform_messages(graph: ChainGraph) -> dict:
    """A complete message store with uniform messages in both directions."""
    store = {}
    for i, j in graph.edges():
        store[(i, j)] = np.full(graph.dim_of(j), 1.0 / graph.dim_of(j))
        store[(j, i)] = np.full(graph.dim_of(i), 1.0 / graph.dim_of(i))
    return store


def _incoming_product(graph, store, i, excluding):
    out = np.ones(graph.dim_of(i))
    for k in graph.neighbors(i):
        if k == excluding:
            continue
        try:
            out = out * store[(k, i)]
        except KeyError:
            raise ValidationError(f"store is missing message {k!r} -> {i!r}") from None
    return out


def update_hidden_message(graph: ChainGraph, store: Mapping, i: NodeId, j: NodeId):
    """Ordinary sum-product message from unconstrained ``i`` to neighbor ``j``.

    Multiplies the messages into ``i`` from all neighbors except ``j``
    (node potentials are expected to be folded into edges already), pushes
    the product through the edge potential, and returns the normalized
    result.  The store is not modified.
    """
    psi = graph.potential(i, j)
    vec = _incoming_product(graph, store, i, excluding=j)
    return _normalized(psi.T @ vec, f"message {i!r} -> {j!r}")


def update_observed_message(
    graph: ChainGraph,
    store: Mapping,
    i: NodeId,
    y: AggregateObservation,
    j: NodeId,
):
    """Scaled message from constrained ``i`` to neighbor ``j``.

    The pinned marginal divided by the incoming message from ``j`` replaces
    the usual product of incoming messages, which enforces that the belief
    at ``i`` equals ``y`` once messages stop changing.
    """
    psi = graph.potential(i, j)
    if y.size != graph.dim_of(i):
        raise ValidationError(f"observation at {i!r} has the wrong length")
    try:
        incoming = store[(j, i)]
    except KeyError:
        raise ValidationError(f"store is missing message {j!r} -> {i!r}") from None
    vec = _pin_aware_factor(y.distribution, incoming, f"message {i!r} -> {j!r}")
    return _normalized(psi.T @ vec, f"message {i!r} -> {j!r}")


def node_marginal(store: Mapping, i: NodeId):
    """Belief at ``i``: normalized product of all incoming messages."""
    incoming = [msg for (src, dst), msg in store.items() if dst == i]
    if not incoming:
        raise StructureError(f"store holds no messages into {i!r}")
    out = incoming[0].copy()
    for msg in incoming[1:]:
        out *= msg
    return _normalized(out, f"belief at {i!r}")


def edge_marginal(
    graph: ChainGraph,
    store: Mapping,
    i: NodeId,
    j: NodeId,
    observations: Mapping[NodeId, AggregateObservation] | None = None,
):
    """Pairwise belief on edge ``(i, j)``, rows indexed by ``i``'s states.

    Without ``observations`` this is the plain product form: edge potential
    times each endpoint's incoming messages from outside the edge.  With
    ``observations`` given, a constrained endpoint's side-product is replaced
    by its pinned marginal divided by the within-edge message, which is what
    makes edge and node marginals consistent at constrained nodes.
    """
    psi = graph.potential(i, j)
    observations = observations or {}

    def side(node, other):
        if node in observations:
            try:
                incoming = store[(other, node)]
            except KeyError:
                raise ValidationError(
                    f"store is missing message {other!r} -> {node!r}"
                ) from None
            return _pin_aware_factor(
                observations[node].distribution,
                incoming,
                f"edge ({i!r},{j!r})",
            )
        return _incoming_product(graph, store, node, excluding=other)

    table = psi * np.outer(side(i, j), side(j, i))
    return _normalized(table, f"edge belief ({i!r},{j!r})")


def bethe_free_energy(graph: ChainGraph, marginals: MarginalEstimate) -> float:
    """Tree free energy of a consistent marginal estimate.

    Computes sum over edges of KL(edge belief || folded edge potential),
    in the unnormalized sense, minus the degree-weighted node entropies.
    On a tree with consistent marginals this equals the divergence of the
    implied joint from the (unnormalized) product of potentials, the
    quantity the constrained solver minimizes.

    Conventions: 0 ln 0 = 0; a belief putting mass where the potential is
    zero yields +inf.
    """
    for node in graph.nodes():
        if node not in marginals.nodes:
            raise ValidationError(f"marginals are missing node {node!r}")
    for edge in graph.edges():
        if edge not in marginals.edges and edge[::-1] not in marginals.edges:
            raise ValidationError(f"marginals are missing edge {edge!r}")
    gap = marginals.max_consistency_gap()
    if gap > CONSISTENCY_ATOL:
        raise ValidationError(
            f"edge/node marginals disagree by {gap:g} "
            f"(limit {CONSISTENCY_ATOL:g}); free energy undefined"
        )

    total = 0.0
    tables = folded_edge_tables(graph)
    for (i, j), psi in tables.items():
        belief = marginals.edge(i, j)
        support = belief > 0
        if np.any(psi[support] == 0):
            return float("inf")
        total += float(
            np.sum(belief[support] * (np.log(belief[support]) - np.log(psi[support])))
        )
    for node in graph.nodes():
        excess = graph.degree(node) - 1
        if excess == 0:
            continue
        belief = marginals.node(node)
        support = belief > 0
        entropy = -float(np.sum(belief[support] * np.log(belief[support])))
        total += excess * entropy
    return total
