"""Chain-structured models with aggregate (population-level) observations.

Hidden nodes are integer time indices ``t``; each may carry one observation
leaf identified by the node id ``("obs", t)``.  All interactions live on
edge potentials; node potentials are optional unary factors that inference
folds into an incident edge before solving.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import (
    CountMismatchError,
    ModelError,
    StructureError,
    ValidationError,
)

NodeId = Union[int, tuple]

#: stored distributions are exact to this after renormalization
STOCHASTIC_ATOL = 1e-12
#: inputs whose normalization drifts within this band are silently rescaled
RENORM_ATOL = 1e-9


def obs(t: int) -> NodeId:
    """Node id of the observation leaf attached to hidden node ``t``."""
    return ("obs", int(t))


def is_observation_node(node: NodeId) -> bool:
    return isinstance(node, tuple)


def node_time(node: NodeId) -> int:
    """Time index of a node (a leaf shares its hidden node's time)."""
    return node[1] if isinstance(node, tuple) else node


def node_sort_key(node: NodeId) -> tuple:
    """Deterministic node order: by time, observation leaf before hidden."""
    return (node_time(node), 1 - int(is_observation_node(node)))


def _readonly(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


def _renormalized_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    """Validate a row-stochastic matrix, rescaling rows within RENORM_ATOL."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ModelError(f"{what} must be a 2-d matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)) or np.any(matrix < 0):
        raise ValidationError(f"{what} must be finite and nonnegative")
    sums = matrix.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > RENORM_ATOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ValidationError(
            f"{what} rows must sum to 1 within {RENORM_ATOL:g} (drift {worst:g})"
        )
    return matrix / sums[:, None]


def _renormalized_vector(vec: np.ndarray, what: str) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.ndim != 1:
        raise ModelError(f"{what} must be a 1-d vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)) or np.any(vec < 0):
        raise ValidationError(f"{what} must be finite and nonnegative")
    total = vec.sum()
    if abs(total - 1.0) > RENORM_ATOL:
        raise ValidationError(
            f"{what} must sum to 1 within {RENORM_ATOL:g} (got {total!r})"
        )
    return vec / total


@dataclass(frozen=True)
class StateSpace:
    """Finite state set; states are the labels ``0 .. size-1``."""

    size: int

    def __post_init__(self):
        if not isinstance(self.size, (int, np.integer)) or self.size < 1:
            raise ModelError(f"state space size must be a positive int, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))


@dataclass(frozen=True, eq=False)
class EdgePotential:
    """Nonnegative pairwise factor.

    Every row and every column must contain a positive entry, so no state of
    either endpoint is ruled out by this factor alone.
    """

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ModelError(f"edge potential must be 2-d, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("edge potential entries must be finite and >= 0")
        if np.any(values.sum(axis=1) == 0):
            raise ValidationError("edge potential has an all-zero row")
        if np.any(values.sum(axis=0) == 0):
            raise ValidationError("edge potential has an all-zero column")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def shape(self) -> tuple:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class NodePotential:
    """Nonnegative unary factor with at least one positive entry."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ModelError(f"node potential must be 1-d, got shape {values.shape}")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValidationError("node potential entries must be finite and >= 0")
        if values.sum() == 0:
            raise ValidationError("node potential is identically zero")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def size(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class AggregateObservation:
    """Normalized histogram of a population of size ``population`` at one node.

    ``distribution`` stores counts divided by the population, so it sums to 1
    (exactly, after construction rescales drift up to 1e-9; larger drift is
    rejected).
    """

    distribution: np.ndarray
    population: int

    def __post_init__(self):
        if not isinstance(self.population, (int, np.integer)) or self.population < 1:
            raise ValidationError(
                f"population must be a positive int, got {self.population!r}"
            )
        dist = _renormalized_vector(self.distribution, "observed distribution")
        object.__setattr__(self, "distribution", _readonly(dist))
        object.__setattr__(self, "population", int(self.population))

    @property
    def size(self) -> int:
        return self.distribution.shape[0]

    @classmethod
    def dirac(cls, state: int, size: int, population: int) -> "AggregateObservation":
        """Point-mass observation: the whole population reports ``state``."""
        if not 0 <= state < size:
            raise ValidationError(f"state {state} outside 0..{size - 1}")
        dist = np.zeros(size)
        dist[state] = 1.0
        return cls(dist, population)


def normalize_counts(counts, population: int) -> AggregateObservation:
    """Turn raw integer counts into an :class:`AggregateObservation`.

    Parameters
    ----------
    counts : array_like
        Nonnegative integers, one per state, summing exactly to ``population``.
    population : int
        Number of individuals counted.

    Raises
    ------
    CountMismatchError
        If the counts do not sum to ``population``.
    ValidationError
        If counts are negative or non-integral.
    """
    arr = np.asarray(counts)
    if arr.ndim != 1:
        raise ValidationError(f"counts must be 1-d, got shape {arr.shape}")
    if not np.all(np.isfinite(arr.astype(np.float64))) or np.any(arr < 0):
        raise ValidationError("counts must be finite and nonnegative")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValidationError("counts must be integers")
    arr = arr.astype(np.int64)
    total = int(arr.sum())
    if total != int(population):
        raise CountMismatchError(
            f"counts sum to {total}, declared population is {population}"
        )
    return AggregateObservation(arr / float(population), int(population))


@dataclass(frozen=True, eq=False)
class ChainGraph:
    """A time-indexed chain of hidden nodes with optional observation leaves.

    The hidden nodes are the consecutive times ``first_time ..
    first_time+num_hidden-1``; ``transitions[t]`` is the potential on edge
    ``(t, t+1)`` (rows indexed by the state at ``t``), ``emissions[t]`` the
    potential on edge ``(t, obs(t))`` (rows indexed by the hidden state).
    ``observed`` lists the nodes whose marginals are pinned to aggregate
    observations.  The structure is a tree by construction.
    """

    first_time: int
    num_hidden: int
    hidden_space: StateSpace
    obs_space: StateSpace | None
    transitions: Mapping[int, EdgePotential]
    emissions: Mapping[int, EdgePotential]
    observed: frozenset = field(default_factory=frozenset)
    node_potentials: Mapping[NodeId, NodePotential] = field(default_factory=dict)

    def __post_init__(self):
        if self.num_hidden < 1:
            raise StructureError("a chain needs at least one hidden node")
        object.__setattr__(self, "first_time", int(self.first_time))
        object.__setattr__(self, "num_hidden", int(self.num_hidden))
        object.__setattr__(self, "transitions", dict(self.transitions))
        object.__setattr__(self, "emissions", dict(self.emissions))
        object.__setattr__(self, "observed", frozenset(self.observed))
        object.__setattr__(self, "node_potentials", dict(self.node_potentials))

        d = self.hidden_space.size
        times = set(self.times)
        if set(self.transitions) != {t for t in self.times if t != self.last_time}:
            raise StructureError("transitions must cover exactly the edges (t, t+1)")
        for t, pot in self.transitions.items():
            if pot.shape != (d, d):
                raise ModelError(
                    f"transition at {t} has shape {pot.shape}, expected {(d, d)}"
                )
        if self.emissions and self.obs_space is None:
            raise ModelError("emissions present but obs_space is None")
        for t, pot in self.emissions.items():
            if t not in times:
                raise StructureError(f"emission at time {t} has no hidden node")
            if pot.shape != (d, self.obs_space.size):
                raise ModelError(
                    f"emission at {t} has shape {pot.shape}, "
                    f"expected {(d, self.obs_space.size)}"
                )
        for node in self.observed:
            if not self.has_node(node):
                raise StructureError(f"observed node {node!r} is not in the graph")
        for node, pot in self.node_potentials.items():
            if not self.has_node(node):
                raise StructureError(f"node potential on missing node {node!r}")
            if pot.size != self.dim_of(node):
                raise ModelError(
                    f"node potential on {node!r} has size {pot.size}, "
                    f"expected {self.dim_of(node)}"
                )

    # -- structure ---------------------------------------------------------

    @property
    def times(self) -> range:
        return range(self.first_time, self.first_time + self.num_hidden)

    @property
    def last_time(self) -> int:
        return self.first_time + self.num_hidden - 1

    @property
    def leaf_times(self) -> tuple:
        return tuple(sorted(self.emissions))

    def nodes(self) -> list:
        out: list = list(self.times)
        out.extend(obs(t) for t in self.leaf_times)
        return out

    def edges(self) -> list:
        """Canonical edge list: ``(t, t+1)`` then ``(t, obs(t))``."""
        out = [(t, t + 1) for t in sorted(self.transitions)]
        out.extend((t, obs(t)) for t in self.leaf_times)
        return out

    def has_node(self, node: NodeId) -> bool:
        if is_observation_node(node):
            return len(node) == 2 and node[0] == "obs" and node[1] in self.emissions
        return node in self.times

    def neighbors(self, node: NodeId) -> tuple:
        if not self.has_node(node):
            raise StructureError(f"node {node!r} is not in the graph")
        if is_observation_node(node):
            return (node[1],)
        out = []
        if node - 1 in self.transitions:
            out.append(node - 1)
        if node in self.transitions:
            out.append(node + 1)
        if node in self.emissions:
            out.append(obs(node))
        return tuple(out)

    def degree(self, node: NodeId) -> int:
        return len(self.neighbors(node))

    def dim_of(self, node: NodeId) -> int:
        if is_observation_node(node):
            if self.obs_space is None:
                raise StructureError("graph has no observation space")
            return self.obs_space.size
        return self.hidden_space.size

    def potential(self, i: NodeId, j: NodeId) -> np.ndarray:
        """Edge potential oriented with rows indexed by ``i``'s states."""
        if is_observation_node(j) and not is_observation_node(i):
            if j[1] == i and i in self.emissions:
                return self.emissions[i].values
        elif is_observation_node(i) and not is_observation_node(j):
            if i[1] == j and j in self.emissions:
                return self.emissions[j].values.T
        elif not is_observation_node(i):
            if j == i + 1 and i in self.transitions:
                return self.transitions[i].values
            if j == i - 1 and j in self.transitions:
                return self.transitions[j].values.T
        raise StructureError(f"no edge between {i!r} and {j!r}")

    def validate_tree(self) -> None:
        """Check the node/edge counts match a connected tree (they do by
        construction; exposed so tests can assert it directly)."""
        n_nodes = len(self.nodes())
        n_edges = len(self.edges())
        if n_edges != n_nodes - 1:
            raise StructureError(
                f"{n_nodes} nodes with {n_edges} edges cannot be a tree"
            )


def build_hmm_chain(
    prior,
    transition,
    observation,
    horizon: int,
) -> ChainGraph:
    """Unroll an HMM into a :class:`ChainGraph` of length ``horizon``.

    Hidden nodes are ``1 .. horizon``; every hidden node gets an observation
    leaf, and all leaves are marked observed.  The prior over the initial
    state is attached as a node potential on node 1.

    Parameters
    ----------
    prior : array_like, shape (d,)
        Initial state distribution.
    transition : array_like, shape (d, d)
        Row-stochastic; ``transition[x, x']`` is P(next=x' | current=x).
    observation : array_like, shape (d, d_obs)
        Row-stochastic; ``observation[x, o]`` is P(symbol=o | state=x).
    horizon : int
        Number of time steps (>= 1).
    """
    if horizon < 1:
        raise StructureError(f"horizon must be >= 1, got {horizon}")
    transition = _renormalized_rows(transition, "transition matrix")
    observation = _renormalized_rows(observation, "observation matrix")
    prior = _renormalized_vector(prior, "prior")
    d = transition.shape[0]
    if transition.shape != (d, d):
        raise ModelError(f"transition must be square, got {transition.shape}")
    if observation.shape[0] != d:
        raise ModelError(
            f"observation has {observation.shape[0]} rows, transition has {d} states"
        )
    if prior.shape != (d,):
        raise ModelError(f"prior has size {prior.shape[0]}, expected {d}")

    trans_pot = EdgePotential(transition)
    emit_pot = EdgePotential(observation)
    return ChainGraph(
        first_time=1,
        num_hidden=horizon,
        hidden_space=StateSpace(d),
        obs_space=StateSpace(observation.shape[1]),
        transitions={t: trans_pot for t in range(1, horizon)},
        emissions={t: emit_pot for t in range(1, horizon + 1)},
        observed=frozenset(obs(t) for t in range(1, horizon + 1)),
        node_potentials={1: NodePotential(prior)},
    )


def _absorption_target(graph: ChainGraph, node: NodeId) -> tuple:
    """Pick the edge a node potential folds into.

    Preference order: the edge toward the larger time index ``(t, t+1)``,
    then the node's observation leaf edge, then ``(t-1, t)``.  For a leaf the
    unique incident edge is used.
    """
    if is_observation_node(node):
        return (node[1], node)
    t = node
    if t in graph.transitions:
        return (t, t + 1)
    if t in graph.emissions:
        return (t, obs(t))
    if t - 1 in graph.transitions:
        return (t - 1, t)
    raise StructureError(f"node {node!r} has no incident edge to absorb into")


def absorb_node_potential(graph: ChainGraph, node: NodeId) -> ChainGraph:
    """Fold the node potential at ``node`` into an incident edge.

    Returns a new graph whose joint factorization is unchanged: the chosen
    edge potential is multiplied along the ``node`` axis and the node's
    potential is removed (equivalent to resetting it to all ones).  The edge
    is chosen deterministically, see :func:`_absorption_target`.
    """
    pot = graph.node_potentials.get(node)
    if pot is None:
        raise ValidationError(f"node {node!r} carries no potential")
    i, j = _absorption_target(graph, node)

    transitions = dict(graph.transitions)
    emissions = dict(graph.emissions)
    if is_observation_node(j):
        base = emissions[i].values
        scaled = base * (pot.values[:, None] if node == i else pot.values[None, :])
        emissions[i] = EdgePotential(scaled)
    else:
        base = transitions[i].values
        scaled = base * (pot.values[:, None] if node == i else pot.values[None, :])
        transitions[i] = EdgePotential(scaled)

    potentials = dict(graph.node_potentials)
    del potentials[node]
    return ChainGraph(
        first_time=graph.first_time,
        num_hidden=graph.num_hidden,
        hidden_space=graph.hidden_space,
        obs_space=graph.obs_space,
        transitions=transitions,
        emissions=emissions,
        observed=graph.observed,
        node_potentials=potentials,
    )


def folded_edge_tables(graph: ChainGraph) -> dict:
    """Edge tables with every node potential multiplied in.

    Returns plain arrays keyed by canonical edges, using the same
    deterministic edge choice as :func:`absorb_node_potential` but without
    re-validating the scaled tables, so point-mass potentials (which zero
    out rows) are tolerated.  This is the factorization inference runs on.
    """
    tables = {}
    for t in sorted(graph.transitions):
        tables[(t, t + 1)] = graph.transitions[t].values.copy()
    for t in graph.leaf_times:
        tables[(t, obs(t))] = graph.emissions[t].values.copy()
    for node in sorted(graph.node_potentials, key=node_sort_key):
        values = graph.node_potentials[node].values
        if is_observation_node(node):
            tables[(node[1], node)] *= values[None, :]
            continue
        if (node, node + 1) in tables:
            tables[(node, node + 1)] *= values[:, None]
        elif (node, obs(node)) in tables:
            tables[(node, obs(node))] *= values[:, None]
        elif (node - 1, node) in tables:
            tables[(node - 1, node)] *= values[None, :]
        else:
            raise StructureError(
                f"node potential on {node!r} has no incident edge to fold into"
            )
    return tables


@dataclass(frozen=True, eq=False)
class HmmModel:
    """Validated HMM parameters, reusable across chain lengths."""

    prior: np.ndarray
    transition: np.ndarray
    observation: np.ndarray

    def __post_init__(self):
        transition = _renormalized_rows(self.transition, "transition matrix")
        observation = _renormalized_rows(self.observation, "observation matrix")
        prior = _renormalized_vector(self.prior, "prior")
        d = transition.shape[0]
        if observation.shape[0] != d or prior.shape[0] != d:
            raise ModelError("prior, transition and observation disagree on d")
        object.__setattr__(self, "prior", _readonly(prior))
        object.__setattr__(self, "transition", _readonly(transition))
        object.__setattr__(self, "observation", _readonly(observation))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_symbols(self) -> int:
        return self.observation.shape[1]

    def chain(self, horizon: int) -> ChainGraph:
        return build_hmm_chain(self.prior, self.transition, self.observation, horizon)
