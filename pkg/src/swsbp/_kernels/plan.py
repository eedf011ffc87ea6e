"""Packed representation of a chain problem plus its update schedule.

A :class:`ChainPlan` flattens a :class:`~swsbp.chain.ChainGraph` with its
observations into contiguous arrays and compiles three opcode lists that the
execution backends (compiled or numpy) run verbatim:

``init_ops``
    One pass over every message: left-to-right rightward/upward messages,
    right-to-left leftward messages, then messages into the leaves.
``sweep_ops``
    One full cycle over the constrained nodes in (time, leaf-first) order.
    Each constrained node first re-emits its scaled messages, then the
    ordinary updates along the path to the next constrained node (cyclically,
    so the wrap-around is the backward pass).  Convergence is measured as the
    largest message change over one such cycle.
``final_ops``
    Recomputes the messages the sweep never touches (e.g. messages flowing
    outward past the last constrained node) so marginals are read from a
    consistent state.

Message slots, for hidden index ``k`` (0-based within the window):

- ``fwd[k]``: hidden k -> hidden k+1
- ``bwd[k]``: hidden k+1 -> hidden k
- ``up[k]``: leaf -> hidden k (all-ones when the node has no leaf; a packed
  constant when the leaf is unobserved)
- ``down[k]``: hidden k -> leaf
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..chain import ChainGraph, folded_edge_tables, is_observation_node, obs
from ..errors import ValidationError

OP_FWD = 0      # fwd[k] <- trans[k]^T (fwd[k-1] * up[k])
OP_BWD = 1      # bwd[k] <- trans[k]   (bwd[k+1] * up[k+1])
OP_DOWN = 2     # down[k] <- emis[k]^T (fwd[k-1] * bwd[k])
OP_UP9B = 3     # up[k] <- emis[k]   (y_leaf[k] / down[k])
OP_FWD9B = 4    # fwd[k] <- trans[k]^T (y_hid[k] / bwd[k])
OP_BWD9B = 5    # bwd[k] <- trans[k]   (y_hid[k+1] / fwd[k])
OP_DOWN9B = 6   # down[k] <- emis[k]^T (y_hid[k] / up[k])

_LEAF = 0
_HID = 1


@dataclass(eq=False)
class ChainPlan:
    first_time: int
    n: int
    d: int
    d_obs: int
    trans: np.ndarray
    emis: np.ndarray
    has_leaf: np.ndarray
    leaf_obs: np.ndarray
    hid_obs: np.ndarray
    y_leaf: np.ndarray
    y_hid: np.ndarray
    fwd: np.ndarray
    bwd: np.ndarray
    up: np.ndarray
    down: np.ndarray
    init_ops: np.ndarray
    sweep_ops: np.ndarray
    final_ops: np.ndarray

    @property
    def updates_per_sweep(self) -> int:
        """Message updates per convergence cycle; depends only on the window
        layout, never on absolute time."""
        return int(self.sweep_ops.shape[0])

    @classmethod
    def build(cls, graph: ChainGraph, observations, warm_start=None) -> "ChainPlan":
        n = graph.num_hidden
        d = graph.hidden_space.size
        d_obs = graph.obs_space.size if graph.obs_space is not None else 1
        first = graph.first_time

        tables = folded_edge_tables(graph)
        trans = np.empty((max(n - 1, 0), d, d))
        for k in range(n - 1):
            trans[k] = tables[(first + k, first + k + 1)]
        emis = np.zeros((n, d, d_obs))
        has_leaf = np.zeros(n, dtype=np.uint8)
        for t in graph.leaf_times:
            emis[t - first] = tables[(t, obs(t))]
            has_leaf[t - first] = 1

        leaf_obs = np.zeros(n, dtype=np.uint8)
        hid_obs = np.zeros(n, dtype=np.uint8)
        y_leaf = np.zeros((n, d_obs))
        y_hid = np.zeros((n, d))
        for node in graph.observed:
            y = observations[node].distribution
            if y.shape[0] != graph.dim_of(node):
                raise ValidationError(
                    f"observation at {node!r} has length {y.shape[0]}, "
                    f"expected {graph.dim_of(node)}"
                )
            k = (node[1] if is_observation_node(node) else node) - first
            if is_observation_node(node):
                leaf_obs[k] = 1
                y_leaf[k] = y
            else:
                hid_obs[k] = 1
                y_hid[k] = y

        fwd = np.full((max(n - 1, 0), d), 1.0 / d)
        bwd = np.full((max(n - 1, 0), d), 1.0 / d)
        up = np.ones((n, d))
        down = np.full((n, d_obs), 1.0 / d_obs)
        for k in range(n):
            if has_leaf[k] and not leaf_obs[k]:
                # an unobserved leaf always sends the same message
                row = emis[k].sum(axis=1)
                up[k] = row / row.sum()
            elif leaf_obs[k]:
                up[k] = 1.0 / d

        if warm_start:
            for k in range(n - 1):
                t = first + k
                for key, target in (((t, t + 1), fwd[k]), ((t + 1, t), bwd[k])):
                    if key in warm_start:
                        vec = np.asarray(warm_start[key], dtype=np.float64)
                        target[:] = vec / vec.sum()
            for k in range(n):
                t = first + k
                if not has_leaf[k]:
                    continue
                if leaf_obs[k] and (obs(t), t) in warm_start:
                    vec = np.asarray(warm_start[(obs(t), t)], dtype=np.float64)
                    up[k] = vec / vec.sum()
                if (t, obs(t)) in warm_start:
                    vec = np.asarray(warm_start[(t, obs(t))], dtype=np.float64)
                    down[k] = vec / vec.sum()

        init_ops, sweep_ops, final_ops = _schedules(n, has_leaf, leaf_obs, hid_obs)
        return cls(
            first_time=first,
            n=n,
            d=d,
            d_obs=d_obs,
            trans=trans,
            emis=emis,
            has_leaf=has_leaf,
            leaf_obs=leaf_obs,
            hid_obs=hid_obs,
            y_leaf=y_leaf,
            y_hid=y_hid,
            fwd=fwd,
            bwd=bwd,
            up=up,
            down=down,
            init_ops=init_ops,
            sweep_ops=sweep_ops,
            final_ops=final_ops,
        )

    def export_store(self) -> dict:
        """Message store keyed by directed node pairs of the source graph."""
        first = self.first_time
        store = {}
        for k in range(self.n - 1):
            t = first + k
            store[(t, t + 1)] = self.fwd[k].copy()
            store[(t + 1, t)] = self.bwd[k].copy()
        for k in range(self.n):
            if self.has_leaf[k]:
                t = first + k
                store[(obs(t), t)] = self.up[k].copy()
                store[(t, obs(t))] = self.down[k].copy()
        return store


def _schedules(n, has_leaf, leaf_obs, hid_obs):
    init = []
    for k in range(n):
        if leaf_obs[k]:
            init.append((OP_UP9B, k))
        if k < n - 1:
            init.append((OP_FWD9B if hid_obs[k] else OP_FWD, k))
    for k in range(n - 1, 0, -1):
        init.append((OP_BWD9B if hid_obs[k] else OP_BWD, k - 1))
    for k in range(n):
        if has_leaf[k]:
            init.append((OP_DOWN9B if hid_obs[k] else OP_DOWN, k))

    constrained = []
    for k in range(n):
        if leaf_obs[k]:
            constrained.append((_LEAF, k))
        if hid_obs[k]:
            constrained.append((_HID, k))

    sweep = []
    count = len(constrained)
    for idx, (kind, k) in enumerate(constrained):
        # scaled messages out of the constrained node
        if kind == _LEAF:
            sweep.append((OP_UP9B, k))
        else:
            if k < n - 1:
                sweep.append((OP_FWD9B, k))
            if k > 0:
                sweep.append((OP_BWD9B, k - 1))
            if has_leaf[k]:
                sweep.append((OP_DOWN9B, k))
        if count == 1:
            break
        # updates along the path to the next constrained node; hops leaving
        # a constrained hidden node must use the scaled rule
        nkind, nk = constrained[(idx + 1) % count]
        if nk > k:
            start = k + 1 if kind == _HID else k
            for j in range(start, nk):
                sweep.append((OP_FWD9B, j) if hid_obs[j] else (OP_FWD, j))
            if nkind == _LEAF and not hid_obs[nk]:
                sweep.append((OP_DOWN, nk))
        elif nk < k:
            start = k - 2 if kind == _HID else k - 1
            for j in range(start, nk - 1, -1):
                sweep.append((OP_BWD9B, j) if hid_obs[j + 1] else (OP_BWD, j))
            if nkind == _LEAF and not hid_obs[nk]:
                sweep.append((OP_DOWN, nk))
        # nk == k: the connecting edge was already covered by scaled updates

    covered_fwd = {a for op, a in sweep if op in (OP_FWD, OP_FWD9B)}
    covered_bwd = {a for op, a in sweep if op in (OP_BWD, OP_BWD9B)}
    covered_down = {a for op, a in sweep if op in (OP_DOWN, OP_DOWN9B)}
    final = []
    for k in range(n - 1):
        if k not in covered_fwd:
            final.append((OP_FWD, k))
    for k in range(n - 2, -1, -1):
        if k not in covered_bwd:
            final.append((OP_BWD, k))
    for k in range(n):
        if has_leaf[k] and k not in covered_down:
            final.append((OP_DOWN, k))

    def pack(ops):
        if not ops:
            return np.zeros((0, 2), dtype=np.int32)
        return np.array(ops, dtype=np.int32)

    return pack(init), pack(sweep), pack(final)
