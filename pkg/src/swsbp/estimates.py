"""Marginal-estimate container shared by the solver and the brute-force oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import StructureError, ValidationError

#: node marginals must sum to 1 within this
NODE_SUM_ATOL = 1e-10
#: edge marginals must agree with node marginals within this
CONSISTENCY_ATOL = 1e-8


@dataclass(frozen=True, eq=False)
class MarginalEstimate:
    """Per-node and per-edge marginal distributions.

    ``nodes`` maps a node id to a length-d distribution, ``edges`` maps a
    canonically oriented pair ``(i, j)`` to a |X_i| x |X_j| joint table.
    """

    nodes: Mapping
    edges: Mapping

    def __post_init__(self):
        nodes = {}
        for key, value in dict(self.nodes).items():
            arr = np.array(value, dtype=np.float64)
            if arr.ndim != 1:
                raise ValidationError(f"node marginal {key!r} must be 1-d")
            if abs(arr.sum() - 1.0) > NODE_SUM_ATOL:
                raise ValidationError(
                    f"node marginal {key!r} sums to {arr.sum()!r}, not 1"
                )
            arr.flags.writeable = False
            nodes[key] = arr
        edges = {}
        for key, value in dict(self.edges).items():
            arr = np.array(value, dtype=np.float64)
            if arr.ndim != 2:
                raise ValidationError(f"edge marginal {key!r} must be 2-d")
            arr.flags.writeable = False
            edges[key] = arr
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)

    def node(self, i) -> np.ndarray:
        try:
            return self.nodes[i]
        except KeyError:
            raise StructureError(f"no marginal stored for node {i!r}") from None

    def edge(self, i, j) -> np.ndarray:
        """Edge marginal oriented with rows indexed by ``i``'s states."""
        if (i, j) in self.edges:
            return self.edges[(i, j)]
        if (j, i) in self.edges:
            return self.edges[(j, i)].T
        raise StructureError(f"no marginal stored for edge ({i!r}, {j!r})")

    def max_consistency_gap(self) -> float:
        """Largest deviation between an edge marginal's row/column sums and
        the corresponding node marginals (max-norm over all edges)."""
        worst = 0.0
        for (i, j), table in self.edges.items():
            worst = max(worst, float(np.max(np.abs(table.sum(axis=1) - self.node(i)))))
            worst = max(worst, float(np.max(np.abs(table.sum(axis=0) - self.node(j)))))
        return worst
