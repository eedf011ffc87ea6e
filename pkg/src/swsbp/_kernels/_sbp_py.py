"""Numpy execution backend; semantics mirror the compiled kernel exactly."""

from __future__ import annotations

import numpy as np

from ..errors import DegeneracyError, SupportViolationError
from .plan import OP_BWD, OP_BWD9B, OP_DOWN, OP_DOWN9B, OP_FWD, OP_FWD9B, OP_UP9B

_OP_NAMES = {
    OP_FWD: "forward",
    OP_BWD: "backward",
    OP_DOWN: "to-leaf",
    OP_UP9B: "scaled from-leaf",
    OP_FWD9B: "scaled forward",
    OP_BWD9B: "scaled backward",
    OP_DOWN9B: "scaled to-leaf",
}


def _scaled(y, incoming, what):
    if np.any((y > 0) & (incoming == 0)):
        raise SupportViolationError(
            f"{what}: observation needs mass where the incoming message is zero"
        )
    return np.divide(y, incoming, out=np.zeros_like(y), where=y > 0)


def _in_fwd(plan, k):
    return plan.fwd[k - 1] if k > 0 else None


def _in_bwd(plan, k):
    return plan.bwd[k] if k < plan.n - 1 else None


def _product(*factors):
    out = None
    for f in factors:
        if f is None:
            continue
        out = f.copy() if out is None else out * f
    return out


def _apply(plan, op, k):
    """Run one message update; returns the max-abs change of that message."""
    what = f"{_OP_NAMES[op]} update at window index {k}"
    if op == OP_FWD:
        vec = _product(_in_fwd(plan, k), plan.up[k])
        out = plan.trans[k].T @ vec if vec is not None else plan.trans[k].sum(axis=0)
        target = plan.fwd[k]
    elif op == OP_BWD:
        vec = _product(_in_bwd(plan, k + 1), plan.up[k + 1])
        out = plan.trans[k] @ vec if vec is not None else plan.trans[k].sum(axis=1)
        target = plan.bwd[k]
    elif op == OP_DOWN:
        vec = _product(_in_fwd(plan, k), _in_bwd(plan, k))
        out = plan.emis[k].T @ vec if vec is not None else plan.emis[k].sum(axis=0)
        target = plan.down[k]
    elif op == OP_UP9B:
        out = plan.emis[k] @ _scaled(plan.y_leaf[k], plan.down[k], what)
        target = plan.up[k]
    elif op == OP_FWD9B:
        out = plan.trans[k].T @ _scaled(plan.y_hid[k], _in_bwd(plan, k), what)
        target = plan.fwd[k]
    elif op == OP_BWD9B:
        out = plan.trans[k] @ _scaled(plan.y_hid[k + 1], _in_fwd(plan, k + 1), what)
        target = plan.bwd[k]
    elif op == OP_DOWN9B:
        out = plan.emis[k].T @ _scaled(plan.y_hid[k], plan.up[k], what)
        target = plan.down[k]
    else:  # pragma: no cover
        raise AssertionError(f"unknown opcode {op}")

    total = out.sum()
    if not np.isfinite(total) or total <= 0:
        raise DegeneracyError(f"{what}: message update normalizes to {total!r}")
    out /= total
    delta = float(np.max(np.abs(out - target)))
    target[:] = out
    return delta


def _run(plan, ops):
    worst = 0.0
    for op, k in ops:
        worst = max(worst, _apply(plan, int(op), int(k)))
    return worst


def execute(plan, tolerance, max_sweeps):
    """Run the plan to convergence.

    Returns ``(sweeps, residual, converged)`` where ``residual`` is the
    largest message change seen in the last convergence cycle.
    """
    _run(plan, plan.init_ops)
    sweeps = 0
    residual = 0.0
    converged = plan.sweep_ops.shape[0] == 0
    while not converged and sweeps < max_sweeps:
        residual = _run(plan, plan.sweep_ops)
        sweeps += 1
        if residual <= tolerance:
            converged = True
    _run(plan, plan.final_ops)
    return sweeps, residual, converged
