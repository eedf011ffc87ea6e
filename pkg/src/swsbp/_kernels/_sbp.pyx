# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled execution backend; semantics mirror the numpy kernel exactly.

Message updates run without the GIL and push every matrix-vector product
through BLAS dgemv.  Plan buffers are C-ordered, so a table seen by Fortran
is its own transpose: the "N" path computes table.T @ x and the "T" path
computes table @ x.
"""

from libc.math cimport isfinite

from scipy.linalg.cython_blas cimport dgemv

from ..errors import DegeneracyError, SupportViolationError
from . import plan as _plan

cdef enum:
    OP_FWD = 0
    OP_BWD = 1
    OP_DOWN = 2
    OP_UP9B = 3
    OP_FWD9B = 4
    OP_BWD9B = 5
    OP_DOWN9B = 6

# refuse to run against a plan module with renumbered opcodes
for _name, _value in (
    ("OP_FWD", OP_FWD),
    ("OP_BWD", OP_BWD),
    ("OP_DOWN", OP_DOWN),
    ("OP_UP9B", OP_UP9B),
    ("OP_FWD9B", OP_FWD9B),
    ("OP_BWD9B", OP_BWD9B),
    ("OP_DOWN9B", OP_DOWN9B),
):
    if getattr(_plan, _name) != _value:
        raise ImportError(f"opcode mismatch for {_name}")

OP_NAMES = {
    OP_FWD: "forward",
    OP_BWD: "backward",
    OP_DOWN: "to-leaf",
    OP_UP9B: "scaled from-leaf",
    OP_FWD9B: "scaled forward",
    OP_BWD9B: "scaled backward",
    OP_DOWN9B: "scaled to-leaf",
}

# status codes reported out of the nogil region
cdef enum:
    ST_OK = 0
    ST_SUPPORT = 1
    ST_DEGENERATE = 2
    ST_BAD_OPCODE = 3


cdef inline void _matvec_t(const double* a, int rows, int cols,
                           const double* x, double* y) noexcept nogil:
    """y (len cols) = table.T @ x for a row-major (rows, cols) table."""
    cdef int m = cols, n = rows, lda = cols, inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef char flag = c'N'
    dgemv(&flag, &m, &n, &one, <double*> a, &lda, <double*> x, &inc,
          &zero, y, &inc)


cdef inline void _matvec(const double* a, int rows, int cols,
                         const double* x, double* y) noexcept nogil:
    """y (len rows) = table @ x for a row-major (rows, cols) table."""
    cdef int m = cols, n = rows, lda = cols, inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef char flag = c'T'
    dgemv(&flag, &m, &n, &one, <double*> a, &lda, <double*> x, &inc,
          &zero, y, &inc)


cdef double _apply(int op, int k, int n, int d, int d_obs,
                   double[:, :, ::1] trans, double[:, :, ::1] emis,
                   double[:, ::1] y_leaf, double[:, ::1] y_hid,
                   double[:, ::1] fwd, double[:, ::1] bwd,
                   double[:, ::1] up, double[:, ::1] down,
                   double* vec, double* out,
                   int* status, double* err_total) noexcept nogil:
    """One message update; returns the max-abs change of that message.

    Absent incoming factors (chain boundary) count as ones; pinned factors
    are observation / incoming with 0/anything treated as 0.
    """
    cdef int i, out_len
    cdef double y, inc, total, delta, diff
    cdef double* target

    if op == OP_FWD:
        for i in range(d):
            vec[i] = up[k, i] * (fwd[k - 1, i] if k > 0 else 1.0)
        _matvec_t(&trans[k, 0, 0], d, d, vec, out)
        target = &fwd[k, 0]
        out_len = d
    elif op == OP_BWD:
        for i in range(d):
            vec[i] = up[k + 1, i] * (bwd[k + 1, i] if k + 1 < n - 1 else 1.0)
        _matvec(&trans[k, 0, 0], d, d, vec, out)
        target = &bwd[k, 0]
        out_len = d
    elif op == OP_DOWN:
        for i in range(d):
            vec[i] = ((fwd[k - 1, i] if k > 0 else 1.0)
                      * (bwd[k, i] if k < n - 1 else 1.0))
        _matvec_t(&emis[k, 0, 0], d, d_obs, vec, out)
        target = &down[k, 0]
        out_len = d_obs
    elif op == OP_UP9B:
        for i in range(d_obs):
            y = y_leaf[k, i]
            if y > 0.0:
                inc = down[k, i]
                if inc == 0.0:
                    status[0] = ST_SUPPORT
                    return 0.0
                vec[i] = y / inc
            else:
                vec[i] = 0.0
        _matvec(&emis[k, 0, 0], d, d_obs, vec, out)
        target = &up[k, 0]
        out_len = d
    elif op == OP_FWD9B:
        for i in range(d):
            y = y_hid[k, i]
            if y > 0.0:
                inc = bwd[k, i] if k < n - 1 else 1.0
                if inc == 0.0:
                    status[0] = ST_SUPPORT
                    return 0.0
                vec[i] = y / inc
            else:
                vec[i] = 0.0
        _matvec_t(&trans[k, 0, 0], d, d, vec, out)
        target = &fwd[k, 0]
        out_len = d
    elif op == OP_BWD9B:
        for i in range(d):
            y = y_hid[k + 1, i]
            if y > 0.0:
                inc = fwd[k, i]
                if inc == 0.0:
                    status[0] = ST_SUPPORT
                    return 0.0
                vec[i] = y / inc
            else:
                vec[i] = 0.0
        _matvec(&trans[k, 0, 0], d, d, vec, out)
        target = &bwd[k, 0]
        out_len = d
    elif op == OP_DOWN9B:
        for i in range(d):
            y = y_hid[k, i]
            if y > 0.0:
                inc = up[k, i]
                if inc == 0.0:
                    status[0] = ST_SUPPORT
                    return 0.0
                vec[i] = y / inc
            else:
                vec[i] = 0.0
        _matvec_t(&emis[k, 0, 0], d, d_obs, vec, out)
        target = &down[k, 0]
        out_len = d_obs
    else:
        status[0] = ST_BAD_OPCODE
        return 0.0

    total = 0.0
    for i in range(out_len):
        total += out[i]
    if not isfinite(total) or total <= 0.0:
        status[0] = ST_DEGENERATE
        err_total[0] = total
        return 0.0
    delta = 0.0
    for i in range(out_len):
        out[i] /= total
        diff = out[i] - target[i]
        if diff < 0.0:
            diff = -diff
        if diff > delta:
            delta = diff
        target[i] = out[i]
    return delta


cdef int _run_ops(int[:, ::1] ops, int n, int d, int d_obs,
                  double[:, :, ::1] trans, double[:, :, ::1] emis,
                  double[:, ::1] y_leaf, double[:, ::1] y_hid,
                  double[:, ::1] fwd, double[:, ::1] bwd,
                  double[:, ::1] up, double[:, ::1] down,
                  double* vec, double* out, double* worst,
                  int* err_op, int* err_k, double* err_total) noexcept nogil:
    cdef Py_ssize_t idx
    cdef int op, k, status = ST_OK
    cdef double w = 0.0, delta
    for idx in range(ops.shape[0]):
        op = ops[idx, 0]
        k = ops[idx, 1]
        delta = _apply(op, k, n, d, d_obs, trans, emis, y_leaf, y_hid,
                       fwd, bwd, up, down, vec, out, &status, err_total)
        if status != ST_OK:
            err_op[0] = op
            err_k[0] = k
            return status
        if delta > w:
            w = delta
    worst[0] = w
    return ST_OK


def execute(plan, double tolerance, long max_sweeps):
    """Run the plan to convergence.

    Returns ``(sweeps, residual, converged)`` where ``residual`` is the
    largest message change seen in the last convergence cycle.
    """
    import numpy as np

    cdef double[:, :, ::1] trans = plan.trans
    cdef double[:, :, ::1] emis = plan.emis
    cdef double[:, ::1] y_leaf = plan.y_leaf
    cdef double[:, ::1] y_hid = plan.y_hid
    cdef double[:, ::1] fwd = plan.fwd
    cdef double[:, ::1] bwd = plan.bwd
    cdef double[:, ::1] up = plan.up
    cdef double[:, ::1] down = plan.down
    cdef int[:, ::1] init_ops = plan.init_ops
    cdef int[:, ::1] sweep_ops = plan.sweep_ops
    cdef int[:, ::1] final_ops = plan.final_ops

    cdef int n = plan.n
    cdef int d = plan.d
    cdef int d_obs = plan.d_obs
    cdef int width = d if d > d_obs else d_obs
    cdef double[::1] scratch = np.empty(2 * width, dtype=np.float64)
    cdef double* vec = &scratch[0]
    cdef double* out = &scratch[width]

    cdef long sweeps = 0
    cdef double residual = 0.0
    cdef double discard = 0.0
    cdef bint converged = sweep_ops.shape[0] == 0
    cdef int status = ST_OK
    cdef int err_op = -1, err_k = -1
    cdef double err_total = 0.0

    with nogil:
        status = _run_ops(init_ops, n, d, d_obs, trans, emis, y_leaf, y_hid,
                          fwd, bwd, up, down, vec, out, &discard,
                          &err_op, &err_k, &err_total)
        while status == ST_OK and not converged and sweeps < max_sweeps:
            status = _run_ops(sweep_ops, n, d, d_obs, trans, emis,
                              y_leaf, y_hid, fwd, bwd, up, down, vec, out,
                              &residual, &err_op, &err_k, &err_total)
            if status != ST_OK:
                break
            sweeps += 1
            if residual <= tolerance:
                converged = True
        if status == ST_OK:
            status = _run_ops(final_ops, n, d, d_obs, trans, emis,
                              y_leaf, y_hid, fwd, bwd, up, down, vec, out,
                              &discard, &err_op, &err_k, &err_total)

    if status == ST_SUPPORT:
        raise SupportViolationError(
            f"{OP_NAMES[err_op]} update at window index {err_k}: "
            "observation needs mass where the incoming message is zero"
        )
    if status == ST_DEGENERATE:
        raise DegeneracyError(
            f"{OP_NAMES[err_op]} update at window index {err_k}: "
            f"message update normalizes to {err_total!r}"
        )
    if status == ST_BAD_OPCODE:
        raise AssertionError(f"unknown opcode {err_op}")
    return int(sweeps), float(residual), bool(converged)
