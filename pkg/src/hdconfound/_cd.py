"""Coordinate descent for quadratic-plus-l1 problems in Gram form.

The kernel minimises ``x'Ax/2 - b'x`` plus a weighted l1 term; a zero entry
in ``pen`` leaves that coordinate unpenalised (exact coordinate
minimisation). Arrays are updated in place. The driver ``solve_gram``
interleaves bounded runs of sweeps with active-set Newton steps, which fixes
the slow tail of coordinate descent on ill-conditioned designs.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _soft(z, t):
    if z > t:
        return z - t
    if z < -t:
        return z + t
    return 0.0


@numba.njit(cache=True, fastmath=True)
def cd_gram(a, b, x, grad, pen, tol, max_sweeps):
    """Minimise ``x'Ax/2 - b'x + sum_j pen_j |x_j|`` given ``grad = A x - b``.

    ``a`` must be symmetric; rows are read in place of columns.
    """
    m = a.shape[0]
    active = np.zeros(m, dtype=np.bool_)
    sweeps = 0
    full = True
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for j in range(m):
            if not full and not active[j]:
                continue
            ajj = a[j, j]
            if ajj <= 0.0:
                if x[j] != 0.0 and pen[j] > 0.0:
                    delta = -x[j]
                    x[j] = 0.0
                    for k in range(m):
                        grad[k] += a[j, k] * delta
                continue
            old = x[j]
            new = _soft(old * ajj - grad[j], pen[j]) / ajj
            delta = new - old
            if delta != 0.0:
                x[j] = new
                for k in range(m):
                    grad[k] += a[j, k] * delta
                ad = abs(delta)
                if ad > max_delta:
                    max_delta = ad
            active[j] = new != 0.0 or pen[j] == 0.0
        if max_delta < tol:
            if full:
                return sweeps, True
            full = True
        else:
            full = False
    return sweeps, False


def _newton_target(x, s_mask, step_s, pen):
    """Move from ``x`` toward ``x + step`` on the support, stopping at the first sign change.

    Returns the new point and whether the full step was taken.
    """
    xs = x[s_mask]
    target = xs + step_s
    penalised = pen[s_mask] > 0
    flips = penalised & (np.sign(target) != np.sign(xs))
    new = x.copy()
    if not flips.any():
        new[s_mask] = target
        return new, True
    ratios = xs[flips] / (xs[flips] - target[flips])
    t = float(np.min(ratios))
    moved = xs + t * step_s
    hit = np.flatnonzero(flips)[np.argmin(ratios)]
    moved[hit] = 0.0
    new[s_mask] = moved
    return new, False


def _support(x, pen):
    return (x != 0) | (pen == 0)


def _polish_gram_once(a, b, x, grad, pen):
    """One active-set Newton step on the current support.

    Returns 1 when the result is optimal, 0 after a full step that leaves a
    KKT violation off the support, -1 after stopping at a sign change, and
    None when the step was rejected.
    """
    s_mask = _support(x, pen)
    if not s_mask.any():
        return None
    sign = np.sign(x[s_mask])
    rhs = -(grad[s_mask] + pen[s_mask] * sign)
    try:
        step = np.linalg.solve(a[np.ix_(s_mask, s_mask)], rhs)
    except np.linalg.LinAlgError:
        return None
    new, full = _newton_target(x, s_mask, step, pen)
    new_grad = a @ new - b
    # objective change from x to new, exact for a quadratic
    delta = new - x
    change = 0.5 * delta @ (grad + new_grad) + pen @ (np.abs(new) - np.abs(x))
    if not change <= 1e-14:
        return None
    x[:] = new
    grad[:] = new_grad
    if not full:
        return -1
    off = ~s_mask
    return int(np.all(np.abs(grad[off]) <= pen[off] * (1 + 1e-12)))


def _polish_gram(a, b, x, grad, pen, max_drops=10):
    """Active-set Newton steps, dropping one coordinate per sign change."""
    for _ in range(max_drops):
        status = _polish_gram_once(a, b, x, grad, pen)
        if status != -1:
            return status == 1
    return False


def solve_gram(a, b, x, grad, pen, tol, max_sweeps, polish_every=25):
    """Coordinate descent on ``x'Ax/2 - b'x + pen.|x|`` with active-set Newton polishing.

    A warm start is polished first: along a path the previous support is
    usually still correct and one solve finishes the job.
    """
    total = 0
    if np.any(x[pen > 0]) and _polish_gram(a, b, x, grad, pen):
        return total, True
    while total < max_sweeps:
        sweeps, converged = cd_gram(a, b, x, grad, pen, tol, min(polish_every, max_sweeps - total))
        total += sweeps
        if converged or _polish_gram(a, b, x, grad, pen):
            return total, True
    return total, False
