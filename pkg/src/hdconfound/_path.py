"""Exact homotopy path for ``x'Ax/2 - b'x + lam * sum_j c_j |x_j|``.

The solution is piecewise linear in ``lam``. Starting from the largest
grid value the active set is updated one coordinate at a time, with the
inverse of the active block of ``A`` kept by bordering and Schur-complement
downdates. Coordinates with ``c_j = 0`` are always active. Any grid point
whose solution fails the KKT check is recomputed by coordinate descent from
the nearest good point, so the homotopy is only ever a fast path.
"""

from __future__ import annotations

import numba
import numpy as np

from ._cd import solve_gram

_PIVOT = 1e-12


@numba.njit(cache=True)
def _add(a, inv, act, ns, j):
    """Border ``inv`` (top-left ``ns x ns``) with coordinate ``j``; False if singular."""
    u = np.zeros(ns)
    for r in range(ns):
        s = 0.0
        for c in range(ns):
            s += inv[r, c] * a[act[c], j]
        u[r] = s
    schur = a[j, j]
    for r in range(ns):
        schur -= a[act[r], j] * u[r]
    if not schur > _PIVOT * max(a[j, j], 1e-300):
        return False
    for r in range(ns):
        for c in range(ns):
            inv[r, c] += u[r] * u[c] / schur
        inv[r, ns] = -u[r] / schur
        inv[ns, r] = -u[r] / schur
    inv[ns, ns] = 1.0 / schur
    act[ns] = j
    return True


@numba.njit(cache=True)
def _remove(inv, act, sgn, ns, k):
    """Drop position ``k`` from the active block; the last entry takes its place."""
    piv = inv[k, k]
    for r in range(ns):
        if r == k:
            continue
        f = inv[r, k] / piv
        for c in range(ns):
            if c != k:
                inv[r, c] -= f * inv[k, c]
    last = ns - 1
    if k != last:
        for r in range(ns):
            inv[r, k] = inv[r, last]
        for c in range(ns):
            inv[k, c] = inv[last, c]
        inv[k, k] = inv[last, last]
        act[k] = act[last]
        sgn[k] = sgn[last]


@numba.njit(cache=True, fastmath=True)
def gram_path_kernel(a, b, c, grid, max_events):
    """Solutions at every grid value (rows of the output); ``a`` must be symmetric.

    Returns ``(x_grid, n_done)``; rows at index ``n_done`` and beyond were not
    reached because the active block became singular or the event budget ran out.
    """
    m = a.shape[0]
    g_len = grid.shape[0]
    out = np.zeros((g_len, m))
    inv = np.zeros((m + 1, m + 1))
    act = np.zeros(m + 1, dtype=np.int64)
    sgn = np.zeros(m + 1)
    inset = np.zeros(m, dtype=np.bool_)
    ns = 0
    for j in range(m):
        if c[j] == 0.0:
            if not _add(a, inv, act, ns, j):
                return out, 0
            inset[j] = True
            ns += 1
    x = np.zeros(m)
    grad = np.empty(m)
    d = np.zeros(m)
    e = np.empty(m)
    lam = 0.0
    started = False
    gi = 0
    just_in = -1
    just_out = -1
    events = 0
    while gi < g_len:
        # exact active solution at lam, then the gradient everywhere
        for r in range(ns):
            s = 0.0
            for q in range(ns):
                rhs = b[act[q]]
                if started:
                    rhs -= lam * c[act[q]] * sgn[q]
                s += inv[r, q] * rhs
            x[act[r]] = s
        for i in range(m):
            grad[i] = -b[i]
        for r in range(ns):
            xr = x[act[r]]
            row = act[r]
            for i in range(m):
                grad[i] += a[row, i] * xr
        if not started:
            started = True
            # entry point: largest scaled gradient among penalised coordinates
            top = 0.0
            for i in range(m):
                if not inset[i] and c[i] > 0.0:
                    v = abs(grad[i]) / c[i]
                    if v > top:
                        top = v
            lam = top
            while gi < g_len and grid[gi] >= lam:
                for i in range(m):
                    out[gi, i] = x[i]
                gi += 1
            if top == 0.0:
                while gi < g_len:
                    for i in range(m):
                        out[gi, i] = x[i]
                    gi += 1
                return out, gi
        # direction: x_S moves by delta * d_S as lam falls by delta
        for r in range(ns):
            s = 0.0
            for q in range(ns):
                s += inv[r, q] * c[act[q]] * sgn[q]
            d[r] = s
        e[:] = 0.0
        for r in range(ns):
            dr = d[r]
            row = act[r]
            for i in range(m):
                e[i] += a[row, i] * dr
        best = lam
        kind = 0
        who = -1
        for i in range(m):
            if inset[i] or c[i] == 0.0 or i == just_out:
                continue
            den = c[i] + e[i]
            if den > 0.0:
                t = (lam * c[i] - grad[i]) / den
                if t < 0.0:
                    t = 0.0
                if t < best:
                    best, kind, who = t, 1, i
            den = c[i] - e[i]
            if den > 0.0:
                t = (lam * c[i] + grad[i]) / den
                if t < 0.0:
                    t = 0.0
                if t < best:
                    best, kind, who = t, 1, i
        for r in range(ns):
            i = act[r]
            if c[i] == 0.0 or i == just_in or d[r] == 0.0:
                continue
            t = -x[i] / d[r]
            if t > 0.0 and t < best:
                best, kind, who = t, 2, r
        new_lam = lam - best
        while gi < g_len and grid[gi] >= new_lam:
            dl = lam - grid[gi]
            for i in range(m):
                out[gi, i] = x[i]
            for r in range(ns):
                out[gi, act[r]] = x[act[r]] + dl * d[r]
            gi += 1
        if gi >= g_len or kind == 0:
            break
        events += 1
        if events > max_events:
            break
        lam = new_lam
        for r in range(ns):
            x[act[r]] += best * d[r]
        just_in = -1
        just_out = -1
        if kind == 1:
            g_new = grad[who] + best * e[who]
            if not _add(a, inv, act, ns, who):
                break
            sgn[ns] = -1.0 if g_new > 0.0 else 1.0
            inset[who] = True
            ns += 1
            just_in = who
        else:
            i = act[who]
            x[i] = 0.0
            inset[i] = False
            _remove(inv, act, sgn, ns, who)
            ns -= 1
            just_out = i
    # points below the final breakpoint follow the last segment (kind == 0)
    while gi < g_len and kind == 0:
        dl = lam - grid[gi]
        for i in range(m):
            out[gi, i] = x[i]
        for r in range(ns):
            out[gi, act[r]] = x[act[r]] + dl * d[r]
        gi += 1
    return out, gi


def quad_kkt(a, b, x, pen) -> np.ndarray:
    """Per-row KKT residuals of the quadratic problems for solutions in rows of ``x``."""
    grad = x @ a - b
    nz = x != 0
    res = np.where(
        nz,
        np.abs(grad + pen * np.sign(x)),
        np.maximum(np.abs(grad) - pen, 0.0),
    )
    return res.max(axis=1) if res.shape[1] else np.zeros(len(x))


def gram_path(a, b, c, grid, tol: float = 1e-9) -> np.ndarray:
    """Solutions of the weighted-l1 quadratic program along a decreasing grid.

    Returns a ``len(grid) x m`` array. Rows that fail the KKT check at
    ``tol`` are recomputed by coordinate descent warm-started along the grid.
    """
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    grid = np.ascontiguousarray(grid, dtype=float)
    m = len(b)
    if m == 0:
        return np.zeros((len(grid), 0))
    xs, done = gram_path_kernel(a, b, c, grid, 20 * m + 100)
    kkt = quad_kkt(a, b, xs, grid[:, None] * c)
    scale = max(1.0, float(np.max(np.abs(b))))
    bad = np.flatnonzero((kkt > tol * scale) | (np.arange(len(grid)) >= done))
    for g in bad:
        x = xs[g - 1].copy() if g > 0 else np.zeros(m)
        grad = a @ x - b
        solve_gram(a, b, x, grad, grid[g] * c, tol, 100000)
        xs[g] = x
    return xs
