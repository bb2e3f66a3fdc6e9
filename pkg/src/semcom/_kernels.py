"""Compiled inner loop for the reasoning recursion.

The recursion is called hundreds of thousands of times inside the
samplers, so the loop is JIT-compiled when numba is available and falls
back to the vectorized numpy implementation otherwise. Both paths share
the same semantics: zero-support entries stay exactly zero, convergence
means the sup-norm change of both matrices fell below tol, and the
degenerate cases are reported via an error code (0 ok, 1 dead encoder
column, 2 dead decoder row on a supported concept).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _solve_loop(x, y, z, theta_s, theta_r, tol, max_iters, simultaneous):  # pragma: no cover
    c_n, a_n = x.shape
    r = np.zeros((c_n, a_n))
    row_support = np.zeros(c_n, dtype=np.bool_)
    for c in range(c_n):
        tot = 0.0
        for a in range(a_n):
            tot += x[c, a]
        if tot > 0.0:
            row_support[c] = True
            for a in range(a_n):
                r[c, a] = x[c, a] / tot
    s_prev = np.zeros((c_n, a_n))
    have_prev = False
    if simultaneous:
        for a in range(a_n):
            tot = 0.0
            for c in range(c_n):
                tot += x[c, a]
            if tot == 0.0:
                return s_prev, r, 0, False, 1
            for c in range(c_n):
                s_prev[c, a] = x[c, a] / tot
        have_prev = True
    s = np.zeros((c_n, a_n))
    r_new = np.zeros((c_n, a_n))
    iterations = 0
    converged = False
    for t in range(1, max_iters + 1):
        for a in range(a_n):
            tot = 0.0
            for c in range(c_n):
                base = r[c, a] * z[c]
                w = base**theta_s if base > 0.0 else 0.0
                s[c, a] = w
                tot += w
            if tot == 0.0:
                return s, r, t, False, 1
            for c in range(c_n):
                s[c, a] = s[c, a] / tot
        src = s if not simultaneous else s_prev
        for c in range(c_n):
            tot = 0.0
            for a in range(a_n):
                base = src[c, a] * y[a]
                v = base**theta_r if base > 0.0 else 0.0
                r_new[c, a] = v
                tot += v
            if tot == 0.0:
                if row_support[c]:
                    return s, r, t, False, 2
            else:
                for a in range(a_n):
                    r_new[c, a] = r_new[c, a] / tot
        iterations = t
        if have_prev:
            delta = 0.0
            for c in range(c_n):
                for a in range(a_n):
                    d1 = abs(s[c, a] - s_prev[c, a])
                    if d1 > delta:
                        delta = d1
                    d2 = abs(r_new[c, a] - r[c, a])
                    if d2 > delta:
                        delta = d2
            if delta < tol:
                converged = True
                for c in range(c_n):
                    for a in range(a_n):
                        r[c, a] = r_new[c, a]
                        s_prev[c, a] = s[c, a]
                break
        for c in range(c_n):
            for a in range(a_n):
                r[c, a] = r_new[c, a]
                s_prev[c, a] = s[c, a]
        have_prev = True
    return s_prev, r, iterations, converged, 0
