"""Damped/accelerated fixed-point iteration shared by the solvers.

Solves x = g(x) for complex vector states.  Acceleration is type-II
Anderson mixing over a small sliding window; every accelerated candidate
passes through a caller-supplied safeguard (a domain membership test) and
falls back to the plain Picard step, clearing the mixing history, when the
candidate leaves the domain.
"""

from __future__ import annotations

import numpy as np

from .errors import NonConvergenceError


def fixed_point_iterate(g, x0, tol, max_iter, window=3, in_domain=None, accelerate=True):
    """Iterate x <- g(x) to the infinity-norm tolerance.

    Returns (x, iterations, diff) where x is the plain image g(x_final):
    returning the image rather than the mixed state keeps the result inside
    the range of g.  Raises NonConvergenceError when max_iter is exhausted.
    """
    x = np.asarray(x0, dtype=complex).ravel().copy()
    hist_x, hist_f = [], []
    diff = np.inf
    for it in range(1, int(max_iter) + 1):
        gx = g(x)
        f = gx - x
        diff = float(np.max(np.abs(f)))
        if diff <= tol:
            return gx, it, diff
        x_next = None
        if accelerate and hist_x:
            # type-II mixing: minimize the residual over the history span
            dF = np.stack([f - (gp - xp) for xp, gp in zip(hist_x, hist_f)], axis=1)
            gamma, *_ = np.linalg.lstsq(dF, f, rcond=None)
            dG = np.stack([gx - gp for _, gp in zip(hist_x, hist_f)], axis=1)
            cand = gx - dG @ gamma
            if in_domain is None or in_domain(cand):
                x_next = cand
            else:
                hist_x.clear()
                hist_f.clear()
        if x_next is None:
            x_next = gx
        hist_x.append(x)
        hist_f.append(gx)
        if len(hist_x) > window:
            hist_x.pop(0)
            hist_f.pop(0)
        x = x_next
    raise NonConvergenceError(
        f"fixed point not reached in {max_iter} iterations (last step {diff:.3e})",
        iterations=int(max_iter), last_diff=diff, tol=float(tol),
    )


def eta_ladder(eta_target: float, eta_start: float = 1.0, factor: float = 2.0):
    """Descending imaginary-part schedule ending exactly at eta_target."""
    if eta_target <= 0:
        raise ValueError("eta_target must be positive")
    if eta_target >= eta_start / factor:
        return [float(eta_target)]
    rungs = []
    e = float(eta_start)
    while e > eta_target * factor:
        rungs.append(e)
        e /= factor
    rungs.append(float(eta_target))
    return rungs
