"""Adaptive tolerance action map.

A policy emits a normalized score ``a`` in [-1, 1]; the realized master
gap tolerance is placed inside [tol_lo, min(gap_prev, tol_hi)] so that the
tolerance always sits below the incumbent outer gap.  The score space is
discretized on a uniform grid of K = 11 points for the categorical policy.
"""

from __future__ import annotations

import math

import numpy as np

TOL_LO = 1e-3
TOL_HI = 0.3
N_ACTIONS = 11
ACTION_GRID = np.linspace(-1.0, 1.0, N_ACTIONS)


def map_action(a: float, gap_prev: float, tol_lo: float = TOL_LO,
               tol_hi: float = TOL_HI) -> float:
    """Map a score in [-1, 1] to a master gap tolerance.

    ``gap_prev`` is the outer (Benders) gap before the iteration; a
    non-finite or unit initial gap maps the score across [tol_lo, tol_hi].
    """
    if not math.isfinite(gap_prev):
        gap_prev = 1.0
    if gap_prev < tol_lo:
        return tol_lo
    return min(tol_lo + 0.5 * (a + 1.0) * (gap_prev - tol_lo), tol_hi)


def tolerance_reward(t_master: float, t_ref: float, gap_prev: float,
                     gap_curr: float, alpha: float = 2.0,
                     tol_lo: float = TOL_LO) -> float:
    """Per-iteration reward: relative master time, gap improvement, -1.

    r = -t_master/t_ref + alpha * ln(gap_prev / max(gap_curr, tol_lo)) - 1
    """
    return (-t_master / t_ref
            + alpha * math.log(gap_prev / max(gap_curr, tol_lo))
            - 1.0)
