"""Deterministic bandwidth search: log-spaced grid followed by Nelder--Mead."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import NonFiniteObjective

H_MAX = 5.0


@dataclass(frozen=True)
class SearchResult:
    h: float
    g: float
    value: float
    h_range: tuple[float, float]
    g_range: tuple[float, float]
    on_boundary: bool


def _grid_eval(point_fn, hs, gs):
    vals = np.full((len(hs), len(gs)), -np.inf)
    for a, h in enumerate(hs):
        for b, g in enumerate(gs):
            try:
                v = point_fn(h, g)
            except NonFiniteObjective:
                continue
            if np.isfinite(v):
                vals[a, b] = v
    return vals


def grid_simplex_max(point_fn, h_range, g_range, grid_fn=None, n_grid: int = 20,
                     max_widen: int = 2, h_cap: float = H_MAX, label: str = "objective"):
    """Maximize ``point_fn(h, g)`` over a log grid, then refine by Nelder--Mead.

    ``grid_fn(hs, gs)`` may supply the whole grid at once (a ``len(hs) x
    len(gs)`` array, ``-inf`` for failed cells).  The argmax tie-break is the
    smallest ``h`` then the smallest ``g``.  A winner on the grid edge widens
    that edge tenfold (at most ``max_widen`` times; ``h`` never grows past
    ``h_cap``) and a warning is issued if it stays there.
    """
    h_lo, h_hi = map(float, h_range)
    g_lo, g_hi = map(float, g_range)
    evaluate = grid_fn or (lambda hs, gs: _grid_eval(point_fn, hs, gs))
    for attempt in range(max_widen + 1):
        hs = np.geomspace(h_lo, h_hi, n_grid)
        gs = np.geomspace(g_lo, g_hi, n_grid)
        vals = evaluate(hs, gs)
        if not np.any(np.isfinite(vals)):
            raise NonFiniteObjective(f"{label} is not finite anywhere on the grid")
        a, b = np.unravel_index(int(np.argmax(vals)), vals.shape)
        edges = []
        if a == 0:
            edges.append("h_lo")
        if a == n_grid - 1 and h_hi < h_cap:
            edges.append("h_hi")
        if b == 0:
            edges.append("g_lo")
        if b == n_grid - 1:
            edges.append("g_hi")
        if not edges or attempt == max_widen:
            break
        if "h_lo" in edges:
            h_lo /= 10.0
        if "h_hi" in edges:
            h_hi = min(h_cap, h_hi * 10.0)
        if "g_lo" in edges:
            g_lo /= 10.0
        if "g_hi" in edges:
            g_hi *= 10.0
    if edges:
        warnings.warn(f"{label}: grid optimum on the search boundary ({', '.join(edges)})",
                      RuntimeWarning, stacklevel=2)

    best_h, best_g, best_v = float(hs[a]), float(gs[b]), float(vals[a, b])

    def neg(p):
        try:
            v = point_fn(math.exp(p[0]), math.exp(p[1]))
        except NonFiniteObjective:
            return np.inf
        return -v if np.isfinite(v) else np.inf

    bounds = [(math.log(h_lo), math.log(h_hi)), (math.log(g_lo), math.log(g_hi))]
    res = optimize.minimize(neg, x0=[math.log(best_h), math.log(best_g)], method="Nelder-Mead",
                            bounds=bounds,
                            options={"xatol": 1e-4, "fatol": 1e-12 * max(1.0, abs(best_v)),
                                     "maxiter": 400})
    if np.isfinite(res.fun) and -res.fun > best_v:
        best_h, best_g, best_v = math.exp(res.x[0]), math.exp(res.x[1]), float(-res.fun)
    return SearchResult(best_h, best_g, best_v, (h_lo, h_hi), (g_lo, g_hi), bool(edges))
