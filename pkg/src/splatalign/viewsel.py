"""Greedy input-view selection from object masks and camera poses."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError

log = logging.getLogger(__name__)

DISCARD_FRACTION = 0.3
_EPS = 1e-12


@dataclass(frozen=True)
class ViewScore:
    q_shape: float
    q_view: float
    q_total: float


def hull_pixel_count(mask) -> int:
    """Pixels whose centres fall inside the convex hull of the foreground pixel centres."""
    mask = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return 0
    pts = np.column_stack([xs, ys]).astype(np.float64)
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        # collinear or tiny: the hull is the segment itself, i.e. the pixels
        return int(mask.sum())
    x0, y0 = xs.min(), ys.min()
    gy, gx = np.mgrid[y0:ys.max() + 1, x0:xs.max() + 1]
    grid = np.column_stack([gx.ravel(), gy.ravel(), np.ones(gx.size)])
    # half-plane form n.x + d <= 0 for every facet
    inside = np.all(grid @ hull.equations.T <= 1e-9, axis=1)
    return int(inside.sum())


def q_shape(mask) -> float:
    """Foreground pixels over filled-hull pixels, in (0, 1]."""
    mask = np.asarray(mask, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise ValueError("shape score is undefined for an empty mask")
    return n / max(hull_pixel_count(mask), n)


def _positions_dirs(cams):
    pos = np.array([c.center for c in cams], dtype=np.float64)
    dirs = np.array([c.viewdir for c in cams], dtype=np.float64)
    return pos, dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _view_scores(pos, dirs, selected, pool):
    """q_view for every index in ``pool`` given the ``selected`` indices."""
    d_pos = np.min(np.linalg.norm(pos[pool][:, None] - pos[selected][None], axis=2), axis=1)
    maxdot = np.max(dirs[pool] @ dirs[selected].T, axis=1)
    d_rot = 0.5 * (1.0 - np.clip(maxdot, -1.0, 1.0))
    lo, hi = d_pos.min(), d_pos.max()
    d_pos = (d_pos - lo) / (hi - lo + _EPS)
    return 0.5 * d_pos + 0.5 * d_rot


def q_view(candidate, selected, all_candidates) -> float:
    """Diversity of ``candidate`` w.r.t. ``selected``.

    Position distance is min-max normalised over ``all_candidates``; the
    rotation term is ``(1 - max dot) / 2`` of the viewing directions.
    """
    if len(selected) == 0:
        raise ValueError("q_view needs at least one selected view")
    cams = list(all_candidates)
    pos, dirs = _positions_dirs(cams + [candidate] + list(selected))
    n = len(cams)
    sel = np.arange(n + 1, len(pos))
    pool = np.r_[np.arange(n), n]
    return float(_view_scores(pos, dirs, sel, pool)[-1])


def select_views(masks, cams, k, lambda_s=0.5, lambda_v=0.5, return_scores=False):
    """Greedy selection of ``k`` views.

    The views with the smallest object-pixel fraction (bottom 30 %) are
    discarded first. Selection starts at the best shape score and then adds
    the view maximising ``lambda_s * q_shape + lambda_v * q_view``. Ties go to
    the lower index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if len(masks) != len(cams):
        raise ValueError("need one mask per camera")
    n = len(masks)
    frac = np.array([m.mean() for m in masks])
    n_drop = int(math.floor(DISCARD_FRACTION * n))
    order = np.lexsort((np.arange(n), frac))  # ascending fraction, then index
    survivors = np.sort(order[n_drop:])
    survivors = survivors[frac[survivors] > 0]
    if len(survivors) == 0:
        raise ValueError("no view with a non-empty mask survives the discard")
    if k > len(survivors):
        warnings.warn(f"k={k} exceeds the {len(survivors)} surviving views", RuntimeWarning, stacklevel=2)
        k = len(survivors)

    qs = {int(i): q_shape(masks[i]) for i in survivors}
    pos, dirs = _positions_dirs(cams)
    first = max(survivors, key=lambda i: (qs[int(i)], -i))
    chosen = [int(first)]
    scores = {int(first): ViewScore(qs[int(first)], 0.0, lambda_s * qs[int(first)])}
    while len(chosen) < k:
        pool = np.array([i for i in survivors if i not in chosen])
        qv = _view_scores(pos, dirs, np.array(chosen), pool)
        total = lambda_s * np.array([qs[int(i)] for i in pool]) + lambda_v * qv
        best = int(np.argmax(total))  # first maximum = lowest index
        idx = int(pool[best])
        chosen.append(idx)
        scores[idx] = ViewScore(qs[idx], float(qv[best]), float(total[best]))
    log.debug("selected views %s", chosen)
    return (chosen, scores) if return_scores else chosen
