"""Point-set and mask metrics.

Distances are returned in scene units; the CLI reports them in centimetres
(scene units are metres).
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.special import logsumexp

EMD_EXACT_MAX = 512


def _points(a, name):
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise ValueError(f"{name} is empty")
    return a


def chamfer(a, b):
    """Half the sum of the two mean nearest-neighbour distances."""
    a, b = _points(a, "a"), _points(b, "b")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _sinkhorn_cost(C, eps, n_iter=500):
    """Transport cost of the entropic plan between uniform marginals.

    The plan is feasible, so the returned cost is an upper bound on the exact
    optimum; the gap shrinks with ``eps`` (at most ``eps * log(n)`` on the
    regularised objective).
    """
    n = len(C)
    logmu = np.full(n, -np.log(n))
    f = np.zeros(n)
    g = np.zeros(n)
    K = -C / eps
    for _ in range(n_iter):
        f = eps * (logmu - logsumexp(K + g[None, :] / eps, axis=1))
        g = eps * (logmu - logsumexp(K + f[:, None] / eps, axis=0))
    P = np.exp(K + f[:, None] / eps + g[None, :] / eps)
    return float(np.sum(P * C) / P.sum())


def emd(a, b, cap=EMD_EXACT_MAX, seed=0, eps=None):
    """Mean matched distance under the optimal one-to-one assignment.

    Both sets are resampled without replacement to ``min(|a|, |b|, cap)``
    points. The assignment is exact up to ``EMD_EXACT_MAX`` points and
    entropic (Sinkhorn) above.
    """
    a, b = _points(a, "a"), _points(b, "b")
    n = min(len(a), len(b), int(cap))
    rng = np.random.default_rng(seed)
    if len(a) > n:
        a = a[np.sort(rng.choice(len(a), n, replace=False))]
    if len(b) > n:
        b = b[np.sort(rng.choice(len(b), n, replace=False))]
    C = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    if n <= EMD_EXACT_MAX:
        r, c = linear_sum_assignment(C)
        return float(C[r, c].mean())
    eps = 0.01 * float(np.median(C)) if eps is None else eps
    return _sinkhorn_cost(C, eps)


def miou(pred, gt):
    """Mean IoU over view pairs, skipping views where both masks are empty."""
    pred, gt = list(pred), list(gt)
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predicted masks vs {len(gt)} ground-truth masks")
    ious = []
    for p, g in zip(pred, gt):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        if p.shape != g.shape:
            raise ValueError(f"mask shapes differ: {p.shape} vs {g.shape}")
        union = np.count_nonzero(p | g)
        if union == 0:
            continue
        ious.append(np.count_nonzero(p & g) / union)
    return float(np.mean(ious)) if ious else float("nan")
