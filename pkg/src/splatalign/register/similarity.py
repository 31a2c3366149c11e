"""Closed-form similarity estimation and a vectorised RANSAC wrapper."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..core import SimilarityTransform
from ..correspond import pairs_to_arrays
from ..errors import DegenerateGeometryError, RegistrationError

_RANK_TOL = 1e-10


def umeyama(pairs, with_scale=True) -> SimilarityTransform:
    """Least-squares ``(R, t, s)`` minimising ``sum |s R p_gen + t - p_par|^2``.

    ``det(R) = +1`` is enforced. Raises :class:`DegenerateGeometryError` when
    either point set is collinear.
    """
    P, Q = pairs_to_arrays(pairs)
    if len(P) < 3:
        raise DegenerateGeometryError(f"umeyama needs >= 3 pairs, got {len(P)}")
    mu_p, mu_q = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - mu_p, Q - mu_q
    sv = np.linalg.svd(Pc, compute_uv=False)
    if sv[0] == 0 or sv[1] <= _RANK_TOL * sv[0]:
        raise DegenerateGeometryError("source points are collinear")
    cov = Qc.T @ Pc / len(P)
    U, D, Vt = np.linalg.svd(cov)
    if D[1] <= _RANK_TOL * max(D[0], 1e-300):
        raise DegenerateGeometryError("cross-covariance has rank < 2")
    d = np.ones(3)
    d[2] = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    R = (U * d) @ Vt
    s = (D @ d) / np.mean(np.sum(Pc**2, axis=1)) if with_scale else 1.0
    if not s > 0:
        raise DegenerateGeometryError(f"non-positive scale {s}")
    return SimilarityTransform(R, mu_q - s * R @ mu_p, s)


def umeyama_batch(P, Q):
    """Vectorised umeyama over ``(B, n, 3)`` stacks.

    Returns ``(R, t, s, ok)`` where ``ok`` flags non-degenerate samples.
    """
    mu_p, mu_q = P.mean(axis=1, keepdims=True), Q.mean(axis=1, keepdims=True)
    Pc, Qc = P - mu_p, Q - mu_q
    var = np.mean(np.sum(Pc**2, axis=2), axis=1)
    cov = np.einsum("bni,bnj->bij", Qc, Pc) / P.shape[1]
    U, D, Vt = np.linalg.svd(cov)
    d = np.ones((len(P), 3))
    d[:, 2] = np.sign(np.linalg.det(U) * np.linalg.det(Vt))
    R = (U * d[:, None, :]) @ Vt
    s = np.einsum("bi,bi->b", D, d) / np.where(var > 0, var, 1.0)
    area = np.linalg.norm(np.cross(Pc[:, 1] - Pc[:, 0], Pc[:, 2] - Pc[:, 0]), axis=1)
    ok = (var > 0) & (area > 1e-9 * var) & (s > 0) & (D[:, 1] > _RANK_TOL * np.maximum(D[:, 0], 1e-300))
    t = mu_q[:, 0] - s[:, None] * np.einsum("bij,bj->bi", R, mu_p[:, 0])
    return R, t, s, ok


@dataclass
class RansacConfig:
    max_iterations: int = 2000
    inlier_dist_factor: float = 0.01
    min_sample: int = 3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.inlier_dist_factor > 0:
            raise ValueError("inlier_dist_factor must be > 0")
        if self.min_sample != 3:
            raise ValueError("min_sample is fixed at 3 for similarity hypotheses")


class RansacResult(NamedTuple):
    transform: SimilarityTransform
    inliers: np.ndarray


def _distinct_triples(rng, n, count):
    i = rng.integers(n, size=count)
    j = rng.integers(n - 1, size=count)
    j = j + (j >= i)
    k = rng.integers(n - 2, size=count)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    k = k + (k >= lo)
    k = k + (k >= hi)
    return np.stack([i, j, k], axis=1)


def ransac_umeyama(pairs, cfg: RansacConfig | None = None, bbox_mean_dim=1.0, seed=0, batch=500) -> RansacResult:
    """Best-consensus similarity, refit on its inliers.

    A pair is an inlier when ``|T(p_gen) - p_par| < inlier_dist_factor * bbox_mean_dim``.
    Raises :class:`RegistrationError` if no hypothesis reaches 3 inliers.
    """
    cfg = cfg or RansacConfig()
    P, Q = pairs_to_arrays(pairs)
    n = len(P)
    if n < 3:
        raise RegistrationError(f"RANSAC needs >= 3 pairs, got {n}", stage="ransac")
    thr = cfg.inlier_dist_factor * bbox_mean_dim
    rng = np.random.default_rng(seed)
    triples = _distinct_triples(rng, n, cfg.max_iterations)

    best_count, best = -1, None
    for start in range(0, len(triples), batch):
        tri = triples[start:start + batch]
        R, t, s, ok = umeyama_batch(P[tri], Q[tri])
        if not ok.any():
            continue
        R, t, s = R[ok], t[ok], s[ok]
        pred = s[:, None, None] * np.einsum("bij,nj->bni", R, P) + t[:, None, :]
        inl = np.sum((pred - Q) ** 2, axis=2) < thr * thr
        counts = inl.sum(axis=1)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best = (SimilarityTransform(R[k], t[k], s[k]), inl[k])

    if best is None or best_count < 3:
        raise RegistrationError("no similarity hypothesis with >= 3 inliers", stage="ransac")
    model, mask = best
    try:
        refit = umeyama((P[mask], Q[mask]))
    except DegenerateGeometryError:
        return RansacResult(model, mask)
    refit_mask = np.sum((refit.apply(P) - Q) ** 2, axis=1) < thr * thr
    if refit_mask.sum() < best_count:
        return RansacResult(model, mask)
    return RansacResult(refit, refit_mask)
