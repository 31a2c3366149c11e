"""Coarse alignment: bounding-box scale, hull-centroid translation and
multi-start point-to-point ICP."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from ..core import Aabb, SimilarityTransform, SplatCloud, convex_hull_centroid, quat_to_matrix
from ..errors import DegenerateGeometryError
from .similarity import umeyama

log = logging.getLogger(__name__)


@dataclass
class IcpConfig:
    max_corr_dist_factor: float = 0.16
    max_iterations: int = 400
    n_candidate_rotations: int = 128 * 128
    n_start_rotations: int = 128
    relative_fitness: float = 1e-6
    relative_rmse: float = 1e-6
    max_points: int | None = 2000

    def __post_init__(self):
        if not self.max_corr_dist_factor > 0:
            raise ValueError("max_corr_dist_factor must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 1 <= self.n_start_rotations <= self.n_candidate_rotations:
            raise ValueError("need 1 <= n_start_rotations <= n_candidate_rotations")


class IcpResult(NamedTuple):
    transform: SimilarityTransform
    fitness: float
    rmse: float
    iterations: int


def _quat_angles(q, Q):
    return 2.0 * np.arccos(np.clip(np.abs(Q @ q), 0.0, 1.0))


def sample_dispersed_rotations(n_candidates=128 * 128, n_selected=128, seed=0):
    """Greedy farthest-point subset of random rotations under geodesic distance.

    Selection starts from the first candidate. Returns ``(n_selected, 3, 3)``.
    """
    if n_selected > n_candidates:
        raise ValueError("n_selected must not exceed n_candidates")
    rng = np.random.default_rng(seed)
    quats = rng.normal(size=(n_candidates, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    chosen = [0]
    dist = _quat_angles(quats[0], quats)
    for _ in range(n_selected - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, _quat_angles(quats[nxt], quats))
    return quat_to_matrix(quats[chosen])


def _evaluate(cur, tree, gate):
    d, nn = tree.query(cur, distance_upper_bound=gate)
    inl = np.isfinite(d)
    fitness = inl.mean() if len(cur) else 0.0
    rmse = float(np.sqrt(np.mean(d[inl] ** 2))) if inl.any() else 0.0
    return inl, nn, fitness, rmse


def icp(src, dst, init_rotation=None, cfg: IcpConfig | None = None, max_corr_dist=None, tree=None) -> IcpResult:
    """Rigid point-to-point ICP moving ``src`` onto ``dst``.

    The gate defaults to ``max_corr_dist_factor`` times the mean bounding-box
    extent of ``src`` (the partial scan in :func:`coarse_align`). Fitness is the
    fraction of ``src`` points with a neighbour inside the gate.
    """
    cfg = cfg or IcpConfig()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateGeometryError("ICP needs at least 3 points on each side")
    gate = cfg.max_corr_dist_factor * Aabb.from_points(src).mean_dim if max_corr_dist is None else max_corr_dist
    tree = cKDTree(dst) if tree is None else tree
    R = np.eye(3) if init_rotation is None else np.asarray(init_rotation, dtype=np.float64)
    t = np.zeros(3)

    inl, nn, fitness, rmse = _evaluate(src @ R.T + t, tree, gate)
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        if inl.sum() < 3:
            break
        cur = src @ R.T + t
        try:
            step = umeyama((cur[inl], dst[nn[inl]]), with_scale=False)
        except DegenerateGeometryError:
            break
        R = step.rotation @ R
        t = step.rotation @ t + step.translation
        inl, nn, new_fit, new_rmse = _evaluate(src @ R.T + t, tree, gate)
        done = abs(new_fit - fitness) < cfg.relative_fitness and abs(new_rmse - rmse) < cfg.relative_rmse
        fitness, rmse = new_fit, new_rmse
        if done:
            break
    return IcpResult(SimilarityTransform(R, t, 1.0), float(fitness), float(rmse), it)


class CoarseResult(NamedTuple):
    transform: SimilarityTransform
    fitness: float
    rmse: float
    start_index: int


def coarse_align_detailed(gen: SplatCloud, par: SplatCloud, cfg: IcpConfig | None = None, seed=0, threads=1):
    cfg = cfg or IcpConfig()
    if len(gen) == 0 or len(par) == 0:
        raise DegenerateGeometryError("coarse alignment needs two non-empty clouds")
    vol_gen = gen.aabb().volume
    vol_par = par.aabb().volume
    if not (vol_gen > 0 and vol_par > 0):
        raise DegenerateGeometryError("zero-volume bounding box")
    s = float(np.cbrt(vol_par / vol_gen))
    c_gen = convex_hull_centroid(gen.means).centroid
    c_par = convex_hull_centroid(par.means).centroid

    # both clouds centred on the origin; ICP moves the partial onto the proxy
    gen0 = s * (gen.means - c_gen)
    par0 = par.means - c_par
    if cfg.max_points and len(par0) > cfg.max_points:
        sub = np.random.default_rng(seed).choice(len(par0), cfg.max_points, replace=False)
        par0 = par0[np.sort(sub)]
    gate = cfg.max_corr_dist_factor * par.aabb().mean_dim
    tree = cKDTree(gen0)
    starts = sample_dispersed_rotations(cfg.n_candidate_rotations, cfg.n_start_rotations, seed)

    def run(R0):
        return icp(par0, gen0, R0, cfg, max_corr_dist=gate, tree=tree)

    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(R0) for R0 in starts]
    best = min(range(len(results)), key=lambda i: (-results[i].fitness, results[i].rmse, i))
    res = results[best]
    log.debug("coarse ICP: best start %d fitness %.4f rmse %.4g", best, res.fitness, res.rmse)

    # ICP maps par0 -> gen0 by (R, t); invert to move the proxy
    Rg = res.transform.rotation.T
    tg = -Rg @ res.transform.translation
    T = SimilarityTransform(Rg, c_par + tg - s * Rg @ c_gen, s)
    return CoarseResult(T, res.fitness, res.rmse, best)


def coarse_align(gen: SplatCloud, par: SplatCloud, cfg: IcpConfig | None = None, seed=0, threads=1) -> SimilarityTransform:
    """Similarity transform taking the proxy ``gen`` roughly onto ``par``."""
    return coarse_align_detailed(gen, par, cfg, seed, threads).transform
