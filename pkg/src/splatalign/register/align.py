"""Iterative pose adjustment and shape refinement of a coarsely aligned proxy."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..core import AnisotropicTransform, SimilarityTransform, SplatCloud, apply_anisotropic, apply_similarity
from ..correspond import pairs_to_arrays
from ..errors import DegenerateGeometryError, RegistrationError
from .shape import ShapeSolverConfig, anisotropic_regularized
from .similarity import RansacConfig, ransac_umeyama

log = logging.getLogger(__name__)


@dataclass
class IterSchedule:
    total_iterations: int = 6
    shape_iterations: frozenset = field(default_factory=lambda: frozenset({4, 5}))

    def __post_init__(self):
        self.shape_iterations = frozenset(int(i) for i in self.shape_iterations)
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        bad = [i for i in self.shape_iterations if not 1 <= i <= self.total_iterations]
        if bad:
            raise ValueError(f"shape iterations {sorted(bad)} outside 1..{self.total_iterations}")

    def mode(self, it):
        return "shape" if it in self.shape_iterations else "pose"


@dataclass
class AlignConfig:
    ransac: RansacConfig = field(default_factory=RansacConfig)
    shape: ShapeSolverConfig = field(default_factory=ShapeSolverConfig)
    schedule: IterSchedule = field(default_factory=IterSchedule)
    # run RANSAC on shape-iteration pairs and keep only its inliers
    filter_shape_pairs: bool = False
    # keep the current state when an update raises the mean residual
    reject_worse: bool = True


@dataclass
class AlignResult:
    cloud: SplatCloud
    transform: AnisotropicTransform  # accumulated map applied to the input cloud
    reports: list

    @property
    def final_residual(self):
        done = [r["residual"] for r in self.reports if r["mode"] != "skipped"]
        return done[-1] if done else float("nan")


def mean_residual(P, Q, T=None):
    if len(P) == 0:
        return float("nan")
    X = P if T is None else T.apply(P)
    return float(np.mean(np.linalg.norm(X - Q, axis=1)))


def _solve(mode, P, Q, cfg: AlignConfig, bbox_dim, seed):
    if mode == "pose":
        res = ransac_umeyama((P, Q), cfg.ransac, bbox_dim, seed=seed)
        return res.transform, int(res.inliers.sum())
    n_used = len(P)
    if cfg.filter_shape_pairs:
        mask = ransac_umeyama((P, Q), cfg.ransac, bbox_dim, seed=seed).inliers
        if mask.sum() >= 4:
            P, Q = P[mask], Q[mask]
            n_used = int(mask.sum())
    return anisotropic_regularized((P, Q), cfg.shape), n_used


def iterative_align(gen: SplatCloud, par: SplatCloud, cams, masks, provider, cfg: AlignConfig | None = None,
                    seed=0) -> AlignResult:
    """Alternate similarity and anisotropic updates of ``gen`` towards ``par``.

    ``gen`` is expected to be coarsely aligned already. Each iteration asks
    ``provider(gen, par, cams, masks, iteration)`` for fresh 3D pairs, fits a
    RANSAC-wrapped similarity (pose iterations) or the regularised anisotropic
    transform (shape iterations) and applies it to the cloud. The report for
    each iteration carries the mean pair residual after the update.
    """
    cfg = cfg or AlignConfig()
    bbox_dim = par.aabb().mean_dim
    total = AnisotropicTransform.identity()
    reports = []
    for it in range(1, cfg.schedule.total_iterations + 1):
        mode = cfg.schedule.mode(it)
        P, Q = pairs_to_arrays(provider(gen, par, cams, masks, it))
        need = 3 if mode == "pose" else 4
        before = mean_residual(P, Q)
        if len(P) < need:
            warnings.warn(f"iteration {it}: {len(P)} pairs, skipping", RuntimeWarning, stacklevel=2)
            reports.append({"iter": it, "mode": "skipped", "n_pairs": len(P), "residual": before})
            continue
        try:
            T, n_used = _solve(mode, P, Q, cfg, bbox_dim, seed + it)
        except (RegistrationError, DegenerateGeometryError) as exc:
            warnings.warn(f"iteration {it}: {exc}, skipping", RuntimeWarning, stacklevel=2)
            reports.append({"iter": it, "mode": "skipped", "n_pairs": len(P), "residual": before,
                            "error": str(exc)})
            continue
        after = mean_residual(P, Q, T)
        rejected = cfg.reject_worse and after > before + 1e-12 * bbox_dim
        if rejected:
            log.info("iteration %d (%s): residual %.6g -> %.6g, update rejected", it, mode, before, after)
            T, after = AnisotropicTransform.identity(), before
        elif isinstance(T, SimilarityTransform):
            gen = apply_similarity(gen, T)
        else:
            gen = apply_anisotropic(gen, T)
        if isinstance(T, SimilarityTransform):
            T = T.to_anisotropic()
        total = T.compose(total)
        reports.append({
            "iter": it,
            "mode": mode,
            "n_pairs": int(len(P)),
            "n_used": int(n_used),
            "residual_before": before,
            "residual": after,
            "rejected": bool(rejected),
            "transform": T.to_dict(),
        })
        log.info("iteration %d (%s): %d pairs, residual %.6g", it, mode, len(P), after)
    if all(r["mode"] == "skipped" for r in reports):
        raise RegistrationError("every alignment iteration was skipped", stage="iterative_align")
    return AlignResult(gen, total, reports)

