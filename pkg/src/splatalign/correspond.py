"""3D-3D correspondences between a proxy object and its partial counterpart.

Correspondences only enter the alignment stack through a *provider*: a
callable ``provider(gen, par, cams, masks, iteration) -> list[Corr3D]``.
Three providers are included: an oracle that knows per-primitive ground
truth, a render-and-match provider that runs the full render / mutual-NN /
unproject chain on synthetic descriptors, and a file provider for
externally computed matches.
"""

from __future__ import annotations

import glob
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import AnisotropicTransform, Camera, SplatCloud
from .render import depth_at, render_weights, unproject_points

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Match2D:
    u_gen: tuple
    u_par: tuple
    confidence: float


@dataclass(frozen=True)
class Corr3D:
    p_gen: np.ndarray
    p_par: np.ndarray
    confidence: float = 1.0


def pairs_to_arrays(pairs):
    """``(P_gen, P_par)`` arrays from a list of :class:`Corr3D` or an array tuple."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and isinstance(pairs[0], np.ndarray):
        return np.asarray(pairs[0], float).reshape(-1, 3), np.asarray(pairs[1], float).reshape(-1, 3)
    pairs = list(pairs)
    if not pairs:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return (np.array([p.p_gen for p in pairs], dtype=np.float64),
            np.array([p.p_par for p in pairs], dtype=np.float64))


def arrays_to_pairs(p_gen, p_par, confidence=None):
    conf = np.ones(len(p_gen)) if confidence is None else confidence
    return [Corr3D(np.array(a), np.array(b), float(c)) for a, b, c in zip(p_gen, p_par, conf)]


# ---------------------------------------------------------------------------
# 2D matching
# ---------------------------------------------------------------------------


def _unit_rows(feats):
    norms = np.linalg.norm(feats, axis=1)
    ok = norms > 1e-12
    out = np.zeros_like(feats)
    out[ok] = feats[ok] / norms[ok, None]
    return out, ok


def mutual_nn_match(f_gen, f_par, mask, top_k=16, gen_mask=None, chunk=4096):
    """Mutual best matches under cosine similarity.

    ``mask`` restricts candidate pixels of ``f_par``; ``gen_mask`` optionally
    restricts ``f_gen``. Pixels with a zero descriptor never match. Returns
    at most ``top_k`` matches sorted by decreasing similarity.
    """
    f_gen = np.asarray(f_gen, dtype=np.float64)
    f_par = np.asarray(f_par, dtype=np.float64)
    if f_gen.ndim == 2:
        f_gen = f_gen[..., None]
    if f_par.ndim == 2:
        f_par = f_par[..., None]
    if f_gen.shape[-1] != f_par.shape[-1]:
        raise ValueError("descriptor dimensions differ")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != f_par.shape[:2]:
        raise ValueError("mask shape does not match f_par")
    wg = f_gen.shape[1]
    wp = f_par.shape[1]

    gen_sel = np.ones(f_gen.shape[:2], bool) if gen_mask is None else np.asarray(gen_mask, bool)
    g_idx = np.flatnonzero(gen_sel)
    p_idx = np.flatnonzero(mask)
    if g_idx.size == 0 or p_idx.size == 0:
        return []
    G, g_ok = _unit_rows(f_gen.reshape(-1, f_gen.shape[-1])[g_idx])
    P, p_ok = _unit_rows(f_par.reshape(-1, f_par.shape[-1])[p_idx])
    g_idx, G = g_idx[g_ok], G[g_ok]
    p_idx, P = p_idx[p_ok], P[p_ok]
    if g_idx.size == 0 or p_idx.size == 0:
        return []

    best_p = np.empty(len(G), dtype=np.int64)
    best_p_val = np.empty(len(G))
    best_g = np.zeros(len(P), dtype=np.int64)
    best_g_val = np.full(len(P), -np.inf)
    for start in range(0, len(G), chunk):
        sim = G[start:start + chunk] @ P.T
        best_p[start:start + chunk] = np.argmax(sim, axis=1)
        best_p_val[start:start + chunk] = sim[np.arange(sim.shape[0]), best_p[start:start + chunk]]
        col_arg = np.argmax(sim, axis=0)
        col_val = sim[col_arg, np.arange(sim.shape[1])]
        better = col_val > best_g_val  # strict: earlier chunk wins ties
        best_g[better] = col_arg[better] + start
        best_g_val[better] = col_val[better]

    mutual = best_g[best_p] == np.arange(len(G))
    gi = np.flatnonzero(mutual)
    conf = best_p_val[gi]
    order = np.lexsort((gi, -conf))[:top_k]
    out = []
    for k in order:
        g = g_idx[gi[k]]
        p = p_idx[best_p[gi[k]]]
        out.append(Match2D((float(g % wg), float(g // wg)), (float(p % wp), float(p // wp)), float(conf[k])))
    return out


class LiftResult(NamedTuple):
    pairs: list
    dropped: int


def lift_matches(matches, d_gen, d_par, cam: Camera) -> LiftResult:
    """Unproject both sides of each match through ``cam``; zero-depth matches are dropped."""
    matches = list(matches)
    if not matches:
        return LiftResult([], 0)
    ug = np.array([m.u_gen for m in matches], dtype=np.float64)
    up = np.array([m.u_par for m in matches], dtype=np.float64)
    dg = depth_at(d_gen, ug)
    dp = depth_at(d_par, up)
    ok = (dg > 0) & (dp > 0)
    pg = unproject_points(ug[ok], dg[ok], cam)
    pp = unproject_points(up[ok], dp[ok], cam)
    conf = [m.confidence for m, keep in zip(matches, ok) if keep]
    pairs = [Corr3D(a, b, c) for a, b, c in zip(pg, pp, conf)]
    return LiftResult(pairs, int((~ok).sum()))


# ---------------------------------------------------------------------------
# synthetic correspondences
# ---------------------------------------------------------------------------


def synth_correspondences(cloud: SplatCloud, T: AnisotropicTransform, n, noise_sigma=0.0,
                          outlier_fraction=0.0, seed=0, return_outliers=False):
    """Pairs ``(mu, T(mu) + noise)`` sampled from primitive means.

    ``round(outlier_fraction * n)`` pairs get ``p_par`` redrawn uniformly in
    the bounding box of the transformed cloud.
    """
    if n < 3:
        raise ValueError("need at least 3 correspondences")
    if not 0 <= outlier_fraction < 1:
        raise ValueError("outlier_fraction must lie in [0, 1)")
    if len(cloud) == 0:
        raise ValueError("cannot sample correspondences from an empty cloud")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(cloud), size=n, replace=n > len(cloud))
    p_gen = cloud.means[idx]
    p_par = T.apply(p_gen)
    if noise_sigma > 0:
        p_par = p_par + rng.normal(scale=noise_sigma, size=p_par.shape)
    n_out = int(round(outlier_fraction * n))
    outliers = np.zeros(n, dtype=bool)
    if n_out:
        target = T.apply(cloud.means)
        lo, hi = target.min(axis=0), target.max(axis=0)
        which = rng.choice(n, size=n_out, replace=False)
        outliers[which] = True
        p_par[which] = rng.uniform(lo, hi, size=(n_out, 3))
    pairs = arrays_to_pairs(p_gen, p_par)
    return (pairs, outliers) if return_outliers else pairs


# ---------------------------------------------------------------------------
# image-space helpers
# ---------------------------------------------------------------------------


class Crop(NamedTuple):
    image: np.ndarray
    offset: tuple  # (x, y): original = crop + offset


def crop_and_pad(image, mask, pad=200):
    """Crop ``image`` to the bounding box of ``mask`` and zero-pad each side."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("empty mask")
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    image = np.asarray(image)
    crop = image[r0:r1, c0:c1]
    widths = [(pad, pad), (pad, pad)] + [(0, 0)] * (image.ndim - 2)
    return Crop(np.pad(crop, widths), (int(c0 - pad), int(r0 - pad)))


def crop_to_original(uv, offset):
    return np.asarray(uv, dtype=np.float64) + np.asarray(offset, dtype=np.float64)


def original_to_crop(uv, offset):
    return np.asarray(uv, dtype=np.float64) - np.asarray(offset, dtype=np.float64)


def subsample_views(n_views, max_used=15):
    if n_views < 1:
        raise ValueError("need at least one view")
    step = max(1, n_views // max_used)
    return list(range(0, n_views, step))


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------


class OracleProvider:
    """Exact correspondences from per-primitive ground truth.

    ``targets[i]`` is the true position of proxy primitive ``i``; only
    ``indices`` (for example the primitives surviving in the partial object)
    are paired. Noise-free unless ``noise_sigma`` is set.
    """

    def __init__(self, targets, indices=None, noise_sigma=0.0, seed=0):
        self.targets = np.asarray(targets, dtype=np.float64)
        self.indices = np.arange(len(self.targets)) if indices is None else np.asarray(indices)
        self.noise_sigma = noise_sigma
        self.seed = seed

    def __call__(self, gen, par=None, cams=None, masks=None, iteration=0):
        p_gen = gen.means[self.indices]
        p_par = self.targets[self.indices]
        if self.noise_sigma:
            rng = np.random.default_rng([self.seed, iteration])
            p_par = p_par + rng.normal(scale=self.noise_sigma, size=p_par.shape)
        return arrays_to_pairs(p_gen, p_par)


def descriptor_table(n_ids, dim=16, seed=0):
    return np.random.default_rng(seed).normal(size=(n_ids, dim))


class RenderMatchProvider:
    """Render both objects, match rendered descriptor maps, lift with depth.

    Each primitive carries a descriptor looked up by identity
    (``gen_ids``/``par_ids`` index a shared random table), which stands in
    for a learned matcher. Matching happens per view on the object mask.
    """

    def __init__(self, gen_ids, par_ids, dim=16, top_k=16, max_views=15, min_alpha=0.5,
                 normalize_depth=True, seed=0):
        self.gen_ids = np.asarray(gen_ids)
        self.par_ids = np.asarray(par_ids)
        n = int(max(self.gen_ids.max(initial=0), self.par_ids.max(initial=0))) + 1
        self.table = descriptor_table(n, dim, seed)
        self.top_k = top_k
        self.max_views = max_views
        self.min_alpha = min_alpha
        self.normalize_depth = normalize_depth
        self.last_dropped = 0

    def _maps(self, cloud, ids, cam):
        bw = render_weights(cloud, cam)
        feats = bw.composite(self.table[ids])
        alpha = bw.weight_sum()
        depth = bw.composite(np.nan_to_num(bw.depth)[:, None])[..., 0]
        if self.normalize_depth:
            depth = np.where(alpha > 0, depth / np.maximum(alpha, 1e-12), 0.0)
        return feats, depth, alpha

    def __call__(self, gen, par, cams, masks, iteration=0):
        pairs = []
        dropped = 0
        for v in subsample_views(len(cams), self.max_views):
            cam = cams[v]
            fg, dg, ag = self._maps(gen, self.gen_ids, cam)
            fp, dp, ap = self._maps(par, self.par_ids, cam)
            mask = np.asarray(masks[v], bool) & (ap >= self.min_alpha)
            matches = mutual_nn_match(fg, fp, mask, self.top_k, gen_mask=ag >= self.min_alpha)
            lifted = lift_matches(matches, dg, dp, cam)
            pairs.extend(lifted.pairs)
            dropped += lifted.dropped
        self.last_dropped = dropped
        return pairs


class FileProvider:
    """Correspondences read from JSON files.

    ``pattern`` may contain ``{iteration}``; all matching files are
    concatenated. Files follow ``{"pairs": [{"p_gen", "p_par", "confidence"}], "view_index"}``.
    """

    def __init__(self, pattern):
        self.pattern = str(pattern)

    def __call__(self, gen=None, par=None, cams=None, masks=None, iteration=0):
        from .io import load_correspondences

        pat = self.pattern.format(iteration=iteration)
        paths = sorted(glob.glob(pat)) if any(ch in pat for ch in "*?[") else [pat]
        pairs = []
        for path in paths:
            if Path(path).exists():
                pairs.extend(load_correspondences(path)[0])
        if not pairs:
            log.warning("no correspondences found for pattern %s", pat)
        return pairs
