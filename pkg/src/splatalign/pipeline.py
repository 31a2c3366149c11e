"""Per-object stages shared by the CLI and the tests: align, refine, evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .appearance import AppearanceConfig, RefineResult, refine_sh
from .core import SplatCloud, apply_similarity
from .correspond import FileProvider, OracleProvider, RenderMatchProvider
from .metrics import chamfer, emd, miou
from .register import AlignConfig, IcpConfig, coarse_align_detailed, iterative_align
from .render import object_weight_maps, render_weights
from .synthbench import SceneBundle

log = logging.getLogger(__name__)

CM_PER_UNIT = 100.0  # scene units are metres


class NotFoundError(LookupError):
    pass


def check_object(bundle: SceneBundle, k):
    if not 0 <= k < bundle.n_objects:
        raise NotFoundError(f"object {k} not in bundle (has {bundle.n_objects})")


def train_views(bundle: SceneBundle, k):
    """Train cameras, object masks and masked target images for object ``k``."""
    check_object(bundle, k)
    idx = list(bundle.train)
    cams = [bundle.cams[i] for i in idx]
    masks = [bundle.masks[i, k] for i in idx]
    targets = [bundle.images[i] * bundle.masks[i, k][..., None] for i in idx]
    return cams, masks, targets


@dataclass
class ProviderConfig:
    kind: str = "render"  # render | oracle | file
    pattern: str = ""  # for kind=file
    descriptor_dim: int = 16
    top_k: int = 16
    max_views: int = 15
    min_alpha: float = 0.5
    noise_sigma: float = 0.0  # for kind=oracle

    def __post_init__(self):
        if self.kind not in ("render", "oracle", "file"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "file" and not self.pattern:
            raise ValueError("file provider needs a pattern")


def make_provider(cfg: ProviderConfig, bundle: SceneBundle, k, seed=0):
    check_object(bundle, k)
    if cfg.kind == "oracle":
        # proxy primitive i corresponds to full primitive i
        return OracleProvider(bundle.full_clouds[k].means, bundle.partial_indices[k], cfg.noise_sigma, seed)
    if cfg.kind == "file":
        return FileProvider(cfg.pattern)
    return RenderMatchProvider(np.arange(len(bundle.proxy_clouds[k])), bundle.partial_indices[k],
                               cfg.descriptor_dim, cfg.top_k, cfg.max_views, cfg.min_alpha, seed=seed)


@dataclass
class ObjectAlignment:
    cloud: SplatCloud
    coarse: object  # CoarseResult
    reports: list
    transform: object  # AnisotropicTransform applied after the coarse similarity


def align_object(bundle: SceneBundle, k, icp_cfg: IcpConfig | None = None, align_cfg: AlignConfig | None = None,
                 provider_cfg: ProviderConfig | None = None, seed=0, threads=1, proxy=None) -> ObjectAlignment:
    """Coarse alignment followed by the iterative pose/shape loop."""
    check_object(bundle, k)
    proxy = bundle.proxy_clouds[k] if proxy is None else proxy
    partial = bundle.partial_clouds[k]
    if len(partial) == 0:
        raise ValueError(f"object {k} has an empty partial cloud")
    coarse = coarse_align_detailed(proxy, partial, icp_cfg or IcpConfig(), seed=seed, threads=threads)
    gen = apply_similarity(proxy, coarse.transform)
    cams, masks, _ = train_views(bundle, k)
    provider = make_provider(provider_cfg or ProviderConfig(), bundle, k, seed)
    res = iterative_align(gen, partial, cams, masks, provider, align_cfg, seed=seed)
    return ObjectAlignment(res.cloud, coarse, res.reports, res.transform)


def refine_object(cloud: SplatCloud, bundle: SceneBundle, k, cfg: AppearanceConfig | None = None) -> RefineResult:
    cams, masks, targets = train_views(bundle, k)
    return refine_sh(cloud, cams, targets, masks, cfg)


def predicted_masks(cloud: SplatCloud, bundle: SceneBundle, k, views, threshold=0.5):
    """Masks of ``cloud`` standing in for object ``k`` inside the rest of the scene."""
    parts = [bundle.background] + [cloud if j == k else c for j, c in enumerate(bundle.full_clouds)]
    scene = SplatCloud.concatenate(parts)
    labels = np.concatenate([np.full(len(p), int(j == k + 1)) for j, p in enumerate(parts)])
    out = []
    for v in views:
        bw = render_weights(scene, bundle.cams[v])
        out.append(object_weight_maps(bw, labels, 2)[1] > threshold)
    return out


def evaluate_object(cloud: SplatCloud, bundle: SceneBundle, k, emd_cap=512, seed=0):
    """Geometry metrics in centimetres against the full object, paired with
    the partial-object baseline, plus test-view mIoU."""
    check_object(bundle, k)
    if len(bundle.test) == 0:
        raise ValueError("bundle has no test views")
    full = bundle.full_clouds[k].means
    partial = bundle.partial_clouds[k].means
    test = [int(v) for v in bundle.test]
    pred = predicted_masks(cloud, bundle, k, test)
    gt = [bundle.masks[v, k] for v in test]
    out = {
        "object": int(k),
        "chamfer_cm": CM_PER_UNIT * chamfer(cloud.means, full),
        "emd_cm": CM_PER_UNIT * emd(cloud.means, full, cap=emd_cap, seed=seed),
        "miou": miou(pred, gt),
        "n_test_views": len(test),
    }
    if len(partial):
        out["partial_chamfer_cm"] = CM_PER_UNIT * chamfer(partial, full)
        out["partial_emd_cm"] = CM_PER_UNIT * emd(partial, full, cap=emd_cap, seed=seed)
        out["chamfer_ratio"] = out["chamfer_cm"] / out["partial_chamfer_cm"] if out["partial_chamfer_cm"] > 0 else None
    return out
