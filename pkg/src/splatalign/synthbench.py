"""Synthetic benchmark scenes with planted ground truth.

A scene is a textured ground plane at ``z = 0`` with a few parametric objects
(box, cylinder, ellipsoid shells) standing on it, seen by a ring of cameras.
For every object the bundle stores

* ``full``    the complete object in world coordinates,
* ``partial`` the primitives seen by the training views, jittered,
* ``proxy``   a canonical copy: ``full`` mapped through the inverse of the
  planted anisotropic transform, with a colour offset,

so that ``gt_transform.apply(proxy.means) == full.means`` row by row.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    AnisotropicTransform,
    Camera,
    SplatCloud,
    apply_anisotropic,
    axis_angle_matrix,
    matrix_to_quat,
    random_rotation,
    rotation_distance,
)
from .io import load_cameras, load_mask_png, load_pfm, load_ply, save_cameras, save_mask_png, save_pfm, save_ply
from .render import object_weight_maps, render, render_weights
from .sh import SH_C0, num_coeffs

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
OBJECT_KINDS = ("box", "cylinder", "ellipsoid")


@dataclass
class DegradeConfig:
    drop_fraction: float = 2.0 / 3.0
    jitter: float = 0.002  # std of position noise, fraction of the bbox mean dimension
    visibility_threshold: float = 0.1  # min blend weight at some pixel of a train view

    def __post_init__(self):
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError(f"drop_fraction must lie in [0, 1), got {self.drop_fraction}")
        if self.jitter < 0:
            raise ValueError("jitter must be >= 0")
        if not 0.0 < self.visibility_threshold < 1.0:
            raise ValueError("visibility_threshold must lie in (0, 1)")


@dataclass
class SceneConfig:
    n_objects: int = 3
    n_views: int = 28
    width: int = 128
    height: int = 96
    focal: float = 110.0
    ring_radius: float = 0.9
    ring_height: float = 0.45
    arena: float = 0.32  # object centres lie in [-arena, arena]^2
    object_size: tuple = (0.10, 0.22)
    splats_per_object: int = 700
    plane_half: float = 0.7
    plane_spacing: float = 0.035
    sh_degree: int = 3
    anisotropy: tuple = (0.85, 1.2)
    albedo_shift: float = 0.08  # planted colour offset of the proxy
    mask_threshold: float = 0.5

    def __post_init__(self):
        if self.n_objects < 1:
            raise ValueError("n_objects must be >= 1")
        if self.n_views < 2:
            raise ValueError("need at least 2 views")
        lo, hi = self.anisotropy
        if not 0 < lo <= 1 <= hi:
            raise ValueError("anisotropy range must bracket 1")


@dataclass
class SceneBundle:
    full_clouds: list
    partial_clouds: list
    proxy_clouds: list
    partial_indices: list
    background: SplatCloud
    cams: list
    masks: np.ndarray  # (V, n_objects, H, W) bool
    images: np.ndarray  # (V, H, W, 3) linear RGB
    gt_transforms: list
    train: np.ndarray
    test: np.ndarray
    seed: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.full_clouds)
        if not (len(self.partial_clouds) == len(self.proxy_clouds) == len(self.gt_transforms) == n):
            raise ValueError("per-object fields disagree in length")
        if self.masks.shape[:2] != (len(self.cams), n):
            raise ValueError("masks must be (views, objects, H, W)")

    @property
    def n_objects(self):
        return len(self.full_clouds)

    def scene_cloud(self):
        return SplatCloud.concatenate([self.background] + list(self.full_clouds))


# ---------------------------------------------------------------------------
# parametric objects
# ---------------------------------------------------------------------------


def _frames_from_normals(normals):
    """Rotations whose third column is the given unit normal."""
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    helper = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
    t1 = np.cross(helper, n)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2, n], axis=2)


def _box(size, n, rng):
    a, b, c = np.asarray(size) / 2
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(n, 3)) * [a, b, c]
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    u[np.arange(n), axis] = sign * np.array([a, b, c])[axis]
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    return u, normals


def _cylinder(size, n, rng):
    a, b, c = np.asarray(size) / 2
    side = 2 * np.pi * math.sqrt(0.5 * (a * a + b * b)) * 2 * c
    cap = np.pi * a * b
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0, 2 * np.pi, n)
    r = np.where(kind == 0, 1.0, np.sqrt(rng.uniform(0, 1, n)))
    p = np.column_stack([a * r * np.cos(phi), b * r * np.sin(phi), rng.uniform(-c, c, n)])
    p[kind == 1, 2] = c
    p[kind == 2, 2] = -c
    normals = np.column_stack([p[:, 0] / a**2, p[:, 1] / b**2, np.zeros(n)])
    normals[kind == 1] = [0, 0, 1]
    normals[kind == 2] = [0, 0, -1]
    return p, normals


def _ellipsoid(size, n, rng):
    axes = np.asarray(size) / 2
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    p = d * axes
    return p, p / axes**2


_SHELLS = {"box": _box, "cylinder": _cylinder, "ellipsoid": _ellipsoid}


def make_object(kind, size, n, rng, sh_degree=3, albedo=None):
    """Splat shell centred at the origin with surface-aligned flat Gaussians."""
    size = np.asarray(size, dtype=np.float64)
    pts, normals = _SHELLS[kind](size, n, rng)
    frames = _frames_from_normals(normals)
    quats = matrix_to_quat(frames)
    area = {
        "box": 2 * (size[0] * size[1] + size[1] * size[2] + size[0] * size[2]),
        "cylinder": np.pi * size[0] * size[2] + np.pi * size[0] * size[1] / 2,
        "ellipsoid": 4 * np.pi * (np.prod(size / 2) ** (2 / 3)),
    }[kind]
    s = 0.7 * math.sqrt(area / n)
    scales = np.column_stack([np.full(n, s), np.full(n, s), np.full(n, 0.1 * s)])
    albedo = rng.uniform(0.2, 0.8, 3) if albedo is None else np.asarray(albedo)
    # stripes along a random direction give the matcher something to lock on
    k = rng.normal(size=3)
    k *= 2 * np.pi * 4 / (np.linalg.norm(k) * size.mean())
    texture = 1.0 + 0.25 * np.sign(np.sin(pts @ k))
    color = np.clip(albedo[None, :] * texture[:, None], 0.02, 0.98)
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0, :] = (color - 0.5) / SH_C0
    if sh_degree > 0:
        sh[:, 1:, :] = rng.normal(scale=0.02, size=(n, sh.shape[1] - 1, 3))
    return SplatCloud(pts, quats, scales, np.full(n, 0.9), sh)


def make_plane(half, spacing, sh_degree=3):
    g = np.arange(-half, half + 1e-9, spacing)
    x, y = np.meshgrid(g, g, indexing="ij")
    n = x.size
    means = np.column_stack([x.ravel(), y.ravel(), np.zeros(n)])
    checker = ((np.floor(x.ravel() / 0.1) + np.floor(y.ravel() / 0.1)) % 2).astype(np.float64)
    grey = 0.35 + 0.2 * checker
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0, :] = ((grey - 0.5) / SH_C0)[:, None]
    scales = np.column_stack([np.full(n, 0.6 * spacing), np.full(n, 0.6 * spacing), np.full(n, 0.02 * spacing)])
    quats = np.tile([1.0, 0, 0, 0], (n, 1))
    return SplatCloud(means, quats, scales, np.full(n, 0.95), sh)


def camera_ring(n, radius, height, focal, width, height_px, target=(0.0, 0.0, 0.05)):
    cams = []
    for i in range(n):
        phi = 2 * np.pi * i / n
        eye = [radius * math.cos(phi), radius * math.sin(phi), height]
        cams.append(Camera.look_at(eye, target, [0, 0, 1], focal, focal, width, height_px))
    return cams


def _footprint(means):
    return np.concatenate([means[:, :2].min(axis=0), means[:, :2].max(axis=0)])


def _overlaps(a, b, margin):
    return not (a[2] + margin <= b[0] or b[2] + margin <= a[0] or a[3] + margin <= b[1] or b[3] + margin <= a[1])


def _place_objects(cfg: SceneConfig, rng, max_tries=500):
    placed, boxes = [], []
    for k in range(cfg.n_objects):
        kind = OBJECT_KINDS[int(rng.integers(len(OBJECT_KINDS)))]
        size = rng.uniform(*cfg.object_size, size=3)
        local = make_object(kind, size, cfg.splats_per_object, rng, cfg.sh_degree)
        for _ in range(max_tries):
            yaw = rng.uniform(0, 2 * np.pi)
            centre = np.array([*rng.uniform(-cfg.arena, cfg.arena, 2), size[2] / 2])
            T = AnisotropicTransform(axis_angle_matrix([0, 0, 1], yaw), centre, np.ones(3), np.eye(3))
            obj = apply_anisotropic(local, T)
            fp = _footprint(obj.means)
            if not any(_overlaps(fp, b, 0.02) for b in boxes):
                break
        else:
            raise ValueError(f"could not place object {k} without overlap after {max_tries} tries")
        boxes.append(fp)
        placed.append((kind, size, obj))
    return placed


# ---------------------------------------------------------------------------
# views and degradation
# ---------------------------------------------------------------------------


def drop_views(cams, fraction, seed=0):
    """Split views into (train, test): the test views are the ``ceil(f N)``
    views closest to a random start in joint position/orientation distance."""
    n = len(cams)
    if n < 2:
        raise ValueError("need at least 2 views")
    if not 0.0 <= fraction < 1.0:
        raise ValueError(f"fraction must lie in [0, 1), got {fraction}")
    start = int(np.random.default_rng(seed).integers(n))
    pos = np.array([c.center for c in cams])
    d_pos = np.linalg.norm(pos - pos[start], axis=1)
    d_rot = np.array([rotation_distance(cams[start].R, c.R) for c in cams])
    d_pos = d_pos / d_pos.max() if d_pos.max() > 0 else d_pos
    d_rot = d_rot / d_rot.max() if d_rot.max() > 0 else d_rot
    joint = d_pos + d_rot
    n_test = math.ceil(fraction * n - 1e-9)
    order = np.lexsort((np.arange(n), joint))
    test = np.sort(order[:n_test])
    train = np.sort(order[n_test:])
    return train, test


def max_weights(cloud: SplatCloud, cams):
    """Per-view maximum blend weight of every primitive, shape ``(V, N)``."""
    out = np.zeros((len(cams), len(cloud)))
    for v, cam in enumerate(cams):
        bw = render_weights(cloud, cam)
        np.maximum.at(out[v], bw.prim, bw.weight)
    return out


def degrade_object(cloud: SplatCloud, cams, cfg: DegradeConfig | None = None, seed=0, visibility=None):
    """Keep primitives visible in at least one of ``cams`` and jitter them.

    A primitive is visible when its blend weight reaches
    ``cfg.visibility_threshold`` at some pixel. ``visibility`` may supply
    precomputed ``(V, N)`` maximum weights (for example from a render of the
    whole scene, so that other objects occlude). Returns
    ``(partial, kept_indices)``.
    """
    cfg = cfg or DegradeConfig()
    if len(cloud) == 0:
        raise ValueError("cannot degrade an empty cloud")
    vis = max_weights(cloud, cams) if visibility is None else np.asarray(visibility)
    keep = np.flatnonzero(np.any(vis >= cfg.visibility_threshold, axis=0))
    if len(keep) == 0:
        warnings.warn("degradation removed every primitive", RuntimeWarning, stacklevel=2)
        return SplatCloud.empty(cloud.sh_degree), keep
    part = cloud.subset(keep)
    sigma = cfg.jitter * cloud.aabb().mean_dim
    if sigma > 0:
        noise = np.random.default_rng(seed).normal(scale=sigma, size=part.means.shape)
        part = part.replace(means=part.means + noise)
    return part, keep


def scene_masks(scene: SplatCloud, labels, n_labels, cams, threshold=0.5):
    """Per-view per-label masks (weight sum above ``threshold``), colour renders
    and per-view maximum primitive weights."""
    masks, images = [], []
    peak = np.zeros((len(cams), len(scene)))
    for v, cam in enumerate(cams):
        bw = render_weights(scene, cam)
        maps = object_weight_maps(bw, labels, n_labels)
        masks.append(maps > threshold)
        images.append(render(scene, cam, bw).color)
        np.maximum.at(peak[v], bw.prim, bw.weight)
    return np.array(masks), np.array(images), peak


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _planted_transform(size, centre, rng, anisotropy):
    scale = float(np.mean(size)) * rng.uniform(*anisotropy, size=3)
    return AnisotropicTransform(random_rotation(rng), centre, scale, random_rotation(rng))


def gen_scene(n_objects=None, seed=0, cfg: SceneConfig | None = None, degrade: DegradeConfig | None = None,
              identity=False) -> SceneBundle:
    """Generate a bundle. ``identity=True`` plants identity transforms and no
    jitter or colour offset (a trivially aligned control)."""
    cfg = cfg or SceneConfig()
    if n_objects is not None:
        cfg = SceneConfig(**{**asdict(cfg), "n_objects": n_objects})
    degrade = degrade or DegradeConfig()
    if identity:
        degrade = DegradeConfig(**{**asdict(degrade), "jitter": 0.0})
    rng = np.random.default_rng(seed)

    objects = _place_objects(cfg, rng)
    background = make_plane(cfg.plane_half, cfg.plane_spacing, cfg.sh_degree)
    fulls = [obj for _, _, obj in objects]
    scene = SplatCloud.concatenate([background] + fulls)
    labels = np.concatenate([np.full(len(background), -1)] + [np.full(len(c), k) for k, c in enumerate(fulls)])
    cams = camera_ring(cfg.n_views, cfg.ring_radius, cfg.ring_height, cfg.focal, cfg.width, cfg.height)
    # the plane takes the extra label n_objects, dropped after masking
    masks, images, peak = scene_masks(scene, np.where(labels < 0, len(fulls), labels), len(fulls) + 1, cams,
                                cfg.mask_threshold)
    masks = masks[:, :len(fulls)]

    train, test = drop_views(cams, degrade.drop_fraction, seed)
    partials, kept, proxies, gts = [], [], [], []
    offset = len(background)
    for k, (kind, size, full) in enumerate(objects):
        vis = peak[train][:, offset:offset + len(full)]
        part, keep = degrade_object(full, None, degrade, seed=seed * 1000 + k, visibility=vis)
        offset += len(full)
        if identity:
            T = AnisotropicTransform.identity()
        else:
            T = _planted_transform(size, full.means.mean(axis=0), rng, cfg.anisotropy)
        proxy = apply_anisotropic(full, T.inverse())
        # apply_anisotropic does not keep means exact to the last bit through
        # the round trip, so pin the proxy means to the inverse map directly
        proxy = proxy.replace(means=T.inverse().apply(full.means))
        if not identity and cfg.albedo_shift:
            shift = rng.uniform(-cfg.albedo_shift, cfg.albedo_shift, 3) / SH_C0
            sh = np.array(proxy.sh)
            sh[:, 0, :] += shift
            proxy = proxy.replace(sh=sh)
        partials.append(part)
        kept.append(keep)
        proxies.append(proxy)
        gts.append(T)
        log.debug("object %d (%s): %d/%d primitives kept", k, kind, len(keep), len(full))

    config = {"scene": asdict(cfg), "degrade": asdict(degrade), "identity": bool(identity)}
    return SceneBundle(fulls, partials, proxies, kept, background, cams, masks, images, gts, train, test, seed,
                       _jsonable(config))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: o.tolist() if hasattr(o, "tolist") else list(o)))


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_bundle(bundle: SceneBundle, root):
    """Write the bundle directory and return the manifest dict."""
    root = Path(root)
    (root / "objects").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    (root / "images").mkdir(exist_ok=True)
    save_ply(bundle.background, root / "background.ply", dtype="f8")
    for k in range(bundle.n_objects):
        save_ply(bundle.full_clouds[k], root / "objects" / f"obj{k:02d}_full.ply", dtype="f8")
        save_ply(bundle.partial_clouds[k], root / "objects" / f"obj{k:02d}_partial.ply", dtype="f8")
        save_ply(bundle.proxy_clouds[k], root / "objects" / f"obj{k:02d}_proxy.ply", dtype="f8")
    save_cameras(bundle.cams, root / "cameras.json")
    for v in range(len(bundle.cams)):
        save_pfm(root / "images" / f"view{v:03d}.pfm", bundle.images[v])
        for k in range(bundle.n_objects):
            save_mask_png(root / "masks" / f"view{v:03d}_obj{k:02d}.png", bundle.masks[v, k])
    _write_json(root / "gt_transforms.json", [T.to_dict() for T in bundle.gt_transforms])
    _write_json(root / "partial_indices.json", [np.asarray(i).tolist() for i in bundle.partial_indices])
    _write_json(root / "split.json", {"train": np.asarray(bundle.train).tolist(),
                                      "test": np.asarray(bundle.test).tolist()})
    files = sorted(p.relative_to(root).as_posix() for p in root.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "version": BUNDLE_VERSION,
        "seed": int(bundle.seed),
        "n_objects": bundle.n_objects,
        "n_views": len(bundle.cams),
        "config": bundle.config,
        "config_hash": hashlib.sha256(canonical_json(bundle.config).encode()).hexdigest(),
        "metrics_convention": {"chamfer": "half sum of mean NN distances", "emd": "mean optimal-assignment distance",
                               "units": "cm (scene metres x 100)"},
        "files": {f: sha256_file(root / f) for f in files},
    }
    _write_json(root / "manifest.json", manifest)
    return manifest


def load_bundle(root) -> SceneBundle:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no bundle manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != BUNDLE_VERSION:
        raise ValueError(f"unsupported bundle version {manifest.get('version')}")
    n_obj, n_views = manifest["n_objects"], manifest["n_views"]
    obj = root / "objects"
    fulls = [load_ply(obj / f"obj{k:02d}_full.ply") for k in range(n_obj)]
    partials = [load_ply(obj / f"obj{k:02d}_partial.ply") for k in range(n_obj)]
    proxies = [load_ply(obj / f"obj{k:02d}_proxy.ply") for k in range(n_obj)]
    cams = load_cameras(root / "cameras.json")
    images = np.array([load_pfm(root / "images" / f"view{v:03d}.pfm") for v in range(n_views)])
    masks = np.array([[load_mask_png(root / "masks" / f"view{v:03d}_obj{k:02d}.png") for k in range(n_obj)]
                      for v in range(n_views)])
    gts = [AnisotropicTransform.from_dict(d) for d in json.loads((root / "gt_transforms.json").read_text())]
    kept = [np.asarray(i, dtype=np.int64) for i in json.loads((root / "partial_indices.json").read_text())]
    split = json.loads((root / "split.json").read_text())
    return SceneBundle(fulls, partials, proxies, kept, load_ply(root / "background.ply"), cams, masks, images, gts,
                       np.asarray(split["train"], dtype=np.int64), np.asarray(split["test"], dtype=np.int64),
                       manifest["seed"], manifest["config"])
