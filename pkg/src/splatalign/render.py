"""CPU forward splatting, pixel unprojection and gradient-vote segmentation.

Splats are sorted globally front-to-back by camera-space depth of their
means. Each one is rasterised inside its 3-sigma footprint; blending is
done with a segmented cumulative product of ``1 - g`` per pixel, so the
whole image is evaluated without a per-pixel Python loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import Camera, SplatCloud
from .errors import NoDepthError
from .sh import eval_sh, sh_basis

NEAR_PLANE = 0.01
MAX_ALPHA = 0.999
MIN_TRANSMITTANCE = 1e-4
CUTOFF_SIGMA = 3.0
LOWPASS = 0.3


@dataclass
class RenderOutput:
    color: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray


@dataclass
class BlendWeights:
    """Sparse per-pixel blend weights ``w = g_i * prod_{j<i} (1 - g_j)``.

    Entries are grouped by flat pixel index (row-major) and ordered
    front-to-back within each pixel.
    """

    height: int
    width: int
    n_primitives: int
    pixel: np.ndarray
    prim: np.ndarray
    weight: np.ndarray
    depth: np.ndarray  # camera-space z per primitive, nan when culled
    view_dirs: np.ndarray  # unit world-space direction camera -> mean per primitive

    def per_pixel(self, row, col):
        sel = self.pixel == row * self.width + col
        return list(zip(self.prim[sel].tolist(), self.weight[sel].tolist()))

    def matrix(self):
        """``(H*W, N)`` CSR matrix mapping per-primitive values to pixels."""
        return sp.csr_matrix(
            (self.weight, (self.pixel, self.prim)),
            shape=(self.height * self.width, self.n_primitives),
        )

    def weight_sum(self):
        return np.bincount(self.pixel, self.weight, minlength=self.height * self.width).reshape(
            self.height, self.width
        )

    def composite(self, values):
        """Blend per-primitive values ``(N, C)`` into an ``(H, W, C)`` image."""
        values = np.asarray(values, dtype=np.float64)
        flat = values.reshape(self.n_primitives, -1)
        out = np.stack(
            [
                np.bincount(self.pixel, self.weight * flat[self.prim, c], minlength=self.height * self.width)
                for c in range(flat.shape[1])
            ],
            axis=-1,
        )
        return out.reshape((self.height, self.width) + values.shape[1:])


def _footprints(cloud: SplatCloud, cam: Camera):
    """Project every primitive; returns per-primitive 2D data and a visibility mask."""
    pc = cam.world_to_camera(cloud.means)
    z = pc[:, 2]
    visible = z > NEAR_PLANE
    zs = np.where(visible, z, 1.0)
    u = cam.fx * pc[:, 0] / zs + cam.cx
    v = cam.fy * pc[:, 1] / zs + cam.cy

    J = np.zeros((len(cloud), 2, 3))
    J[:, 0, 0] = cam.fx / zs
    J[:, 0, 2] = -cam.fx * pc[:, 0] / zs**2
    J[:, 1, 1] = cam.fy / zs
    J[:, 1, 2] = -cam.fy * pc[:, 1] / zs**2
    T = J @ cam.R
    cov2 = T @ cloud.covariances() @ np.swapaxes(T, 1, 2)
    cov2[:, 0, 0] += LOWPASS
    cov2[:, 1, 1] += LOWPASS

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    visible &= det > 0
    det = np.where(det > 0, det, 1.0)
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = CUTOFF_SIGMA * np.sqrt(lam)

    x0 = np.maximum(np.floor(u - radius), 0).astype(np.int64)
    x1 = np.minimum(np.ceil(u + radius), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.floor(v - radius), 0).astype(np.int64)
    y1 = np.minimum(np.ceil(v + radius), cam.height - 1).astype(np.int64)
    visible &= (x1 >= x0) & (y1 >= y0) & np.isfinite(u) & np.isfinite(v)
    return dict(z=z, u=u, v=v, conic=conic, x0=x0, x1=x1, y0=y0, y1=y1, visible=visible)


def render_weights(cloud: SplatCloud, cam: Camera) -> BlendWeights:
    """Blend weights of every (pixel, primitive) pair with nonzero contribution."""
    n = len(cloud)
    H, W = cam.height, cam.width
    dirs = cloud.means - cam.center
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.where(norms > 0, norms, 1.0)
    empty = np.zeros(0, dtype=np.int64)
    if n == 0:
        return BlendWeights(H, W, 0, empty, empty, np.zeros(0), np.zeros(0), dirs)

    fp = _footprints(cloud, cam)
    depth = np.where(fp["visible"], fp["z"], np.nan)
    idx = np.flatnonzero(fp["visible"])
    if idx.size == 0:
        return BlendWeights(H, W, n, empty, empty, np.zeros(0), depth, dirs)
    idx = idx[np.argsort(fp["z"][idx], kind="stable")]

    x0, y0 = fp["x0"][idx], fp["y0"][idx]
    bw = fp["x1"][idx] - x0 + 1
    sizes = bw * (fp["y1"][idx] - y0 + 1)
    owner = np.repeat(np.arange(idx.size), sizes)
    local = np.arange(sizes.sum()) - np.repeat(np.cumsum(sizes) - sizes, sizes)
    px = x0[owner] + local % bw[owner]
    py = y0[owner] + local // bw[owner]

    prim = idx[owner]
    dx = px - fp["u"][prim]
    dy = py - fp["v"][prim]
    con = fp["conic"][prim]
    maha = con[:, 0] * dx * dx + 2 * con[:, 1] * dx * dy + con[:, 2] * dy * dy
    keep = maha <= CUTOFF_SIGMA**2
    prim, px, py, maha = prim[keep], px[keep], py[keep], maha[keep]
    g = np.minimum(MAX_ALPHA, cloud.opacities[prim] * np.exp(-0.5 * maha))

    pixel = py * W + px
    order = np.argsort(pixel, kind="stable")  # keeps depth order inside a pixel
    pixel, prim, g = pixel[order], prim[order], g[order]

    logs = np.log1p(-g)
    csum = np.cumsum(logs)
    starts = np.flatnonzero(np.r_[True, pixel[1:] != pixel[:-1]])
    seg = np.repeat(starts, np.diff(np.r_[starts, pixel.size]))
    offset = np.where(seg > 0, csum[seg - 1], 0.0)
    trans = np.exp(csum - logs - offset)
    w = g * trans
    live = (trans >= MIN_TRANSMITTANCE) & (w > 0)
    return BlendWeights(H, W, n, pixel[live], prim[live], w[live], depth, dirs)


def primitive_colors(cloud: SplatCloud, view_dirs):
    return eval_sh(cloud.sh, view_dirs) + 0.5


def primitive_basis(cloud: SplatCloud, view_dirs):
    """SH basis per primitive along its view direction, shape ``(N, K)``."""
    return sh_basis(view_dirs, cloud.sh_degree)


def render(cloud: SplatCloud, cam: Camera, weights: BlendWeights | None = None) -> RenderOutput:
    """Colour, alpha-blended depth and accumulated alpha for one camera."""
    bw = render_weights(cloud, cam) if weights is None else weights
    H, W = cam.height, cam.width
    if bw.weight.size == 0:
        return RenderOutput(np.zeros((H, W, 3)), np.zeros((H, W)), np.zeros((H, W)))
    colors = primitive_colors(cloud, bw.view_dirs)
    color = bw.composite(colors)
    depth = bw.composite(np.nan_to_num(bw.depth)[:, None])[..., 0]
    alpha = bw.weight_sum()
    return RenderOutput(np.clip(color, 0.0, 1.0), np.maximum(depth, 0.0), np.clip(alpha, 0.0, 1.0))


def object_weight_maps(weights: BlendWeights, labels, n_labels):
    """Per-label accumulated weight images ``(n_labels, H, W)``."""
    labels = np.asarray(labels)
    out = np.zeros((n_labels, weights.height * weights.width))
    lab = labels[weights.prim]
    for k in range(n_labels):
        sel = lab == k
        out[k] = np.bincount(weights.pixel[sel], weights.weight[sel], minlength=out.shape[1])
    return out.reshape(n_labels, weights.height, weights.width)


# ---------------------------------------------------------------------------
# unprojection
# ---------------------------------------------------------------------------


def unproject_points(uv, depths, cam: Camera):
    """World points for pixel coordinates ``(N, 2)`` at camera-space depths ``(N,)``."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depths, dtype=np.float64).reshape(-1)
    rays = np.stack([(uv[:, 0] - cam.cx) / cam.fx, (uv[:, 1] - cam.cy) / cam.fy, np.ones(len(uv))], axis=1)
    return (rays * d[:, None] - cam.t) @ cam.R


def depth_at(depth_map, uv):
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    col = np.clip(np.round(uv[:, 0]).astype(int), 0, depth_map.shape[1] - 1)
    row = np.clip(np.round(uv[:, 1]).astype(int), 0, depth_map.shape[0] - 1)
    return depth_map[row, col]


def unproject(u, depth_map, cam: Camera):
    """World point seen at pixel ``u = (x, y)`` using the depth stored at that pixel."""
    d = float(depth_at(depth_map, u)[0])
    if not d > 0:
        raise NoDepthError(f"no depth at pixel {tuple(np.asarray(u).tolist())}")
    return unproject_points(u, [d], cam)[0]


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def gradient_votes(cloud: SplatCloud, cams, masks):
    """Signed vote per primitive: +w for in-mask pixels, -w elsewhere, summed over views."""
    cams, masks = list(cams), list(masks)
    if len(cams) != len(masks):
        raise ValueError(f"{len(cams)} cameras but {len(masks)} masks")
    votes = np.zeros(len(cloud))
    for cam, mask in zip(cams, masks):
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != cam.shape:
            raise ValueError(f"mask shape {mask.shape} does not match camera {cam.shape}")
        bw = render_weights(cloud, cam)
        sign = np.where(mask.reshape(-1)[bw.pixel], 1.0, -1.0)
        votes += np.bincount(bw.prim, bw.weight * sign, minlength=len(cloud))
    return votes


def gradient_vote_segment(cloud: SplatCloud, cams, masks):
    """Indices of primitives with a strictly positive vote."""
    return np.flatnonzero(gradient_votes(cloud, cams, masks) > 0)
