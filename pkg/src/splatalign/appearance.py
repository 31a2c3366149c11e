"""Colour-only refinement of an aligned cloud against masked training views.

Geometry is frozen, so for every view the rendered image is a fixed linear
function of the SH coefficients: ``x = W (B sh + 0.5)`` with ``W`` the sparse
blend weights and ``B`` the SH basis along each primitive's view direction.
The loss is ``(1 - lam) * L1 + lam * (1 - SSIM) / 2`` over masked pixels and
its gradient is computed in closed form.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .core import SplatCloud
from .errors import NoSignalError
from .optim import Adam
from .render import primitive_basis, render_weights

log = logging.getLogger(__name__)


@dataclass
class AppearanceConfig:
    lam: float = 0.2
    iterations: int = 600
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    c1: float = 0.01**2
    c2: float = 0.03**2
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def gaussian_window(size=11, sigma=1.5):
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _blur(img, win):
    """Separable zero-padded Gaussian filter over the first two axes."""
    out = correlate1d(img, win, axis=0, mode="constant")
    return correlate1d(out, win, axis=1, mode="constant")


class _SsimTerms:
    """Local statistics of an SSIM evaluation, kept for the backward pass."""

    def __init__(self, x, y, win, c1, c2):
        self.x, self.y, self.win = x, y, win
        self.mx, self.my = _blur(x, win), _blur(y, win)
        exx, eyy, exy = _blur(x * x, win), _blur(y * y, win), _blur(x * y, win)
        sxx = exx - self.mx**2
        syy = eyy - self.my**2
        sxy = exy - self.mx * self.my
        self.a1 = 2 * self.mx * self.my + c1
        self.a2 = 2 * sxy + c2
        self.b1 = self.mx**2 + self.my**2 + c1
        self.b2 = sxx + syy + c2
        self.map = self.a1 * self.a2 / (self.b1 * self.b2)

    def backward(self, g_map):
        """Gradient w.r.t. ``x`` of ``sum(g_map * map)``."""
        den = self.b1 * self.b2
        d_mx = (2 * self.my * (self.a2 - self.a1) - 2 * self.mx * self.map * (self.b2 - self.b1)) / den
        d_exx = -self.map / self.b2
        d_exy = 2 * self.a1 / den
        return (
            _blur(g_map * d_mx, self.win)
            + 2 * self.x * _blur(g_map * d_exx, self.win)
            + self.y * _blur(g_map * d_exy, self.win)
        )


def ssim_map(a, b, cfg: AppearanceConfig | None = None):
    """Per-pixel SSIM of ``(H, W)`` or ``(H, W, C)`` images, zero padding at the border."""
    cfg = cfg or AppearanceConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    win = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    return _SsimTerms(a, b, win, cfg.c1, cfg.c2).map


def ssim(a, b, cfg: AppearanceConfig | None = None):
    """Mean SSIM over pixels whose window lies fully inside the image."""
    cfg = cfg or AppearanceConfig()
    m = ssim_map(a, b, cfg)
    r = cfg.ssim_window // 2
    if m.shape[0] <= 2 * r or m.shape[1] <= 2 * r:
        raise ValueError(f"images smaller than the {cfg.ssim_window}px window")
    return float(m[r:-r, r:-r].mean())


# ---------------------------------------------------------------------------
# per-view linear model
# ---------------------------------------------------------------------------


@dataclass
class _View:
    rows: slice
    cols: slice
    shape: tuple  # crop (h, w)
    pix: np.ndarray  # flat crop indices of masked pixels
    W: object  # (n_masked, N) CSR
    B: np.ndarray  # (N, K)
    target: np.ndarray  # (h, w, 3), zero outside the mask
    maskf: np.ndarray  # (h, w, 1) float mask
    n_masked: int


def _prepare_view(cloud: SplatCloud, cam, target, mask, pad):
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    if target.shape[:2] != mask.shape or cam.shape != mask.shape:
        raise ValueError("camera, target and mask sizes disagree")
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return None
    r0, r1 = max(ys.min() - pad, 0), min(ys.max() + pad + 1, H)
    c0, c1 = max(xs.min() - pad, 0), min(xs.max() + pad + 1, W)
    bw = render_weights(cloud, cam)
    full = bw.matrix()
    sub_mask = mask[r0:r1, c0:c1]
    rr, cc = np.nonzero(sub_mask)
    flat_full = (rr + r0) * W + (cc + c0)
    Wv = full[flat_full]
    if Wv.nnz == 0:
        return None
    h, w = sub_mask.shape
    tgt = np.asarray(target, dtype=np.float64)[r0:r1, c0:c1] * sub_mask[..., None]
    return _View(
        rows=slice(r0, r1),
        cols=slice(c0, c1),
        shape=(h, w),
        pix=rr * w + cc,
        W=Wv.tocsr(),
        B=primitive_basis(cloud, bw.view_dirs),
        target=tgt,
        maskf=sub_mask[..., None].astype(np.float64),
        n_masked=len(rr),
    )


def _view_loss(view: _View, sh, cfg: AppearanceConfig, win, need_grad=True):
    colors = np.einsum("nk,nkc->nc", view.B, sh) + 0.5
    vals = view.W @ colors  # (n_masked, 3)
    h, w = view.shape
    x = np.zeros((h * w, 3))
    x[view.pix] = vals
    x = x.reshape(h, w, 3)
    y = view.target
    n = view.n_masked * 3

    diff = x - y
    l1 = float(np.sum(np.abs(diff) * view.maskf)) / n
    terms = _SsimTerms(x, y, win, cfg.c1, cfg.c2)
    s_mean = float(np.sum(terms.map * view.maskf)) / n
    dssim = 0.5 * (1.0 - s_mean)
    total = (1 - cfg.lam) * l1 + cfg.lam * dssim
    if not need_grad:
        return l1, dssim, total, None

    g_x = (1 - cfg.lam) * np.sign(diff) * view.maskf / n
    if cfg.lam:
        g_x = g_x + terms.backward(-0.5 * cfg.lam * np.broadcast_to(view.maskf, x.shape) / n)
    g_vals = g_x.reshape(h * w, 3)[view.pix]
    g_colors = view.W.T @ g_vals  # (N, 3)
    g_sh = view.B[:, :, None] * g_colors[:, None, :]
    return l1, dssim, total, g_sh


class SHLoss:
    """Masked appearance loss of SH coefficients, averaged over views."""

    def __init__(self, cloud: SplatCloud, cams, targets, masks, cfg: AppearanceConfig | None = None):
        self.cfg = cfg or AppearanceConfig()
        self.win = gaussian_window(self.cfg.ssim_window, self.cfg.ssim_sigma)
        pad = self.cfg.ssim_window // 2
        self.views = []
        for cam, tgt, m in zip(cams, targets, masks):
            v = _prepare_view(cloud, cam, np.asarray(tgt, dtype=np.float64), m, pad)
            if v is not None:
                self.views.append(v)
        if not self.views:
            raise NoSignalError("no masked pixel is covered by the cloud in any view")

    def __call__(self, sh, need_grad=True):
        l1 = dssim = total = 0.0
        grad = np.zeros_like(sh) if need_grad else None
        for v in self.views:
            a, b, c, g = _view_loss(v, sh, self.cfg, self.win, need_grad)
            l1, dssim, total = l1 + a, dssim + b, total + c
            if need_grad:
                grad += g
        k = len(self.views)
        if need_grad:
            grad /= k
        return l1 / k, dssim / k, total / k, grad


@dataclass
class RefineResult:
    cloud: SplatCloud
    trace: np.ndarray  # (iterations + 1, 4): iteration, l1, dssim, total


def refine_sh(cloud: SplatCloud, cams, targets, masks, cfg: AppearanceConfig | None = None) -> RefineResult:
    """Optimise only the SH coefficients of ``cloud`` with Adam.

    ``targets`` are the masked training images (linear RGB in [0, 1]).
    Row ``i`` of the trace is the loss before step ``i``; the last row is the
    loss of the returned coefficients, which are the best iterate seen.
    """
    cfg = cfg or AppearanceConfig()
    loss = SHLoss(cloud, cams, targets, masks, cfg)
    sh = np.array(cloud.sh)
    opt = Adam(sh.shape, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    rows = []
    best, best_sh = np.inf, sh
    for it in range(cfg.iterations):
        l1, dssim, total, grad = loss(sh)
        rows.append((it, l1, dssim, total))
        if total < best:
            best, best_sh = total, sh
        sh = opt.step(sh, grad)
    l1, dssim, total, _ = loss(sh, need_grad=False)
    if total < best:
        best, best_sh = total, sh
    else:
        l1, dssim, total, _ = loss(best_sh, need_grad=False)
    rows.append((cfg.iterations, l1, dssim, total))
    log.info("appearance refinement: loss %.6g -> %.6g", rows[0][3], total)
    return RefineResult(cloud.replace(sh=best_sh), np.array(rows, dtype=np.float64))


def write_loss_csv(trace, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "l1", "dssim", "total"])
        for it, l1, dssim, total in trace:
            wr.writerow([int(it), repr(float(l1)), repr(float(dssim)), repr(float(total))])
