"""Anisotropic shape solvers.

``anisotropic_svd`` is the unregularised closed-form baseline for
``argmin sum |R diag(S) p + t - q|^2``. ``anisotropic_regularized`` fits
``R F^T diag(S) F p + t`` with a rotation-angle penalty on ``R``, a
variance penalty on ``S`` and ``S`` squashed into ``(s_min, s_max)`` by a
sigmoid, using Adam on analytic gradients.

Parameter vector used by the regularised solver (14 entries)::

    [0:4]   quaternion of R (normalised on use)
    [4:8]   quaternion of F
    [8:11]  raw scales, s = s_min + (s_max - s_min) * sigmoid(raw)
    [11:14] translation, relative to the source centroid
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import AnisotropicTransform, matrix_to_quat, quat_to_matrix
from ..correspond import pairs_to_arrays
from ..errors import DegenerateGeometryError, InvalidScaleError, RegistrationError
from ..optim import Adam
from .similarity import umeyama


_INITS = ("affine", "pose", "identity")


@dataclass
class ShapeSolverConfig:
    s_min: float = 0.75
    s_max: float = 1.5
    lambda_R: float = 1e-4
    lambda_S: float = 2e-5
    iterations: int = 3000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    init: str = "affine"  # affine | pose | identity, see initial_params

    def __post_init__(self):
        if self.init not in _INITS:
            raise ValueError(f"unknown init {self.init!r}; expected one of {', '.join(_INITS)}")
        if not 0 < self.s_min < self.s_max:
            raise ValueError("need 0 < s_min < s_max")
        if self.lambda_R < 0 or self.lambda_S < 0:
            raise ValueError("regularisation weights must be non-negative")


# ---------------------------------------------------------------------------
# closed-form baseline
# ---------------------------------------------------------------------------


def anisotropic_svd(pairs):
    """Closed-form ``(R, t, S)`` with ``q ~ R diag(S) p + t``.

    The affine least-squares map is split into its polar rotation
    (reflection-corrected) and per-axis scales are re-fit for that rotation.
    Exact on noiseless data. Raises :class:`RegistrationError` when a
    recovered scale is non-positive or non-finite.
    """
    P, Q = pairs_to_arrays(pairs)
    if len(P) < 4:
        raise DegenerateGeometryError("anisotropic SVD needs >= 4 pairs")
    mu_p, mu_q = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - mu_p, Q - mu_q
    At, *_ = np.linalg.lstsq(Pc, Qc, rcond=None)
    A = At.T
    U, _, Vt = np.linalg.svd(A)
    d = np.array([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    R = (U * d) @ Vt
    denom = np.sum(Pc**2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        S = np.sum(Pc * (Qc @ R), axis=0) / denom
    if not np.all(np.isfinite(S)) or np.any(S <= 0):
        raise RegistrationError(f"invalid anisotropic scale {S}", stage="anisotropic_svd")
    t = mu_q - R @ (S * mu_p)
    return R, t, S


# ---------------------------------------------------------------------------
# regularised solver
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bounded_scale(raw, s_min=0.75, s_max=1.5):
    return s_min + (s_max - s_min) * _sigmoid(np.asarray(raw, dtype=np.float64))


def raw_for_scale(s, s_min=0.75, s_max=1.5):
    f = (np.asarray(s, dtype=np.float64) - s_min) / (s_max - s_min)
    return np.log(f) - np.log1p(-f)


def _dR_dq(q):
    """Partials of the (unit-quaternion) rotation formula, shape (4, 3, 3)."""
    w, x, y, z = q
    return 2.0 * np.array(
        [
            [[0, -z, y], [z, 0, -x], [-y, x, 0]],
            [[0, y, z], [y, -2 * x, -w], [z, w, -2 * x]],
            [[-2 * y, x, w], [x, 0, z], [-w, z, -2 * y]],
            [[-2 * z, -w, x], [w, -2 * z, y], [x, y, 0]],
        ]
    )


def _quat_grad(q_raw, g_R, extra=None):
    """Chain ``dE/dR`` (and optional ``dE/dq_hat``) through normalisation."""
    norm = np.linalg.norm(q_raw)
    qh = q_raw / norm
    g = np.einsum("kij,ij->k", _dR_dq(qh), g_R)
    if extra is not None:
        g = g + extra
    return (g - (g @ qh) * qh) / norm


def rotation_penalty(qh):
    """Squared rotation angle of unit quaternion ``qh`` and its gradient in ``qh``."""
    w = abs(qh[0])
    sgn = 1.0 if qh[0] >= 0 else -1.0
    v = qh[1:]
    n = np.linalg.norm(v)
    half = np.arctan2(n, w)
    r2 = n * n + w * w
    f = half / n if n > 1e-12 else 1.0 / max(w, 1e-300)
    grad = np.empty(4)
    grad[0] = -8.0 * f * n * n * sgn / r2
    grad[1:] = 8.0 * f * w * v / r2
    return 4.0 * half * half, grad


def scale_penalty(s):
    dev = s - s.mean()
    return float(dev @ dev), 2.0 * dev


def unpack(params, cfg: ShapeSolverConfig):
    R = quat_to_matrix(params[0:4])
    F = quat_to_matrix(params[4:8])
    s = bounded_scale(params[8:11], cfg.s_min, cfg.s_max)
    return R, F, s, params[11:14]


def shape_objective(params, P, Q, cfg: ShapeSolverConfig):
    """Objective value, its data part and the gradient for centred ``P``.

    ``P`` must already have the source centroid subtracted; ``Q`` is the
    target with the same centroid subtracted.
    """
    R, F, s, t = unpack(params, cfg)
    M = F.T @ (s[:, None] * F)
    A = R @ M
    r = P @ A.T + t - Q
    data = float(np.sum(r * r))
    G = 2.0 * r.T @ P
    g_t = 2.0 * r.sum(axis=0)

    g_R = G @ M
    H = R.T @ G
    g_F = s[:, None] * F @ (H + H.T)
    g_s = np.einsum("ij,jk,ik->i", F, H, F)

    qR = params[0:4] / np.linalg.norm(params[0:4])
    l_r, g_lr = rotation_penalty(qR)
    l_s, g_ls = scale_penalty(s)
    sig = _sigmoid(params[8:11])
    ds_draw = (cfg.s_max - cfg.s_min) * sig * (1.0 - sig)

    grad = np.empty(14)
    grad[0:4] = _quat_grad(params[0:4], g_R, cfg.lambda_R * g_lr)
    grad[4:8] = _quat_grad(params[4:8], g_F)
    grad[8:11] = (g_s + cfg.lambda_S * g_ls) * ds_draw
    grad[11:14] = g_t
    value = data + cfg.lambda_R * l_r + cfg.lambda_S * l_s
    return value, data, grad


def _affine_init(P, Q, params, cfg: ShapeSolverConfig):
    """Fill ``params`` from the polar split of the least-squares affine map.

    Returns False when the fit is rank deficient or reflects.
    """
    sv = np.linalg.svd(P, compute_uv=False)
    if sv[-1] <= 1e-6 * sv[0]:
        return False
    At, *_ = np.linalg.lstsq(P, Q - Q.mean(axis=0), rcond=None)
    try:
        T = AnisotropicTransform.from_affine(At.T, np.zeros(3))
    except InvalidScaleError:
        return False
    lo, hi = cfg.s_min, cfg.s_max
    margin = 1e-3 * (hi - lo)
    S = np.clip(T.scale, lo + margin, hi - margin)
    A = T.rotation @ T.frame.T @ np.diag(S) @ T.frame
    params[0:4] = matrix_to_quat(T.rotation)
    params[4:8] = matrix_to_quat(T.frame)
    params[8:11] = raw_for_scale(S, lo, hi)
    params[11:14] = Q.mean(axis=0) - A @ P.mean(axis=0)
    return True


def initial_params(P, Q, cfg: ShapeSolverConfig, init=None):
    """Starting parameter vector for centred ``P``.

    ``identity``: identity rotation and frame, unit scale, centroid-matching
    translation. ``pose``: ``R``, ``t`` and an isotropic ``S`` from the
    least-squares similarity of the pairs, frame at identity. ``affine``
    (default): ``R``, ``F`` and ``S`` from the polar split of the
    least-squares affine map, with ``S`` clipped into the bounds; falls back
    to ``pose`` when that map is singular or reflecting.
    """
    init = cfg.init if init is None else init
    if init not in _INITS:
        raise ValueError(f"unknown init {init!r}")
    params = np.zeros(14)
    params[0] = 1.0
    params[4] = 1.0
    params[8:11] = raw_for_scale(1.0, cfg.s_min, cfg.s_max)
    params[11:14] = Q.mean(axis=0) - P.mean(axis=0)
    if init == "identity":
        return params
    if init == "affine" and _affine_init(P, Q, params, cfg):
        return params
    try:
        sim = umeyama((P, Q))
    except DegenerateGeometryError:
        return params
    lo, hi = cfg.s_min, cfg.s_max
    margin = 1e-3 * (hi - lo)
    params[0:4] = matrix_to_quat(sim.rotation)
    params[8:11] = raw_for_scale(np.clip(sim.scale, lo + margin, hi - margin), lo, hi)
    params[11:14] = sim.translation
    return params


def anisotropic_regularized(pairs, cfg: ShapeSolverConfig | None = None, return_trace=False, init=None):
    """Fit ``q ~ R F^T diag(S) F p + t`` by Adam on the regularised objective.

    ``init`` overrides ``cfg.init`` (see :func:`initial_params`). Every returned scale lies
    strictly inside ``(s_min, s_max)``.
    """
    cfg = cfg or ShapeSolverConfig()
    P, Q = pairs_to_arrays(pairs)
    if len(P) < 4:
        raise DegenerateGeometryError("regularised shape solver needs >= 4 pairs")
    c = P.mean(axis=0)
    Pc, Qc = P - c, Q - c
    params = initial_params(Pc, Qc, cfg, init)
    opt = Adam(params.shape, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    trace = []
    for it in range(cfg.iterations):
        value, data, grad = shape_objective(params, Pc, Qc, cfg)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise RegistrationError(f"non-finite shape objective at iteration {it}", stage="shape")
        if return_trace:
            trace.append(value)
        params = opt.step(params, grad)
    R, F, s, t = unpack(params, cfg)
    A = R @ F.T @ np.diag(s) @ F
    T = AnisotropicTransform(R, c + t - A @ c, s, F)
    return (T, np.array(trace)) if return_trace else T
