"""Core geometric types and Gaussian-splat transformation rules.

Clouds are stored as structure-of-arrays and are immutable: every
operation returns a new :class:`SplatCloud`.

Quaternions are ``(w, x, y, z)``. Cameras use the world-to-camera
convention ``X_cam = R @ X_world + t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import polar
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometryError, InvalidRotationError, InvalidScaleError
from .sh import MAX_DEGREE, degree_from_coeffs, num_coeffs, sh_rotate

# ---------------------------------------------------------------------------
# rotation helpers
# ---------------------------------------------------------------------------


def quat_to_matrix(q):
    """Rotation matrices from (possibly unnormalized) ``(..., 4)`` wxyz quaternions."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * (y * y + z * z)
    out[..., 0, 1] = 2 * (x * y - w * z)
    out[..., 0, 2] = 2 * (x * z + w * y)
    out[..., 1, 0] = 2 * (x * y + w * z)
    out[..., 1, 1] = 1 - 2 * (x * x + z * z)
    out[..., 1, 2] = 2 * (y * z - w * x)
    out[..., 2, 0] = 2 * (x * z - w * y)
    out[..., 2, 1] = 2 * (y * z + w * x)
    out[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return out


def matrix_to_quat(R):
    """wxyz quaternion(s) with non-negative w."""
    xyzw = Rotation.from_matrix(np.asarray(R, dtype=np.float64)).as_quat()
    q = np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1)
    return np.where(q[..., :1] < 0, -q, q)


def quat_multiply(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def rotation_angle(R):
    """Rotation angle in radians, accurate near 0 (no arccos cancellation)."""
    R = np.asarray(R, dtype=np.float64)
    sin_part = 0.5 * np.linalg.norm(
        np.stack(
            [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
            axis=-1,
        ),
        axis=-1,
    )
    cos_part = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(sin_part, cos_part)


def rotation_distance(R1, R2):
    """Geodesic distance between rotations."""
    return rotation_angle(np.swapaxes(R1, -1, -2) @ R2)


def axis_angle_matrix(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    return Rotation.from_rotvec(axis / np.linalg.norm(axis) * angle).as_matrix()


def random_rotation(rng):
    q = rng.normal(size=4)
    return quat_to_matrix(q)


def check_rotation(R, tol=1e-6):
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotationError("rotation must be a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > tol or abs(np.linalg.det(R) - 1.0) > tol:
        raise InvalidRotationError("matrix is not a proper rotation (R^T R = I, det = +1)")
    return R


# ---------------------------------------------------------------------------
# splat containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianPrimitive:
    mean: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray

    def covariance(self):
        R = quat_to_matrix(self.rotation)
        return R @ np.diag(np.asarray(self.scale) ** 2) @ R.T


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SplatCloud:
    """An ordered set of 3D Gaussians sharing one SH degree.

    ``sh`` has shape ``(N, (L+1)**2, 3)``; opacity is linear in (0, 1).
    """

    means: np.ndarray
    quats: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        n = len(means)
        quats = np.asarray(self.quats, dtype=np.float64).reshape(n, 4)
        scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        opac = np.asarray(self.opacities, dtype=np.float64).reshape(n)
        sh = np.asarray(self.sh, dtype=np.float64)
        if sh.ndim != 3 or sh.shape[0] != n or sh.shape[2] != 3:
            raise ValueError(f"sh must have shape (N, K, 3), got {sh.shape}")
        degree = degree_from_coeffs(sh.shape[1])
        if degree > MAX_DEGREE:
            raise ValueError(f"SH degree {degree} exceeds {MAX_DEGREE}")
        norms = np.linalg.norm(quats, axis=1)
        if n and (not np.all(np.isfinite(norms)) or norms.min() == 0):
            raise InvalidRotationError("zero or non-finite quaternion")
        if n and np.any(scales <= 0):
            raise InvalidScaleError("all primitive scales must be > 0")
        if n and np.any((opac <= 0) | (opac >= 1)):
            raise ValueError("opacities must lie in the open interval (0, 1)")
        object.__setattr__(self, "means", _frozen(means))
        object.__setattr__(self, "quats", _frozen(quats / norms[:, None] if n else quats))
        object.__setattr__(self, "scales", _frozen(scales))
        object.__setattr__(self, "opacities", _frozen(opac))
        object.__setattr__(self, "sh", _frozen(sh))

    @classmethod
    def empty(cls, sh_degree=0):
        k = num_coeffs(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)))

    @classmethod
    def from_primitives(cls, prims, sh_degree=None):
        prims = list(prims)
        if not prims:
            return cls.empty(sh_degree or 0)
        return cls(
            np.stack([p.mean for p in prims]),
            np.stack([p.rotation for p in prims]),
            np.stack([p.scale for p in prims]),
            np.array([p.opacity for p in prims]),
            np.stack([np.asarray(p.sh).reshape(-1, 3) for p in prims]),
        )

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i):
        return GaussianPrimitive(self.means[i], self.quats[i], self.scales[i], float(self.opacities[i]), self.sh[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def sh_degree(self):
        return degree_from_coeffs(self.sh.shape[1])

    def replace(self, **kw):
        fields = dict(means=self.means, quats=self.quats, scales=self.scales, opacities=self.opacities, sh=self.sh)
        fields.update(kw)
        out = SplatCloud(**fields)
        if "quats" not in kw:
            # skip re-normalisation so untouched orientations stay bit-identical
            object.__setattr__(out, "quats", self.quats)
        return out

    def subset(self, idx):
        idx = np.asarray(idx)
        return SplatCloud(self.means[idx], self.quats[idx], self.scales[idx], self.opacities[idx], self.sh[idx])

    def rotation_matrices(self):
        return quat_to_matrix(self.quats)

    def covariances(self):
        R = self.rotation_matrices()
        RS = R * self.scales[:, None, :]
        return RS @ np.swapaxes(RS, 1, 2)

    def aabb(self):
        return Aabb.from_points(self.means)

    @staticmethod
    def concatenate(clouds):
        clouds = list(clouds)
        return SplatCloud(
            np.concatenate([c.means for c in clouds]),
            np.concatenate([c.quats for c in clouds]),
            np.concatenate([c.scales for c in clouds]),
            np.concatenate([c.opacities for c in clouds]),
            np.concatenate([c.sh for c in clouds]),
        )


# ---------------------------------------------------------------------------
# cameras and transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "R", _frozen(np.asarray(self.R).reshape(3, 3)))
        object.__setattr__(self, "t", _frozen(np.asarray(self.t).reshape(3)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")
        if abs(np.linalg.det(self.R) - 1.0) > 1e-6:
            raise InvalidRotationError("camera rotation must have det = +1")

    @property
    def K(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def center(self):
        return -self.R.T @ self.t

    @property
    def viewdir(self):
        """Optical axis in world coordinates."""
        return self.R[2].copy()

    @property
    def shape(self):
        return (self.height, self.width)

    def world_to_camera(self, points):
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def project(self, points):
        """Pixel coordinates ``(N, 2)`` and camera-space depth ``(N,)``."""
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[..., 0] / z + self.cx
            v = self.fy * pc[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1), z

    def with_pose(self, R, t):
        return Camera(self.fx, self.fy, self.cx, self.cy, self.width, self.height, R, t)

    def to_dict(self):
        return {
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": self.width,
            "height": self.height,
            "R": [float(v) for v in self.R.reshape(-1)],
            "t": [float(v) for v in self.t],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"], np.reshape(d["R"], (3, 3)), d["t"])

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None):
        """Camera at ``eye`` with optical axis towards ``target`` (x right, y down)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        cx = width / 2.0 if cx is None else cx
        cy = height / 2.0 if cy is None else cy
        return cls(fx, fy, cx, cy, width, height, R, -R @ eye)


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise InvalidScaleError(f"similarity scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def linear(self):
        return self.scale * self.rotation

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.linear().T + self.translation

    def compose(self, other):
        """``self ∘ other`` (apply ``other`` first)."""
        return SimilarityTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def inverse(self):
        Rt = self.rotation.T
        return SimilarityTransform(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def to_anisotropic(self):
        return AnisotropicTransform(self.rotation, self.translation, np.full(3, self.scale), np.eye(3))

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
        }


@dataclass(frozen=True)
class AnisotropicTransform:
    """``p -> R @ F.T @ diag(S) @ F @ p + t`` with ``F`` the scaling frame."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: np.ndarray
    frame: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "frame", np.asarray(self.frame, dtype=np.float64).reshape(3, 3))
        if np.any(self.scale <= 0):
            raise InvalidScaleError(f"anisotropic scale must be positive, got {self.scale}")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), np.ones(3), np.eye(3))

    def linear(self):
        return self.rotation @ self.frame.T @ np.diag(self.scale) @ self.frame

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) @ self.linear().T + self.translation

    def inverse(self):
        # (R M)^-1 = M^-1 R^T = R^T (R F^T) S^-1 (F R^T)
        R, F = self.rotation, self.frame
        frame = F @ R.T
        lin = R.T @ frame.T @ np.diag(1.0 / self.scale) @ frame
        return AnisotropicTransform(R.T, -lin @ self.translation, 1.0 / self.scale, frame)

    @classmethod
    def from_affine(cls, A, t):
        """Polar split ``A = R P`` with ``P = F^T diag(S) F`` symmetric positive definite."""
        A = np.asarray(A, dtype=np.float64).reshape(3, 3)
        if not np.linalg.det(A) > 0:
            raise InvalidScaleError("affine map must have positive determinant")
        R, P = polar(A)
        S, V = np.linalg.eigh(0.5 * (P + P.T))
        if np.linalg.det(V) < 0:
            V[:, 0] = -V[:, 0]
        return cls(R, t, S, V.T)

    def compose(self, other):
        """``self ∘ other`` (apply ``other`` first)."""
        A = self.linear() @ other.linear()
        return AnisotropicTransform.from_affine(A, self.linear() @ other.translation + self.translation)

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale.tolist(),
            "frame": self.frame.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["rotation"], d["translation"], d["scale"], d["frame"])


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    @classmethod
    def from_points(cls, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise DegenerateGeometryError("bounding box of an empty point set")
        return cls(points.min(axis=0), points.max(axis=0))

    @property
    def extents(self):
        return self.max - self.min

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    @property
    def volume(self):
        return float(np.prod(self.extents))

    @property
    def mean_dim(self):
        return float(np.mean(self.extents))


# ---------------------------------------------------------------------------
# cloud transformations
# ---------------------------------------------------------------------------


def apply_rotation(cloud: SplatCloud, R) -> SplatCloud:
    """Rotate means, primitive orientations and SH about the origin."""
    R = check_rotation(R)
    q = matrix_to_quat(R)
    return cloud.replace(
        means=cloud.means @ R.T,
        quats=quat_multiply(q, cloud.quats) if len(cloud) else cloud.quats,
        sh=sh_rotate(cloud.sh, R, cloud.sh_degree),
    )


def apply_scale(cloud: SplatCloud, S) -> SplatCloud:
    """Scale means by ``diag(S)`` and primitive scales elementwise.

    The primitive-scale rule is exact only for axis-aligned primitives or
    isotropic ``S``.
    """
    S = np.broadcast_to(np.asarray(S, dtype=np.float64), (3,))
    if not np.all(np.isfinite(S)) or np.any(S <= 0):
        raise InvalidScaleError(f"scale factors must be positive, got {S}")
    return cloud.replace(means=cloud.means * S, scales=cloud.scales * S)


def apply_translation(cloud: SplatCloud, t) -> SplatCloud:
    return cloud.replace(means=cloud.means + np.asarray(t, dtype=np.float64).reshape(3))


def apply_similarity(cloud: SplatCloud, T: SimilarityTransform) -> SplatCloud:
    out = apply_scale(cloud, T.scale)
    out = apply_rotation(out, T.rotation)
    return apply_translation(out, T.translation)


def apply_anisotropic(cloud: SplatCloud, T: AnisotropicTransform) -> SplatCloud:
    """Rotate(F), Scale(S), Rotate(F^T), Rotate(R), Translate(t), in that order."""
    out = apply_rotation(cloud, T.frame)
    out = apply_scale(out, T.scale)
    out = apply_rotation(out, T.frame.T)
    out = apply_rotation(out, T.rotation)
    return apply_translation(out, T.translation)


# ---------------------------------------------------------------------------
# convex hull centroid
# ---------------------------------------------------------------------------


class HullCentroid(NamedTuple):
    centroid: np.ndarray
    degenerate: bool


def convex_hull_centroid(points, strict=False) -> HullCentroid:
    """Volume centroid of the convex hull of ``points``.

    Near-planar or collinear input falls back to the arithmetic mean with
    ``degenerate=True`` unless ``strict`` is set, in which case a
    :class:`DegenerateGeometryError` is raised.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise DegenerateGeometryError("convex hull of an empty point set")
    try:
        if len(pts) < 4:
            raise QhullError("fewer than 4 points")
        hull = ConvexHull(pts)
        ref = pts[hull.vertices].mean(axis=0)
        tri = pts[hull.simplices] - ref
        vols = np.abs(np.einsum("ij,ij->i", tri[:, 0], np.cross(tri[:, 1], tri[:, 2]))) / 6.0
        total = vols.sum()
        scale = np.ptp(pts, axis=0).max()
        if not total > 1e-12 * scale**3:
            raise QhullError("zero-volume hull")
        tet_centroids = ref + tri.sum(axis=1) / 4.0
        return HullCentroid((vols[:, None] * tet_centroids).sum(axis=0) / total, False)
    except QhullError as exc:
        if strict:
            raise DegenerateGeometryError(f"degenerate hull: {exc}") from exc
        warnings.warn("degenerate convex hull; using arithmetic mean", RuntimeWarning, stacklevel=2)
        return HullCentroid(pts.mean(axis=0), True)
