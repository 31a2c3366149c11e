import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import axis_camera, random_cloud
from splatalign.core import (
    Aabb,
    AnisotropicTransform,
    Camera,
    SimilarityTransform,
    SplatCloud,
    apply_anisotropic,
    apply_rotation,
    apply_scale,
    apply_similarity,
    apply_translation,
    axis_angle_matrix,
    convex_hull_centroid,
    matrix_to_quat,
    quat_multiply,
    quat_to_matrix,
    random_rotation,
    rotation_angle,
)
from splatalign.errors import DegenerateGeometryError, InvalidRotationError, InvalidScaleError
from splatalign.render import render
from splatalign.sh import eval_sh

seeds = st.integers(0, 2**32 - 1)


# -- quaternions ------------------------------------------------------------


@given(seeds)
@settings(max_examples=50, deadline=None)
def test_quat_matrix_roundtrip(seed):
    R = random_rotation(np.random.default_rng(seed))
    q = matrix_to_quat(R)
    assert abs(np.linalg.norm(q) - 1) < 1e-12
    assert np.allclose(quat_to_matrix(q), R, atol=1e-12)


def test_quat_multiply_matches_matrix_product(rng):
    a, b = rng.normal(size=4), rng.normal(size=4)
    a /= np.linalg.norm(a)
    b /= np.linalg.norm(b)
    assert np.allclose(quat_to_matrix(quat_multiply(a, b)), quat_to_matrix(a) @ quat_to_matrix(b), atol=1e-12)


def test_rotation_angle_axis_angle():
    for ang in (0.0, 0.3, 1.5, 3.0):
        assert rotation_angle(axis_angle_matrix([1, 2, 3], ang)) == pytest.approx(ang, abs=1e-9)


# -- containers -------------------------------------------------------------


def test_cloud_invariants():
    good = dict(means=[[0, 0, 0]], quats=[[2, 0, 0, 0]], scales=[[0.1] * 3], opacities=[0.5], sh=np.zeros((1, 1, 3)))
    c = SplatCloud(**good)
    assert abs(np.linalg.norm(c.quats[0]) - 1) < 1e-9
    with pytest.raises(InvalidScaleError):
        SplatCloud(**{**good, "scales": [[0.1, 0.0, 0.1]]})
    with pytest.raises(ValueError):
        SplatCloud(**{**good, "opacities": [1.0]})
    with pytest.raises(ValueError):
        SplatCloud(**{**good, "sh": np.zeros((1, 3, 3))})  # not (L+1)^2
    with pytest.raises(InvalidRotationError):
        SplatCloud(**{**good, "quats": [[0, 0, 0, 0]]})


def test_cloud_is_read_only(rng):
    c = random_cloud(rng, 5)
    with pytest.raises(ValueError):
        c.means[0, 0] = 1.0


def test_empty_cloud_and_primitive_access(rng):
    e = SplatCloud.empty(3)
    assert len(e) == 0 and e.sh_degree == 3
    c = random_cloud(rng, 4, degree=2)
    p = c[2]
    assert p.sh.shape == (9, 3)
    R = quat_to_matrix(p.rotation)
    assert np.allclose(p.covariance(), R @ np.diag(p.scale**2) @ R.T)
    again = SplatCloud.from_primitives(list(c))
    assert np.array_equal(again.means, c.means) and np.array_equal(again.sh, c.sh)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0, 1, 1, 1, 4, 4)
    with pytest.raises(ValueError):
        Camera(1, 1, 10, 1, 4, 4)
    with pytest.raises(InvalidRotationError):
        Camera(1, 1, 1, 1, 4, 4, np.diag([1.0, 1.0, -1.0]))
    cam = Camera.look_at([0, 0, -3], [0, 0, 0], [0, -1, 0], 50, 50, 40, 30)
    assert np.allclose(cam.center, [0, 0, -3])
    assert np.allclose(cam.viewdir, [0, 0, 1])
    assert Camera.from_dict(cam.to_dict()).to_dict() == cam.to_dict()


# -- apply_rotation ---------------------------------------------------------


def test_apply_rotation_identity(rng):
    c = random_cloud(rng, 20, degree=3)
    out = apply_rotation(c, np.eye(3))
    assert np.allclose(out.means, c.means, atol=1e-15)
    assert np.allclose(out.sh, c.sh, atol=1e-12)
    assert np.allclose(np.abs(np.sum(out.quats * c.quats, axis=1)), 1, atol=1e-12)


def test_apply_rotation_axis_case():
    c = SplatCloud([[1.0, 0, 0]], [[1.0, 0, 0, 0]], [[0.1] * 3], [0.5], np.zeros((1, 1, 3)))
    out = apply_rotation(c, axis_angle_matrix([0, 0, 1], np.pi / 2))
    assert np.abs(out.means[0] - [0, 1, 0]).max() < 1e-12


def test_apply_rotation_rejects_non_rotation(rng):
    c = random_cloud(rng, 3)
    with pytest.raises(InvalidRotationError):
        apply_rotation(c, np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidRotationError):
        apply_rotation(c, 1.1 * np.eye(3))


def test_apply_rotation_covariance_and_sh(rng):
    c = random_cloud(rng, 10, degree=3)
    R = random_rotation(rng)
    out = apply_rotation(c, R)
    assert np.allclose(out.covariances(), R @ c.covariances() @ R.T, atol=1e-12)
    d = rng.normal(size=(10, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # rotated SH seen from R d equals original SH seen from d
    assert np.allclose(eval_sh(out.sh, d @ R.T), eval_sh(c.sh, d), atol=1e-6)


def test_apply_rotation_render_equivariance(rng):
    c = random_cloud(rng, 40, degree=0, spread=0.4, center=(0, 0, 0))
    cam = Camera.look_at([0.3, -0.2, -3.0], [0, 0, 0], [0, -1, 0], 60, 60, 48, 40)
    R = random_rotation(rng)
    rotated = apply_rotation(c, R)
    # camera extrinsic pre-composed with R^T sees the rotated cloud like the original
    cam2 = cam.with_pose(cam.R @ R.T, cam.t)
    a = render(c, cam).color
    b = render(rotated, cam2).color
    assert np.abs(a - b).max() < 1e-4


def test_rotation_composition(rng):
    c = random_cloud(rng, 30, degree=2)
    R1, R2 = random_rotation(rng), random_rotation(rng)
    a = apply_rotation(apply_rotation(c, R1), R2)
    b = apply_rotation(c, R2 @ R1)
    assert np.abs(a.means - b.means).max() < 1e-9
    assert np.abs(a.sh - b.sh).max() < 1e-6


# -- apply_scale / anisotropic ----------------------------------------------


def test_apply_scale_examples():
    c = SplatCloud([[1.0, 1, 1]], [[1.0, 0, 0, 0]], [[0.1] * 3], [0.5], np.zeros((1, 1, 3)))
    same = apply_scale(c, [1, 1, 1])
    assert np.array_equal(same.means, c.means) and np.array_equal(same.scales, c.scales)
    out = apply_scale(c, [2, 2, 2])
    assert np.allclose(out.means, [[2, 2, 2]]) and np.allclose(out.scales, [[0.2] * 3])
    with pytest.raises(InvalidScaleError):
        apply_scale(c, [1, 0, 1])
    with pytest.raises(InvalidScaleError):
        apply_scale(c, [1, -2, 1])


def test_apply_scale_axis_aligned_covariance():
    c = SplatCloud([[0.3, 0.1, -0.2]], [[1.0, 0, 0, 0]], [[0.1, 0.2, 0.3]], [0.5], np.zeros((1, 1, 3)))
    S = np.array([2.0, 1.0, 1.0])
    out = apply_scale(c, S)
    expected = np.diag(S) @ c.covariances()[0] @ np.diag(S)
    assert np.abs(out.covariances()[0] - expected).max() < 1e-10


def test_apply_anisotropic_examples(rng):
    c = random_cloud(rng, 25, degree=1)
    R = random_rotation(rng)
    t = rng.normal(size=3)
    iso = apply_anisotropic(c, AnisotropicTransform(R, t, np.ones(3), np.eye(3)))
    sim = apply_similarity(c, SimilarityTransform(R, t, 1.0))
    assert np.allclose(iso.means, sim.means, atol=1e-12)
    assert np.allclose(iso.covariances(), sim.covariances(), atol=1e-12)

    one = SplatCloud([[1.0, 1, 1]], [[1.0, 0, 0, 0]], [[0.1] * 3], [0.5], np.zeros((1, 1, 3)))
    out = apply_anisotropic(one, AnisotropicTransform(np.eye(3), np.zeros(3), [2, 1, 1], np.eye(3)))
    assert np.allclose(out.means, [[2, 1, 1]])


@given(seeds, st.floats(0.3, 3.0))
@settings(max_examples=40, deadline=None)
def test_isotropic_anisotropic_matches_similarity_action(seed, s):
    r = np.random.default_rng(seed)
    c = random_cloud(r, 10)
    R, t = random_rotation(r), r.normal(size=3)
    out = apply_anisotropic(c, AnisotropicTransform(R, t, [s, s, s], np.eye(3)))
    assert np.allclose(out.means, s * c.means @ R.T + t, atol=1e-9)


def test_apply_anisotropic_means_follow_point_action(rng):
    c = random_cloud(rng, 30)
    T = AnisotropicTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(0.7, 1.4, 3), random_rotation(rng))
    assert np.allclose(apply_anisotropic(c, T).means, T.apply(c.means), atol=1e-12)


def test_transform_inverse_and_compose(rng):
    A = AnisotropicTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(0.7, 1.4, 3), random_rotation(rng))
    B = AnisotropicTransform(random_rotation(rng), rng.normal(size=3), rng.uniform(0.7, 1.4, 3), random_rotation(rng))
    p = rng.normal(size=(20, 3))
    assert np.allclose(A.inverse().apply(A.apply(p)), p, atol=1e-12)
    assert np.allclose(A.compose(B).apply(p), A.apply(B.apply(p)), atol=1e-12)
    S = SimilarityTransform(random_rotation(rng), rng.normal(size=3), 1.7)
    assert np.allclose(S.inverse().apply(S.apply(p)), p, atol=1e-12)
    assert np.allclose(S.to_anisotropic().apply(p), S.apply(p), atol=1e-12)
    assert np.allclose(AnisotropicTransform.from_dict(A.to_dict()).apply(p), A.apply(p))
    with pytest.raises(InvalidScaleError):
        SimilarityTransform(np.eye(3), np.zeros(3), 0.0)


def test_translation():
    c = SplatCloud([[1.0, 2, 3]], [[1.0, 0, 0, 0]], [[0.1] * 3], [0.5], np.zeros((1, 1, 3)))
    assert np.allclose(apply_translation(c, [1, -2, 0.5]).means, [[2, 0, 3.5]])


# -- hull centroid ----------------------------------------------------------

CUBE = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)


def test_hull_centroid_cube():
    res = convex_hull_centroid(CUBE)
    assert not res.degenerate
    assert np.allclose(res.centroid, 0.5, atol=1e-12)


def test_hull_centroid_ignores_interior(rng):
    pts = np.vstack([CUBE, rng.uniform(0.05, 0.3, size=(1000, 3))])
    assert np.abs(convex_hull_centroid(pts).centroid - 0.5).max() < 1e-9


def test_hull_centroid_tetrahedron(rng):
    for _ in range(10):
        tet = rng.normal(size=(4, 3))
        assert np.abs(convex_hull_centroid(tet).centroid - tet.mean(axis=0)).max() < 1e-9


def test_hull_centroid_degenerate(rng):
    flat = np.column_stack([rng.normal(size=(20, 2)), np.zeros(20)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = convex_hull_centroid(flat)
    assert res.degenerate
    assert np.allclose(res.centroid, flat.mean(axis=0))
    with pytest.raises(DegenerateGeometryError):
        convex_hull_centroid(flat, strict=True)


def test_aabb(rng):
    pts = rng.normal(size=(50, 3))
    box = Aabb.from_points(pts)
    assert np.all(box.min <= box.max)
    assert box.mean_dim == pytest.approx(np.mean(pts.max(0) - pts.min(0)))
    with pytest.raises(DegenerateGeometryError):
        Aabb.from_points(np.zeros((0, 3)))


def test_axis_camera_helper():
    cam = axis_camera()
    uv, z = cam.project([[0, 0, 2.0]])
    assert np.allclose(uv, [[cam.cx, cam.cy]]) and z[0] == 2.0
