import numpy as np
import pytest

from conftest import axis_camera, random_camera, random_cloud, single_splat
from splatalign.core import Camera, SplatCloud, apply_rotation, random_rotation
from splatalign.errors import NoDepthError
from splatalign.render import (
    MAX_ALPHA,
    gradient_vote_segment,
    gradient_votes,
    primitive_colors,
    render,
    render_weights,
    unproject,
    unproject_points,
)


def test_empty_cloud():
    cam = axis_camera()
    out = render(SplatCloud.empty(0), cam)
    assert out.color.shape == (48, 64, 3)
    assert not out.alpha.any() and not out.depth.any()


def test_behind_camera_is_blank():
    out = render(single_splat([0, 0, -2.0]), axis_camera())
    assert not out.alpha.any()


def test_single_splat_depth_and_alpha():
    cam = axis_camera()
    out = render(single_splat([0, 0, 2.0], opacity=0.999, scale=0.05), cam)
    r, c = int(cam.cy), int(cam.cx)
    assert 1.99 <= out.depth[r, c] <= 2.01
    assert out.alpha[r, c] > 0.95


def test_single_splat_depth_within_one_percent(rng):
    for _ in range(5):
        cam = random_camera(rng)
        # footprint centre on a pixel sample (samples sit at integer coordinates)
        col, row = int(rng.integers(10, 54)), int(rng.integers(10, 38))
        z = rng.uniform(1.5, 3.5)
        mean = unproject_points([[col, row]], [z], cam)[0]
        out = render(single_splat(mean, scale=0.06), cam)
        assert abs(out.depth[row, col] - z) < 0.01 * z


def test_two_splat_blend_depth():
    cam = axis_camera()
    front = single_splat([0, 0, 1.0], opacity=0.6, scale=0.2)
    back = single_splat([0, 0, 3.0], opacity=0.999, scale=0.6)
    out = render(SplatCloud.concatenate([back, front]), cam)
    r, c = int(cam.cy), int(cam.cx)
    expected = 0.6 * 1 + 0.4 * 0.999 * 3
    assert out.depth[r, c] == pytest.approx(expected, abs=1e-2)
    # front-to-back order regardless of storage order
    px = render_weights(SplatCloud.concatenate([back, front]), cam).per_pixel(r, c)
    assert [i for i, _ in px] == [1, 0]


def test_opaque_weight_equals_clamped_alpha():
    cam = axis_camera()
    bw = render_weights(single_splat([0, 0, 2.0], opacity=0.9999, scale=0.1), cam)
    assert bw.weight.max() == pytest.approx(MAX_ALPHA, abs=1e-4)
    assert bw.weight.max() <= MAX_ALPHA


def test_weights_recompose_render(rng):
    for _ in range(3):
        cloud = random_cloud(rng, 80, degree=2, spread=0.4)
        cam = random_camera(rng)
        bw = render_weights(cloud, cam)
        ref = render(cloud, cam)
        raw = bw.composite(primitive_colors(cloud, bw.view_dirs))
        # the final image is clipped to [0, 1]; compare before and after clipping
        assert np.abs(np.clip(raw, 0, 1) - ref.color).max() < 1e-6
        assert np.abs((bw.matrix() @ primitive_colors(cloud, bw.view_dirs)).reshape(raw.shape) - raw).max() < 1e-9
        assert bw.weight_sum().max() <= 1 + 1e-6
        assert bw.weight.min() >= 0


def test_rigid_equivariance(rng):
    for _ in range(3):
        cloud = random_cloud(rng, 60, degree=0, spread=0.4)
        cam = random_camera(rng)
        R = random_rotation(rng)
        a = render(apply_rotation(cloud, R), cam.with_pose(cam.R @ R.T, cam.t))
        b = render(cloud, cam)
        assert np.abs(a.color - b.color).max() < 1e-4
        assert np.abs(a.depth - b.depth).max() < 1e-4


# -- unprojection -----------------------------------------------------------


def test_unproject_principal_point():
    cam = axis_camera()
    d = np.full(cam.shape, 3.0)
    assert np.allclose(unproject((cam.cx, cam.cy), d, cam), [0, 0, 3.0])


def test_unproject_pinhole_algebra():
    cam = Camera(100, 100, 50, 50, 200, 100)
    depth = np.zeros((100, 200))
    depth[50, 150] = 2.0
    assert np.allclose(unproject((150, 50), depth, cam), [2, 0, 2])


def test_unproject_zero_depth():
    cam = axis_camera()
    with pytest.raises(NoDepthError):
        unproject((3, 3), np.zeros(cam.shape), cam)


def test_unproject_roundtrip(rng):
    for _ in range(20):
        cam = random_camera(rng)
        P = rng.uniform(-0.3, 0.3, size=(10, 3))
        uv, z = cam.project(P)
        assert np.abs(unproject_points(uv, z, cam) - P).max() < 1e-6


# -- gradient voting --------------------------------------------------------


def _two_clusters(rng):
    a = random_cloud(rng, 30, spread=0.08, center=(-0.35, 0, 0), scale=(0.01, 0.02))
    b = random_cloud(rng, 30, spread=0.08, center=(0.35, 0, 0), scale=(0.01, 0.02))
    return SplatCloud.concatenate([a, b])


def _cluster_masks(cloud, cams, idx):
    # the mask is where the cluster's own render has coverage
    return [render(cloud.subset(idx), c).alpha > 1e-3 for c in cams]


def test_full_mask_selects_every_covered_primitive(rng):
    cloud = random_cloud(rng, 40, spread=0.3)
    cam = random_camera(rng)
    covered = np.unique(render_weights(cloud, cam).prim)
    sel = gradient_vote_segment(cloud, [cam], [np.ones(cam.shape, bool)])
    assert np.array_equal(sel, covered)


def test_disjoint_clusters(rng):
    cloud = _two_clusters(rng)
    cams = [Camera.look_at([0, y, -2.5], [0, 0, 0], [0, -1, 0], 60, 60, 96, 48) for y in (-0.5, 0.0, 0.5)]
    masks = _cluster_masks(cloud, cams, np.arange(30))
    sel = gradient_vote_segment(cloud, cams, masks)
    assert np.array_equal(sel, np.arange(30))


def test_empty_masks_select_nothing(rng):
    cloud = random_cloud(rng, 20)
    cam = random_camera(rng)
    assert gradient_vote_segment(cloud, [cam], [np.zeros(cam.shape, bool)]).size == 0


def test_vote_monotone_in_mask(rng):
    cloud = random_cloud(rng, 60, spread=0.3)
    cams = [random_camera(rng) for _ in range(3)]
    masks = [rng.uniform(size=c.shape) > 0.6 for c in cams]
    bigger = [m | (rng.uniform(size=m.shape) > 0.5) for m in masks]
    small = set(gradient_vote_segment(cloud, cams, masks))
    large = set(gradient_vote_segment(cloud, cams, bigger))
    assert small <= large


def test_vote_count_mismatch(rng):
    cam = random_camera(rng)
    with pytest.raises(ValueError):
        gradient_votes(random_cloud(rng, 3), [cam], [])
