import itertools
import warnings

import numpy as np
import pytest
from scipy.spatial import Delaunay
from skimage.draw import disk

from splatalign.synthbench import camera_ring
from splatalign.viewsel import hull_pixel_count, q_shape, q_view, select_views


def hull_oracle(mask):
    """Pixel centres inside the triangulated hull of the foreground centres."""
    ys, xs = np.nonzero(mask)
    tri = Delaunay(np.column_stack([xs, ys]).astype(float))
    gy, gx = np.mgrid[: mask.shape[0], : mask.shape[1]]
    return int(np.count_nonzero(tri.find_simplex(np.column_stack([gx.ravel(), gy.ravel()]), tol=1e-9) >= 0))


def ring(n=8):
    return camera_ring(n, 2.0, 0.0, 50.0, 32, 32, target=(0, 0, 0))


# -- q_shape ----------------------------------------------------------------


def test_rectangle_is_one():
    m = np.zeros((30, 40), bool)
    m[5:20, 8:33] = True
    assert q_shape(m) == 1.0


def test_disk_is_nearly_one():
    for r in (5, 12, 30):
        m = np.zeros((80, 80), bool)
        m[disk((40, 40), r)] = True
        assert 0.98 <= q_shape(m) <= 1.0


def test_two_squares_against_hull_oracle():
    m = np.zeros((100, 100), bool)
    m[:10, :10] = True
    m[90:, 90:] = True
    expected = 200 / hull_oracle(m)
    assert q_shape(m) == pytest.approx(expected, abs=1e-12)
    assert 0.1 < q_shape(m) < 0.12


def test_hull_count_random_masks(rng):
    for _ in range(10):
        m = rng.uniform(size=(25, 30)) > 0.97
        m[3, 4] = m[20, 25] = m[10, 2] = True  # guarantee a 2D hull
        assert hull_pixel_count(m) == hull_oracle(m)


def test_degenerate_masks():
    line = np.zeros((10, 10), bool)
    line[4, 2:8] = True
    assert q_shape(line) == 1.0
    single = np.zeros((5, 5), bool)
    single[2, 2] = True
    assert q_shape(single) == 1.0
    with pytest.raises(ValueError):
        q_shape(np.zeros((4, 4), bool))


# -- q_view -----------------------------------------------------------------


def test_q_view_colocated_is_zero():
    cams = ring()
    assert q_view(cams[0], [cams[0]], cams) == pytest.approx(0.0, abs=1e-9)


def test_q_view_antipodal_is_one():
    cams = ring()
    assert q_view(cams[4], [cams[0]], cams) == pytest.approx(1.0, abs=1e-9)


def test_q_view_ring_argmax_is_antipodal():
    cams = ring()
    for s in range(8):
        scores = [q_view(c, [cams[s]], cams) for c in cams]
        assert int(np.argmax(scores)) == (s + 4) % 8
        assert all(0.0 <= v <= 1.0 + 1e-12 for v in scores)


def test_q_view_needs_selection():
    cams = ring()
    with pytest.raises(ValueError):
        q_view(cams[0], [], cams)


# -- select_views -----------------------------------------------------------


def _masks(n, shape=(32, 32)):
    m = np.zeros(shape, bool)
    m[8:24, 8:24] = True
    return [m.copy() for _ in range(n)]


def min_spread(cams, idx):
    pos = np.array([cams[i].center for i in idx])
    return min(np.linalg.norm(pos[a] - pos[b]) for a, b in itertools.combinations(range(len(idx)), 2))


def test_ring_triple_matches_exhaustive_best():
    cams = ring(8)
    masks = _masks(8)
    chosen = select_views(masks, cams, 3)
    # with equal masks the two lowest indices are discarded (ties by index)
    survivors = list(range(2, 8))
    assert set(chosen) <= set(survivors)
    best = max(min_spread(cams, t) for t in itertools.combinations(survivors, 3))
    assert min_spread(cams, chosen) == pytest.approx(best, abs=1e-12)


def test_k1_picks_best_shape():
    cams = ring(5)
    masks = _masks(5)
    for i in (0, 1, 2, 4):
        masks[i][8:12, 24:30] = True  # L shapes: q_shape below one
    masks[3][8:24, 24:30] = True  # still a rectangle
    assert select_views(masks, cams, 1) == [3]
    _, scores = select_views(masks, cams, 1, return_scores=True)
    assert scores[3].q_shape == 1.0


def test_discard_leaves_seven_of_ten():
    cams = ring(10)
    masks = []
    for i in range(10):
        m = np.zeros((32, 32), bool)
        m[4:4 + 2 * (i + 1) // 2 + 2, 4:20] = True
        masks.append(m)
    with pytest.warns(RuntimeWarning):
        chosen = select_views(masks, cams, 10)
    assert len(chosen) == 7 and set(chosen) == set(range(3, 10))


def test_prefix_and_scores():
    cams = ring(12)
    masks = _masks(12)
    full, scores = select_views(masks, cams, 6, return_scores=True)
    for k in range(1, 6):
        assert select_views(masks, cams, k) == full[:k]
    for s in scores.values():
        assert s.q_total == pytest.approx(0.5 * s.q_shape + 0.5 * s.q_view)


def test_permutation_stable(rng):
    cams = ring(9)
    masks = []
    for i in range(9):
        m = np.zeros((32, 32), bool)
        m[4:28, 4:4 + 3 + 2 * i] = True
        m[4:10, 4:6] = i % 2 == 0  # vary the shape score a little
        masks.append(m)
    base = select_views(masks, cams, 4)
    perm = rng.permutation(9)
    again = select_views([masks[i] for i in perm], [cams[i] for i in perm], 4)
    assert sorted(perm[again].tolist()) == sorted(base)


def test_errors():
    cams = ring(4)
    with pytest.raises(ValueError):
        select_views(_masks(4), cams, 0)
    with pytest.raises(ValueError):
        select_views(_masks(3), cams, 2)
    with pytest.raises(ValueError):
        select_views([np.zeros((8, 8), bool)] * 4, cams, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert len(select_views(_masks(4), cams, 3)) == 3
