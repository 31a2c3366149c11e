import numpy as np
import pytest

from conftest import axis_camera, random_cloud
from splatalign.core import AnisotropicTransform, SplatCloud, random_rotation
from splatalign.correspond import (
    Corr3D,
    FileProvider,
    Match2D,
    OracleProvider,
    RenderMatchProvider,
    crop_and_pad,
    crop_to_original,
    lift_matches,
    mutual_nn_match,
    original_to_crop,
    pairs_to_arrays,
    subsample_views,
    synth_correspondences,
)
from splatalign.io import save_correspondences
from splatalign.render import render_weights


def one_hot_map(h, w):
    return np.eye(h * w).reshape(h, w, h * w)


# -- mutual nearest neighbours ----------------------------------------------


def test_identity_one_hot():
    f = one_hot_map(3, 4)
    m = mutual_nn_match(f, f, np.ones((3, 4), bool), top_k=100)
    assert len(m) == 12
    assert all(a.u_gen == a.u_par and a.confidence == pytest.approx(1.0) for a in m)


def test_permutation_recovered(rng):
    h, w, d = 6, 7, 16
    f_gen = rng.normal(size=(h, w, d))
    perm = rng.permutation(h * w)
    f_par = np.empty_like(f_gen).reshape(-1, d)
    f_par[perm] = f_gen.reshape(-1, d)
    f_par = f_par.reshape(h, w, d)
    m = mutual_nn_match(f_gen, f_par, np.ones((h, w), bool), top_k=h * w)
    assert len(m) == h * w
    for a in m:
        g = int(a.u_gen[1]) * w + int(a.u_gen[0])
        p = int(a.u_par[1]) * w + int(a.u_par[0])
        assert p == perm[g]


def test_duplicate_descriptor_not_mutual():
    # two gen pixels share one descriptor; the par pixel can only be mutual with one
    f_gen = np.array([[[1.0, 0], [1.0, 0], [0, 1.0]]])
    f_par = np.array([[[1.0, 0], [0, 1.0]]])
    m = mutual_nn_match(f_gen, f_par, np.ones((1, 2), bool))
    pairs = sorted((a.u_gen, a.u_par) for a in m)
    assert pairs == [((0.0, 0.0), (0.0, 0.0)), ((2.0, 0.0), (1.0, 0.0))]


def test_empty_mask():
    f = one_hot_map(2, 2)
    assert mutual_nn_match(f, f, np.zeros((2, 2), bool)) == []


def test_top_k_sorted_by_confidence(rng):
    f_gen = rng.normal(size=(5, 5, 8))
    f_par = f_gen + rng.normal(scale=0.3, size=f_gen.shape)
    m = mutual_nn_match(f_gen, f_par, np.ones((5, 5), bool), top_k=7)
    conf = [a.confidence for a in m]
    assert len(m) <= 7 and conf == sorted(conf, reverse=True)


def test_mutuality_exhaustive(rng):
    f_gen = rng.normal(size=(4, 5, 3))
    f_par = rng.normal(size=(5, 4, 3))
    mask = rng.uniform(size=(5, 4)) > 0.3
    m = mutual_nn_match(f_gen, f_par, mask, top_k=1000)
    G = f_gen.reshape(-1, 3) / np.linalg.norm(f_gen.reshape(-1, 3), axis=1, keepdims=True)
    P = f_par.reshape(-1, 3) / np.linalg.norm(f_par.reshape(-1, 3), axis=1, keepdims=True)
    sim = G @ P.T
    sim[:, ~mask.reshape(-1)] = -np.inf
    expected = {(g, int(np.argmax(sim[g]))) for g in range(len(G)) if int(np.argmax(sim[:, np.argmax(sim[g])])) == g}
    got = {(int(a.u_gen[1]) * 5 + int(a.u_gen[0]), int(a.u_par[1]) * 4 + int(a.u_par[0])) for a in m}
    assert got == expected
    for a in m:
        g = int(a.u_gen[1]) * 5 + int(a.u_gen[0])
        p = int(a.u_par[1]) * 4 + int(a.u_par[0])
        assert a.confidence == pytest.approx(sim[g, p])


# -- lifting ----------------------------------------------------------------


def test_lift_identity_depths(rng):
    cam = axis_camera()
    depth = rng.uniform(1, 3, size=cam.shape)
    matches = [Match2D((c, r), (c, r), 1.0) for c, r in [(3, 4), (10, 20), (40, 30)]]
    res = lift_matches(matches, depth, depth, cam)
    assert res.dropped == 0
    for p in res.pairs:
        assert np.array_equal(p.p_gen, p.p_par)


def test_lift_all_zero_depth():
    cam = axis_camera()
    matches = [Match2D((1, 1), (2, 2), 1.0), Match2D((3, 3), (4, 4), 0.5)]
    res = lift_matches(matches, np.zeros(cam.shape), np.ones(cam.shape), cam)
    assert res.pairs == [] and res.dropped == 2


def _plane(z, n=30, half=0.5, shift=0.0):
    g = np.linspace(-half, half, n)
    x, y = np.meshgrid(g, g)
    means = np.column_stack([x.ravel() + shift, y.ravel(), np.full(x.size, z)])
    s = 1.2 * (2 * half / (n - 1))
    return SplatCloud(means, np.tile([1.0, 0, 0, 0], (x.size, 1)), np.tile([s, s, 0.1 * s], (x.size, 1)),
                      np.full(x.size, 0.95), np.zeros((x.size, 1, 3)))


def test_lift_render_unproject_oracle():
    cam = axis_camera(64, 48, 60.0)
    gen, par = _plane(2.0, n=50, half=1.3), _plane(2.5, n=50, half=1.6, shift=0.05)
    dmaps = []
    for c in (gen, par):
        bw = render_weights(c, cam)
        a = bw.weight_sum()
        d = bw.composite(np.nan_to_num(bw.depth)[:, None])[..., 0]
        dmaps.append(np.where(a > 0.5, d / np.maximum(a, 1e-12), 0.0))
    matches = [Match2D((c, r), (c + 1, r), 1.0) for c in range(12, 50, 6) for r in range(8, 40, 6)]
    res = lift_matches(matches, dmaps[0], dmaps[1], cam)
    assert res.dropped == 0 and len(res.pairs) == len(matches)
    P, Q = pairs_to_arrays(res.pairs)
    # each lifted point lies on its plane within two pixel footprints
    assert np.abs(P[:, 2] - 2.0).max() < 2 * 2.0 / cam.fx
    assert np.abs(Q[:, 2] - 2.5).max() < 2 * 2.5 / cam.fx
    # and reprojects to its source pixel
    uv, _ = cam.project(P)
    assert np.abs(uv - np.array([m.u_gen for m in matches])).max() < 0.5


# -- synthetic pairs --------------------------------------------------------


def test_synth_identity_and_translation(rng):
    cloud = random_cloud(rng, 50)
    pairs = synth_correspondences(cloud, AnisotropicTransform.identity(), 40, seed=3)
    P, Q = pairs_to_arrays(pairs)
    assert np.array_equal(P, Q)
    t = np.array([0.1, -0.2, 0.3])
    P, Q = pairs_to_arrays(synth_correspondences(cloud, AnisotropicTransform(np.eye(3), t, np.ones(3), np.eye(3)), 40))
    # exact up to the rounding of one addition
    assert np.abs(Q - P - t).max() <= 4 * np.finfo(float).eps


def test_synth_exact_action(rng):
    cloud = random_cloud(rng, 50)
    T = AnisotropicTransform(random_rotation(rng), rng.normal(size=3), [1.2, 0.8, 1.1], random_rotation(rng))
    P, Q = pairs_to_arrays(synth_correspondences(cloud, T, 100, seed=1))
    assert np.abs(T.apply(P) - Q).max() < 1e-12


def test_synth_outlier_count_and_determinism(rng):
    cloud = random_cloud(rng, 80)
    T = AnisotropicTransform.identity()
    pairs, out = synth_correspondences(cloud, T, 100, outlier_fraction=0.3, seed=9, return_outliers=True)
    assert out.sum() == 30
    P, Q = pairs_to_arrays(pairs)
    assert np.all(np.any(P[out] != Q[out], axis=1)) and np.array_equal(P[~out], Q[~out])
    again, out2 = synth_correspondences(cloud, T, 100, outlier_fraction=0.3, seed=9, return_outliers=True)
    assert np.array_equal(pairs_to_arrays(again)[1], Q) and np.array_equal(out, out2)


def test_synth_rejects_small_n(rng):
    with pytest.raises(ValueError):
        synth_correspondences(random_cloud(rng, 5), AnisotropicTransform.identity(), 2)


# -- crop / subsample -------------------------------------------------------


def test_crop_full_mask():
    img = np.ones((20, 30))
    c = crop_and_pad(img, np.ones((20, 30), bool))
    assert c.offset == (-200, -200) and c.image.shape == (420, 430)


def test_crop_small_mask():
    mask = np.zeros((50, 50), bool)
    mask[5:15, 5:15] = True
    c = crop_and_pad(np.ones((50, 50, 3)), mask)
    assert c.image.shape == (410, 410, 3)


def test_crop_roundtrip(rng):
    for _ in range(10):
        mask = np.zeros((40, 60), bool)
        r, q = rng.integers(0, 30), rng.integers(0, 50)
        mask[r:r + 5, q:q + 7] = True
        img = rng.uniform(size=(40, 60))
        c = crop_and_pad(img, mask, pad=7)
        uv = np.column_stack([rng.integers(q, q + 7, 5), rng.integers(r, r + 5, 5)]).astype(float)
        back = crop_to_original(original_to_crop(uv, c.offset), c.offset)
        assert np.array_equal(back, uv)
        cu = original_to_crop(uv, c.offset).astype(int)
        assert np.array_equal(c.image[cu[:, 1], cu[:, 0]], img[uv[:, 1].astype(int), uv[:, 0].astype(int)])
    with pytest.raises(ValueError):
        crop_and_pad(np.ones((4, 4)), np.zeros((4, 4), bool))


def test_subsample_views():
    assert subsample_views(10) == list(range(10))
    assert subsample_views(150) == list(range(0, 150, 10))
    s = subsample_views(151)
    assert len(s) == 16 and s[1] == 10


# -- providers --------------------------------------------------------------


def test_oracle_provider(rng):
    cloud = random_cloud(rng, 30)
    targets = cloud.means + 1.0
    prov = OracleProvider(targets, indices=[1, 5, 7])
    P, Q = pairs_to_arrays(prov(cloud))
    assert np.array_equal(P, cloud.means[[1, 5, 7]]) and np.array_equal(Q, targets[[1, 5, 7]])


def test_file_provider(tmp_path):
    pairs = [Corr3D(np.array([0.0, 0, i]), np.array([1.0, 0, i])) for i in range(4)]
    save_correspondences(tmp_path / "it1_a.json", pairs[:2])
    save_correspondences(tmp_path / "it1_b.json", pairs[2:])
    prov = FileProvider(str(tmp_path / "it{iteration}_*.json"))
    got = prov(iteration=1)
    assert len(got) == 4
    assert prov(iteration=2) == []


def test_render_match_provider_identity():
    cloud = _plane(2.0, n=24)
    cam = axis_camera()
    mask = render_weights(cloud, cam).weight_sum() > 0.5
    prov = RenderMatchProvider(np.arange(len(cloud)), np.arange(len(cloud)), top_k=16)
    pairs = prov(cloud, cloud, [cam], [mask])
    P, Q = pairs_to_arrays(pairs)
    assert len(pairs) == 16
    assert np.abs(P - Q).max() < 1e-12
