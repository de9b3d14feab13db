import filecmp
import math
import warnings

import numpy as np
import pytest

from catpose import io
from catpose.datagen import (
    PRIOR_POINTS,
    PriorWarning,
    SynthSceneConfig,
    backproject,
    builtin_prior,
    builtin_priors,
    generate_scene,
    handle_mask,
    load_prior,
    mean_embedding,
    perturb_predictions,
    render_depth,
    synth_scenes,
)
from catpose.errors import InvalidInputError
from catpose.evaluation import rotation_error, translation_error
from catpose.geometry import CameraIntrinsics, bbox_diameter, chamfer_distance, geodesic_angle, nocs_normalize
from catpose.registration import CorrespondenceSet, RansacParams, ransac_fit
from catpose.symmetry import CATEGORIES, SymmetryClass

K = CameraIntrinsics(500.0, 500.0, 320.0, 240.0)


def test_backproject_principal_point():
    depth = np.zeros((480, 640), dtype=np.uint16)
    depth[240, 320] = 1000
    pts = backproject(depth, depth > 0, K)
    np.testing.assert_allclose(pts, [[0.0, 0.0, 1.0]])


def test_backproject_similar_triangles():
    depth = np.zeros((480, 1000), dtype=np.uint16)
    depth[240, 820] = 2000
    np.testing.assert_allclose(backproject(depth, depth > 0, K), [[2.0, 0.0, 2.0]])


def test_backproject_counts_and_order():
    depth = np.array([[0, 500, 700], [900, 0, 300]], dtype=np.uint16)
    mask = np.array([[1, 1, 0], [1, 1, 1]], dtype=bool)
    pts = backproject(depth, mask, K)
    assert len(pts) == int(np.sum(mask & (depth > 0)))
    np.testing.assert_allclose(pts[:, 2], [0.5, 0.9, 0.3])
    with pytest.raises(InvalidInputError):
        backproject(depth, np.zeros_like(mask), K)
    with pytest.raises(InvalidInputError):
        backproject(depth, mask[:1], K)


def test_render_backproject_round_trip(rng):
    # fronto-parallel patch: no occlusion, so every loss is pixel/depth quantization
    z = 1.2
    xy = rng.uniform(-0.1, 0.1, (400, 2))
    cloud = np.column_stack([xy, np.full(len(xy), z)])
    depth, labels = render_depth([cloud], K, 640, 480)
    back = backproject(depth, labels == 0, K)
    per_point = (0.5 * z / K.fx) ** 2 + (0.5 * z / K.fy) ** 2 + 0.0005**2
    assert chamfer_distance(cloud, back, "mean") <= 2 * per_point


def test_render_zbuffer_nearest_wins():
    near = np.array([[0.0, 0.0, 1.0]])
    far = np.array([[0.0, 0.0, 2.0]])
    depth, labels = render_depth([far, near], K, 640, 480)
    assert depth[240, 320] == 1000
    assert labels[240, 320] == 1


def test_mean_embedding(rng):
    v = rng.normal(size=8)
    assert np.array_equal(mean_embedding({"can": [v]}, "can"), v)
    np.testing.assert_array_equal(mean_embedding({"can": [v, -v]}, "can"), np.zeros(8))
    Z = rng.normal(size=(13, 6))
    oracle = [sum(Z[i, j] for i in range(13)) / 13 for j in range(6)]
    np.testing.assert_allclose(mean_embedding({"bowl": Z}, "bowl"), oracle, atol=1e-12)
    np.testing.assert_allclose(mean_embedding({"bowl": Z[rng.permutation(13)]}, "bowl"),
                               mean_embedding({"bowl": Z}, "bowl"), atol=1e-12)
    with pytest.raises(InvalidInputError):
        mean_embedding({"bowl": Z}, "mug")


def test_load_prior_warnings(tmp_path, rng):
    good = builtin_prior("can")
    io.write_ply(tmp_path / "good.ply", good)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        np.testing.assert_array_equal(load_prior(tmp_path / "good.ply"), good)
    io.write_ply(tmp_path / "half.ply", good[:512])
    with pytest.warns(PriorWarning, match="512 points"):
        load_prior(tmp_path / "half.ply")
    io.write_ply(tmp_path / "big.ply", 3 * good)
    with pytest.warns(PriorWarning, match="diagonal"):
        load_prior(tmp_path / "big.ply")
    raw = rng.normal(size=(PRIOR_POINTS, 3)) * 4 + 2
    io.write_ply(tmp_path / "renorm.ply", nocs_normalize(raw)[0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_prior(tmp_path / "renorm.ply")


def test_builtin_priors():
    priors = builtin_priors()
    assert set(priors) == set(CATEGORIES)
    for c, p in priors.items():
        assert p.shape == (PRIOR_POINTS, 3)
        assert bbox_diameter(p) == pytest.approx(1.0, abs=0.05)
    assert handle_mask(priors["mug"]).sum() > 20


def test_synth_closed_loop():
    cfg = SynthSceneConfig(num_scenes=3, seed=5)
    for scene in synth_scenes(cfg):
        for inst in scene.instances:
            res = ransac_fit(CorrespondenceSet(inst.src, inst.dst), RansacParams(seed=1))
            T = inst.gt.pose
            assert res.transform.scale == pytest.approx(T.scale, abs=1e-9)
            np.testing.assert_allclose(res.transform.rotation, T.rotation, atol=1e-9)
            np.testing.assert_allclose(res.transform.translation, T.translation, atol=1e-9)


def test_synth_gt_self_consistent():
    cfg = SynthSceneConfig(num_scenes=2, noise_sigma=0.0, seed=9)
    for scene in synth_scenes(cfg):
        for inst in scene.instances:
            np.testing.assert_array_equal(inst.gt.pose.apply(inst.src), inst.dst)


def test_synth_outlier_count():
    cfg = SynthSceneConfig(num_scenes=2, outlier_fraction=0.3, noise_sigma=0.001)
    for scene in synth_scenes(cfg):
        for inst in scene.instances:
            assert inst.outliers.sum() == math.floor(0.3 * len(inst.src))


def test_synth_files_deterministic(tmp_path):
    cfg = SynthSceneConfig(num_scenes=3, outlier_fraction=0.1, noise_sigma=0.002, seed=4)
    synth_scenes(cfg, out_dir=tmp_path / "a", threads=1)
    synth_scenes(cfg, out_dir=tmp_path / "b", threads=3)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert any(f.name == "depth.pgm" for f in files)
    for f in files:
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False), f
    scene = tmp_path / "a" / "scenes" / "0000"
    assert {p.name for p in scene.iterdir()} >= {"depth.pgm", "mask_0.pgm", "gt.json", "corr_0.json"}
    corr = io.load_json(scene / "corr_0.json")
    assert len(corr["outliers"]) == len(corr["src"])
    assert len(io.read_split(tmp_path / "a" / "gt.json")) == 9


def test_synth_default_config_covers_categories():
    scenes = synth_scenes(SynthSceneConfig())
    assert {i.gt.category for s in scenes for i in s.instances} == set(CATEGORIES)


def test_synth_depth_masks_match_instances():
    cfg = SynthSceneConfig(num_scenes=1, seed=2)
    scene = generate_scene(cfg, builtin_priors(), 0)
    for k, inst in enumerate(scene.instances):
        back = backproject(scene.depth, scene.labels == k, cfg.intrinsics)
        # every backprojected pixel comes from this instance's surface, up to quantization
        d = chamfer_distance(back, inst.dst, "mean")
        assert d < 1e-5


@pytest.mark.parametrize("kw", [
    {"num_scenes": 0}, {"outlier_fraction": 1.0}, {"scale_range": (0.3, 0.1)},
    {"translation_range": ((0, 1), (0, 1), (-1, 1))}, {"categories": ("teapot",)},
])
def test_synth_config_validation(kw):
    with pytest.raises(InvalidInputError):
        SynthSceneConfig(**kw)


def test_config_round_trip():
    cfg = SynthSceneConfig(num_scenes=4, categories=("mug", "can"))
    assert SynthSceneConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidInputError):
        SynthSceneConfig.from_dict({"bogus": 1})


def _gts():
    return [i.gt for s in synth_scenes(SynthSceneConfig(num_scenes=4, seed=1)) for i in s.instances]


def test_perturb_zero_is_identity():
    gts = _gts()
    for g, p in zip(gts, perturb_predictions(gts)):
        assert p.pose.to_dict() == g.pose.to_dict()
        assert p.score == 1.0


def test_perturb_exact_errors():
    gts = _gts()
    preds = perturb_predictions(gts, rot_deg=6, trans_cm=3, scale_factor=1.1, seed=3)
    for g, p in zip(gts, preds):
        assert rotation_error(p.pose.rotation, g.pose.rotation, SymmetryClass.ASYMMETRIC) == pytest.approx(6.0, abs=1e-6)
        assert translation_error(p.pose.translation, g.pose.translation) == pytest.approx(3.0, abs=1e-9)
        assert p.pose.scale == pytest.approx(1.1 * g.pose.scale, rel=1e-15)


def test_perturb_symmetric_safe():
    gts = _gts()
    preds = perturb_predictions(gts, rot_deg=40, seed=2, symmetric_safe=True)
    for g, p in zip(gts, preds):
        err = rotation_error(p.pose.rotation, g.pose.rotation, g.symmetry)
        if g.symmetry is SymmetryClass.Y_AXIS_CONTINUOUS:
            assert err == pytest.approx(0.0, abs=1e-9)
        else:
            assert err == pytest.approx(40.0, abs=1e-6)
        assert geodesic_angle(p.pose.rotation, g.pose.rotation) == pytest.approx(math.radians(40), abs=1e-9)
