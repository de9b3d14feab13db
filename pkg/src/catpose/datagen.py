"""Depth backprojection, shape priors and a seeded synthetic benchmark generator.

The generator produces ground truth for every stage of the pipeline so that
registration and evaluation can be checked end to end without trained models.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import InvalidInputError
from .evaluation import Detection, GroundTruthInstance
from .geometry import (
    CameraIntrinsics,
    SimilarityTransform,
    as_points,
    axis_angle_rotation,
    bbox_diameter,
    nocs_normalize,
    random_rotation,
    resample,
)
from .symmetry import CATEGORIES, SymmetryClass, y_rotation

PRIOR_POINTS = 1024
# default intrinsics of a 640x480 RGB-D sensor
DEFAULT_INTRINSICS = CameraIntrinsics(591.0125, 590.16775, 322.525, 244.11084)


class PriorWarning(UserWarning):
    pass


# -- depth ---------------------------------------------------------------------

def backproject(depth, mask, k: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points (meters) for masked pixels with nonzero depth, row-major order."""
    depth = np.asarray(depth)
    mask = np.asarray(mask, dtype=bool)
    if depth.ndim != 2 or depth.shape != mask.shape:
        raise InvalidInputError(f"depth {depth.shape} and mask {mask.shape} must be equal 2-D shapes")
    v, u = np.nonzero(mask & (depth > 0))
    if len(v) == 0:
        raise InvalidInputError("no masked pixel has a valid depth")
    z = depth[v, u].astype(np.float64) / 1000.0
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return np.column_stack([x, y, z])


def render_depth(clouds, k: CameraIntrinsics, width: int, height: int):
    """Z-buffer point clouds into a uint16 millimeter depth image.

    Returns ``(depth, labels)`` where ``labels[v, u]`` is the index of the cloud
    owning the pixel, or -1.
    """
    us, vs, zs, owner = [], [], [], []
    for i, pts in enumerate(clouds):
        pts = as_points(pts, allow_empty=True)
        pts = pts[pts[:, 2] > 0]
        u = np.rint(k.fx * pts[:, 0] / pts[:, 2] + k.cx).astype(np.int64)
        v = np.rint(k.fy * pts[:, 1] / pts[:, 2] + k.cy).astype(np.int64)
        zmm = np.rint(pts[:, 2] * 1000.0)
        ok = (u >= 0) & (u < width) & (v >= 0) & (v < height) & (zmm >= 1) & (zmm <= 65535)
        us.append(u[ok])
        vs.append(v[ok])
        zs.append(zmm[ok].astype(np.int64))
        owner.append(np.full(int(ok.sum()), i))
    depth = np.zeros((height, width), dtype=np.uint16)
    labels = np.full((height, width), -1, dtype=np.int64)
    if not us:
        return depth, labels
    u, v, z, o = (np.concatenate(a) for a in (us, vs, zs, owner))
    pix = v * width + u
    order = np.lexsort((o, z, pix))  # nearest first, lower cloud index on ties
    pix, z, o = pix[order], z[order], o[order]
    first = np.ones(len(pix), dtype=bool)
    first[1:] = pix[1:] != pix[:-1]
    depth.reshape(-1)[pix[first]] = z[first]
    labels.reshape(-1)[pix[first]] = o[first]
    return depth, labels


# -- priors and embeddings -----------------------------------------------------

def mean_embedding(embeddings: dict, category: str) -> np.ndarray:
    if category not in embeddings:
        raise InvalidInputError(f"no embeddings for category {category!r}")
    z = np.atleast_2d(np.asarray(embeddings[category], dtype=np.float64))
    return z.sum(axis=0) / len(z)


def load_prior(path) -> np.ndarray:
    """Read a NOCS-frame prior, warning on unusual point count or normalization."""
    pts = io.read_ply(path)
    if len(pts) == 0:
        raise InvalidInputError(f"{path}: prior has no points")
    if len(pts) != PRIOR_POINTS:
        warnings.warn(f"{path}: prior has {len(pts)} points, expected {PRIOR_POINTS}", PriorWarning, stacklevel=2)
    diag = bbox_diameter(pts)
    if abs(diag - 1.0) > 0.05:
        warnings.warn(f"{path}: bounding-box diagonal {diag:.4f} deviates from 1", PriorWarning, stacklevel=2)
    return pts


def _cylinder_side(rng, n, r, y0, y1):
    th = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(th), rng.uniform(y0, y1, n), r * np.sin(th)])


def _disk(rng, n, r, y):
    th = rng.uniform(0, 2 * np.pi, n)
    rho = r * np.sqrt(rng.uniform(0, 1, n))
    return np.column_stack([rho * np.cos(th), np.full(n, y), rho * np.sin(th)])


def _box_surface(rng, n, ext):
    ext = np.asarray(ext, dtype=float)
    areas = np.array([ext[1] * ext[2], ext[0] * ext[2], ext[0] * ext[1]] * 2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    p = rng.uniform(-0.5, 0.5, (n, 3))
    ax = face % 3
    p[np.arange(n), ax] = np.where(face < 3, 0.5, -0.5)
    return p * ext


def _split(n, weights):
    w = np.asarray(weights, dtype=float)
    counts = np.floor(n * w / w.sum()).astype(int)
    counts[0] += n - counts.sum()
    return counts


def _raw_shape(category, rng, n):
    if category == "bottle":
        a, b, c = _split(n, [3.0, 0.6, 0.4])
        return np.vstack([_cylinder_side(rng, a, 0.3, -0.5, 0.25), _cylinder_side(rng, b, 0.1, 0.25, 0.6),
                          _disk(rng, c, 0.3, -0.5)])
    if category == "can":
        a, b, c = _split(n, [2.0, 0.3, 0.3])
        return np.vstack([_cylinder_side(rng, a, 0.33, -0.5, 0.5), _disk(rng, b, 0.33, -0.5),
                          _disk(rng, c, 0.33, 0.5)])
    if category == "bowl":
        d = rng.normal(size=(n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        d[:, 1] = -np.abs(d[:, 1])
        return d * np.array([0.5, 0.3, 0.5])
    if category == "camera":
        a, b = _split(n, [3.0, 1.0])
        body = _box_surface(rng, a, (0.9, 0.6, 0.4))
        lens = _cylinder_side(rng, b, 0.2, 0.0, 0.35)[:, [0, 2, 1]] + np.array([0.1, 0.0, 0.2])
        return np.vstack([body, lens])
    if category == "laptop":
        a, b = _split(n, [1.0, 1.0])
        base = _box_surface(rng, a, (1.0, 0.04, 0.7))
        screen = _box_surface(rng, b, (1.0, 0.7, 0.03))
        ang = np.deg2rad(20.0)
        R = np.array([[1, 0, 0], [0, np.cos(ang), -np.sin(ang)], [0, np.sin(ang), np.cos(ang)]])
        screen = (screen + np.array([0, 0.35, 0])) @ R.T + np.array([0, 0.02, -0.35])
        return np.vstack([base, screen])
    if category == "mug":
        a, b, c = _split(n, [2.2, 0.45, 0.35])
        side = _cylinder_side(rng, a, 0.35, -0.45, 0.45)
        bottom = _disk(rng, b, 0.35, -0.45)
        phi = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, c)
        psi = rng.uniform(0, 2 * np.pi, c)
        ring = 0.22 + 0.04 * np.cos(psi)
        handle = np.column_stack([0.35 + ring * np.cos(phi), ring * np.sin(phi), 0.04 * np.sin(psi)])
        return np.vstack([side, bottom, handle])
    raise InvalidInputError(f"no built-in prior for {category!r}")


def builtin_prior(category: str, n: int = PRIOR_POINTS, seed: int = 0) -> np.ndarray:
    """Procedural NOCS-normalized prior with the symmetry axis along +y."""
    rng = np.random.default_rng([seed, CATEGORIES.index(category)])
    raw = _raw_shape(category, rng, 4 * n)
    normalized, _ = nocs_normalize(raw)
    return resample(normalized, n, seed)


def builtin_priors(seed: int = 0) -> dict:
    return {c: builtin_prior(c, seed=seed) for c in CATEGORIES}


def handle_mask(model) -> np.ndarray:
    """Points in the outer fifth of the +x extent, where a mug prior carries its handle."""
    pts = as_points(model)
    lo, hi = pts[:, 0].min(), pts[:, 0].max()
    return pts[:, 0] >= hi - 0.2 * (hi - lo)


# -- synthetic scenes ----------------------------------------------------------

@dataclass(frozen=True)
class SynthSceneConfig:
    num_scenes: int = 10
    categories: tuple = CATEGORIES
    instances_per_scene: int = 3
    points_per_instance: int = PRIOR_POINTS
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    scale_range: tuple = (0.12, 0.3)
    translation_range: tuple = ((-0.35, 0.35), (-0.25, 0.25), (0.8, 1.4))
    deformation_scale: float = 0.02
    keep_fraction: float = 0.6
    width: int = 640
    height: int = 480
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    seed: int = 0

    def __post_init__(self):
        def bad(msg):
            raise InvalidInputError(f"config: {msg}")

        if self.num_scenes < 1:
            bad("num_scenes must be >= 1")
        if self.instances_per_scene < 1:
            bad("instances_per_scene must be >= 1")
        if self.points_per_instance < 8:
            bad("points_per_instance must be >= 8")
        cats = tuple(self.categories)
        if not cats or any(c not in CATEGORIES for c in cats):
            bad(f"categories must be a nonempty subset of {CATEGORIES}")
        object.__setattr__(self, "categories", cats)
        if not (self.noise_sigma >= 0):
            bad("noise_sigma must be >= 0")
        if not 0.0 <= self.outlier_fraction < 1.0:
            bad("outlier_fraction must lie in [0, 1)")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            bad("scale_range must be positive and ordered")
        tr = tuple(tuple(float(x) for x in r) for r in self.translation_range)
        if len(tr) != 3 or any(len(r) != 2 or r[0] > r[1] for r in tr):
            bad("translation_range must be three ordered (lo, hi) pairs")
        if tr[2][0] <= 0:
            bad("translation z range must be in front of the camera")
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))
        object.__setattr__(self, "translation_range", tr)
        if not 0.0 < self.keep_fraction <= 1.0:
            bad("keep_fraction must lie in (0, 1]")
        if self.deformation_scale < 0:
            bad("deformation_scale must be >= 0")
        if self.width < 1 or self.height < 1:
            bad("image size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> SynthSceneConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"config: unknown keys {sorted(unknown)}")
        d = dict(d)
        if "intrinsics" in d:
            d["intrinsics"] = CameraIntrinsics(**d["intrinsics"])
        if "categories" in d:
            d["categories"] = tuple(d["categories"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidInputError(f"config: {exc}") from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["categories"] = list(self.categories)
        d["scale_range"] = list(self.scale_range)
        d["translation_range"] = [list(r) for r in self.translation_range]
        return d


@dataclass
class SynthInstance:
    gt: GroundTruthInstance
    src: np.ndarray  # NOCS coordinates of observed points
    dst: np.ndarray  # observed camera-frame points
    outliers: np.ndarray
    deformation: np.ndarray


@dataclass
class SynthScene:
    scene_id: str
    instances: list
    depth: np.ndarray
    labels: np.ndarray


def _place(rng, cfg, placed):
    tr = np.array(cfg.translation_range)
    for _ in range(1000):
        s = rng.uniform(*cfg.scale_range)
        t = rng.uniform(tr[:, 0], tr[:, 1])
        if all(np.linalg.norm(t - tj) > 0.6 * (s + sj) for sj, tj in placed):
            return s, t
    raise InvalidInputError("config: cannot place instances without overlap; widen translation_range")


def generate_scene(cfg: SynthSceneConfig, priors: dict, index: int) -> SynthScene:
    rng = np.random.default_rng(cfg.seed ^ index)
    tr = np.array(cfg.translation_range)
    margin = 0.5 * cfg.scale_range[1]
    bounds_lo, bounds_hi = tr[:, 0] - margin, tr[:, 1] + margin
    placed, instances = [], []
    for k in range(cfg.instances_per_scene):
        cat = cfg.categories[(index * cfg.instances_per_scene + k) % len(cfg.categories)]
        Mc = as_points(priors[cat], f"prior[{cat}]")
        W = rng.normal(scale=2.0, size=(3, 3))
        phase = rng.uniform(0, 2 * np.pi, 3)
        D = cfg.deformation_scale * np.sin(Mc @ W + phase)
        M = Mc + D
        extents = 2.0 * np.max(np.abs(M), axis=0)
        R = random_rotation(rng)
        s, t = _place(rng, cfg, placed)
        placed.append((s, t))
        T = SimilarityTransform(s, R, t)

        n = cfg.points_per_instance
        idx = rng.choice(len(M), size=n, replace=len(M) < n)
        view = R.T @ (-t / np.linalg.norm(t)) + 0.3 * rng.normal(size=3)
        proj = M[idx] @ view
        keep = proj >= np.quantile(proj, 1.0 - cfg.keep_fraction)
        src = M[idx][keep]
        dst = T.apply(src) + cfg.noise_sigma * rng.normal(size=src.shape)
        n_out = math.floor(cfg.outlier_fraction * len(src) + 1e-9)
        outliers = np.zeros(len(src), dtype=bool)
        out_idx = rng.choice(len(src), size=n_out, replace=False)
        outliers[out_idx] = True
        dst[out_idx] = rng.uniform(bounds_lo, bounds_hi, size=(n_out, 3))

        handle = None
        if cat == "mug":
            handle = bool(np.any(handle_mask(Mc)[idx][keep]))
        gt = GroundTruthInstance(f"{index:04d}", cat, T, extents, handle)
        instances.append(SynthInstance(gt, src, dst, outliers, D))

    depth, labels = render_depth([inst.dst[~inst.outliers] for inst in instances],
                                 cfg.intrinsics, cfg.width, cfg.height)
    return SynthScene(f"{index:04d}", instances, depth, labels)


def write_scene(scene: SynthScene, root) -> None:
    d = Path(root) / "scenes" / scene.scene_id
    d.mkdir(parents=True, exist_ok=True)
    io.write_pgm(d / "depth.pgm", scene.depth)
    for k, inst in enumerate(scene.instances):
        io.write_pgm(d / f"mask_{k}.pgm", np.where(scene.labels == k, 255, 0).astype(np.uint8))
        io.write_correspondences(
            d / f"corr_{k}.json", inst.src, inst.dst,
            outliers=inst.outliers.tolist(), category=inst.gt.category, instance=k,
        )
        io.write_field(d / f"deform_{k}.json", inst.deformation)
    io.write_split(d / "gt.json", [inst.gt for inst in scene.instances])


def synth_scenes(cfg: SynthSceneConfig, priors: dict | None = None, out_dir=None, threads: int = 1):
    """Generate ``cfg.num_scenes`` scenes; write them under ``out_dir`` if given.

    Each scene uses its own seed ``cfg.seed ^ index`` so output does not depend
    on ``threads``. Returns the list of scenes.
    """
    priors = priors if priors is not None else builtin_priors()
    missing = [c for c in cfg.categories if c not in priors]
    if missing:
        raise InvalidInputError(f"no prior for categories {missing}")

    def one(i):
        scene = generate_scene(cfg, priors, i)
        if out_dir is not None:
            write_scene(scene, out_dir)
        return scene

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scenes = list(pool.map(one, range(cfg.num_scenes)))
    else:
        scenes = [one(i) for i in range(cfg.num_scenes)]

    if out_dir is not None:
        root = Path(out_dir)
        (root / "priors").mkdir(parents=True, exist_ok=True)
        for c in cfg.categories:
            io.write_ply(root / "priors" / f"{c}.ply", priors[c])
        io.dump_json(cfg.to_dict(), root / "config.json")
        io.write_split(root / "gt.json", [inst.gt for sc in scenes for inst in sc.instances])
    return scenes


def perturb_predictions(gts, rot_deg=0.0, trans_cm=0.0, scale_factor=1.0, seed=0,
                        symmetric_safe=False) -> list:
    """Turn ground truth into predictions with exactly controlled errors.

    Rotation error is ``rot_deg`` about a seeded random axis (about y for
    y-symmetric instances when ``symmetric_safe``), translation error is
    ``trans_cm`` in a seeded random direction, and scale is multiplied by
    ``scale_factor``. Scores are 1.
    """
    rng = np.random.default_rng(seed)
    angle = math.radians(rot_deg)
    out = []
    for g in gts:
        axis = rng.normal(size=3)
        direction = rng.normal(size=3)
        if symmetric_safe and g.symmetry is SymmetryClass.Y_AXIS_CONTINUOUS:
            delta = y_rotation(angle)
        else:
            delta = axis_angle_rotation(axis, angle)
        pose = SimilarityTransform(
            g.pose.scale * scale_factor,
            g.pose.rotation @ delta,
            g.pose.translation + (trans_cm / 100.0) * direction / np.linalg.norm(direction),
        )
        out.append(Detection(g.image_id, g.category, 1.0, pose, g.nocs_extents))
    return out
