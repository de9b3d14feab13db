"""Core 3D types, similarity transforms and point-cloud metrics.

Point clouds are plain ``(N, 3)`` float64 arrays. Row order is meaningful:
row ``i`` of a correspondence matrix refers to point ``i`` of the observation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateConfigurationError, InvalidInputError

ROTATION_TOL = 1e-6
BRUTE_FORCE_MAX_POINTS = 2048
_CHUNK = 256


def as_points(points, name="cloud", allow_empty=False) -> np.ndarray:
    """Validate and return ``points`` as a finite ``(N, 3)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidInputError(f"{name}: expected an (N, 3) array, got shape {arr.shape}")
    if not allow_empty and arr.shape[0] == 0:
        raise InvalidInputError(f"{name}: point cloud is empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name}: non-finite coordinates")
    return arr


def is_rotation(R, tol=ROTATION_TOL) -> bool:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        return False
    if np.max(np.abs(R.T @ R - np.eye(3))) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def check_rotation(R, tol=ROTATION_TOL, name="rotation") -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.size == 9:
        R = R.reshape(3, 3)
    if not is_rotation(R, tol):
        raise InvalidInputError(f"{name}: not a proper rotation matrix (tol {tol:g})")
    return R


@dataclass(frozen=True)
class SimilarityTransform:
    """``x -> scale * rotation @ x + translation``."""

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        scale = float(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise InvalidInputError(f"scale must be positive, got {self.scale}")
        R = check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise InvalidInputError("translation must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", R.copy())
        object.__setattr__(self, "translation", t.copy())

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls()

    def apply(self, points) -> np.ndarray:
        pts = as_points(points, allow_empty=True)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self) -> SimilarityTransform:
        inv_s = 1.0 / self.scale
        Rt = self.rotation.T
        return SimilarityTransform(inv_s, Rt, -inv_s * Rt @ self.translation)

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """Transform equivalent to applying ``other`` first, then ``self``."""
        return SimilarityTransform(
            self.scale * other.scale,
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
        )

    def matrix(self) -> np.ndarray:
        """Homogeneous 4x4 matrix."""
        T = np.eye(4)
        T[:3, :3] = self.scale * self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self) -> dict:
        return {
            "scale": self.scale,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> SimilarityTransform:
        try:
            R = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
            return cls(float(d["scale"]), R, np.asarray(d["translation"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed transform record: {exc}") from exc


def transform_points(T: SimilarityTransform, cloud) -> np.ndarray:
    return T.apply(cloud)


def compose(T1: SimilarityTransform, T2: SimilarityTransform) -> SimilarityTransform:
    return T1.compose(T2)


def invert(T: SimilarityTransform) -> SimilarityTransform:
    return T.inverse()


@dataclass(frozen=True)
class OrientedBox3D:
    center: np.ndarray
    rotation: np.ndarray
    extents: np.ndarray  # full side lengths

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        e = np.asarray(self.extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0) or not np.all(np.isfinite(e)):
            raise InvalidInputError(f"box extents must be positive, got {e}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "rotation", check_rotation(self.rotation))
        object.__setattr__(self, "extents", e)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
        local = 0.5 * signs * self.extents
        return local @ self.rotation.T + self.center

    def halfspaces(self):
        """Face planes as ``(normals, offsets)`` with ``normals @ x <= offsets`` inside."""
        axes = self.rotation.T  # rows are box axes in world frame
        half = 0.5 * self.extents
        proj = axes @ self.center
        normals = np.vstack([axes, -axes])
        offsets = np.concatenate([proj + half, -proj + half])
        return normals, offsets


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")


def _nearest_sq_dists_brute(src: np.ndarray, ref: np.ndarray) -> np.ndarray:
    out = np.empty(len(src))
    for start in range(0, len(src), _CHUNK):
        block = src[start:start + _CHUNK]
        diff = block[:, None, :] - ref[None, :, :]
        out[start:start + _CHUNK] = np.min(np.sum(diff * diff, axis=2), axis=1)
    return out


def nearest_sq_dists(src, ref) -> np.ndarray:
    """Squared distance from every point of ``src`` to its nearest neighbour in ``ref``."""
    if len(src) <= BRUTE_FORCE_MAX_POINTS and len(ref) <= BRUTE_FORCE_MAX_POINTS:
        return _nearest_sq_dists_brute(src, ref)
    _, idx = cKDTree(ref).query(src, k=1)
    # same expression as the brute-force path so both agree bit for bit
    diff = src - ref[idx]
    return np.sum(diff * diff, axis=1)


def chamfer_distance(X, Y, normalization: str = "sum") -> float:
    """Symmetric Chamfer distance built from squared nearest-neighbour distances.

    ``"sum"`` adds the two directed sums; ``"mean"`` divides each directed sum by
    the size of the cloud it runs over before adding.
    """
    X = as_points(X, "X")
    Y = as_points(Y, "Y")
    dx = nearest_sq_dists(X, Y)
    dy = nearest_sq_dists(Y, X)
    if normalization == "sum":
        return float(dx.sum() + dy.sum())
    if normalization == "mean":
        return float(dx.sum() / len(X) + dy.sum() / len(Y))
    raise InvalidInputError(f"unknown normalization {normalization!r}")


def bbox_diameter(cloud) -> float:
    """Length of the axis-aligned bounding-box diagonal."""
    pts = as_points(cloud)
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def nocs_normalize(model):
    """Center on the bounding-box center and scale so the box diagonal is 1.

    Returns the normalized cloud and the transform that produced it.
    """
    pts = as_points(model, "model")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    if diag <= 0.0:
        raise DegenerateConfigurationError("model has zero bounding-box diagonal")
    s = 1.0 / diag
    center = 0.5 * (lo + hi)
    T = SimilarityTransform(s, np.eye(3), -s * center)
    # (p - c) * s rounds better than s*p - s*c
    return (pts - center) * s, T


def resample(cloud, n: int, seed: int) -> np.ndarray:
    """Draw exactly ``n`` points: without replacement if possible, else with."""
    pts = as_points(cloud)
    if int(n) != n or n <= 0:
        raise InvalidInputError(f"sample count must be a positive integer, got {n}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pts), size=int(n), replace=len(pts) < n)
    return pts[idx]


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation (Haar measure) via QR of a Gaussian matrix."""
    Q, Rr = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q * np.sign(np.diag(Rr))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Right-handed rotation by ``angle`` radians about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def geodesic_angle(R1, R2) -> float:
    """Angle in radians of the relative rotation ``R1^T R2``.

    Uses ``2 asin(||R1 - R2||_F / sqrt(8))``, which equals
    ``acos((tr(R1^T R2) - 1) / 2)`` but stays accurate near zero.
    """
    d = np.linalg.norm(np.asarray(R1) - np.asarray(R2)) / np.sqrt(8.0)
    return float(2.0 * np.arcsin(min(1.0, d)))
