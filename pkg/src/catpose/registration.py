"""Similarity-transform fitting between NOCS coordinates and observed points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, FitFailureError, InvalidInputError
from .geometry import SimilarityTransform, as_points, bbox_diameter

RANK_TOL = 1e-10
EARLY_EXIT_RATIO = 0.95
MAX_REFITS = 10


@dataclass(frozen=True)
class CorrespondenceSet:
    src: np.ndarray  # NOCS coordinates
    dst: np.ndarray  # observed camera-frame points, meters

    def __post_init__(self):
        src = as_points(self.src, "src")
        dst = as_points(self.dst, "dst")
        if len(src) != len(dst):
            raise InvalidInputError(f"src has {len(src)} points but dst has {len(dst)}")
        if len(src) < 3:
            raise InvalidInputError(f"need at least 3 correspondences, got {len(src)}")
        object.__setattr__(self, "src", src)
        object.__setattr__(self, "dst", dst)

    def __len__(self):
        return len(self.src)


@dataclass(frozen=True)
class RansacParams:
    sample_size: int = 5
    max_iterations: int = 128
    inlier_fraction_of_diameter: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise InvalidInputError("sample_size must be >= 3")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")
        if not 0.0 < self.inlier_fraction_of_diameter < 1.0:
            raise InvalidInputError("inlier_fraction_of_diameter must lie in (0, 1)")


@dataclass(frozen=True)
class PoseFitResult:
    transform: SimilarityTransform
    inlier_mask: np.ndarray
    iterations_run: int
    inlier_rms: float
    threshold: float

    @property
    def num_inliers(self) -> int:
        return int(self.inlier_mask.sum())


def _is_degenerate(src_centered: np.ndarray) -> bool:
    sv = np.linalg.svd(src_centered, compute_uv=False)
    return sv[0] <= 0.0 or sv[1] <= RANK_TOL * sv[0]


def _umeyama(src: np.ndarray, dst: np.ndarray) -> SimilarityTransform:
    n = len(src)
    mu_src = src.mean(axis=0)
    mu_dst = dst.mean(axis=0)
    xs = src - mu_src
    xd = dst - mu_dst
    if _is_degenerate(xs):
        raise DegenerateConfigurationError("source points are collinear or coincident")
    var_src = np.sum(xs * xs) / n
    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.matrix_rank(cov, tol=RANK_TOL * max(D[0], 1e-300)) >= 3:
        if np.linalg.det(cov) < 0:
            S[2] = -1.0
    elif np.linalg.det(U) * np.linalg.det(Vt) < 0:
        # rank 2 (planar) case
        S[2] = -1.0
    R = U @ np.diag(S) @ Vt
    scale = float(np.dot(D, S) / var_src)
    t = mu_dst - scale * R @ mu_src
    return SimilarityTransform(scale, R, t)


def umeyama(corr: CorrespondenceSet) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``corr.src`` onto ``corr.dst``.

    Proper rotations only: a reflection in the cross-covariance is corrected by
    flipping the sign of the smallest singular direction.
    """
    return _umeyama(corr.src, corr.dst)


def residuals(T: SimilarityTransform, corr: CorrespondenceSet) -> np.ndarray:
    return np.linalg.norm(corr.dst - T.apply(corr.src), axis=1)


def _rms(r: np.ndarray) -> float:
    return float(np.sqrt(np.mean(r * r))) if len(r) else float("inf")


def ransac_fit(corr: CorrespondenceSet, params: RansacParams = RansacParams()) -> PoseFitResult:
    """Robust similarity fit: seeded minimal-sample hypotheses, then a refit on inliers.

    A point is an inlier when its residual is at most
    ``inlier_fraction_of_diameter * bbox_diameter(dst)``. The best hypothesis has
    the most inliers, then the lowest inlier RMS, then the lowest index. Its
    inliers are refit, and the refit repeats on the new inlier set until that
    set stops changing. The returned mask is recomputed under the final transform.
    """
    n = len(corr)
    k = params.sample_size
    if n < k:
        raise InvalidInputError(f"need at least {k} correspondences, got {n}")
    threshold = params.inlier_fraction_of_diameter * bbox_diameter(corr.dst)
    rng = np.random.default_rng(params.seed)
    # draw the whole hypothesis sequence up front so early exit cannot shift it
    samples = [rng.choice(n, size=k, replace=False) for _ in range(params.max_iterations)]

    best_key = None
    best = None
    iterations = 0
    for i, idx in enumerate(samples):
        iterations = i + 1
        try:
            T = _umeyama(corr.src[idx], corr.dst[idx])
        except DegenerateConfigurationError:
            continue
        r = residuals(T, corr)
        mask = r <= threshold
        count = int(mask.sum())
        key = (-count, _rms(r[mask]), i)
        if best_key is None or key < best_key:
            best_key, best = key, (T, mask)
        if count >= EARLY_EXIT_RATIO * n:
            break

    if best is None or -best_key[0] < k:
        attempt = None
        if best is not None:
            T, mask = best
            attempt = PoseFitResult(T, mask, iterations, best_key[1], threshold)
        raise FitFailureError(
            f"no hypothesis reached {k} inliers after {iterations} iterations", best=attempt
        )

    T_fit, mask = best
    # refit until the consensus set is stable; a contaminated minimal sample can
    # carry its own outlier into the first consensus set, the refit expels it
    for _ in range(MAX_REFITS):
        try:
            T_new = _umeyama(corr.src[mask], corr.dst[mask])
        except DegenerateConfigurationError:
            break
        mask_new = residuals(T_new, corr) <= threshold
        if mask_new.sum() < k:
            break
        T_fit, converged = T_new, np.array_equal(mask_new, mask)
        mask = mask_new
        if converged:
            break
    r = residuals(T_fit, corr)
    mask = r <= threshold
    return PoseFitResult(T_fit, mask, iterations, _rms(r[mask]), threshold)
