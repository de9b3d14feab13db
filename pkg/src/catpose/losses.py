"""Evaluators for the prior-deformation training objective.

These are plain numpy functions, intended as reference values for external
training code. Nothing here differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import as_points, chamfer_distance

ROW_SUM_TOL = 1e-6
SMOOTH_L1_KNEE = 0.1


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 5.0  # chamfer
    lambda2: float = 1.0  # correspondence
    lambda3: float = 1e-4  # entropy
    lambda4: float = 0.01  # deformation

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be a nonnegative real, got {v}")


def check_correspondence_matrix(A, tol=ROW_SUM_TOL) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise InvalidInputError(f"correspondence matrix must be a nonempty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("correspondence matrix has non-finite entries")
    if np.any(A < 0):
        raise InvalidInputError("correspondence matrix has negative entries")
    sums = A.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if len(bad):
        raise InvalidInputError(
            f"correspondence matrix row {bad[0]} sums to {sums[bad[0]]:.9g}, expected 1 (tol {tol:g})"
        )
    return A


def reconstruct_model(Mc, D) -> np.ndarray:
    Mc = as_points(Mc, "Mc")
    D = as_points(D, "D")
    if len(Mc) != len(D):
        raise InvalidInputError(f"prior has {len(Mc)} points but deformation has {len(D)}")
    return Mc + D


def nocs_coordinates(A, M) -> np.ndarray:
    """Soft-correspondence NOCS coordinates ``A @ M``, one row per observed point."""
    A = check_correspondence_matrix(A)
    M = as_points(M, "M")
    if A.shape[1] != len(M):
        raise InvalidInputError(f"A has {A.shape[1]} columns but M has {len(M)} points")
    return A @ M


def loss_cd(M, M_gt) -> float:
    return chamfer_distance(M, M_gt, "sum")


def smooth_l1(e) -> np.ndarray:
    a = np.abs(e)
    return np.where(a <= SMOOTH_L1_KNEE, 5.0 * a * a, a - 0.05)


def loss_corr(P, P_gt) -> float:
    P = as_points(P, "P")
    P_gt = as_points(P_gt, "P_gt")
    if P.shape != P_gt.shape:
        raise InvalidInputError(f"P has {len(P)} points but P_gt has {len(P_gt)}")
    # summed over coordinates, averaged over points
    return float(smooth_l1(P - P_gt).sum() / len(P))


def loss_entropy(A) -> float:
    A = check_correspondence_matrix(A)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(A > 0, -A * np.log(A), 0.0)
    return float(terms.sum() / A.shape[0])


def loss_def(D) -> float:
    D = as_points(D, "D")
    return float(np.linalg.norm(D, axis=1).sum() / len(D))


def loss_components(M, M_gt, P, P_gt, A, D) -> dict:
    return {
        "cd": loss_cd(M, M_gt),
        "corr": loss_corr(P, P_gt),
        "entropy": loss_entropy(A),
        "def": loss_def(D),
    }


def weighted_total(components: dict, w: LossWeights) -> float:
    return (
        w.lambda1 * components["cd"]
        + w.lambda2 * components["corr"]
        + w.lambda3 * components["entropy"]
        + w.lambda4 * components["def"]
    )


def total_loss(M, M_gt, P, P_gt, A, D, w: LossWeights = LossWeights()) -> float:
    return weighted_total(loss_components(M, M_gt, P, P_gt, A, D), w)
