"""Rotation canonicalization for objects symmetric about the NOCS y-axis."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import as_points, check_rotation

AMBIGUITY_TOL = 1e-12


class SymmetryClass(enum.Enum):
    ASYMMETRIC = "asymmetric"
    Y_AXIS_CONTINUOUS = "y_axis_continuous"


CATEGORIES = ("bottle", "bowl", "camera", "can", "laptop", "mug")

# mug is resolved per instance from handle visibility
SYMMETRY_TABLE = {
    "bottle": SymmetryClass.Y_AXIS_CONTINUOUS,
    "bowl": SymmetryClass.Y_AXIS_CONTINUOUS,
    "can": SymmetryClass.Y_AXIS_CONTINUOUS,
    "camera": SymmetryClass.ASYMMETRIC,
    "laptop": SymmetryClass.ASYMMETRIC,
}


def symmetry_class_for(category: str, handle_visible: bool | None = None) -> SymmetryClass:
    if category not in CATEGORIES:
        raise InvalidInputError(f"unknown category {category!r}")
    if category == "mug":
        if handle_visible is None:
            raise InvalidInputError("mug requires a handle_visible flag")
        return SymmetryClass.ASYMMETRIC if handle_visible else SymmetryClass.Y_AXIS_CONTINUOUS
    return SYMMETRY_TABLE[category]


def symmetry_table() -> dict:
    """Human-readable dump of the category rules."""
    table = {c: s.value for c, s in SYMMETRY_TABLE.items()}
    table["mug"] = {"handle_visible": "asymmetric", "handle_hidden": "y_axis_continuous"}
    return dict(sorted(table.items()))


def y_rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


@dataclass(frozen=True)
class MapResult:
    mapped_rotation: np.ndarray
    s_hat: np.ndarray
    theta_hat: float
    ambiguous: bool = False


def map_rotation(R) -> MapResult:
    """Right-multiply ``R`` by the y-rotation closest to making it the identity.

    The optimal angle is ``atan2(R13 - R31, R11 + R33)``. When both arguments
    vanish every y-rotation is equally good; the angle is then 0 and the result
    is flagged ambiguous.
    """
    R = check_rotation(R)
    sin_part = R[0, 2] - R[2, 0]
    cos_part = R[0, 0] + R[2, 2]
    ambiguous = math.hypot(sin_part, cos_part) <= AMBIGUITY_TOL
    if ambiguous:
        theta = 0.0
    else:
        theta = math.atan2(sin_part, cos_part)
        if theta == -math.pi:
            theta = math.pi
    S = y_rotation(theta)
    return MapResult(R @ S, S, theta, ambiguous)


def canonicalize_nocs_labels(P_gt, R_gt, sym: SymmetryClass) -> np.ndarray:
    """Apply ``S_hat^T`` to every NOCS label so it agrees with ``Map(R_gt)``."""
    P = as_points(P_gt, "P_gt")
    if sym is SymmetryClass.ASYMMETRIC:
        return P.copy()
    S = map_rotation(R_gt).s_hat
    # row form of S^T p
    return P @ S
