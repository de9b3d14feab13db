"""Benchmark protocol: oriented 3D IoU, symmetry-aware pose errors and mAP."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidInputError
from .geometry import OrientedBox3D, SimilarityTransform, chamfer_distance, geodesic_angle
from .symmetry import CATEGORIES, SymmetryClass, symmetry_class_for

POSE_MATCH_IOU = 0.1
VERTEX_TOL = 1e-12
_TRIPLES = np.array(list(itertools.combinations(range(12), 3)))


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: str
    score: float
    pose: SimilarityTransform
    nocs_extents: np.ndarray

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidInputError(f"unknown category {self.category!r}")
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"score must lie in [0, 1], got {self.score}")
        e = np.asarray(self.nocs_extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0):
            raise InvalidInputError("nocs_extents must be positive")
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "nocs_extents", e)


@dataclass(frozen=True)
class GroundTruthInstance:
    image_id: str
    category: str
    pose: SimilarityTransform
    nocs_extents: np.ndarray
    handle_visible: bool | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise InvalidInputError(f"unknown category {self.category!r}")
        if (self.category == "mug") != (self.handle_visible is not None):
            raise InvalidInputError("handle_visible must be given for mugs and only for mugs")
        e = np.asarray(self.nocs_extents, dtype=np.float64).reshape(3)
        if np.any(e <= 0):
            raise InvalidInputError("nocs_extents must be positive")
        object.__setattr__(self, "image_id", str(self.image_id))
        object.__setattr__(self, "nocs_extents", e)

    @property
    def symmetry(self) -> SymmetryClass:
        return symmetry_class_for(self.category, self.handle_visible)


def detection_box(d) -> OrientedBox3D:
    """Metric box of a detection or ground-truth instance."""
    return OrientedBox3D(d.pose.translation, d.pose.rotation, d.pose.scale * d.nocs_extents)


def intersection_volume(a: OrientedBox3D, b: OrientedBox3D) -> float:
    """Exact volume of the intersection of two oriented boxes.

    Every vertex of the intersection polytope lies on three of the twelve face
    planes, so all plane triples are solved and the feasible points kept.
    """
    Na, da = a.halfspaces()
    Nb, db = b.halfspaces()
    N = np.vstack([Na, Nb])
    d = np.concatenate([da, db])
    A = N[_TRIPLES]
    rhs = d[_TRIPLES]
    ok = np.abs(np.linalg.det(A)) > 1e-9
    if not np.any(ok):
        return 0.0
    X = np.linalg.solve(A[ok], rhs[ok][..., None])[..., 0]
    tol = VERTEX_TOL * max(1.0, float(np.max(np.abs(d))))
    X = X[np.all(X @ N.T <= d + tol, axis=1)]
    if len(X) < 4:
        return 0.0
    try:
        return float(ConvexHull(X).volume)
    except QhullError:
        # flat contact region
        return 0.0


def oriented_iou(a: OrientedBox3D, b: OrientedBox3D) -> float:
    inter = intersection_volume(a, b)
    union = a.volume + b.volume - inter
    if union <= 0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def rotation_error(Rp, Rg, sym: SymmetryClass) -> float:
    """Rotation error in degrees; y-symmetric objects compare only their y-axes."""
    Rp = np.asarray(Rp, dtype=np.float64)
    Rg = np.asarray(Rg, dtype=np.float64)
    if sym is SymmetryClass.Y_AXIS_CONTINUOUS:
        yp, yg = Rp[:, 1], Rg[:, 1]
        # atan2 form keeps small angles exact where acos(dot) would not
        ang = math.atan2(np.linalg.norm(np.cross(yp, yg)), float(np.clip(yp @ yg, -1.0, 1.0)))
    else:
        ang = geodesic_angle(Rp, Rg)
    return math.degrees(ang)


def translation_error(tp, tg) -> float:
    """Translation error in centimeters for positions given in meters."""
    return 100.0 * float(np.linalg.norm(np.asarray(tp, dtype=np.float64) - np.asarray(tg, dtype=np.float64)))


@dataclass(frozen=True)
class ThresholdSpec:
    """Either an IoU threshold or a (degrees, centimeters) pose threshold.

    Thresholds of 0 and ``inf`` are accepted so that curves can be swept.
    """

    kind: str
    iou: float | None = None
    max_deg: float | None = None
    max_cm: float | None = None

    def __post_init__(self):
        if self.kind == "iou":
            if self.iou is None or not 0.0 <= self.iou <= 1.0:
                raise InvalidInputError(f"IoU threshold must lie in [0, 1], got {self.iou}")
        elif self.kind == "pose":
            if self.max_deg is None or self.max_cm is None or self.max_deg < 0 or self.max_cm < 0:
                raise InvalidInputError("pose thresholds must be nonnegative")
        else:
            raise InvalidInputError(f"unknown threshold kind {self.kind!r}")

    @classmethod
    def at_iou(cls, t: float) -> ThresholdSpec:
        return cls("iou", iou=float(t))

    @classmethod
    def at_pose(cls, max_deg: float, max_cm: float) -> ThresholdSpec:
        return cls("pose", max_deg=float(max_deg), max_cm=float(max_cm))

    @property
    def match_gate(self) -> float:
        return self.iou if self.kind == "iou" else POSE_MATCH_IOU

    @property
    def name(self) -> str:
        if self.kind == "iou":
            return f"3D{round(self.iou * 100):d}"
        return f"{self.max_deg:g}deg{self.max_cm:g}cm"

    @property
    def label(self) -> str:
        if self.kind == "iou":
            return f"3D_{round(self.iou * 100):d}"
        return f"{self.max_deg:g}°{self.max_cm:g}cm"


STANDARD_SPECS = (
    ThresholdSpec.at_iou(0.25),
    ThresholdSpec.at_iou(0.50),
    ThresholdSpec.at_iou(0.75),
    ThresholdSpec.at_pose(5, 2),
    ThresholdSpec.at_pose(5, 5),
    ThresholdSpec.at_pose(10, 2),
    ThresholdSpec.at_pose(10, 5),
)


def average_precision(tp, n_gt: int):
    """All-point interpolated AP in percent, with the raw precision/recall arrays.

    ``tp`` flags each detection in descending-score order.
    """
    tp = np.asarray(tp, dtype=np.float64)
    if n_gt <= 0:
        raise InvalidInputError("AP is undefined without ground truth")
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / np.maximum(ctp + cfp, np.finfo(np.float64).eps)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    ap = float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))
    return 100.0 * ap, precision, recall


@dataclass
class _Group:
    det_idx: list
    gt_idx: list
    iou: np.ndarray = None
    rot: np.ndarray = None
    trans: np.ndarray = None


def _pairwise(group: _Group, dets, gts) -> _Group:
    nd, ng = len(group.det_idx), len(group.gt_idx)
    group.iou = np.zeros((nd, ng))
    group.rot = np.zeros((nd, ng))
    group.trans = np.zeros((nd, ng))
    gt_boxes = [detection_box(gts[j]) for j in group.gt_idx]
    for a, i in enumerate(group.det_idx):
        d = dets[i]
        box = detection_box(d)
        for b, j in enumerate(group.gt_idx):
            g = gts[j]
            group.iou[a, b] = oriented_iou(box, gt_boxes[b])
            group.rot[a, b] = rotation_error(d.pose.rotation, g.pose.rotation, g.symmetry)
            group.trans[a, b] = translation_error(d.pose.translation, g.pose.translation)
    return group


@dataclass(frozen=True)
class APResult:
    spec: ThresholdSpec
    per_category: dict  # category -> AP percent, None when undefined
    mean: float | None
    undefined: tuple
    precision: dict = field(repr=False, default_factory=dict)
    recall: dict = field(repr=False, default_factory=dict)


class Evaluator:
    """Caches pairwise IoU and pose errors so many thresholds can be scored cheaply."""

    def __init__(self, dets, gts, threads: int = 1):
        self.dets = list(dets)
        self.gts = list(gts)
        self.n_gt = {c: 0 for c in CATEGORIES}
        for g in self.gts:
            self.n_gt[g.category] += 1
        groups = {}
        for j, g in enumerate(self.gts):
            groups.setdefault((g.image_id, g.category), _Group([], [])).gt_idx.append(j)
        for i, d in enumerate(self.dets):
            key = (d.image_id, d.category)
            if key in groups:
                groups[key].det_idx.append(i)
        work = [grp for grp in groups.values() if grp.det_idx]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda grp: _pairwise(grp, self.dets, self.gts), work))
        else:
            for grp in work:
                _pairwise(grp, self.dets, self.gts)
        self._where = {}
        for grp in work:
            for a, i in enumerate(grp.det_idx):
                self._where[i] = (grp, a)
        self._order = {}
        for c in CATEGORIES:
            idx = [i for i, d in enumerate(self.dets) if d.category == c]
            scores = np.array([-self.dets[i].score for i in idx])
            self._order[c] = [idx[k] for k in np.argsort(scores, kind="stable")]
        self._match_cache = {}

    def _match(self, category: str, gate: float):
        """Greedy score-ordered matching; returns (iou, rot, trans) per detection, NaN if unmatched."""
        key = (category, gate)
        if key in self._match_cache:
            return self._match_cache[key]
        order = self._order[category]
        out = np.full((len(order), 3), np.nan)
        taken = {}
        for k, i in enumerate(order):
            if i not in self._where:
                continue
            grp, a = self._where[i]
            used = taken.setdefault(id(grp), np.zeros(len(grp.gt_idx), dtype=bool))
            ious = np.where(used, -np.inf, grp.iou[a])
            b = int(np.argmax(ious))
            if ious[b] >= gate:
                used[b] = True
                out[k] = (grp.iou[a, b], grp.rot[a, b], grp.trans[a, b])
        self._match_cache[key] = out
        return out

    def true_positives(self, category: str, spec: ThresholdSpec) -> np.ndarray:
        m = self._match(category, spec.match_gate)
        matched = ~np.isnan(m[:, 0])
        if spec.kind == "iou":
            return matched
        with np.errstate(invalid="ignore"):
            return matched & (m[:, 1] <= spec.max_deg) & (m[:, 2] <= spec.max_cm)

    def ap(self, spec: ThresholdSpec) -> APResult:
        per_cat, prec, rec, undefined = {}, {}, {}, []
        for c in CATEGORIES:
            if self.n_gt[c] == 0:
                per_cat[c] = None
                undefined.append(c)
                continue
            per_cat[c], prec[c], rec[c] = average_precision(self.true_positives(c, spec), self.n_gt[c])
        defined = [v for v in per_cat.values() if v is not None]
        mean = float(np.mean(defined)) if defined else None
        return APResult(spec, per_cat, mean, tuple(undefined), prec, rec)


def compute_ap(dets, gts, spec: ThresholdSpec) -> APResult:
    return Evaluator(dets, gts).ap(spec)


@dataclass
class EvaluationReport:
    results: list  # APResult per spec, in STANDARD_SPECS order

    @property
    def specs(self):
        return [r.spec for r in self.results]

    def ap(self, spec_name: str, category: str = "mean"):
        for r in self.results:
            if r.spec.name == spec_name:
                return r.mean if category == "mean" else r.per_category[category]
        raise KeyError(spec_name)

    @property
    def undefined(self):
        return self.results[0].undefined if self.results else ()

    def to_dict(self) -> dict:
        return {
            "specs": [r.spec.name for r in self.results],
            "categories": list(CATEGORIES),
            "undefined_categories": list(self.undefined),
            "ap": {r.spec.name: {**r.per_category, "mean": r.mean} for r in self.results},
            "precision_recall": {
                r.spec.name: {
                    c: {"precision": r.precision[c].tolist(), "recall": r.recall[c].tolist()}
                    for c in r.precision
                }
                for r in self.results
            },
        }

    def to_table(self) -> str:
        """Aligned text table: one row per category plus the mean, one column per threshold."""
        labels = [r.spec.label for r in self.results]
        width = max(8, *(len(lab) for lab in labels)) + 1
        lines = ["category".ljust(10) + "".join(lab.rjust(width) for lab in labels)]

        def cell(v):
            return ("-" if v is None else f"{v:.1f}").rjust(width)

        for c in CATEGORIES:
            lines.append(c.ljust(10) + "".join(cell(r.per_category[c]) for r in self.results))
        lines.append("mAP".ljust(10) + "".join(cell(r.mean) for r in self.results))
        return "\n".join(lines) + "\n"


def evaluate_report(dets, gts, threads: int = 1, evaluator: Evaluator | None = None) -> EvaluationReport:
    ev = evaluator or Evaluator(dets, gts, threads)
    return EvaluationReport([ev.ap(spec) for spec in STANDARD_SPECS])


DEFAULT_SWEEPS = {
    "iou": np.round(np.linspace(0.0, 1.0, 101), 10),
    "deg": np.arange(0.0, 61.0, 1.0),
    "cm": np.round(np.linspace(0.0, 10.0, 101), 10),
}


def ap_curves(dets, gts, sweeps=None, fixed_cm=math.inf, fixed_deg=math.inf,
              threads: int = 1, evaluator: Evaluator | None = None) -> dict:
    """AP per category against each swept threshold.

    The rotation sweep holds translation at ``fixed_cm`` and the translation
    sweep holds rotation at ``fixed_deg``; both default to unconstrained.
    Returns ``{"iou"|"deg"|"cm": [(category, threshold, ap), ...]}`` where the
    category ``"mean"`` carries the mean AP.
    """
    sweeps = {**DEFAULT_SWEEPS, **(sweeps or {})}
    ev = evaluator or Evaluator(dets, gts, threads)
    out = {}
    for kind, values in sweeps.items():
        rows = []
        for t in values:
            t = float(t)
            if kind == "iou":
                spec = ThresholdSpec.at_iou(t)
            elif kind == "deg":
                spec = ThresholdSpec.at_pose(t, fixed_cm)
            elif kind == "cm":
                spec = ThresholdSpec.at_pose(fixed_deg, t)
            else:
                raise InvalidInputError(f"unknown sweep {kind!r}")
            res = ev.ap(spec)
            for c in CATEGORIES:
                if res.per_category[c] is not None:
                    rows.append((c, t, res.per_category[c]))
            if res.mean is not None:
                rows.append(("mean", t, res.mean))
        out[kind] = rows
    return out


def reconstruction_metric(recons: dict) -> dict:
    """Mean per-point Chamfer distance per category, scaled by 1e3."""
    out = {}
    for cat, pairs in recons.items():
        if not pairs:
            raise InvalidInputError(f"no reconstructions for category {cat!r}")
        out[cat] = 1e3 * float(np.mean([chamfer_distance(M, M_gt, "mean") for M, M_gt in pairs]))
    return out
