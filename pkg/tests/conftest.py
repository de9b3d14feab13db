import sys

import numpy as np
import pytest

from catpose.geometry import SimilarityTransform, random_rotation


def brute_chamfer(X, Y, normalization="sum"):
    """Double-loop Chamfer distance, independent of the vectorized path."""
    def directed(A, B):
        total = 0.0
        for a in A:
            best = float("inf")
            for b in B:
                d = (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2
                best = min(best, d)
            total += best
        return total

    dx, dy = directed(X, Y), directed(Y, X)
    if normalization == "mean":
        return dx / len(X) + dy / len(Y)
    return dx + dy


def random_transform(rng, scale_range=(0.1, 10.0)):
    return SimilarityTransform(
        rng.uniform(*scale_range), random_rotation(rng), rng.uniform(-5, 5, 3)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def outlier_case(rng, n=100, outlier_fraction=0.3, gross=True):
    """Noise-free correspondences under a random similarity with a fraction replaced by outliers.

    Outliers are uniform in the observed bounding box enlarged by half its size
    on each side. With ``gross`` a sample is redrawn while it lies within
    ``0.1 * diagonal(sampling box)`` of its true position; since the observed
    diameter never exceeds that diagonal, such outliers can never pass the
    default inlier test.
    """
    from catpose.geometry import random_rotation

    T = SimilarityTransform(rng.uniform(0.1, 10.0), random_rotation(rng), rng.uniform(-5, 5, 3))
    src = rng.uniform(-0.5, 0.5, (n, 3))
    clean = T.apply(src)
    dst = clean.copy()
    lo, hi = clean.min(axis=0), clean.max(axis=0)
    lo, hi = lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo)
    radius = 0.1 * np.linalg.norm(hi - lo)
    idx = rng.choice(n, size=int(round(outlier_fraction * n)), replace=False)
    for i in idx:
        while True:
            p = rng.uniform(lo, hi)
            if not gross or np.linalg.norm(p - clean[i]) > radius:
                break
        dst[i] = p
    mask = np.ones(n, dtype=bool)
    mask[idx] = False
    return T, src, dst, mask


def mc_iou(a, b, n, rng, chunk=1_000_000):
    """Monte-Carlo IoU from uniform samples inside box ``a``; returns (iou, sigma).

    Sigma is the binomial standard error of the intersection fraction carried
    through ``iou = I / (Va + Vb - I)``.
    """
    M = (a.rotation.T @ b.rotation).T.astype(np.float32)  # a-local -> b-local
    off = ((a.center - b.center) @ b.rotation).astype(np.float32)
    ext_a = a.extents.astype(np.float32)
    half_b = (0.5 * b.extents).astype(np.float32)
    hits = 0
    done = 0
    while done < n:
        m = min(chunk, n - done)
        u = (rng.random((m, 3), dtype=np.float32) - np.float32(0.5)) * ext_a
        local = u @ M.T + off
        hits += int(np.count_nonzero(np.all(np.abs(local) <= half_b, axis=1)))
        done += m
    f = hits / n
    va, vb = a.volume, b.volume
    inter = va * f
    union = va + vb - inter
    sigma_i = va * np.sqrt(f * (1 - f) / n)
    return inter / union, sigma_i * (va + vb) / union**2


def ap_oracle(tp, n_gt):
    """All-point AP by enumeration: each true positive contributes 1/n_gt times
    the best precision at any rank at or below it."""
    precisions = []
    hits = 0
    for k, t in enumerate(tp, start=1):
        hits += t
        precisions.append(hits / k)
    total = 0.0
    for k, t in enumerate(tp):
        if t:
            total += max(precisions[k:])
    return 100.0 * total / n_gt


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULT_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
