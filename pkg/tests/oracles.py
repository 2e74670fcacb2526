"""Independent reference computations used by the tests.

Nothing here imports trapgrid; each oracle reaches its answer by a
different route than the code under test.
"""

from __future__ import annotations

from fractions import Fraction

import mpmath
import numpy as np


def raster_iou(a, b, subdiv: int = 1) -> float:
    """IoU by counting pixel cells on a grid of ``1/subdiv`` pixel cells.

    Exact for boxes whose corners lie on the grid.
    """
    xs = [v for box in (a, b) for v in (box[0], box[2])]
    ys = [v for box in (a, b) for v in (box[1], box[3])]
    x0, y0 = min(xs), min(ys)
    nx = int(round((max(xs) - x0) * subdiv))
    ny = int(round((max(ys) - y0) * subdiv))

    def mask(box):
        m = np.zeros((ny, nx), dtype=bool)
        c0, c1 = int(round((box[0] - x0) * subdiv)), int(round((box[2] - x0) * subdiv))
        r0, r1 = int(round((box[1] - y0) * subdiv)), int(round((box[3] - y0) * subdiv))
        m[r0:r1, c0:c1] = True
        return m

    ma, mb = mask(a), mask(b)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union


def ciou_terms(a, b, dps: int = 50) -> dict:
    """Complete-IoU evaluated term by term in high precision."""
    with mpmath.workdps(dps):
        ax0, ay0, ax1, ay1 = (mpmath.mpf(v) for v in a)
        bx0, by0, bx1, by1 = (mpmath.mpf(v) for v in b)
        inter_w = max(mpmath.mpf(0), min(ax1, bx1) - max(ax0, bx0))
        inter_h = max(mpmath.mpf(0), min(ay1, by1) - max(ay0, by0))
        inter = inter_w * inter_h
        union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
        overlap = inter / union
        rho2 = ((ax0 + ax1) / 2 - (bx0 + bx1) / 2) ** 2 + ((ay0 + ay1) / 2 - (by0 + by1) / 2) ** 2
        c2 = (max(ax1, bx1) - min(ax0, bx0)) ** 2 + (max(ay1, by1) - min(ay0, by0)) ** 2
        v = 4 / mpmath.pi**2 * (
            mpmath.atan((ax1 - ax0) / (ay1 - ay0)) - mpmath.atan((bx1 - bx0) / (by1 - by0))
        ) ** 2
        alpha = mpmath.mpf(0) if (1 - overlap) + v == 0 else v / ((1 - overlap) + v)
        value = overlap - rho2 / c2 - alpha * v
        return {
            "iou": float(overlap),
            "rho2": float(rho2),
            "c2": float(c2),
            "v": float(v),
            "alpha": float(alpha),
            "ciou": float(value),
        }


def _plain_iou(a, b) -> Fraction:
    a = [Fraction(v) for v in a]
    b = [Fraction(v) for v in b]
    iw = max(Fraction(0), min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(Fraction(0), min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def brute_force_ap(dets, gts, iou_threshold) -> float:
    """101-point AP from an exhaustive sweep over confidence thresholds.

    ``dets``: list of (image, class, confidence, box) for ONE class;
    ``gts``: list of (image, class, box). For every distinct confidence the
    detections at or above it are re-matched from scratch; the envelope at
    recall r is the best precision among thresholds reaching recall >= r.
    Arithmetic is exact (Fractions) until the final mean.
    """
    thr = Fraction(iou_threshold)
    n_gt = len(gts)
    points = []
    for t in sorted({d[2] for d in dets}, reverse=True):
        kept = [k for k, d in enumerate(dets) if d[2] >= t]
        kept.sort(key=lambda k: (-dets[k][2], k))
        used = set()
        tp = 0
        for k in kept:
            img, cls, _, box = dets[k]
            best, best_j = None, None
            for j, (g_img, g_cls, g_box) in enumerate(gts):
                if j in used or g_img != img or g_cls != cls:
                    continue
                o = _plain_iou(box, g_box)
                if best is None or o > best:
                    best, best_j = o, j
            if best is not None and best >= thr:
                used.add(best_j)
                tp += 1
        points.append((Fraction(tp, n_gt), Fraction(tp, len(kept))))
    total = Fraction(0)
    for k in range(101):
        r = Fraction(k, 100)
        reach = [p for rec, p in points if rec >= r]
        total += max(reach) if reach else 0
    return float(total / 101)


def pearson_distance(x, y, dps: int = 80) -> float:
    """1 - Pearson r by explicit loops in high precision (zero-variance rules as documented)."""
    x_const = all(v == x[0] for v in x)
    y_const = all(v == y[0] for v in y)
    if x_const and y_const:
        return 0.0
    if x_const or y_const:
        return 1.0
    with mpmath.workdps(dps):
        xs = [mpmath.mpf(v) for v in x]
        ys = [mpmath.mpf(v) for v in y]
        n = len(xs)
        mx = mpmath.fsum(xs) / n
        my = mpmath.fsum(ys) / n
        cov = mpmath.mpf(0)
        vx = mpmath.mpf(0)
        vy = mpmath.mpf(0)
        for i in range(n):
            cov += (xs[i] - mx) * (ys[i] - my)
            vx += (xs[i] - mx) ** 2
            vy += (ys[i] - my) ** 2
        d = 1 - cov / mpmath.sqrt(vx * vy)
        # residue of the working precision where the exact answer is 0; for
        # integer profiles a genuine nonzero distance is many orders larger
        if abs(d) < mpmath.mpf(10) ** (20 - dps):
            return 0.0
        return float(d)


def distance_matrix_loop(vectors) -> np.ndarray:
    n = len(vectors)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i, j] = pearson_distance(vectors[i], vectors[j])
    return out


def quartic_density_at(px, py, weights, h, cx, cy) -> float:
    """Direct per-cell kernel sum with math-module arithmetic."""
    import math

    total = 0.0
    for x, y, w in zip(px, py, weights):
        d = math.hypot(x - cx, y - cy)
        if d < h:
            total += w * 3 / (math.pi * h * h) * (1 - (d / h) ** 2) ** 2
    return total
