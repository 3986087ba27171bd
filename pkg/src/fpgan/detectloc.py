"""Detection and localization by removal.

Everything here is pure numpy on single images: difference maps, image
scores, k-means binarization, connected-component candidates, lesion
matching, and ROC / FROC curves. Difference maps are 2-D ``(H, W)`` arrays;
images are ``(C, H, W)`` or ``(H, W)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class LesionCandidate:
    pixels: np.ndarray  # (n, 2) array of (row, col)
    area: int
    centroid: tuple[float, float]
    score: float


@dataclass
class DetectionRecord:
    image_id: str
    score: float
    label: int


@dataclass
class MatchResult:
    hits: int
    false_positives: int
    n_lesions: int


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float


@dataclass
class FrocResult:
    fps_per_image: np.ndarray
    sensitivity: np.ndarray
    thresholds: np.ndarray
    n_images: int
    n_lesions: int
    extras: dict = field(default_factory=dict)

    def sensitivity_at(self, fp_rate: float = 1.0) -> float:
        """Sensitivity at ``fp_rate`` false positives per image, linearly interpolated.

        Beyond the last operating point the curve is held flat.
        """
        fps, sens = self.fps_per_image, self.sensitivity
        if fp_rate >= fps[-1]:
            return float(sens[-1])
        # fps is nondecreasing; interpolate on the upper envelope at each fp value
        idx = np.searchsorted(fps, fp_rate, side="right")
        if idx == 0:
            return 0.0
        x0, y0 = fps[idx - 1], sens[idx - 1]
        x1, y1 = fps[idx], sens[idx]
        return float(y0 + (y1 - y0) * (fp_rate - x0) / (x1 - x0))


def _as_chw(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def difference_map(x, x_translated) -> np.ndarray:
    """Per-pixel |x - x'|, max over channels."""
    a, b = _as_chw(x), _as_chw(x_translated)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return np.abs(a - b).max(axis=0)


def detection_score(m) -> float:
    return float(np.max(m))


# -- color quantization ------------------------------------------------------

def _weighted_unique(values):
    v, counts = np.unique(np.asarray(values, dtype=np.float64).ravel(), return_counts=True)
    return v, counts.astype(np.float64)


def optimal_kmeans_1d(values, k: int) -> np.ndarray:
    """Globally optimal 1-D k-means; returns the upper bound of each cluster.

    Dynamic program over sorted unique values (equal values always share a
    cluster). The result is a sorted array of at most ``k`` cluster maxima.
    """
    v, w = _weighted_unique(values)
    m = len(v)
    k = min(k, m)
    if k <= 1:
        return v[-1:]
    # prefix sums for O(1) within-cluster SSE
    cw = np.concatenate([[0.0], np.cumsum(w)])
    cs = np.concatenate([[0.0], np.cumsum(w * v)])
    css = np.concatenate([[0.0], np.cumsum(w * v * v)])

    def sse(i, j):
        # cost of cluster v[i..j] inclusive; i may be an array
        n = cw[j + 1] - cw[i]
        s = cs[j + 1] - cs[i]
        return np.maximum((css[j + 1] - css[i]) - s * s / n, 0.0)

    cost = sse(np.zeros(m, dtype=int), np.arange(m))
    back = np.zeros((k, m), dtype=int)
    for q in range(1, k):
        new = np.full(m, np.inf)
        for j in range(q, m):
            i = np.arange(q, j + 1)
            cand = cost[i - 1] + sse(i, j)
            best = int(np.argmin(cand))
            new[j] = cand[best]
            back[q, j] = i[best]
        cost = new
    # walk back cluster starts
    uppers = []
    j = m - 1
    for q in range(k - 1, -1, -1):
        uppers.append(v[j])
        i = back[q, j] if q > 0 else 0
        j = i - 1
    return np.array(uppers[::-1])


def lloyd_kmeans_1d(values, k: int, max_iter: int = 100) -> np.ndarray:
    """Lloyd iterations from quantile-initialized centroids; returns cluster maxima."""
    v, w = _weighted_unique(values)
    if len(v) <= k:
        return v
    order_cdf = np.cumsum(w) / w.sum()
    qs = (np.arange(k) + 0.5) / k
    centroids = v[np.searchsorted(order_cdf, qs)]
    for _ in range(max_iter):
        assign = np.argmin(np.abs(v[:, None] - centroids[None, :]), axis=1)
        new = np.array([
            np.average(v[assign == j], weights=w[assign == j]) if (assign == j).any() else centroids[j]
            for j in range(k)
        ])
        if np.allclose(new, centroids, rtol=0, atol=1e-12):
            break
        centroids = new
    assign = np.argmin(np.abs(v[:, None] - centroids[None, :]), axis=1)
    return np.array([v[assign == j].max() for j in range(k) if (assign == j).any()])


def quantize_binarize(m, k: int = 2, method: str = "optimal") -> np.ndarray:
    """Binary mask of pixels outside the lowest-valued k-means cluster.

    A constant map yields an empty mask.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    m = np.asarray(m, dtype=np.float64)
    if method == "optimal":
        uppers = optimal_kmeans_1d(m, k)
    elif method == "lloyd":
        uppers = lloyd_kmeans_1d(m, k)
    else:
        raise ValueError(f"unknown method {method!r}")
    if len(uppers) < 2:
        return np.zeros(m.shape, dtype=bool)
    return m > uppers[0]


# -- candidates --------------------------------------------------------------

def label_components(mask) -> tuple[np.ndarray, int]:
    return ndimage.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)


def extract_candidates(mask, diff_map=None, min_area: int = 10) -> list[LesionCandidate]:
    """8-connected components with area strictly greater than ``min_area``.

    Candidate scores are the maximum of ``diff_map`` inside the component
    (0 when no map is given). Candidates are ordered by their first pixel in
    row-major order.
    """
    labels, n = label_components(mask)
    out = []
    for idx in range(1, n + 1):
        pix = np.argwhere(labels == idx)
        if len(pix) <= min_area:
            continue
        score = float(np.asarray(diff_map)[pix[:, 0], pix[:, 1]].max()) if diff_map is not None else 0.0
        cy, cx = pix.mean(axis=0)
        out.append(LesionCandidate(pix, len(pix), (float(cy), float(cx)), score))
    return out


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def match_candidates(cands: list[LesionCandidate], gt_mask) -> MatchResult:
    """Count GT lesions hit by a candidate centroid and candidates hitting none."""
    gt_labels, n_lesions = label_components(gt_mask)
    h, w = gt_labels.shape
    hit = set()
    fp = 0
    for cand in cands:
        r, c = _round_half_up(cand.centroid[0]), _round_half_up(cand.centroid[1])
        lesion = gt_labels[r, c] if 0 <= r < h and 0 <= c < w else 0
        if lesion:
            hit.add(int(lesion))
        else:
            fp += 1
    return MatchResult(len(hit), fp, n_lesions)


# -- curves ------------------------------------------------------------------

def roc(records: list[DetectionRecord]) -> RocResult:
    """ROC over unique score thresholds (score >= t is positive); trapezoid AUC."""
    scores = np.array([r.score for r in records], dtype=np.float64)
    labels = np.array([r.label for r in records], dtype=np.int64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(labels):
        raise ValueError("ROC needs both positive and negative records with labels in {0, 1}")
    thresholds = np.unique(scores)[::-1]
    tp = np.array([int(((scores >= t) & (labels == 1)).sum()) for t in thresholds])
    fp = np.array([int(((scores >= t) & (labels == 0)).sum()) for t in thresholds])
    tp = np.concatenate([[0], tp])
    fp = np.concatenate([[0], fp])
    # integer trapezoid numerator keeps the AUC exactly rational
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2 * n_pos * n_neg)
    return RocResult(fp / n_neg, tp / n_pos, np.concatenate([[np.inf], thresholds]), auc)


def froc(per_image: list[tuple[list[LesionCandidate], np.ndarray]]) -> FrocResult:
    """Sensitivity vs false positives per image over candidate-score thresholds.

    The first point (threshold +inf) keeps no candidates; points are ordered
    by decreasing threshold, so both coordinates are nondecreasing.
    """
    if not per_image:
        raise ValueError("no images")
    n_lesions = sum(label_components(gt)[1] for _, gt in per_image)
    if n_lesions == 0:
        raise ValueError("FROC needs at least one ground-truth lesion")
    scores = sorted({c.score for cands, _ in per_image for c in cands}, reverse=True)
    thresholds = [np.inf] + scores
    fps, sens = [], []
    for t in thresholds:
        hits = fp = 0
        for cands, gt in per_image:
            res = match_candidates([c for c in cands if c.score >= t], gt)
            hits += res.hits
            fp += res.false_positives
        fps.append(fp / len(per_image))
        sens.append(hits / n_lesions)
    return FrocResult(np.array(fps), np.array(sens), np.array(thresholds), len(per_image), n_lesions)


def same_domain_l1(pairs) -> tuple[float, float]:
    """Mean and (population) standard deviation of per-image mean |x - G(x, c_x)|."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no image pairs")
    per_image = []
    for x, y in pairs:
        a, b = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
        per_image.append(np.abs(a - b).mean())
    per_image = np.array(per_image)
    return float(per_image.mean()), float(per_image.std())


def mean_iou(pred_masks, gt_masks) -> float:
    """Mean intersection-over-union across images (an empty union counts as 1)."""
    ious = []
    for p, g in zip(pred_masks, gt_masks):
        p, g = np.asarray(p, dtype=bool), np.asarray(g, dtype=bool)
        union = (p | g).sum()
        ious.append(1.0 if union == 0 else (p & g).sum() / union)
    return float(np.mean(ious))
