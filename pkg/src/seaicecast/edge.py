"""Ice-edge verification geometry: binarize a concentration field at a
threshold, extract the edge contour by marching squares, resample it to a
fixed point count, and compute signed point-to-contour distances.

Contour coordinates are (x, y) in grid-cell units (x = column, y = row);
multiply by cell_size_km for physical distances. Sign convention: positive
when a predicted point lies outside the actual ice region (ice over-extent),
negative inside.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .grids import GridField


class NoEdgeError(ValueError):
    """Raised when a field is entirely ice or entirely ice-free."""


@dataclass
class BinaryMask:
    bits: np.ndarray  # (H, W) bool, True = ice

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise ValueError("bits must be 2-d")


@dataclass
class Contour:
    """Closed polyline; the segment from the last point back to the first is
    implicit."""

    points: np.ndarray  # (N, 2) of (x, y)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise ValueError("points must be (N, 2)")
        if len(self.points) < 3:
            raise ValueError("contour needs at least 3 points")

    def __len__(self):
        return len(self.points)

    def segments(self):
        return self.points, np.roll(self.points, -1, axis=0)

    def perimeter(self):
        a, b = self.segments()
        return float(np.hypot(*(b - a).T).sum())

    def signed_area(self):
        x, y = self.points.T
        x2, y2 = np.roll(self.points, -1, axis=0).T
        return float(0.5 * np.sum(x * y2 - x2 * y))


@dataclass
class EdgeDistanceResult:
    per_point: np.ndarray  # signed distances, grid cells
    mean: float
    quartiles: tuple  # (min, q1, median, q3, max)


def binarize(field, threshold=0.8):
    """Ice where concentration is strictly above the threshold; land never."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return BinaryMask((field.values > threshold) & field.mask)


# Marching-squares segment table. Corner bits: tl=8, tr=4, br=2, bl=1 set
# when the corner is ice. Vertices are cell-edge midpoints named relative to
# the 2x2 block whose top-left lattice point is (i, j).
_T = "top"
_B = "bottom"
_L = "left"
_R = "right"
_SEGMENTS = {
    0: [],
    1: [(_L, _B)],
    2: [(_B, _R)],
    3: [(_L, _R)],
    4: [(_T, _R)],
    5: [(_T, _R), (_L, _B)],  # saddle
    6: [(_T, _B)],
    7: [(_L, _T)],
    8: [(_L, _T)],
    9: [(_T, _B)],
    10: [(_L, _T), (_B, _R)],  # saddle
    11: [(_T, _R)],
    12: [(_L, _R)],
    13: [(_B, _R)],
    14: [(_L, _B)],
    15: [],
}


def _midpoint(name, i, j):
    # (x, y) with x = column, y = row; lattice points are cell centres
    if name == _T:
        return (j + 0.5, float(i))
    if name == _B:
        return (j + 0.5, i + 1.0)
    if name == _L:
        return (float(j), i + 0.5)
    return (j + 1.0, i + 0.5)


def _all_contours(bits):
    """All closed isolines at level 0.5 of the zero-padded binary field."""
    padded = np.zeros((bits.shape[0] + 2, bits.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = bits

    segments = []
    h, w = padded.shape
    cases = (
        8 * padded[:-1, :-1].astype(int)
        + 4 * padded[:-1, 1:]
        + 2 * padded[1:, 1:]
        + 1 * padded[1:, :-1]
    )
    for i, j in zip(*np.nonzero((cases > 0) & (cases < 15))):
        for a, b in _SEGMENTS[cases[i, j]]:
            segments.append((_midpoint(a, i, j), _midpoint(b, i, j)))

    # stitch segments into loops; quantize coordinates (all are multiples of
    # 0.5) so vertices hash exactly
    def key(p):
        return (round(p[0] * 2), round(p[1] * 2))

    adjacency = {}
    for si, (a, b) in enumerate(segments):
        adjacency.setdefault(key(a), []).append(si)
        adjacency.setdefault(key(b), []).append(si)

    used = [False] * len(segments)
    loops = []
    for start in range(len(segments)):
        if used[start]:
            continue
        used[start] = True
        a, b = segments[start]
        loop = [a, b]
        while key(loop[-1]) != key(loop[0]):
            k = key(loop[-1])
            nxt = next((s for s in adjacency[k] if not used[s]), None)
            if nxt is None:
                raise RuntimeError("open isoline; marching-squares table broken")
            used[nxt] = True
            pa, pb = segments[nxt]
            loop.append(pb if key(pa) == k else pa)
        loops.append(loop[:-1])

    # shift out of the padding frame
    return [Contour(np.asarray(lp) - 1.0) for lp in loops]


def extract_contour(mask):
    """Largest-area closed ice-edge contour of a binary ice mask."""
    bits = mask.bits
    if not bits.any() or bits.all():
        raise NoEdgeError("field is entirely ice or entirely ice-free")
    contours = _all_contours(bits)
    return max(contours, key=lambda c: abs(c.signed_area()))


def resample_contour(contour, n=100):
    """n points equally spaced by arc length, starting at the first vertex."""
    if n < 3:
        raise ValueError("need at least 3 points")
    pts = contour.points
    closed = np.vstack([pts, pts[:1]])
    seg_len = np.hypot(*np.diff(closed, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    perimeter = cum[-1]
    if perimeter <= 0:
        raise ValueError("degenerate contour with zero perimeter")
    targets = np.arange(n) * perimeter / n
    xs = np.interp(targets, cum, closed[:, 0])
    ys = np.interp(targets, cum, closed[:, 1])
    return Contour(np.column_stack([xs, ys]))


def _point_segment_distances(points, seg_a, seg_b):
    """Distance from each point to the nearest of the given segments."""
    d = seg_b - seg_a  # (S, 2)
    len_sq = np.maximum((d * d).sum(axis=1), 1e-300)
    # (P, S, 2) displacement from segment starts
    rel = points[:, None, :] - seg_a[None, :, :]
    t = np.clip((rel * d[None]).sum(axis=2) / len_sq, 0.0, 1.0)
    proj = seg_a[None] + t[:, :, None] * d[None]
    dist = np.hypot(*(points[:, None, :] - proj).transpose(2, 0, 1))
    return dist.min(axis=1)


def _points_inside(points, contour):
    """Even-odd ray casting against the closed contour."""
    a, b = contour.segments()
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    ya, yb = a[:, 1][None], b[:, 1][None]
    xa, xb = a[:, 0][None], b[:, 0][None]
    crosses = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = xa + (y - ya) / (yb - ya) * (xb - xa)
    hits = crosses & (x < x_at)
    return hits.sum(axis=1) % 2 == 1


def signed_edge_distance(pred, actual, symmetric=False):
    """Signed distance from each predicted edge point to the actual contour.

    Positive = predicted point outside the actual ice region. With
    symmetric=True the per-point set is the union of both directions.
    """
    def one_way(src, dst):
        a, b = dst.segments()
        dist = _point_segment_distances(src.points, a, b)
        inside = _points_inside(src.points, dst)
        sign = np.where(inside & (dist > 1e-9), -1.0, 1.0)
        return dist * sign

    d = one_way(pred, actual)
    if symmetric:
        d = np.concatenate([d, one_way(actual, pred)])
    q = np.percentile(d, [0, 25, 50, 75, 100])
    return EdgeDistanceResult(d, float(d.mean()), tuple(float(v) for v in q))


@dataclass
class WeeklyEdgeResult:
    date: object
    result: EdgeDistanceResult = None  # None when flagged no-edge
    no_edge: bool = False


def edge_distance_series(preds, actuals, threshold=0.8, n_points=100):
    """Per-week signed edge distances of a forecast bundle vs actual frames.

    Weeks where either side has no edge come back flagged (result=None) and
    are excluded from any aggregate the caller computes.
    """
    results = []
    aligned = 0
    for j, date in enumerate(preds.dates()):
        try:
            idx = actuals.index_of(date)
        except KeyError:
            continue
        aligned += 1
        pred_field = GridField(
            np.clip(preds.values[j], 0.0, 1.0), actuals.mask, actuals.cell_size_km
        )
        try:
            pc = extract_contour(binarize(pred_field, threshold))
            ac = extract_contour(binarize(actuals.field(idx), threshold))
        except NoEdgeError:
            results.append(WeeklyEdgeResult(date, no_edge=True))
            continue
        pc = resample_contour(pc, n_points)
        results.append(WeeklyEdgeResult(date, signed_edge_distance(pc, ac)))
    if aligned == 0:
        raise ValueError("no forecast week aligns with the actual series")
    return results


def edge_results_csv(results, path=None):
    """CSV rows (week, mean, min, q1, median, q3, max); no-edge weeks carry
    an empty statistics block and a flag column."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["week", "mean", "min", "q1", "median", "q3", "max", "no_edge"])
    for r in results:
        if r.no_edge:
            writer.writerow([r.date.isoformat(), "", "", "", "", "", "", "1"])
        else:
            q = r.result.quartiles
            writer.writerow(
                [r.date.isoformat(), f"{r.result.mean:.4f}"]
                + [f"{v:.4f}" for v in q]
                + ["0"]
            )
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as f:
            f.write(text)
    return text
