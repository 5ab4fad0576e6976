"""Gait Energy Images: full-sequence, k-means clustered and trajectory-piecewise."""
from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from sklearn.cluster import KMeans

from .silhouette import SilhouetteSequence

CLUSTER_FEATURE_SIZE = (64, 44)  # (height, width) of the k-means pixel features


class GEIError(ValueError):
    pass


@dataclass
class GaitEnergyImage:
    grid: np.ndarray          # float32, values in [0, 1]
    source_frames: list[int]
    kind: str                 # full | cluster | piecewise


@dataclass
class TrajectorySegment:
    frame_span: tuple[int, int]   # [start, end] positions in the sequence, inclusive
    line: tuple[float, float, float]  # (a, b, c) with a*x + b*y + c = 0, a^2 + b^2 = 1
    sse: float


def _mean_image(frames: np.ndarray) -> np.ndarray:
    return frames.astype(np.float64).mean(axis=0).astype(np.float32)


def _as_array(seq) -> tuple[np.ndarray, list[int]]:
    if isinstance(seq, SilhouetteSequence):
        return seq.stack(), [f.frame_index for f in seq.frames]
    frames = np.asarray(seq)
    return frames, list(range(len(frames)))


def gei_full(seq) -> GaitEnergyImage:
    frames, idx = _as_array(seq)
    if len(frames) == 0:
        raise GEIError("cannot build a GEI from an empty sequence")
    return GaitEnergyImage(_mean_image(frames), idx, "full")


def cluster_features(frames: np.ndarray) -> np.ndarray:
    h, w = CLUSTER_FEATURE_SIZE
    small = [cv2.resize(f.astype(np.float32), (w, h), interpolation=cv2.INTER_AREA) for f in frames]
    return np.stack(small).reshape(len(frames), -1).astype(np.float64)


def gei_cluster(seq, k: int = 7, seed: int = 0) -> list[GaitEnergyImage]:
    """Group frames with k-means in a downsampled pixel space; one GEI per cluster.

    Clusters are returned ordered by their earliest frame so the output is
    stable under relabeling.
    """
    frames, idx = _as_array(seq)
    if len(frames) < k:
        raise GEIError(f"{len(frames)} frames cannot form {k} clusters")
    feats = cluster_features(frames)
    # sklearn relocates empty clusters to the points farthest from their centers
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100, random_state=seed)
    labels = km.fit_predict(feats)
    groups = [np.flatnonzero(labels == c) for c in range(k)]
    groups = sorted((g for g in groups if len(g)), key=lambda g: g[0])
    return [GaitEnergyImage(_mean_image(frames[g]), [idx[i] for i in g], "cluster") for g in groups]


def _fit_line(pts: np.ndarray) -> tuple[tuple[float, float, float], float]:
    """Total least squares line through ``pts`` and its squared orthogonal residual."""
    center = pts.mean(axis=0)
    centered = pts - center
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    normal = vt[-1]
    sse = float(s[-1] ** 2) if len(s) > 1 else 0.0
    c = -float(normal @ center)
    return (float(normal[0]), float(normal[1]), c), sse


def _segment_costs(pts: np.ndarray) -> np.ndarray:
    """cost[i, j] = orthogonal SSE of the best line through points i..j (inclusive).

    Uses running sums of x, y, x^2, y^2, xy so the table is O(n^2).
    """
    n = len(pts)
    x, y = pts[:, 0], pts[:, 1]
    cs = lambda v: np.concatenate([[0.0], np.cumsum(v)])
    sx, sy, sxx, syy, sxy = cs(x), cs(y), cs(x * x), cs(y * y), cs(x * y)
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    cnt = (j - i + 1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        mx = (sx[j + 1] - sx[i]) / cnt
        my = (sy[j + 1] - sy[i]) / cnt
        vxx = (sxx[j + 1] - sxx[i]) - cnt * mx * mx
        vyy = (syy[j + 1] - syy[i]) - cnt * my * my
        vxy = (sxy[j + 1] - sxy[i]) - cnt * mx * my
        # smallest eigenvalue of the 2x2 scatter matrix
        tr, det = vxx + vyy, vxx * vyy - vxy * vxy
        disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
        cost = np.maximum(tr / 2 - disc, 0.0)
    cost[j < i] = np.inf
    return cost


def segment_trajectory(points, penalty: float = 200.0, min_length: int = 5) -> list[TrajectorySegment]:
    """Exact segmented least squares.

    Minimizes the sum of per-segment orthogonal line-fit SSE plus ``penalty``
    per segment, over all partitions of the ordered points into contiguous
    runs of at least ``min_length`` points (relaxed to the whole sequence when
    it is shorter). Solved by dynamic programming over split points.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n < 2:
        raise GEIError("segmentation needs at least 2 trajectory points")
    min_length = max(2, min(min_length, n))
    cost = _segment_costs(pts)
    best = np.full(n + 1, np.inf)
    best[0] = 0.0
    back = np.zeros(n + 1, dtype=int)
    for end in range(min_length, n + 1):
        starts = np.arange(0, end - min_length + 1)
        cand = best[starts] + cost[starts, end - 1] + penalty
        k = int(np.argmin(cand))
        best[end], back[end] = cand[k], starts[k]
    spans = []
    end = n
    while end > 0:
        start = int(back[end])
        spans.append((start, end - 1))
        end = start
    spans.reverse()
    segments = []
    for s, e in spans:
        line, sse = _fit_line(pts[s:e + 1])
        segments.append(TrajectorySegment((s, e), line, sse))
    return segments


def gei_piecewise(seq: SilhouetteSequence, penalty: float = 200.0, min_length: int = 5,
                  trajectory=None) -> tuple[list[GaitEnergyImage], list[TrajectorySegment]]:
    """One GEI per straight run of the pedestrian's trajectory."""
    frames, idx = _as_array(seq)
    if trajectory is None:
        if not isinstance(seq, SilhouetteSequence):
            raise GEIError("a trajectory is required for a bare frame array")
        trajectory = seq.trajectory()
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if len(trajectory) != len(frames):
        raise GEIError("trajectory length differs from the frame count")
    segments = segment_trajectory(trajectory, penalty, min_length)
    geis = [GaitEnergyImage(_mean_image(frames[s:e + 1]), idx[s:e + 1], "piecewise")
            for s, e in (seg.frame_span for seg in segments)]
    return geis, segments
