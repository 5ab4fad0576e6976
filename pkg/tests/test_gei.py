import itertools

import numpy as np
import pytest

from realgait.gei import (GEIError, _fit_line, gei_cluster, gei_full, gei_piecewise, segment_trajectory)
from realgait.silhouette import SilhouetteFrame, SilhouetteSequence


def _sequence(frames, trajectory):
    return SilhouetteSequence([SilhouetteFrame(f, i, tuple(p)) for i, (f, p) in enumerate(zip(frames, trajectory))])


def test_full_identical_and_half(rng):
    f = (rng.random((16, 12)) > 0.5).astype(np.uint8)
    np.testing.assert_array_equal(gei_full(np.stack([f] * 5)).grid, f.astype(np.float32))
    two = np.stack([np.ones((8, 8)), np.zeros((8, 8))])
    np.testing.assert_array_equal(gei_full(two).grid, np.full((8, 8), 0.5, np.float32))


def test_full_matches_mean_oracle(rng):
    frames = (rng.random((10, 20, 15)) > 0.5).astype(np.uint8)
    oracle = np.zeros((20, 15))
    for f in frames:
        oracle += f
    np.testing.assert_allclose(gei_full(frames).grid, oracle / 10, atol=1e-6)
    with pytest.raises(GEIError):
        gei_full(np.zeros((0, 4, 4)))


def test_cluster_separable(rng):
    a = np.zeros((64, 44)); a[:, :22] = 1
    b = np.zeros((64, 44)); b[:, 22:] = 1
    frames, truth = [], []
    for i in range(14):
        base = a if i % 2 == 0 else b
        noisy = np.where(rng.random(base.shape) < 0.02, 1 - base, base)
        frames.append(noisy)
        truth.append(i % 2)
    frames = np.stack(frames)
    geis = gei_cluster(frames, k=2, seed=0)
    assert len(geis) == 2
    # nearest-centroid oracle on the two prototypes
    proto = np.stack([a, b]).reshape(2, -1)
    for g in geis:
        labels = {int(np.argmin(((proto - frames[i].reshape(-1)) ** 2).sum(1))) for i in g.source_frames}
        assert len(labels) == 1 and len(g.source_frames) == 7
        np.testing.assert_allclose(g.grid, frames[g.source_frames].mean(0), atol=1e-6)


def test_cluster_singletons(rng):
    frames = rng.random((5, 32, 22)).astype(np.float32)
    geis = gei_cluster(frames, k=5)
    assert sorted(i for g in geis for i in g.source_frames) == list(range(5))
    for g in geis:
        np.testing.assert_allclose(g.grid, frames[g.source_frames[0]], atol=1e-6)
    with pytest.raises(GEIError):
        gei_cluster(frames, k=6)


def test_cluster_deterministic(rng):
    frames = rng.random((20, 32, 22))
    a = gei_cluster(frames, k=3, seed=4)
    b = gei_cluster(frames, k=3, seed=4)
    assert [g.source_frames for g in a] == [g.source_frames for g in b]


def test_collinear_single_segment():
    pts = np.column_stack([np.arange(20) * 3.0, np.arange(20) * 1.5 + 7])
    (seg,) = segment_trajectory(pts, penalty=1e-3)
    assert seg.frame_span == (0, 19) and seg.sse == pytest.approx(0, abs=1e-9)
    a, b, c = seg.line
    assert a * a + b * b == pytest.approx(1.0)
    np.testing.assert_allclose(pts @ np.array([a, b]) + c, 0, atol=1e-9)


def _orthogonal_sse(pts):
    return _fit_line(pts)[1]


def test_l_shape_splits_at_corner():
    leg1 = np.column_stack([np.arange(10.0), np.zeros(10)])
    leg2 = np.column_stack([np.full(10, 9.0), np.arange(1.0, 11.0)])
    pts = np.vstack([leg1, leg2])
    segs = segment_trajectory(pts, penalty=1.0, min_length=2)
    assert len(segs) == 2
    # brute force over every 2-segment split
    costs = {k: _orthogonal_sse(pts[:k]) + _orthogonal_sse(pts[k:]) for k in range(2, len(pts) - 1)}
    best = min(costs, key=costs.get)
    assert segs[0].frame_span == (0, best - 1) and segs[1].frame_span[0] == best
    assert best in (9, 10)


def test_dp_matches_exhaustive_search(rng):
    pts = np.cumsum(rng.normal(size=(12, 2)) * 3, axis=0)
    penalty, min_len = 5.0, 2

    def cost(parts):
        return sum(_orthogonal_sse(pts[s:e]) + penalty for s, e in parts)

    best = np.inf
    for r in range(0, 6):
        for cuts in itertools.combinations(range(min_len, len(pts) - min_len + 1), r):
            bounds = (0, *cuts, len(pts))
            parts = list(zip(bounds, bounds[1:]))
            if all(e - s >= min_len for s, e in parts):
                best = min(best, cost(parts))
    segs = segment_trajectory(pts, penalty, min_len)
    got = sum(s.sse + penalty for s in segs)
    assert got == pytest.approx(best, rel=1e-9, abs=1e-9)


def test_huge_penalty_one_segment(rng):
    pts = rng.normal(size=(30, 2)) * 50
    assert len(segment_trajectory(pts, penalty=1e12)) == 1


def test_min_segment_respected(rng):
    pts = rng.normal(size=(40, 2)) * 20
    for s in segment_trajectory(pts, penalty=0.0, min_length=5):
        assert s.frame_span[1] - s.frame_span[0] + 1 >= 5


def test_piecewise_straight_equals_full(rng):
    frames = (rng.random((25, 16, 12)) > 0.5).astype(np.uint8)
    traj = np.column_stack([np.arange(25) * 2.0, np.full(25, 40.0)])
    seq = _sequence(frames, traj)
    geis, segs = gei_piecewise(seq)
    assert len(geis) == 1
    np.testing.assert_array_equal(geis[0].grid, gei_full(seq).grid)


def test_piecewise_corner_partition(rng):
    frames = (rng.random((30, 16, 12)) > 0.5).astype(np.uint8)
    traj = [(x * 4.0, 0.0) for x in range(15)] + [(56.0, y * 4.0) for y in range(1, 16)]
    geis, _ = gei_piecewise(_sequence(frames, traj))
    assert len(geis) == 2
    assert geis[0].source_frames + geis[1].source_frames == list(range(30))
    assert geis[1].source_frames[0] in (14, 15)


def test_piecewise_needs_matching_trajectory(rng):
    frames = np.zeros((6, 4, 4))
    with pytest.raises(GEIError):
        gei_piecewise(frames)
    with pytest.raises(GEIError):
        gei_piecewise(frames, trajectory=np.zeros((5, 2)))
