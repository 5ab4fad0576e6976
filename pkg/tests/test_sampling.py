import numpy as np
import pytest
from scipy.stats import chisquare

from realgait.sampling import (SamplingConfig, SamplingError, eval_indices, max_start, random_frames,
                               random_tracklet, random_tracklets)


def test_single_frame_sequence(rng):
    np.testing.assert_array_equal(random_frames(1, 5, rng).indices, [1] * 5)


def test_random_frames_range(rng):
    clip = random_frames(40, 6, rng)
    assert len(clip.indices) == 6 and clip.indices.min() >= 1 and clip.indices.max() <= 40
    np.testing.assert_array_equal(clip.zero_based, clip.indices - 1)


def test_random_frames_uniform(rng):
    draws = np.concatenate([random_frames(10, 100, rng).indices for _ in range(1000)])
    counts = np.bincount(draws, minlength=11)[1:]
    assert chisquare(counts).pvalue > 1e-3


def test_tracklet_shape_and_bound(rng):
    for _ in range(1000):
        clip = random_tracklet(40, 3, 2, rng)
        idx = clip.indices
        assert np.all(np.diff(idx) == 2) and idx.max() <= 40 and idx.min() >= 1
    assert clip.structure == ("tracklets", 1, 3, 2)


def test_tracklet_start_support(rng):
    n, l, s = 30, 4, 3
    starts = np.array([random_tracklet(n, l, s, rng).indices[0] for _ in range(10_000)])
    assert set(starts) == set(range(1, max_start(n, l, s) + 1))
    counts = np.bincount(starts)[1:]
    assert chisquare(counts).pvalue > 1e-3


def test_forced_start(rng):
    for _ in range(50):
        np.testing.assert_array_equal(random_tracklet(13, 4, 4, rng).indices, [1, 5, 9, 13])


def test_tracklets_structure(rng):
    clip = random_tracklets(200, 4, 7, 6, rng)
    runs = clip.indices.reshape(4, 7)
    assert len(clip.indices) == 28 and np.all(np.diff(runs, axis=1) == 6)
    assert clip.structure == ("tracklets", 4, 7, 6)


def test_tracklets_stride_one_bound(rng):
    for _ in range(500):
        runs = random_tracklets(28, 4, 7, 1, rng).indices.reshape(4, 7)
        assert runs[:, 0].max() <= 22 and runs.size == 28


def test_single_tracklet_matches_tracklet_distribution():
    a = np.random.default_rng(5)
    b = np.random.default_rng(5)
    for _ in range(100):
        np.testing.assert_array_equal(random_tracklets(50, 1, 5, 3, a).indices,
                                      random_tracklet(50, 5, 3, b).indices)


def test_strict_bound():
    assert max_start(40, 7, 6) == 4
    assert max_start(80, 7, 6, strict_paper_bound=True) == 80 - 42 - 6 + 2
    assert max_start(40, 7, 6, strict_paper_bound=True) == 1
    assert max_start(40, 3, 1, strict_paper_bound=True) == 38


def test_short_sequences_shrink_or_cycle(rng):
    clip = random_tracklet(10, 4, 6, rng)
    assert clip.structure[3] == 3 and clip.indices.max() <= 10
    clip = random_tracklet(3, 5, 2, rng)
    assert clip.structure[3] == 0 and len(clip.indices) == 5
    assert set(clip.indices) == {1, 2, 3}


def test_determinism():
    cfg = SamplingConfig()
    a = [cfg.sample(100, np.random.default_rng(9)).indices for _ in range(3)]
    assert all(np.array_equal(a[0], x) for x in a)


def test_config_validation():
    with pytest.raises(SamplingError):
        SamplingConfig(mode="xx")
    with pytest.raises(SamplingError):
        SamplingConfig(l=0)
    assert SamplingConfig().clip_length == 28 and SamplingConfig(mode="rf", m=30).clip_length == 30
    with pytest.raises(SamplingError):
        random_frames(0, 3, np.random.default_rng(0))


def test_eval_indices():
    np.testing.assert_array_equal(eval_indices(5), [1, 2, 3, 4, 5])
    idx = eval_indices(2000, 720)
    assert len(idx) == 720 and idx[0] == 1 and idx[-1] == 2000 and np.all(np.diff(idx) > 0)
