"""Random Frame (RF) and Random Tracklet (RT) sampling of training clips.

Frame ordinals are 1-based, matching the usual statement of the method:
a sequence of ``n`` frames is indexed ``1..n``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SamplingError(ValueError):
    pass


@dataclass
class SampledClip:
    indices: np.ndarray       # 1-based frame ordinals
    structure: tuple          # ("random_frames", m) or ("tracklets", u, l, s)
    source_length: int

    @property
    def zero_based(self) -> np.ndarray:
        return self.indices - 1


@dataclass
class SamplingConfig:
    mode: str = "rt"          # rf | rt
    m: int = 28
    u: int = 4
    l: int = 7
    s: int = 6
    strict_paper_bound: bool = False
    eval_max_frames: int = 720

    def __post_init__(self):
        if self.mode not in ("rf", "rt"):
            raise SamplingError(f"unknown sampling mode {self.mode!r}")
        if min(self.m, self.u, self.l, self.s) < 1:
            raise SamplingError("sampling sizes must be positive")

    @property
    def clip_length(self) -> int:
        return self.m if self.mode == "rf" else self.u * self.l

    def sample(self, n: int, rng: np.random.Generator) -> SampledClip:
        if self.mode == "rf":
            return random_frames(n, self.m, rng)
        return random_tracklets(n, self.u, self.l, self.s, rng, self.strict_paper_bound)


def random_frames(n: int, m: int, rng: np.random.Generator) -> SampledClip:
    if n < 1:
        raise SamplingError("cannot sample from an empty sequence")
    if m < 1:
        raise SamplingError("m must be positive")
    return SampledClip(rng.integers(1, n + 1, size=m), ("random_frames", m), n)


def max_start(n: int, l: int, s: int, strict_paper_bound: bool = False) -> int:
    """Largest valid 1-based tracklet start.

    The derived bound ``n - (l-1)s`` is the last start whose tracklet stays
    inside the sequence. The strict bound ``n - ls - s + 2`` is tighter for
    s >= 2 and is clipped to at least 1 when the sequence is short.
    """
    r_max = n - (l - 1) * s
    if strict_paper_bound:
        r_max = min(r_max, max(1, n - l * s - s + 2))
    return r_max


def _tracklet(n: int, l: int, s: int, rng: np.random.Generator, strict: bool) -> tuple[np.ndarray, int]:
    if n < 1:
        raise SamplingError("cannot sample from an empty sequence")
    if l < 1 or s < 1:
        raise SamplingError("l and s must be positive")
    if n < (l - 1) * s + 1:
        # too short for stride s: shrink the stride, or cycle when n < l
        s = (n - 1) // (l - 1) if l > 1 else s
        if s < 1:
            r = int(rng.integers(1, n + 1))
            return (r - 1 + np.arange(l)) % n + 1, 0
    r = int(rng.integers(1, max_start(n, l, s, strict) + 1))
    return r + s * np.arange(l), s


def random_tracklet(n: int, l: int, s: int, rng: np.random.Generator,
                    strict_paper_bound: bool = False) -> SampledClip:
    """``l`` frames with step ``s`` from a uniform random start.

    The recorded structure carries the step actually used, which is smaller
    than ``s`` (or 0 for cyclic repetition) when the sequence is too short.
    """
    idx, used = _tracklet(n, l, s, rng, strict_paper_bound)
    return SampledClip(idx, ("tracklets", 1, l, used), n)


def random_tracklets(n: int, u: int, l: int, s: int, rng: np.random.Generator,
                     strict_paper_bound: bool = False) -> SampledClip:
    """Concatenate ``u`` independent tracklets; they may overlap."""
    if u < 1:
        raise SamplingError("u must be positive")
    parts = [_tracklet(n, l, s, rng, strict_paper_bound) for _ in range(u)]
    return SampledClip(np.concatenate([p[0] for p in parts]), ("tracklets", u, l, parts[0][1]), n)


def eval_indices(n: int, cap: int = 720) -> np.ndarray:
    """All 1-based ordinals, or ``cap`` evenly spaced ones for long sequences."""
    if n < 1:
        raise SamplingError("cannot sample from an empty sequence")
    if n <= cap:
        return np.arange(1, n + 1)
    return np.unique(np.round(np.linspace(1, n, cap)).astype(int))

