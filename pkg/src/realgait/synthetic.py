"""Synthetic fixtures: walking stick figures, moving squares, toy surveillance videos."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

import cv2
import numpy as np

from .manifest import BoundingBox, DatasetManifest, VideoRecord


@dataclass(frozen=True)
class Walker:
    """Body proportions and gait of one synthetic identity (fractions of frame height)."""
    height: float = 0.8
    shoulder: float = 0.12
    hip: float = 0.08
    limb: float = 0.035
    stride: float = 0.5        # max leg swing, radians
    arm_swing: float = 0.4
    period: float = 16.0       # frames per gait cycle
    head: float = 0.06

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Walker":
        return cls(height=rng.uniform(0.7, 0.9), shoulder=rng.uniform(0.08, 0.16),
                   hip=rng.uniform(0.05, 0.11), limb=rng.uniform(0.025, 0.05),
                   stride=rng.uniform(0.25, 0.7), arm_swing=rng.uniform(0.1, 0.6),
                   period=rng.uniform(10, 22), head=rng.uniform(0.045, 0.075))


def draw_walker(walker: Walker, t: float, size: int = 64, phase: float = 0.0,
                center: tuple[float, float] | None = None, canvas=None, value=1) -> np.ndarray:
    """Render one frame of ``walker`` at time ``t`` into a ``size`` x ``size`` mask."""
    img = np.zeros((size, size), np.uint8) if canvas is None else canvas
    H = walker.height * size
    cx, top = (size / 2, (size - H) / 2) if center is None else (center[0], center[1] - H / 2)
    ang = walker.stride * np.sin(2 * np.pi * t / walker.period + phase)
    arm = walker.arm_swing * np.sin(2 * np.pi * t / walker.period + phase + np.pi)
    th = max(1, int(round(walker.limb * size)))
    head_r = walker.head * size
    neck = top + 2 * head_r
    hip_y = top + 0.55 * H
    leg = H - (hip_y - top)
    pt = lambda x, y: (int(round(x)), int(round(y)))
    cv2.circle(img, pt(cx, top + head_r), max(1, int(round(head_r))), value, -1)
    torso = np.array([[cx - walker.shoulder * size / 2, neck], [cx + walker.shoulder * size / 2, neck],
                      [cx + walker.hip * size / 2, hip_y], [cx - walker.hip * size / 2, hip_y]])
    cv2.fillConvexPoly(img, np.round(torso).astype(np.int32), value)
    for sign in (1, -1):
        a = sign * ang
        knee = (cx + np.sin(a) * leg / 2, hip_y + np.cos(a) * leg / 2)
        foot = (knee[0] + np.sin(a * 0.6) * leg / 2, knee[1] + np.cos(a * 0.6) * leg / 2)
        cv2.line(img, pt(cx, hip_y), pt(*knee), value, th)
        cv2.line(img, pt(*knee), pt(*foot), value, th)
        b = sign * arm
        hand = (cx + np.sin(b) * 0.35 * H, neck + np.cos(b) * 0.35 * H)
        cv2.line(img, pt(cx, neck + th), pt(*hand), value, max(1, th - 1))
    return img


def walking_sequence(walker: Walker, n_frames: int, size: int = 64, phase: float = 0.0,
                     t0: float = 0.0) -> np.ndarray:
    """(n_frames, size, size) float32 silhouettes in {0, 1}."""
    return np.stack([draw_walker(walker, t0 + t, size, phase) for t in range(n_frames)]).astype(np.float32)


def identity_dataset(n_identities: int, sequences_per_identity: int, n_frames: int = 30,
                     size: int = 64, seed: int = 0, spread: float | None = None,
                     max_shift: int = 0, flip_rate: float = 0.0) -> dict[str, tuple[str, np.ndarray]]:
    """``{video_id: (subject_id, frames)}`` with distinct walkers per identity.

    Sequences of one identity differ in starting phase. With ``spread`` set,
    walkers are the default body with every parameter scaled by a factor in
    ``1 +- spread`` instead of fully random, which makes identities similar.
    ``max_shift`` translates each sequence by up to that many pixels and
    ``flip_rate`` inverts that fraction of pixels, both fixed per sequence.
    """
    rng = np.random.default_rng(seed)
    base = Walker()
    out = {}
    for i in range(n_identities):
        if spread is None:
            w = Walker.random(rng)
        else:
            w = replace(base, **{f.name: getattr(base, f.name) * (1 + rng.uniform(-spread, spread))
                                 for f in fields(base)})
        for j in range(sequences_per_identity):
            seq = walking_sequence(w, n_frames, size, phase=rng.uniform(0, 2 * np.pi))
            if max_shift:
                dy, dx = rng.integers(-max_shift, max_shift + 1, 2)
                seq = np.roll(seq, (dy, dx), axis=(1, 2))
            if flip_rate:
                seq = np.where(rng.random(seq.shape) < flip_rate, 1 - seq, seq).astype(np.float32)
            out[f"s{i:02d}_v{j}"] = (f"s{i:02d}", seq)
    return out


def square_video(n_frames: int = 100, height: int = 240, width: int = 320,
                 square: tuple[int, int] = (40, 20), speed: int = 2, seed: int = 0,
                 sensor_noise: float = 2.0):
    """Static noise background with a white ``square`` (h, w) moving right ``speed`` px/frame.

    Returns RGB uint8 frames and the boolean ground-truth masks.
    """
    rng = np.random.default_rng(seed)
    bg = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
    frames, truth = [], []
    sh, sw = square
    y0 = (height - sh) // 2
    for t in range(n_frames):
        f = np.clip(bg + rng.normal(0, sensor_noise, bg.shape), 0, 255).astype(np.uint8)
        x0 = 10 + speed * t
        m = np.zeros((height, width), bool)
        m[y0:y0 + sh, x0:x0 + sw] = True
        f[m] = 255
        frames.append(f)
        truth.append(m)
    return frames, truth


def pedestrian_video(walker: Walker, n_frames: int = 60, height: int = 240, width: int = 320,
                     person_height: int = 120, start=(60.0, 130.0), velocity=(3.0, 0.0),
                     seed: int = 0, warmup: int = 20):
    """A walker crossing a static textured scene.

    Returns ``(frames, boxes)``: RGB uint8 frames (``warmup`` empty frames
    first, so the background model can settle) and the true per-frame boxes
    of the walking frames, indexed from ``warmup``.
    """
    rng = np.random.default_rng(seed)
    bg = cv2.GaussianBlur(rng.integers(0, 256, (height, width, 3), dtype=np.uint8), (5, 5), 0)
    color = rng.integers(0, 80, 3)
    frames, boxes = [], {}
    for t in range(warmup + n_frames):
        f = np.clip(bg + rng.normal(0, 1.5, bg.shape), 0, 255).astype(np.uint8)
        if t >= warmup:
            k = t - warmup
            cx, cy = start[0] + velocity[0] * k, start[1] + velocity[1] * k
            mask = np.zeros((height, width), np.uint8)
            scale = person_height / walker.height
            sub = draw_walker(walker, k, int(round(scale)), center=(scale / 2, scale / 2))
            top = int(round(cy - scale / 2))
            left = int(round(cx - scale / 2))
            _paste(mask, sub, top, left)
            f[mask > 0] = color
            ys, xs = np.nonzero(mask)
            if len(ys):
                boxes[t] = BoundingBox((xs.min() + xs.max() + 1) / 2, (ys.min() + ys.max() + 1) / 2,
                                       xs.max() - xs.min() + 1, ys.max() - ys.min() + 1, t)
        frames.append(f)
    return frames, boxes


def _paste(dst, src, top, left):
    h, w = src.shape
    y0, x0 = max(top, 0), max(left, 0)
    y1, x1 = min(top + h, dst.shape[0]), min(left + w, dst.shape[1])
    if y1 > y0 and x1 > x0:
        dst[y0:y1, x0:x1] |= src[y0 - top:y1 - top, x0 - left:x1 - left]


def keyframes_from_boxes(boxes: dict[int, BoundingBox], stride: int = 5) -> tuple[BoundingBox, ...]:
    frames = sorted(boxes)
    picked = frames[::stride]
    if picked[-1] != frames[-1]:
        picked.append(frames[-1])
    return tuple(boxes[f] for f in picked)


def toy_dataset(root, n_subjects: int = 2, videos_per_subject: int = 1, n_frames: int = 30,
                seed: int = 0, cameras: int = 1, test_subjects: int | None = None) -> DatasetManifest:
    """Write numbered-frame video directories under ``root`` and return their manifest."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    records, split = [], {}
    test_subjects = n_subjects if test_subjects is None else test_subjects
    for s in range(n_subjects):
        subject = f"p{s:03d}"
        split[subject] = "test" if s < test_subjects else "train"
        walker = Walker.random(rng)
        for v in range(videos_per_subject):
            vid = f"{subject}_v{v}"
            cam = 1 + (v % cameras)
            frames, boxes = pedestrian_video(walker, n_frames, seed=int(rng.integers(1 << 30)),
                                             velocity=(rng.uniform(2, 4), rng.uniform(-0.5, 0.5)))
            vdir = root / vid
            vdir.mkdir(parents=True, exist_ok=True)
            for i, f in enumerate(frames):
                cv2.imwrite(str(vdir / f"{i:06d}.png"), cv2.cvtColor(f, cv2.COLOR_RGB2BGR))
            keys = keyframes_from_boxes(boxes)
            records.append(VideoRecord(subject, cam, vid, (0, len(frames) - 1), keys))
    return DatasetManifest(records, split, 5)
