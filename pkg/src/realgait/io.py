"""On-disk formats: input videos, silhouette trees, 16-bit GEI images."""
from __future__ import annotations

import json
import shutil
from pathlib import Path

import cv2
import numpy as np

from .gei import GaitEnergyImage
from .silhouette import ExtractedVideo, SilhouetteFrame, SilhouetteSequence
from .training import ClipSource

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".mpg", ".mpeg"}
SIDECAR = "silhouettes.json"


class DataError(OSError):
    pass


def find_video(video_root, video_id: str) -> Path:
    root = Path(video_root)
    cand = root / video_id
    if cand.is_dir():
        return cand
    for suffix in sorted(VIDEO_SUFFIXES):
        if (root / f"{video_id}{suffix}").exists():
            return root / f"{video_id}{suffix}"
    raise DataError(f"video {video_id!r} not found under {root}")


def _imread_rgb(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DataError(f"cannot decode image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def decode_opencv(path: Path, frame_range: tuple[int, int] | None = None):
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DataError(f"cannot open video {path}")
    idx = 0
    try:
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if frame_range is None or frame_range[0] <= idx <= frame_range[1]:
                yield idx, cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
            if frame_range is not None and idx >= frame_range[1]:
                break
            idx += 1
    finally:
        cap.release()


def read_video(path, frame_range: tuple[int, int] | None = None, decoder=decode_opencv):
    """``(indices, frames)`` of a directory of numbered images or a video file.

    Image files are indexed by the integer in their stem; video frames by
    decode order from 0. ``decoder(path, frame_range)`` yielding
    ``(index, rgb_frame)`` pairs can replace the OpenCV reader.
    """
    path = Path(path)
    if path.is_dir():
        files = []
        for f in path.iterdir():
            if f.suffix.lower() in IMAGE_SUFFIXES:
                try:
                    files.append((int(f.stem), f))
                except ValueError:
                    continue
        files.sort()
        if frame_range is not None:
            files = [(i, f) for i, f in files if frame_range[0] <= i <= frame_range[1]]
        if not files:
            raise DataError(f"no numbered frames in {path}")
        return [i for i, _ in files], [_imread_rgb(f) for _, f in files]
    if not path.exists():
        raise DataError(f"video {path} does not exist")
    pairs = list(decoder(path, frame_range))
    if not pairs:
        raise DataError(f"no frames decoded from {path}")
    return [i for i, _ in pairs], [f for _, f in pairs]


# --- silhouette trees -------------------------------------------------------------

def write_extracted(out_root, record, extracted: ExtractedVideo, variant=None) -> Path:
    """Write one video's normalized frames and sidecar atomically.

    Frames land in ``<out_root>/<video_id>/<frame_index>.png``; the directory
    only appears once complete.
    """
    out_root = Path(out_root)
    final = out_root / record.video_id
    tmp = out_root / f".{record.video_id}.partial"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        seq = extracted.sequence
        frames = [] if seq is None else seq.frames
        binary = variant is None or variant.pedestrian_mode == "binary" and variant.background_mode == "subtracted"
        for frame, image in zip(frames, extracted.images):
            img = np.asarray(image)
            if binary:
                img = img.astype(np.uint8) * 255
            elif img.ndim == 3:
                img = cv2.cvtColor(img.astype(np.uint8), cv2.COLOR_RGB2BGR)
            if not cv2.imwrite(str(tmp / f"{frame.frame_index}.png"), img):
                raise DataError(f"failed to write frame {frame.frame_index} of {record.video_id}")
        meta = {
            "video_id": record.video_id,
            "subject_id": record.subject_id,
            "camera_id": record.camera_id,
            "frames": [f.frame_index for f in frames],
            "trajectory": [list(f.trajectory_point) for f in frames],
            "dropped": list(extracted.dropped),
            "variant": None if variant is None else {"pedestrian_mode": variant.pedestrian_mode,
                                                     "background_mode": variant.background_mode,
                                                     "bins": variant.bins},
        }
        with open(tmp / SIDECAR, "w") as fh:
            json.dump(meta, fh, indent=1)
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return final


def read_sidecar(video_dir) -> dict:
    path = Path(video_dir) / SIDECAR
    if not path.exists():
        raise DataError(f"missing silhouette sidecar {path}")
    with open(path) as fh:
        return json.load(fh)


def read_images(video_dir, indices=None) -> np.ndarray:
    """Stored frames as float32 in [0, 1]: (T, H, W) or (T, H, W, 3)."""
    video_dir = Path(video_dir)
    meta = read_sidecar(video_dir)
    frames = meta["frames"] if indices is None else [meta["frames"][i] for i in indices]
    out = []
    for f in frames:
        img = cv2.imread(str(video_dir / f"{f}.png"), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise DataError(f"cannot read {video_dir / f'{f}.png'}")
        if img.ndim == 3:
            img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
        out.append(img.astype(np.float32) / 255.0)
    if not out:
        raise DataError(f"{video_dir} holds no frames")
    return np.stack(out)


def read_sequence(video_dir) -> SilhouetteSequence:
    meta = read_sidecar(video_dir)
    imgs = read_images(video_dir)
    if imgs.ndim != 3:
        raise DataError(f"{video_dir} holds color frames, not binary silhouettes")
    frames = [SilhouetteFrame((img >= 0.5).astype(np.uint8), idx, tuple(pt))
              for img, idx, pt in zip(imgs, meta["frames"], meta["trajectory"])]
    return SilhouetteSequence(frames, meta["subject_id"], meta["camera_id"], meta["video_id"],
                              meta.get("dropped", []))


def to_model_input(images: np.ndarray, size: int, channels: int) -> np.ndarray:
    """(T, H, W[, 3]) float images -> (T, C, size, size) float32 model input."""
    out = []
    for img in images:
        if img.shape[0] != size or img.shape[1] != size:
            img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)
        if img.ndim == 2:
            img = img[None]
        else:
            img = np.transpose(img, (2, 0, 1))
        if img.shape[0] != channels:
            raise DataError(f"stored frames have {img.shape[0]} channel(s), the model expects {channels}")
        out.append(img)
    return np.ascontiguousarray(np.stack(out), dtype=np.float32)


class SilhouetteTreeSource(ClipSource):
    """Training clips read from an extracted silhouette tree (cached in memory)."""

    def __init__(self, root, video_ids_by_subject: dict[str, list[str]], size: int, channels: int = 1):
        self.root = Path(root)
        self.size, self.channels = size, channels
        self._cache: dict[str, np.ndarray] = {}
        self.videos_by_subject = {}
        for subject, vids in sorted(video_ids_by_subject.items()):
            entries = []
            for vid in vids:
                meta = read_sidecar(self.root / vid)
                if meta["frames"]:
                    entries.append((vid, len(meta["frames"])))
            if entries:
                self.videos_by_subject[subject] = entries

    def all_frames(self, video_id: str) -> np.ndarray:
        if video_id not in self._cache:
            self._cache[video_id] = to_model_input(read_images(self.root / video_id), self.size, self.channels)
        return self._cache[video_id]

    def load(self, video_id, zero_based):
        return self.all_frames(video_id)[zero_based]


# --- GEI images ------------------------------------------------------------------

def write_png16(path, grid: np.ndarray) -> None:
    """Store a [0, 1] image as 16-bit PNG (value * 65535) under any file name."""
    data = np.round(np.clip(grid, 0.0, 1.0) * 65535.0).astype(np.uint16)
    ok, buf = cv2.imencode(".png", data)
    if not ok:
        raise DataError(f"cannot encode {path}")
    Path(path).write_bytes(buf.tobytes())


def read_png16(path) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), np.uint8)
    img = cv2.imdecode(raw, cv2.IMREAD_UNCHANGED)
    if img is None or img.dtype != np.uint16:
        raise DataError(f"{path} is not a 16-bit PNG")
    return img.astype(np.float32) / 65535.0


def write_geis(out_dir, geis: dict[str, list[GaitEnergyImage]], segments=None) -> Path:
    """``geis`` maps kind -> images; writes ``gei_<kind>[_<i>].png16`` plus ``gei.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {}
    for kind, items in geis.items():
        for i, g in enumerate(items):
            name = "gei_full.png16" if kind == "full" else f"gei_{kind}_{i}.png16"
            write_png16(out_dir / name, g.grid)
            meta[name] = {"kind": g.kind, "source_frames": [int(f) for f in g.source_frames]}
    doc = {"images": meta}
    if segments is not None:
        doc["segments"] = [{"frame_span": list(s.frame_span), "line": list(s.line), "sse": s.sse}
                           for s in segments]
    with open(out_dir / "gei.json", "w") as fh:
        json.dump(doc, fh, indent=1)
    return out_dir
