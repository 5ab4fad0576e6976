"""Dataset manifest: subjects, cameras, videos, keyframe boxes and splits.

The manifest is a single JSON document::

    {
      "keyframe_stride": 5,
      "records": [
        {"subject_id": "0001", "camera_id": 1, "video_id": "0001_c1_v1",
         "frame_range": [100, 180],
         "keyframes": [{"frame": 100, "x": 512.0, "y": 300.0, "w": 40.0, "h": 110.0}, ...]}
      ],
      "split": {"0001": "train", ...}
    }

Box coordinates are source-video pixels with (x, y) the box center.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

PROTOCOLS = ("multi_scene", "cross_scene", "open_set_cross_scene")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_center: float
    y_center: float
    width: float
    height: float
    frame_index: int = 0

    def __post_init__(self):
        for name in ("x_center", "y_center", "width", "height"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "frame_index", int(self.frame_index))
        if not self.width > 0 or not self.height > 0:
            raise ManifestError(f"box at frame {self.frame_index} has non-positive size "
                                f"({self.width} x {self.height})")
        if self.frame_index < 0:
            raise ManifestError(f"negative frame index {self.frame_index}")


@dataclass(frozen=True)
class VideoRecord:
    subject_id: str
    camera_id: int
    video_id: str
    frame_range: tuple[int, int]
    keyframe_boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        object.__setattr__(self, "camera_id", int(self.camera_id))
        object.__setattr__(self, "frame_range", (int(self.frame_range[0]), int(self.frame_range[1])))
        object.__setattr__(self, "keyframe_boxes", tuple(self.keyframe_boxes))
        start, end = self.frame_range
        if start > end:
            raise ManifestError(f"{self.video_id}: empty frame range {self.frame_range}")
        if not self.keyframe_boxes:
            raise ManifestError(f"{self.video_id}: at least one keyframe is required")
        frames = [b.frame_index for b in self.keyframe_boxes]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ManifestError(f"{self.video_id}: keyframes not sorted")
        if frames[0] < start or frames[-1] > end:
            raise ManifestError(f"{self.video_id}: keyframe outside frame range {self.frame_range}")


@dataclass
class DatasetManifest:
    records: list[VideoRecord]
    split: dict[str, str]
    keyframe_stride: int = 5

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if rec.video_id in seen:
                raise ManifestError(f"duplicate video_id {rec.video_id!r}")
            seen.add(rec.video_id)
            if rec.subject_id not in self.split:
                raise ManifestError(f"subject {rec.subject_id!r} has no split assignment")
        bad = {s: v for s, v in self.split.items() if v not in ("train", "test")}
        if bad:
            raise ManifestError(f"unknown split values: {bad}")
        self._by_id = {rec.video_id: rec for rec in self.records}

    def record(self, video_id: str) -> VideoRecord:
        return self._by_id[video_id]

    def subjects(self, split: str) -> list[str]:
        return sorted(s for s, v in self.split.items() if v == split)

    def videos(self, split: str | None = None) -> list[VideoRecord]:
        if split is None:
            return list(self.records)
        return [r for r in self.records if self.split[r.subject_id] == split]

    def to_json(self) -> dict:
        return {
            "keyframe_stride": self.keyframe_stride,
            "records": [
                {
                    "subject_id": r.subject_id,
                    "camera_id": r.camera_id,
                    "video_id": r.video_id,
                    "frame_range": list(r.frame_range),
                    "keyframes": [
                        {"frame": b.frame_index, "x": b.x_center, "y": b.y_center,
                         "w": b.width, "h": b.height}
                        for b in r.keyframe_boxes
                    ],
                }
                for r in self.records
            ],
            "split": dict(self.split),
        }


def _parse_split(raw: dict) -> dict[str, str]:
    return {str(k): v for k, v in raw.items()}


def parse_manifest(doc: dict) -> DatasetManifest:
    try:
        stride = int(doc.get("keyframe_stride", 5))
        records = []
        for raw in doc["records"]:
            boxes = tuple(
                BoundingBox(float(k["x"]), float(k["y"]), float(k["w"]), float(k["h"]),
                            int(k["frame"]))
                for k in raw["keyframes"]
            )
            start, end = raw["frame_range"]
            records.append(VideoRecord(str(raw["subject_id"]), int(raw["camera_id"]),
                                       str(raw["video_id"]), (int(start), int(end)), boxes))
        split = _parse_split(doc["split"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ManifestError):
            raise
        raise ManifestError(f"malformed manifest record: {exc!r}") from exc
    return DatasetManifest(records, split, stride)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")

    with open(path) as fh:
        doc = json.load(fh, object_pairs_hook=_reject_duplicate_keys)
    return parse_manifest(doc)


def _reject_duplicate_keys(pairs):
    # A subject listed under both splits only shows up as a repeated key.
    out = {}
    for key, value in pairs:
        if key in out and out[key] != value:
            if {out[key], value} <= {"train", "test"}:
                raise ManifestError(f"split conflict: subject {key!r} is in both "
                                    f"{out[key]!r} and {value!r}")
            raise ManifestError(f"duplicate key {key!r}")
        out[key] = value
    return out


def save_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w") as fh:
        json.dump(manifest.to_json(), fh, indent=1)


@dataclass
class ProbeGallerySpec:
    """One probe/gallery assignment.

    ``imposter[i]`` is true when probe ``i``'s subject has no video in the
    gallery of this spec.
    """
    protocol: str
    probe: list[tuple[str, str]]
    gallery: list[tuple[str, str]]
    scene_pair: tuple[int, int] | None = None
    imposter: list[bool] = field(default_factory=list)

    def __post_init__(self):
        overlap = {v for _, v in self.probe} & {v for _, v in self.gallery}
        if overlap:
            raise ManifestError(f"videos in both probe and gallery: {sorted(overlap)}")
        if not self.imposter:
            gallery_subjects = {s for s, _ in self.gallery}
            self.imposter = [s not in gallery_subjects for s, _ in self.probe]


def _default_probe(videos: list[VideoRecord]) -> VideoRecord:
    return min(videos, key=lambda r: (r.camera_id, r.video_id))


def build_probe_gallery(manifest: DatasetManifest, protocol: str,
                        probe_overrides: dict[str, str] | None = None) -> list[ProbeGallerySpec]:
    """Materialize the probe/gallery specs of one evaluation protocol.

    ``multi_scene`` yields a single spec with one probe video per test subject
    (the smallest ``(camera_id, video_id)`` unless ``probe_overrides`` maps
    the subject to a video). The cross-scene protocols yield one spec per
    ordered camera pair; ``cross_scene`` drops probes whose subject is absent
    from the gallery camera while ``open_set_cross_scene`` keeps them and
    flags them as imposters.
    """
    if protocol not in PROTOCOLS:
        raise ManifestError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    test = manifest.videos("test")
    if not test:
        raise ManifestError("empty test split")

    if protocol == "multi_scene":
        overrides = probe_overrides or {}
        by_subject: dict[str, list[VideoRecord]] = {}
        for rec in test:
            by_subject.setdefault(rec.subject_id, []).append(rec)
        probe_ids = set()
        for subject, videos in by_subject.items():
            if subject in overrides:
                chosen = overrides[subject]
                if chosen not in {v.video_id for v in videos}:
                    raise ManifestError(f"override {chosen!r} is not a test video of {subject!r}")
                probe_ids.add(chosen)
            else:
                probe_ids.add(_default_probe(videos).video_id)
        ordered = sorted(test, key=lambda r: (r.subject_id, r.camera_id, r.video_id))
        probe = [(r.subject_id, r.video_id) for r in ordered if r.video_id in probe_ids]
        gallery = [(r.subject_id, r.video_id) for r in ordered if r.video_id not in probe_ids]
        return [ProbeGallerySpec(protocol, probe, gallery)]

    cameras = sorted({r.camera_id for r in test})
    specs = []
    for cam_a, cam_b in itertools.permutations(cameras, 2):
        gallery_recs = sorted((r for r in test if r.camera_id == cam_b),
                              key=lambda r: (r.subject_id, r.video_id))
        gallery = [(r.subject_id, r.video_id) for r in gallery_recs]
        gallery_subjects = {s for s, _ in gallery}
        probe_recs = sorted((r for r in test if r.camera_id == cam_a),
                            key=lambda r: (r.subject_id, r.video_id))
        if protocol == "cross_scene":
            probe_recs = [r for r in probe_recs if r.subject_id in gallery_subjects]
        probe = [(r.subject_id, r.video_id) for r in probe_recs]
        specs.append(ProbeGallerySpec(protocol, probe, gallery, (cam_a, cam_b)))
    return specs
