import json

import pytest

from realgait.manifest import (BoundingBox, DatasetManifest, ManifestError, ProbeGallerySpec, VideoRecord,
                               build_probe_gallery, load_manifest, parse_manifest, save_manifest)


def _record(subject, camera, video, start=0, end=20):
    return {"subject_id": subject, "camera_id": camera, "video_id": video, "frame_range": [start, end],
            "keyframes": [{"frame": start, "x": 50.0, "y": 60.0, "w": 20.0, "h": 50.0},
                          {"frame": end, "x": 80.0, "y": 60.0, "w": 20.0, "h": 50.0}]}


def _doc(records, split):
    return {"keyframe_stride": 5, "records": records, "split": split}


def _box(frame=0):
    return BoundingBox(10.0, 10.0, 4.0, 8.0, frame)


def test_round_trip_of_hand_written_manifest(tmp_path):
    doc = _doc([_record("A", 1, "a1"), _record("A", 2, "a2"), _record("B", 1, "b1")], {"A": "train", "B": "test"})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    m = load_manifest(path)
    assert len(m.records) == 3
    assert m.subjects("train") == ["A"] and [r.video_id for r in m.videos("test")] == ["b1"]
    save_manifest(m, tmp_path / "copy.json")
    again = load_manifest(tmp_path / "copy.json")
    assert again.records == m.records and again.split == m.split
    # a directory holding manifest.json is accepted too
    assert load_manifest(tmp_path).records == m.records


def test_split_conflict_is_rejected(tmp_path):
    text = ('{"keyframe_stride": 5, "records": ' + json.dumps([_record("A", 1, "a1")]) +
            ', "split": {"A": "train", "A": "test"}}')
    path = tmp_path / "m.json"
    path.write_text(text)
    with pytest.raises(ManifestError, match="split conflict"):
        load_manifest(path)


def test_unsorted_keyframes_are_rejected():
    rec = _record("A", 1, "a1")
    rec["keyframes"].reverse()
    with pytest.raises(ManifestError, match="keyframes not sorted"):
        parse_manifest(_doc([rec], {"A": "train"}))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["records"].append(_record("A", 2, "a1")), "duplicate"),
    (lambda d: d["split"].pop("A"), "split"),
    (lambda d: d["records"][0].pop("camera_id"), "malformed"),
    (lambda d: d["records"][0].update(frame_range=[5, 20]), "outside"),
])
def test_invalid_manifests(mutate, message):
    doc = _doc([_record("A", 1, "a1")], {"A": "train"})
    mutate(doc)
    with pytest.raises(ManifestError, match=message):
        parse_manifest(doc)


def test_missing_file(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "nope.json")


def test_box_invariants():
    with pytest.raises(ManifestError):
        BoundingBox(1, 1, 0.0, 5)
    with pytest.raises(ManifestError):
        BoundingBox(1, 1, 2, 5, frame_index=-1)
    with pytest.raises(ManifestError):
        VideoRecord("A", 1, "v", (0, 10), ())


def _manifest(spec):
    """spec: {video_id: (subject, camera)}; every subject in test."""
    records = [VideoRecord(s, c, v, (0, 10), (_box(0),)) for v, (s, c) in spec.items()]
    return DatasetManifest(records, {s: "test" for s, _ in spec.values()})


def test_multi_scene_probe_rule():
    m = _manifest({"v1": ("S1", 1), "v2": ("S1", 2), "v3": ("S2", 1)})
    (spec,) = build_probe_gallery(m, "multi_scene")
    assert {v for _, v in spec.probe} == {"v1", "v3"}
    assert [v for _, v in spec.gallery] == ["v2"]
    assert spec.imposter == [False, True]
    (spec,) = build_probe_gallery(m, "multi_scene", {"S1": "v2"})
    assert {v for _, v in spec.probe} == {"v2", "v3"}
    with pytest.raises(ManifestError):
        build_probe_gallery(m, "multi_scene", {"S1": "v3"})


def test_cross_scene_pairs_and_filtering():
    spec = {f"s{s}_c{c}": (f"s{s}", c) for s in range(3) for c in range(1, 9)}
    assert len(build_probe_gallery(_manifest(spec), "cross_scene")) == 56

    m = _manifest({"a4": ("A", 4), "b4": ("B", 4), "b1": ("B", 1)})
    specs = {s.scene_pair: s for s in build_probe_gallery(m, "cross_scene")}
    assert [v for _, v in specs[(4, 1)].probe] == ["b4"]
    for s in specs.values():
        assert not any(s.imposter)

    opens = {s.scene_pair: s for s in build_probe_gallery(m, "open_set_cross_scene")}
    pair = opens[(4, 1)]
    assert dict(zip((v for _, v in pair.probe), pair.imposter)) == {"a4": True, "b4": False}


def test_probe_gallery_overlap_rejected():
    with pytest.raises(ManifestError):
        ProbeGallerySpec("multi_scene", [("A", "v")], [("A", "v")])


def test_unknown_protocol_and_empty_test_split():
    m = _manifest({"v1": ("S1", 1)})
    with pytest.raises(ManifestError):
        build_probe_gallery(m, "sideways")
    train_only = DatasetManifest(m.records, {"S1": "train"})
    with pytest.raises(ManifestError, match="empty test"):
        build_probe_gallery(train_only, "multi_scene")


def test_deterministic():
    m = _manifest({f"v{i}": (f"S{i % 3}", 1 + i % 4) for i in range(12)})
    for protocol in ("multi_scene", "cross_scene", "open_set_cross_scene"):
        a = build_probe_gallery(m, protocol)
        b = build_probe_gallery(m, protocol)
        assert [(s.probe, s.gallery, s.imposter) for s in a] == [(s.probe, s.gallery, s.imposter) for s in b]
