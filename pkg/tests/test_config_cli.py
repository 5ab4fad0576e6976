import json

import numpy as np
import pytest

from realgait import cli
from realgait.config import KEYS, ConfigError, RunConfig, env_overrides, load_config, read_config_file
from realgait.evaluation import EmbeddingStore
from realgait.manifest import DatasetManifest, save_manifest
from realgait.synthetic import toy_dataset

TINY = """\
# small network for fast runs
model.input_size = 64
model.use_alignment = false
model.block23_stride = 1
model.channel_scale = 0.25
model.patch_dim = 16
train.phases = 1e-3:4
train.p = 2
train.k = 2
train.checkpoint_every = 2
train.log_every = 1
sampling.u = 2
sampling.l = 3
sampling.s = 2
gei.clusters = 3
"""


def test_precedence(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"train": {"margin": 0.3, "p": 8}, "run.seed": 4}))
    env = {"REALGAIT_TRAIN__P": "12", "REALGAIT_RUN__SEED": "5", "OTHER": "x"}
    cfg = load_config(path, {"run.seed": "6"}, env)
    assert cfg["train.margin"] == 0.3 and cfg.source("train.margin") == str(path)
    assert cfg["train.p"] == 12 and cfg.source("train.p") == "environment"
    assert cfg["run.seed"] == 6 and cfg.source("run.seed") == "command line"
    assert cfg["train.k"] == 2 and cfg.source("train.k") == "default"


def test_key_value_file_and_parsers(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(TINY + "extract.learning_rate = auto\neval.fars = 1, 10\n")
    values = read_config_file(path)
    assert values["model.input_size"] == "64"
    cfg = RunConfig().update(values, "file")
    assert cfg["train.phases"] == [(1e-3, 4)] and cfg["model.use_alignment"] is False
    assert cfg["extract.learning_rate"] is None and cfg["eval.fars"] == [1.0, 10.0]
    assert env_overrides({"REALGAIT_SAMPLING__MODE": "rf"}) == {"sampling.mode": "rf"}


@pytest.mark.parametrize("values, message", [
    ({"train.nope": 1}, "unknown config key"),
    ({"sampling.mode": "zigzag"}, "bad value"),
    ({"train.phases": "fast"}, "bad value"),
    ({"run.deterministic": "maybe"}, "bad value"),
])
def test_rejections(values, message):
    with pytest.raises(ConfigError, match=message):
        RunConfig(values)


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for key in KEYS:
        assert key.name in out


def test_unknown_env_key_exits_nonzero(monkeypatch, capsys, tmp_path):
    monkeypatch.setenv("REALGAIT_TRAIN__BOGUS", "1")
    assert cli.main(["eval"]) == 2
    assert "train.bogus" in capsys.readouterr().err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    manifest = toy_dataset(root / "videos", n_subjects=4, videos_per_subject=2, n_frames=20,
                           cameras=2, test_subjects=2, seed=1)
    save_manifest(manifest, root / "manifest.json")
    (root / "run.cfg").write_text(TINY)
    return root, manifest


def _args(root, *extra):
    return ["--config", str(root / "run.cfg"),
            "--set", f"paths.manifest={root / 'manifest.json'}",
            "--set", f"paths.videos={root / 'videos'}",
            "--set", f"paths.silhouettes={root / 'sil'}",
            "--set", f"paths.geis={root / 'gei'}",
            "--set", f"paths.train_dir={root / 'train'}",
            "--set", f"paths.embeddings={root / 'emb'}",
            "--set", f"paths.report={root / 'report'}", *extra]


def test_pipeline(workspace, capsys):
    root, manifest = workspace

    assert cli.main(["extract", *_args(root)]) == 0
    dirs = sorted(p.name for p in (root / "sil").iterdir() if p.is_dir())
    assert dirs == sorted(r.video_id for r in manifest.records)
    assert json.loads((root / "sil" / "extract_summary.json").read_text()).keys() == set(dirs)

    assert cli.main(["gei", *_args(root)]) == 0
    vid = manifest.records[0].video_id
    names = {p.name for p in (root / "gei" / vid).iterdir()}
    assert {"gei_full.png16", "gei.json", "gei_cluster_0.png16"} <= names

    assert cli.main(["train", *_args(root, "--iterations", "2")]) == 0
    assert (root / "train" / "latest").read_text().strip() == "ckpt_2"
    assert cli.main(["train", *_args(root)]) == 2
    assert "already holds a run" in capsys.readouterr().err
    assert cli.main(["train", *_args(root, "--resume")]) == 0
    assert "resuming at iteration 2" in capsys.readouterr().out
    assert (root / "train" / "latest").read_text().strip() == "ckpt_4"

    assert cli.main(["embed", *_args(root)]) == 0
    store = EmbeddingStore.load(root / "emb")
    test_videos = {r.video_id for r in manifest.videos("test")}
    assert set(store.entries) == test_videos
    assert all(store[v].shape == (225 * 16,) for v in test_videos)

    assert cli.main(["eval", *_args(root, "--set", "eval.protocol=cross_scene")]) == 0
    report = json.loads((root / "report" / "report.json").read_text())
    assert report["protocol"] == "cross_scene" and set(report["per_camera"]) == {"1", "2"}


def test_open_set_eval(workspace, capsys):
    root, manifest = workspace
    if not (root / "emb" / "index.json").exists():
        pytest.skip("pipeline test did not produce embeddings")
    # drop one test subject's camera-2 video so it becomes an imposter when probing camera 1
    records = [r for r in manifest.records if r.video_id != "p001_v1"]
    save_manifest(DatasetManifest(records, manifest.split, manifest.keyframe_stride), root / "open.json")
    args = _args(root, "--set", f"paths.manifest={root / 'open.json'}",
                 "--set", "eval.protocol=open_set_cross_scene", "--set", f"paths.report={root / 'open'}")
    with pytest.warns(UserWarning):
        assert cli.main(["eval", *args]) == 0
    report = json.loads((root / "open" / "report.json").read_text())
    assert report["counts"]["imposters"] == 1
    assert list(report["dir_table"]) == ["1"]
    dirs = [report["mean_dir"][k] for k in ("1.0", "10.0", "50.0", "100.0")]
    assert dirs == sorted(dirs)
    assert "Average rank-1 DIR" in (root / "open" / "report.txt").read_text()


def test_missing_video_names_culprit(workspace, tmp_path, capsys):
    root, manifest = workspace
    rec = manifest.records[0]
    ghost = type(rec)(rec.subject_id, rec.camera_id, "ghost_video", rec.frame_range, rec.keyframe_boxes)
    save_manifest(DatasetManifest([*manifest.records[:1], ghost], manifest.split), tmp_path / "m.json")
    args = _args(root, "--set", f"paths.manifest={tmp_path / 'm.json'}",
                 "--set", f"paths.silhouettes={tmp_path / 'sil'}")
    assert cli.main(["extract", *args]) == 2
    assert "ghost_video" in capsys.readouterr().err
    assert not (tmp_path / "sil" / rec.video_id).exists()


def test_deterministic_reextract(workspace, tmp_path):
    root, manifest = workspace
    vid = manifest.records[0].video_id
    args = _args(root, "--set", f"paths.silhouettes={tmp_path / 'again'}", "--videos", vid)
    assert cli.main(["extract", *args]) == 0
    for f in (root / "sil" / vid).iterdir():
        assert (tmp_path / "again" / vid / f.name).read_bytes() == f.read_bytes()
