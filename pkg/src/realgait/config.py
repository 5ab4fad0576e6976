"""Run configuration: every tunable key, its default, and how values are layered.

Precedence, lowest first: built-in defaults, ``--config`` file (JSON or
``key = value`` lines), ``REALGAIT_*`` environment variables, command-line
flags. Keys are dotted (``sampling.mode``); the environment form upper-cases
the key and replaces each dot with a double underscore
(``REALGAIT_SAMPLING__MODE=rf``).
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

ENV_PREFIX = "REALGAIT_"


class ConfigError(ValueError):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _str_list(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _phases(text) -> list[tuple[float, int]]:
    """``"1e-4:150000,1e-5:100000"`` or ``[[1e-4, 150000], ...]``."""
    if isinstance(text, (list, tuple)):
        items = [tuple(p) for p in text]
    else:
        items = [tuple(p.split(":")) for p in str(text).split(",") if p.strip()]
    try:
        return [(float(lr), int(n)) for lr, n in items]
    except (TypeError, ValueError):
        raise ValueError(f"phases must look like lr:iterations[,lr:iterations]; got {text!r}") from None


def _optional_float(text):
    if text is None or str(text).strip().lower() in ("", "auto", "none"):
        return None
    return float(text)


def _choice(*options):
    def parse(text):
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}; got {text!r}")
        return text
    parse.__name__ = "|".join(options)
    return parse


@dataclass(frozen=True)
class Key:
    name: str
    default: Any
    parse: Callable[[Any], Any]
    module: str
    help: str


KEYS: tuple[Key, ...] = (
    # paths
    Key("paths.manifest", "", str, "manifest", "dataset manifest JSON (or directory holding manifest.json)"),
    Key("paths.videos", "", str, "silhouette_pipeline", "root of raw videos (<video_id>/ frame dirs or <video_id>.<ext>)"),
    Key("paths.silhouettes", "", str, "silhouette_pipeline", "root of the extracted silhouette tree"),
    Key("paths.geis", "", str, "gei", "output root for gait energy images"),
    Key("paths.train_dir", "", str, "training", "checkpoint and metrics directory"),
    Key("paths.checkpoint", "", str, "model", "checkpoint to embed with (default: latest in paths.train_dir)"),
    Key("paths.embeddings", "", str, "evaluation", "embedding store directory"),
    Key("paths.report", "", str, "evaluation", "directory receiving report.json and report.txt"),
    # run-wide
    Key("run.seed", 0, int, "training", "seed for every random draw"),
    Key("run.workers", 1, int, "cli", "parallel worker processes for extract, gei and embed"),
    Key("run.deterministic", True, _bool, "training", "serialize all work for bit-exact reruns"),
    # silhouette extraction
    Key("extract.history", 500, int, "silhouette_pipeline", "background model history length (frames)"),
    Key("extract.var_threshold", 16.0, float, "silhouette_pipeline", "squared Mahalanobis foreground threshold"),
    Key("extract.detect_shadows", True, _bool, "silhouette_pipeline", "label shadows, then treat them as background"),
    Key("extract.learning_rate", None, _optional_float, "silhouette_pipeline",
        "background learning rate; auto = 1/min(frames seen, history)"),
    Key("extract.morphology", 0, int, "silhouette_pipeline", "opening kernel size on masks (0 = off)"),
    Key("extract.pedestrian_mode", "binary", _choice("binary", "color", "grayscale_quantized"),
        "silhouette_pipeline", "how pedestrian pixels are rendered"),
    Key("extract.background_mode", "subtracted", _choice("subtracted", "color"), "silhouette_pipeline",
        "how background pixels are rendered"),
    Key("extract.bins", 0, int, "silhouette_pipeline", "gray levels for grayscale_quantized"),
    # GEI
    Key("gei.kinds", ["full", "cluster", "piecewise"], _str_list, "gei", "which GEI kinds to build"),
    Key("gei.clusters", 7, int, "gei", "k-means clusters per video"),
    Key("gei.penalty", 200.0, float, "gei", "per-segment penalty of the trajectory segmentation (px^2)"),
    Key("gei.min_segment", 5, int, "gei", "minimum frames per trajectory segment"),
    # sampling
    Key("sampling.mode", "rt", _choice("rt", "rf"), "sampling", "random tracklets (rt) or random frames (rf)"),
    Key("sampling.m", 28, int, "sampling", "frames per clip in rf mode"),
    Key("sampling.u", 4, int, "sampling", "tracklets per clip in rt mode"),
    Key("sampling.l", 7, int, "sampling", "frames per tracklet"),
    Key("sampling.s", 6, int, "sampling", "stride inside a tracklet"),
    Key("sampling.strict_paper_bound", False, _bool, "sampling", "use the tighter published start bound"),
    Key("sampling.eval_max_frames", 720, int, "sampling", "evenly spaced frames used per video at embed time"),
    # model
    Key("model.input_size", 256, int, "model", "square input side (64 disables alignment, stride 1)"),
    Key("model.in_channels", 1, int, "model", "input channels (3 for color variants)"),
    Key("model.use_alignment", True, _bool, "model", "learned affine alignment before the backbone"),
    Key("model.block23_stride", 2, int, "model", "stride of the second and third residual stages"),
    Key("model.pyramid_u", 4, int, "model", "horizontal pyramid levels"),
    Key("model.pyramid_v", 4, int, "model", "vertical pyramid levels"),
    Key("model.patch_dim", 256, int, "model", "output dimension of every patch mapping"),
    Key("model.ppm_variant", "ppm", _choice("ppm", "ppm_v"), "model", "patch partition scheme"),
    Key("model.channel_scale", 1.0, float, "model", "width multiplier for all convolutional layers"),
    Key("model.embed_chunk", 64, int, "model", "frames per forward pass at embed time"),
    # training
    Key("train.phases", [(1e-4, 150_000), (1e-5, 100_000)], _phases, "training",
        "learning-rate phases as lr:iterations,..."),
    Key("train.margin", 0.2, float, "training", "triplet margin"),
    Key("train.p", 16, int, "training", "identities per batch"),
    Key("train.k", 2, int, "training", "clips per identity"),
    Key("train.loss_average", "nonzero", _choice("nonzero", "all"), "training",
        "average the hinge over active triples or all triples"),
    Key("train.checkpoint_every", 5000, int, "training", "iterations between checkpoints"),
    Key("train.log_every", 100, int, "training", "iterations between metrics lines"),
    Key("train.prefetch", 2, int, "training", "queued batches when not deterministic"),
    # evaluation
    Key("eval.protocol", "multi_scene", _choice("multi_scene", "cross_scene", "open_set_cross_scene"),
        "evaluation", "probe/gallery protocol"),
    Key("eval.metric", "euclidean", _choice("euclidean", "patch_mean"), "evaluation",
        "distance on concatenated vectors or mean of per-patch distances"),
    Key("eval.ranks", [1, 5, 10, 20], _int_list, "evaluation", "rank-n levels"),
    Key("eval.fars", [1.0, 10.0, 50.0, 100.0], _float_list, "evaluation", "false acceptance levels in percent"),
    Key("eval.probe_overrides", "", str, "evaluation", "JSON file mapping subject -> probe video (multi_scene)"),
)

REGISTRY: dict[str, Key] = {k.name: k for k in KEYS}


class RunConfig:
    """Validated, merged configuration. Attribute access uses dotted keys via ``cfg["a.b"]``."""

    def __init__(self, values: dict[str, Any] | None = None):
        self._values = {k.name: k.default for k in KEYS}
        self._sources = {k.name: "default" for k in KEYS}
        if values:
            self.update(values, "code")

    def __getitem__(self, key: str):
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        return self._values[key]

    def source(self, key: str) -> str:
        return self._sources[key]

    def update(self, values: dict[str, Any], source: str) -> "RunConfig":
        for key, raw in values.items():
            if key not in REGISTRY:
                raise ConfigError(f"unknown config key {key!r} (from {source})")
            try:
                self._values[key] = REGISTRY[key].parse(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key} (from {source}): {exc}") from None
            self._sources[key] = source
        return self

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def to_json(self) -> dict[str, Any]:
        return {k: (list(map(list, v)) if k == "train.phases" else v) for k, v in self._values.items()}


def _flatten(doc: dict, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in doc.items():
        name = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, name + "."))
        else:
            out[name] = v
    return out


def read_config_file(path) -> dict[str, Any]:
    """JSON (nested or dotted keys) or ``key = value`` lines with ``#`` comments."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        try:
            return _flatten(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def env_overrides(environ=None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            out[name[len(ENV_PREFIX):].lower().replace("__", ".")] = value
    return out


def parse_assignments(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides: dict[str, Any] | None = None, environ=None) -> RunConfig:
    cfg = RunConfig()
    if path:
        cfg.update(read_config_file(path), str(path))
    cfg.update(env_overrides(environ), "environment")
    if overrides:
        cfg.update(overrides, "command line")
    return cfg


def describe_keys() -> str:
    """One line per key: name, default, defining module and help."""
    lines = []
    width = max(len(k.name) for k in KEYS)
    for k in KEYS:
        default = k.default
        if k.name == "train.phases":
            default = ",".join(f"{lr:g}:{n}" for lr, n in default)
        elif isinstance(default, list):
            default = ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in default)
        elif default is None:
            default = "auto"
        elif default == "":
            default = "-"
        lines.append(f"  {k.name:<{width}}  {default!s:<22} [{k.module}] {k.help}")
    return "\n".join(lines)
