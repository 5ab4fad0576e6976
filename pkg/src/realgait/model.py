"""The RealGait network.

Per frame: optional spatial-transformer alignment, then a truncated
ResNet-18 style backbone. Frame maps are max-pooled over time into one set
level map, which Patch Pyramid Mapping (PPM) turns into P per-patch vectors.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "realgait-checkpoint"
CHECKPOINT_VERSION = 1


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    input_size: int = 256
    in_channels: int = 1
    use_alignment: bool = True
    block23_stride: int = 2
    pyramid_u: int = 4
    pyramid_v: int = 4
    patch_dim: int = 256
    ppm_variant: str = "ppm"      # ppm | ppm_v
    channel_scale: float = 1.0

    def __post_init__(self):
        if self.input_size == 64 and (self.use_alignment or self.block23_stride != 1):
            raise ModelConfigError("64-pixel inputs run without alignment and with stride-1 "
                                   "residual blocks 2 and 3")
        if self.block23_stride not in (1, 2):
            raise ModelConfigError("block23_stride must be 1 or 2")
        if self.ppm_variant not in ("ppm", "ppm_v"):
            raise ModelConfigError(f"unknown ppm variant {self.ppm_variant!r}")
        if self.channel_scale <= 0 or self.patch_dim < 1 or self.in_channels < 1:
            raise ModelConfigError("channel_scale, patch_dim and in_channels must be positive")
        if self.pyramid_u < 1 or self.pyramid_v < 1:
            raise ModelConfigError("pyramid scales must be >= 1")
        if self.feature_size < 1:
            raise ModelConfigError(f"input size {self.input_size} is too small")
        ppm_grids(self.feature_size, self.feature_size, self.pyramid_u, self.pyramid_v,
                  self.ppm_variant)

    @classmethod
    def grew(cls, **kw) -> "ModelConfig":
        """64x64 inputs: no alignment, stride 1 in residual blocks 2 and 3."""
        kw = {"input_size": 64, "use_alignment": False, "block23_stride": 1, **kw}
        return cls(**kw)

    @property
    def feature_size(self) -> int:
        s = self.input_size
        s = (s + 2 * 3 - 7) // 2 + 1        # stem conv
        s = (s + 2 * 1 - 3) // 2 + 1        # stem max-pool
        for _ in range(2):                   # blocks 2 and 3
            s = (s - 1) // self.block23_stride + 1
        return s

    @property
    def num_patches(self) -> int:
        return (2 ** self.pyramid_u - 1) * (2 ** self.pyramid_v - 1)

    @property
    def embedding_length(self) -> int:
        return self.num_patches * self.patch_dim

    def width(self, channels: int) -> int:
        return max(1, int(round(channels * self.channel_scale)))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# --- alignment ---------------------------------------------------------------

def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


class LocalizationNet(nn.Module):
    """Regresses one 2x3 affine matrix per frame.

    conv 7x7/2 pad 1, max-pool 2/2, conv 7x7/2 pad 1, max-pool 2/2, then four
    fully connected layers down to 6 outputs. For 256-pixel single channel
    input the flattened width is 15 * 15 * 32 = 7200.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c1, c2 = cfg.width(16), cfg.width(32)
        self.features = nn.Sequential(
            nn.Conv2d(cfg.in_channels, c1, 7, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.MaxPool2d(2, 2),
            nn.Conv2d(c1, c2, 7, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.MaxPool2d(2, 2),
        )
        self.spatial_trace = [cfg.input_size]
        s = cfg.input_size
        for step in (lambda x: _conv_out(x, 7, 2, 1), lambda x: x // 2) * 2:
            s = step(s)
            self.spatial_trace.append(s)
        if s < 1:
            raise ModelConfigError(f"input {cfg.input_size} is too small for the localization net")
        self.flat_features = s * s * c2
        h1, h2, h3 = cfg.width(512), cfg.width(128), cfg.width(32)
        self.regressor = nn.Sequential(
            nn.Linear(self.flat_features, h1), nn.ReLU(inplace=True),
            nn.Linear(h1, h2), nn.ReLU(inplace=True),
            nn.Linear(h2, h3), nn.ReLU(inplace=True),
            nn.Linear(h3, 6),
        )
        self.reset_to_identity()

    def reset_to_identity(self):
        last = self.regressor[-1]
        nn.init.zeros_(last.weight)
        with torch.no_grad():
            last.bias.copy_(torch.tensor([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.features(x).flatten(1)
        return self.regressor(z).view(-1, 2, 3)


def warp(frames: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Bilinear resampling of ``frames`` (N, C, H, W) at ``theta @ (x_t, y_t, 1)``.

    Coordinates are normalized to [-1, 1] with pixel centers at
    ``(2i + 1) / size - 1``; samples outside the source are zero.
    """
    # float32 coordinate round trips shift samples by ~size * eps, so resample in float64
    src = frames.to(torch.float64)
    grid = F.affine_grid(theta.to(torch.float64), list(src.shape), align_corners=False)
    out = F.grid_sample(src, grid, mode="bilinear", padding_mode="zeros", align_corners=False)
    return out.to(frames.dtype)


# --- backbone ----------------------------------------------------------------

class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                                          nn.BatchNorm2d(cout))

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class Backbone(nn.Module):
    """Stem conv 7x7/2 + max-pool 3x3/2, then three stages of two basic blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c64, c128, c256 = cfg.width(64), cfg.width(128), cfg.width(256)
        self.stem = nn.Sequential(
            nn.Conv2d(cfg.in_channels, c64, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(c64), nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        s = cfg.block23_stride
        self.block1 = nn.Sequential(BasicBlock(c64, c64), BasicBlock(c64, c64))
        self.block2 = nn.Sequential(BasicBlock(c64, c128, s), BasicBlock(c128, c128))
        self.block3 = nn.Sequential(BasicBlock(c128, c256, s), BasicBlock(c256, c256))
        self.out_channels = c256

    def forward(self, x):
        return self.block3(self.block2(self.block1(self.stem(x))))


def temporal_pool(maps: torch.Tensor, dim: int = 1) -> torch.Tensor:
    """Elementwise max over the frame axis."""
    if maps.shape[dim] == 0:
        raise ValueError("temporal pooling needs at least one frame")
    return maps.amax(dim=dim)


# --- patch pyramid mapping ---------------------------------------------------

@dataclass(frozen=True)
class Patch:
    u: int
    v: int
    index: int          # position within its (u, v) option, row-major
    rows: slice
    cols: slice


def ppm_grids(h: int, w: int, U: int, V: int, variant: str = "ppm") -> list[tuple[int, int, int, int]]:
    """(u, v, rows, cols) of the patch grid of every division option.

    PPM: an option with W = 2^(u-1) * 2^(v-1) patches uses W full-width
    horizontal strips when W <= h, otherwise h strips each cut into W / h
    pieces. PPM-V: a 2^(u-1) x 2^(v-1) grid.
    """
    grids = []
    for u in range(1, U + 1):
        for v in range(1, V + 1):
            n = 2 ** (u - 1) * 2 ** (v - 1)
            if variant == "ppm_v":
                gh, gw = 2 ** (u - 1), 2 ** (v - 1)
            elif variant == "ppm":
                if n > h * w:
                    raise ModelConfigError(f"option (u={u}, v={v}) needs {n} patches from a {h}x{w} map")
                gh, gw = (n, 1) if n <= h else (h, n // h)
                if n > h and n % h:
                    raise ModelConfigError(f"{n} patches do not split evenly over {h} strips")
            else:
                raise ModelConfigError(f"unknown ppm variant {variant!r}")
            if h % gh or w % gw:
                raise ModelConfigError(f"a {h}x{w} map cannot be cut into a {gh}x{gw} grid")
            grids.append((u, v, gh, gw))
    return grids


def ppm_partition(shape, U: int = 4, V: int = 4, variant: str = "ppm") -> list[Patch]:
    """Patch layout for a map of shape ``(h, w, ...)`` (or the map itself)."""
    h, w = (shape.shape if hasattr(shape, "shape") else shape)[:2]
    patches = []
    for u, v, gh, gw in ppm_grids(h, w, U, V, variant):
        ph, pw = h // gh, w // gw
        for i in range(gh):
            for j in range(gw):
                patches.append(Patch(u, v, i * gw + j, slice(i * ph, (i + 1) * ph),
                                     slice(j * pw, (j + 1) * pw)))
    return patches


class PatchPyramidMapping(nn.Module):
    """Average-plus-max pool every patch, then an independent c -> d map per patch."""

    def __init__(self, channels: int, size: int, cfg: ModelConfig):
        super().__init__()
        self.grids = ppm_grids(size, size, cfg.pyramid_u, cfg.pyramid_v, cfg.ppm_variant)
        self.num_patches = sum(gh * gw for _, _, gh, gw in self.grids)
        self.weight = nn.Parameter(torch.empty(self.num_patches, channels, cfg.patch_dim))
        for p in range(self.num_patches):
            nn.init.xavier_normal_(self.weight.data[p])

    def pool(self, x: torch.Tensor) -> torch.Tensor:
        """(N, c, h, w) -> (N, P, c) pooled patch vectors."""
        n, c, h, w = x.shape
        out = []
        for _, _, gh, gw in self.grids:
            z = x.reshape(n, c, gh, h // gh, gw, w // gw)
            pooled = z.mean(dim=(3, 5)) + z.amax(dim=(3, 5))
            out.append(pooled.reshape(n, c, gh * gw))
        return torch.cat(out, dim=2).transpose(1, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.einsum("npc,pcd->npd", self.pool(x), self.weight)


# --- full model ----------------------------------------------------------------

class RealGait(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.localizer = LocalizationNet(self.cfg) if self.cfg.use_alignment else None
        self.backbone = Backbone(self.cfg)
        self.ppm = PatchPyramidMapping(self.backbone.out_channels, self.cfg.feature_size, self.cfg)
        initialize_weights(self)

    def frame_features(self, frames: torch.Tensor) -> torch.Tensor:
        """(B, C, H, W) frames -> (B, c, h, w) frame-level maps."""
        if frames.shape[1:] != (self.cfg.in_channels, self.cfg.input_size, self.cfg.input_size):
            raise ModelConfigError(f"frames of shape {tuple(frames.shape[1:])} do not match "
                                   f"({self.cfg.in_channels}, {self.cfg.input_size}, {self.cfg.input_size})")
        if self.localizer is not None:
            frames = warp(frames, self.localizer(frames))
        return self.backbone(frames)

    def forward(self, clips: torch.Tensor) -> torch.Tensor:
        """(N, T, C, H, W) clips -> (N, P, d) per-patch sub-features."""
        n, t = clips.shape[:2]
        maps = self.frame_features(clips.reshape(n * t, *clips.shape[2:]))
        pooled = temporal_pool(maps.reshape(n, t, *maps.shape[1:]))
        return self.ppm(pooled)


def initialize_weights(model: RealGait) -> RealGait:
    """He-normal backbone convolutions, Xavier-normal everything else.

    Normalization layers start at scale 1 / shift 0 and the localization
    head regresses the identity transform.
    """
    for m in model.backbone.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)
    if model.localizer is not None:
        for m in model.localizer.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.xavier_normal_(m.weight)
                nn.init.zeros_(m.bias)
        model.localizer.reset_to_identity()
    for p in range(model.ppm.num_patches):
        nn.init.xavier_normal_(model.ppm.weight.data[p])
    return model


@torch.no_grad()
def embed(model: RealGait, frames, chunk: int = 64, return_subfeatures: bool = False):
    """Embedding of one frame set: a flat (P * d,) float32 vector.

    The set is canonicalized first (duplicates removed, frames sorted by
    content), so the result is bit-identical under reordering or repetition
    of frames.
    """
    arr = np.ascontiguousarray(np.asarray(frames, dtype=np.float32))
    if arr.ndim == 3:
        arr = arr[:, None]
    if len(arr) == 0:
        raise ValueError("cannot embed an empty frame set")
    unique = {}
    for f in arr:
        unique.setdefault(f.tobytes(), f)
    canon = np.stack([unique[k] for k in sorted(unique)])
    was_training = model.training
    model.eval()
    try:
        pooled = None
        for start in range(0, len(canon), chunk):
            maps = model.frame_features(torch.from_numpy(canon[start:start + chunk]))
            part = maps.amax(dim=0)
            pooled = part if pooled is None else torch.maximum(pooled, part)
        sub = model.ppm(pooled[None])[0]
    finally:
        model.train(was_training)
    if return_subfeatures:
        return sub.numpy()
    return sub.reshape(-1).numpy()


# --- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, model: RealGait, **extra) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_json(),
        "state_dict": model.state_dict(),
        **extra,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[RealGait, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a RealGait checkpoint")
    if payload.get("version", 0) > CHECKPOINT_VERSION:
        raise ValueError(f"{path} has checkpoint version {payload['version']}, "
                         f"newer than supported {CHECKPOINT_VERSION}")
    model = RealGait(ModelConfig.from_json(payload["config"]))
    model.load_state_dict(payload["state_dict"])
    return model, payload
