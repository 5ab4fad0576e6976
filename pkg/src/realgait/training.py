"""P x K batches, batch-all triplet loss and the Adam training loop."""
from __future__ import annotations

import json
import logging
import queue
import threading
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import RealGait, initialize_weights, load_checkpoint, save_checkpoint
from .sampling import SampledClip, SamplingConfig

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class NonFiniteLoss(TrainingError):
    pass


@dataclass
class PKBatch:
    entries: list[tuple[str, str, SampledClip]]
    p: int
    k: int

    @property
    def labels(self) -> list[str]:
        return [e[0] for e in self.entries]


@dataclass
class TrainSchedule:
    phases: list[tuple[float, int]] = field(default_factory=lambda: [(1e-4, 150_000), (1e-5, 100_000)])
    margin: float = 0.2
    seed: int = 0
    p: int = 16
    k: int = 2
    checkpoint_every: int = 5000
    log_every: int = 100
    loss_average: str = "nonzero"     # nonzero | all
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    deterministic: bool = True
    prefetch: int = 0

    def __post_init__(self):
        self.phases = [(float(lr), int(n)) for lr, n in self.phases]
        if not self.phases or any(lr <= 0 or n <= 0 for lr, n in self.phases):
            raise TrainingError("schedule phases need positive learning rates and iteration counts")
        if self.loss_average not in ("nonzero", "all"):
            raise TrainingError(f"unknown loss averaging {self.loss_average!r}")

    @classmethod
    def duke(cls, **kw) -> "TrainSchedule":
        return cls(phases=[(1e-4, 150_000), (1e-5, 100_000)], **kw)

    @classmethod
    def grew(cls, **kw) -> "TrainSchedule":
        return cls(phases=[(1e-4, 250_000), (1e-5, 350_000)], **kw)

    @property
    def total_iterations(self) -> int:
        return sum(n for _, n in self.phases)

    def lr_at(self, iteration: int) -> float:
        """Learning rate for the 0-based ``iteration``."""
        for lr, n in self.phases:
            if iteration < n:
                return lr
            iteration -= n
        return self.phases[-1][0]


def pk_sample(videos_by_subject: dict[str, list[tuple[str, int]]], p: int, k: int,
              sampling: SamplingConfig, rng: np.random.Generator) -> PKBatch:
    """``p`` distinct subjects, ``k`` sampled clips each.

    ``videos_by_subject`` maps a subject to its ``(video_id, frame_count)``
    pairs. Videos are drawn without replacement when the subject has at least
    ``k`` of them, otherwise with replacement (each draw gets its own clip).
    """
    subjects = sorted(videos_by_subject)
    if len(subjects) < p:
        raise TrainingError(f"{len(subjects)} training subjects cannot fill p={p}")
    chosen = rng.choice(len(subjects), size=p, replace=False)
    entries = []
    for si in chosen:
        subject = subjects[si]
        videos = videos_by_subject[subject]
        if not videos:
            raise TrainingError(f"subject {subject!r} has no videos")
        picks = rng.choice(len(videos), size=k, replace=len(videos) < k)
        for vi in picks:
            vid, n = videos[vi]
            entries.append((subject, vid, sampling.sample(n, rng)))
    return PKBatch(entries, p, k)


def _pairwise_distances(x: torch.Tensor) -> torch.Tensor:
    """(P, N, d) -> (P, N, N) Euclidean distances, exact zeros on coincident points."""
    diff = x[:, :, None, :] - x[:, None, :, :]
    sq = (diff * diff).sum(-1)
    # zero-safe sqrt: the gradient at coincident points is taken as 0
    positive = ~(sq <= 0)  # keeps NaN
    safe = torch.where(positive, sq, torch.ones_like(sq))
    return torch.where(positive, safe.sqrt(), torch.zeros_like(sq))


def batch_all_triplet(features: torch.Tensor, labels, margin: float = 0.2,
                      average: str = "nonzero", chunk: int = 16) -> torch.Tensor:
    """Batch-all triplet loss over per-patch sub-features.

    ``features`` is (N, P, d). For every patch, every valid (anchor,
    positive, negative) triple contributes ``max(0, margin + D(a, p) - D(a, n))``;
    the patch loss is the mean over triples with nonzero loss (``average=
    "nonzero"``) or over all valid triples (``"all"``), zero when there are
    none. The result is the mean over patches.
    """
    if features.dim() == 2:
        features = features[:, None, :]
    codes = {lab: i for i, lab in enumerate(dict.fromkeys(labels))}
    y = torch.tensor([codes[lab] for lab in labels], device=features.device)
    if len(codes) < 2:
        warnings.warn("batch has a single identity; triplet loss is 0")
        return features.sum() * 0.0
    same = y[:, None] == y[None, :]
    eye = torch.eye(len(y), dtype=torch.bool, device=features.device)
    valid = (same & ~eye)[:, :, None] & ~same[:, None, :]   # [a, p, n]
    n_valid = valid.sum()
    x = features.transpose(0, 1)                            # (P, N, d)
    patch_losses = []
    for start in range(0, x.shape[0], chunk):
        dist = _pairwise_distances(x[start:start + chunk])
        hinge = torch.relu(margin + dist[:, :, :, None] - dist[:, :, None, :])
        # NaN hinges count as active so non-finite features surface in the loss
        active = ~(hinge <= 0) & valid
        n_active = active.sum(dim=(1, 2, 3))
        # averages are taken as margin + mean(hinge - margin) so equal terms give the margin exactly
        excess = torch.where(active, hinge - margin, torch.zeros_like(hinge)).sum(dim=(1, 2, 3))
        if average == "nonzero":
            count = n_active
            base = torch.full_like(excess, margin)
        else:
            count = n_valid.expand(hinge.shape[0])
            base = margin * (n_active.to(hinge.dtype) / count.clamp_min(1).to(hinge.dtype))
        loss = base + excess / count.clamp_min(1)
        patch_losses.append(torch.where(n_active > 0, loss, torch.zeros_like(loss)))
    losses = torch.cat(patch_losses)
    return losses[0] + (losses - losses[0]).mean()


def initialize(model: RealGait) -> RealGait:
    """He init for backbone convolutions, Xavier for the other learned maps."""
    return initialize_weights(model)


# --- data ----------------------------------------------------------------------

class ClipSource:
    """Anything that yields silhouette frames for a video.

    Subclasses provide ``videos_by_subject`` and ``load(video_id, indices)``
    returning a float32 (T, C, H, W) array at the model's input size.
    """

    videos_by_subject: dict[str, list[tuple[str, int]]]

    def load(self, video_id: str, zero_based: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ArraySource(ClipSource):
    """In-memory sequences: ``{video_id: (subject_id, frames)}`` with frames (T, [C,] H, W)."""

    def __init__(self, sequences: dict[str, tuple[str, np.ndarray]]):
        self.frames = {}
        self.videos_by_subject = {}
        for vid, (subject, frames) in sequences.items():
            arr = np.asarray(frames, dtype=np.float32)
            if arr.ndim == 3:
                arr = arr[:, None]
            self.frames[vid] = arr
            self.videos_by_subject.setdefault(subject, []).append((vid, len(arr)))

    def load(self, video_id, zero_based):
        return self.frames[video_id][zero_based]


def _batch_tensor(source: ClipSource, batch: PKBatch) -> torch.Tensor:
    clips = [source.load(vid, clip.zero_based) for _, vid, clip in batch.entries]
    return torch.from_numpy(np.ascontiguousarray(np.stack(clips)))


# --- loop ----------------------------------------------------------------------

@dataclass
class TrainState:
    iteration: int = 0
    last_loss: float = float("nan")
    checkpoints: list[Path] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)


class Trainer:
    """Adam on the batch-all triplet loss, with resumable checkpoints.

    Checkpoints go to ``<out_dir>/ckpt_<iteration>/model.pt`` and the file
    ``<out_dir>/latest`` names the newest one. ``metrics.tsv`` logs
    iteration, loss, learning rate and wall time.
    """

    def __init__(self, model: RealGait, source: ClipSource, sampling: SamplingConfig,
                 schedule: TrainSchedule, out_dir=None):
        self.model = model
        self.source = source
        self.sampling = sampling
        self.schedule = schedule
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.rng = np.random.default_rng(schedule.seed)
        torch.manual_seed(schedule.seed)
        self.optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr_at(0),
                                          betas=schedule.betas, eps=schedule.eps, weight_decay=0.0)
        self.state = TrainState()
        self._t0 = time.monotonic()
        self._elapsed_before = 0.0
        if schedule.deterministic:
            torch.use_deterministic_algorithms(True)

    # -- persistence --
    def save(self) -> Path:
        if self.out_dir is None:
            raise TrainingError("no output directory configured")
        it = self.state.iteration
        ckpt = self.out_dir / f"ckpt_{it}"
        ckpt.mkdir(parents=True, exist_ok=True)
        save_checkpoint(ckpt / "model.pt", self.model,
                        iteration=it,
                        loss=self.state.last_loss,
                        optimizer=self.optimizer.state_dict(),
                        numpy_rng=self.rng.bit_generator.state,
                        torch_rng=torch.get_rng_state(),
                        elapsed=self._elapsed(),
                        schedule=_schedule_json(self.schedule),
                        sampling=vars(self.sampling))
        tmp = self.out_dir / "latest.tmp"
        tmp.write_text(ckpt.name + "\n")
        tmp.replace(self.out_dir / "latest")
        self.state.checkpoints.append(ckpt)
        return ckpt

    @classmethod
    def resume(cls, out_dir, source: ClipSource, sampling: SamplingConfig | None = None,
               schedule: TrainSchedule | None = None) -> "Trainer":
        out_dir = Path(out_dir)
        pointer = out_dir / "latest"
        if not pointer.exists():
            raise TrainingError(f"nothing to resume in {out_dir}")
        model, payload = load_checkpoint(out_dir / pointer.read_text().strip() / "model.pt")
        sampling = sampling or SamplingConfig(**payload["sampling"])
        schedule = schedule or TrainSchedule(**json.loads(payload["schedule"]))
        trainer = cls(model, source, sampling, schedule, out_dir)
        trainer.optimizer.load_state_dict(payload["optimizer"])
        trainer.rng.bit_generator.state = payload["numpy_rng"]
        torch.set_rng_state(payload["torch_rng"])
        trainer.state.iteration = int(payload["iteration"])
        trainer.state.last_loss = float(payload["loss"])
        trainer._elapsed_before = float(payload.get("elapsed", 0.0))
        return trainer

    def _elapsed(self) -> float:
        return self._elapsed_before + time.monotonic() - self._t0

    # -- stepping --
    def _next_batch(self):
        batch = pk_sample(self.source.videos_by_subject, self.schedule.p, self.schedule.k,
                          self.sampling, self.rng)
        return batch, _batch_tensor(self.source, batch)

    def step(self, batch=None) -> float:
        if batch is None:
            batch = self._next_batch()
        pk, clips = batch
        lr = self.schedule.lr_at(self.state.iteration)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        sub = self.model(clips)
        loss = batch_all_triplet(sub, pk.labels, self.schedule.margin, self.schedule.loss_average)
        if not torch.isfinite(loss):
            self._dump_diagnostics(pk, sub, loss)
            raise NonFiniteLoss(f"non-finite loss {loss.item()} at iteration {self.state.iteration}")
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.state.iteration += 1
        self.state.last_loss = float(loss.item())
        self.state.losses.append(self.state.last_loss)
        return self.state.last_loss

    def _dump_diagnostics(self, pk: PKBatch, sub: torch.Tensor, loss: torch.Tensor):
        info = {
            "iteration": self.state.iteration,
            "loss": repr(loss.item()),
            "videos": [vid for _, vid, _ in pk.entries],
            "labels": pk.labels,
            "nonfinite_features": int((~torch.isfinite(sub)).sum()),
            "nonfinite_parameters": [n for n, p in self.model.named_parameters()
                                     if not torch.isfinite(p).all()],
        }
        log.error("non-finite loss: %s", info)
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            with open(self.out_dir / f"diagnostic_{self.state.iteration}.json", "w") as fh:
                json.dump(info, fh, indent=1)

    def _batches(self):
        if self.schedule.deterministic or self.schedule.prefetch <= 0:
            while True:
                yield self._next_batch()
        q: queue.Queue = queue.Queue(maxsize=self.schedule.prefetch)
        stop = threading.Event()

        def worker():
            while not stop.is_set():
                item = self._next_batch()
                while not stop.is_set():
                    try:
                        q.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue

        th = threading.Thread(target=worker, daemon=True)
        th.start()
        try:
            while True:
                yield q.get()
        finally:
            stop.set()

    def run(self, iterations: int | None = None, callback=None) -> TrainState:
        """Train until the schedule ends (or for ``iterations`` more steps).

        ``callback(trainer)`` runs after every step; returning True stops early.
        """
        end = self.schedule.total_iterations
        if iterations is not None:
            end = min(end, self.state.iteration + iterations)
        metrics = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            metrics = open(self.out_dir / "metrics.tsv", "a")
        batches = self._batches()
        try:
            while self.state.iteration < end:
                loss = self.step(next(batches))
                it = self.state.iteration
                if metrics and (it % self.schedule.log_every == 0 or it == end):
                    metrics.write(f"{it}\t{loss:.6g}\t{self.schedule.lr_at(it - 1):.3g}\t{self._elapsed():.1f}\n")
                    metrics.flush()
                stop = callback(self) if callback else False
                if self.out_dir is not None and (it % self.schedule.checkpoint_every == 0 or it == end or stop):
                    self.save()
                if stop:
                    break
        finally:
            batches.close()
            if metrics:
                metrics.close()
        return self.state


def _schedule_json(schedule: TrainSchedule) -> str:
    d = dict(vars(schedule))
    d["phases"] = [list(p) for p in schedule.phases]
    d["betas"] = list(schedule.betas)
    return json.dumps(d)


def train(model: RealGait, source: ClipSource, sampling: SamplingConfig, schedule: TrainSchedule,
          out_dir=None, iterations: int | None = None, callback=None) -> TrainState:
    return Trainer(model, source, sampling, schedule, out_dir).run(iterations, callback)

