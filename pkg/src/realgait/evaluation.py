"""Closed-set rank-n accuracy, open-set DIR@FAR, and protocol aggregation."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .manifest import ProbeGallerySpec

DEFAULT_RANKS = (1, 5, 10, 20)
DEFAULT_FARS = (1.0, 10.0, 50.0, 100.0)
STORE_VERSION = 1


class EvaluationError(ValueError):
    pass


@dataclass
class DistanceMatrix:
    values: np.ndarray            # (probes, gallery)
    probe_ids: list
    gallery_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.probe_ids), len(self.gallery_ids)):
            raise EvaluationError(f"distance matrix shape {self.values.shape} does not match "
                                  f"{len(self.probe_ids)} probes x {len(self.gallery_ids)} gallery")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise EvaluationError("distances must be finite and nonnegative")


def distances(probe, gallery, probe_ids=None, gallery_ids=None, metric: str = "euclidean",
              num_patches: int | None = None) -> DistanceMatrix:
    """Pairwise distances between embedding rows.

    ``metric="euclidean"`` compares the concatenated vectors;
    ``metric="patch_mean"`` averages the Euclidean distance of each of the
    ``num_patches`` sub-vectors.
    """
    probe = np.atleast_2d(np.asarray(probe, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if probe.shape[1] != gallery.shape[1]:
        raise EvaluationError(f"embedding lengths differ: {probe.shape[1]} vs {gallery.shape[1]}")
    probe_ids = list(range(len(probe))) if probe_ids is None else list(probe_ids)
    gallery_ids = list(range(len(gallery))) if gallery_ids is None else list(gallery_ids)
    if metric == "euclidean":
        d = cdist(probe, gallery)
    elif metric == "patch_mean":
        if not num_patches or probe.shape[1] % num_patches:
            raise EvaluationError("patch_mean needs num_patches dividing the embedding length")
        parts_p = probe.reshape(len(probe), num_patches, -1)
        parts_g = gallery.reshape(len(gallery), num_patches, -1)
        d = np.mean([cdist(parts_p[:, k], parts_g[:, k]) for k in range(num_patches)], axis=0)
    else:
        raise EvaluationError(f"unknown metric {metric!r}")
    return DistanceMatrix(d, probe_ids, gallery_ids)


def _ranked(dist: np.ndarray) -> np.ndarray:
    # stable sort: ties resolve to the lower gallery index
    return np.argsort(dist, axis=1, kind="stable")


def _subjects(ids) -> np.ndarray:
    return np.array([i[0] if isinstance(i, tuple) else i for i in ids], dtype=object)


def rank_n(dist: DistanceMatrix, n: int = 1, probe_subjects=None, gallery_subjects=None) -> float:
    """Percentage of probes with a same-subject entry among their ``n`` nearest gallery items.

    Subjects default to the ids themselves, or to the first element of
    ``(subject, video)`` id tuples.
    """
    ps = _subjects(dist.probe_ids) if probe_subjects is None else np.asarray(probe_subjects, dtype=object)
    gs = _subjects(dist.gallery_ids) if gallery_subjects is None else np.asarray(gallery_subjects, dtype=object)
    if len(ps) == 0:
        raise EvaluationError("no probes")
    missing = set(ps) - set(gs)
    if missing:
        raise EvaluationError(f"closed-set ranking with probe subjects absent from the gallery: "
                              f"{sorted(map(str, missing))[:5]}")
    order = _ranked(dist.values)[:, :n]
    hits = (gs[order] == ps[:, None]).any(axis=1)
    return 100.0 * int(hits.sum()) / len(hits)


@dataclass
class DIRResult:
    dir: dict[float, float]          # FAR % -> DIR %
    thresholds: dict[float, float]   # FAR % -> exclusive acceptance bound
    genuine: int
    imposters: int


def dir_at_far(dist: DistanceMatrix, imposter, fars=DEFAULT_FARS, probe_subjects=None,
               gallery_subjects=None) -> DIRResult:
    """Rank-1 detection-and-identification rate at fixed false-acceptance rates.

    For FAR level a (percent) with N imposters, at most k = floor(a N / 100)
    imposter best-match distances may be accepted. A match is accepted when
    its distance is strictly below the (k+1)-th smallest imposter best-match
    distance (infinity when k = N), which is the most permissive threshold
    whose empirical FAR does not exceed a. DIR(a) is the percentage of
    genuine probes whose rank-1 gallery item is same-subject and accepted.
    """
    imposter = np.asarray(imposter, dtype=bool)
    if imposter.shape != (dist.values.shape[0],):
        raise EvaluationError("one imposter flag per probe is required")
    ps = _subjects(dist.probe_ids) if probe_subjects is None else np.asarray(probe_subjects, dtype=object)
    gs = _subjects(dist.gallery_ids) if gallery_subjects is None else np.asarray(gallery_subjects, dtype=object)
    best_idx = _ranked(dist.values)[:, 0]
    best = dist.values[np.arange(len(best_idx)), best_idx]
    correct = gs[best_idx] == ps
    gen = ~imposter
    if gen.sum() == 0:
        raise EvaluationError("no genuine probes")
    if np.any(correct[imposter]):
        raise EvaluationError("a probe flagged as imposter matched its own subject in the gallery")
    imp_best = np.sort(best[imposter])
    n_imp = len(imp_best)
    out, taus = {}, {}
    for far in fars:
        far = float(far)
        if not 0 <= far <= 100:
            raise EvaluationError(f"FAR {far} outside [0, 100]")
        if far < 100 and n_imp == 0:
            raise EvaluationError(f"FAR {far}% needs at least one imposter probe")
        k = n_imp if far >= 100 else int(np.floor(far * n_imp / 100.0 + 1e-9))
        bound = np.inf if k >= n_imp else float(imp_best[k])
        accepted = correct & gen & (best < bound)
        out[far] = 100.0 * int(accepted.sum()) / int(gen.sum())
        taus[far] = bound
    return DIRResult(out, taus, int(gen.sum()), n_imp)


# --- embedding store -----------------------------------------------------------

@dataclass
class EmbeddingEntry:
    subject_id: str
    camera_id: int
    vector: np.ndarray


class EmbeddingStore:
    """Directory of raw little-endian float32 vectors plus ``index.json``."""

    def __init__(self, entries: dict[str, EmbeddingEntry] | None = None):
        self.entries = dict(entries or {})

    def __contains__(self, video_id):
        return video_id in self.entries

    def __getitem__(self, video_id) -> np.ndarray:
        try:
            return self.entries[video_id].vector
        except KeyError:
            raise EvaluationError(f"missing embedding for video {video_id!r}") from None

    def __len__(self):
        return len(self.entries)

    def add(self, video_id: str, subject_id: str, camera_id: int, vector) -> None:
        self.entries[video_id] = EmbeddingEntry(subject_id, int(camera_id),
                                                np.asarray(vector, dtype=np.float32).ravel())

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        index = {}
        for vid in sorted(self.entries):
            e = self.entries[vid]
            fname = f"{_safe_name(vid)}.f32"
            e.vector.astype("<f4").tofile(root / fname)
            index[vid] = {"file": fname, "subject_id": e.subject_id, "camera_id": e.camera_id,
                          "length": int(e.vector.size)}
        with open(root / "index.json", "w") as fh:
            json.dump({"version": STORE_VERSION, "embeddings": index}, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, root) -> "EmbeddingStore":
        root = Path(root)
        path = root / "index.json"
        if not path.exists():
            raise EvaluationError(f"no embedding index at {path}")
        with open(path) as fh:
            doc = json.load(fh)
        store = cls()
        for vid, meta in doc["embeddings"].items():
            vec = np.fromfile(root / meta["file"], dtype="<f4")
            if vec.size != meta["length"]:
                raise EvaluationError(f"{vid}: stored length {vec.size} != indexed {meta['length']}")
            store.add(vid, meta["subject_id"], meta["camera_id"], vec)
        return store


def _safe_name(video_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in video_id)


# --- protocols -----------------------------------------------------------------

@dataclass
class EvalReport:
    protocol: str
    per_scene: dict[str, dict[int, float]] = field(default_factory=dict)
    mean_rank: dict[int, float] = field(default_factory=dict)
    per_camera: dict[str, dict] = field(default_factory=dict)
    dir_table: dict[str, dict[float, float]] = field(default_factory=dict)
    mean_dir: dict[float, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> dict:
        key = lambda d: {str(k): v for k, v in d.items()}
        return {
            "protocol": self.protocol,
            "per_scene": {s: key(v) for s, v in self.per_scene.items()},
            "mean_rank": key(self.mean_rank),
            "per_camera": {c: key(v) for c, v in self.per_camera.items()},
            "dir_table": {c: key(v) for c, v in self.dir_table.items()},
            "mean_dir": key(self.mean_dir),
            "counts": dict(self.counts),
        }

    def render(self) -> str:
        lines = [f"protocol: {self.protocol}"]
        if self.dir_table:
            fars = list(self.mean_dir)
            lines.append("Average rank-1 DIR (%)")
            lines.append("FAR (%)".ljust(14) + "".join(f"{_fmt_num(f):>9}" for f in fars))
            for cam, row in self.dir_table.items():
                lines.append(f"probe #{cam}".ljust(14) + "".join(f"{row[f]:9.2f}" for f in fars))
            lines.append("Mean".ljust(14) + "".join(f"{self.mean_dir[f]:9.2f}" for f in fars))
        elif self.protocol == "cross_scene":
            ranks = list(self.mean_rank)
            lines.append("Average rank-n accuracy (%) per probe camera")
            lines.append("rank".ljust(14) + "".join(f"{r:>9}" for r in ranks))
            for cam, row in self.per_camera.items():
                lines.append(f"probe #{cam}".ljust(14) + "".join(f"{row[r]:9.2f}" for r in ranks))
            lines.append("Mean".ljust(14) + "".join(f"{self.mean_rank[r]:9.2f}" for r in ranks))
        else:
            ranks = list(self.mean_rank)
            lines.append("".ljust(14) + "".join(f"{'rank-' + str(r):>9}" for r in ranks))
            lines.append("accuracy".ljust(14) + "".join(f"{self.mean_rank[r]:9.2f}" for r in ranks))
        lines.append("counts: " + ", ".join(f"{k}={v}" for k, v in self.counts.items()))
        return "\n".join(lines)


def _fmt_num(x: float) -> str:
    return f"{x:g}"


def mean_table(rows: dict[str, dict]) -> dict:
    """Column-wise arithmetic mean of per-camera rows."""
    cols = next(iter(rows.values())).keys()
    return {c: float(np.mean([r[c] for r in rows.values()])) for c in cols}


def _matrix(spec: ProbeGallerySpec, store: EmbeddingStore, metric: str, num_patches):
    probe = np.stack([store[v] for _, v in spec.probe])
    gallery = np.stack([store[v] for _, v in spec.gallery])
    return distances(probe, gallery, spec.probe, spec.gallery, metric, num_patches)


def run_protocol(specs, store: EmbeddingStore, ranks=DEFAULT_RANKS, fars=DEFAULT_FARS,
                 metric: str = "euclidean", num_patches: int | None = None) -> EvalReport:
    """Evaluate a list of probe/gallery specs of one protocol.

    multi_scene: rank-n over the single spec. cross_scene: rank-n per camera
    pair, averaged per probe camera and overall. open_set_cross_scene: DIR
    per camera pair, averaged per probe camera and overall. Probes flagged as
    imposters are excluded from the closed-set protocols.
    """
    specs = list(specs)
    if not specs:
        raise EvaluationError("no probe/gallery specs")
    protocol = specs[0].protocol
    for spec in specs:
        for _, vid in spec.probe + spec.gallery:
            if vid not in store:
                raise EvaluationError(f"missing embedding for video {vid!r}")
    report = EvalReport(protocol)
    counts = {"probes": 0, "genuine": 0, "imposters": 0, "excluded": 0, "scenes": 0, "skipped_scenes": 0}

    if protocol in ("multi_scene", "cross_scene"):
        per_cam: dict[str, list[dict]] = {}
        for spec in specs:
            keep = [p for p, imp in zip(spec.probe, spec.imposter) if not imp]
            counts["excluded"] += len(spec.probe) - len(keep)
            if not keep or not spec.gallery:
                counts["skipped_scenes"] += 1
                continue
            sub = ProbeGallerySpec(spec.protocol, keep, spec.gallery, spec.scene_pair)
            dm = _matrix(sub, store, metric, num_patches)
            row = {r: rank_n(dm, min(r, len(spec.gallery))) for r in ranks}
            label = "all" if spec.scene_pair is None else f"{spec.scene_pair[0]}->{spec.scene_pair[1]}"
            report.per_scene[label] = row
            cam = "all" if spec.scene_pair is None else str(spec.scene_pair[0])
            per_cam.setdefault(cam, []).append(row)
            counts["probes"] += len(keep)
            counts["genuine"] += len(keep)
            counts["scenes"] += 1
        if not report.per_scene:
            raise EvaluationError("no evaluable scene (every spec lacks probes or gallery)")
        report.per_camera = {c: mean_table(dict(enumerate(rows))) for c, rows in per_cam.items()}
        report.mean_rank = mean_table(report.per_camera)
    elif protocol == "open_set_cross_scene":
        per_cam = {}
        for spec in specs:
            n_gen = len(spec.imposter) - sum(spec.imposter)
            if n_gen == 0 or not spec.gallery or (sum(spec.imposter) == 0 and min(fars) < 100):
                counts["skipped_scenes"] += 1
                continue
            dm = _matrix(spec, store, metric, num_patches)
            res = dir_at_far(dm, spec.imposter, fars)
            label = f"{spec.scene_pair[0]}->{spec.scene_pair[1]}"
            report.per_scene[label] = dict(res.dir)
            per_cam.setdefault(str(spec.scene_pair[0]), []).append(res.dir)
            counts["probes"] += len(spec.probe)
            counts["genuine"] += res.genuine
            counts["imposters"] += res.imposters
            counts["scenes"] += 1
        if not per_cam:
            raise EvaluationError("no evaluable scene pair (each needs genuine probes and imposters)")
        report.dir_table = {c: mean_table(dict(enumerate(rows))) for c, rows in sorted(per_cam.items())}
        report.mean_dir = mean_table(report.dir_table)
    else:
        raise EvaluationError(f"unknown protocol {protocol!r}")
    if counts["skipped_scenes"]:
        warnings.warn(f"{counts['skipped_scenes']} scene(s) skipped for lack of probes, gallery or imposters")
    report.counts = counts
    return report
