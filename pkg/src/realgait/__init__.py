"""Gait recognition in the wild: silhouette extraction, GEIs, set-based network, evaluation."""
from .evaluation import EmbeddingStore, dir_at_far, distances, rank_n, run_protocol
from .gei import gei_cluster, gei_full, gei_piecewise, segment_trajectory
from .manifest import DatasetManifest, ProbeGallerySpec, build_probe_gallery, load_manifest
from .model import ModelConfig, RealGait, embed
from .sampling import SamplingConfig
from .silhouette import GMMParams, InputVariant, extract_video
from .training import TrainSchedule, Trainer, batch_all_triplet

__version__ = "0.1.0"

__all__ = [
    "DatasetManifest", "EmbeddingStore", "GMMParams", "InputVariant", "ModelConfig", "ProbeGallerySpec",
    "RealGait", "SamplingConfig", "TrainSchedule", "Trainer", "batch_all_triplet", "build_probe_gallery",
    "dir_at_far", "distances", "embed", "extract_video", "gei_cluster", "gei_full", "gei_piecewise",
    "load_manifest", "rank_n", "run_protocol", "segment_trajectory",
]
