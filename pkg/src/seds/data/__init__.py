from .batch import Batch, IngestionError, Manifest, load_batch, load_sample
from .pose import CLIP_LEN, ClipPlan, PoseSequence, TooShortError, filter_frames, plan_clips
from .synth import SyntheticSpec, make_sample, synth_dataset
from .topology import SkeletonTopology, normalized_adjacency

__all__ = [
    "Batch",
    "CLIP_LEN",
    "ClipPlan",
    "IngestionError",
    "Manifest",
    "PoseSequence",
    "SkeletonTopology",
    "SyntheticSpec",
    "TooShortError",
    "filter_frames",
    "load_batch",
    "load_sample",
    "make_sample",
    "normalized_adjacency",
    "plan_clips",
    "synth_dataset",
]
