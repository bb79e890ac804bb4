"""Dataset model, synthetic scenes, storage, and annotation transfer."""

from .align import (CoordinateMap, TimeSync, estimate_time_shift,
                    fit_coordinate_map, transfer_annotations)
from .bundle import VIEWS, DatasetBundle, resample_fps, split_dataset
from .storage import (load_annotations_jsonl, load_bundle, load_frames_irfr,
                      load_meta, save_annotations_jsonl, save_bundle,
                      save_frames_irfr)
from .synth import SceneConfig, generate_scene

__all__ = [
    "CoordinateMap", "DatasetBundle", "SceneConfig", "TimeSync", "VIEWS",
    "estimate_time_shift", "fit_coordinate_map", "generate_scene",
    "load_annotations_jsonl", "load_bundle", "load_frames_irfr", "load_meta",
    "resample_fps", "save_annotations_jsonl", "save_bundle",
    "save_frames_irfr", "split_dataset", "transfer_annotations",
]
