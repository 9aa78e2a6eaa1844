from .coco import (CocoParseError, DatasetIndex, IntegrityError, dump_coco_json, load_coco_json,
                   load_dataset, save_dataset)
from .episodes import CoverageError, EpisodeSpec, SplitError, sample_k_shot, split
from .synth import SynthConfig, source_profile, synth_generate, target_profile

__all__ = [
    "CocoParseError", "CoverageError", "DatasetIndex", "EpisodeSpec", "IntegrityError",
    "SplitError", "SynthConfig", "dump_coco_json", "load_coco_json", "load_dataset",
    "sample_k_shot", "save_dataset", "source_profile", "split", "synth_generate",
    "target_profile",
]
