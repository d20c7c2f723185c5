"""Semi-synthetic detection dataset tooling, mAP@0.5 evaluation and latency harness."""

from .annotations import (
    BoundingBox,
    Detection,
    GroundTruth,
    ImageEntry,
    Origin,
    PixelBox,
    from_pixel,
    iou,
    parse_detection_file,
    parse_label_file,
    to_pixel,
    write_detection_file,
    write_label_file,
)
from .evaluator import EvalReport, aggregate, average_precision, map_at_05, match, select_model
from .strategy import SplitSpec, StrategyId, build_manifest, split, verify_manifest

__version__ = "0.1.0"
