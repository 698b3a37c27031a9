"""Targets, losses, metrics, patch sampling and an inference-pipeline simulator
for power-line cable and pylon detection from distance-mask regressors."""

from .annotations import (
    AnnotationSet,
    BBox,
    Dataset,
    ImageMeta,
    Polyline,
    hflip_annotations,
    parse_annotations,
    rasterize_cables,
    rasterize_exclusions,
    rasterize_pylons,
)
from .losses import LossConfig, composite_loss, ldat, lif_weight, malis_loss, malis_window_loss
from .metrics import MetricReport, aggregate, ccq, evaluate_image, fold_split, pixel_prf
from .pipeline import FlowField, PipelineConfig, run_stream
from .sampler import Patch, SampleSpec, sample_patches
from .targets import DistanceMask, binarize, clamp_normalize, edt, gt_targets, minpool

__version__ = "0.1.0"
