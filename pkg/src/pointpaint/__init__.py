"""Point painting + attribute-token attention encoder for lidar point clouds,
trainable end-to-end on a built-in reverse-mode gradient engine."""

from .core import (AttrDesc, AttributeSchema, ClassSpace, ConfusionMatrix,
                   Kind, MiouResult, PointCloud, PointPaintError, append_column,
                   confusion_matrix, miou)
from .encoder import EncoderConfig, SegmentationModel, init_params
from .geometry import (Calibration, LabeledMask, Projection, paint_with_mask,
                       perturb_calibration, project_points, run_two_stage,
                       self_paint_stage1, self_paint_stage2)
from .grad import AdamState, GradCheckReport, Tape, Tensor, adam_step, backward
from .synth import Scene, SceneConfig, corrupt_mask, default_calibration, gen_scene
from .train import ExperimentConfig, TrainResult, train

__all__ = [name for name in dir() if not name.startswith("_")]
