"""Complement super-resolution and identity learning for native low-resolution faces.

The package is organised by stage of the pipeline:

- ``csri.data`` and ``csri.imaging``: LR/HR pair synthesis, native-domain
  degradation, identity splits and manifests.
- ``csri.sr`` and ``csri.fr``: the super-resolution network and the face
  recognition trunk with its two classifier heads.
- ``csri.trainer``: the joint objectives, the staged training schedules of
  the four ablation variants, checkpoints and feature extraction.
- ``csri.evaluation``: CMC, average precision and mAP.
- ``csri.experiment`` and ``csri.cli``: the workspace driver behind the
  ``csri`` command.
- ``csri.faces`` and ``csri.benchmark``: a procedural face corpus and the
  desk-scale benchmark built on it.
"""
from .data import DegradationConfig, LRHRPair, ProtocolError, SplitManifest, make_lr_hr_pair
from .evaluation import EvalReport, evaluate
from .fr import FRNet, FRNetworkConfig, ce_loss
from .sr import SRNet, SRNetworkConfig, psnr, sr_loss
from .trainer import (
    DEFAULT_LAMBDA_SR,
    VARIANTS,
    Checkpoint,
    CSRINet,
    LossWeights,
    ModelConfig,
    TrainConfig,
    csri_loss,
    extract_features,
    joint_loss,
    train_stage1,
    train_stage2,
    train_variant,
)

__version__ = "0.1.0"
