"""Imbalance-aware semantic segmentation of aerial damage imagery.

Class-aware crop sampling, hard-pixel cross-entropy plus Dice training, a tiny
hierarchical mix-transformer, sliding-window inference at native resolution and
IoU evaluation, with a synthetic scene generator for desk-scale experiments.
"""
from .datamodel import ClassTable, compute_class_frequencies, load_dataset
from .losses import DiceConfig, OhemConfig, dice_loss, ohem_loss, total_loss
from .metrics import ConfusionMatrix, iou_per_class, mean_iou
from .model import ModelConfig, SegModel, init_parameters
from .sampler import AugConfig, SamplePolicy, augment, sample_crop
from .synth import SynthSpec, generate_synthetic_scene
from .tiler import TileSpec, argmax_mask, plan_tiles, tiled_inference
from .trainer import TrainConfig, cosine_lr, train

__version__ = "0.1.0"
