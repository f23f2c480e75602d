"""
Training: full recipe vs plain cross-entropy
============================================

One seed of the acceptance comparison using the bundled desk configurations
(about 40 s per arm on one core). The three-seed version lives in
tests/test_acceptance.py. With much shorter schedules the control tends to be
ahead: the hard-pixel objective needs longer to converge.
"""

from pathlib import Path

import numpy as np
import torch

from damageseg.config import load_config
from damageseg.inference import evaluate
from damageseg.metrics import iou_per_class
from damageseg.synth import generate_synthetic_scene, scene_seed
from damageseg.trainer import train

torch.set_num_threads(1)
configs = Path(__file__).resolve().parents[1] / "configs"

method = load_config(configs / "desk.yaml")
spec = method.synth.spec()
train_set = [generate_synthetic_scene(scene_seed(0, "train", i), spec) for i in range(64)]
test_set = [generate_synthetic_scene(scene_seed(0, "test", i), spec) for i in range(16)]

for name in ("desk.yaml", "desk_control.yaml"):
    cfg = load_config(configs / name)
    res = train(train_set, cfg.model, cfg.train, cfg.ohem, cfg.dice, cfg.sampler, cfg.augment)
    ious = iou_per_class(evaluate(res.model, test_set, cfg.tiles, 11))
    rare = ious[list(cfg.classes.rare_set)]
    print(f"{name:<18} loss {res.log[-1]['loss_total']:.3f}  rare IoU {rare.round(3)}  "
          f"mean {np.nanmean(rare):.3f}  all-class {np.nanmean(ious):.3f}")
