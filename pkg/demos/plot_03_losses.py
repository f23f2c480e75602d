"""
Hard-pixel cross-entropy and Dice
=================================

The training objective on a toy batch, and a finite-difference check of its
logit gradient.
"""

import numpy as np

from damageseg.losses import OhemConfig, cross_entropy_loss, ohem_loss, total_loss
from damageseg.selftest import central_diff, rel_err

rng = np.random.default_rng(1)
logits = rng.normal(size=(2, 16, 16, 4))
labels = rng.integers(0, 4, size=(2, 16, 16)).astype(np.uint8)
labels[:, :2] = 255  # ignored rows

k = OhemConfig().resolve(16 * 16)
report, grad = total_loss(logits, labels, k)
print(f"k={k}: ohem {report.loss_ohem:.4f}  dice {report.loss_dice:.4f}  total {report.loss_total:.4f}")
print("plain CE over all valid pixels:", round(cross_entropy_loss(logits, labels)[0], 4))

# with k at least the number of valid pixels the hard set is everything
print("OHEM(k=N) - CE:", ohem_loss(logits, labels, logits[..., 0].size)[0] - cross_entropy_loss(logits, labels)[0])

###############################################################################
# Gradient check on a small instance.

small, lab = logits[:1, 4:8, 4:8, :3], rng.integers(0, 3, (1, 4, 4)).astype(np.uint8)
_, g = total_loss(small, lab, 6)
num = central_diff(lambda z: total_loss(z, lab, 6)[0].loss_total, small)
print("max relative error:", rel_err(g, num).max())
