"""
Class-aware crop sampling
=========================

Half of the crops are centred on a rare-class pixel, the rest are uniform.
"""

import numpy as np

from damageseg.sampler import AugConfig, SamplePolicy, augment, sample_crop
from damageseg.synth import SynthSpec, generate_synthetic_scene

image, mask = generate_synthetic_scene(3, SynthSpec(256, 256))
rare = np.isin(mask, (3, 4, 5))
print(f"rare pixels: {rare.mean():.2%} of the scene")

rng = np.random.default_rng(0)
for fraction in (0.0, 0.5, 1.0):
    policy = SamplePolicy(crop_size=64, rare_fraction=fraction)
    crops = [sample_crop(image, mask, policy, rng) for _ in range(2000)]
    centred = np.mean([c.rare_centered for c in crops])
    in_crop = np.mean([np.isin(c.mask, (3, 4, 5)).mean() for c in crops])
    print(f"rare_fraction={fraction:.1f}: centred {centred:.3f}, rare share inside crops {in_crop:.2%}")

###############################################################################
# Geometric augmentation moves image and mask together; photometric jitter
# touches the image only.

crop = sample_crop(image, mask, SamplePolicy(crop_size=64), rng)
img2, mask2 = augment(crop.image, crop.mask, AugConfig(), rng)
print("label histogram preserved:", np.array_equal(np.bincount(crop.mask.ravel(), minlength=11),
                                                   np.bincount(mask2.ravel(), minlength=11)))
