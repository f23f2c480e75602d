"""
A tiny hierarchical transformer
===============================

Four stages at 1/4, 1/8, 1/16 and 1/32 resolution feed an all-MLP decoder.
"""

import torch

from damageseg.model import ModelConfig, init_parameters, parameter_count

cfg = ModelConfig()
model = init_parameters(cfg, seed=0).eval()
print("parameters:", parameter_count(model))
print("config fingerprint:", cfg.fingerprint()[:12])

for size in (64, 128, 256):
    x = torch.rand(1, 3, size, size)
    with torch.no_grad():
        feats = model.encode(x)
        logits = model.decode(feats)
    print(size, [tuple(f.shape[1:]) for f in feats], "->", tuple(logits.shape[1:]))
