"""Classifying attention heads by where their mass lands across frames.

Two hand-built heads first, then a freshly initialised toy backbone probed
at several thresholds. At this size attention is diffuse, so the label a
head gets depends heavily on epsilon.

Run: python demos/02_head_taxonomy.py
"""

import numpy as np
import torch

from ffpkit.data import gen_dataset
from ffpkit.dit import DitConfig, ToyDiT
from ffpkit.heads import classify_head, classify_model, compute_density_grid
from ffpkit.training import RunConfig, encode_samples, probe_packs

frames, hw = 3, 4
n = frames * hw
same_frame = np.kron(np.eye(frames), np.ones((hw, hw))).astype(bool)

local = np.where(same_frame, 1.0, 0.0)
local /= local.sum(axis=1, keepdims=True)
grid = compute_density_grid(local, (frames, hw))
print("frame-local head, density grid:\n", grid.rho)
print("->", classify_head(grid).value)

cross = np.where(same_frame, 0.0, 1.0) + np.eye(n)
cross /= cross.sum(axis=1, keepdims=True)
grid = compute_density_grid(cross, (frames, hw))
print("\ncross-frame head, density grid:\n", grid.rho.round(3))
print("->", classify_head(grid).value)

cfg = RunConfig()
torch.manual_seed(0)
model = ToyDiT(DitConfig()).double()
probe = encode_samples(gen_dataset(1, 10, cfg.data), cfg.codec())
packs = probe_packs(probe, 10, 0.5, seed=0)
print("\nrandom-init backbone, 10 probe clips at t=0.5:")
for eps in (1e-6, 1e-4, 1e-3):
    part = classify_model(model, packs, eps, t=0.5)
    layout = [" ".join(k.value[0].upper() for k in layer) for layer in part.kinds]
    print(f"  epsilon {eps:g}: {layout}")
