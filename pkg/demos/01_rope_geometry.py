"""Where tokens sit on the rotary lattice, and how per-head remapping moves them.

Run: python demos/01_rope_geometry.py
"""

import torch

from ffpkit.rope import (
    CoefficientPredictor,
    HeadKind,
    RopeCoefficients,
    RopeFrequencyConfig,
    build_position_grid,
    remap_for_kind,
    rotate,
)

torch.set_printoptions(precision=3, sci_mode=False)

grid = build_position_grid((4, 2, 2))
print("token grid (t, h, w) for 4 frames of 2x2:")
print(grid.coords[:6], "...")

cfg = RopeFrequencyConfig.default(16)
print("\nhead_dim 16 splits as (t, h, w) =", cfg.axis_split)

# Rotation keeps lengths and only sees the offset between two positions.
q, k = torch.randn(16, dtype=torch.float64), torch.randn(16, dtype=torch.float64)


def at(t):
    return torch.tensor([[t, 0.0, 0.0]], dtype=torch.float64)


def score(m, n):
    return (rotate(q[None], at(m), cfg) * rotate(k[None], at(n), cfg)).sum().item()


print("\n<R(5)q, R(2)k> =", round(score(5, 2), 12))
print("<R(13)q, R(10)k> =", round(score(13, 10), 12), "(same offset, same score)")

# Remapping: spatial heads move frame 0 out to alpha_s * F, temporal heads stretch time.
coeffs = RopeCoefficients(torch.tensor([0.5], dtype=torch.float64), torch.tensor([1.5], dtype=torch.float64))
for kind in HeadKind:
    t_idx = remap_for_kind(grid, coeffs, kind).t_index.reshape(-1)[:: grid.dims[1] * grid.dims[2]]
    print(f"\n{kind.value:>8} head, frame t-indices:", t_idx.tolist())

# The predictor starts at alpha = (1, 1): its output layer is zero-initialised.
pred = CoefficientPredictor(channels=4, hidden=16).double()
alpha = pred(torch.randn(2, 4, 2, 2, 4, dtype=torch.float64))
print("\npredictor at init: alpha_s =", alpha.alpha_s.tolist(), "alpha_t =", alpha.alpha_t.tolist())
