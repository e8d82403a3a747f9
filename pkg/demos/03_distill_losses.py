"""The two distillation signals on taps we can reason about by hand.

A teacher clip where a blob drifts right, and three students: an exact copy,
one that freezes after the first frame, and one with the drift reversed.

Run: python demos/03_distill_losses.py
"""

import torch

from ffpkit.losses import drift_scores, gram, mmd_loss, motion_loss

F, H, W, C = 4, 4, 4, 8
torch.manual_seed(0)
features = torch.randn(C, dtype=torch.float64)


def clip(shift_per_frame):
    """A feature blob rolled across the width axis frame by frame."""
    base = torch.zeros(H, W, C, dtype=torch.float64)
    base[1:3, 0:2] = features
    frames = [torch.roll(base, shifts=int(round(k * shift_per_frame)), dims=1) for k in range(F)]
    return torch.stack(frames)[None]  # (1, F, H, W, C)


teacher = clip(1)
students = {"copy": clip(1), "frozen": clip(0), "reversed": clip(-1)}

print("teacher drift scores per frame:", drift_scores(teacher[0], k_s=1).d.numpy().round(4))
for name, student in students.items():
    m = motion_loss(student, teacher, k_s=1).item()
    d = mmd_loss(student, teacher, k_s=1).item()
    print(f"{name:>9}: motion {m:.4f}  mmd {d:.4f}  drift {drift_scores(student[0], k_s=1).d.numpy().round(4)}")

# the Gram tensor is symmetric under swapping (frame, token) pairs
g = gram(teacher[0].reshape(F, H * W, C))
print("\ngram symmetric:", torch.allclose(g, g.permute(2, 3, 0, 1)))
