"""Training objectives: flow matching plus two self-distillation terms.

The distillation terms compare block latents ("taps") of the student FFP
pass against a teacher pass that reconstructs the target from itself:

* ``motion_loss`` matches inter-frame channel Gram blocks;
* ``mmd_loss`` matches per-frame drift of first-frame token relations,
  measured as squared MMD under an RBF kernel.

All functions take torch tensors and are differentiable in the student
argument. Taps are ``(F, H, W, C)`` or batched ``(B, F, H, W, C)``; batched
losses average over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidArgument, NonFiniteLoss

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_motion: float = 5.0
    lambda_mmd: float = 1.0

    def __post_init__(self):
        for name in ("lambda_motion", "lambda_mmd"):
            v = float(getattr(self, name))
            if not (v >= 0 and v != float("inf")):
                raise InvalidArgument(f"{name} must be finite and >= 0, got {v}")


@dataclass
class LossReport:
    l_fm: torch.Tensor
    l_motion: torch.Tensor
    l_mmd: torch.Tensor
    total: torch.Tensor
    weights: LossWeights

    def as_floats(self) -> dict[str, float]:
        return {
            "l_fm": self.l_fm.item(),
            "l_motion": self.l_motion.item(),
            "l_mmd": self.l_mmd.item(),
            "total": self.total.item(),
        }


def _batched(x: torch.Tensor) -> torch.Tensor:
    return x[None] if x.dim() == 4 else x


def flow_target(clean: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    return noise - clean


def interpolate(clean: torch.Tensor, noise: torch.Tensor, t) -> torch.Tensor:
    """Point on the straight path ``(1 - t) * clean + t * noise``; ``t`` per batch item."""
    t = torch.as_tensor(t, dtype=clean.dtype)
    if t.dim() == 1:
        t = t.reshape(-1, *([1] * (clean.dim() - 1)))
    return (1 - t) * clean + t * noise


def flow_match_loss(predicted_velocity: torch.Tensor, clean: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    if not predicted_velocity.shape == clean.shape == noise.shape:
        raise InvalidArgument(
            f"shape mismatch: prediction {tuple(predicted_velocity.shape)}, clean {tuple(clean.shape)}, noise {tuple(noise.shape)}"
        )
    return ((predicted_velocity - flow_target(clean, noise)) ** 2).mean()


def spatial_downsample(latent: torch.Tensor, k_s: int) -> torch.Tensor:
    """Non-overlapping ``k_s x k_s`` average pooling over (H, W)."""
    h, w, c = latent.shape[-3:]
    if k_s < 1 or h % k_s or w % k_s:
        raise InvalidArgument(f"downsample factor {k_s} must divide H={h} and W={w}")
    lead = latent.shape[:-3]
    x = latent.reshape(*lead, h // k_s, k_s, w // k_s, k_s, c)
    return x.mean(dim=(-4, -2))


def tokens_per_frame(latent: torch.Tensor) -> torch.Tensor:
    """``(..., F, H, W, C) -> (..., F, H*W, C)``."""
    return latent.flatten(-3, -2)


def gram(latent_ds: torch.Tensor) -> torch.Tensor:
    """Channel-mean Gram tensor ``G[i, u, j, v]`` of ``(..., F, N, C)`` frame tokens."""
    z = latent_ds
    return torch.einsum("...iuc,...jvc->...iujv", z, z) / z.shape[-1]


def _frame_tokens(tap: torch.Tensor, k_s: int) -> torch.Tensor:
    return tokens_per_frame(spatial_downsample(_batched(tap), k_s))


def motion_loss(student_tap: torch.Tensor, teacher_tap: torch.Tensor, k_s: int = 2) -> torch.Tensor:
    if student_tap.shape != teacher_tap.shape:
        raise InvalidArgument(f"tap shapes differ: {tuple(student_tap.shape)} vs {tuple(teacher_tap.shape)}")
    zs = _frame_tokens(student_tap, k_s)
    zt = _frame_tokens(teacher_tap.detach(), k_s)
    return motion_loss_tokens(zs, zt)


def motion_loss_tokens(zs: torch.Tensor, zt: torch.Tensor) -> torch.Tensor:
    """Motion loss on already-downsampled ``(F, N, C)`` or ``(B, F, N, C)`` tokens."""
    if zs.dim() == 3:
        zs, zt = zs[None], zt[None]
    zt = zt.detach()
    frames = zs.shape[-3]
    if frames < 2:
        raise InvalidArgument("motion loss needs at least two frames")
    # mean |G - G_hat| over each N x N block -> (B, F, F)
    block = (gram(zs) - gram(zt)).abs().mean(dim=(-3, -1))
    off = ~torch.eye(frames, dtype=torch.bool, device=zs.device)
    per_item = block[:, off].sum(dim=-1) / (frames * (frames - 1))
    return per_item.mean()


def similarity_matrix(z_first: torch.Tensor, z_i: torch.Tensor) -> torch.Tensor:
    if z_first.shape != z_i.shape:
        raise InvalidArgument(f"token sets differ in shape: {tuple(z_first.shape)} vs {tuple(z_i.shape)}")
    return z_first @ z_i.transpose(-1, -2)


def _sq_dists(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    # explicit differences: exact zeros for identical rows, never negative
    return ((a[..., :, None, :] - b[..., None, :, :]) ** 2).sum(dim=-1)


def mmd2(p: torch.Tensor, q: torch.Tensor, sigma) -> torch.Tensor:
    """Biased (V-statistic) squared MMD between row sets ``p`` and ``q``.

    Leading batch dims are allowed; ``sigma`` broadcasts against them.
    """
    sigma = torch.as_tensor(sigma, dtype=p.dtype)
    if (sigma <= 0).any():
        raise InvalidArgument(f"kernel bandwidth must be positive, got {sigma}")
    if p.shape[-2] < 1 or q.shape[-2] < 1:
        raise InvalidArgument("mmd2 needs at least one row per set")
    two_s2 = (2 * sigma**2)[..., None, None]
    k_pp = torch.exp(-_sq_dists(p, p) / two_s2).mean(dim=(-2, -1))
    k_qq = torch.exp(-_sq_dists(q, q) / two_s2).mean(dim=(-2, -1))
    k_pq = torch.exp(-_sq_dists(p, q) / two_s2).mean(dim=(-2, -1))
    return k_pp + k_qq - 2 * k_pq


def median_bandwidth(p: torch.Tensor, q: torch.Tensor, floor: float = SIGMA_FLOOR) -> torch.Tensor:
    """Median pairwise Euclidean distance over the pooled rows of ``p`` and ``q``."""
    pooled = torch.cat([p, q], dim=-2)
    m = pooled.shape[-2]
    iu = torch.triu_indices(m, m, offset=1)
    d2 = _sq_dists(pooled, pooled)[..., iu[0], iu[1]]
    # sqrt at an exact zero would poison the gradient
    d = torch.sqrt(torch.clamp(d2, min=floor**2))
    return torch.clamp(torch.quantile(d, 0.5, dim=-1), min=floor)


@dataclass
class DriftScores:
    d: torch.Tensor  # (..., F-1) for frames 2..F
    sigma: torch.Tensor


def drift_scores_tokens(z: torch.Tensor) -> DriftScores:
    """Drift of frames 2..F relative to frame 1 for ``(..., F, N, C)`` tokens."""
    if z.shape[-3] < 2:
        raise InvalidArgument("drift scores need at least two frames")
    first = z[..., :1, :, :]
    s = similarity_matrix(first.expand_as(z), z)  # (..., F, N, N); s[..., 0] is S_1
    p1 = s[..., :1, :, :].expand_as(s[..., 1:, :, :])
    pi = s[..., 1:, :, :]
    sigma = median_bandwidth(p1, pi)
    return DriftScores(mmd2(p1, pi, sigma), sigma)


def drift_scores(tap: torch.Tensor, k_s: int | None = None) -> DriftScores:
    """Drift scores of a tap given as ``(F, N, C)`` tokens or a ``(.., F, H, W, C)`` latent.

    With ``k_s`` set the latent is spatially downsampled first.
    """
    if k_s is not None:
        tap = tokens_per_frame(spatial_downsample(tap, k_s))
    return drift_scores_tokens(tap)


def mmd_loss(student_tap: torch.Tensor, teacher_tap: torch.Tensor, k_s: int = 2) -> torch.Tensor:
    if student_tap.shape != teacher_tap.shape:
        raise InvalidArgument(f"tap shapes differ: {tuple(student_tap.shape)} vs {tuple(teacher_tap.shape)}")
    zs = _frame_tokens(student_tap, k_s)
    zt = _frame_tokens(teacher_tap.detach(), k_s)
    return mmd_loss_tokens(zs, zt)


def drift_loss(d_student: torch.Tensor, d_teacher: torch.Tensor) -> torch.Tensor:
    """Sum over frames 2..F of ``|d_i - d_hat_i|``, averaged over any batch dims."""
    return (d_student - d_teacher.detach()).abs().sum(dim=-1).mean()


def mmd_loss_tokens(zs: torch.Tensor, zt: torch.Tensor) -> torch.Tensor:
    return drift_loss(drift_scores_tokens(zs).d, drift_scores_tokens(zt.detach()).d)


def total_loss(l_fm, l_motion, l_mmd, weights: LossWeights = LossWeights()) -> LossReport:
    parts = {"l_fm": l_fm, "l_motion": l_motion, "l_mmd": l_mmd}
    parts = {k: torch.as_tensor(v, dtype=torch.float64) if not torch.is_tensor(v) else v for k, v in parts.items()}
    for name, value in parts.items():
        if not torch.isfinite(value).all():
            raise NonFiniteLoss(name, value.detach().item())
    total = parts["l_fm"] + weights.lambda_motion * parts["l_motion"] + weights.lambda_mmd * parts["l_mmd"]
    return LossReport(parts["l_fm"], parts["l_motion"], parts["l_mmd"], total, weights)


def teacher_forward(model, target: torch.Tensor, noisy: torch.Tensor, t, partition=None):
    """Identity-propagation pass: condition on the target and its own first frame.

    Uses the same noisy latent and timestep as the student. Returns detached taps.
    """
    from .dit import ConditioningPack

    target = _batched(target)
    noisy = _batched(noisy)
    pack = ConditioningPack(noisy=noisy, source=target, first_frame=target[:, 0])
    with torch.no_grad():
        out = model(pack, t, partition=partition)
    return {k: v.detach() for k, v in out.taps.items()}
