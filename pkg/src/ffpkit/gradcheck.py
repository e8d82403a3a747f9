"""Central finite-difference checks of autograd gradients.

Relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)`` where
``floor = floor_scale * max(max|a|, max|n|)``. The floor keeps coordinates
whose true gradient is orders of magnitude below the largest one from being
judged on finite-difference round-off alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidArgument
from .losses import LossWeights, flow_match_loss, mmd_loss_tokens, motion_loss_tokens, total_loss

COMPONENTS = ("flow", "motion", "mmd", "total", "linear")


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple[int, ...]
    analytic: torch.Tensor
    numeric: torch.Tensor
    label: str = ""


def numeric_gradient(f, x: torch.Tensor, h: float) -> torch.Tensor:
    """Central differences of scalar ``f`` at every coordinate of ``x`` (perturbed in place, then restored)."""
    if h <= 0:
        raise InvalidArgument(f"step must be positive, got {h}")
    grad = torch.empty_like(x)
    flat, gflat = x.view(-1), grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + h
            fp = float(f())
            flat[i] = orig - h
            fm = float(f())
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return grad


def compare(analytic: torch.Tensor, numeric: torch.Tensor, floor_scale: float = 1e-3, label: str = "") -> GradCheckResult:
    a, n = analytic.detach(), numeric.detach()
    scale = max(float(a.abs().max()), float(n.abs().max()), 1e-300) if a.numel() else 1.0
    denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.full_like(a, floor_scale * scale))
    rel = (a - n).abs() / denom
    worst = int(rel.reshape(-1).argmax()) if rel.numel() else 0
    idx = tuple(int(i) for i in torch.unravel_index(torch.tensor(worst), rel.shape)) if rel.numel() else ()
    return GradCheckResult(float(rel.max()) if rel.numel() else 0.0, idx, a, n, label)


def check_function(f, x: torch.Tensor, h: float = 1e-6, floor_scale: float = 1e-3, label: str = "") -> GradCheckResult:
    """Compare autograd of ``f(x)`` with central differences over all of ``x``."""
    x = x.detach().clone().to(torch.float64).requires_grad_(True)
    (analytic,) = torch.autograd.grad(f(x), x)
    numeric = numeric_gradient(lambda: f(x.detach()), x.detach(), h)
    return compare(analytic, numeric, floor_scale, label)


def _component_fn(component: str, shape, gen: torch.Generator):
    randn = lambda *s: torch.randn(*s, generator=gen, dtype=torch.float64)
    if component == "linear":
        a, b = randn(*shape), randn(())
        return (lambda x: (a * x).sum() + b), randn(*shape)
    if component == "flow":
        clean, noise = randn(*shape), randn(*shape)
        return (lambda x: flow_match_loss(x, clean, noise)), randn(*shape)
    teacher = randn(*shape)
    if component == "motion":
        return (lambda x: motion_loss_tokens(x, teacher)), randn(*shape)
    if component == "mmd":
        return (lambda x: mmd_loss_tokens(x, teacher)), randn(*shape)
    if component == "total":
        clean, noise = randn(*shape), randn(*shape)
        w = LossWeights()

        def f(x):
            return total_loss(flow_match_loss(x, clean, noise), motion_loss_tokens(x, teacher), mmd_loss_tokens(x, teacher), w).total

        return f, randn(*shape)
    raise InvalidArgument(f"unknown component {component!r}; expected one of {COMPONENTS}")


def grad_check(component: str, shape=(3, 4, 4), h: float = 1e-6, seed: int = 0, floor_scale: float = 1e-3) -> GradCheckResult:
    """Check one loss component on random inputs of ``shape`` (frames, tokens, channels).

    The student-side input is the variable; teacher-side inputs are fixed.
    """
    gen = torch.Generator().manual_seed(seed)
    f, x = _component_fn(component, tuple(shape), gen)
    return check_function(f, x, h, floor_scale, label=component)


def model_grad_check(h: float = 1e-6, seed: int = 0, floor_scale: float = 1e-3, frames: int = 3, height: int = 2, width: int = 2) -> dict[str, GradCheckResult]:
    """Flow-loss gradient of every parameter tensor of a 2-block, width-32 model.

    Adaptive RoPE is on with a mixed head partition and a perturbed predictor,
    so gradients through both remapping rules and the coefficients are covered.
    """
    from .dit import ConditioningPack, DitConfig, ToyDiT
    from .heads import HeadPartition
    from .rope import HeadKind

    gen = torch.Generator().manual_seed(seed)
    cfg = DitConfig(frames=frames, height=height, width=width, channels=4, model_width=32, heads=4, blocks=2, ast_rope=True, predictor_hidden=8)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = ToyDiT(cfg).to(torch.float64)
    with torch.no_grad():
        for p in model.predictor.out.parameters():
            p.copy_(0.5 * torch.randn(p.shape, generator=gen, dtype=torch.float64))
    S, T = HeadKind.SPATIAL, HeadKind.TEMPORAL
    model.partition = HeadPartition.from_kinds([[S, T, S, T], [T, T, S, S]])

    shape = (1, frames, height, width, cfg.channels)
    randn = lambda s: torch.randn(s, generator=gen, dtype=torch.float64)
    clean, noise, source = randn(shape), randn(shape), randn(shape)
    first = clean[:, 0].clone()
    t = torch.tensor([0.37], dtype=torch.float64)
    noisy = (1 - t) * clean + t * noise
    pack = ConditioningPack(noisy, source, first)

    def loss():
        return flow_match_loss(model(pack, t, taps=()).velocity, clean, noise)

    model.zero_grad()
    loss().backward()
    results = {}
    for name, p in model.named_parameters():
        numeric = numeric_gradient(loss, p.data, h)
        results[name] = compare(p.grad, numeric, floor_scale, label=name)
    return results
