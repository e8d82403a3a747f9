"""Factorized 3-axis rotary embeddings with source-adaptive temporal remapping.

Tokens live on a (frame, row, col) lattice. Each head vector is split into
three contiguous segments, one per axis, and each segment is rotated
pairwise by ``coordinate * base**(-2k/d_axis)``.

Two remapping rules modulate the temporal coordinate per head class:

* spatial heads move the first frame's temporal index from 0 to
  ``alpha_s * frames``; all later frames keep their index;
* temporal heads multiply every temporal index by ``alpha_t``.

``alpha_s`` and ``alpha_t`` come from :class:`CoefficientPredictor`, a small
pooling MLP run on the source latent.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import torch
from torch import nn

from .errors import InvalidArgument, NumericInputError


class HeadKind(str, enum.Enum):
    SPATIAL = "spatial"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class PositionGrid:
    """Per-token (t, h, w) coordinates.

    ``coords`` has shape ``(..., N, 3)``; leading dims appear once a grid is
    remapped with per-sample coefficients.
    """

    coords: torch.Tensor
    dims: tuple[int, int, int]

    @property
    def num_tokens(self) -> int:
        f, h, w = self.dims
        return f * h * w

    @property
    def t_index(self) -> torch.Tensor:
        return self.coords[..., 0]

    @property
    def h_index(self) -> torch.Tensor:
        return self.coords[..., 1]

    @property
    def w_index(self) -> torch.Tensor:
        return self.coords[..., 2]

    def first_frame_mask(self) -> torch.Tensor:
        # row-major with t slowest: the first H*W tokens are frame 0
        _, h, w = self.dims
        return torch.arange(self.num_tokens, device=self.coords.device) < h * w


@dataclass(frozen=True)
class RopeFrequencyConfig:
    head_dim: int
    axis_split: tuple[int, int, int]
    base: float = 10000.0

    def __post_init__(self):
        if self.head_dim <= 0 or self.head_dim % 2:
            raise InvalidArgument(f"head_dim must be a positive even integer, got {self.head_dim}")
        if sum(self.axis_split) != self.head_dim or any(d < 0 or d % 2 for d in self.axis_split):
            raise InvalidArgument(
                f"axis_split {self.axis_split} must be even, nonnegative and sum to {self.head_dim}"
            )
        if not self.base > 0:
            raise InvalidArgument(f"base must be positive, got {self.base}")

    @classmethod
    def default(cls, head_dim: int, base: float = 10000.0) -> "RopeFrequencyConfig":
        """Near-equal thirds in whole rotary pairs; leftover pairs go to time."""
        if head_dim <= 0 or head_dim % 2:
            raise InvalidArgument(f"head_dim must be a positive even integer, got {head_dim}")
        per_axis = 2 * ((head_dim // 2) // 3)
        return cls(head_dim, (head_dim - 2 * per_axis, per_axis, per_axis), base)


@dataclass(frozen=True)
class RopeCoefficients:
    """Per-sample scaling factors; tensors of shape ``(B,)`` or 0-d."""

    alpha_s: torch.Tensor
    alpha_t: torch.Tensor

    @classmethod
    def identity(cls, batch: int = 1, dtype=torch.float64) -> "RopeCoefficients":
        # alpha_s = 0 keeps the first frame at t=0; alpha_t = 1 leaves time unscaled
        return cls(torch.zeros(batch, dtype=dtype), torch.ones(batch, dtype=dtype))


def build_position_grid(dims, dtype=torch.float64) -> PositionGrid:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise InvalidArgument(f"grid dims must be three positive integers, got {dims}")
    f, h, w = dims
    t_i, h_i, w_i = torch.meshgrid(
        torch.arange(f, dtype=dtype),
        torch.arange(h, dtype=dtype),
        torch.arange(w, dtype=dtype),
        indexing="ij",
    )
    coords = torch.stack([t_i.reshape(-1), h_i.reshape(-1), w_i.reshape(-1)], dim=-1)
    return PositionGrid(coords, dims)


def _rotate_segment(x: torch.Tensor, pos: torch.Tensor, base: float) -> torch.Tensor:
    d = x.shape[-1]
    if d == 0:
        return x
    k = torch.arange(d // 2, dtype=x.dtype, device=x.device)
    inv_freq = base ** (-2.0 * k / d)
    angle = pos.to(x.dtype)[..., None] * inv_freq
    cos, sin = torch.cos(angle), torch.sin(angle)
    pairs = x.reshape(*x.shape[:-1], d // 2, 2)
    x0, x1 = pairs[..., 0], pairs[..., 1]
    out = torch.stack([x0 * cos - x1 * sin, x0 * sin + x1 * cos], dim=-1)
    return out.reshape(*out.shape[:-2], d)


def rotate(vectors: torch.Tensor, grid: PositionGrid | torch.Tensor, cfg: RopeFrequencyConfig) -> torch.Tensor:
    """Apply the 3-axis rotary map.

    ``vectors`` is ``(..., N, head_dim)``; ``grid`` is a :class:`PositionGrid`
    or a raw coordinate tensor ``(..., N, 3)`` broadcastable against it.
    """
    coords = grid.coords if isinstance(grid, PositionGrid) else grid
    if vectors.shape[-1] != cfg.head_dim:
        raise InvalidArgument(f"vector width {vectors.shape[-1]} != head_dim {cfg.head_dim}")
    if coords.shape[-2] != vectors.shape[-2]:
        raise InvalidArgument(f"grid has {coords.shape[-2]} tokens, vectors have {vectors.shape[-2]}")
    out, start = [], 0
    for axis, d in enumerate(cfg.axis_split):
        out.append(_rotate_segment(vectors[..., start:start + d], coords[..., axis], cfg.base))
        start += d
    return torch.cat(out, dim=-1)


def _as_batch(alpha, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(alpha, dtype=like.dtype, device=like.device)


def remap_spatial_positions(grid: PositionGrid, alpha_s, frames: int) -> PositionGrid:
    """Move frame 0's temporal index to ``alpha_s * frames``.

    A 1-d ``alpha_s`` of length B yields coordinates of shape ``(B, N, 3)``.
    """
    alpha = _as_batch(alpha_s, grid.coords)
    offset = (alpha * frames)[..., None]
    t = torch.where(grid.first_frame_mask(), offset, grid.coords[..., 0])
    coords = torch.cat([t[..., None], grid.coords[..., 1:].expand(*t.shape, 2)], dim=-1)
    return PositionGrid(coords, grid.dims)


def remap_temporal_positions(grid: PositionGrid, alpha_t) -> PositionGrid:
    alpha = _as_batch(alpha_t, grid.coords)
    t = grid.coords[..., 0] * alpha[..., None]
    coords = torch.cat([t[..., None], grid.coords[..., 1:].expand(*t.shape, 2)], dim=-1)
    return PositionGrid(coords, grid.dims)


def remap_for_kind(grid: PositionGrid, coeffs: RopeCoefficients, kind: HeadKind) -> PositionGrid:
    if HeadKind(kind) is HeadKind.SPATIAL:
        return remap_spatial_positions(grid, coeffs.alpha_s, grid.dims[0])
    return remap_temporal_positions(grid, coeffs.alpha_t)


def ast_rotate(vectors, grid: PositionGrid, cfg: RopeFrequencyConfig, coeffs: RopeCoefficients, head_kind) -> torch.Tensor:
    return rotate(vectors, remap_for_kind(grid, coeffs, head_kind), cfg)


def head_coordinates(grid: PositionGrid, coeffs: RopeCoefficients | None, kinds) -> torch.Tensor:
    """Coordinates for all heads of one layer, shape ``(B, heads, N, 3)``.

    With ``coeffs`` or ``kinds`` set to None every head sees the plain grid
    and the result is ``(N, 3)``, which broadcasts.
    """
    if coeffs is None or kinds is None:
        return grid.coords
    spatial = remap_spatial_positions(grid, coeffs.alpha_s, grid.dims[0]).coords
    temporal = remap_temporal_positions(grid, coeffs.alpha_t).coords
    batch = torch.broadcast_shapes(spatial.shape, temporal.shape)
    spatial, temporal = spatial.expand(batch), temporal.expand(batch)
    per_head = [spatial if HeadKind(k) is HeadKind.SPATIAL else temporal for k in kinds]
    return torch.stack(per_head, dim=-3)


class CoefficientPredictor(nn.Module):
    """Mean-pool the source latent, one hidden layer, two bounded outputs.

    The output layer starts at zero so both coefficients begin at exactly 1.
    """

    def __init__(self, channels: int, hidden: int = 64):
        super().__init__()
        self.hidden = nn.Linear(channels, hidden)
        self.out = nn.Linear(hidden, 2)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def logits(self, source: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(source).all():
            raise NumericInputError("source latent contains non-finite values")
        if source.dim() == 4:
            source = source[None]
        pooled = source.flatten(1, -2).mean(dim=1)
        return self.out(torch.nn.functional.silu(self.hidden(pooled)))

    def forward(self, source: torch.Tensor) -> RopeCoefficients:
        alpha = 2.0 * torch.sigmoid(self.logits(source))
        return RopeCoefficients(alpha[:, 0], alpha[:, 1])


def predict_coefficients(source_latent: torch.Tensor, predictor: CoefficientPredictor) -> RopeCoefficients:
    return predictor(source_latent)
