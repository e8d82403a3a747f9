"""Toy diffusion transformer with first-frame conditioning and per-head RoPE routing.

Latent videos are ``(B, F, H, W, C)`` tensors (a single clip may drop the
batch axis). Each latent cell is one token, so the token grid is the latent
grid and :class:`~ffpkit.rope.PositionGrid` maps onto it one-to-one.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, InvalidArgument
from .heads import HeadPartition
from .rope import (
    CoefficientPredictor,
    PositionGrid,
    RopeCoefficients,
    RopeFrequencyConfig,
    build_position_grid,
    head_coordinates,
    rotate,
)


@dataclass
class DitConfig:
    frames: int = 4
    height: int = 8
    width: int = 8
    channels: int = 4
    model_width: int = 64
    heads: int = 4
    blocks: int = 2
    mlp_ratio: int = 4
    rope_base: float = 10000.0
    axis_split: tuple[int, int, int] | None = None
    tap_blocks: tuple[int, ...] | None = None
    ast_rope: bool = False
    predictor_hidden: int = 64

    def __post_init__(self):
        if self.model_width % self.heads:
            raise ConfigurationError(f"model_width {self.model_width} not divisible by heads {self.heads}")
        if self.head_dim % 2:
            raise ConfigurationError(f"head_dim {self.head_dim} must be even")
        if self.axis_split is not None:
            self.axis_split = tuple(int(d) for d in self.axis_split)
        if self.tap_blocks is None:
            self.tap_blocks = ((self.blocks - 1) // 2,)
        self.tap_blocks = tuple(int(b) for b in self.tap_blocks)
        if any(not 0 <= b < self.blocks for b in self.tap_blocks):
            raise ConfigurationError(f"tap_blocks {self.tap_blocks} outside 0..{self.blocks - 1}")

    @property
    def head_dim(self) -> int:
        return self.model_width // self.heads

    @property
    def latent_dims(self) -> tuple[int, int, int]:
        return (self.frames, self.height, self.width)

    def rope_config(self) -> RopeFrequencyConfig:
        if self.axis_split is None:
            return RopeFrequencyConfig.default(self.head_dim, self.rope_base)
        return RopeFrequencyConfig(self.head_dim, self.axis_split, self.rope_base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["axis_split"] = None if self.axis_split is None else list(self.axis_split)
        d["tap_blocks"] = list(self.tap_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DitConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def first_frame_mask(frames: int, height: int, width: int, dtype=torch.float64) -> torch.Tensor:
    mask = torch.zeros(frames, height, width, dtype=dtype)
    mask[0] = 1.0
    return mask


@dataclass
class ConditioningPack:
    """Noisy latent, source latent and edited first-frame latent for one batch."""

    noisy: torch.Tensor
    source: torch.Tensor
    first_frame: torch.Tensor

    def __post_init__(self):
        if self.noisy.dim() == 4:
            self.noisy, self.source, self.first_frame = self.noisy[None], self.source[None], self.first_frame[None]

    @property
    def mask(self) -> torch.Tensor:
        _, f, h, w, _ = self.noisy.shape
        return first_frame_mask(f, h, w, self.noisy.dtype)


def assemble_conditioning(noisy: torch.Tensor, source: torch.Tensor, first_frame: torch.Tensor) -> torch.Tensor:
    """Channel-concatenate ``[noisy, source, padded first frame, mask]``.

    Accepts ``(F, H, W, C)`` or batched ``(B, F, H, W, C)`` latents; the first
    frame is ``(H, W, C)`` or ``(B, H, W, C)``. Output has ``3C + 1`` channels.
    """
    batched = noisy.dim() == 5
    if not batched:
        noisy, source, first_frame = noisy[None], source[None], first_frame[None]
    if noisy.dim() != 5 or source.shape != noisy.shape:
        raise InvalidArgument(f"noisy {tuple(noisy.shape)} and source {tuple(source.shape)} must match")
    b, f, h, w, c = noisy.shape
    if first_frame.shape != (b, h, w, c):
        raise InvalidArgument(f"first frame {tuple(first_frame.shape)} does not match (H, W, C) = {(h, w, c)}")
    padded = torch.zeros_like(noisy)
    padded[:, 0] = first_frame
    mask = first_frame_mask(f, h, w, noisy.dtype).to(noisy.device)
    mask = mask[None, ..., None].expand(b, f, h, w, 1)
    out = torch.cat([noisy, source, padded, mask], dim=-1)
    return out if batched else out[0]


def timestep_embedding(t: torch.Tensor, dim: int, scale: float = 1000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = (t * scale)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[:, :1])], dim=-1)
    return emb


class Attention(nn.Module):
    def __init__(self, width: int, heads: int, rope: RopeFrequencyConfig):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.rope = rope
        self.qkv = nn.Linear(width, 3 * width)
        self.proj = nn.Linear(width, width)

    def forward(self, x: torch.Tensor, coords: torch.Tensor, return_probs: bool = False):
        b, n, w = x.shape
        if w != self.heads * self.head_dim:
            raise InvalidArgument(f"token width {w} != model width {self.heads * self.head_dim}")
        q, k, v = self.qkv(x).reshape(b, n, 3, self.heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q = rotate(q, coords, self.rope)
        k = rotate(k, coords, self.rope)
        scores = (q * self.head_dim**-0.5) @ k.transpose(-1, -2)
        probs = torch.softmax(scores, dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(b, n, w)
        out = self.proj(out)
        return (out, probs) if return_probs else out


class Block(nn.Module):
    def __init__(self, cfg: DitConfig, rope: RopeFrequencyConfig):
        super().__init__()
        w = cfg.model_width
        self.norm1 = nn.LayerNorm(w)
        self.attn = Attention(w, cfg.heads, rope)
        self.norm2 = nn.LayerNorm(w)
        self.mlp = nn.Sequential(nn.Linear(w, cfg.mlp_ratio * w), nn.GELU(), nn.Linear(cfg.mlp_ratio * w, w))

    def forward(self, x, coords, return_probs=False):
        h = self.attn(self.norm1(x), coords, return_probs=return_probs)
        probs = None
        if return_probs:
            h, probs = h
        x = x + h
        x = x + self.mlp(self.norm2(x))
        return x, probs


@dataclass
class ForwardOutput:
    velocity: torch.Tensor
    taps: dict[int, torch.Tensor]
    coeffs: RopeCoefficients | None = None
    attention: list[torch.Tensor] = field(default_factory=list)


class ToyDiT(nn.Module):
    """Velocity predictor over the composite conditioning latent.

    ``partition`` (a :class:`~ffpkit.heads.HeadPartition`) turns on per-head
    adaptive RoPE. Without one, every head uses the plain lattice.
    """

    def __init__(self, cfg: DitConfig):
        super().__init__()
        self.cfg = cfg
        self.rope = cfg.rope_config()
        w = cfg.model_width
        self.in_proj = nn.Linear(3 * cfg.channels + 1, w)
        self.time_proj = nn.Linear(w, w)
        self.blocks = nn.ModuleList(Block(cfg, self.rope) for _ in range(cfg.blocks))
        self.norm_out = nn.LayerNorm(w)
        self.out_proj = nn.Linear(w, cfg.channels)
        self.predictor = CoefficientPredictor(cfg.channels, cfg.predictor_hidden) if cfg.ast_rope else None
        self.partition: HeadPartition | None = None
        self._grid = build_position_grid(cfg.latent_dims)

    @property
    def latent_dims(self) -> tuple[int, int, int]:
        return self.cfg.latent_dims

    @property
    def grid(self) -> PositionGrid:
        return self._grid

    def _check_partition(self, partition: HeadPartition) -> None:
        if partition.num_layers != self.cfg.blocks or any(
            len(partition.layer(i)) != self.cfg.heads for i in range(self.cfg.blocks)
        ):
            raise ConfigurationError(
                f"head partition does not cover {self.cfg.blocks} layers x {self.cfg.heads} heads"
            )

    def resolve_coefficients(self, pack: ConditioningPack, partition, coeffs):
        if partition is None:
            return None
        self._check_partition(partition)
        if coeffs is not None:
            return coeffs
        if self.predictor is None:
            raise ConfigurationError("head partition given but the model has no coefficient predictor and no coefficients were passed")
        return self.predictor(pack.source)

    def forward(
        self,
        pack: ConditioningPack,
        t,
        partition: HeadPartition | None = None,
        coeffs: RopeCoefficients | None = None,
        taps=None,
        return_attention: bool = False,
    ) -> ForwardOutput:
        partition = self.partition if partition is None else partition
        taps = self.cfg.tap_blocks if taps is None else tuple(taps)
        x = assemble_conditioning(pack.noisy, pack.source, pack.first_frame)
        b, f, h, w, _ = x.shape
        if (f, h, w) != self.cfg.latent_dims or pack.noisy.shape[-1] != self.cfg.channels:
            raise InvalidArgument(f"latent shape {tuple(pack.noisy.shape[1:])} does not match model grid {self.cfg.latent_dims}")
        t = torch.as_tensor(t, dtype=x.dtype).reshape(-1).expand(b)
        coeffs = self.resolve_coefficients(pack, partition, coeffs)

        tokens = self.in_proj(x.reshape(b, f * h * w, -1))
        tokens = tokens + self.time_proj(timestep_embedding(t, self.cfg.model_width))[:, None]
        captured, attention = {}, []
        for i, block in enumerate(self.blocks):
            kinds = None if coeffs is None else partition.layer(i)
            coords = head_coordinates(self._grid, coeffs, kinds)
            tokens, probs = block(tokens, coords, return_probs=return_attention)
            if return_attention:
                attention.append(probs)
            if i in taps:
                captured[i] = tokens.reshape(b, f, h, w, -1)
        velocity = self.out_proj(self.norm_out(tokens)).reshape(b, f, h, w, -1)
        return ForwardOutput(velocity, captured, coeffs, attention)

    @torch.no_grad()
    def attention_maps(self, pack: ConditioningPack, t: float = 0.5, partition=None, coeffs=None):
        """Per-layer attention probabilities ``(heads, N, N)`` for the first clip in ``pack``."""
        out = self.forward(pack, t, partition=partition, coeffs=coeffs, taps=(), return_attention=True)
        return [p[0].cpu().numpy() for p in out.attention]

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for name, tensor in sorted(self.state_dict().items()):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(tensor.detach().cpu().numpy()).astype(tensor_le_dtype(tensor)).tobytes())
        return digest.hexdigest()


def dit_forward(model: ToyDiT, pack: ConditioningPack, t, partition=None, coeffs=None, taps=None) -> ForwardOutput:
    return model(pack, t, partition=partition, coeffs=coeffs, taps=taps)


def attention_forward(model: ToyDiT, tokens: torch.Tensor, layer: int, partition=None, coeffs=None, return_probs=False):
    """Run only the attention sub-layer of block ``layer`` on ``(B, N, width)`` tokens."""
    kinds = None
    if partition is not None and coeffs is not None:
        model._check_partition(partition)
        kinds = partition.layer(layer)
    coords = head_coordinates(model.grid, coeffs, kinds)
    return model.blocks[layer].attn(tokens, coords, return_probs=return_probs)


# -- checkpoint file -------------------------------------------------------

CHECKPOINT_MAGIC = b"FFPK"
CHECKPOINT_VERSION = 1
_DTYPES = {torch.float32: ("f32", "<f4"), torch.float64: ("f64", "<f8")}
_NP_DTYPES = {"f32": "<f4", "f64": "<f8"}


def tensor_le_dtype(tensor: torch.Tensor) -> str:
    try:
        return _DTYPES[tensor.dtype][1]
    except KeyError:
        raise InvalidArgument(f"unsupported tensor dtype {tensor.dtype}") from None


def save_checkpoint(path, tensors: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    """Write ``FFPK`` | u32 version | u64 header length | JSON header | payloads.

    The header's tensor table lists name, shape, dtype and byte offset
    (relative to the start of the payload section). All numbers little-endian.
    """
    table, payloads, offset = [], [], 0
    for name in sorted(tensors):
        tensor = tensors[name].detach().cpu()
        code, le = _DTYPES.get(tensor.dtype, (None, None))
        if code is None:
            raise InvalidArgument(f"tensor {name!r} has unsupported dtype {tensor.dtype}")
        raw = np.ascontiguousarray(tensor.numpy()).astype(le).tobytes()
        table.append({"name": name, "shape": list(tensor.shape), "dtype": code, "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"tensors": table, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise InvalidArgument(f"{path} is not an FFPK checkpoint")
    version, header_len = struct.unpack_from("<IQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise InvalidArgument(f"unsupported checkpoint version {version}")
    start = 4 + struct.calcsize("<IQ")
    header = json.loads(data[start:start + header_len])
    base = start + header_len
    tensors = {}
    for entry in header["tensors"]:
        lo = base + entry["offset"]
        arr = np.frombuffer(data, dtype=_NP_DTYPES[entry["dtype"]], count=int(np.prod(entry["shape"], dtype=np.int64)), offset=lo)
        tensors[entry["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True).reshape(entry["shape"]))
    return tensors, header["meta"]


def save_model(path, model: ToyDiT, extra_meta: dict | None = None) -> None:
    meta = {"model": model.cfg.to_dict()}
    if model.partition is not None:
        meta["partition"] = model.partition.to_dict()
    meta.update(extra_meta or {})
    save_checkpoint(path, model.state_dict(), meta)


def load_model(path) -> tuple[ToyDiT, dict]:
    tensors, meta = load_checkpoint(path)
    cfg = DitConfig.from_dict(meta["model"])
    dtype = next(iter(tensors.values())).dtype
    model = ToyDiT(cfg).to(dtype)
    model.load_state_dict(tensors)
    if "partition" in meta:
        model.partition = HeadPartition.from_dict(meta["partition"])
    return model, meta
