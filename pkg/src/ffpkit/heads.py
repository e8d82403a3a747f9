"""Spatial/temporal attention-head taxonomy from attention-density statistics.

An attention map over ``F * HW`` tokens is cut into an ``F x F`` grid of
``HW x HW`` blocks. The density of a block is the fraction of its entries
above ``epsilon``. A head is temporal when its densest off-diagonal block
beats its sparsest diagonal block, and spatial otherwise. Per-clip labels
are then merged by majority vote.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .rope import HeadKind

DEFAULT_EPSILON = 1e-6
DEFAULT_SAMPLES = 10
MANIFEST_FORMAT = "ffp-head-partition"
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class AttentionDensityGrid:
    rho: np.ndarray
    epsilon: float
    dims: tuple[int, int]  # (frames, tokens per frame)


def compute_density_grid(attention_map, dims, epsilon: float = DEFAULT_EPSILON) -> AttentionDensityGrid:
    a = np.asarray(attention_map)
    frames, hw = (int(d) for d in dims)
    n = frames * hw
    if frames < 1 or hw < 1 or a.shape != (n, n):
        raise InvalidArgument(f"attention map of shape {a.shape} does not tile into a {frames}x{frames} grid of {hw}x{hw} blocks")
    blocks = (a > epsilon).reshape(frames, hw, frames, hw)
    rho = blocks.sum(axis=(1, 3)) / float(hw * hw)
    return AttentionDensityGrid(rho, float(epsilon), (frames, hw))


def classify_head(grid: AttentionDensityGrid) -> HeadKind:
    rho = grid.rho
    frames = rho.shape[0]
    if frames < 2:
        return HeadKind.SPATIAL
    off_diag = rho[~np.eye(frames, dtype=bool)]
    if off_diag.max() > np.diag(rho).min():
        return HeadKind.TEMPORAL
    return HeadKind.SPATIAL


@dataclass
class HeadPartition:
    """Static per-layer head labels plus the vote tallies behind them."""

    kinds: list[list[HeadKind]]
    votes: list[list[dict[str, int]]]
    samples: int
    epsilon: float = DEFAULT_EPSILON
    model_hash: str = ""
    probe_t: float | None = None
    flags: list[str] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.kinds)

    def layer(self, index: int) -> list[HeadKind]:
        return self.kinds[index]

    @classmethod
    def uniform(cls, layers: int, heads: int, kind: HeadKind) -> "HeadPartition":
        kind = HeadKind(kind)
        return cls(
            kinds=[[kind] * heads for _ in range(layers)],
            votes=[[{kind.value: 1}] * heads for _ in range(layers)],
            samples=1,
        )

    @classmethod
    def from_kinds(cls, kinds) -> "HeadPartition":
        kinds = [[HeadKind(k) for k in layer] for layer in kinds]
        return cls(kinds=kinds, votes=[[{k.value: 1} for k in layer] for layer in kinds], samples=1)

    def counts(self) -> Counter:
        return Counter(k for layer in self.kinds for k in layer)

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "model_hash": self.model_hash,
            "epsilon": self.epsilon,
            "samples": self.samples,
            "probe_t": self.probe_t,
            "flags": list(self.flags),
            "layers": [
                [{"kind": k.value, "votes": dict(v)} for k, v in zip(kinds, votes)]
                for kinds, votes in zip(self.kinds, self.votes)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HeadPartition":
        if doc.get("format") != MANIFEST_FORMAT or doc.get("version") != MANIFEST_VERSION:
            raise InvalidArgument("not a head-partition manifest (format/version mismatch)")
        layers = doc["layers"]
        return cls(
            kinds=[[HeadKind(h["kind"]) for h in layer] for layer in layers],
            votes=[[{str(k): int(n) for k, n in h["votes"].items()} for h in layer] for layer in layers],
            samples=int(doc["samples"]),
            epsilon=float(doc["epsilon"]),
            model_hash=str(doc["model_hash"]),
            probe_t=None if doc.get("probe_t") is None else float(doc["probe_t"]),
            flags=[str(f) for f in doc.get("flags", [])],
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "HeadPartition":
        return cls.from_dict(json.loads(Path(path).read_text()))


def vote_partition(per_sample_kinds) -> HeadPartition:
    """Majority vote over samples; ties resolve to spatial.

    ``per_sample_kinds[s][layer][head]`` is the label of one head on probe
    sample ``s``.
    """
    samples = list(per_sample_kinds)
    if not samples:
        raise InvalidArgument("vote_partition needs at least one sample")
    shape = [len(layer) for layer in samples[0]]
    if any([len(layer) for layer in s] != shape for s in samples):
        raise InvalidArgument("all samples must label the same (layer, head) set")
    kinds, votes = [], []
    for li, heads in enumerate(shape):
        layer_kinds, layer_votes = [], []
        for hi in range(heads):
            tally = Counter(HeadKind(s[li][hi]).value for s in samples)
            n_t, n_s = tally[HeadKind.TEMPORAL.value], tally[HeadKind.SPATIAL.value]
            layer_kinds.append(HeadKind.TEMPORAL if n_t > n_s else HeadKind.SPATIAL)
            layer_votes.append({HeadKind.SPATIAL.value: n_s, HeadKind.TEMPORAL.value: n_t})
        kinds.append(layer_kinds)
        votes.append(layer_votes)
    return HeadPartition(kinds=kinds, votes=votes, samples=len(samples))


def classify_model(model, probe_clips, epsilon: float = DEFAULT_EPSILON, **probe_kwargs) -> HeadPartition:
    """Label every head of ``model`` from its attention maps on ``probe_clips``.

    ``model`` only needs an ``attention_maps(clip, **probe_kwargs)`` method
    returning, per layer, an array ``(heads, N, N)``, plus a ``latent_dims``
    attribute ``(frames, height, width)``.
    """
    frames, height, width = model.latent_dims
    dims = (frames, height * width)
    per_sample, flags = [], []
    if frames < 2:
        flags.append("single-frame probe: all heads labelled spatial by convention")
    for clip in probe_clips:
        maps = model.attention_maps(clip, **probe_kwargs)
        labels = []
        for layer_maps in maps:
            layer_maps = np.asarray(layer_maps)
            if layer_maps.shape[-1] != frames * height * width:
                raise InvalidArgument(
                    f"probe clip produced {layer_maps.shape[-1]} tokens, model grid expects {frames * height * width}"
                )
            labels.append([classify_head(compute_density_grid(m, dims, epsilon)) for m in layer_maps])
        per_sample.append(labels)
    partition = vote_partition(per_sample)
    partition.epsilon = float(epsilon)
    partition.flags = flags
    partition.probe_t = probe_kwargs.get("t")
    if hasattr(model, "content_hash"):
        partition.model_hash = model.content_hash()
    return partition
