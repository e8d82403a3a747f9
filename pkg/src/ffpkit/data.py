"""Synthetic first-frame-propagation pairs and a fixed linear latent codec.

Each sample is a rectangle moving over a smooth textured background. The
target clip is the source with one analytic edit applied to every frame:

``color-swap``      recolour the rectangle
``object-remove``   render the background only
``global-restyle``  apply a 3x3 channel-mixing matrix to every pixel

The edit never touches the trajectory, so source and target share the same
motion record and the true object position is known at every frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidArgument

EDIT_KINDS = ("color-swap", "object-remove", "global-restyle")
TRAJECTORIES = ("linear", "circular")

# warm, slightly desaturated look; rows sum to 1 so grey stays grey
RESTYLE_MATRIX = (
    (0.60, 0.30, 0.10),
    (0.20, 0.65, 0.15),
    (0.10, 0.25, 0.65),
)


@dataclass
class DataParams:
    frames: int = 4
    height: int = 16
    width: int = 16
    rect_min: int = 3
    rect_max: int = 6
    max_speed: float = 1.5
    edit_kinds: tuple[str, ...] = EDIT_KINDS
    restyle_matrix: tuple[tuple[float, ...], ...] = RESTYLE_MATRIX

    def __post_init__(self):
        self.edit_kinds = tuple(self.edit_kinds)
        self.restyle_matrix = tuple(tuple(float(v) for v in row) for row in self.restyle_matrix)
        bad = set(self.edit_kinds) - set(EDIT_KINDS)
        if bad:
            raise ConfigurationError(f"unknown edit kinds {sorted(bad)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edit_kinds"] = list(self.edit_kinds)
        d["restyle_matrix"] = [list(r) for r in self.restyle_matrix]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DataParams":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown data config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class MotionSpec:
    """Rectangle trajectory; positions are (x, y) of the top-left corner in pixels."""

    kind: str
    origin: tuple[float, float]
    size: tuple[int, int]  # (w, h)
    velocity: tuple[float, float] = (0.0, 0.0)
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 0.0
    angular_speed: float = 0.0
    phase: float = 0.0

    def origin_at(self, k: int) -> tuple[float, float]:
        if self.kind == "linear":
            return (self.origin[0] + k * self.velocity[0], self.origin[1] + k * self.velocity[1])
        a = self.phase + k * self.angular_speed
        return (self.center[0] + self.radius * np.cos(a), self.center[1] + self.radius * np.sin(a))

    def centroid_at(self, k: int) -> tuple[float, float]:
        """Centre of the rendered (pixel-snapped) rectangle, in (x, y)."""
        x0, y0 = (int(np.floor(v + 0.5)) for v in self.origin_at(k))
        w, h = self.size
        return (x0 + (w - 1) / 2.0, y0 + (h - 1) / 2.0)


@dataclass
class FfpSample:
    source: np.ndarray  # (F, H, W, 3) in [0, 1]
    edited_first_frame: np.ndarray  # (H, W, 3)
    target: np.ndarray
    edit_kind: str
    motion: MotionSpec
    background: np.ndarray = field(repr=False, default=None)  # (H, W, 3), unedited
    target_background: np.ndarray = field(repr=False, default=None)  # background with the edit applied


def _texture(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    img = np.empty((height, width, 3))
    base = rng.uniform(0.3, 0.7, size=3)
    for ch in range(3):
        fx, fy = rng.uniform(0.1, 0.6, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        img[..., ch] = base[ch] + 0.15 * np.sin(fx * xx + fy * yy + ph)
    return np.clip(img, 0.0, 1.0)


def _paint(frame: np.ndarray, motion: MotionSpec, k: int, color) -> np.ndarray:
    out = frame.copy()
    height, width = frame.shape[:2]
    x0, y0 = (int(np.floor(v + 0.5)) for v in motion.origin_at(k))
    w, h = motion.size
    xs, xe = max(x0, 0), min(x0 + w, width)
    ys, ye = max(y0, 0), min(y0 + h, height)
    if xs < xe and ys < ye:
        out[ys:ye, xs:xe] = color
    return out


def rect_mask(motion: MotionSpec, k: int, height: int, width: int) -> np.ndarray:
    m = np.zeros((height, width, 1))
    return _paint(m, motion, k, 1.0)[..., 0].astype(bool)


def _random_motion(rng: np.random.Generator, p: DataParams) -> MotionSpec:
    w, h = (int(v) for v in rng.integers(p.rect_min, p.rect_max + 1, size=2))
    kind = TRAJECTORIES[int(rng.integers(len(TRAJECTORIES)))]
    if kind == "linear":
        vel = tuple(float(v) for v in rng.uniform(-p.max_speed, p.max_speed, size=2))
        # keep the whole path on the canvas where possible
        lo = [max(0.0, -v * (p.frames - 1)) for v in vel]
        hi = [max(lo[0], p.width - w - max(0.0, vel[0] * (p.frames - 1))), max(lo[1], p.height - h - max(0.0, vel[1] * (p.frames - 1)))]
        origin = (float(rng.uniform(lo[0], hi[0])), float(rng.uniform(lo[1], hi[1])))
        return MotionSpec("linear", origin, (w, h), velocity=vel)
    radius = float(rng.uniform(1.0, min(p.width, p.height) / 4))
    center = (float((p.width - w) / 2), float((p.height - h) / 2))
    omega = float(rng.uniform(0.3, 0.9) * rng.choice([-1.0, 1.0]))
    phase = float(rng.uniform(0, 2 * np.pi))
    m = MotionSpec("circular", (0.0, 0.0), (w, h), center=center, radius=radius, angular_speed=omega, phase=phase)
    m.origin = m.origin_at(0)
    return m


def gen_sample(seed: int, params: DataParams | None = None, edit_kind: str | None = None) -> FfpSample:
    p = params or DataParams()
    if p.height < 8 or p.width < 8 or p.frames < 2:
        raise InvalidArgument(f"canvas must be at least 8x8 with 2+ frames, got {p.height}x{p.width}x{p.frames}")
    rng = np.random.default_rng(seed)
    background = _texture(rng, p.height, p.width)
    color = rng.uniform(0.0, 1.0, size=3)
    motion = _random_motion(rng, p)
    kind = edit_kind or p.edit_kinds[int(rng.integers(len(p.edit_kinds)))]
    new_color = rng.uniform(0.0, 1.0, size=3)

    source = np.stack([_paint(background, motion, k, color) for k in range(p.frames)])
    if kind == "color-swap":
        target = np.stack([_paint(background, motion, k, new_color) for k in range(p.frames)])
        target_bg = background
    elif kind == "object-remove":
        target = np.repeat(background[None], p.frames, axis=0)
        target_bg = background
    elif kind == "global-restyle":
        mix = np.asarray(p.restyle_matrix)
        target = np.clip(source @ mix.T, 0.0, 1.0)
        target_bg = np.clip(background @ mix.T, 0.0, 1.0)
    else:
        raise InvalidArgument(f"unknown edit kind {kind!r}")
    return FfpSample(
        source=source,
        edited_first_frame=target[0].copy(),
        target=target,
        edit_kind=kind,
        motion=motion,
        background=background,
        target_background=target_bg,
    )


def gen_dataset(seed: int, count: int, params: DataParams | None = None) -> list[FfpSample]:
    # one child seed per sample: sample k is the same whatever ``count`` is
    seeds = np.random.SeedSequence(seed).spawn(count)
    return [gen_sample(int(s.generate_state(1)[0]), params) for s in seeds]


def save_dataset(path, samples: list[FfpSample], params: DataParams) -> None:
    m = [s.motion for s in samples]
    np.savez(
        path,
        source=np.stack([s.source for s in samples]),
        target=np.stack([s.target for s in samples]),
        edited_first_frame=np.stack([s.edited_first_frame for s in samples]),
        background=np.stack([s.background for s in samples]),
        target_background=np.stack([s.target_background for s in samples]),
        edit_kind=np.array([s.edit_kind for s in samples]),
        motion_kind=np.array([x.kind for x in m]),
        motion_origin=np.array([x.origin for x in m], dtype=float),
        motion_size=np.array([x.size for x in m], dtype=int),
        motion_velocity=np.array([x.velocity for x in m], dtype=float),
        motion_center=np.array([x.center for x in m], dtype=float),
        motion_circle=np.array([(x.radius, x.angular_speed, x.phase) for x in m], dtype=float),
        params=np.array(repr(params.to_dict())),
    )


def load_dataset(path) -> tuple[list[FfpSample], DataParams]:
    import ast

    with np.load(Path(path), allow_pickle=False) as z:
        params = DataParams.from_dict(ast.literal_eval(str(z["params"])))
        out = []
        for i in range(len(z["source"])):
            r, om, ph = z["motion_circle"][i]
            motion = MotionSpec(
                kind=str(z["motion_kind"][i]),
                origin=tuple(float(v) for v in z["motion_origin"][i]),
                size=tuple(int(v) for v in z["motion_size"][i]),
                velocity=tuple(float(v) for v in z["motion_velocity"][i]),
                center=tuple(float(v) for v in z["motion_center"][i]),
                radius=float(r),
                angular_speed=float(om),
                phase=float(ph),
            )
            out.append(
                FfpSample(
                    source=z["source"][i],
                    edited_first_frame=z["edited_first_frame"][i],
                    target=z["target"][i],
                    edit_kind=str(z["edit_kind"][i]),
                    motion=motion,
                    background=z["background"][i],
                    target_background=z["target_background"][i],
                )
            )
    return out, params


class ToyCodec:
    """Patch-flatten followed by a fixed orthonormal projection.

    ``encode`` maps ``(F, H, W, 3)`` pixels to ``(F, H/p, W/p, C)``;
    ``decode`` applies the transpose and clamps to ``[0, 1]``.
    """

    def __init__(self, channels: int = 4, patch: int = 2, seed: int = 0):
        dim = patch * patch * 3
        if channels > dim:
            raise InvalidArgument(f"channels {channels} exceeds patch dimension {dim}")
        self.patch = patch
        self.channels = channels
        q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((dim, dim)))
        self.basis = q[:, :channels]  # (patch_dim, C), orthonormal columns

    def patches(self, clip: np.ndarray) -> np.ndarray:
        clip = np.asarray(clip, dtype=np.float64)
        *lead, h, w, ch = clip.shape
        p = self.patch
        if h % p or w % p:
            raise InvalidArgument(f"frame size {h}x{w} not divisible by patch {p}")
        x = clip.reshape(*lead, h // p, p, w // p, p, ch)
        x = np.moveaxis(x, -4, -3)  # (..., h/p, w/p, p, p, ch)
        return x.reshape(*lead, h // p, w // p, p * p * ch)

    def unpatch(self, patches: np.ndarray) -> np.ndarray:
        *lead, hp, wp, _ = patches.shape
        p = self.patch
        x = patches.reshape(*lead, hp, wp, p, p, 3)
        x = np.moveaxis(x, -3, -4)
        return x.reshape(*lead, hp * p, wp * p, 3)

    def encode(self, clip: np.ndarray) -> np.ndarray:
        return self.patches(clip) @ self.basis

    def decode(self, latent: np.ndarray, clamp: bool = True) -> np.ndarray:
        pixels = self.unpatch(np.asarray(latent) @ self.basis.T)
        return np.clip(pixels, 0.0, 1.0) if clamp else pixels


def toy_encode(clip, codec: ToyCodec | None = None) -> np.ndarray:
    return (codec or ToyCodec()).encode(clip)


def toy_decode(latent, codec: ToyCodec | None = None) -> np.ndarray:
    return (codec or ToyCodec()).decode(latent)
