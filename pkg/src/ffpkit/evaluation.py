"""Sampling from a trained velocity field and scoring against analytic ground truth."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import ToyCodec
from .dit import ConditioningPack, ToyDiT, load_model
from .errors import ConfigurationError

REPORT_SCHEMA = "ffp-eval/1"


@torch.no_grad()
def sample_ffp(model: ToyDiT, source: torch.Tensor, first_frame: torch.Tensor, steps: int = 20, seed: int = 0) -> torch.Tensor:
    """Integrate dz/dt = v from t=1 (noise) to t=0 with the explicit midpoint rule."""
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(source.shape, generator=gen, dtype=source.dtype)
    dt = 1.0 / steps
    for k in range(steps):
        t = 1.0 - k * dt
        v = model(ConditioningPack(z, source, first_frame), t, taps=()).velocity
        z_mid = z - 0.5 * dt * v
        v_mid = model(ConditioningPack(z_mid, source, first_frame), t - 0.5 * dt, taps=()).velocity
        z = z - dt * v_mid
    return z


def object_centroids(decoded: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Per-frame (x, y) centroid of squared deviation from the background; NaN if none."""
    w = ((decoded - background) ** 2).sum(axis=-1)  # (F, H, W)
    ys, xs = np.mgrid[: w.shape[1], : w.shape[2]]
    mass = w.sum(axis=(1, 2))
    cx = (w * xs).sum(axis=(1, 2))
    cy = (w * ys).sum(axis=(1, 2))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.stack([cx / mass, cy / mass], axis=-1)
    out[mass < 1e-12] = np.nan
    return out


@dataclass
class EvalReport:
    latent_mse: float
    first_frame_mse: float
    motion_error: float
    per_frame_latent_mse: list[float]
    per_frame_motion_error: list[float]
    samples: int
    motion_samples: int

    def summary(self) -> dict:
        return {"latent_mse": self.latent_mse, "first_frame_mse": self.first_frame_mse, "motion_error": self.motion_error}

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, **self.__dict__}

    def write(self, report_path, plot_path=None) -> None:
        report_path = Path(report_path)
        report_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        plot_path = Path(plot_path) if plot_path else report_path.with_suffix(".tsv")
        with open(plot_path, "w") as fh:
            fh.write("frame\tlatent_mse\tmotion_error\n")
            for f, (lm, me) in enumerate(zip(self.per_frame_latent_mse, self.per_frame_motion_error)):
                fh.write(f"{f}\t{lm!r}\t{me!r}\n")


def score_generation(generated, samples, codec: ToyCodec) -> EvalReport:
    """Score generated latents ``(S, F, H, W, C)`` against the samples' ground truth.

    Motion error skips object-removal samples, which have no object to track.
    """
    gen = np.asarray(generated, dtype=np.float64)
    target = np.stack([codec.encode(s.target) for s in samples])
    first = np.stack([codec.encode(s.edited_first_frame[None])[0] for s in samples])
    if gen.shape != target.shape:
        raise ConfigurationError(f"generated latents {gen.shape} do not match eval targets {target.shape}")
    per_frame_mse = ((gen - target) ** 2).mean(axis=(0, 2, 3, 4))
    ff_mse = float(((gen[:, 0] - first) ** 2).mean())

    errors = []
    for g, s in zip(gen, samples):
        if s.edit_kind == "object-remove":
            continue
        frames = g.shape[0]
        bg = codec.decode(codec.encode(np.repeat(s.target_background[None], frames, axis=0)))
        found = object_centroids(codec.decode(g), bg)
        truth = np.array([s.motion.centroid_at(k) for k in range(frames)])
        errors.append(np.linalg.norm(found - truth, axis=-1))
    if errors:
        errs = np.stack(errors)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns stay NaN
            per_frame_motion = np.nanmean(errs, axis=0)
            motion = float(np.nanmean(errs))
    else:
        per_frame_motion = np.full(gen.shape[1], np.nan)
        motion = float("nan")
    return EvalReport(
        latent_mse=float(per_frame_mse.mean()),
        first_frame_mse=ff_mse,
        motion_error=motion,
        per_frame_latent_mse=[float(v) for v in per_frame_mse],
        per_frame_motion_error=[float(v) for v in per_frame_motion],
        samples=len(samples),
        motion_samples=len(errors),
    )


def evaluate(model_or_path, samples, codec: ToyCodec | None = None, steps: int = 20, seed: int = 0, batch: int = 16) -> EvalReport:
    """Generate every eval sample under FFP conditioning and score it. Read-only on checkpoints."""
    if isinstance(model_or_path, (str, Path)):
        model, meta = load_model(model_or_path)
        if codec is None:
            c = meta.get("codec", {})
            codec = ToyCodec(c.get("channels", model.cfg.channels), c.get("patch", 2), c.get("seed", 0))
    else:
        model = model_or_path
    if codec is None:
        raise ConfigurationError("a codec is required when evaluating an in-memory model")
    model.eval()
    src = torch.from_numpy(np.stack([codec.encode(s.source) for s in samples]))
    ff = torch.from_numpy(np.stack([codec.encode(s.edited_first_frame[None])[0] for s in samples]))
    if tuple(src.shape[1:4]) != model.cfg.latent_dims or src.shape[-1] != model.cfg.channels:
        raise ConfigurationError(f"eval latents {tuple(src.shape[1:])} do not match model grid {model.cfg.latent_dims} x {model.cfg.channels}")
    src, ff = src.to(next(model.parameters()).dtype), ff.to(next(model.parameters()).dtype)
    outs = []
    for i, lo in enumerate(range(0, len(samples), batch)):
        outs.append(sample_ffp(model, src[lo : lo + batch], ff[lo : lo + batch], steps=steps, seed=seed + i))
    return score_generation(torch.cat(outs).numpy(), samples, codec)
