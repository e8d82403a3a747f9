"""Run configuration, head-partition bootstrap, the training loop and ablations."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch

from .data import DataParams, ToyCodec, gen_dataset
from .dit import ConditioningPack, DitConfig, ToyDiT, save_model
from .errors import ConfigurationError, NonFiniteLoss
from .heads import DEFAULT_EPSILON, DEFAULT_SAMPLES, HeadPartition, classify_model
from .losses import (
    LossWeights,
    flow_match_loss,
    interpolate,
    mmd_loss,
    motion_loss,
    teacher_forward,
    total_loss,
)

log = logging.getLogger(__name__)

METRICS_SCHEMA = "ffp-metrics/1"
ABLATIONS = ("baseline", "astrope", "full")


def _from_dict(cls, d: dict, section: str):
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**d)


@dataclass
class DatasetConfig:
    train_samples: int = 256
    train_seed: int = 0
    eval_samples: int = 16
    eval_seed: int = 1
    patch: int = 2
    codec_seed: int = 0


@dataclass
class LossConfig:
    lambda_motion: float = 5.0
    lambda_mmd: float = 1.0
    k_s: int = 2

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_motion, self.lambda_mmd)


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 4
    steps: int = 2000
    cosine: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)


@dataclass
class HeadsConfig:
    epsilon: float = DEFAULT_EPSILON
    samples: int = DEFAULT_SAMPLES
    probe_t: float = 0.5
    pretrain_steps: int = 500
    manifest: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    ablation: str = "full"
    output_dir: str = "runs/default"
    model: DitConfig = field(default_factory=lambda: DitConfig(ast_rope=True))
    data: DataParams = field(default_factory=DataParams)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    heads: HeadsConfig = field(default_factory=HeadsConfig)
    eval_steps: int = 20

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        p = self.dataset.patch
        if self.data.height % p or self.data.width % p:
            raise ConfigurationError(f"frame size {self.data.height}x{self.data.width} not divisible by patch {p}")
        expected = (self.data.frames, self.data.height // p, self.data.width // p)
        if self.model.latent_dims != expected:
            raise ConfigurationError(f"model grid {self.model.latent_dims} does not match data latent grid {expected}")
        if self.model.height % self.loss.k_s or self.model.width % self.loss.k_s:
            raise ConfigurationError(f"k_s={self.loss.k_s} must divide the latent grid {self.model.height}x{self.model.width}")

    def with_ablation(self, ablation: str) -> "RunConfig":
        """Baseline: plain RoPE, no distillation. +AST-RoPE: adaptive RoPE only. Full: both."""
        if ablation not in ABLATIONS:
            raise ConfigurationError(f"ablation must be one of {ABLATIONS}, got {ablation!r}")
        model = replace(self.model, ast_rope=ablation != "baseline")
        loss = self.loss if ablation == "full" else replace(self.loss, lambda_motion=0.0, lambda_mmd=0.0)
        return replace(self, ablation=ablation, model=model, loss=loss)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["data"] = self.data.to_dict()
        d["optim"]["betas"] = list(self.optim.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        sections = {
            "model": DitConfig.from_dict,
            "data": DataParams.from_dict,
            "dataset": lambda x: _from_dict(DatasetConfig, x, "dataset"),
            "loss": lambda x: _from_dict(LossConfig, x, "loss"),
            "optim": lambda x: _from_dict(OptimConfig, x, "optim"),
            "heads": lambda x: _from_dict(HeadsConfig, x, "heads"),
        }
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {k: (sections[k](v) if k in sections else v) for k, v in d.items()}
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def codec(self) -> ToyCodec:
        return ToyCodec(self.model.channels, self.dataset.patch, self.dataset.codec_seed)


@dataclass
class LatentSet:
    """Encoded FFP samples as float64 tensors."""

    source: torch.Tensor  # (S, F, H, W, C)
    target: torch.Tensor
    first_frame: torch.Tensor  # (S, H, W, C)

    def __len__(self) -> int:
        return self.source.shape[0]

    def pack(self, idx, noisy: torch.Tensor) -> ConditioningPack:
        return ConditioningPack(noisy=noisy, source=self.source[idx], first_frame=self.first_frame[idx])


def encode_samples(samples, codec: ToyCodec) -> LatentSet:
    src = np.stack([codec.encode(s.source) for s in samples])
    tgt = np.stack([codec.encode(s.target) for s in samples])
    ff = np.stack([codec.encode(s.edited_first_frame[None])[0] for s in samples])
    return LatentSet(torch.from_numpy(src), torch.from_numpy(tgt), torch.from_numpy(ff))


def _streams(seed: int):
    """Independent generators for init, batch indices, timesteps and noise."""
    init, batch, tstep, noise = np.random.SeedSequence(seed).spawn(4)
    to_torch = lambda ss: torch.Generator().manual_seed(int(ss.generate_state(1, dtype=np.uint64)[0] >> 1))
    return to_torch(init), np.random.default_rng(batch), to_torch(tstep), to_torch(noise)


def build_model(cfg: DitConfig, init_gen: torch.Generator) -> ToyDiT:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(torch.randint(0, 2**62, (1,), generator=init_gen)))
        return ToyDiT(cfg).to(torch.float64)


def load_init_state(model: ToyDiT, state: dict) -> None:
    """Load weights, tolerating only a missing coefficient predictor."""
    missing, unexpected = model.load_state_dict(state, strict=False)
    missing = [k for k in missing if not k.startswith("predictor.")]
    unexpected = [k for k in unexpected if not k.startswith("predictor.")]
    if missing or unexpected:
        raise ConfigurationError(f"initial state mismatch: missing={missing} unexpected={unexpected}")


def probe_packs(latents: LatentSet, count: int, t: float, seed: int) -> list[ConditioningPack]:
    gen = torch.Generator().manual_seed(seed)
    packs = []
    for i in range(min(count, len(latents))):
        clean = latents.target[i : i + 1]
        noise = torch.randn(clean.shape, generator=gen, dtype=clean.dtype)
        packs.append(latents.pack(slice(i, i + 1), interpolate(clean, noise, t)))
    return packs


@dataclass
class TrainResult:
    model: ToyDiT
    metrics: list[dict]
    checkpoint: Path | None
    metrics_path: Path | None
    partition: HeadPartition | None = None


def _tap_losses(out_taps, teacher_taps, k_s):
    blocks = sorted(out_taps)
    l_motion = sum(motion_loss(out_taps[b], teacher_taps[b], k_s) for b in blocks) / len(blocks)
    l_mmd = sum(mmd_loss(out_taps[b], teacher_taps[b], k_s) for b in blocks) / len(blocks)
    return l_motion, l_mmd


def train_steps(
    model: ToyDiT,
    latents: LatentSet,
    cfg: RunConfig,
    steps: int,
    weights: LossWeights,
    streams,
    on_record=None,
) -> list[dict]:
    """Optimise ``model`` in place for ``steps`` steps; one metrics record per step."""
    _, batch_rng, t_gen, noise_gen = streams
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.optim.lr, betas=cfg.optim.betas, weight_decay=cfg.optim.weight_decay)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1)) if cfg.optim.cosine else None
    distill = weights.lambda_motion > 0 or weights.lambda_mmd > 0
    dtype = latents.target.dtype
    zero = torch.zeros((), dtype=dtype)
    records = []
    for step in range(steps):
        idx = torch.from_numpy(batch_rng.integers(0, len(latents), size=cfg.optim.batch_size))
        clean = latents.target[idx]
        t = torch.rand(len(idx), generator=t_gen, dtype=dtype)
        noise = torch.randn(clean.shape, generator=noise_gen, dtype=dtype)
        noisy = interpolate(clean, noise, t)

        out = model(latents.pack(idx, noisy), t)
        l_fm = flow_match_loss(out.velocity, clean, noise)
        l_motion = l_mmd = zero
        if distill:
            teacher = teacher_forward(model, clean, noisy, t)
            l_motion, l_mmd = _tap_losses(out.taps, teacher, cfg.loss.k_s)
        try:
            report = total_loss(l_fm, l_motion, l_mmd, weights)
        except NonFiniteLoss as exc:
            raise NonFiniteLoss(exc.component, exc.value, step) from None

        opt.zero_grad(set_to_none=True)
        report.total.backward()
        opt.step()
        if sched is not None:
            sched.step()

        rec = {"schema": METRICS_SCHEMA, "step": step, **report.as_floats()}
        rec["alpha_s_mean"] = None if out.coeffs is None else out.coeffs.alpha_s.mean().item()
        rec["alpha_t_mean"] = None if out.coeffs is None else out.coeffs.alpha_t.mean().item()
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    return records


def bootstrap_partition(cfg: RunConfig, latents: LatentSet, probe: LatentSet, streams) -> tuple[ToyDiT, HeadPartition]:
    """Briefly pre-train with plain RoPE and no distillation, then classify heads."""
    base_cfg = replace(cfg.model, ast_rope=False)
    model = build_model(base_cfg, streams[0])
    train_steps(model, latents, cfg, cfg.heads.pretrain_steps, LossWeights(0.0, 0.0), streams)
    packs = probe_packs(probe, cfg.heads.samples, cfg.heads.probe_t, cfg.seed + 7919)
    partition = classify_model(model, packs, cfg.heads.epsilon, t=cfg.heads.probe_t)
    return model, partition


def train(
    cfg: RunConfig,
    out_dir=None,
    init_state: dict | None = None,
    partition: HeadPartition | None = None,
    latents: LatentSet | None = None,
) -> TrainResult:
    """Train one ablation row.

    ``init_state`` seeds the weights (e.g. a shared bootstrap model). When
    adaptive RoPE is on and neither ``partition`` nor ``cfg.heads.manifest``
    is given, a partition is bootstrapped first and the run continues from
    the bootstrap weights.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    codec = cfg.codec()
    streams = _streams(cfg.seed)
    if latents is None:
        latents = encode_samples(gen_dataset(cfg.dataset.train_seed, cfg.dataset.train_samples, cfg.data), codec)

    if cfg.model.ast_rope and partition is None:
        if cfg.heads.manifest:
            partition = HeadPartition.load(cfg.heads.manifest)
        else:
            probe = encode_samples(gen_dataset(cfg.dataset.eval_seed, cfg.heads.samples, cfg.data), codec)
            boot, partition = bootstrap_partition(cfg, latents, probe, _streams(cfg.seed + 1))
            if init_state is None:
                init_state = boot.state_dict()
        partition.save(out / "heads.json")

    model = build_model(cfg.model, streams[0])
    if init_state is not None:
        load_init_state(model, init_state)
    if cfg.model.ast_rope:
        model.partition = partition

    metrics_path = out / "metrics.jsonl"
    timing_path = out / "timing.jsonl"
    t0 = time.perf_counter()
    with open(metrics_path, "w") as mf, open(timing_path, "w") as tf:

        def sink(rec):
            mf.write(json.dumps(rec) + "\n")
            tf.write(json.dumps({"step": rec["step"], "wall_time": time.perf_counter() - t0}) + "\n")

        records = train_steps(model, latents, cfg, cfg.optim.steps, cfg.loss.weights, streams, on_record=sink)

    ckpt = out / "model.ffpk"
    save_model(ckpt, model, {"run": cfg.to_dict(), "codec": {"channels": codec.channels, "patch": codec.patch, "seed": cfg.dataset.codec_seed}})
    log.info("trained %s for %d steps -> %s", cfg.ablation, cfg.optim.steps, ckpt)
    return TrainResult(model, records, ckpt, metrics_path, partition)


def moving_average(values, window: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.convolve(v, np.ones(window) / window, mode="valid")


def run_ablation(cfg: RunConfig, out_dir=None, eval_samples=None) -> dict:
    """Train Baseline, +AST-RoPE and Full from one shared bootstrap and compare them.

    Every row starts from the same briefly pre-trained weights; the head
    partition measured on those weights is reused by both adaptive rows.
    Writes ``ablation.json`` and ``ablation.tsv`` and returns the report.
    """
    from .evaluation import evaluate

    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    codec = cfg.codec()
    latents = encode_samples(gen_dataset(cfg.dataset.train_seed, cfg.dataset.train_samples, cfg.data), codec)
    if eval_samples is None:
        eval_samples = gen_dataset(cfg.dataset.eval_seed, cfg.dataset.eval_samples, cfg.data)
    probe = encode_samples(eval_samples[: cfg.heads.samples], codec)
    boot, partition = bootstrap_partition(cfg, latents, probe, _streams(cfg.seed + 1))
    partition.save(out / "heads.json")
    init = boot.state_dict()

    rows = {}
    for name in ABLATIONS:
        row_cfg = cfg.with_ablation(name)
        result = train(row_cfg, out / name, init_state=init, partition=partition if name != "baseline" else None, latents=latents)
        report = evaluate(result.model, eval_samples, codec, steps=cfg.eval_steps, seed=cfg.seed)
        window = min(10, len(result.metrics))
        final = {k: float(moving_average([r[k] for r in result.metrics], window)[-1]) for k in ("l_fm", "l_motion", "l_mmd")}
        rows[name] = {
            "final_l_fm": final["l_fm"],
            "final_l_motion": final["l_motion"],
            "final_l_mmd": final["l_mmd"],
            "finite": bool(np.all(np.isfinite([r["total"] for r in result.metrics]))),
            **report.summary(),
        }
    comparison = {
        "rows": rows,
        "partition": {k.value: n for k, n in partition.counts().items()},
        "full_beats_baseline": {
            m: rows["full"][m] < rows["baseline"][m] for m in ("latent_mse", "first_frame_mse", "motion_error")
        },
    }
    (out / "ablation.json").write_text(json.dumps(comparison, indent=2) + "\n")
    with open(out / "ablation.tsv", "w") as fh:
        cols = ["latent_mse", "first_frame_mse", "motion_error", "final_l_fm", "final_l_motion", "final_l_mmd"]
        fh.write("row\t" + "\t".join(cols) + "\n")
        for name in ABLATIONS:
            fh.write(name + "\t" + "\t".join(repr(rows[name][c]) for c in cols) + "\n")
    return comparison
