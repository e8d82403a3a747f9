import json
import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from ffpkit.data import gen_dataset
from ffpkit.dit import load_model
from ffpkit.errors import ConfigurationError, NonFiniteLoss
from ffpkit.heads import HeadPartition
from ffpkit.losses import LossWeights
from ffpkit.rope import HeadKind
from ffpkit.training import (
    METRICS_SCHEMA,
    RunConfig,
    _streams,
    build_model,
    encode_samples,
    moving_average,
    run_ablation,
    train,
    train_steps,
)


class TestRunConfig:
    def test_json_round_trip(self, tmp_path, tiny_cfg):
        tiny_cfg.save(tmp_path / "c.json")
        assert RunConfig.load(tmp_path / "c.json") == tiny_cfg

    def test_defaults_match_toy_backbone(self):
        cfg = RunConfig()
        assert cfg.model.latent_dims == (4, 8, 8) and cfg.model.model_width == 64
        assert (cfg.loss.lambda_motion, cfg.loss.lambda_mmd) == (5.0, 1.0)
        assert cfg.optim.lr == 1e-3

    @pytest.mark.parametrize(
        "doc",
        [{"sed": 1}, {"optim": {"learning_rate": 0.1}}, {"model": {"layers": 3}}, {"heads": {"eps": 1e-3}}, {"data": {"fps": 3}}],
    )
    def test_unknown_keys(self, doc):
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict(doc)

    def test_malformed_file(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        with pytest.raises(ConfigurationError):
            RunConfig.load(tmp_path / "c.json")

    def test_grid_mismatch(self, tiny_cfg):
        d = tiny_cfg.to_dict()
        d["data"]["height"] = 12
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict(d)

    def test_ablation_rows(self, tiny_cfg):
        base, ast, full = (tiny_cfg.with_ablation(a) for a in ("baseline", "astrope", "full"))
        assert not base.model.ast_rope and base.loss.weights == LossWeights(0, 0)
        assert ast.model.ast_rope and ast.loss.weights == LossWeights(0, 0)
        assert full.model.ast_rope and full.loss.weights == LossWeights(5, 1)

    def test_unknown_ablation(self, tiny_cfg):
        with pytest.raises(ConfigurationError):
            tiny_cfg.with_ablation("half")


def _latents(cfg):
    return encode_samples(gen_dataset(0, cfg.dataset.train_samples, cfg.data), cfg.codec())


class TestTrainSteps:
    def test_records(self, tiny_cfg):
        cfg = tiny_cfg
        streams = _streams(0)
        model = build_model(replace(cfg.model, ast_rope=False), streams[0])
        recs = train_steps(model, _latents(cfg), cfg, 5, LossWeights(5, 1), streams)
        assert [r["step"] for r in recs] == list(range(5))
        for r in recs:
            assert r["schema"] == METRICS_SCHEMA
            assert all(math.isfinite(r[k]) for k in ("l_fm", "l_motion", "l_mmd", "total"))
            assert r["total"] == pytest.approx(r["l_fm"] + 5 * r["l_motion"] + r["l_mmd"], rel=1e-12)

    def test_baseline_has_zero_distillation(self, tiny_cfg):
        streams = _streams(0)
        model = build_model(replace(tiny_cfg.model, ast_rope=False), streams[0])
        recs = train_steps(model, _latents(tiny_cfg), tiny_cfg, 3, LossWeights(0, 0), streams)
        assert all(r["l_motion"] == 0 and r["l_mmd"] == 0 and r["total"] == r["l_fm"] for r in recs)
        assert all(r["alpha_s_mean"] is None for r in recs)

    def test_non_finite_aborts_with_step(self, tiny_cfg):
        latents = _latents(tiny_cfg)
        latents.target[3, 1, 0, 0, 0] = float("nan")
        streams = _streams(0)
        model = build_model(replace(tiny_cfg.model, ast_rope=False), streams[0])
        cfg = replace(tiny_cfg, optim=replace(tiny_cfg.optim, batch_size=8))
        with pytest.raises(NonFiniteLoss) as info:
            train_steps(model, latents, cfg, 3, LossWeights(0, 0), streams)
        assert info.value.step == 0 and info.value.component == "l_fm"

    def test_teacher_sees_pre_step_weights(self, tiny_cfg, monkeypatch):
        import ffpkit.training as tr

        seen = []
        original = tr.teacher_forward

        def spy(model, *args, **kw):
            seen.append(model.out_proj.weight.detach().clone())
            return original(model, *args, **kw)

        monkeypatch.setattr(tr, "teacher_forward", spy)
        streams = _streams(0)
        model = build_model(replace(tiny_cfg.model, ast_rope=False), streams[0])
        w0 = model.out_proj.weight.detach().clone()
        train_steps(model, _latents(tiny_cfg), tiny_cfg, 2, LossWeights(5, 1), streams)
        assert torch.equal(seen[0], w0) and not torch.equal(seen[1], w0)


class TestTrain:
    def test_outputs(self, tmp_path, tiny_cfg):
        res = train(tiny_cfg, tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == tiny_cfg.optim.steps
        assert [json.loads(s)["step"] for s in lines] == list(range(tiny_cfg.optim.steps))
        assert "wall_time" not in json.loads(lines[0])
        assert len((tmp_path / "timing.jsonl").read_text().splitlines()) == tiny_cfg.optim.steps
        part = HeadPartition.load(tmp_path / "heads.json")
        assert part == res.partition and part.num_layers == 2
        model, meta = load_model(res.checkpoint)
        assert model.partition == part
        assert RunConfig.from_dict(meta["run"]) == tiny_cfg
        assert res.metrics[0]["alpha_t_mean"] is not None

    def test_bitwise_reproducible(self, tmp_path, tiny_cfg):
        train(tiny_cfg, tmp_path / "a")
        train(tiny_cfg, tmp_path / "b")
        for name in ("metrics.jsonl", "model.ffpk", "heads.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_seed_changes_run(self, tmp_path, tiny_cfg):
        train(tiny_cfg, tmp_path / "a")
        train(replace(tiny_cfg, seed=1), tmp_path / "b")
        assert (tmp_path / "a" / "metrics.jsonl").read_bytes() != (tmp_path / "b" / "metrics.jsonl").read_bytes()

    def test_manifest_from_config(self, tmp_path, tiny_cfg):
        S, T = HeadKind.SPATIAL, HeadKind.TEMPORAL
        HeadPartition.from_kinds([[S, T, S, T], [T, S, S, S]]).save(tmp_path / "m.json")
        cfg = replace(tiny_cfg, heads=replace(tiny_cfg.heads, manifest=str(tmp_path / "m.json")))
        res = train(cfg, tmp_path / "run")
        assert res.partition.layer(1) == [T, S, S, S]

    def test_baseline_row_has_no_partition(self, tmp_path, tiny_cfg):
        res = train(tiny_cfg.with_ablation("baseline"), tmp_path)
        assert res.partition is None and not (tmp_path / "heads.json").exists()
        assert res.model.predictor is None


class TestAblation:
    def test_report(self, tmp_path, tiny_cfg):
        report = run_ablation(tiny_cfg, tmp_path)
        assert set(report["rows"]) == {"baseline", "astrope", "full"}
        for row in report["rows"].values():
            assert row["finite"]
            assert all(math.isfinite(row[k]) for k in ("latent_mse", "first_frame_mse", "final_l_fm"))
        assert set(report["full_beats_baseline"]) == {"latent_mse", "first_frame_mse", "motion_error"}
        tsv = (tmp_path / "ablation.tsv").read_text().splitlines()
        assert tsv[0].split("\t")[0] == "row" and len(tsv) == 4
        assert json.loads((tmp_path / "ablation.json").read_text()) == report


def test_moving_average():
    assert np.allclose(moving_average([1, 2, 3, 4], 2), [1.5, 2.5, 3.5])
