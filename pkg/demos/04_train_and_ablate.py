"""A miniature ablation: Baseline, +AST-RoPE and Full from one shared bootstrap.

Uses a shrunken grid (3 frames of 4x4 latents) and a few hundred steps so it
finishes in under a minute. The real-size run is `ffpkit ablate --config ...`
with the default config.

Run: python demos/04_train_and_ablate.py [out_dir]
"""

import json
import sys
import tempfile

from ffpkit.data import DataParams
from ffpkit.dit import DitConfig
from ffpkit.training import DatasetConfig, HeadsConfig, OptimConfig, RunConfig, run_ablation

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="ffp-demo-")

cfg = RunConfig(
    model=DitConfig(frames=3, height=4, width=4, channels=4, model_width=32, heads=4, blocks=2, ast_rope=True, predictor_hidden=16),
    data=DataParams(frames=3, height=8, width=8, rect_min=2, rect_max=3, max_speed=1.0),
    dataset=DatasetConfig(train_samples=64, eval_samples=8),
    optim=OptimConfig(steps=300, batch_size=8),
    # looser than the default threshold; whether any head comes out Temporal depends on the bootstrap
    heads=HeadsConfig(epsilon=1e-4, samples=8, pretrain_steps=100),
)
report = run_ablation(cfg, out)

print("partition:", report["partition"])
print(f"{'row':<9}{'latent_mse':>12}{'first_frame':>13}{'motion_err':>12}{'final_l_fm':>12}")
for name, row in report["rows"].items():
    print(f"{name:<9}{row['latent_mse']:>12.4f}{row['first_frame_mse']:>13.4f}{row['motion_error']:>12.3f}{row['final_l_fm']:>12.4f}")
print("full below baseline:", json.dumps(report["full_beats_baseline"]))
print("artifacts in", out)
