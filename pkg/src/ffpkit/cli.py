"""Command-line entry point: ``ffpkit <command> ...``.

On failure the last stderr line is a JSON object
``{"error": <code>, "message": <text>}`` and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import FFPError


def _cmd_gen_data(args):
    from .data import DataParams, gen_dataset, save_dataset

    params = DataParams()
    if args.config:
        from .training import RunConfig

        params = RunConfig.load(args.config).data
    samples = gen_dataset(args.seed, args.count, params)
    save_dataset(args.out, samples, params)
    print(json.dumps({"written": str(args.out), "count": len(samples)}))


def _cmd_classify_heads(args):
    from .data import ToyCodec, gen_dataset, load_dataset
    from .dit import load_model
    from .heads import classify_model
    from .training import encode_samples, probe_packs

    model, meta = load_model(args.ckpt)
    c = meta.get("codec", {})
    codec = ToyCodec(c.get("channels", model.cfg.channels), c.get("patch", 2), c.get("seed", 0))
    if args.data:
        samples, _ = load_dataset(args.data)
    else:
        from .data import DataParams

        run = meta.get("run", {})
        params = DataParams.from_dict(run["data"]) if "data" in run else DataParams()
        samples = gen_dataset(args.seed, args.samples, params)
    latents = encode_samples(samples[: args.samples], codec)
    packs = probe_packs(latents, args.samples, args.t, args.seed)
    partition = classify_model(model, packs, args.epsilon, t=args.t)
    partition.save(args.out)
    counts = {k.value: n for k, n in partition.counts().items()}
    print(json.dumps({"written": str(args.out), "counts": counts, "samples": partition.samples}))


def _cmd_train(args):
    from .training import RunConfig, train

    cfg = RunConfig.load(args.config)
    if args.ablation:
        cfg = cfg.with_ablation(args.ablation)
    if args.out:
        cfg.output_dir = args.out
    result = train(cfg)
    last = result.metrics[-1] if result.metrics else {}
    print(json.dumps({"checkpoint": str(result.checkpoint), "metrics": str(result.metrics_path), "last": last}))


def _cmd_eval(args):
    from .data import load_dataset
    from .evaluation import evaluate

    samples, _ = load_dataset(args.data)
    report = evaluate(args.ckpt, samples, steps=args.steps, seed=args.seed)
    report.write(args.report, args.plot)
    print(json.dumps(report.summary()))


def _cmd_grad_check(args):
    from .gradcheck import grad_check, model_grad_check

    if args.component == "model":
        results = model_grad_check(h=args.h, seed=args.seed)
        worst = max(results.values(), key=lambda r: r.max_rel_error)
        out = {"component": "model", "max_rel_error": worst.max_rel_error, "worst": [worst.label, list(worst.worst_index)]}
    else:
        r = grad_check(args.component, tuple(args.shape), h=args.h, seed=args.seed)
        out = {"component": args.component, "max_rel_error": r.max_rel_error, "worst": list(r.worst_index)}
    print(json.dumps(out))
    if args.tol is not None and out["max_rel_error"] >= args.tol:
        raise FFPError(f"max relative error {out['max_rel_error']:.3e} >= {args.tol}")


def _cmd_ablate(args):
    from .training import RunConfig, run_ablation

    cfg = RunConfig.load(args.config)
    report = run_ablation(cfg, args.out or cfg.output_dir)
    print(json.dumps(report))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ffpkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic FFP pairs to an .npz file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--config", type=Path, help="take data parameters from a run config")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("classify-heads", help="label every attention head spatial or temporal")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--t", type=float, default=0.5, help="probe timestep")
    p.add_argument("--data", type=Path, help="probe clips (.npz); generated from --seed if omitted")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_classify_heads)

    p = sub.add_parser("train", help="train one ablation row from a run config")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--ablation", choices=("baseline", "astrope", "full"))
    p.add_argument("--out", help="override output_dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="sample and score a checkpoint on a dataset")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    p.add_argument("--plot", type=Path, help="plot-data file (default: report path with .tsv)")
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("grad-check", help="finite-difference check of a loss gradient")
    p.add_argument("--component", choices=("flow", "motion", "mmd", "total", "linear", "model"), required=True)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--shape", type=int, nargs=3, default=(3, 4, 4), metavar=("F", "N", "C"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, help="exit nonzero if the error reaches this value")
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("ablate", help="train and compare the Baseline / +AST-RoPE / Full rows")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FFPError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
