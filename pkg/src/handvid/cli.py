"""Command-line interface.

Subcommands cover the full workflow: synthesize data, train the frozen
detector and codec, train both diffusion stages, run inference, evaluate,
sweep the ablation grid, and render motion visualizations.
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import torch

from handvid.pipeline import (
    MASK_SOURCES,
    RunConfig,
    dataset_prior,
    infer,
    load_run_config,
    run_config_hash,
    save_run_config,
    train_stage1,
    train_stage2,
)


def _load_samples(path):
    from handvid.synth.manifest import ManifestDataset

    return ManifestDataset(path)


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "mask_source", None):
        config.mask_source = args.mask_source
    if getattr(args, "hrl", None):
        config.hrl = args.hrl == "on"
    return config.validate()


def _config_from_args(args) -> RunConfig:
    if getattr(args, "config", None):
        config = load_run_config(args.config)
    else:
        config = RunConfig()
    return _apply_overrides(config, args)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_history(history, path):
    with open(path, "w") as fh:
        fh.write("iteration,stage,noise,miou,hrl,total\n")
        for it, stage, noise, miou, hrl, total in history:
            fh.write(f"{it},{stage},{noise:.8f},{miou:.8f},{hrl:.8f},{total:.8f}\n")


def _load_prior_for(samples, path=None):
    if path:
        from handvid.synth.manifest import load_prior_png

        return load_prior_png(path)
    if hasattr(samples, "load_prior"):
        return samples.load_prior()
    return dataset_prior(samples)


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_synth(args):
    from handvid.synth import generate_dataset, write_manifest

    out = _out_dir(args)
    frames = args.frames
    if args.config:
        frames = load_run_config(args.config).frames + 1
    samples = generate_dataset(
        args.count,
        frames=frames,
        height=args.height,
        width=args.width,
        seed=args.seed if args.seed is not None else 0,
    )
    write_manifest(samples, out)
    print(f"wrote {len(samples)} samples to {out}")
    return 0


def cmd_train_detector(args):
    from handvid.hand_pose import DetectorTrainConfig, save_detector, train_detector

    out = _out_dir(args)
    samples = list(_load_samples(args.data))
    cfg = DetectorTrainConfig(seed=args.seed if args.seed is not None else 0)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    model = train_detector(samples, cfg, log=print)
    path = out / "detector.pt"
    save_detector(model, path)
    print(f"detector saved to {path}; held-out mean joint error {model.val_error:.4f}")
    return 0


def cmd_train_codec(args):
    from handvid.denoiser import CodecTrainConfig, save_codec, train_codec

    out = _out_dir(args)
    samples = list(_load_samples(args.data))
    cfg = CodecTrainConfig(seed=args.seed if args.seed is not None else 0)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    codec = train_codec(samples, cfg, log=print)
    path = out / "codec.pt"
    save_codec(codec, path)
    print(f"codec saved to {path}; held-out PSNR {codec.val_psnr:.2f} dB")
    return 0


def cmd_train_stage1(args):
    from handvid.denoiser import load_codec, save_predictor

    out = _out_dir(args)
    config = _config_from_args(args)
    samples = list(_load_samples(args.data))
    codec = load_codec(args.codec)
    prior = _load_prior_for(_load_samples(args.data), args.prior)
    model, history = train_stage1(
        samples, config, codec, prior=prior, log=print
    )
    save_predictor(model, out / "stage1.pt", extra={"config_hash": run_config_hash(config)})
    _write_history(history, out / "stage1_history.csv")
    save_run_config(config, out / "stage1_config.txt")
    print(f"stage-1 model saved to {out / 'stage1.pt'}")
    return 0


def cmd_train_stage2(args):
    from handvid.denoiser import load_codec, load_predictor, save_predictor
    from handvid.hand_pose import load_detector

    out = _out_dir(args)
    config = _config_from_args(args)
    samples = list(_load_samples(args.data))
    codec = load_codec(args.codec)
    detector = load_detector(args.detector) if args.detector else None
    stage1 = load_predictor(args.stage1, expect_stage="stage1") if args.stage1 else None
    prior = _load_prior_for(_load_samples(args.data), args.prior)
    model, history = train_stage2(
        samples,
        config,
        codec,
        detector=detector,
        stage1_model=stage1,
        prior=prior,
        log=print,
    )
    save_predictor(model, out / "stage2.pt", extra={"config_hash": run_config_hash(config)})
    _write_history(history, out / "stage2_history.csv")
    save_run_config(config, out / "stage2_config.txt")
    print(f"stage-2 model saved to {out / 'stage2.pt'}")
    return 0


def _load_infer_models(args):
    from handvid.denoiser import load_codec, load_predictor

    codec = load_codec(args.codec)
    stage1 = load_predictor(args.stage1, expect_stage="stage1")
    stage2 = load_predictor(args.stage2, expect_stage="stage2")
    return stage1, stage2, codec


def cmd_infer(args):
    from handvid.synth.manifest import save_frame_png, save_mask_png

    out = _out_dir(args)
    config = _config_from_args(args)
    stage1, stage2, codec = _load_infer_models(args)
    samples = _load_samples(args.data)
    prior = _load_prior_for(samples, args.prior)
    sample = samples[args.index]
    prompt = args.prompt or sample.prompt
    image = np.asarray(sample.video)[0]
    result = infer(
        stage1, stage2, codec, image, prompt, config, prior,
        seed=args.seed, log=print,
    )
    for i, frame in enumerate(result.video):
        save_frame_png(frame, out / f"gen_{i:03d}.png")
        save_mask_png(result.mask.frame(i), out / f"mask_{i:03d}.png")
    meta = {
        "prompt": prompt,
        "seed": result.seed,
        "config_hash": run_config_hash(config),
        "frames": int(result.video.shape[0]),
    }
    (out / "infer.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"generated {result.video.shape[0]} frames in {out}")
    return 0


def cmd_eval(args):
    from handvid.hand_pose import load_detector, parameter_fingerprint
    from handvid.metrics import (
        aggregate_report,
        evaluate_generation,
        save_report,
        serialize_report,
    )

    out = _out_dir(args)
    config = _config_from_args(args)
    stage1, stage2, codec = _load_infer_models(args)
    detector = load_detector(args.detector) if args.detector else None
    samples = _load_samples(args.data)
    prior = _load_prior_for(samples, args.prior)
    count = args.count if args.count else len(samples)
    evals = []
    for i in range(min(count, len(samples))):
        sample = samples[i]
        result = infer(
            stage1, stage2, codec, np.asarray(sample.video)[0], sample.prompt,
            config, prior, seed=config.seed * 7919 + i,
        )
        evals.append(evaluate_generation(result, sample, config, detector))
    ids = {
        "stage1": parameter_fingerprint(stage1).hex()[:12],
        "stage2": parameter_fingerprint(stage2).hex()[:12],
        "codec": parameter_fingerprint(codec).hex()[:12],
    }
    if detector is not None:
        ids["detector"] = parameter_fingerprint(detector).hex()[:12]
    report = aggregate_report(evals, run_config_hash(config), ids)
    report.generated_at = time.strftime("%Y-%m-%dT%H:%M:%S")
    save_report(report, out / "report.json")
    print(serialize_report(report))
    scope = args.scope or "full"
    if scope == "ma":
        print(f"mse[{scope}] {report.mse_ma:.6f} psnr[{scope}] {report.psnr_ma:.2f}")
    else:
        print(f"mse[{scope}] {report.mse_full:.6f} psnr[{scope}] {report.psnr_full:.2f}")
    return 0


def cmd_ablate(args):
    from handvid.denoiser import load_codec, load_predictor
    from handvid.hand_pose import load_detector, parameter_fingerprint
    from handvid.metrics import aggregate_report, evaluate_generation, save_report

    out = _out_dir(args)
    config = _config_from_args(args)
    samples = list(_load_samples(args.data))
    codec = load_codec(args.codec)
    detector = load_detector(args.detector) if args.detector else None
    prior = _load_prior_for(_load_samples(args.data), args.prior)
    if args.stage1:
        stage1 = load_predictor(args.stage1)
    else:
        print("training a stage-1 model for mask-source cells")
        stage1, _ = train_stage1(samples, config, codec, prior=prior)

    grid = {}
    for source in MASK_SOURCES:
        for hrl_on in (True, False):
            cell = RunConfig(**{f: getattr(config, f) for f in config.__dataclass_fields__})
            cell.mask_source = source
            cell.hrl = hrl_on
            cell.validate()
            name = f"{source}/hrl-{'on' if hrl_on else 'off'}"
            print(f"=== cell {name} ===")
            model, _ = train_stage2(
                samples, cell, codec,
                detector=detector if hrl_on else None,
                stage1_model=stage1, prior=prior,
            )
            evals = []
            for i in range(min(args.count or 4, len(samples))):
                s = samples[i]
                result = infer(
                    stage1, model, codec, np.asarray(s.video)[0], s.prompt,
                    cell, prior, seed=cell.seed * 7919 + i,
                )
                evals.append(evaluate_generation(result, s, cell, detector))
            ids = {"stage2": parameter_fingerprint(model).hex()[:12]}
            report = aggregate_report(evals, run_config_hash(cell), ids)
            report.generated_at = time.strftime("%Y-%m-%dT%H:%M:%S")
            grid[name] = report
            save_report(
                report, out / f"report_{source}_hrl_{'on' if hrl_on else 'off'}.json"
            )

    lines = ["cell, hs_err, mask_iou, mse_full, mse_ma"]
    for name, rep in grid.items():
        hs = f"{rep.hs_err:.5f}" if rep.hs_err == rep.hs_err else "nan"
        lines.append(
            f"{name}, {hs}, {rep.mask_iou:.4f}, {rep.mse_full:.6f}, {rep.mse_ma:.6f}"
        )
    summary = "\n".join(lines)
    (out / "ablation.csv").write_text(summary + "\n")
    print(summary)
    return 0


def cmd_viz(args):
    from handvid.metrics import motion_flow_viz
    from handvid.synth.manifest import save_frame_png

    out = _out_dir(args)
    samples = _load_samples(args.data)
    sample = samples[args.index]
    viz = motion_flow_viz(np.asarray(sample.video))
    for i, frame in enumerate(viz.frames):
        save_frame_png(frame, out / f"flow_{i:03d}.png")
    save_frame_png(viz.aggregate, out / "flow_aggregate.png")
    print(f"wrote {viz.frames.shape[0]} flow frames and aggregate to {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handvid",
        description="Two-stage hand-centric video generation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="run configuration file (key = value lines)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", required=True)
        if data:
            p.add_argument("--data", required=True, help="dataset manifest directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p, data=False)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-detector", help="train the frozen keypoint detector")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_detector)

    p = sub.add_parser("train-codec", help="train the frozen latent codec")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-stage1", help="train the mask-video denoiser")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--prior", help="prior mask PNG (defaults to the manifest's)")
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("train-stage2", help="train the video denoiser")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--detector", help="frozen detector checkpoint")
    p.add_argument("--stage1", help="stage-1 checkpoint for mask conditioning")
    p.add_argument("--prior", help="prior mask PNG")
    p.add_argument("--mask-source", choices=MASK_SOURCES, default=None)
    p.add_argument("--hrl", choices=("on", "off"), default=None)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("infer", help="generate a clip from a context frame")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--prior", help="prior mask PNG")
    p.add_argument("--index", type=int, default=0, help="sample whose first frame seeds generation")
    p.add_argument("--prompt", default=None)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate generations against ground truth")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--stage1", required=True)
    p.add_argument("--stage2", required=True)
    p.add_argument("--detector", help="frozen detector for keypoint metrics")
    p.add_argument("--prior", help="prior mask PNG")
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--scope", choices=("full", "ma"), default="full")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the mask-source x keypoint-loss grid")
    common(p)
    p.add_argument("--codec", required=True)
    p.add_argument("--detector", help="frozen detector (needed for hrl-on cells)")
    p.add_argument("--stage1", help="pre-trained stage-1 checkpoint")
    p.add_argument("--prior", help="prior mask PNG")
    p.add_argument("--count", type=int, default=None, help="eval samples per cell")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("viz", help="render motion-flow visualizations")
    common(p)
    p.add_argument("--index", type=int, default=0)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.manual_seed(args.seed if args.seed is not None else 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
