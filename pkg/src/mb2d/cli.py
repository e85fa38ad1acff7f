"""Command-line entry point: one tool, subcommands for every pipeline step.

    gen-scenes        render seeded random scenes to PNG frame sequences
    synth-data        synthesize an exposure-ladder dataset from scenes
    train             run one training stage on a dataset
    infer             restore one sample with trained checkpoints
    eval              metric report for trained checkpoints over a dataset
    analyze-spectrum  radial power curves across the exposure ladder
    diff-map          absolute-difference heat map of two images
    experiments run   preset multi-arm comparison suites

Every run writes the fully resolved config under --out.  Exit codes:
0 success, 2 config error, 3 data error, 4 training divergence.
"""

import argparse
import json
import os
import sys

import numpy as np

from mb2d import imageio as mio
from mb2d import metrics as M
from mb2d import models
from mb2d.blursynth import load_dataset, save_dataset
from mb2d.config import load_config, save_resolved, with_train
from mb2d.errors import ConfigError, DataError, TrainingDivergence
from mb2d.experiments import ExperimentPlan, desk_plan, run_experiment
from mb2d.scenegen import load_sequence, render_sequence, save_sequence
from mb2d.training import train_stage


def _outdir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _persist(cfg, out: str, command: str, **extra):
    save_resolved(cfg, os.path.join(out, "resolved_config.yaml"),
                  extra={"command": command, **extra})


def _require(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")
    return path


def cmd_gen_scenes(args) -> int:
    cfg = load_config(args.config, args.set)
    out = _outdir(args.out)
    specs = cfg.scene.make_scenes()
    for i, spec in enumerate(specs):
        save_sequence(render_sequence(spec), os.path.join(out, f"scene_{i:03d}"))
    _persist(cfg, out, "gen-scenes")
    print(f"wrote {len(specs)} scenes ({cfg.scene.width}x{cfg.scene.height}, "
          f"{cfg.scene.num_frames} frames) under {out}")
    return 0


def _load_scene_dirs(root: str) -> dict:
    dirs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    seqs = {d: load_sequence(os.path.join(root, d)) for d in dirs}
    if not seqs:
        raise DataError(f"no scene directories under {root}")
    return seqs


def cmd_synth_data(args) -> int:
    cfg = load_config(args.config, args.set)
    out = _outdir(args.out)
    if args.scenes:
        seqs = _load_scene_dirs(_require(args.scenes, "scene directory"))
    else:
        seqs = {f"scene_{i:03d}": render_sequence(s) for i, s in enumerate(cfg.scene.make_scenes())}
    manifest = save_dataset(out, seqs, cfg.blur)
    _persist(cfg, out, "synth-data", scenes=args.scenes or "(generated)")
    n_samples = len(manifest["samples"])
    print(f"dataset: {len(seqs)} sequences, {n_samples} samples, "
          f"exposures {[cfg.blur.n, *cfg.blur.exposures]} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.stage:
        cfg = with_train(cfg, stage=args.stage)
    data = _require(args.data, "dataset")
    _require(os.path.join(data, "manifest.json"), "dataset manifest")
    out = _outdir(args.out)
    run = train_stage(cfg.train, data, out_dir=out, mbrnn=args.mbrnn)
    _persist(cfg, out, "train", data=os.path.abspath(data), mbrnn=args.mbrnn)
    last = run.val_records[-1]
    print(f"stage {cfg.train.stage}: {cfg.train.total_steps} steps, "
          f"final loss {last['loss']:.5f}, val PSNR {last['psnr']:.2f} dB, "
          f"val SSIM {last['ssim']:.4f} -> {out}")
    return 0


def _load_pipeline(args):
    mbrnn = models.load_checkpoint(_require(args.mbrnn, "mbrnn checkpoint"))
    msdr = models.load_checkpoint(_require(args.msdr, "msdr checkpoint"))
    if mbrnn.role != "mbrnn" or msdr.role != "msdr":
        raise ConfigError(
            f"checkpoint roles are {mbrnn.role!r}/{msdr.role!r}, expected 'mbrnn'/'msdr'")
    return mbrnn, msdr


def _aligned(img: np.ndarray, div: int = 16) -> np.ndarray:
    """Center-crop HWC to dimensions the coarse-to-fine stack can halve."""
    h, w = img.shape[:2]
    ch, cw = h // div * div, w // div * div
    if ch < div or cw < div:
        raise DataError(f"image {h}x{w} smaller than the pyramid needs ({div}x{div})")
    y0, x0 = (h - ch) // 2, (w - cw) // 2
    return img[y0 : y0 + ch, x0 : x0 + cw]


def cmd_infer(args) -> int:
    mbrnn, msdr = _load_pipeline(args)
    samples, spec = load_dataset(_require(args.data, "dataset"))
    if not 0 <= args.index < len(samples):
        raise DataError(f"sample index {args.index} outside dataset of {len(samples)}")
    s = samples[args.index]
    inputs = np.stack([_aligned(f) for f in s.inputs])
    sharp = _aligned(s.sharp_gt)
    stack = models.hwc_to_nchw(*inputs)
    if mbrnn.num_input_frames == 1:
        stack = stack[:, 3:6]
    res = models.pipeline_infer(mbrnn, msdr, stack)
    out = _outdir(args.out)
    restored = models.nchw_to_hwc(res["restored"])
    mio.write_image16(os.path.join(out, "restored.png"), restored)
    mio.write_image16(os.path.join(out, "input_center.png"), inputs[len(inputs) // 2])
    mio.write_image16(os.path.join(out, "sharp_gt.png"), sharp)
    for k, b in enumerate(res["pred_blurs"]):
        m = spec.n + spec.offsets[k]
        mio.write_image16(os.path.join(out, f"pred_B{m}.png"), models.nchw_to_hwc(b))
    report = {
        "index": args.index,
        "id": f"{s.provenance}/t{s.t}",
        "psnr_db": M.psnr(restored, sharp),
        "ssim": M.ssim(restored, sharp),
        "input_psnr_db": M.psnr(inputs[len(inputs) // 2], sharp),
    }
    with open(os.path.join(out, "infer.json"), "w") as f:
        json.dump(report, f, indent=2)
    print(f"sample {report['id']}: restored {report['psnr_db']:.2f} dB "
          f"(input {report['input_psnr_db']:.2f} dB), ssim {report['ssim']:.4f} -> {out}")
    return 0


def cmd_eval(args) -> int:
    mbrnn, msdr = _load_pipeline(args)
    samples, _spec = load_dataset(_require(args.data, "dataset"))
    preds, refs, ids = [], [], []
    for s in samples:
        inputs = np.stack([_aligned(f) for f in s.inputs])
        stack = models.hwc_to_nchw(*inputs)
        if mbrnn.num_input_frames == 1:
            stack = stack[:, 3:6]
        res = models.pipeline_infer(mbrnn, msdr, stack)
        preds.append(models.nchw_to_hwc(res["restored"]))
        refs.append(_aligned(s.sharp_gt))
        ids.append(f"{s.provenance}/t{s.t}")
    report = M.evaluate_pairs(
        preds, refs, ids=ids,
        param_millions=M.count_params(mbrnn) + M.count_params(msdr),
        inference_seconds=M.time_inference(msdr, samples[0], mbrnn_state=mbrnn),
        config_fingerprint=M.fingerprint({"mbrnn": mbrnn.net.spec.to_dict(),
                                          "msdr": msdr.net.spec.to_dict()}),
    )
    out = _outdir(args.out)
    report.save(out)
    print(f"{len(samples)} samples: mean PSNR {report.psnr_mean:.2f} dB, "
          f"mean SSIM {report.ssim_mean:.4f}, params {report.param_millions:.3f}M, "
          f"inference {report.inference_seconds * 1e3:.0f} ms -> {out}")
    return 0


def cmd_analyze_spectrum(args) -> int:
    cfg = load_config(args.config, args.set)
    plan = ExperimentPlan("spectral", cfg.scene.make_scenes(), cfg.blur,
                          cfg.train, arms=[], seeds=[cfg.train.seed])
    out = _outdir(args.out)
    result = run_experiment(plan, out)
    _persist(cfg, out, "analyze-spectrum")
    print(f"{result['samples']} samples: high-band energy non-increasing along the "
          f"ladder for {result['monotone_fraction']:.1%} -> {out}")
    return 0


def cmd_diff_map(args) -> int:
    a = mio.read_image16(_require(args.a, "image"))
    b = mio.read_image16(_require(args.b, "image"))
    if a.shape != b.shape:
        raise DataError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = M.diff_map(a, b)
    parent = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(parent, exist_ok=True)
    mio.write_image16(args.out, np.repeat(d[:, :, None], 3, axis=2))
    print(f"diff map -> {args.out} (mean abs diff {np.abs(a - b).mean():.5f})")
    return 0


def cmd_experiments_run(args) -> int:
    cfg = load_config(args.config, args.set)
    exp_id = args.id or cfg.experiment.id
    plan = desk_plan(exp_id, seeds=tuple(cfg.experiment.seeds))
    out = _outdir(args.out)
    cache = args.cache or os.path.join(out, "mbrnn_cache")
    run_experiment(plan, out, cache_dir=cache)
    _persist(cfg, out, f"experiments run {exp_id}")
    summary = os.path.join(out, "summary.txt")
    if os.path.exists(summary):
        with open(summary) as f:
            print(f.read(), end="")
    print(f"experiment {exp_id} -> {out}")
    return 0


def _add_common(p, config=True, out=True):
    if config:
        p.add_argument("--config", default=None, help="YAML config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
    if out:
        p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mb2d",
        description="Synthetic multi-blur video deblurring: data synthesis, "
                    "training, evaluation, and comparison suites.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="render seeded random scenes")
    _add_common(p)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("synth-data", help="synthesize an exposure-ladder dataset")
    _add_common(p)
    p.add_argument("--scenes", default=None, help="reuse scenes from gen-scenes output")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="run one training stage")
    _add_common(p)
    p.add_argument("--stage", choices=["mbrnn", "msdr", "deblur"], default=None,
                   help="override train.stage from the config")
    p.add_argument("--data", required=True, help="dataset directory (synth-data output)")
    p.add_argument("--mbrnn", default=None, help="trained blur-predictor checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="restore one sample")
    p.add_argument("--mbrnn", required=True)
    p.add_argument("--msdr", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metric report over a dataset")
    p.add_argument("--mbrnn", required=True)
    p.add_argument("--msdr", required=True)
    p.add_argument("--data", required=True)
    _add_common(p, config=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-spectrum", help="radial power along the exposure ladder")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_spectrum)

    p = sub.add_parser("diff-map", help="difference heat map of two images")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_diff_map)

    p = sub.add_parser("experiments", help="preset comparison suites")
    esub = p.add_subparsers(dest="exp_command", required=True)
    pr = esub.add_parser("run", help="run one suite")
    pr.add_argument("id", nargs="?", default=None,
                    help="suite id (default: experiment.id from config)")
    pr.add_argument("--cache", default=None, help="blur-predictor cache directory")
    _add_common(pr)
    pr.set_defaults(func=cmd_experiments_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except TrainingDivergence as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 4
    except (DataError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (ValueError, IndexError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
