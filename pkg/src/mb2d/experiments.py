"""Scripted desk-scale studies.

Each experiment trains one small restorer per arm per seed on the same
synthetic dataset and reports per-seed and mean scores.  Claims are
directional (orderings between arms), not absolute:

- ideal_multiblur: restore from the base exposure alone vs with ideal
  longer exposures appended (input sets Set1..Set5).
- ablation_nif_crfm: arms (a) single frame, (b) three frames, (d) plus
  predicted long exposures, (e) plus the recurrent feature maps.
- mbrnn_frames: the blur predictor fed one frame vs three, scored per
  predicted exposure level.
- spectral: radial power spectra of the exposure ladder, synthesized and
  (when a predictor is available) predicted.

Arms within one experiment differ only in their declared config delta (plus
the seed); a trained three-frame blur predictor is cached by config
fingerprint and reused across arms, seeds, and experiments.
"""

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from mb2d import metrics as M
from mb2d import models
from mb2d.blursynth import BlurSpec, make_samples
from mb2d.errors import ConfigError
from mb2d.scenegen import SceneSpec, make_random_scene, render_sequence
from mb2d.training import TrainConfig, train_stage, split_indices, prepare_arrays, _frame_slice

EXPERIMENTS = ("ideal_multiblur", "ablation_nif_crfm", "mbrnn_frames", "spectral")


@dataclass
class ExperimentPlan:
    experiment: str
    scenes: list
    blur: BlurSpec
    train: TrainConfig
    arms: list  # [{"name": str, "delta": {field: value}}]
    seeds: list
    mbrnn_train: TrainConfig = None  # blur-predictor template where needed

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        self.scenes = [s if isinstance(s, SceneSpec) else SceneSpec(**s) for s in self.scenes]
        if not isinstance(self.blur, BlurSpec):
            self.blur = BlurSpec(**self.blur)
        if not isinstance(self.train, TrainConfig):
            self.train = TrainConfig(**self.train)
        if self.mbrnn_train is not None and not isinstance(self.mbrnn_train, TrainConfig):
            self.mbrnn_train = TrainConfig(**self.mbrnn_train)
        if self.experiment != "spectral" and len(self.seeds) < 3:
            raise ConfigError(f"comparison experiments need >= 3 seeds, got {self.seeds}")

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "scenes": [s.to_dict() for s in self.scenes],
            "blur": self.blur.to_dict(),
            "train": self.train.to_dict(),
            "arms": self.arms,
            "seeds": list(self.seeds),
            "mbrnn_train": self.mbrnn_train.to_dict() if self.mbrnn_train else None,
        }


def config_delta(a: TrainConfig, b: TrainConfig) -> set:
    """Field names on which two configs disagree."""
    da, db = a.to_dict(), b.to_dict()
    return {k for k in da if da[k] != db[k]}


def arm_config(template: TrainConfig, delta: dict, seed: int) -> TrainConfig:
    fields = set(template.to_dict())
    unknown = set(delta) - fields
    if unknown:
        raise ConfigError(f"unknown config fields in arm delta: {sorted(unknown)}")
    return replace(template, seed=seed, **delta)


def make_dataset(scenes, blur: BlurSpec):
    samples = []
    for i, spec in enumerate(scenes):
        seq = render_sequence(spec)
        samples.extend(make_samples(seq, blur, provenance=f"scene{i}"))
    return samples


def desk_scenes(n_scenes: int = 8, size: int = 96, num_frames: int = 24, seed0: int = 100):
    """Planted moving-shape scenes: trajectories stay fully on canvas."""
    return [
        make_random_scene(seed0 + s, width=size, height=size, num_frames=num_frames)
        for s in range(n_scenes)
    ]


def fast_scenes(n_scenes: int = 16, size: int = 96, num_frames: int = 34, seed0: int = 300):
    """Free-flying fast scenes for the ideal-exposure study.

    Speeds of 2-4 px/frame under a 5-frame base exposure leave blur the
    restorer cannot undo from one frame alone, which is what gives the
    exposure-ladder arms measurable headroom.  Objects may drift off canvas;
    every start is on canvas so each object is visible somewhere.
    """
    return [
        make_random_scene(
            seed0 + s, width=size, height=size, num_frames=num_frames, n_objects=6,
            speed_range=(2.0, 4.0), size_range=(14, 26), keep_on_canvas=False,
        )
        for s in range(n_scenes)
    ]


def dense_scenes(n_scenes: int = 16, size: int = 96, num_frames: int = 34, seed0: int = 400):
    """Denser fast scenes for the predictor and input-set studies.

    Ten objects instead of six, and larger: static background then covers
    well under half of a crop, so the moving regions where the arms actually
    differ are not drowned out by pixels every arm restores for free.
    """
    return [
        make_random_scene(
            seed0 + s, width=size, height=size, num_frames=num_frames, n_objects=10,
            speed_range=(2.0, 4.0), size_range=(18, 30), keep_on_canvas=False,
        )
        for s in range(n_scenes)
    ]


_TRAIN_DESK = dict(
    learning_rate=1e-3, batch_size=4, crop_size=32, total_steps=6000,
    val_fraction=0.15, val_every=0, base_channels=8, levels=3, feature_channels=8,
)


def desk_plan(experiment: str, seeds=(0, 1, 2)) -> ExperimentPlan:
    """Preset plans sized for minutes-per-arm on one CPU core.

    The restorer studies run on identity response: frame averaging is then
    linear in the latent image, so the information the exposure ladder adds
    is not confounded by tone-curve compression.  The spectral study keeps
    the default response and the planted slow scenes.
    """
    if experiment == "ideal_multiblur":
        return ExperimentPlan(
            experiment,
            fast_scenes(),
            BlurSpec(n=5, offsets=(2, 4, 6, 8), crf="identity"),
            TrainConfig(stage="deblur", num_input_frames=1, use_crfm=False, **_TRAIN_DESK),
            arms=[{"name": f"Set{j + 1}", "delta": {"ideal_blur_count": j}} for j in range(5)],
            seeds=list(seeds),
        )
    if experiment == "ablation_nif_crfm":
        return ExperimentPlan(
            experiment,
            dense_scenes(),
            BlurSpec(n=5, offsets=(4, 8, 12), crf="identity"),
            TrainConfig(stage="deblur", num_input_frames=3, use_crfm=False, **_TRAIN_DESK),
            arms=[
                {"name": "a_1frame", "delta": {"num_input_frames": 1}},
                {"name": "b_3frame", "delta": {}},
                {"name": "d_predblur", "delta": {"use_pred_blurs": True}},
                {"name": "e_predblur_crfm", "delta": {"use_pred_blurs": True, "use_crfm": True}},
            ],
            seeds=list(seeds),
            mbrnn_train=TrainConfig(stage="mbrnn", num_input_frames=3, **_TRAIN_DESK),
        )
    if experiment == "mbrnn_frames":
        return ExperimentPlan(
            experiment,
            fast_scenes(),
            BlurSpec(n=5, crf="identity"),
            TrainConfig(stage="mbrnn", num_input_frames=3, **_TRAIN_DESK),
            arms=[
                {"name": "1frame", "delta": {"num_input_frames": 1}},
                {"name": "3frame", "delta": {}},
            ],
            seeds=list(seeds),
        )
    if experiment == "spectral":
        return ExperimentPlan(
            experiment,
            desk_scenes(),
            BlurSpec(n=3),
            TrainConfig(stage="mbrnn", num_input_frames=3, **_TRAIN_DESK),
            arms=[],
            seeds=list(seeds)[:1],
            mbrnn_train=TrainConfig(stage="mbrnn", num_input_frames=3, **_TRAIN_DESK),
        )
    raise ConfigError(f"unknown experiment {experiment!r}")


def _dataset_fingerprint(plan: ExperimentPlan) -> str:
    return M.fingerprint({"scenes": [s.to_dict() for s in plan.scenes], "blur": plan.blur.to_dict()})


def train_mbrnn_cached(cfg: TrainConfig, samples, data_fp: str, cache_dir: str = None):
    """Train (or reload) a blur predictor keyed by dataset + config."""
    if cfg.stage != "mbrnn":
        raise ConfigError(f"blur predictor template must have stage 'mbrnn', got {cfg.stage!r}")
    key = M.fingerprint({"data": data_fp, "cfg": cfg.to_dict()})
    ckpt = os.path.join(cache_dir, f"mbrnn_{key}") if cache_dir else None
    if ckpt and os.path.isdir(ckpt):
        return models.load_checkpoint(ckpt)
    run = train_stage(cfg, samples)
    state = run.states["mbrnn"]
    if ckpt:
        models.save_checkpoint(state, ckpt)
    return state


def _train_arm(cfg: TrainConfig, samples, out_dir: str, mbrnn_state):
    run = train_stage(cfg, samples, out_dir=out_dir, mbrnn=mbrnn_state)
    rec = run.val_records[-1]
    arm_params = M.count_params(run.states[cfg.stage])
    if cfg.stage == "deblur" and (cfg.use_pred_blurs or cfg.use_crfm):
        arm_params += M.count_params(mbrnn_state)
    return run, {"psnr": rec["psnr"], "ssim": rec["ssim"], "params_m": arm_params}


def _assert_arm_isolation(plan: ExperimentPlan, seed: int):
    cfgs = [arm_config(plan.train, arm["delta"], seed) for arm in plan.arms]
    for arm, cfg in zip(plan.arms, cfgs):
        for other, ocfg in zip(plan.arms, cfgs):
            allowed = set(arm["delta"]) | set(other["delta"])
            extra = config_delta(cfg, ocfg) - allowed
            if extra:
                raise ConfigError(
                    f"arms {arm['name']} and {other['name']} differ outside their deltas: {sorted(extra)}"
                )


def _arm_report(plan, arm, per_seed: dict, extra=None) -> M.MetricsReport:
    rows = [
        {"id": f"seed{s}", "psnr": r["psnr"], "ssim": r["ssim"]}
        for s, r in sorted(per_seed.items())
    ]
    params = next(iter(per_seed.values())).get("params_m")
    return M.MetricsReport(
        per_sample=rows,
        param_millions=params,
        config_fingerprint=M.fingerprint(plan.to_dict()),
        extra={"experiment": plan.experiment, "arm": arm["name"], "delta": arm["delta"], **(extra or {})},
    )


def _write_summary(out_dir: str, plan: ExperimentPlan, reports: dict, level_names=None):
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for name, rep in reports.items():
        row = {"arm": name, "psnr_mean": rep.psnr_mean, "ssim_mean": rep.ssim_mean,
               "params_m": rep.param_millions}
        for rec in rep.per_sample:
            row[f"psnr_{rec['id']}"] = rec["psnr"]
        if level_names and "level_means" in rep.extra:
            for lname, v in zip(level_names, rep.extra["level_means"]):
                row[f"psnr_{lname}"] = v
        rows.append(row)
    cols = []
    for row in rows:
        cols += [c for c in row if c not in cols]
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    widths = {c: max(len(c), 12) for c in cols}
    lines = ["  ".join(c.ljust(widths[c]) for c in cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row.get(c, "")
            cells.append((f"{v:.4f}" if isinstance(v, float) else str(v)).ljust(widths[c]))
        lines.append("  ".join(cells))
    with open(os.path.join(out_dir, "summary.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")
    with open(os.path.join(out_dir, "plan.json"), "w") as f:
        json.dump(plan.to_dict(), f, indent=2)


def _run_arms(plan: ExperimentPlan, out_dir: str, samples, need_mbrnn: bool, cache_dir: str):
    data_fp = _dataset_fingerprint(plan)
    reports = {}
    for arm in plan.arms:
        per_seed = {}
        for seed in plan.seeds:
            _assert_arm_isolation(plan, seed)
            cfg = arm_config(plan.train, arm["delta"], seed)
            mb = None
            if need_mbrnn and (cfg.use_pred_blurs or cfg.use_crfm or cfg.stage == "msdr"):
                mb = train_mbrnn_cached(replace(plan.mbrnn_train, seed=seed), samples, data_fp, cache_dir)
            arm_dir = os.path.join(out_dir, "arms", arm["name"], f"seed{seed}")
            _, scores = _train_arm(cfg, samples, arm_dir, mb)
            per_seed[seed] = scores
        rep = _arm_report(plan, arm, per_seed)
        rep.save(os.path.join(out_dir, "arms", arm["name"]))
        reports[arm["name"]] = rep
    _write_summary(out_dir, plan, reports)
    return reports


def run_ideal_multiblur(plan: ExperimentPlan, out_dir: str, cache_dir: str = None):
    for arm in plan.arms:
        want = arm["delta"].get("ideal_blur_count", plan.train.ideal_blur_count)
        if want > len(plan.blur.offsets):
            raise ConfigError(
                f"arm {arm['name']} wants {want} ideal long exposures; blur spec provides "
                f"{len(plan.blur.offsets)}"
            )
    samples = make_dataset(plan.scenes, plan.blur)
    return _run_arms(plan, out_dir, samples, need_mbrnn=False, cache_dir=cache_dir)


def run_ablation_nif_crfm(plan: ExperimentPlan, out_dir: str, cache_dir: str = None):
    if plan.mbrnn_train is None:
        raise ConfigError("ablation_nif_crfm needs a blur-predictor training template")
    samples = make_dataset(plan.scenes, plan.blur)
    return _run_arms(plan, out_dir, samples, need_mbrnn=True, cache_dir=cache_dir)


def eval_mbrnn_per_level(state, samples, cfg: TrainConfig):
    """Validation-split scores per predicted exposure: (psnr list, ssim list)."""
    arrays = prepare_arrays(samples)
    val_idx, _ = split_indices(cfg, len(samples))
    div = cfg.spatial_divisor
    h = arrays["frames"].shape[2] // div * div
    w = arrays["frames"].shape[3] // div * div
    frames = arrays["frames"][val_idx, :, :h, :w]
    targets = arrays["targets"][val_idx, :, :, :h, :w]
    preds, _ = models.mbrnn_predict(state, _frame_slice(frames, state.num_input_frames))
    psnrs, ssims = [], []
    for k, p in enumerate(preds):
        pairs = [
            (models.nchw_to_hwc(p[i : i + 1]), models.nchw_to_hwc(targets[i : i + 1, k]))
            for i in range(p.shape[0])
        ]
        psnrs.append(float(np.mean([M.psnr(a, b) for a, b in pairs])))
        ssims.append(float(np.mean([M.ssim(a, b) for a, b in pairs])))
    return psnrs, ssims


def run_mbrnn_frames(plan: ExperimentPlan, out_dir: str, cache_dir: str = None):
    samples = make_dataset(plan.scenes, plan.blur)
    data_fp = _dataset_fingerprint(plan)
    reports = {}
    for arm in plan.arms:
        per_seed, levels = {}, {}
        for seed in plan.seeds:
            _assert_arm_isolation(plan, seed)
            cfg = arm_config(plan.train, arm["delta"], seed)
            state = train_mbrnn_cached(cfg, samples, data_fp, cache_dir)
            lv, sv = eval_mbrnn_per_level(state, samples, cfg)
            levels[seed] = lv
            per_seed[seed] = {"psnr": float(np.mean(lv)), "ssim": float(np.mean(sv)),
                              "params_m": M.count_params(state)}
        n_levels = len(next(iter(levels.values())))
        level_means = [float(np.mean([levels[s][k] for s in plan.seeds])) for k in range(n_levels)]
        rep = _arm_report(
            plan, arm, per_seed,
            extra={"per_level": {f"seed{s}": levels[s] for s in plan.seeds}, "level_means": level_means},
        )
        rep.save(os.path.join(out_dir, "arms", arm["name"]))
        reports[arm["name"]] = rep
    _write_summary(out_dir, plan, reports,
                   level_names=[f"k{k + 1}" for k in range(models.N_BLUR_LEVELS)])
    return reports


def run_spectral(plan: ExperimentPlan, out_dir: str, cache_dir: str = None):
    """Exposure-ladder spectra: per-exposure mean curves plus a monotonicity count."""
    os.makedirs(out_dir, exist_ok=True)
    samples = make_dataset(plan.scenes, plan.blur)
    hb = {m: [] for m in (plan.blur.n,) + plan.blur.exposures}
    curves = {m: [] for m in hb}
    for s in samples:
        for m, img in zip(hb, [s.center_input, *s.more_blur_targets]):
            c = M.spectral_density(img)
            hb[m].append(M.high_band_energy(c))
            curves[m].append(c.log_power)
    mono = sum(
        1 for i in range(len(samples))
        if all(hb[m2][i] <= hb[m1][i] for m1, m2 in zip(list(hb), list(hb)[1:]))
    )
    result = {
        "samples": len(samples),
        "monotone_fraction": mono / len(samples),
        "high_band_mean": {str(m): float(np.mean(v)) for m, v in hb.items()},
    }
    for m, cs in curves.items():
        curve = M.SpectralCurve(
            radii=np.arange(len(cs[0])), power=np.zeros(len(cs[0])),
            log_power=np.mean(cs, axis=0),
        )
        curve.to_csv(os.path.join(out_dir, f"spectrum_B{m}.csv"))
    if plan.mbrnn_train is not None:
        state = train_mbrnn_cached(
            replace(plan.mbrnn_train, seed=plan.seeds[0]), samples, _dataset_fingerprint(plan), cache_dir
        )
        arrays = prepare_arrays(samples)
        div = plan.mbrnn_train.spatial_divisor
        h = arrays["frames"].shape[2] // div * div
        w = arrays["frames"].shape[3] // div * div
        preds, _ = models.mbrnn_predict(
            state, _frame_slice(arrays["frames"][:, :, :h, :w], state.num_input_frames)
        )
        pred_mono = 0
        for i in range(len(samples)):
            e = [M.high_band_energy(M.spectral_density(models.nchw_to_hwc(p[i : i + 1]))) for p in preds]
            if all(b <= a for a, b in zip(e, e[1:])):
                pred_mono += 1
        result["predicted_monotone_fraction"] = pred_mono / len(samples)
    with open(os.path.join(out_dir, "spectral.json"), "w") as f:
        json.dump(result, f, indent=2)
    with open(os.path.join(out_dir, "plan.json"), "w") as f:
        json.dump(plan.to_dict(), f, indent=2)
    return result


_RUNNERS = {
    "ideal_multiblur": run_ideal_multiblur,
    "ablation_nif_crfm": run_ablation_nif_crfm,
    "mbrnn_frames": run_mbrnn_frames,
    "spectral": run_spectral,
}


def run_experiment(plan: ExperimentPlan, out_dir: str, cache_dir: str = None):
    return _RUNNERS[plan.experiment](plan, out_dir, cache_dir=cache_dir)
