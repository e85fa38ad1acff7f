"""Two-stage training loop.

Stage "mbrnn" fits the progressive-blurring recurrence with an L1 loss
summed over the three predicted exposures.  Stage "msdr" fits the
multi-scale restorer against bilinearly downsampled ground truth (equal
scale weights), with the blur predictor frozen unless joint fine-tuning is
requested.  Stage "deblur" fits a one-stage restorer whose input stack is
configurable (frame count, appended ideal or predicted long exposures,
feature maps); the ablation arms are all instances of it.

Everything downstream of the seed is deterministic: data order, crops, and
augmentations come from one generator, so reruns reproduce loss histories
bit for bit.
"""

import csv
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from mb2d import metrics as M
from mb2d import models
from mb2d.blursynth import load_dataset
from mb2d.errors import ConfigError, DataError, TrainingDivergence
from mb2d.nn import autograd as ag
from mb2d.nn.optim import Adam

STAGES = ("mbrnn", "msdr", "deblur")


@dataclass
class TrainConfig:
    stage: str = "mbrnn"
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    total_steps: int = 20000
    crop_size: int = 64
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    seed: int = 0
    val_fraction: float = 0.2
    val_every: int = 50
    checkpoint_every: int = 0  # 0: final checkpoint only
    base_channels: int = 8
    levels: int = 3
    feature_channels: int = 8
    num_input_frames: int = 3
    use_crfm: bool = True
    mbrnn_frozen_during_msdr: bool = True
    ideal_blur_count: int = 0  # stage deblur: ideal long exposures appended
    use_pred_blurs: bool = False  # stage deblur: append predicted exposures

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.num_input_frames not in (1, 3):
            raise ConfigError(f"num_input_frames must be 1 or 3, got {self.num_input_frames}")
        if self.batch_size < 1 or self.total_steps < 1:
            raise ConfigError("batch_size and total_steps must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        div = self.spatial_divisor
        if self.crop_size % div or self.crop_size < div:
            raise ConfigError(
                f"crop_size {self.crop_size} must be a positive multiple of {div} "
                f"(levels={self.levels}, stage={self.stage})"
            )

    @property
    def spatial_divisor(self) -> int:
        div = 2 ** (self.levels - 1)
        if self.stage == "msdr":
            div *= 2 ** (models.N_BLUR_LEVELS - 1)
        return div

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainRun:
    config: TrainConfig
    states: dict  # role -> ModelState
    loss_history: list
    val_records: list  # dicts: step, loss, psnr, ssim, wall_clock
    wall_clock: list  # seconds per step
    out_dir: str = None


def mbrnn_loss(outputs, targets):
    """Sum over exposure levels of per-pixel mean L1; scalar tensor."""
    targets = [np.asarray(t) for t in targets] if not isinstance(targets, np.ndarray) else list(targets)
    if len(outputs) != len(targets):
        raise ValueError(f"{len(outputs)} outputs vs {len(targets)} targets")
    terms = []
    for out, tgt in zip(outputs, targets):
        out = out if isinstance(out, ag.Tensor) else ag.const(np.asarray(out))
        if out.shape != np.shape(tgt):
            raise ValueError(f"output shape {out.shape} vs target shape {np.shape(tgt)}")
        terms.append(ag.l1_to(out, np.asarray(tgt)))
    return ag.add_scalars(terms)


def msdr_loss(outputs, sharp_gt):
    """Sum over scales of per-pixel mean L1 against the downsampled truth.

    ``outputs`` run coarse to fine, the restorer's natural order.
    """
    sharp_gt = np.asarray(sharp_gt)
    gt_pyr = [t.data for t in models.build_pyramid(ag.const(sharp_gt), len(outputs))]
    terms = []
    for out, gt in zip(outputs, reversed(gt_pyr)):
        out = out if isinstance(out, ag.Tensor) else ag.const(np.asarray(out))
        if out.shape != gt.shape:
            raise ValueError(f"scale output shape {out.shape} vs downsampled truth {gt.shape}")
        terms.append(ag.l1_to(out, gt))
    return ag.add_scalars(terms)


def augment_nchw(arrays, hflip: bool, vflip: bool, k_rot: int):
    """Apply one flip/rotation coherently to every (.., H, W) array."""
    out = []
    for a in arrays:
        if hflip:
            a = a[..., ::-1]
        if vflip:
            a = a[..., ::-1, :]
        if k_rot:
            a = np.rot90(a, k_rot, axes=(-2, -1))
        out.append(np.ascontiguousarray(a))
    return out


def prepare_arrays(samples):
    """BlurSamples -> stacked float32 training tensors (channels first)."""
    frames = np.stack([models.hwc_to_nchw(*s.inputs)[0] for s in samples])
    sharp = np.stack([models.hwc_to_nchw(s.sharp_gt)[0] for s in samples])
    targets = np.stack(
        [models.hwc_to_nchw(*s.more_blur_targets)[0].reshape(-1, 3, *s.sharp_gt.shape[:2]) for s in samples]
    )
    ids = [f"{s.provenance}/t{s.t}" for s in samples]
    return {"frames": frames, "sharp": sharp, "targets": targets, "ids": ids}


def _frame_slice(frames: np.ndarray, num: int) -> np.ndarray:
    if num == 3:
        return frames
    return frames[..., 3:6, :, :]


def _deblur_stack(cfg: TrainConfig, frames, targets, mbrnn_state):
    """Assemble the one-stage input stack; returns (stack, residual base)."""
    parts = [_frame_slice(frames, cfg.num_input_frames)]
    if cfg.ideal_blur_count:
        n, k, c, h, w = targets.shape
        parts.append(targets[:, : cfg.ideal_blur_count].reshape(n, -1, h, w))
    if cfg.use_pred_blurs or cfg.use_crfm:
        blurs, crfm = models.mbrnn_predict(mbrnn_state, frames)
        if cfg.use_pred_blurs:
            parts.append(np.concatenate(blurs, axis=1))
        if cfg.use_crfm:
            parts.append(crfm)
    base = _frame_slice(frames, cfg.num_input_frames)
    c0 = 3 * (cfg.num_input_frames // 2)
    return np.concatenate(parts, axis=1), base[:, c0 : c0 + 3]


def _build_states(cfg: TrainConfig, mbrnn_state):
    if cfg.stage == "mbrnn":
        st = models.make_mbrnn(
            cfg.base_channels, cfg.levels, cfg.feature_channels, cfg.num_input_frames, seed=cfg.seed
        )
        return {"mbrnn": st}, st
    if cfg.stage == "msdr":
        st = models.make_msdr(
            cfg.base_channels,
            cfg.levels,
            feature_channels=mbrnn_state.feature_channels,
            use_crfm=cfg.use_crfm,
            seed=cfg.seed,
        )
        return {"msdr": st, "mbrnn": mbrnn_state}, st
    in_images = cfg.num_input_frames + cfg.ideal_blur_count + (3 if cfg.use_pred_blurs else 0)
    crfm_ch = 3 * mbrnn_state.feature_channels if cfg.use_crfm else 0
    st = models.make_deblur(in_images, crfm_ch, cfg.base_channels, cfg.levels, seed=cfg.seed)
    states = {"deblur": st}
    if mbrnn_state is not None:
        states["mbrnn"] = mbrnn_state
    return states, st


def _forward_loss(cfg: TrainConfig, batch, states):
    frames, sharp, targets = batch
    if cfg.stage == "mbrnn":
        stack = _frame_slice(frames, cfg.num_input_frames)
        outs, _ = models.mbrnn_unroll(states["mbrnn"], stack)
        return mbrnn_loss(outs, targets[:, : models.N_BLUR_LEVELS].transpose(1, 0, 2, 3, 4))
    if cfg.stage == "msdr":
        mb = states["mbrnn"]
        stack = _frame_slice(frames, mb.num_input_frames)
        if cfg.mbrnn_frozen_during_msdr:
            blurs, crfm = models.mbrnn_predict(mb, stack)
            blurs = [ag.const(b) for b in blurs]
            crfm = ag.const(crfm)
        else:
            blurs, rfm = models.mbrnn_unroll(mb, stack)
            crfm = rfm.crfm
        bn = models.mbrnn_center_frame(mb, ag.const(stack))
        outs = models.msdr_run(states["msdr"], bn, blurs, crfm if cfg.use_crfm else None)
        return msdr_loss(outs, sharp)
    stack, base = _deblur_stack(cfg, frames, targets, states.get("mbrnn"))
    out = models.deblur_forward(states["deblur"], stack, base)
    # Squared error, not L1: most residual pixels are near zero on these
    # scenes, and an L1 median pull keeps the extra input channels from
    # paying for their own gradient noise at small batch sizes.
    return ag.mse_to(out, sharp)


def _predict_val(cfg: TrainConfig, arrays, idx, states):
    """Per-sample (prediction, reference) HWC pairs on the validation split."""
    div = cfg.spatial_divisor
    h = arrays["frames"].shape[2] // div * div
    w = arrays["frames"].shape[3] // div * div
    frames = arrays["frames"][idx, :, :h, :w]
    sharp = arrays["sharp"][idx, :, :h, :w]
    targets = arrays["targets"][idx, :, :, :h, :w]
    pairs = []
    if cfg.stage == "mbrnn":
        stack = _frame_slice(frames, cfg.num_input_frames)
        preds, _ = models.mbrnn_predict(states["mbrnn"], stack)
        for k, p in enumerate(preds):
            for i in range(p.shape[0]):
                pairs.append((models.nchw_to_hwc(p[i : i + 1]), models.nchw_to_hwc(targets[i : i + 1, k])))
        return pairs
    if cfg.stage == "msdr":
        mb = states["mbrnn"]
        res = models.pipeline_infer(mb, states["msdr"], _frame_slice(frames, mb.num_input_frames))
        pred = res["restored"]
    else:
        stack, base = _deblur_stack(cfg, frames, targets, states.get("mbrnn"))
        pred = models.deblur_forward(states["deblur"], stack, base).data
    for i in range(pred.shape[0]):
        pairs.append((models.nchw_to_hwc(pred[i : i + 1]), models.nchw_to_hwc(sharp[i : i + 1])))
    return pairs


def _val_metrics(cfg, arrays, idx, states):
    pairs = _predict_val(cfg, arrays, idx, states)
    ps = [M.psnr(p, r) for p, r in pairs]
    ss = [M.ssim(p, r) for p, r in pairs]
    return float(np.mean(ps)), float(np.mean(ss))


def write_metrics_csv(path: str, val_records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "val_psnr", "val_ssim", "wall_clock"])
        for r in val_records:
            w.writerow(
                [r["step"], f"{r['loss']:.8f}", f"{r['psnr']:.6f}", f"{r['ssim']:.6f}", f"{r['wall_clock']:.3f}"]
            )


def split_indices(cfg: TrainConfig, n: int):
    """Deterministic (val, train) index split; depends only on seed and n."""
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    return perm[:n_val], perm[n_val:]


def _resolve_mbrnn(cfg: TrainConfig, mbrnn):
    needs = cfg.stage == "msdr" or (cfg.stage == "deblur" and (cfg.use_pred_blurs or cfg.use_crfm))
    if not needs:
        return None
    if mbrnn is None:
        raise ConfigError(f"stage {cfg.stage!r} with this input set needs a trained blur predictor")
    if isinstance(mbrnn, str):
        mbrnn = models.load_checkpoint(mbrnn)
    if mbrnn.role != "mbrnn":
        raise ConfigError(f"expected an mbrnn checkpoint, got role {mbrnn.role!r}")
    return mbrnn


def train_stage(cfg: TrainConfig, data, out_dir: str = None, mbrnn=None) -> TrainRun:
    """Run one training stage; deterministic for a fixed config and seed."""
    if isinstance(data, str):
        samples, _ = load_dataset(data)
    else:
        samples = list(data)
    if not samples:
        raise DataError("empty dataset")
    mbrnn_state = _resolve_mbrnn(cfg, mbrnn)
    arrays = prepare_arrays(samples)
    n, _c, h, w = arrays["frames"].shape
    if h < cfg.crop_size or w < cfg.crop_size:
        raise ConfigError(f"crop_size {cfg.crop_size} exceeds image size {h}x{w}")
    if arrays["targets"].shape[1] < models.N_BLUR_LEVELS and cfg.stage == "mbrnn":
        raise DataError(
            f"dataset has {arrays['targets'].shape[1]} long-exposure targets; the blur "
            f"predictor needs {models.N_BLUR_LEVELS}"
        )
    if cfg.ideal_blur_count > arrays["targets"].shape[1]:
        raise DataError(
            f"input set wants {cfg.ideal_blur_count} ideal long exposures, dataset has "
            f"{arrays['targets'].shape[1]}"
        )

    val_idx, train_idx = split_indices(cfg, n)
    if len(train_idx) == 0:
        raise DataError("validation split leaves no training samples")
    rng = np.random.default_rng([cfg.seed, 1])  # loop stream, decoupled from the split

    states, trained = _build_states(cfg, mbrnn_state)
    if cfg.stage == "msdr" and cfg.mbrnn_frozen_during_msdr:
        states["mbrnn"].net.set_requires_grad(False)
    params = dict(trained.net.params)
    if cfg.stage == "msdr" and not cfg.mbrnn_frozen_during_msdr:
        params.update({f"mbrnn.{k}": v for k, v in states["mbrnn"].net.params.items()})
    opt = Adam(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)

    loss_history, wall_clock, val_records = [], [], []
    ckpt_dir = os.path.join(out_dir, "checkpoints") if out_dir else None
    t_start = time.perf_counter()
    cs = cfg.crop_size
    for step in range(cfg.total_steps):
        t0 = time.perf_counter()
        ids = train_idx[rng.integers(0, len(train_idx), size=cfg.batch_size)]
        fr_b, sh_b, tg_b = [], [], []
        for i in ids:
            y0 = int(rng.integers(0, h - cs + 1))
            x0 = int(rng.integers(0, w - cs + 1))
            tensors = [
                arrays["frames"][i, :, y0 : y0 + cs, x0 : x0 + cs],
                arrays["sharp"][i, :, y0 : y0 + cs, x0 : x0 + cs],
                arrays["targets"][i, :, :, y0 : y0 + cs, x0 : x0 + cs],
            ]
            fh = cfg.hflip and bool(rng.integers(2))
            fv = cfg.vflip and bool(rng.integers(2))
            kr = int(rng.integers(4)) if cfg.rot90 else 0
            fr, sh, tg = augment_nchw(tensors, fh, fv, kr)
            fr_b.append(fr)
            sh_b.append(sh)
            tg_b.append(tg)
        batch = (np.stack(fr_b), np.stack(sh_b), np.stack(tg_b))
        loss = _forward_loss(cfg, batch, states)
        lv = float(loss.data)
        if not np.isfinite(lv):
            raise TrainingDivergence(step, [arrays["ids"][i] for i in ids], lv)
        loss.backward()
        opt.step()
        opt.zero_grad()
        loss_history.append(lv)
        wall_clock.append(time.perf_counter() - t0)

        last = step == cfg.total_steps - 1
        if (cfg.val_every and (step + 1) % cfg.val_every == 0) or last:
            if len(val_idx):
                vp, vs = _val_metrics(cfg, arrays, val_idx, states)
            else:
                vp, vs = float("nan"), float("nan")
            val_records.append(
                {"step": step + 1, "loss": lv, "psnr": vp, "ssim": vs,
                 "wall_clock": time.perf_counter() - t_start}
            )
        if ckpt_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0 and not last:
            models.save_checkpoint(trained, os.path.join(ckpt_dir, f"{trained.role}_step{step + 1:06d}"))

    trained.step = cfg.total_steps
    trained.history = [{k: v for k, v in r.items() if k != "wall_clock"} for r in val_records]
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for role, st in states.items():
            models.save_checkpoint(st, os.path.join(ckpt_dir, f"{role}_final"))
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), val_records)
    return TrainRun(
        config=cfg,
        states=states,
        loss_history=loss_history,
        val_records=val_records,
        wall_clock=wall_clock,
        out_dir=out_dir,
    )
