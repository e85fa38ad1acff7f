"""Model roles built on the shared U-Net backbone.

* ``mbrnn``: recurrent multi-blurring.  Each iteration consumes the input
  frame stack, the previous predicted blur and the previous feature map, and
  predicts the next longer-exposure image as a clamped residual on top of the
  previous one.  One parameter set serves all iterations.
* ``msdr``: multi-scale deblurring.  Runs the backbone coarse-to-fine over a
  x4/x2/x1 bilinear pyramid; at each scale it sees the input frame, the
  predicted blur ladder, the upsampled coarser estimate (the residual base)
  and the downsampled concatenated feature maps.  One parameter set serves
  all scales.
* ``deblur``: plain one-stage restorer used by the ablation arms; consumes a
  configurable image stack and predicts a residual on the center frame.

Checkpoints are directories holding ``weights.npz`` plus a ``model.json``
manifest (role, architecture, seed, step, metric history).
"""

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from mb2d.errors import DataError
from mb2d.nn import autograd as ag
from mb2d.nn.unet import UNet, UNetSpec

CKPT_FORMAT = "mb2d-ckpt-v1"
N_BLUR_LEVELS = 3  # predicted exposure ladder length and pyramid depth


def hwc_to_nchw(*images) -> np.ndarray:
    """Stack HxWx3 images channel-wise into a (1, 3*k, H, W) array."""
    chans = [np.moveaxis(np.asarray(im), -1, 0) for im in images]
    return np.concatenate(chans, axis=0)[None]


def nchw_to_hwc(x: np.ndarray) -> np.ndarray:
    """(1, 3, H, W) -> HxWx3."""
    return np.moveaxis(np.asarray(x)[0], 0, -1)


@dataclass
class ModelState:
    """One network role: backbone weights plus training metadata."""

    role: str
    net: UNet
    num_input_frames: int = 3
    use_crfm: bool = True
    crfm_channels: int = 0
    seed: int = 0
    step: int = 0
    history: list = field(default_factory=list)

    @property
    def feature_channels(self) -> int:
        return self.net.spec.feature_channels


def mbrnn_in_channels(num_input_frames: int, feature_channels: int) -> int:
    return 3 * num_input_frames + 3 + feature_channels


def msdr_in_channels(feature_channels: int, use_crfm: bool) -> int:
    return 3 + 3 * N_BLUR_LEVELS + 3 + (N_BLUR_LEVELS * feature_channels if use_crfm else 0)


def make_mbrnn(base_channels=8, levels=3, feature_channels=8, num_input_frames=3, seed=0, dtype=np.float32):
    spec = UNetSpec(
        in_channels=mbrnn_in_channels(num_input_frames, feature_channels),
        base_channels=base_channels,
        levels=levels,
        out_channels=3,
        feature_channels=feature_channels,
    )
    net = UNet(spec, rng=np.random.default_rng(seed), dtype=dtype)
    return ModelState(role="mbrnn", net=net, num_input_frames=num_input_frames, seed=seed)


def make_msdr(base_channels=8, levels=3, feature_channels=8, use_crfm=True, seed=0, dtype=np.float32):
    spec = UNetSpec(
        in_channels=msdr_in_channels(feature_channels, use_crfm),
        base_channels=base_channels,
        levels=levels,
        out_channels=3,
        feature_channels=0,
    )
    net = UNet(spec, rng=np.random.default_rng(seed), dtype=dtype)
    return ModelState(
        role="msdr",
        net=net,
        use_crfm=use_crfm,
        crfm_channels=N_BLUR_LEVELS * feature_channels if use_crfm else 0,
        seed=seed,
    )


def make_deblur(in_images: int, crfm_channels=0, base_channels=8, levels=3, seed=0, dtype=np.float32):
    spec = UNetSpec(
        in_channels=3 * in_images + crfm_channels,
        base_channels=base_channels,
        levels=levels,
        out_channels=3,
        feature_channels=0,
    )
    net = UNet(spec, rng=np.random.default_rng(seed), dtype=dtype)
    return ModelState(
        role="deblur",
        net=net,
        num_input_frames=in_images,
        use_crfm=crfm_channels > 0,
        crfm_channels=crfm_channels,
        seed=seed,
    )


@dataclass
class RecurrentFeatureMap:
    """Per-iteration feature maps and their channel-wise concatenation."""

    maps: list
    crfm: ag.Tensor

    @property
    def data(self):
        return self.crfm.data


def _as_tensor(x):
    return x if isinstance(x, ag.Tensor) else ag.const(np.asarray(x))


def _check_same_dims(name_a, a, name_b, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"{name_a} dims {a.shape} incompatible with {name_b} dims {b.shape}")


def mbrnn_step(state: ModelState, inputs, prev_blur, prev_feat):
    """One multi-blurring iteration: returns (next blurred image, feature map)."""
    if state.role != "mbrnn":
        raise ValueError(f"mbrnn_step needs an mbrnn state, got role {state.role!r}")
    inputs, prev_blur, prev_feat = map(_as_tensor, (inputs, prev_blur, prev_feat))
    _check_same_dims("inputs", inputs, "prev_blur", prev_blur)
    _check_same_dims("inputs", inputs, "prev_feat", prev_feat)
    if prev_blur.shape[1] != 3:
        raise ValueError(f"prev_blur must have 3 channels, got {prev_blur.shape[1]}")
    if prev_feat.shape[1] != state.feature_channels:
        raise ValueError(
            f"prev_feat must have {state.feature_channels} channels, got {prev_feat.shape[1]}"
        )
    x = ag.concat_ch([inputs, prev_blur, prev_feat])
    res, feat = state.net(x)
    out = ag.clamp01(ag.add(prev_blur, res))
    return out, feat


def mbrnn_center_frame(state: ModelState, inputs) -> np.ndarray:
    """Slice the reference frame out of the stacked input frames."""
    inputs = _as_tensor(inputs)
    k = state.num_input_frames
    if inputs.shape[1] != 3 * k:
        raise ValueError(f"expected {3 * k} input channels ({k} frames), got {inputs.shape[1]}")
    c0 = 3 * (k // 2)
    return inputs.data[:, c0 : c0 + 3]


def mbrnn_unroll(state: ModelState, inputs, n_levels: int = N_BLUR_LEVELS):
    """Run the recurrence; returns (list of predicted blurs, RecurrentFeatureMap)."""
    inputs = _as_tensor(inputs)
    center = mbrnn_center_frame(state, inputs)
    n, _c, h, w = inputs.shape
    prev_blur = ag.const(center)
    prev_feat = ag.const(np.zeros((n, state.feature_channels, h, w), inputs.dtype))
    blurs, feats = [], []
    for _k in range(n_levels):
        prev_blur, prev_feat = mbrnn_step(state, inputs, prev_blur, prev_feat)
        blurs.append(prev_blur)
        feats.append(prev_feat)
    return blurs, RecurrentFeatureMap(maps=feats, crfm=ag.concat_ch(feats))


def mbrnn_predict(state: ModelState, inputs):
    """Inference helper: detached ndarray predictions (blur ladder, crfm)."""
    blurs, rfm = mbrnn_unroll(state, _as_tensor(np.asarray(inputs)))
    return [b.data for b in blurs], rfm.crfm.data


def build_pyramid(x, n_scales: int = N_BLUR_LEVELS):
    """[scale 1 (full), scale 2 (half), ...] by repeated bilinear halving."""
    x = _as_tensor(x)
    pyr = [x]
    for _ in range(n_scales - 1):
        pyr.append(ag.downsample2(pyr[-1]))
    return pyr


def msdr_step(state: ModelState, scale: int, bn_s, blurs_s, est, feat_s=None):
    """One deblurring pass at pyramid scale ``scale`` (1 = full resolution)."""
    if state.role != "msdr":
        raise ValueError(f"msdr_step needs an msdr state, got role {state.role!r}")
    bn_s, blurs_s, est = map(_as_tensor, (bn_s, blurs_s, est))
    _check_same_dims("input frame", bn_s, "blur ladder", blurs_s)
    _check_same_dims("input frame", bn_s, "estimate", est)
    parts = [bn_s, blurs_s, est]
    if state.use_crfm:
        if feat_s is None:
            raise ValueError("msdr configured with feature maps but none were given")
        feat_s = _as_tensor(feat_s)
        _check_same_dims("input frame", bn_s, "feature map", feat_s)
        parts.append(feat_s)
    x = ag.concat_ch(parts)
    res, _ = state.net(x)
    return ag.clamp01(ag.add(est, res))


def msdr_run(state: ModelState, bn, blurs, crfm=None, n_scales: int = N_BLUR_LEVELS):
    """Coarse-to-fine restoration; returns estimates (coarsest, ..., full)."""
    bn = _as_tensor(bn)
    if isinstance(blurs, (list, tuple)):
        blurs = ag.concat_ch([_as_tensor(b) for b in blurs])
    else:
        blurs = _as_tensor(blurs)
    if blurs.shape[1] != 3 * N_BLUR_LEVELS:
        raise ValueError(f"expected {3 * N_BLUR_LEVELS} blur-ladder channels, got {blurs.shape[1]}")
    b_pyr = build_pyramid(bn, n_scales)
    blur_pyr = build_pyramid(blurs, n_scales)
    feat_pyr = None
    if state.use_crfm:
        if crfm is None:
            raise ValueError("msdr configured with feature maps but none were given")
        crfm = _as_tensor(crfm)
        if crfm.shape[1] != state.crfm_channels:
            raise ValueError(
                f"expected {state.crfm_channels} feature channels, got {crfm.shape[1]}"
            )
        feat_pyr = build_pyramid(crfm, n_scales)
    outs = []
    est = b_pyr[-1]
    for s in range(n_scales, 0, -1):
        feat_s = feat_pyr[s - 1] if feat_pyr is not None else None
        est = msdr_step(state, s, b_pyr[s - 1], blur_pyr[s - 1], est, feat_s)
        outs.append(est)
        if s > 1:
            est = ag.upsample2(est)
    return tuple(outs)


def deblur_forward(state: ModelState, stack, base):
    """One-stage restorer: residual on ``base`` from the stacked inputs."""
    if state.role != "deblur":
        raise ValueError(f"deblur_forward needs a deblur state, got role {state.role!r}")
    stack, base = map(_as_tensor, (stack, base))
    res, _ = state.net(stack)
    return ag.clamp01(ag.add(base, res))


def pipeline_infer(mbrnn: ModelState, msdr: ModelState, inputs):
    """Full two-step inference on a stacked frame triple; detached arrays."""
    blurs, crfm = mbrnn_predict(mbrnn, inputs)
    bn = mbrnn_center_frame(mbrnn, _as_tensor(np.asarray(inputs)))
    outs = msdr_run(msdr, bn, [ag.const(b) for b in blurs], ag.const(crfm) if msdr.use_crfm else None)
    return {
        "pred_blurs": blurs,
        "crfm": crfm,
        "estimates": [o.data for o in outs],
        "restored": outs[-1].data,
    }


def _role_opts(state: ModelState) -> dict:
    return {
        "num_input_frames": state.num_input_frames,
        "use_crfm": state.use_crfm,
        "crfm_channels": getattr(state, "crfm_channels", 0),
    }


def save_checkpoint(state: ModelState, ckpt_dir: str):
    """Atomic write of weights.npz + model.json into ``ckpt_dir``."""
    parent = os.path.dirname(os.path.abspath(ckpt_dir)) or "."
    os.makedirs(parent, exist_ok=True)
    manifest = {
        "format": CKPT_FORMAT,
        "role": state.role,
        "unet": state.net.spec.to_dict(),
        "opts": _role_opts(state),
        "seed": state.seed,
        "step": state.step,
        "history": state.history,
    }
    tmp = tempfile.mkdtemp(dir=parent, prefix=".ckpt-tmp-")
    try:
        np.savez(os.path.join(tmp, "weights.npz"), **state.net.state_arrays())
        with open(os.path.join(tmp, "model.json"), "w") as f:
            json.dump(manifest, f, indent=2)
        if os.path.isdir(ckpt_dir):
            import shutil

            shutil.rmtree(ckpt_dir)
        os.replace(tmp, ckpt_dir)
    finally:
        if os.path.isdir(tmp):
            import shutil

            shutil.rmtree(tmp, ignore_errors=True)


def load_checkpoint(ckpt_dir: str, dtype=np.float32) -> ModelState:
    manifest_path = os.path.join(ckpt_dir, "model.json")
    weights_path = os.path.join(ckpt_dir, "weights.npz")
    if not os.path.isfile(manifest_path) or not os.path.isfile(weights_path):
        raise DataError(f"not a checkpoint directory: {ckpt_dir}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    if manifest.get("format") != CKPT_FORMAT:
        raise DataError(f"unsupported checkpoint format {manifest.get('format')!r} in {ckpt_dir}")
    spec = UNetSpec(**manifest["unet"])
    net = UNet(spec, rng=np.random.default_rng(manifest["seed"]), dtype=dtype)
    with np.load(weights_path) as arrays:
        net.load_arrays(dict(arrays))
    opts = manifest["opts"]
    state = ModelState(
        role=manifest["role"],
        net=net,
        num_input_frames=opts["num_input_frames"],
        use_crfm=opts["use_crfm"],
        seed=manifest["seed"],
        step=manifest["step"],
        history=manifest.get("history", []),
    )
    state.crfm_channels = opts.get("crfm_channels", 0)
    return state
