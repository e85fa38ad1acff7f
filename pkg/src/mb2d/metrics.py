"""Image quality metrics, spectral analysis, and report plumbing.

Conventions (the usual ones, pinned here since they vary across papers):
PSNR uses mean squared error over all RGB channels, peak 1.0, capped at
100 dB for identical images.  SSIM runs on ITU-R 601 luma with an 11-tap
Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0, and
averages only fully valid windows.  Spectral density bins 2D FFT power by
integer frequency radius; radii past the last bin fold into it so the
binned total conserves energy.  Everything is computed in double precision.
"""

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import cv2
import numpy as np

LUMA = (0.299, 0.587, 0.114)
PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image shape mismatch: {a.shape} vs {b.shape}")


def to_luma(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array(LUMA)
    raise ValueError(f"expected (H, W) or (H, W, 3) image, got {img.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    _check_pair(a, b)
    mse = np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP))


def _gauss_valid(x: np.ndarray) -> np.ndarray:
    # border mode is irrelevant: the margin crop keeps only fully valid windows
    m = SSIM_WIN // 2
    out = cv2.GaussianBlur(x, (SSIM_WIN, SSIM_WIN), SSIM_SIGMA)
    return out[m:-m, m:-m]


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    _check_pair(a, b)
    x = to_luma(a)
    y = to_luma(b)
    if min(x.shape) < SSIM_WIN:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    c1 = k1**2
    c2 = k2**2
    mu_x = _gauss_valid(x)
    mu_y = _gauss_valid(y)
    var_x = _gauss_valid(x * x) - mu_x**2
    var_y = _gauss_valid(y * y) - mu_y**2
    cov = _gauss_valid(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def diff_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Channel-mean absolute difference, normalized to [0, 1] by its max."""
    _check_pair(a, b)
    d = np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))
    if d.ndim == 3:
        d = d.mean(axis=2)
    peak = d.max()
    return d / peak if peak > 0 else d


@dataclass
class SpectralCurve:
    radii: np.ndarray  # integer radius bins
    power: np.ndarray  # summed |FFT|^2 per bin
    log_power: np.ndarray

    def to_csv(self, path: str):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["radius_bin", "log_power"])
            for r, lp in zip(self.radii, self.log_power):
                w.writerow([int(r), f"{lp:.8f}"])


def spectral_density(img: np.ndarray) -> SpectralCurve:
    """Radially binned FFT power of the luma channel."""
    x = to_luma(img)
    h, w = x.shape
    if min(h, w) < 32:
        raise ValueError(f"image {x.shape} too small for spectral analysis (min side 32)")
    p = np.abs(np.fft.fft2(x)) ** 2
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    r = np.rint(np.hypot(ky[:, None], kx[None, :])).astype(np.int64)
    nbins = min(h, w) // 2
    idx = np.minimum(r, nbins - 1)
    power = np.bincount(idx.ravel(), weights=p.ravel(), minlength=nbins)
    return SpectralCurve(
        radii=np.arange(nbins), power=power, log_power=np.log10(power + 1e-30)
    )


def high_band_energy(curve: SpectralCurve, frac: float = 0.5) -> float:
    """Integrated raw power over the top `frac` of radius bins."""
    start = int(round(len(curve.power) * (1.0 - frac)))
    return float(curve.power[start:].sum())


def count_params(state) -> float:
    """Learned parameter count in millions."""
    if hasattr(state, "net"):
        state = state.net
    if hasattr(state, "params"):
        total = sum(int(np.prod(t.data.shape)) for t in state.params.values())
    else:
        total = sum(int(np.prod(np.shape(v))) for v in dict(state).values())
    return total / 1e6


def _fit_channels(stack: np.ndarray, want: int) -> np.ndarray:
    """Slice or zero-pad a (1, C, H, W) stack to the channel count a net expects."""
    have = stack.shape[1]
    if have == 9 and want == 3:  # three-frame sample into a one-frame net: center frame
        return stack[:, 3:6]
    if have >= want:
        return stack[:, :want]
    pad = np.zeros((stack.shape[0], want - have) + stack.shape[2:], stack.dtype)
    return np.concatenate([stack, pad], axis=1)


def time_inference(state, sample, reps: int = 5, mbrnn_state=None) -> float:
    """Median forward wall-clock in seconds; input prep excluded."""
    from mb2d import models

    inputs = sample.inputs if hasattr(sample, "inputs") else np.asarray(sample)
    stack = models.hwc_to_nchw(*inputs) if inputs.ndim == 4 else models.hwc_to_nchw(inputs)
    if state.role == "mbrnn":
        stack = _fit_channels(stack, 3 * state.num_input_frames)
    elif state.role == "msdr":
        if mbrnn_state is None:
            raise ValueError("timing the msdr role needs the mbrnn state")
        stack = _fit_channels(stack, 3 * mbrnn_state.num_input_frames)
    else:
        stack = _fit_channels(stack, state.net.spec.in_channels)
    times = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        if state.role == "mbrnn":
            models.mbrnn_predict(state, stack)
        elif state.role == "msdr":
            models.pipeline_infer(mbrnn_state, state, stack)
        else:
            models.deblur_forward(state, stack, stack[:, :3])
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def fingerprint(obj) -> str:
    """Short stable hash of a JSON-serializable config."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MetricsReport:
    per_sample: list = field(default_factory=list)  # dicts: id, psnr, ssim
    param_millions: float = None
    inference_seconds: float = None
    config_fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for rec in self.per_sample:
            if not (rec["psnr"] <= PSNR_CAP):
                raise ValueError(f"PSNR not finite/capped: {rec}")
            if "ssim" in rec and not (-1.0 <= rec["ssim"] <= 1.0):
                raise ValueError(f"SSIM out of [-1, 1]: {rec}")

    @property
    def psnr_mean(self) -> float:
        return float(np.mean([r["psnr"] for r in self.per_sample])) if self.per_sample else float("nan")

    @property
    def ssim_mean(self) -> float:
        vals = [r["ssim"] for r in self.per_sample if "ssim" in r]
        return float(np.mean(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {
            "per_sample": self.per_sample,
            "aggregate": {"psnr_mean": self.psnr_mean, "ssim_mean": self.ssim_mean},
            "param_millions": self.param_millions,
            "inference_seconds": self.inference_seconds,
            "config_fingerprint": self.config_fingerprint,
            **self.extra,
        }

    def save(self, out_dir: str, name: str = "report"):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, f"{name}.json"), "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "psnr_db", "ssim"])
            for rec in self.per_sample:
                w.writerow([rec["id"], f"{rec['psnr']:.4f}", f"{rec.get('ssim', float('nan')):.6f}"])
            w.writerow(["mean", f"{self.psnr_mean:.4f}", f"{self.ssim_mean:.6f}"])


def evaluate_pairs(preds, refs, ids=None, **kwargs) -> MetricsReport:
    """PSNR/SSIM per prediction/reference pair."""
    ids = ids if ids is not None else list(range(len(preds)))
    rows = [
        {"id": i, "psnr": psnr(p, r), "ssim": ssim(p, r)}
        for i, p, r in zip(ids, preds, refs)
    ]
    return MetricsReport(per_sample=rows, **kwargs)
