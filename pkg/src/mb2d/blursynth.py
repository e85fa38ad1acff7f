"""Blur synthesis by temporal frame averaging.

A blurred frame at exposure m is the mean of m consecutive sharp frames,
accumulated in double precision, with the camera response applied after
averaging (inputs are linear light).  For a sample anchored at reference
frame n*t, the three network inputs are exposure-n frames centered at
n*(t-1), n*t, n*(t+1); every longer-exposure target B^{n+2k} is centered at
the same reference frame n*t, so all exposures of one sample share a latent
sharp frame.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from mb2d.errors import DataError
from mb2d.scenegen import FrameSequence
from mb2d import imageio as mio


@dataclass
class BlurSpec:
    n: int = 3  # base exposure, frames averaged; odd
    offsets: tuple = (2, 4, 6)  # extra frames per more-blur level; even, increasing
    crf: str = "gamma"  # "identity" | "gamma"
    gamma: float = 2.2

    def __post_init__(self):
        self.offsets = tuple(int(o) for o in self.offsets)
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"base exposure n must be odd and >= 3, got {self.n}")
        if not self.offsets:
            raise ValueError("offsets must be non-empty")
        if any(o <= 0 or o % 2 for o in self.offsets):
            raise ValueError(f"offsets must be positive even integers, got {self.offsets}")
        if list(self.offsets) != sorted(set(self.offsets)):
            raise ValueError(f"offsets must be strictly increasing, got {self.offsets}")
        if self.crf not in ("identity", "gamma"):
            raise ValueError(f"crf must be 'identity' or 'gamma', got {self.crf!r}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def exposures(self) -> tuple:
        return tuple(self.n + o for o in self.offsets)

    def to_dict(self):
        return {"n": self.n, "offsets": list(self.offsets), "crf": self.crf, "gamma": self.gamma}


@dataclass
class BlurSample:
    t: int  # sample index; reference sharp frame is n*t
    inputs: np.ndarray  # (3, H, W, 3) exposure-n frames at n(t-1), nt, n(t+1)
    sharp_gt: np.ndarray  # (H, W, 3) crf(S[nt])
    more_blur_targets: np.ndarray  # (K, H, W, 3) exposures n+2k, all centered at nt
    provenance: str = ""

    def __post_init__(self):
        hw = self.sharp_gt.shape[:2]
        if self.inputs.shape[1:3] != hw or self.more_blur_targets.shape[1:3] != hw:
            raise ValueError("sample images disagree on dimensions")

    @property
    def center_input(self) -> np.ndarray:
        return self.inputs[self.inputs.shape[0] // 2]


def apply_crf(x: np.ndarray, crf: str, gamma: float = 2.2) -> np.ndarray:
    if crf == "identity":
        return x
    if crf == "gamma":
        return np.power(x, 1.0 / gamma)
    raise ValueError(f"unknown crf {crf!r}")


def synthesize_blur(seq: FrameSequence, center: int, m: int, crf: str = "identity", gamma: float = 2.2) -> np.ndarray:
    """Mean of the m frames centered at `center`, then CRF; float32 output."""
    if m < 1 or m % 2 == 0:
        raise ValueError(f"exposure must be a positive odd integer, got {m}")
    half = m // 2
    lo, hi = center - half, center + half
    if lo < 0 or hi >= len(seq):
        raise IndexError(
            f"exposure-{m} window [{lo}, {hi}] around frame {center} exceeds sequence bounds [0, {len(seq) - 1}]"
        )
    acc = np.zeros(seq[0].shape, np.float64)
    for i in range(lo, hi + 1):
        acc += seq[i]
    acc /= m
    return apply_crf(acc, crf, gamma).astype(np.float32)


def _sample_windows(n: int, max_offset: int, t: int):
    """(lo, hi) frame bounds each window of sample t touches."""
    spans = []
    for c in (n * (t - 1), n * t, n * (t + 1)):
        spans.append((c - n // 2, c + n // 2))
    half = (n + max_offset) // 2
    spans.append((n * t - half, n * t + half))
    return spans


def min_sequence_length(spec: BlurSpec) -> int:
    """Frames needed for at least one sample."""
    best = None
    for t in range(1, 64):
        spans = _sample_windows(spec.n, max(spec.offsets), t)
        if min(lo for lo, _ in spans) < 0:
            continue
        need = max(hi for _, hi in spans) + 1
        best = need if best is None else min(best, need)
    return best


def make_samples(seq: FrameSequence, spec: BlurSpec, provenance: str = "") -> list:
    n = spec.n
    samples = []
    for t in range(1, len(seq) // n + 2):
        spans = _sample_windows(n, max(spec.offsets), t)
        if min(lo for lo, _ in spans) < 0 or max(hi for _, hi in spans) >= len(seq):
            continue
        inputs = np.stack(
            [synthesize_blur(seq, n * (t + d), n, spec.crf, spec.gamma) for d in (-1, 0, 1)]
        )
        sharp = synthesize_blur(seq, n * t, 1, spec.crf, spec.gamma)
        targets = np.stack(
            [synthesize_blur(seq, n * t, m, spec.crf, spec.gamma) for m in spec.exposures]
        )
        samples.append(BlurSample(t, inputs, sharp, targets, provenance))
    if not samples:
        raise DataError(
            f"sequence of {len(seq)} frames too short for n={n}, offsets={spec.offsets}; "
            f"need at least {min_sequence_length(spec)} frames"
        )
    return samples


def save_dataset(root: str, sequences: dict, spec: BlurSpec) -> dict:
    """Write per-sequence sample images and a root manifest.

    sequences: {seq_id: FrameSequence}.  Layout per sequence:
    input/B{n}_{t}.png, gt/sharp_{t}.png, targets/B{m}_{t}.png; shared
    exposure-n frames are written once.
    """
    manifest = {"spec": spec.to_dict(), "samples": []}
    for seq_id, seq in sequences.items():
        samples = make_samples(seq, spec, provenance=seq_id)
        sdir = os.path.join(root, seq_id)
        for sub in ("input", "gt", "targets"):
            os.makedirs(os.path.join(sdir, sub), exist_ok=True)
        for s in samples:
            in_files = []
            for d, img in zip((-1, 0, 1), s.inputs):
                rel = os.path.join(seq_id, "input", f"B{spec.n}_{s.t + d}.png")
                in_files.append(rel)
                path = os.path.join(root, rel)
                if not os.path.exists(path):
                    mio.write_image16(path, img)
            gt_rel = os.path.join(seq_id, "gt", f"sharp_{s.t}.png")
            mio.write_image16(os.path.join(root, gt_rel), s.sharp_gt)
            tgt_files = []
            for m, img in zip(spec.exposures, s.more_blur_targets):
                rel = os.path.join(seq_id, "targets", f"B{m}_{s.t}.png")
                tgt_files.append(rel)
                mio.write_image16(os.path.join(root, rel), img)
            manifest["samples"].append(
                {"seq_id": seq_id, "t": s.t, "inputs": in_files, "sharp_gt": gt_rel, "targets": tgt_files}
            )
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)
    return manifest


def load_dataset(root: str):
    """Read a dataset directory back into (samples, spec)."""
    mpath = os.path.join(root, "manifest.json")
    if not os.path.isfile(mpath):
        raise DataError(f"dataset manifest not found: {mpath}")
    with open(mpath) as f:
        manifest = json.load(f)
    spec = BlurSpec(**manifest["spec"])
    samples = []
    for rec in manifest["samples"]:
        inputs = np.stack([mio.read_image16(os.path.join(root, p)) for p in rec["inputs"]])
        sharp = mio.read_image16(os.path.join(root, rec["sharp_gt"]))
        targets = np.stack([mio.read_image16(os.path.join(root, p)) for p in rec["targets"]])
        samples.append(BlurSample(rec["t"], inputs, sharp, targets, rec["seq_id"]))
    return samples, spec
