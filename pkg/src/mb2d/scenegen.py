"""Deterministic synthetic high-frame-rate scenes.

A scene is a textured background with textured rigid shapes (rectangles,
disks) translating at constant velocity.  Textures are multi-octave value
noise, band-limited enough to stay smooth yet broadband enough for spectral
analysis.  Shape edges are anti-aliased: rectangles get exact pixel-coverage
areas, disks a one-pixel smooth edge from the signed distance.  Subpixel
positions therefore render smoothly, and integer displacements shift pixels
exactly.

Objects are drawn clipped at the canvas; their centers follow
``start + frame * velocity`` regardless of clipping.
"""

import json
import os
import re
from dataclasses import dataclass, field, asdict

import numpy as np

from mb2d.errors import DataError
from mb2d import imageio as mio


@dataclass
class ObjectSpec:
    shape: str  # "rect" | "disk"
    size: float  # rect edge length / disk diameter, px
    velocity: tuple = (0.0, 0.0)  # (vx, vy) px per frame
    texture_seed: int = 0
    start: tuple = None  # center at frame 0; None -> placed from the scene rng

    def __post_init__(self):
        if self.shape not in ("rect", "disk"):
            raise ValueError(f"shape must be 'rect' or 'disk', got {self.shape!r}")
        if self.size <= 0:
            raise ValueError(f"object size must be positive, got {self.size}")
        self.velocity = tuple(float(v) for v in self.velocity)
        if self.start is not None:
            self.start = tuple(float(v) for v in self.start)

    @property
    def speed(self) -> float:
        return float(np.hypot(*self.velocity))


@dataclass
class SceneSpec:
    width: int
    height: int
    num_frames: int
    objects: list = field(default_factory=list)
    background_seed: int = 0
    seed: int = 0
    background_octaves: int = 4  # fewer octaves: smoother, spectrally quieter backdrop

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if self.width < 32 or self.height < 32:
            raise ValueError(f"canvas must be at least 32x32, got {self.width}x{self.height}")
        if self.num_frames < 1:
            raise ValueError(f"num_frames must be positive, got {self.num_frames}")
        if self.background_octaves < 1:
            raise ValueError(f"background_octaves must be >= 1, got {self.background_octaves}")

    @property
    def has_motion(self) -> bool:
        return any(o.speed >= 1.0 for o in self.objects)

    def to_dict(self):
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return d


@dataclass
class FrameSequence:
    """(T, H, W, 3) float frames in [0, 1], linear light."""

    frames: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.frames.shape[0]

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def height(self):
        return self.frames.shape[1]

    @property
    def width(self):
        return self.frames.shape[2]


class _ValueNoise:
    """Continuous multi-octave value noise, sampled at float coordinates."""

    def __init__(self, seed: int, octaves: int = 3, base_cells: int = 4, lo: float = 0.1, hi: float = 0.9):
        rng = np.random.default_rng(seed)
        self.lattices = []
        for o in range(octaves):
            cells = base_cells * 2**o
            self.lattices.append(rng.random((3, cells + 1, cells + 1)))
        self.amps = np.array([0.6**o for o in range(octaves)])
        self.amps /= self.amps.sum()
        self.lo = lo
        self.hi = hi

    def sample(self, ys, xs, extent: float):
        """Sample at coordinates in [0, extent) x [0, extent); returns (..., 3)."""
        out = np.zeros(ys.shape + (3,))
        for lattice, amp in zip(self.lattices, self.amps):
            cells = lattice.shape[1] - 1
            fy = np.clip(ys / extent * cells, 0.0, cells - 1e-9)
            fx = np.clip(xs / extent * cells, 0.0, cells - 1e-9)
            y0 = fy.astype(np.int64)
            x0 = fx.astype(np.int64)
            wy = fy - y0
            wx = fx - x0
            for c in range(3):
                g = lattice[c]
                v = (
                    g[y0, x0] * (1 - wy) * (1 - wx)
                    + g[y0, x0 + 1] * (1 - wy) * wx
                    + g[y0 + 1, x0] * wy * (1 - wx)
                    + g[y0 + 1, x0 + 1] * wy * wx
                )
                out[..., c] += amp * v
        return self.lo + (self.hi - self.lo) * out


def object_center(spec: SceneSpec, obj_index: int, frame: int):
    """Analytic center of an object at a frame (clipping not applied)."""
    obj = spec.objects[obj_index]
    start = _object_start(spec, obj_index)
    return (start[0] + frame * obj.velocity[0], start[1] + frame * obj.velocity[1])


def _object_start(spec: SceneSpec, obj_index: int):
    obj = spec.objects[obj_index]
    if obj.start is not None:
        return obj.start
    rng = np.random.default_rng([spec.seed, 101, obj_index])
    m = obj.size / 2 + 2
    cx = m + rng.random() * max(spec.width - 2 * m, 1)
    cy = m + rng.random() * max(spec.height - 2 * m, 1)
    return (cx, cy)


def _coverage(obj: ObjectSpec, cx: float, cy: float, h: int, w: int) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    if obj.shape == "rect":
        half = obj.size / 2
        ox = np.clip(np.minimum(cx + half, xs + 1) - np.maximum(cx - half, xs), 0.0, 1.0)
        oy = np.clip(np.minimum(cy + half, ys + 1) - np.maximum(cy - half, ys), 0.0, 1.0)
        return ox * oy
    r = obj.size / 2
    dist = np.hypot(xs + 0.5 - cx, ys + 0.5 - cy)
    return np.clip(r - dist + 0.5, 0.0, 1.0)


def object_mask(spec: SceneSpec, frames, dilate: float = 0.0) -> np.ndarray:
    """Union of object supports over the given frames, optionally inflated."""
    mask = np.zeros((spec.height, spec.width), bool)
    for i, obj in enumerate(spec.objects):
        grown = ObjectSpec(obj.shape, obj.size + 2 * dilate, obj.velocity, obj.texture_seed, obj.start)
        for f in frames:
            cx, cy = object_center(spec, i, f)
            mask |= _coverage(grown, cx, cy, spec.height, spec.width) > 0
    return mask


def render_sequence(spec: SceneSpec, require_motion: bool = False) -> FrameSequence:
    """Render all frames; deterministic for a fixed spec."""
    if require_motion and not spec.has_motion:
        raise ValueError("scene has no object moving at >= 1 px/frame")
    for i, obj in enumerate(spec.objects):
        if not _ever_visible(spec, i):
            raise ValueError(f"object {i} never intersects the canvas")

    h, w = spec.height, spec.width
    bg_noise = _ValueNoise(spec.background_seed, octaves=spec.background_octaves, base_cells=4)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    background = bg_noise.sample(ys + 0.5, xs + 0.5, float(max(h, w)))

    textures = [
        _ValueNoise(np.int64(obj.texture_seed) * 7919 + 13, octaves=3, base_cells=4)
        for obj in spec.objects
    ]
    frames = np.empty((spec.num_frames, h, w, 3), np.float32)
    for f in range(spec.num_frames):
        frame = background.copy()
        for i, obj in enumerate(spec.objects):
            cx, cy = object_center(spec, i, f)
            cov = _coverage(obj, cx, cy, h, w)
            if not cov.any():
                continue
            local_y = ys + 0.5 - (cy - obj.size / 2)
            local_x = xs + 0.5 - (cx - obj.size / 2)
            tex = textures[i].sample(
                np.clip(local_y, 0, obj.size), np.clip(local_x, 0, obj.size), float(obj.size)
            )
            frame = frame * (1 - cov[..., None]) + tex * cov[..., None]
        frames[f] = frame.astype(np.float32)
    return FrameSequence(frames=frames, meta={"scene": spec.to_dict()})


def _ever_visible(spec: SceneSpec, obj_index: int) -> bool:
    obj = spec.objects[obj_index]
    half = obj.size / 2 + 1
    for f in range(spec.num_frames):
        cx, cy = object_center(spec, obj_index, f)
        if cx + half > 0 and cx - half < spec.width and cy + half > 0 and cy - half < spec.height:
            return True
    return False


def make_random_scene(
    seed: int,
    width: int = 96,
    height: int = 96,
    num_frames: int = 16,
    n_objects: int = 4,
    speed_range=(0.7, 1.9),
    size_range=(12.0, 22.0),
    background_octaves: int = 2,
    keep_on_canvas: bool = True,
) -> SceneSpec:
    """Deterministic random scene; optionally plants every trajectory fully
    on canvas so longer exposure windows never gain object coverage."""
    rng = np.random.default_rng([seed, 7])
    span_t = num_frames - 1
    objs = []
    for j in range(n_objects):
        size = float(size_range[0] + (size_range[1] - size_range[0]) * rng.random())
        speed = speed_range[0] + (speed_range[1] - speed_range[0]) * rng.random()
        ang = rng.random() * 2 * np.pi
        vx, vy = speed * np.cos(ang), speed * np.sin(ang)
        start = None
        if keep_on_canvas:
            for _ in range(8):
                lo_x = size / 2 + 1 + max(0.0, -vx) * span_t
                hi_x = size / 2 + 1 + max(0.0, vx) * span_t
                lo_y = size / 2 + 1 + max(0.0, -vy) * span_t
                hi_y = size / 2 + 1 + max(0.0, vy) * span_t
                if width - lo_x - hi_x > 1 and height - lo_y - hi_y > 1:
                    break
                vx *= 0.5
                vy *= 0.5
            else:
                vx = vy = 0.0
                lo_x = hi_x = lo_y = hi_y = size / 2 + 1
            start = (
                float(lo_x + rng.random() * (width - lo_x - hi_x)),
                float(lo_y + rng.random() * (height - lo_y - hi_y)),
            )
        objs.append(
            ObjectSpec(
                shape="rect" if j % 2 else "disk",
                size=size,
                velocity=(float(vx), float(vy)),
                texture_seed=int(rng.integers(1 << 30)),
                start=start,
            )
        )
    return SceneSpec(
        width, height, num_frames, objs,
        background_seed=seed * 31 + 11, seed=seed, background_octaves=background_octaves,
    )


_FRAME_RE = re.compile(r"frame_(\d+)\.png$")


def save_sequence(seq: FrameSequence, out_dir: str):
    """Write numbered 16-bit frames plus the scene manifest."""
    os.makedirs(out_dir, exist_ok=True)
    for i in range(len(seq)):
        mio.write_image16(os.path.join(out_dir, f"frame_{i:05d}.png"), seq[i])
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(seq.meta, f, indent=2)


def load_sequence(seq_dir: str, linearize_gamma: float = None) -> FrameSequence:
    """Read a directory of frames (any footage laid out as sorted images).

    ``linearize_gamma`` undoes a gamma response on load, for footage stored
    display-encoded rather than linear.
    """
    if not os.path.isdir(seq_dir):
        raise DataError(f"sequence directory not found: {seq_dir}")
    names = sorted(n for n in os.listdir(seq_dir) if n.lower().endswith(".png"))
    if not names:
        raise DataError(f"no .png frames in {seq_dir}")
    frames = np.stack([mio.read_image16(os.path.join(seq_dir, n)) for n in names])
    if linearize_gamma:
        frames = np.power(frames, linearize_gamma, dtype=np.float64).astype(np.float32)
    meta = {}
    manifest = os.path.join(seq_dir, "scene.json")
    if os.path.isfile(manifest):
        with open(manifest) as f:
            meta = json.load(f)
    return FrameSequence(frames=frames.astype(np.float32), meta=meta)
