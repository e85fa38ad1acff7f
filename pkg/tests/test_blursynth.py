"""Blur synthesis: oracle equivalence, window bookkeeping, dataset IO."""

import numpy as np
import pytest

from mb2d.blursynth import (
    BlurSpec,
    apply_crf,
    load_dataset,
    make_samples,
    min_sequence_length,
    save_dataset,
    synthesize_blur,
)
from mb2d.errors import DataError
from mb2d.scenegen import FrameSequence


from oracles import naive_blur


def _random_seq(rng, t=12, h=10, w=9):
    return FrameSequence(frames=rng.random((t, h, w, 3), dtype=np.float32), meta={})


def test_matches_naive_oracle(rng):
    for crf in ("identity", "gamma"):
        for _ in range(5):
            seq = _random_seq(rng)
            for m in (1, 3, 5, 7):
                c = int(rng.integers(m // 2, len(seq) - m // 2))
                got = synthesize_blur(seq, c, m, crf)
                assert got.dtype == np.float32
                assert np.abs(got - naive_blur(seq.frames, c, m, crf)).max() < 1e-6


def test_static_sequence_blur_is_identity():
    frame = np.full((6, 6, 3), 0.25, np.float32)
    seq = FrameSequence(frames=np.repeat(frame[None], 9, axis=0), meta={})
    for m in (1, 3, 9):
        np.testing.assert_allclose(synthesize_blur(seq, 4, m, "identity"), frame, atol=1e-7)
    np.testing.assert_allclose(
        synthesize_blur(seq, 4, 3, "gamma"), 0.25 ** (1 / 2.2), atol=1e-6
    )


def test_window_bounds_raise(rng):
    seq = _random_seq(rng, t=8)
    with pytest.raises(IndexError):
        synthesize_blur(seq, 1, 5, "identity")  # lo = -1
    with pytest.raises(IndexError):
        synthesize_blur(seq, 7, 3, "identity")  # hi = 8
    with pytest.raises(ValueError):
        synthesize_blur(seq, 4, 4, "identity")  # even exposure


def test_apply_crf():
    x = np.array([0.0, 0.25, 1.0])
    np.testing.assert_array_equal(apply_crf(x, "identity"), x)
    np.testing.assert_allclose(apply_crf(x, "gamma"), x ** (1 / 2.2))
    with pytest.raises(ValueError):
        apply_crf(x, "srgb")


def test_blurspec_validation():
    for bad in (
        dict(n=2),
        dict(n=1),
        dict(offsets=()),
        dict(offsets=(3,)),
        dict(offsets=(4, 2)),
        dict(offsets=(2, 2)),
        dict(crf="log"),
        dict(gamma=0.0),
    ):
        with pytest.raises(ValueError):
            BlurSpec(**bad)
    assert BlurSpec(n=3, offsets=(2, 6)).exposures == (5, 9)


def test_sample_windows_share_latent_frame(tiny_seq, blur3):
    """Every image in a sample must be re-derivable from one reference frame."""
    samples = make_samples(tiny_seq, blur3)
    assert samples
    n = blur3.n
    for s in samples:
        for d in (-1, 0, 1):
            np.testing.assert_array_equal(
                s.inputs[d + 1], synthesize_blur(tiny_seq, n * (s.t + d), n, blur3.crf)
            )
        np.testing.assert_array_equal(s.sharp_gt, synthesize_blur(tiny_seq, n * s.t, 1, blur3.crf))
        np.testing.assert_array_equal(s.center_input, s.inputs[1])
        for k, m in enumerate(blur3.exposures):
            np.testing.assert_array_equal(
                s.more_blur_targets[k], synthesize_blur(tiny_seq, n * s.t, m, blur3.crf)
            )


def test_sample_count_and_t_range(tiny_seq, blur3):
    samples = make_samples(tiny_seq, blur3)
    # 24 frames, n=3, widest window 3t +- 4 and inputs 3(t+1) +- 1: t in 2..6
    assert [s.t for s in samples] == [2, 3, 4, 5, 6]


def test_min_sequence_length_is_tight(rng):
    spec = BlurSpec(n=3, offsets=(2, 4))
    need = min_sequence_length(spec)
    with pytest.raises(DataError):
        make_samples(_random_seq(rng, t=need - 1), spec)
    assert make_samples(_random_seq(rng, t=need), spec)


def test_save_load_roundtrip(tmp_path, tiny_seq, blur3):
    root = str(tmp_path / "data")
    manifest = save_dataset(root, {"seq0": tiny_seq}, blur3)
    direct = make_samples(tiny_seq, blur3)
    assert len(manifest["samples"]) == len(direct)
    back, spec = load_dataset(root)
    assert spec.to_dict() == blur3.to_dict()
    for a, b in zip(back, direct):
        assert a.t == b.t
        assert np.abs(a.inputs - b.inputs).max() <= 0.5 / 65535 + 1e-9
        assert np.abs(a.sharp_gt - b.sharp_gt).max() <= 0.5 / 65535 + 1e-9
        assert np.abs(a.more_blur_targets - b.more_blur_targets).max() <= 0.5 / 65535 + 1e-9


def test_shared_input_frames_written_once(tmp_path, tiny_seq, blur3):
    root = str(tmp_path / "data")
    save_dataset(root, {"seq0": tiny_seq}, blur3)
    files = sorted(p.name for p in (tmp_path / "data" / "seq0" / "input").iterdir())
    # consecutive samples overlap on two of three exposure-n inputs
    ts = [s.t for s in make_samples(tiny_seq, blur3)]
    expect = sorted({f"B{blur3.n}_{t + d}.png" for t in ts for d in (-1, 0, 1)})
    assert files == expect


def test_load_missing_manifest_raises(tmp_path):
    with pytest.raises(DataError):
        load_dataset(str(tmp_path / "nope"))
