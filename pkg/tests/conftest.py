"""Shared fixtures: tiny deterministic scenes and datasets.

Everything here is sized for seconds, not minutes; the acceptance suite
builds its own larger runs with explicit budgets.
"""

import numpy as np
import pytest

from mb2d.blursynth import BlurSpec, make_samples
from mb2d.scenegen import ObjectSpec, SceneSpec, make_random_scene, render_sequence


@pytest.fixture(scope="session")
def tiny_spec():
    return SceneSpec(
        width=48,
        height=48,
        num_frames=24,
        objects=[
            ObjectSpec("disk", 10.0, velocity=(1.0, 0.0), texture_seed=5, start=(12.0, 20.0)),
            ObjectSpec("rect", 8.0, velocity=(-0.5, 1.0), texture_seed=9, start=(34.0, 14.0)),
        ],
        background_seed=3,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_seq(tiny_spec):
    return render_sequence(tiny_spec)


@pytest.fixture(scope="session")
def blur3():
    return BlurSpec(n=3, offsets=(2, 4, 6), crf="identity")


@pytest.fixture(scope="session")
def tiny_samples(tiny_seq, blur3):
    return make_samples(tiny_seq, blur3, provenance="tiny")


@pytest.fixture(scope="session")
def small_dataset():
    """A few small fast-motion scenes through the gamma response, as training sees them."""
    spec = BlurSpec(n=3, offsets=(2, 4, 6), crf="gamma")
    samples = []
    for s in range(3):
        scene = make_random_scene(
            700 + s, width=48, height=48, num_frames=20, n_objects=3,
            speed_range=(1.5, 3.0), size_range=(8, 14), keep_on_canvas=False,
        )
        samples.extend(make_samples(render_sequence(scene), spec, provenance=f"scene{s}"))
    return samples, spec


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
