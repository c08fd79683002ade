"""Shared synthetic-benchmark helpers for the statistical test suites.

The default imbalanced benchmark mirrors the package defaults: 5 classes
(1=empty at ~93%, 5=person at 0.7%), the default confusion/sharpness
surrogate, and per-class targets alpha in {0.1, 0.2}.  Sample-level
draws are used where a test pins record counts; grid-level runs go
through the full scene generator and split.
"""

from __future__ import annotations

import numpy as np

from sscuq.conformal import CalibrationSet, HcpConfig
from sscuq.pipeline import split_mask
from sscuq.rng import derive_seed
from sscuq.synth import (
    ClassifierSpec,
    classify_labels,
    default_classifier_spec,
    default_scene_spec,
    draw_labels,
    generate_scene,
    synth_classifier,
)

M = 5
RARE = 5
ALPHA_TARGET = {2: 0.1, 3: 0.1, 4: 0.1, 5: 0.2}


def default_mix() -> np.ndarray:
    """Class fractions 1..M matching the default scene targets."""
    spec = default_scene_spec()
    mix = np.zeros(M)
    for y, f in spec.class_mix.items():
        mix[y - 1] = f
    mix[0] = 1.0 - mix[1:].sum()
    return mix


def sample_benchmark(seed: int, n_cal: int, n_test: int, classifier: ClassifierSpec | None = None):
    """IID labeled softmax draws: (cal_set, test_labels, test_probs)."""
    mix = default_mix()
    cal_labels = draw_labels(n_cal, mix, derive_seed(seed, 101))
    test_labels = draw_labels(n_test, mix, derive_seed(seed, 102))
    spec = classifier or default_classifier_spec(seed=derive_seed(seed, 103))
    cal_probs = classify_labels(cal_labels, spec)
    test_spec = ClassifierSpec(
        confusion=spec.confusion,
        sharpness=spec.sharpness,
        temperature=spec.temperature,
        seed=derive_seed(seed, 104),
    )
    test_probs = classify_labels(test_labels, test_spec)
    return CalibrationSet(cal_probs, cal_labels), test_labels, test_probs


def scene_benchmark(seed: int, split_fraction: float = 0.3):
    """Full grid benchmark: generate, classify, split.

    Returns (world, softmax, cal_set, cal_mask, test_labels, test_probs).
    """
    scene = default_scene_spec(seed=seed)
    world = generate_scene(scene)
    softmax = synth_classifier(world, default_classifier_spec(seed=derive_seed(seed, 105)))
    mask = split_mask(world.labels.size, split_fraction, seed)
    cal = CalibrationSet.from_grids(softmax, world, mask=mask)
    labels = world.flat()
    probs = softmax.flat()
    return world, softmax, cal, mask, labels[~mask], probs[~mask]


def default_hcp_config(alpha_o_rare: float = 0.3, epsilon: float = 0.01) -> HcpConfig:
    return HcpConfig(
        class_count=M,
        rare_set=frozenset({RARE}),
        alpha_o={RARE: alpha_o_rare},
        alpha_target=dict(ALPHA_TARGET),
        epsilon=epsilon,
    )
