"""Deterministic synthetic worlds, depth renders, and classifier surrogates.

Everything here is a pure function of (inputs, seed) through the
counter-based generator in :mod:`sscuq.rng`, so grids, depth maps, and
softmax outputs reproduce exactly across runs and platforms.  The
default scene targets the heavy class imbalance of street-scene voxel
datasets (about 93% empty, person well under 1%), which is what makes
the conformal guarantees downstream worth testing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import rng
from .grids import (
    CameraIntrinsics,
    DepthEstimate,
    GridGeometry,
    GroundTruthDepth,
    LabelGrid,
    SoftmaxGrid,
    ValidationError,
)
from .projection import _ray_segments, ray_direction

__all__ = [
    "GenerationError",
    "ObjectTemplate",
    "SceneSpec",
    "ClassifierSpec",
    "default_geometry",
    "default_intrinsics",
    "default_scene_spec",
    "default_classifier_spec",
    "generate_scene",
    "render_depth",
    "synth_classifier",
    "draw_labels",
    "classify_labels",
]

# substream tags (see rng.derive_seed)
_TAG_SCENE = 1
_TAG_TARGET = 2
_TAG_GUMBEL = 3
_TAG_DEPTH = 4
_TAG_LABELS = 5


class GenerationError(RuntimeError):
    """The scene spec cannot be realized in the given geometry."""


@dataclass(frozen=True)
class ObjectTemplate:
    """One object family: its class, shape kind, and size ranges in meters.

    ``kind`` is ``slab`` (full-footprint layer at the grid bottom),
    ``box`` (axis-aligned cuboid resting on the support level), or
    ``column`` (1x1-footprint vertical bar on the support level).
    ``size`` gives inclusive (min, max) extents per world axis (x, y, z).
    """

    class_id: int
    kind: str
    size: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        if self.kind not in ("slab", "box", "column"):
            raise ValidationError(f"unknown template kind {self.kind!r}")
        if self.class_id < 2:
            raise ValidationError("templates describe nonempty classes only")
        for lo, hi in self.size:
            if not (0 < lo <= hi):
                raise ValidationError("size ranges must be positive and ordered")


@dataclass(frozen=True)
class SceneSpec:
    """Scene recipe: geometry, target class fractions, object templates."""

    geometry: GridGeometry
    class_count: int
    class_mix: Mapping[int, float]
    templates: tuple[ObjectTemplate, ...]
    seed: int = 0

    def __post_init__(self):
        mix = {int(y): float(f) for y, f in dict(self.class_mix).items()}
        if any(y < 2 or y > self.class_count for y in mix):
            raise ValidationError("class_mix keys must be nonempty classes")
        if any(f < 0 for f in mix.values()):
            raise ValidationError("class fractions must be non-negative")
        if sum(mix.values()) > 1.0:
            raise ValidationError("occupied fractions must sum to at most 1")
        object.__setattr__(self, "class_mix", mix)
        object.__setattr__(self, "templates", tuple(self.templates))
        if any(t.class_id > self.class_count for t in self.templates):
            raise ValidationError("template class ids exceed class_count")

    @property
    def empty_fraction(self) -> float:
        return 1.0 - sum(self.class_mix.values())


@dataclass(frozen=True)
class ClassifierSpec:
    """Surrogate softmax model: confusion-driven target draw plus
    Gumbel-perturbed logits, then temperature scaling.

    For a voxel with true class i, a target class j is drawn from row i
    of ``confusion``; the output is ``softmax((sharpness_i * e_j + g) / T)``
    with i.i.d. standard Gumbel noise g.  ``sharpness`` is a single
    concentration or one per true class; temperatures above 1 soften
    (miscalibrate) every vector without changing its argmax.
    """

    confusion: np.ndarray
    sharpness: float | Sequence[float]
    temperature: float
    seed: int = 0

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.float64)
        if conf.ndim != 2 or conf.shape[0] != conf.shape[1] or conf.shape[0] < 2:
            raise ValidationError("confusion must be a square matrix, M >= 2")
        if np.any(conf < 0) or np.any(np.abs(conf.sum(axis=1) - 1.0) > 1e-9):
            raise ValidationError("confusion rows must be probability vectors")
        conf = np.ascontiguousarray(conf)
        conf.setflags(write=False)
        object.__setattr__(self, "confusion", conf)
        sharp = np.asarray(self.sharpness, dtype=np.float64)
        if sharp.ndim == 0:
            sharp = np.full(conf.shape[0], float(sharp))
        if sharp.shape != (conf.shape[0],) or np.any(sharp <= 0):
            raise ValidationError("sharpness must be positive, scalar or one per class")
        sharp = np.ascontiguousarray(sharp)
        sharp.setflags(write=False)
        object.__setattr__(self, "sharpness", sharp)
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")

    @property
    def class_count(self) -> int:
        return self.confusion.shape[0]


def default_geometry() -> GridGeometry:
    """64 x 64 x 16 voxels of 0.2 m; camera 1.4 m above the ground layer."""
    return GridGeometry(dims=(64, 64, 16), voxel_edge=0.2, origin=(-11.2, -6.4, 0.4))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(f_u=24.0, f_v=24.0, c_h=31.5, c_w=31.5, height=64, width=64)


def default_scene_spec(seed: int = 0) -> SceneSpec:
    """Street-like toy scene: ground layer, buildings, cars, sparse persons."""
    return SceneSpec(
        geometry=default_geometry(),
        class_count=5,
        class_mix={2: 0.0156, 3: 0.030, 4: 0.0164, 5: 0.007},
        templates=(
            ObjectTemplate(2, "slab", ((0.2, 0.2), (12.8, 12.8), (3.2, 3.2))),
            ObjectTemplate(3, "box", ((2.0, 3.0), (1.0, 2.0), (1.0, 2.0))),
            ObjectTemplate(4, "box", ((0.6, 0.8), (1.8, 2.4), (0.8, 1.2))),
            ObjectTemplate(5, "column", ((1.0, 1.8), (0.2, 0.2), (0.2, 0.2))),
        ),
        seed=seed,
    )


def default_classifier_spec(seed: int = 0) -> ClassifierSpec:
    """Imbalance-shaped surrogate for the default 5-class scene.

    Empty-class errors leak almost entirely into the ground class; the
    person class is frequently smeared toward car/empty but predicted
    very sharply when recognized as occupied.  Temperature 1.5 keeps
    every output miscalibrated so calibration has real work to do.
    """
    confusion = np.array(
        [
            [0.965, 0.020, 0.006, 0.005, 0.004],
            [0.020, 0.940, 0.020, 0.015, 0.005],
            [0.030, 0.030, 0.910, 0.025, 0.005],
            [0.030, 0.020, 0.030, 0.880, 0.040],
            [0.150, 0.050, 0.050, 0.250, 0.500],
        ]
    )
    return ClassifierSpec(
        confusion=confusion,
        sharpness=(3.0, 3.2, 3.2, 3.2, 8.5),
        temperature=1.5,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# scene generation


def _voxels(meters: float, edge: float) -> int:
    return max(1, int(round(meters / edge)))


def generate_scene(spec: SceneSpec) -> LabelGrid:
    """Place templates until each class reaches its target voxel fraction.

    Objects rest on the ground layer (or the grid floor when there is no
    slab), are rejected when they would overlap anything, and placement
    stops inside a +/-20% budget window around each class target.
    Deterministic in ``spec.seed``.
    """
    geom = spec.geometry
    u_n, v_n, d_n = geom.dims
    edge = geom.voxel_edge
    total = geom.voxel_count
    labels = np.ones(geom.dims, dtype=np.uint16)
    stream = rng.derive_seed(spec.seed, _TAG_SCENE)
    counter = 0

    def draw() -> float:
        nonlocal counter
        value = float(rng.uniforms(stream, [counter])[0])
        counter += 1
        return value

    def draw_size(lo: float, hi: float) -> int:
        return _voxels(lo + (hi - lo) * draw(), edge)

    support = u_n - 1  # index of the highest row objects may occupy
    for tpl in spec.templates:
        target = spec.class_mix.get(tpl.class_id, 0.0) * total
        if target <= 0:
            continue
        if tpl.kind == "slab":
            thickness = min(_voxels(tpl.size[0][0], edge), u_n)
            region = labels[u_n - thickness :, :, :]
            if not np.all(region == 1):
                raise GenerationError("ground layer would overlap placed objects")
            region[:] = tpl.class_id
            support = u_n - thickness - 1
            continue

        placed = 0
        budget_lo = 0.9 * target
        budget_hi = 1.2 * target
        attempts = 0
        while placed < budget_lo:
            attempts += 1
            if attempts > 2000:
                raise GenerationError(
                    f"template for class {tpl.class_id} cannot fit its target"
                )
            h = draw_size(*tpl.size[0])
            wy = 1 if tpl.kind == "column" else draw_size(*tpl.size[1])
            wz = 1 if tpl.kind == "column" else draw_size(*tpl.size[2])
            if h > support + 1 or wy > v_n or wz > d_n:
                continue
            if placed + h * wy * wz > budget_hi:
                continue
            v0 = int(draw() * (v_n - wy + 1))
            d0 = int(draw() * (d_n - wz + 1))
            u0 = support - h + 1
            region = labels[u0 : support + 1, v0 : v0 + wy, d0 : d0 + wz]
            if not np.all(region == 1):
                continue
            region[:] = tpl.class_id
            placed += h * wy * wz

    for y, frac in spec.class_mix.items():
        if frac < 0.005:
            continue
        realized = np.count_nonzero(labels == y) / total
        if not 0.8 * frac <= realized <= 1.2 * frac:
            raise GenerationError(
                f"class {y} realized fraction {realized:.4f} is outside "
                f"+/-20% of target {frac:.4f}"
            )
    return LabelGrid(labels, class_count=spec.class_count)


# ---------------------------------------------------------------------------
# depth rendering


def render_depth(
    world: LabelGrid,
    intr: CameraIntrinsics,
    geom: GridGeometry,
    noise_a: float,
    noise_b: float,
    seed: int = 0,
):
    """Ray-cast true depths and simulate a calibrated noisy estimator.

    The true depth of a pixel is the entry depth of the first occupied
    voxel its ray crosses; rays that hit nothing give invalid pixels.
    The estimate adds Gaussian noise with standard deviation
    ``sigma(d) = noise_a + noise_b * d`` and reports exactly that sigma,
    so standardized residuals are standard normal by construction.
    """
    if noise_a < 0 or noise_b < 0 or noise_a + noise_b <= 0:
        raise ValueError("need noise_a, noise_b >= 0 with a positive sum")
    if world.dims != geom.dims:
        raise ValueError(f"world dims {world.dims} != geometry dims {geom.dims}")
    height, width = intr.height, intr.width
    depth = np.zeros((height, width), dtype=np.float64)
    valid = np.zeros((height, width), dtype=bool)
    occupied = world.occupied_mask()
    for h in range(height):
        for w in range(width):
            idx, z_lo, _ = _ray_segments(ray_direction(h, w, intr), geom, np.inf)
            if idx.shape[0] == 0:
                continue
            hit = occupied[idx[:, 0], idx[:, 1], idx[:, 2]]
            k = np.argmax(hit)
            if hit[k]:
                depth[h, w] = z_lo[k]
                valid[h, w] = True
    gt = GroundTruthDepth(depth, valid)

    sigma = noise_a + noise_b * depth
    noise = rng.normals(rng.derive_seed(seed, _TAG_DEPTH), np.arange(depth.size))
    mean = depth + sigma * noise.reshape(depth.shape)
    est_valid = valid & (mean > 0)
    mean = np.where(est_valid, mean, 0.0)
    sigma = np.where(est_valid, sigma, 0.0)
    return gt, DepthEstimate(mean, sigma, est_valid)


# ---------------------------------------------------------------------------
# classifier surrogate


def draw_labels(n: int, fractions: Sequence[float], seed: int) -> np.ndarray:
    """IID labels 1..M with the given class probabilities (must sum to 1)."""
    fractions = np.asarray(fractions, dtype=np.float64)
    if np.any(fractions < 0) or abs(fractions.sum() - 1.0) > 1e-9:
        raise ValueError("fractions must be a probability vector")
    u = rng.uniforms(rng.derive_seed(seed, _TAG_LABELS), np.arange(n))
    cdf = np.cumsum(fractions)
    return 1 + np.searchsorted(cdf[:-1], u, side="right").astype(np.int64)


def classify_labels(labels: np.ndarray, spec: ClassifierSpec) -> np.ndarray:
    """Softmax vectors (N, M) for a flat label array, one i.i.d. draw per row.

    Rows with the same label are exchangeable by construction (each row
    uses its own counters of the seed's streams), which is what the
    conformal coverage guarantees downstream assume.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    m = spec.class_count
    if labels.size and (labels.min() < 1 or labels.max() > m):
        raise ValueError(f"labels must lie in 1..{m}")
    n = labels.size
    u = rng.uniforms(rng.derive_seed(spec.seed, _TAG_TARGET), np.arange(n))
    cdf = np.cumsum(spec.confusion, axis=1)[labels - 1]
    target = (u[:, None] > cdf[:, :-1]).sum(axis=1)

    logits = rng.gumbels(
        rng.derive_seed(spec.seed, _TAG_GUMBEL), np.arange(n * m)
    ).reshape(n, m)
    logits[np.arange(n), target] += spec.sharpness[labels - 1]
    logits /= spec.temperature
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs


def synth_classifier(world: LabelGrid, spec: ClassifierSpec) -> SoftmaxGrid:
    """Apply the surrogate classifier voxelwise to a label grid."""
    if spec.class_count != world.class_count:
        raise ValidationError(
            f"classifier has {spec.class_count} classes, world {world.class_count}"
        )
    probs = classify_labels(world.flat(), spec)
    return SoftmaxGrid(probs.reshape(world.dims + (spec.class_count,)).astype(np.float32))
