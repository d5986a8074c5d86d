"""Synthetic multi-annotator datasets and synthetic detectors.

Latent objects are drawn per image and each simulated annotator observes
them through its own noisy channel: it may miss an object, flip its class
uniformly to another class, jitter the corners, and add spurious boxes.
Random draws come from generators keyed by
``(seed, image, annotator, object, purpose)``, so every draw is independent
of iteration order.

The latent truth is returned separately and only tests should look at it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import Annotation, DatasetMeta, ImageAnnotations, Prediction, iou_matrix
from .preprocess import AnnotationCluster

# draw purposes
_LAYOUT, _MISS, _CLASS, _JITTER, _SPURIOUS = range(5)


@dataclass(frozen=True)
class AnnotatorProfile:
    annotator_id: int
    class_accuracy: float = 1.0
    miss_rate: float = 0.0
    box_jitter_sigma: float = 0.0
    spurious_rate: float = 0.0

    def __post_init__(self):
        for name in ("class_accuracy", "miss_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.box_jitter_sigma < 0 or self.spurious_rate < 0:
            raise ValueError("jitter and spurious rate must be nonnegative")


@dataclass(frozen=True)
class SimulationConfig:
    seed: int
    num_images: int
    num_classes: int
    profiles: tuple[AnnotatorProfile, ...]
    min_objects: int = 1
    max_objects: int = 5
    image_size: tuple[float, float] = (640.0, 480.0)
    size_range: tuple[float, float] = (0.08, 0.3)
    separated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        ids = [p.annotator_id for p in self.profiles]
        if sorted(ids) != list(range(1, len(ids) + 1)):
            raise ValueError("annotator ids must be 1..K")
        if not 0 <= self.min_objects <= self.max_objects:
            raise ValueError("need 0 <= min_objects <= max_objects")

    @property
    def meta(self) -> DatasetMeta:
        return DatasetMeta(self.num_classes, len(self.profiles))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["profiles"] = [asdict(p) for p in self.profiles]
        d["image_size"] = list(self.image_size)
        d["size_range"] = list(self.size_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        d = dict(d)
        d["profiles"] = tuple(AnnotatorProfile(**p) for p in d["profiles"])
        for key in ("image_size", "size_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def voc_mix_profiles(num_annotators: int = 25, num_high: int = 5, high: float = 0.74,
                     average: float = 0.55, **channel) -> tuple[AnnotatorProfile, ...]:
    """A few high-accuracy annotators followed by average ones; ``channel``
    sets the remaining noise parameters for everybody."""
    return tuple(
        AnnotatorProfile(k, high if k <= num_high else average, **channel)
        for k in range(1, num_annotators + 1))


@dataclass
class LatentObject:
    box: np.ndarray
    class_id: int


@dataclass
class LatentImage:
    image_id: str
    objects: list[LatentObject] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"image_id": self.image_id,
                "objects": [{"box": o.box.tolist(), "class_id": o.class_id}
                            for o in self.objects]}


def _rng(seed: int, image: int, annotator: int, obj: int, purpose: int):
    return np.random.default_rng([seed, image, annotator, obj, purpose])


def _random_box(rng, width, height, size_range):
    w = rng.uniform(*size_range) * width
    h = rng.uniform(*size_range) * height
    x1 = rng.uniform(0, width - w)
    y1 = rng.uniform(0, height - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def _latent_objects(config: SimulationConfig, index: int) -> list[LatentObject]:
    width, height = config.image_size
    rng = _rng(config.seed, index, 0, 0, _LAYOUT)
    target = int(rng.integers(config.min_objects, config.max_objects + 1))
    boxes: list[np.ndarray] = []
    for _ in range(50 * max(target, 1)):
        if len(boxes) == target:
            break
        box = _random_box(rng, width, height, config.size_range)
        if config.separated and boxes and iou_matrix(box, np.stack(boxes)).max() > 0:
            continue
        boxes.append(box)
    classes = rng.integers(1, config.num_classes + 1, size=len(boxes))
    return [LatentObject(b, int(c)) for b, c in zip(boxes, classes)]


def _observe(box, class_id, profile, config, index, obj):
    seed, k, J = config.seed, profile.annotator_id, config.num_classes
    if _rng(seed, index, k, obj, _MISS).random() < profile.miss_rate:
        return None
    rng = _rng(seed, index, k, obj, _CLASS)
    if J > 1 and rng.random() >= profile.class_accuracy:
        flipped = int(rng.integers(1, J))
        class_id = flipped + (flipped >= class_id)
    if profile.box_jitter_sigma > 0:
        rng = _rng(seed, index, k, obj, _JITTER)
        w, h = box[2] - box[0], box[3] - box[1]
        noisy = box + rng.normal(size=4) * profile.box_jitter_sigma * np.array([w, h, w, h])
        x1, x2 = sorted(noisy[[0, 2]])
        y1, y2 = sorted(noisy[[1, 3]])
        width, height = config.image_size
        x1, x2 = np.clip([x1, x2], 0, width)
        y1, y2 = np.clip([y1, y2], 0, height)
        if x1 < x2 and y1 < y2:
            box = np.array([x1, y1, x2, y2])
    return Annotation(box, class_id, k)


def simulate_image(config: SimulationConfig, index: int
                   ) -> tuple[LatentImage, ImageAnnotations]:
    image_id = f"img_{index:05d}"
    objects = _latent_objects(config, index)
    width, height = config.image_size
    anns = []
    for profile in config.profiles:
        for obj, o in enumerate(objects):
            a = _observe(o.box, o.class_id, profile, config, index, obj)
            if a is not None:
                anns.append(a)
        if profile.spurious_rate > 0:
            rng = _rng(config.seed, index, profile.annotator_id, 0, _SPURIOUS)
            for _ in range(rng.poisson(profile.spurious_rate)):
                box = _random_box(rng, width, height, config.size_range)
                anns.append(Annotation(box, int(rng.integers(1, config.num_classes + 1)),
                                       profile.annotator_id))
    return (LatentImage(image_id, objects),
            ImageAnnotations(image_id, width, height, tuple(anns)))


def simulate_dataset(config: SimulationConfig
                     ) -> tuple[list[LatentImage], list[ImageAnnotations]]:
    latent, images = [], []
    for i in range(config.num_images):
        lat, im = simulate_image(config, i)
        latent.append(lat)
        images.append(im)
    return latent, images


def latent_to_dict(config: SimulationConfig, latent: Sequence[LatentImage]) -> dict:
    return {"seed": config.seed, "images": [lat.to_dict() for lat in latent]}


def oracle_prediction(image_id: str, cluster: AnnotationCluster, num_annotators: int,
                      beta: float = 1.0, var_scale: float = 1.0,
                      var_floor: float = 1e-6) -> Prediction:
    """The prediction that reproduces the cluster targets, optionally with
    the class distribution sharpened or flattened (``p ** beta``) and the
    variances scaled."""
    probs = cluster.soft_label ** beta
    probs = probs / probs.sum()
    return Prediction(
        image_id=image_id,
        mean=cluster.mean_box,
        var=var_scale * np.maximum(cluster.target_var, var_floor),
        class_probs=probs,
        certainty=cluster.size / num_annotators,
    )


def simulate_predictions(clustered: Mapping[str, Sequence[AnnotationCluster]],
                         num_annotators: int, beta: float = 1.0, var_scale: float = 1.0,
                         var_floor: float = 1e-6) -> list[Prediction]:
    """One oracle-derived prediction per cluster, in image-id order."""
    if beta <= 0 or var_scale <= 0:
        raise ValueError("beta and var_scale must be positive")
    return [oracle_prediction(image_id, cl, num_annotators, beta, var_scale, var_floor)
            for image_id in sorted(clustered)
            for cl in clustered[image_id]]
