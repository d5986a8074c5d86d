"""Grouping of multi-annotator boxes into per-object clusters.

Each cluster carries the reference targets used for evaluation, training
and post-hoc calibration: a soft class label over ``0..J`` where annotators
who did not draw the object count as background, the mean box, and a
per-coordinate target variance derived from the spread of member boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import assignment
from .core import Annotation, DatasetMeta, ImageAnnotations, central_z, iou_matrix

DEFAULT_MIN_IOU = 0.5
DEFAULT_GAMMA = 0.999


@dataclass(frozen=True)
class AnnotationCluster:
    members: tuple[Annotation, ...]
    soft_label: np.ndarray
    mean_box: np.ndarray
    min_box: np.ndarray
    max_box: np.ndarray
    annotator_certainty: float
    target_var: np.ndarray

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def boxes(self) -> np.ndarray:
        return np.stack([m.box for m in self.members])


def match_pair(set_a: Sequence, set_b: Sequence, min_iou: float = DEFAULT_MIN_IOU
               ) -> list[tuple[int, int]]:
    """Hungarian matching of two box sets under the ``1 - IoU`` cost.

    Items may be :class:`Annotation` objects or raw 4-vectors. Assigned pairs
    whose IoU falls below ``min_iou`` are dropped after the assignment.
    """
    if len(set_a) == 0 or len(set_b) == 0:
        return []
    ious = iou_matrix(_boxes(set_a), _boxes(set_b))
    return [(i, j) for i, j in assignment.solve(1.0 - ious)
            if ious[i, j] > 0 and ious[i, j] >= min_iou]


def _boxes(items: Sequence) -> np.ndarray:
    return np.stack([getattr(x, "box", x) for x in items]).astype(np.float64)


def soft_class_target(classes: Iterable[int], num_classes: int, num_annotators: int
                      ) -> np.ndarray:
    """Fraction of annotators choosing each class; silent annotators vote 0."""
    counts = [0] * (num_classes + 1)
    n = 0
    for c in classes:
        counts[c] += 1
        n += 1
    if n > num_annotators:
        raise ValueError("more cluster members than annotators")
    counts[0] = num_annotators - n
    return np.array([float(Fraction(c, num_annotators)) for c in counts])


def target_variance(min_box: np.ndarray, max_box: np.ndarray, size: int,
                    num_annotators: int, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Per-coordinate variance whose central interval at the annotator
    certainty level spans the members' min-to-max range."""
    if size < 1:
        raise ValueError("cluster must be non-empty")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    z = central_z(size / num_annotators, gamma)
    spread = np.asarray(max_box, dtype=np.float64) - np.asarray(min_box, dtype=np.float64)
    return (spread / (2.0 * z)) ** 2


def build_cluster(members: Sequence[Annotation], meta: DatasetMeta,
                  gamma: float = DEFAULT_GAMMA) -> AnnotationCluster:
    members = tuple(sorted(members, key=lambda a: a.annotator_id))
    ids = [a.annotator_id for a in members]
    if len(set(ids)) != len(ids):
        raise ValueError("a cluster may hold at most one box per annotator")
    K = meta.num_annotators
    boxes = np.stack([a.box for a in members])
    lo, hi = boxes.min(axis=0), boxes.max(axis=0)
    arrays = dict(
        soft_label=soft_class_target((a.class_id for a in members), meta.num_classes, K),
        mean_box=boxes.mean(axis=0),
        min_box=lo,
        max_box=hi,
        target_var=target_variance(lo, hi, len(members), K, gamma),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return AnnotationCluster(members=members, annotator_certainty=len(members) / K, **arrays)


def cluster_annotations(image: ImageAnnotations, meta: DatasetMeta,
                        min_iou: float = DEFAULT_MIN_IOU,
                        gamma: float = DEFAULT_GAMMA) -> list[AnnotationCluster]:
    """Greedy sequential multipartite matching over annotators.

    Annotators are visited in ascending id. The first one's boxes seed the
    clusters; each later annotator is Hungarian-matched against the running
    cluster mean boxes, matched boxes join their cluster and the rest seed
    new clusters. Within an annotator, boxes keep their file order.
    """
    by_annotator: dict[int, list[Annotation]] = {}
    for a in image.annotations:
        by_annotator.setdefault(a.annotator_id, []).append(a)

    groups: list[list[Annotation]] = []
    means: list[np.ndarray] = []
    for k in sorted(by_annotator):
        anns = by_annotator[k]
        pairs = match_pair(means, anns, min_iou) if means else []
        matched = set()
        for h, m in pairs:
            groups[h].append(anns[m])
            n = len(groups[h])
            means[h] = means[h] + (anns[m].box - means[h]) / n
            matched.add(m)
        for m, a in enumerate(anns):
            if m not in matched:
                groups.append([a])
                means.append(a.box.copy())
    return [build_cluster(g, meta, gamma) for g in groups]


def cluster_dataset(images: Sequence[ImageAnnotations], meta: DatasetMeta,
                    min_iou: float = DEFAULT_MIN_IOU, gamma: float = DEFAULT_GAMMA
                    ) -> dict[str, list[AnnotationCluster]]:
    return {im.image_id: cluster_annotations(im, meta, min_iou, gamma) for im in images}


def krippendorff_alpha(clustered: Iterable[Sequence[AnnotationCluster]],
                       meta: DatasetMeta) -> float | None:
    """Nominal Krippendorff's alpha with clusters as units.

    Annotators absent from a cluster are coded as having labelled it
    background (class 0), so every unit carries ``K`` values. Returns
    ``None`` when fewer than two pairable values exist.
    """
    K = meta.num_annotators
    size = meta.num_classes + 1
    coincidence = np.zeros((size, size))
    for clusters in clustered:
        for cl in clusters:
            counts = np.zeros(size)
            for a in cl.members:
                counts[a.class_id] += 1
            counts[0] += K - len(cl.members)
            # ordered pairs of values from different coders within the unit
            pairs = np.outer(counts, counts) - np.diag(counts)
            coincidence += pairs / (K - 1)

    n_c = coincidence.sum(axis=1)
    n = n_c.sum()
    if n < 2:
        return None
    observed = coincidence.sum() - np.trace(coincidence)
    expected = n_c.sum() ** 2 - np.sum(n_c ** 2)
    if expected == 0:
        return 1.0
    return float(1.0 - (n - 1) * observed / expected)


def clusters_to_dict(meta: DatasetMeta, clustered: dict[str, list[AnnotationCluster]],
                     gamma: float = DEFAULT_GAMMA) -> dict:
    images = []
    for image_id in sorted(clustered):
        images.append({"image_id": image_id, "clusters": [
            {
                "members": [a.to_dict() for a in cl.members],
                "soft_label": cl.soft_label.tolist(),
                "mean_box": cl.mean_box.tolist(),
                "min_box": cl.min_box.tolist(),
                "max_box": cl.max_box.tolist(),
                "annotator_certainty": cl.annotator_certainty,
                "target_var": cl.target_var.tolist(),
            } for cl in clustered[image_id]]})
    return {"meta": meta.to_dict(), "gamma": gamma, "images": images}


def clusters_from_dict(doc: dict) -> tuple[DatasetMeta, dict[str, list[AnnotationCluster]]]:
    """Rebuild clusters from their members; derived fields are recomputed."""
    meta = DatasetMeta.from_dict(doc["meta"])
    gamma = float(doc.get("gamma", DEFAULT_GAMMA))
    out = {}
    for im in doc["images"]:
        out[str(im["image_id"])] = [
            build_cluster([Annotation(m["box"], int(m["class_id"]), int(m["annotator_id"]))
                           for m in cl["members"]], meta, gamma)
            for cl in im["clusters"]]
    return meta, out
