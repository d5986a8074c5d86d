"""Ground-truth-free calibration metrics for probabilistic detectors.

All four metrics lie in [0, 1] with 0 meaning the detector reproduces the
annotators' disagreement exactly:

* ``tvd`` - total variation distance between soft labels and predicted class
  probabilities over matched and missed clusters,
* ``tvd_fp`` - the same distance for unmatched predictions, whose target is
  pure background,
* ``lue`` - gap between prediction certainty and the share of member boxes
  falling inside the certainty-level box interval, over matched pairs,
* ``fne`` - mean annotator agreement of clusters the detector missed.

Dataset-level values pool the TP/FP/FN sets of all images before averaging.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import DatasetMeta, ImageAnnotations, MetricsReport, Prediction, central_z
from .matching import DEFAULT_VAR_FLOOR, MatchOutcome, match_predictions
from .preprocess import DEFAULT_GAMMA, DEFAULT_MIN_IOU, AnnotationCluster, cluster_annotations

METRIC_NAMES = ("tvd", "tvd_fp", "lue", "fne")
BIN_KINDS = ("class_label", "bounding_box")


@dataclass(frozen=True)
class EvalConfig:
    min_iou: float = DEFAULT_MIN_IOU
    gamma: float = DEFAULT_GAMMA
    var_floor: float = DEFAULT_VAR_FLOOR
    match_mode: str = "void"
    weights: tuple[float, float, float, float] | None = None
    min_certainty: float | None = None
    per_image: bool = False


def tvd_pair(t: np.ndarray, p: np.ndarray) -> float:
    return float(0.5 * np.abs(np.asarray(t) - np.asarray(p)).sum())


def _background(size: int) -> np.ndarray:
    e = np.zeros(size)
    e[0] = 1.0
    return e


def tvd_terms(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
              preds: Sequence[Prediction]) -> tuple[list[float], list[float]]:
    """Per-instance TVD values for TP and FN (first list) and FP (second)."""
    main = [tvd_pair(clusters[h].soft_label, preds[n].class_probs) for n, h in outcome.tp]
    for h in outcome.fn:
        t = clusters[h].soft_label
        main.append(tvd_pair(t, _background(t.shape[0])))
    fp = []
    for n in outcome.fp:
        p = preds[n].class_probs
        fp.append(tvd_pair(_background(p.shape[0]), p))
    return main, fp


def tvd_metrics(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
                preds: Sequence[Prediction]) -> tuple[float, float]:
    main, fp = tvd_terms(outcome, clusters, preds)
    return _mean(main, 0.0), _mean(fp, 0.0)


def box_interval(pred: Prediction, gamma: float = DEFAULT_GAMMA
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Central Gaussian interval at the prediction's certainty level."""
    half = central_z(pred.certainty, gamma) * np.sqrt(pred.var)
    return pred.mean - half, pred.mean + half


def coverage(cluster: AnnotationCluster, pred: Prediction, gamma: float = DEFAULT_GAMMA
             ) -> float:
    """Share of member boxes strictly inside the interval on all coordinates."""
    lo, hi = box_interval(pred, gamma)
    b = cluster.boxes
    inside = np.all((lo < b) & (b < hi), axis=1)
    return float(inside.mean())


def lue_terms(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
              preds: Sequence[Prediction], gamma: float = DEFAULT_GAMMA) -> list[float]:
    return [abs(preds[n].certainty - coverage(clusters[h], preds[n], gamma))
            for n, h in outcome.tp]


def lue(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
        preds: Sequence[Prediction], gamma: float = DEFAULT_GAMMA) -> float | None:
    """Localization uncertainty error; ``None`` when there is no TP."""
    return _mean(lue_terms(outcome, clusters, preds, gamma), None)


def fne_terms(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
              num_annotators: int) -> list[float]:
    return [clusters[h].size / num_annotators for h in outcome.fn]


def fne(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
        num_annotators: int) -> float:
    return _mean(fne_terms(outcome, clusters, num_annotators), 0.0)


def aggregate_mean(tvd: float, tvd_fp: float, lue: float | None, fne: float,
                   weights: Sequence[float] | None = None) -> float:
    """One minus the weighted geometric mean of the metric complements.

    Undefined metrics (``None``) are left out and the remaining weights
    renormalised.
    """
    values = (tvd, tvd_fp, lue, fne)
    weights = (1.0,) * 4 if weights is None else tuple(weights)
    if len(weights) != 4 or any(w <= 0 for w in weights):
        raise ValueError("weights must be four positive numbers")
    kept = [(m, w) for m, w in zip(values, weights) if m is not None]
    total = sum(w for _, w in kept)
    prod = 1.0
    for m, w in kept:
        prod *= (1.0 - m) ** (w / total)
    return float(min(max(1.0 - prod, 0.0), 1.0))


def _mean(xs, empty):
    return float(np.mean(xs)) if len(xs) else empty


# -- reliability diagrams -----------------------------------------------------

@dataclass
class ReliabilityBins:
    edges: np.ndarray
    mean_confidence: np.ndarray
    mean_agreement: np.ndarray
    sample_fraction: np.ndarray
    counts: np.ndarray
    kind: str

    def rows(self):
        for i in range(len(self.counts)):
            yield (self.edges[i], self.edges[i + 1], self.mean_confidence[i],
                   self.mean_agreement[i], self.sample_fraction[i])


def reliability_bins(confidence: Sequence[float], agreement: Sequence[float],
                     bins: int = 10, kind: str = "class_label") -> ReliabilityBins:
    """Equal-width binning of (confidence, agreement) samples on [0, 1].

    Empty bins get NaN means and zero sample fraction.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if kind not in BIN_KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    conf = np.asarray(confidence, dtype=np.float64)
    agree = np.asarray(agreement, dtype=np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip((conf * bins).astype(int), 0, bins - 1)
    counts = np.bincount(idx, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.bincount(idx, conf, minlength=bins) / counts
        mean_agree = np.bincount(idx, agree, minlength=bins) / counts
    frac = counts / counts.sum() if counts.sum() else np.zeros(bins)
    return ReliabilityBins(edges, mean_conf, mean_agree, frac, counts, kind)


def class_reliability_samples(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
                              preds: Sequence[Prediction]) -> tuple[list, list]:
    """(confidence, agreement) over TP and FN.

    Confidence is the top foreground probability; agreement is the share of
    annotators who chose that class. A missed cluster has no predicted
    foreground class, so it contributes confidence 0 and agreement 0.
    """
    conf, agree = [], []
    for n, h in outcome.tp:
        p = preds[n].class_probs
        j = 1 + int(np.argmax(p[1:]))
        conf.append(float(p[j]))
        agree.append(float(clusters[h].soft_label[j]))
    conf.extend([0.0] * len(outcome.fn))
    agree.extend([0.0] * len(outcome.fn))
    return conf, agree


def box_reliability_samples(outcome: MatchOutcome, clusters: Sequence[AnnotationCluster],
                            preds: Sequence[Prediction], gamma: float = DEFAULT_GAMMA
                            ) -> tuple[list, list]:
    conf = [preds[n].certainty for n, _ in outcome.tp]
    agree = [coverage(clusters[h], preds[n], gamma) for n, h in outcome.tp]
    return conf, agree


# -- dataset level ------------------------------------------------------------

@dataclass
class ImageResult:
    image_id: str
    clusters: list[AnnotationCluster]
    preds: list[Prediction]
    outcome: MatchOutcome


@dataclass
class DatasetMatch:
    meta: DatasetMeta
    config: EvalConfig
    images: list[ImageResult]
    unknown_images: list[str] = field(default_factory=list)

    def terms(self, result: ImageResult | None = None) -> dict[str, list[float]]:
        selected = self.images if result is None else [result]
        out = {name: [] for name in METRIC_NAMES}
        for r in selected:
            main, fp = tvd_terms(r.outcome, r.clusters, r.preds)
            out["tvd"] += main
            out["tvd_fp"] += fp
            out["lue"] += lue_terms(r.outcome, r.clusters, r.preds, self.config.gamma)
            out["fne"] += fne_terms(r.outcome, r.clusters, self.meta.num_annotators)
        return out

    def _metrics(self, result: ImageResult | None = None) -> dict:
        t = self.terms(result)
        m = {"tvd": _mean(t["tvd"], 0.0), "tvd_fp": _mean(t["tvd_fp"], 0.0),
             "lue": _mean(t["lue"], None), "fne": _mean(t["fne"], 0.0)}
        m["mean"] = aggregate_mean(m["tvd"], m["tvd_fp"], m["lue"], m["fne"],
                                   self.config.weights)
        return m

    def report(self) -> MetricsReport:
        m = self._metrics()
        per_image = None
        if self.config.per_image:
            per_image = []
            for r in self.images:
                row = {"image_id": r.image_id, **self._metrics(r)}
                row["counts"] = {"tp": len(r.outcome.tp), "fp": len(r.outcome.fp),
                                 "fn": len(r.outcome.fn)}
                per_image.append(row)
        return MetricsReport(
            tp=sum(len(r.outcome.tp) for r in self.images),
            fp=sum(len(r.outcome.fp) for r in self.images),
            fn=sum(len(r.outcome.fn) for r in self.images),
            per_image=per_image, unknown_images=list(self.unknown_images), **m)

    def reliability(self, kind: str, bins: int = 10) -> ReliabilityBins:
        conf, agree = [], []
        for r in self.images:
            if kind == "class_label":
                c, a = class_reliability_samples(r.outcome, r.clusters, r.preds)
            else:
                c, a = box_reliability_samples(r.outcome, r.clusters, r.preds,
                                               self.config.gamma)
            conf += c
            agree += a
        return reliability_bins(conf, agree, bins, kind)


def match_dataset(images: Sequence[ImageAnnotations], predictions: Sequence[Prediction],
                  meta: DatasetMeta, config: EvalConfig = EvalConfig(),
                  clusters: Mapping[str, list[AnnotationCluster]] | None = None
                  ) -> DatasetMatch:
    """Cluster every image (unless ``clusters`` is given) and match its
    predictions. Predictions for images absent from the annotations are kept
    as false positives and their image ids listed in ``unknown_images``."""
    by_image: dict[str, list[Prediction]] = {}
    for p in predictions:
        if config.min_certainty is not None and p.certainty < config.min_certainty:
            continue
        by_image.setdefault(p.image_id, []).append(p)

    results = []
    known = set()
    for im in sorted(images, key=lambda im: im.image_id):
        known.add(im.image_id)
        if clusters is not None:
            cl = list(clusters.get(im.image_id, []))
        else:
            cl = cluster_annotations(im, meta, config.min_iou, config.gamma)
        preds = by_image.get(im.image_id, [])
        outcome = match_predictions(cl, preds, meta.num_annotators, config.var_floor,
                                    config.match_mode)
        results.append(ImageResult(im.image_id, cl, preds, outcome))

    unknown = sorted(set(by_image) - known)
    for image_id in unknown:
        preds = by_image[image_id]
        results.append(ImageResult(image_id, [], preds,
                                   MatchOutcome([], list(range(len(preds))), [])))
    return DatasetMatch(meta, config, results, unknown)


def evaluate_dataset(images: Sequence[ImageAnnotations], predictions: Sequence[Prediction],
                     meta: DatasetMeta, config: EvalConfig = EvalConfig()) -> MetricsReport:
    return match_dataset(images, predictions, meta, config).report()
