"""Evaluation-time matching of predictions to annotation clusters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import assignment
from .core import Prediction, iou_matrix
from .preprocess import AnnotationCluster

DEFAULT_VAR_FLOOR = 1e-6
MATCH_MODES = ("void", "forbid")


@dataclass
class MatchOutcome:
    tp: list[tuple[int, int]] = field(default_factory=list)  # (prediction, cluster)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"tp": [list(p) for p in self.tp], "fp": list(self.fp), "fn": list(self.fn)}

    @classmethod
    def from_dict(cls, d: dict) -> "MatchOutcome":
        return cls([tuple(p) for p in d["tp"]], list(d["fp"]), list(d["fn"]))


def mahalanobis_cost(cluster: AnnotationCluster, pred: Prediction, num_annotators: int,
                     var_floor: float = DEFAULT_VAR_FLOOR) -> float:
    """Squared Mahalanobis distance of each member box to the predicted
    Gaussian, summed over members and divided by the number of annotators."""
    var = np.maximum(pred.var, var_floor)
    resid = cluster.boxes - pred.mean
    return float(np.sum(resid ** 2 / var) / num_annotators)


def cost_matrix(clusters: Sequence[AnnotationCluster], preds: Sequence[Prediction],
                num_annotators: int, var_floor: float = DEFAULT_VAR_FLOOR) -> np.ndarray:
    """Clusters x predictions matrix of :func:`mahalanobis_cost`."""
    cost = np.empty((len(clusters), len(preds)))
    if not clusters or not preds:
        return cost
    means = np.stack([p.mean for p in preds])
    inv_var = 1.0 / np.maximum(np.stack([p.var for p in preds]), var_floor)
    for h, cl in enumerate(clusters):
        resid = cl.boxes[:, None, :] - means[None, :, :]
        cost[h] = np.einsum("mpi,pi->p", resid ** 2, inv_var) / num_annotators
    return cost


def match_predictions(clusters: Sequence[AnnotationCluster], preds: Sequence[Prediction],
                      num_annotators: int, var_floor: float = DEFAULT_VAR_FLOOR,
                      mode: str = "void") -> MatchOutcome:
    """Split one image's predictions and clusters into TP pairs, FP and FN.

    The assignment minimises total Mahalanobis cost. Assigned pairs whose
    mean boxes do not overlap are never kept: ``mode="void"`` drops them after
    the assignment, ``mode="forbid"`` additionally gives them a prohibitive
    cost before solving so the solver routes around them when it can.
    """
    if mode not in MATCH_MODES:
        raise ValueError(f"unknown match mode {mode!r}")
    if not clusters or not preds:
        return MatchOutcome([], list(range(len(preds))), list(range(len(clusters))))

    cost = cost_matrix(clusters, preds, num_annotators, var_floor)
    overlap = iou_matrix(np.stack([c.mean_box for c in clusters]),
                         np.stack([p.mean for p in preds])) > 0
    if mode == "forbid":
        big = (np.abs(cost).sum() + 1.0) * (min(cost.shape) + 1)
        cost = np.where(overlap, cost, big)

    tp = [(n, h) for h, n in assignment.solve(cost) if overlap[h, n]]
    tp.sort()
    used_p = {n for n, _ in tp}
    used_c = {h for _, h in tp}
    return MatchOutcome(
        tp=tp,
        fp=[n for n in range(len(preds)) if n not in used_p],
        fn=[h for h in range(len(clusters)) if h not in used_c],
    )
