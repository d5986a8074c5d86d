"""Train-time calibration objective, as a value and gradient oracle.

For each (cluster, prediction) pair the loss is

    total = lam * regression + classification

with soft-label cross-entropy for the class head and an L1 moment-matching
term pulling the predicted mean towards the cluster mean box and the
predicted variances towards the cluster target variances. Image losses are
averaged over pairs. No network is involved; the functions here exist so a
training integration can be checked against them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Prediction
from .preprocess import AnnotationCluster

EPS = 1e-12
DEFAULT_LAMBDA = 0.1
BACKGROUND_MODES = ("keep", "objectness", "drop")
GRAD_TARGETS = ("pred_mean", "pred_var", "class_logits", "objectness_logit")


@dataclass
class LossBreakdown:
    l_cls: float
    l_reg: float
    l_total: float
    lam: float
    per_pair: list[tuple[int, float, float]] = field(default_factory=list)
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "l_cls": self.l_cls, "l_reg": self.l_reg, "l_total": self.l_total,
            "lambda": self.lam,
            "per_pair": [{"pair": i, "l_cls": c, "l_reg": r} for i, c, r in self.per_pair],
            "empty": self.empty,
        }


def classification_loss(t: np.ndarray, p: np.ndarray, eps: float = EPS,
                        mode: str = "keep", objectness: float | None = None) -> float:
    """Soft-label cross-entropy.

    ``keep`` sums over all ``J + 1`` entries including background; ``drop``
    sums over the foreground classes only; ``objectness`` adds a binary
    cross-entropy between ``objectness`` and the target ``1 - t[0]`` to the
    foreground sum.
    """
    t = np.asarray(t, dtype=np.float64)
    logp = np.log(np.maximum(np.asarray(p, dtype=np.float64), eps))
    if mode == "keep":
        return float(-np.sum(t * logp))
    loss = float(-np.sum(t[1:] * logp[1:]))
    if mode == "drop":
        return loss
    if mode == "objectness":
        if objectness is None:
            raise ValueError("objectness mode needs an objectness score")
        y = 1.0 - t[0]
        o = min(max(objectness, eps), 1.0 - eps)
        return loss - (y * np.log(o) + (1.0 - y) * np.log(1.0 - o))
    raise ValueError(f"unknown background mode {mode!r}")


def regression_loss(mean_box: np.ndarray, target_var: np.ndarray,
                    pred_mean: np.ndarray, pred_var: np.ndarray) -> float:
    return float(np.abs(np.asarray(mean_box) - pred_mean).sum()
                 + np.abs(np.asarray(target_var) - pred_var).sum())


def image_loss(clusters: Sequence[AnnotationCluster], preds: Sequence[Prediction],
               pairs: Sequence[tuple[int, int]], lam: float = DEFAULT_LAMBDA,
               mode: str = "keep", eps: float = EPS) -> LossBreakdown:
    """Mean loss over caller-supplied ``(cluster, prediction)`` index pairs."""
    if not pairs:
        return LossBreakdown(0.0, 0.0, 0.0, lam, [], empty=True)
    per_pair = []
    for i, (h, n) in enumerate(pairs):
        cl, pr = clusters[h], preds[n]
        l_c = classification_loss(cl.soft_label, pr.class_probs, eps, mode, pr.certainty)
        l_r = regression_loss(cl.mean_box, cl.target_var, pr.mean, pr.var)
        per_pair.append((i, l_c, l_r))
    l_cls = sum(c for _, c, _ in per_pair) / len(pairs)
    l_reg = sum(r for _, _, r in per_pair) / len(pairs)
    return LossBreakdown(l_cls, l_reg, lam * l_reg + l_cls, lam, per_pair)


def loss_gradient(clusters: Sequence[AnnotationCluster], preds: Sequence[Prediction],
                  pairs: Sequence[tuple[int, int]], wrt: str, lam: float = DEFAULT_LAMBDA,
                  mode: str = "keep", eps: float = EPS) -> list[np.ndarray]:
    """Gradient of ``image_loss(...).l_total`` for each prediction in ``pairs``.

    ``class_logits`` treats the class probabilities as ``softmax(logits)``;
    ``objectness_logit`` treats the certainty as ``sigmoid(logit)`` and is
    only non-zero in objectness mode. L1 kinks use ``sign(0) = 0``; the
    ``eps`` floor on probabilities is ignored.
    """
    if wrt not in GRAD_TARGETS:
        raise ValueError(f"unknown gradient target {wrt!r}")
    scale = 1.0 / len(pairs) if pairs else 0.0
    grads = []
    for h, n in pairs:
        cl, pr = clusters[h], preds[n]
        if wrt == "pred_mean":
            g = -lam * np.sign(cl.mean_box - pr.mean)
        elif wrt == "pred_var":
            g = lam * np.sign(pr.var - cl.target_var)
        elif wrt == "class_logits":
            t = np.array(cl.soft_label, dtype=np.float64)
            if mode != "keep":
                t[0] = 0.0
            g = t.sum() * pr.class_probs - t
        else:
            if mode == "objectness":
                g = np.array([pr.certainty - (1.0 - cl.soft_label[0])])
            else:
                g = np.zeros(1)
        grads.append(g * scale)
    return grads


def descend(cluster: AnnotationCluster, pred: Prediction, steps: int = 5000,
            lr: float = 1.0, log_lr: float = 0.1, decay: float = 0.998,
            var_floor: float = 1e-6) -> Prediction:
    """Normalised subgradient descent on a single pair's loss.

    The mean moves by ``lr`` pixels per step along the sign of its
    subgradient, the variance is optimised as log-variance (``log_lr`` per
    step) so it stays positive, and the class distribution moves through its
    logits. Both step sizes decay geometrically by ``decay``.
    """
    mean = np.array(pred.mean, dtype=np.float64)
    log_var = np.log(np.maximum(pred.var, var_floor))
    logits = np.log(np.maximum(pred.class_probs, EPS))
    target_var = np.maximum(cluster.target_var, var_floor)
    t = cluster.soft_label
    for k in range(steps):
        shrink = decay ** k
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        mean += lr * shrink * np.sign(cluster.mean_box - mean)
        log_var -= log_lr * shrink * np.sign(np.exp(log_var) - target_var)
        logits -= lr * shrink * (probs - t)
    probs = np.exp(logits - logits.max())
    return pred.replace(mean=mean, var=np.exp(log_var), class_probs=probs / probs.sum())
