"""Post-hoc calibration with certainty-weighted isotonic regression.

A bank holds one map per foreground class, taking the predicted class
probability to the annotators' vote share, and one map per box coordinate,
taking the predicted variance to the cluster target variance. At inference
only the predicted (argmax foreground) class is remapped; the remaining
entries are rescaled so the vector stays a distribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DatasetMeta, ImageAnnotations, Prediction
from .metrics import EvalConfig, match_dataset

DOMAINS = ("unit_interval", "nonnegative_reals")


@dataclass(frozen=True)
class IsotonicMap:
    breakpoints: np.ndarray
    values: np.ndarray
    domain: str = "unit_interval"
    log_input: bool = False

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=np.float64)
        vals = np.array(self.values, dtype=np.float64)
        if bp.ndim != 1 or bp.shape != vals.shape or bp.size == 0:
            raise ValueError("breakpoints and values must be equal-length 1-d arrays")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly ascending")
        if np.any(np.diff(vals) < 0):
            raise ValueError("values must be nondecreasing")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def identity(cls, domain: str = "unit_interval") -> "IsotonicMap":
        hi = 1.0 if domain == "unit_interval" else 1e12
        return cls(np.array([0.0, hi]), np.array([0.0, hi]), domain)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.log_input:
            x = np.log(np.maximum(x, np.finfo(float).tiny))
        y = np.interp(x, self.breakpoints, self.values)
        if self.domain == "unit_interval":
            y = np.clip(y, 0.0, 1.0)
        else:
            y = np.maximum(y, 0.0)
        return float(y) if y.ndim == 0 else y

    def to_dict(self) -> dict:
        d = {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist(),
             "domain": self.domain}
        if self.log_input:
            d["log_input"] = True
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "IsotonicMap":
        return cls(d["breakpoints"], d["values"], d.get("domain", "unit_interval"),
                   bool(d.get("log_input", False)))


def pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares nondecreasing fit to ``y`` in the given order."""
    # blocks kept on a stack: (weighted mean, total weight, length)
    means, weights, sizes = [], [], []
    for yi, wi in zip(y, w):
        m, wt, n = float(yi), float(wi), 1
        while means and means[-1] >= m:
            pm, pw, pn = means.pop(), weights.pop(), sizes.pop()
            m = (pm * pw + m * wt) / (pw + wt)
            wt += pw
            n += pn
        means.append(m)
        weights.append(wt)
        sizes.append(n)
    return np.repeat(means, sizes)


def fit_isotonic(xs: Sequence[float], ys: Sequence[float],
                 weights: Sequence[float] | None = None,
                 domain: str = "unit_interval", log_input: bool = False) -> IsotonicMap:
    """Weighted isotonic regression of ``ys`` on ``xs``.

    Points sharing an x value are pooled first, so the result is a function
    of x. The map interpolates linearly between fitted points and is constant
    outside them.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot fit an isotonic map to no points")
    if not (x.shape == y.shape == w.shape):
        raise ValueError("xs, ys and weights must have equal length")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    keep = w > 0
    if not keep.any():
        raise ValueError("all sample weights are zero")
    x, y, w = x[keep], y[keep], w[keep]
    if log_input:
        x = np.log(np.maximum(x, np.finfo(float).tiny))

    ux, inv = np.unique(x, return_inverse=True)
    wsum = np.bincount(inv, w)
    ymean = np.bincount(inv, w * y) / wsum
    fitted = pava(ymean, wsum)
    # guard against rounding making pooled means decrease by an ulp
    fitted = np.maximum.accumulate(fitted)
    if ux.size == 1:
        ux = np.array([ux[0], ux[0] + max(abs(ux[0]), 1.0)])
        fitted = np.repeat(fitted, 2)
    return IsotonicMap(ux, fitted, domain, log_input)


@dataclass(frozen=True)
class CalibratorBank:
    class_maps: tuple[IsotonicMap, ...]
    var_maps: tuple[IsotonicMap, ...]
    fingerprint: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "class_maps", tuple(self.class_maps))
        object.__setattr__(self, "var_maps", tuple(self.var_maps))
        if len(self.var_maps) != 4:
            raise ValueError("a bank needs exactly 4 variance maps")

    @property
    def num_classes(self) -> int:
        return len(self.class_maps)

    @classmethod
    def identity(cls, num_classes: int) -> "CalibratorBank":
        return cls(tuple(IsotonicMap.identity() for _ in range(num_classes)),
                   tuple(IsotonicMap.identity("nonnegative_reals") for _ in range(4)),
                   {"num_classes": num_classes, "identity": True})

    def to_dict(self) -> dict:
        return {
            "classes": [{"class_id": j + 1, **m.to_dict()}
                        for j, m in enumerate(self.class_maps)],
            "box_coords": [{"coord": i, **m.to_dict()} for i, m in enumerate(self.var_maps)],
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratorBank":
        classes = sorted(d["classes"], key=lambda c: c["class_id"])
        if [c["class_id"] for c in classes] != list(range(1, len(classes) + 1)):
            raise ValueError("class maps must cover class ids 1..J")
        return cls(tuple(IsotonicMap.from_dict(c) for c in classes),
                   tuple(IsotonicMap.from_dict(c) for c in d["box_coords"]),
                   dict(d.get("fingerprint", {})))


def fit_calibrator_bank(images: Sequence[ImageAnnotations], predictions: Sequence[Prediction],
                        meta: DatasetMeta, config: EvalConfig = EvalConfig(),
                        log_var: bool = False) -> CalibratorBank:
    """Fit the ``J + 4`` maps on matched pairs of a held-out validation set.

    Each TP pair contributes, for every class j, the point (predicted p_j,
    soft label t_j) and, for every coordinate, (predicted variance, target
    variance), all weighted by the prediction certainty. Target variances are
    floored at ``config.var_floor``, the same floor the matcher applies. The
    validation set must be disjoint from any set later evaluated.
    """
    if not images or not predictions:
        raise ValueError("empty validation set")
    matched = match_dataset(images, predictions, meta, config)
    probs, targets, pvar, tvar, w = [], [], [], [], []
    for r in matched.images:
        for n, h in r.outcome.tp:
            p, cl = r.preds[n], r.clusters[h]
            probs.append(p.class_probs[1:])
            targets.append(cl.soft_label[1:])
            pvar.append(p.var)
            tvar.append(np.maximum(cl.target_var, config.var_floor))
            w.append(p.certainty)
    if not w or sum(w) <= 0:
        raise ValueError("no matched pairs with positive certainty to fit on")
    probs, targets = np.array(probs), np.array(targets)
    pvar, tvar, w = np.array(pvar), np.array(tvar), np.array(w)

    class_maps, identity_classes = [], []
    for j in range(meta.num_classes):
        # a class never predicted nor annotated among the pairs carries no signal
        if not probs[:, j].any() and not targets[:, j].any():
            class_maps.append(IsotonicMap.identity())
            identity_classes.append(j + 1)
        else:
            class_maps.append(fit_isotonic(probs[:, j], targets[:, j], w))
    var_maps = [fit_isotonic(pvar[:, i], tvar[:, i], w, "nonnegative_reals", log_var)
                for i in range(4)]
    fingerprint = {
        "num_classes": meta.num_classes,
        "num_annotators": meta.num_annotators,
        "num_pairs": int(len(w)),
        "min_iou": config.min_iou,
        "gamma": config.gamma,
        "var_floor": config.var_floor,
        "match_mode": config.match_mode,
        "log_var": log_var,
        "identity_classes": identity_classes,
    }
    return CalibratorBank(tuple(class_maps), tuple(var_maps), fingerprint)


def apply_class_calibration(p: np.ndarray, bank: CalibratorBank, printed_form: bool = False
                            ) -> np.ndarray:
    """Remap the top foreground class and rescale the rest to sum to one.

    With ``printed_form`` the other foreground entries are divided by
    ``1 - p_new`` and the whole vector renormalised afterwards.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape[0] - 1 != bank.num_classes:
        raise ValueError(f"bank has {bank.num_classes} classes, probabilities "
                         f"have {p.shape[0] - 1}")
    j = 1 + int(np.argmax(p[1:]))
    new = bank.class_maps[j - 1](p[j])
    out = p.copy()
    if printed_form:
        others = np.arange(1, p.shape[0]) != j
        out[1:][others] = p[1:][others] / max(1.0 - new, 1e-12)
        out[j] = new
        return out / out.sum()
    if new == p[j]:
        return out
    rest = 1.0 - p[j]
    if rest > 0:
        out *= (1.0 - new) / rest
    else:
        out[:] = 0.0
        out[0] = 1.0 - new
    out[j] = new
    return out


def apply_variance_calibration(var: np.ndarray, bank: CalibratorBank) -> np.ndarray:
    return np.array([bank.var_maps[i](v) for i, v in enumerate(np.asarray(var, float))])


def calibrate_predictions(preds: Sequence[Prediction], bank: CalibratorBank,
                          printed_form: bool = False) -> list[Prediction]:
    """Calibrated copies of ``preds``; means and certainties are untouched."""
    return [p.replace(class_probs=apply_class_calibration(p.class_probs, bank, printed_form),
                      var=apply_variance_calibration(p.var, bank))
            for p in preds]
