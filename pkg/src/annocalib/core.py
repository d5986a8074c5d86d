"""Shared data model, box geometry and JSON file formats.

Boxes are corner form ``[x1, y1, x2, y2]`` in pixels. Class index 0 is the
background class; foreground classes are ``1..J``. Box covariances are stored
as the 4-vector of per-coordinate variances.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import ndtri

PROB_TOL = 1e-6
# sums this close to one are float rounding; rescaling them would make
# load -> save -> load drift in the last bits
_ROUNDING_TOL = 1e-12
CERTAINTY_SOURCES = ("foreground", "objectness", "max_class")


class FormatError(ValueError):
    """Raised when an input file violates its schema or a record is invalid."""


def _frozen(values: Iterable[float], size: int | None = None) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if size is not None and arr.shape != (size,):
        raise ValueError(f"expected a {size}-vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DatasetMeta:
    num_classes: int
    num_annotators: int
    class_names: tuple[str, ...] = ()
    certainty_source: str = "foreground"

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.num_annotators < 2:
            raise ValueError("num_annotators must be >= 2")
        names = tuple(self.class_names) or tuple(
            f"class_{j}" for j in range(1, self.num_classes + 1))
        if len(names) != self.num_classes:
            raise ValueError("class_names must have num_classes entries")
        object.__setattr__(self, "class_names", names)
        if self.certainty_source not in CERTAINTY_SOURCES:
            raise ValueError(f"unknown certainty_source {self.certainty_source!r}")

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "num_annotators": self.num_annotators,
            "class_names": list(self.class_names),
            "certainty_source": self.certainty_source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        return cls(
            num_classes=int(d["num_classes"]),
            num_annotators=int(d["num_annotators"]),
            class_names=tuple(d.get("class_names") or ()),
            certainty_source=d.get("certainty_source", "foreground"),
        )


@dataclass(frozen=True)
class Annotation:
    box: np.ndarray
    class_id: int
    annotator_id: int

    def __post_init__(self):
        box = _frozen(self.box, 4)
        if not (box[0] < box[2] and box[1] < box[3]):
            raise ValueError(f"degenerate box {box.tolist()}")
        object.__setattr__(self, "box", box)

    def to_dict(self) -> dict:
        return {"box": self.box.tolist(), "class_id": self.class_id,
                "annotator_id": self.annotator_id}


@dataclass(frozen=True)
class ImageAnnotations:
    image_id: str
    width: float
    height: float
    annotations: tuple[Annotation, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "width": self.width,
            "height": self.height,
            "annotations": [a.to_dict() for a in self.annotations],
        }


@dataclass(frozen=True)
class Prediction:
    image_id: str
    mean: np.ndarray
    var: np.ndarray
    class_probs: np.ndarray
    certainty: float

    def __post_init__(self):
        object.__setattr__(self, "mean", _frozen(self.mean, 4))
        object.__setattr__(self, "var", _frozen(self.var, 4))
        object.__setattr__(self, "class_probs", _frozen(self.class_probs))
        object.__setattr__(self, "certainty", float(self.certainty))
        if np.any(self.var < 0):
            raise ValueError("negative variance")

    @property
    def num_classes(self) -> int:
        return self.class_probs.shape[0] - 1

    def replace(self, **changes) -> "Prediction":
        fields = dict(image_id=self.image_id, mean=self.mean, var=self.var,
                      class_probs=self.class_probs, certainty=self.certainty)
        fields.update(changes)
        return Prediction(**fields)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "mean": self.mean.tolist(),
            "var": self.var.tolist(),
            "class_probs": self.class_probs.tolist(),
            "certainty": self.certainty,
        }


@dataclass
class MetricsReport:
    tvd: float
    tvd_fp: float
    lue: float | None
    fne: float
    mean: float
    tp: int
    fp: int
    fn: int
    per_image: list[dict] | None = None
    unknown_images: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "tvd": self.tvd, "tvd_fp": self.tvd_fp, "lue": self.lue,
            "fne": self.fne, "mean": self.mean,
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn},
        }
        if self.per_image is not None:
            d["per_image"] = self.per_image
        if self.unknown_images:
            d["unknown_images"] = list(self.unknown_images)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        c = d["counts"]
        return cls(tvd=d["tvd"], tvd_fp=d["tvd_fp"], lue=d["lue"], fne=d["fne"],
                   mean=d["mean"], tp=c["tp"], fp=c["fp"], fn=c["fn"],
                   per_image=d.get("per_image"),
                   unknown_images=list(d.get("unknown_images", [])))


# -- geometry -----------------------------------------------------------------

def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two corner-form boxes."""
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two stacks of boxes, shape (len(a), len(b))."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def central_z(level: float, gamma: float) -> float:
    """Half-width, in standard deviations, of the central Gaussian interval
    holding ``min(level, gamma)`` of the mass."""
    alpha = min(float(level), gamma)
    if alpha <= 0.0:
        return 0.0
    return float(ndtri(1.0 - (1.0 - alpha) / 2.0))


def certainty_from_probs(class_probs: np.ndarray, source: str) -> float:
    if source == "foreground":
        return float(1.0 - class_probs[0])
    if source == "max_class":
        return float(np.max(class_probs[1:]))
    raise FormatError(
        "certainty must be given explicitly when certainty_source is 'objectness'")


# -- JSON I/O -----------------------------------------------------------------

def dumps(obj: Any) -> str:
    """Canonical JSON text: fixed key order, shortest round-trip float repr."""
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


def write_text_atomic(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str | os.PathLike, obj: Any) -> None:
    write_text_atomic(path, dumps(obj))


def _read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: malformed JSON ({exc})") from exc


def parse_annotations(doc: dict, meta: DatasetMeta | None = None
                      ) -> tuple[DatasetMeta, list[ImageAnnotations]]:
    try:
        if meta is None:
            meta = DatasetMeta.from_dict(doc["meta"])
        raw_images = doc["images"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"annotations schema violation: {exc}") from exc

    images = []
    for rec in raw_images:
        try:
            image_id = str(rec["image_id"])
            width, height = float(rec["width"]), float(rec["height"])
            raw_anns = rec["annotations"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"annotations schema violation: {exc}") from exc
        anns = []
        for m, a in enumerate(raw_anns):
            where = f"image {image_id!r}, annotation {m}"
            try:
                box = [float(v) for v in a["box"]]
                class_id, annotator_id = int(a["class_id"]), int(a["annotator_id"])
            except (KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{where}: schema violation ({exc})") from exc
            if len(box) != 4:
                raise FormatError(f"{where}: box must have 4 coordinates")
            if not 1 <= class_id <= meta.num_classes:
                raise FormatError(f"{where}: class_id {class_id} outside 1..{meta.num_classes}")
            if not 1 <= annotator_id <= meta.num_annotators:
                raise FormatError(
                    f"{where}: annotator_id {annotator_id} outside 1..{meta.num_annotators}")
            if not (box[0] < box[2] and box[1] < box[3]):
                raise FormatError(f"{where}: degenerate box {box}")
            box = [min(max(box[0], 0.0), width), min(max(box[1], 0.0), height),
                   min(max(box[2], 0.0), width), min(max(box[3], 0.0), height)]
            if not (box[0] < box[2] and box[1] < box[3]):
                raise FormatError(f"{where}: box lies outside the image")
            anns.append(Annotation(box, class_id, annotator_id))
        images.append(ImageAnnotations(image_id, width, height, tuple(anns)))
    images.sort(key=lambda im: im.image_id)
    return meta, images


def load_annotations(path: str | os.PathLike, meta: DatasetMeta | None = None
                     ) -> tuple[DatasetMeta, list[ImageAnnotations]]:
    """Load an annotations file; ``meta`` overrides the file's own meta block."""
    return parse_annotations(_read_json(path), meta)


def annotations_to_dict(meta: DatasetMeta, images: Sequence[ImageAnnotations]) -> dict:
    return {"meta": meta.to_dict(), "images": [im.to_dict() for im in images]}


def save_annotations(path, meta: DatasetMeta, images: Sequence[ImageAnnotations]) -> None:
    write_json(path, annotations_to_dict(meta, images))


def parse_predictions(doc: dict, meta: DatasetMeta) -> list[Prediction]:
    try:
        raw = doc["predictions"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"predictions schema violation: {exc}") from exc
    preds = []
    for n, r in enumerate(raw):
        where = f"prediction {n}"
        try:
            image_id = str(r["image_id"])
            mean = [float(v) for v in r["mean"]]
            var = [float(v) for v in r["var"]]
            probs = np.array([float(v) for v in r["class_probs"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{where}: schema violation ({exc})") from exc
        where = f"{where} (image {image_id!r})"
        if len(mean) != 4 or len(var) != 4:
            raise FormatError(f"{where}: mean and var must have 4 entries")
        if probs.shape != (meta.num_classes + 1,):
            raise FormatError(
                f"{where}: class_probs must have {meta.num_classes + 1} entries")
        if any(v < 0 for v in var):
            raise FormatError(f"{where}: negative variance")
        if np.any(probs < 0) or np.any(probs > 1):
            raise FormatError(f"{where}: class probability outside [0, 1]")
        total = float(probs.sum())
        if abs(total - 1.0) > PROB_TOL:
            raise FormatError(f"{where}: class_probs sum to {total!r}")
        if abs(total - 1.0) > _ROUNDING_TOL:
            probs = probs / total
        if not (mean[0] < mean[2] and mean[1] < mean[3]):
            raise FormatError(f"{where}: degenerate mean box {mean}")
        certainty = r.get("certainty")
        if certainty is None:
            try:
                certainty = certainty_from_probs(probs, meta.certainty_source)
            except FormatError as exc:
                raise FormatError(f"{where}: {exc}") from None
        certainty = float(certainty)
        if not 0.0 <= certainty <= 1.0:
            raise FormatError(f"{where}: certainty {certainty} outside [0, 1]")
        preds.append(Prediction(image_id, mean, var, probs, certainty))
    return preds


def load_predictions(path: str | os.PathLike, meta: DatasetMeta) -> list[Prediction]:
    return parse_predictions(_read_json(path), meta)


def predictions_to_dict(preds: Sequence[Prediction]) -> dict:
    return {"predictions": [p.to_dict() for p in preds]}


def save_predictions(path, preds: Sequence[Prediction]) -> None:
    write_json(path, predictions_to_dict(preds))


def group_by_image(preds: Iterable[Prediction]) -> dict[str, list[Prediction]]:
    out: dict[str, list[Prediction]] = {}
    for p in preds:
        out.setdefault(p.image_id, []).append(p)
    return out

