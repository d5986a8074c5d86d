"""Command-line pipelines over the annotation, prediction and calibrator files.

Every subcommand writes its outputs plus a ``config.json`` echo of the
resolved options into ``--out``. Files are only written once all outputs
have been computed; a failing run leaves nothing behind.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import core, losses, metrics, posthoc, preprocess, simulate
from .core import DatasetMeta, FormatError
from .matching import MATCH_MODES

DEFAULTS = {
    "min_iou": preprocess.DEFAULT_MIN_IOU,
    "gamma": preprocess.DEFAULT_GAMMA,
    "lambda": losses.DEFAULT_LAMBDA,
    "bins": 10,
    "var_floor": 1e-6,
}


class CliError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser, *names: str) -> None:
    p.add_argument("--out", required=True, help="output directory")
    if "min_iou" in names:
        p.add_argument("--min-iou", type=float, default=DEFAULTS["min_iou"],
                       help="IoU needed to join an annotation cluster")
    if "gamma" in names:
        p.add_argument("--gamma", type=float, default=DEFAULTS["gamma"],
                       help="cap on interval confidence levels")
    if "var_floor" in names:
        p.add_argument("--var-floor", type=float, default=DEFAULTS["var_floor"])
    if "certainty_source" in names:
        p.add_argument("--certainty-source", choices=core.CERTAINTY_SOURCES,
                       default=None, help="override the annotations file setting")
    if "min_certainty" in names:
        p.add_argument("--min-certainty", type=float, default=None,
                       help="drop predictions below this certainty before matching")
    if "bins" in names:
        p.add_argument("--bins", type=int, default=DEFAULTS["bins"])
    if "match_mode" in names:
        p.add_argument("--match-mode", choices=MATCH_MODES, default="void",
                       help="how zero-overlap assignments are excluded")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annocalib", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="group annotations into per-object clusters")
    p.add_argument("annotations")
    _add_common(p, "min_iou", "gamma")

    eval_opts = ("min_iou", "gamma", "var_floor", "certainty_source", "min_certainty",
                 "bins", "match_mode")
    p = sub.add_parser("evaluate", help="calibration metrics and reliability data")
    p.add_argument("annotations")
    p.add_argument("predictions")
    p.add_argument("--dump-matches", action="store_true")
    p.add_argument("--per-image", action="store_true")
    _add_common(p, *eval_opts)

    p = sub.add_parser("reliability", help="reliability-diagram bins only")
    p.add_argument("annotations")
    p.add_argument("predictions")
    _add_common(p, *eval_opts)

    p = sub.add_parser("fit-calib", help="fit an isotonic calibrator bank")
    p.add_argument("annotations")
    p.add_argument("predictions")
    p.add_argument("--log-var", action="store_true", help="fit variance maps on log inputs")
    _add_common(p, "min_iou", "gamma", "var_floor", "certainty_source", "min_certainty",
                "match_mode")

    p = sub.add_parser("apply-calib", help="apply a calibrator bank to predictions")
    p.add_argument("bank")
    p.add_argument("predictions")
    p.add_argument("--annotations", help="annotations file whose meta must agree with the bank")
    p.add_argument("--printed-form", action="store_true",
                   help="divide other classes by (1 - p_new) then renormalise")
    _add_common(p, "certainty_source")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    p.add_argument("config", help="simulation config JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--beta", type=float, default=None,
                   help="also emit oracle predictions with p ** beta")
    p.add_argument("--var-scale", type=float, default=None,
                   help="also emit oracle predictions with scaled variances")
    _add_common(p, "min_iou", "gamma", "var_floor")

    p = sub.add_parser("loss-eval", help="evaluate the train-time loss on given pairs")
    p.add_argument("clusters")
    p.add_argument("predictions")
    p.add_argument("pairing")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULTS["lambda"])
    p.add_argument("--mode", choices=losses.BACKGROUND_MODES, default="keep")
    _add_common(p)
    return parser


# -- helpers ------------------------------------------------------------------

def _load_annotations(path, certainty_source=None):
    meta, images = core.load_annotations(path)
    if certainty_source:
        meta = DatasetMeta(meta.num_classes, meta.num_annotators, meta.class_names,
                           certainty_source)
    return meta, images


def _eval_config(args, per_image=False) -> metrics.EvalConfig:
    return metrics.EvalConfig(min_iou=args.min_iou, gamma=args.gamma,
                              var_floor=args.var_floor, match_mode=args.match_mode,
                              min_certainty=args.min_certainty, per_image=per_image)


def _reliability_csv(bins_list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "bin_lo", "bin_hi", "mean_conf", "mean_agreement",
                "sample_fraction"])
    for rb in bins_list:
        for row in rb.rows():
            w.writerow([rb.kind] + ["" if np.isnan(v) else repr(float(v)) for v in row])
    return buf.getvalue()


def _resolved(args) -> dict:
    d = dict(vars(args))
    if "lam" in d:
        d["lambda"] = d.pop("lam")
    return d


def _pct(x):
    return "n/a" if x is None else f"{100 * x:.1f}"


# -- subcommands --------------------------------------------------------------

def cmd_cluster(args):
    meta, images = _load_annotations(args.annotations)
    clustered = preprocess.cluster_dataset(images, meta, args.min_iou, args.gamma)
    alpha = preprocess.krippendorff_alpha(clustered.values(), meta)
    H = sum(len(c) for c in clustered.values())
    per_class = Counter()
    for cls in clustered.values():
        for cl in cls:
            per_class[meta.class_names[int(np.argmax(cl.soft_label[1:]))]] += 1
    lines = [f"clusters: {H}"]
    lines += [f"  {name}: {per_class[name]}" for name in meta.class_names if per_class[name]]
    lines.append("krippendorff alpha: " +
                 ("insufficient data" if alpha is None else f"{alpha:.4f}"))
    summary = {"clusters": H, "per_class": {n: per_class[n] for n in meta.class_names},
               "krippendorff_alpha": alpha}
    return ({"clusters.json": core.dumps(preprocess.clusters_to_dict(meta, clustered,
                                                                     args.gamma)),
             "summary.json": core.dumps(summary)}, lines)


def _match(args, per_image=False):
    meta, images = _load_annotations(args.annotations, args.certainty_source)
    preds = core.load_predictions(args.predictions, meta)
    if preds and images and not {p.image_id for p in preds} & {im.image_id for im in images}:
        raise CliError("annotations and predictions share no image ids")
    return metrics.match_dataset(images, preds, meta, _eval_config(args, per_image))


def cmd_evaluate(args):
    matched = _match(args, args.per_image)
    report = matched.report()
    rel = [matched.reliability(kind, args.bins) for kind in metrics.BIN_KINDS]
    outputs = {"metrics.json": core.dumps(report.to_dict()),
               "reliability.csv": _reliability_csv(rel)}
    if args.dump_matches:
        outputs["matches.json"] = core.dumps({"images": [
            {"image_id": r.image_id, **r.outcome.to_dict()} for r in matched.images]})
    lines = [
        "metric (x100)  value",
        f"TVD            {_pct(report.tvd)}",
        f"TVD_FP         {_pct(report.tvd_fp)}",
        f"LUE            {_pct(report.lue)}",
        f"FNE            {_pct(report.fne)}",
        f"mean           {_pct(report.mean)}",
        f"TP {report.tp}  FP {report.fp}  FN {report.fn}",
    ]
    if report.unknown_images:
        lines.append(f"predictions for {len(report.unknown_images)} unknown images "
                     "counted as false positives")
    return outputs, lines


def cmd_reliability(args):
    matched = _match(args)
    rel = [matched.reliability(kind, args.bins) for kind in metrics.BIN_KINDS]
    return {"reliability.csv": _reliability_csv(rel)}, []


def cmd_fit_calib(args):
    meta, images = _load_annotations(args.annotations, args.certainty_source)
    preds = core.load_predictions(args.predictions, meta)
    bank = posthoc.fit_calibrator_bank(images, preds, meta, _eval_config(args), args.log_var)
    lines = [f"fitted {bank.num_classes} class maps and 4 variance maps "
             f"on {bank.fingerprint['num_pairs']} matched pairs"]
    return {"calibrator.json": core.dumps(bank.to_dict())}, lines


def cmd_apply_calib(args):
    with open(args.bank, encoding="utf-8") as fh:
        bank = posthoc.CalibratorBank.from_dict(json.load(fh))
    if args.annotations:
        meta, _ = _load_annotations(args.annotations, args.certainty_source)
        if meta.num_classes != bank.num_classes:
            raise CliError(f"bank has {bank.num_classes} classes, annotations meta "
                           f"has {meta.num_classes}")
    else:
        meta = DatasetMeta(bank.num_classes,
                           max(2, int(bank.fingerprint.get("num_annotators", 2))),
                           certainty_source=args.certainty_source or "foreground")
    preds = core.load_predictions(args.predictions, meta)
    out = posthoc.calibrate_predictions(preds, bank, args.printed_form)
    return {"predictions.json": core.dumps(core.predictions_to_dict(out))}, \
        [f"calibrated {len(out)} predictions"]


def cmd_simulate(args):
    with open(args.config, encoding="utf-8") as fh:
        raw = json.load(fh)
    pred_opts = raw.pop("predictions", None) or {}
    if args.seed is not None:
        raw["seed"] = args.seed
    config = simulate.SimulationConfig.from_dict(raw)
    latent, images = simulate.simulate_dataset(config)
    meta = config.meta
    outputs = {
        "annotations.json": core.dumps(core.annotations_to_dict(meta, images)),
        "latent.json": core.dumps(simulate.latent_to_dict(config, latent)),
        "simulation.json": core.dumps(config.to_dict()),
    }
    beta = args.beta if args.beta is not None else pred_opts.get("beta")
    scale = args.var_scale if args.var_scale is not None else pred_opts.get("var_scale")
    if beta is not None or scale is not None:
        clustered = preprocess.cluster_dataset(images, meta, args.min_iou, args.gamma)
        preds = simulate.simulate_predictions(clustered, meta.num_annotators,
                                              beta if beta is not None else 1.0,
                                              scale if scale is not None else 1.0,
                                              args.var_floor)
        outputs["predictions.json"] = core.dumps(core.predictions_to_dict(preds))
    n_ann = sum(len(im.annotations) for im in images)
    return outputs, [f"simulated {len(images)} images, {n_ann} annotations"]


def cmd_loss_eval(args):
    with open(args.clusters, encoding="utf-8") as fh:
        meta, clustered = preprocess.clusters_from_dict(json.load(fh))
    preds = core.group_by_image(core.load_predictions(args.predictions, meta))
    with open(args.pairing, encoding="utf-8") as fh:
        pairing = json.load(fh)["pairs"]

    flat_clusters, flat_preds, pairs = [], [], []
    for i, rec in enumerate(pairing):
        image_id = str(rec["image_id"])
        try:
            cl = clustered[image_id][int(rec["cluster"])]
            pr = preds[image_id][int(rec["prediction"])]
        except (KeyError, IndexError):
            raise CliError(f"pair {i} refers to a missing cluster or prediction") from None
        flat_clusters.append(cl)
        flat_preds.append(pr)
        pairs.append((i, i))
    breakdown = losses.image_loss(flat_clusters, flat_preds, pairs, args.lam, args.mode)
    lines = [f"pairs {len(pairs)}  l_cls {breakdown.l_cls:.6g}  l_reg {breakdown.l_reg:.6g}"
             f"  l_total {breakdown.l_total:.6g}"]
    if breakdown.empty:
        lines.append("warning: empty pairing")
    return {"loss.json": core.dumps(breakdown.to_dict())}, lines


COMMANDS = {
    "cluster": cmd_cluster,
    "evaluate": cmd_evaluate,
    "reliability": cmd_reliability,
    "fit-calib": cmd_fit_calib,
    "apply-calib": cmd_apply_calib,
    "simulate": cmd_simulate,
    "loss-eval": cmd_loss_eval,
}


def _write_outputs(out_dir: Path, outputs: dict[str, str]) -> None:
    written = []
    try:
        for name, text in outputs.items():
            core.write_text_atomic(out_dir / name, text)
            written.append(out_dir / name)
    except BaseException:
        for path in written:
            if path.exists():
                path.unlink()
        raise


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        outputs, lines = COMMANDS[args.command](args)
        outputs["config.json"] = core.dumps(_resolved(args))
        _write_outputs(Path(args.out), outputs)
    except (FormatError, CliError, ValueError, OSError, KeyError) as exc:
        print(f"annocalib {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
