"""catpose command line: pose fitting, benchmark evaluation and synthetic data.

Exit codes: 0 success, 1 input or validation error, 2 algorithmic failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .datagen import SynthSceneConfig, builtin_priors, load_prior, perturb_predictions, synth_scenes
from .errors import FitFailureError, InvalidInputError
from .evaluation import Evaluator, ap_curves, evaluate_report
from .geometry import check_rotation
from .losses import LossWeights, loss_components, weighted_total
from .registration import RansacParams, ransac_fit
from .symmetry import map_rotation, symmetry_table

CURVE_FILES = {"iou": "curves_iou.csv", "deg": "curves_rot.csv", "cm": "curves_trans.csv"}


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _ransac_params(args) -> RansacParams:
    return RansacParams(
        sample_size=args.sample_size,
        max_iterations=args.ransac_iters,
        inlier_fraction_of_diameter=args.inlier_frac,
        seed=args.seed if args.seed is not None else 0,
    )


def cmd_fit(args) -> int:
    corr = io.read_correspondences(args.corr_file)
    try:
        res = ransac_fit(corr, _ransac_params(args))
    except FitFailureError as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 2
    _emit({
        "transform": res.transform.to_dict(),
        "num_correspondences": len(corr),
        "num_inliers": res.num_inliers,
        "iterations": res.iterations_run,
        "inlier_rms": res.inlier_rms,
        "inlier_threshold": res.threshold,
    })
    return 0


def _write_curves(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "threshold", "ap"])
        for cat, t, ap in rows:
            w.writerow([cat, f"{t:.6g}", f"{ap:.6f}"])


def cmd_eval(args) -> int:
    from .plotting import plot_ap_curves

    gts = io.read_split(args.gt_file)
    dets = io.read_split(args.pred_file, predictions=True)
    out = Path(args.out or "eval_out")
    out.mkdir(parents=True, exist_ok=True)
    ev = Evaluator(dets, gts, threads=args.threads)
    report = evaluate_report(dets, gts, evaluator=ev)
    curves = ap_curves(dets, gts, evaluator=ev)
    io.dump_json(report.to_dict(), out / "report.json")
    table = report.to_table()
    (out / "table.txt").write_text(table)
    for kind, name in CURVE_FILES.items():
        _write_curves(out / name, curves[kind])
    plot_ap_curves(curves, out / "ap_curves.png")
    sys.stdout.write(table)
    return 0


def cmd_synth(args) -> int:
    cfg_dict = io.load_json(args.config_file) if args.config_file else {}
    if not isinstance(cfg_dict, dict):
        raise InvalidInputError("config: top level must be an object")
    priors_spec = cfg_dict.pop("priors", None)
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    cfg = SynthSceneConfig.from_dict(cfg_dict)
    priors = builtin_priors()
    if priors_spec:
        base = Path(args.config_file).parent
        for cat, p in priors_spec.items():
            priors[cat] = load_prior(base / p)
    if not args.out:
        raise InvalidInputError("synth needs --out")
    scenes = synth_scenes(cfg, priors, args.out, threads=args.threads)
    n_inst = sum(len(s.instances) for s in scenes)
    cats = sorted({i.gt.category for s in scenes for i in s.instances})
    _emit({"scenes": len(scenes), "instances": n_inst, "categories": cats, "out": str(args.out)})
    return 0


def cmd_losses(args) -> int:
    d = Path(args.inputs_dir)
    need = ["M.ply", "M_gt.ply", "P.ply", "P_gt.ply", "A.json", "D.json"]
    missing = [f for f in need if not (d / f).is_file()]
    if missing:
        raise InvalidInputError(f"{d}: missing input files {missing}")
    comps = loss_components(
        io.read_ply(d / "M.ply"), io.read_ply(d / "M_gt.ply"),
        io.read_ply(d / "P.ply"), io.read_ply(d / "P_gt.ply"),
        io.read_matrix(d / "A.json"), io.read_field(d / "D.json"),
    )
    w = LossWeights(args.lambda1, args.lambda2, args.lambda3, args.lambda4)
    _emit({**comps, "total": weighted_total(comps, w)})
    return 0


def cmd_map_rot(args) -> int:
    R = check_rotation(np.asarray(args.values, dtype=np.float64).reshape(3, 3))
    res = map_rotation(R)
    _emit({
        "theta_hat": res.theta_hat,
        "theta_hat_deg": float(np.degrees(res.theta_hat)),
        "s_hat": res.s_hat.tolist(),
        "mapped_rotation": res.mapped_rotation.tolist(),
        "ambiguous": res.ambiguous,
    })
    return 0


def cmd_perturb(args) -> int:
    gts = io.read_split(args.gt_file)
    preds = perturb_predictions(gts, args.rot_deg, args.trans_cm, args.scale_factor,
                                seed=args.seed if args.seed is not None else 0,
                                symmetric_safe=args.symmetric_safe)
    if args.out:
        io.write_split(args.out, preds, with_score=True)
    else:
        _emit(io.split_dict(preds, with_score=True))
    return 0


def cmd_symmetry_table(args) -> int:
    _emit(symmetry_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; output does not depend on it")
    common.add_argument("--ransac-iters", type=int, default=128)
    common.add_argument("--sample-size", type=int, default=5)
    common.add_argument("--inlier-frac", type=float, default=0.10, help="inlier threshold as a fraction of object diameter")
    for i, v in enumerate((5.0, 1.0, 1e-4, 0.01), start=1):
        common.add_argument(f"--lambda{i}", type=float, default=v)
    common.add_argument("--out", default=None, help="output directory (or file, for perturb)")

    p = argparse.ArgumentParser(prog="catpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit", parents=[common], help="RANSAC + Umeyama pose fit from a correspondence file")
    s.add_argument("corr_file")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", parents=[common], help="mAP report, curves and figure")
    s.add_argument("gt_file")
    s.add_argument("pred_file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark split")
    s.add_argument("config_file", nargs="?", default=None)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("losses", parents=[common], help="evaluate all training losses from files")
    s.add_argument("inputs_dir")
    s.set_defaults(func=cmd_losses)

    s = sub.add_parser("map-rot", parents=[common], help="canonicalize a rotation about the y symmetry axis")
    s.add_argument("values", nargs=9, type=float, metavar="R", help="row-major rotation entries")
    s.set_defaults(func=cmd_map_rot)

    s = sub.add_parser("perturb", parents=[common], help="predictions from ground truth with controlled errors")
    s.add_argument("gt_file")
    s.add_argument("--rot-deg", type=float, default=0.0)
    s.add_argument("--trans-cm", type=float, default=0.0)
    s.add_argument("--scale-factor", type=float, default=1.0)
    s.add_argument("--symmetric-safe", action="store_true", help="rotate y-symmetric instances about y only")
    s.set_defaults(func=cmd_perturb)

    s = sub.add_parser("symmetry-table", parents=[common], help="print the category symmetry rules")
    s.set_defaults(func=cmd_symmetry_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
