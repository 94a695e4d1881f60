"""``canopylab`` command line.

Exit codes: 0 success, 2 usage error, 3 input/parse error, 4 numeric or
convergence error, 5 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .change import Window, change, overlay_png
from .errors import CanopyError
from .metrics import evaluate, report_dict
from .pipeline import load_manifest, load_truth, run_pipeline
from .pointcloud import format_xyz_text, read_point_cloud
from .raster import (
    GridSpec,
    export_png,
    load_container,
    load_mask,
    resample_nearest,
    save_container,
    save_mask,
)
from .rules import DEFAULT_TREE_RULE, evaluate_rule, parse_rule, read_rule_file
from .stats import StatsStack, grid_for_cloud, rasterize_stats, stack_to_pseudo_rgb
from .svm import TrainConfig, extract_training_samples, predict_mask, read_model, train_svm, write_model
from .synth import SyntheticSceneSpec, generate_synthetic_scene

logger = logging.getLogger("canopylab")


def _grid(text: str) -> tuple[float, float, int, int]:
    try:
        ox, oy, w, h = text.split(",")
        return float(ox), float(oy), int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError("grid must be origin_x,origin_y,width,height") from None


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t]


def cmd_rasterize(args) -> None:
    cloud = read_point_cloud(args.input)
    if args.grid:
        ox, oy, w, h = args.grid
        spec = GridSpec(ox, oy, args.cell_size, w, h)
    else:
        spec = grid_for_cloud(cloud, args.cell_size)
    stack = rasterize_stats(cloud, spec, args.radius, args.threads)
    save_container(args.output, stack.multiband)
    if args.png:
        Path(args.png).write_bytes(export_png(stack_to_pseudo_rgb(stack)))
    logger.info("%d points -> %dx%d stack, %d valid cells", len(cloud), spec.height, spec.width,
                int(stack.valid.sum()))


def cmd_label(args) -> None:
    text = read_rule_file(args.rule_file) if args.rule_file else args.rule
    stack = StatsStack(load_container(args.stats))
    mask = evaluate_rule(parse_rule(text), stack)
    save_mask(args.output, mask)
    if args.png:
        Path(args.png).write_bytes(export_png(mask))
    logger.info("rule %r: %d tree cells of %d valid", text, mask.count(), int(mask.valid.sum()))


def cmd_train(args) -> None:
    image = load_container(args.image)
    labels = load_mask(args.labels)
    if labels.spec != image.spec:
        logger.info("resampling labels onto the image grid")
        labels = resample_nearest(labels, image.spec)
    cfg = TrainConfig(C=args.C, gamma=args.gamma, tol=args.tol, max_passes=args.max_passes,
                      sample_count=args.samples, seed=args.seed)
    samples = extract_training_samples(image, labels, cfg.sample_count, cfg.seed)
    model = train_svm(samples, cfg)
    write_model(args.output, model)
    logger.info("trained on %d samples: %d support vectors", len(samples), len(model.dual_coefs))


def cmd_predict(args) -> None:
    pred = predict_mask(read_model(args.model), load_container(args.image), args.threads)
    save_mask(args.output, pred)
    if args.png:
        Path(args.png).write_bytes(export_png(pred))


def cmd_evaluate(args) -> None:
    pred = load_mask(args.pred)
    truth = load_truth(Path(args.truth), args.truth_class)
    if truth.spec != pred.spec:
        logger.info("resampling truth onto the prediction grid")
        truth = resample_nearest(truth, pred.spec)
    counts, rep = evaluate(pred, truth)
    doc = report_dict(counts, rep)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)


def cmd_change(args) -> None:
    aoi = Window.parse(args.aoi) if args.aoi else None
    rep = change(load_mask(args.before), load_mask(args.after), aoi)
    text = json.dumps(rep.to_dict(), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
    if args.loss_mask:
        save_mask(args.loss_mask, rep.loss_mask)
    print(text)


def cmd_overlay(args) -> None:
    image = load_container(args.image)
    if args.bands:
        image = image.select(args.bands.split(","))
    Path(args.output).write_bytes(overlay_png(image, load_mask(args.loss), args.alpha))


def cmd_run(args) -> None:
    manifest = load_manifest(args.manifest)
    if args.threads is not None:
        manifest.threads = args.threads
    index = run_pipeline(manifest)
    print(json.dumps(index, indent=2, sort_keys=True))


def cmd_synth(args) -> None:
    years = tuple(args.years)
    # default densities are those of the 256 x 256 reference scene
    share = (args.size / 256) ** 2
    trees = args.trees if args.trees is not None else max(1, round(30 * share))
    buildings = args.buildings if args.buildings is not None else round(8 * share)
    spec = SyntheticSceneSpec(
        width=args.size, height=args.size, seed=args.seed, years=years,
        tree_count=trees, building_count=buildings,
        removal_fractions=tuple(args.removal) if args.removal else (0.0,) * (len(years) - 1),
        noise_sigma=args.noise,
    )
    scene = generate_synthetic_scene(spec)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cloud.xyz").write_text(format_xyz_text(scene.cloud))
    for year in years:
        save_container(out / f"image_{year}.cnpy", scene.images[year])
        save_mask(out / f"truth_{year}.mask", scene.truths[year])
    predict = "\n".join(f"{y} = image_{y}.cnpy" for y in years)
    truth = "\n".join(f"{y} = truth_{y}.mask" for y in years)
    (out / "run.ini").write_text(
        f"[run]\noutput_dir = out\nseed = {args.seed}\n\n"
        f"[rasterize]\ninput = cloud.xyz\ncell_size = {spec.cell_size}\nradius = 0.75\n\n"
        f"[label]\nrule = {DEFAULT_TREE_RULE}\n\n"
        f"[train]\nimage = image_{years[0]}.cnpy\nyear = {years[0]}\nsamples = 1000\n\n"
        f"[predict]\n{predict}\n\n[truth]\n{truth}\n\n[change]\noverlay_alpha = 0.5\n"
    )
    logger.info("synthetic scene with %d points written to %s", len(scene.cloud), out)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    common.add_argument("--verbose", "-v", action="store_true")

    ap = argparse.ArgumentParser(prog="canopylab", parents=[common],
                                 description="Weakly supervised tree-cover mapping from LiDAR labels.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", parents=[common], help="point cloud -> statistics stack")
    p.add_argument("--input", required=True, help="LAS or text point cloud")
    p.add_argument("--cell-size", type=float, default=0.5)
    p.add_argument("--radius", type=float, default=0.75)
    p.add_argument("--grid", type=_grid, help="origin_x,origin_y,width,height (default: cloud extent)")
    p.add_argument("--output", required=True)
    p.add_argument("--png", help="pseudo-RGB preview")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("label", parents=[common], help="threshold rule -> noisy mask")
    p.add_argument("--stats", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--rule", default=DEFAULT_TREE_RULE)
    g.add_argument("--rule-file")
    p.add_argument("--output", required=True)
    p.add_argument("--png")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", parents=[common], help="train the pixel SVM")
    p.add_argument("--image", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--C", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-passes", type=int, default=5)
    p.add_argument("--samples", type=int, default=5000, help="pixels drawn per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="apply a model to an image")
    p.add_argument("--image", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--png")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common], help="precision/recall/F1/IoU")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True, help=".mask, or .asc land-cover grid")
    p.add_argument("--truth-class", type=int, default=1, help="tree class id in a land-cover grid")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("change", parents=[common], help="tree-cover change between two masks")
    p.add_argument("--before", required=True)
    p.add_argument("--after", required=True)
    p.add_argument("--aoi", help="col0,row0,width,height in cells")
    p.add_argument("--report")
    p.add_argument("--loss-mask")
    p.set_defaults(func=cmd_change)

    p = sub.add_parser("overlay", parents=[common], help="red fallen-tree overlay PNG")
    p.add_argument("--image", required=True)
    p.add_argument("--loss", required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--bands", help="comma-separated band names (default: first three)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_overlay)

    p = sub.add_parser("run", parents=[common], help="execute a run manifest")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic scene")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=256, help="scene size in 0.5 m cells")
    p.add_argument("--years", type=_ints, default=[2011, 2013, 2015])
    p.add_argument("--removal", type=_floats, help="tree-pixel share removed between years")
    p.add_argument("--trees", type=int, help="tree crowns (default scales with area)")
    p.add_argument("--buildings", type=int, help="buildings (default scales with area)")
    p.add_argument("--noise", type=float, default=20.0, help="imagery noise sigma (8-bit units)")
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads is None and args.command != "run":
        args.threads = 0
    try:
        args.func(args)
    except CanopyError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except (OSError, UnicodeDecodeError) as exc:
        logger.error("%s", exc)
        return 3
    except Exception:
        logger.exception("internal error")
        return 5
    return 0


if __name__ == "__main__":
    sys.exit(main())
