"""Command-line interface.

Subcommands cover the per-module operations (synth, project, pool, dmm,
propose, train, gradcheck, classify) and the orchestrated experiments
(run, ablate). Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import features as feat
from . import minicnn, pipeline, serialize
from .depthio import (
    SynthConfig,
    load_boxes_csv,
    load_manifest,
    load_skeleton_csv,
    load_video,
    save_video,
    synth_dataset,
    write_pgm,
)
from .errors import ConfigError, DataError, MvdiError, NumericError
from .proposal import BBox, boxes_from_skeleton, propose_and_crop
from .rankpool import PoolConfig, compute_dmm, pool_video, to_dynamic_image
from .viewsynth import ProjectionConfig, ViewSpec, project_video


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvdi",
        description="Multi-view dynamic images for depth-video action recognition",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic depth action dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--views", default="0", help="comma list of camera alpha angles")
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("project", help="synthesize a virtual-view depth video")
    p.add_argument("--video", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--depth-scale", type=float, default=0.1)
    p.add_argument("--hole-fill", type=int, default=1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pool", help="pool a depth video into a dynamic image")
    p.add_argument("--video", required=True)
    p.add_argument(
        "--variant",
        choices=["exact", "approx-prefix", "approx-frames"],
        default="approx-frames",
    )
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--out", required=True, help="8-bit P5 graymap path")
    p.add_argument("--dump-u", default=None, help="raw float64 weight-vector dump")

    p = sub.add_parser("dmm", help="order-blind depth motion map baseline")
    p.add_argument("--video", required=True)
    p.add_argument("--epsilon", type=float, default=50.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("propose", help="crop a video to its action proposal cube")
    p.add_argument("--video", required=True)
    p.add_argument("--boxes", default=None, help="frame_index,x,y,w,h CSV")
    p.add_argument("--from-skeleton", default=None, help="frame_index,joint_index,x,y CSV")
    p.add_argument("--margin", type=int, default=30)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the multi-stream network on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--groups", type=int, default=5, help="use the first N view groups")
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.add_argument("--proposal", action="store_true", help="crop to action proposals")
    p.add_argument("--input-size", type=int, default=32)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--models", type=int, default=20)

    p = sub.add_parser("classify", help="PCA + cross-validated linear SVM on features")
    p.add_argument("--train-features", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-features", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--pca-dim", type=int, default=1000)
    p.add_argument("--c-grid", default=",".join(repr(c) for c in feat.DEFAULT_C_GRID))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("run", help="full train/evaluate experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--timings", action="store_true", help="include timings in stdout report")

    p = sub.add_parser("ablate", help="re-run a config across one experimental axis")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True, choices=pipeline.ABLATION_AXES)

    return parser


def _read_labels(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"label file not found: {p}")
    try:
        return np.array([int(line) for line in p.read_text().split()])
    except ValueError as exc:
        raise DataError(f"{p}: labels must be one integer per line") from exc


def _cmd_synth(args) -> int:
    config = SynthConfig(
        num_classes=args.classes,
        samples_per_class=args.per_class,
        width=args.size,
        height=args.size,
        num_frames=args.frames,
        camera_views=tuple(float(v) for v in args.views.split(",")),
        noise=args.noise,
    )
    manifest = synth_dataset(config, seed=args.seed, out_dir=args.out)
    print(f"wrote {len(manifest.records)} samples to {args.out}")
    return 0


def _cmd_project(args) -> int:
    video = load_video(args.video)
    cfg = ProjectionConfig(depth_scale=args.depth_scale, hole_fill_radius=args.hole_fill)
    out = project_video(video, [ViewSpec(alpha=args.alpha, beta=args.beta)], cfg)[0]
    save_video(out, args.out)
    print(f"wrote {out.num_frames} frames to {args.out}")
    return 0


def _cmd_pool(args) -> int:
    video = load_video(args.video)
    variant = {"exact": "exact_ranksvm", "approx-prefix": "approx_prefix",
               "approx-frames": "approx_frames"}[args.variant]
    cfg = PoolConfig(
        variant=variant, lam=args.lam, max_iters=args.max_iters, step_size=args.step_size
    )
    u = pool_video(video, cfg)
    image = to_dynamic_image(u)
    write_pgm(args.out, image.pixels, maxval=255)
    if args.dump_u:
        serialize.write_ranking_vector(args.dump_u, u.u, u.width, u.height)
    print(f"wrote dynamic image to {args.out}")
    return 0


def _cmd_dmm(args) -> int:
    video = load_video(args.video)
    image = compute_dmm(video, args.epsilon)
    write_pgm(args.out, image.pixels, maxval=255)
    print(f"wrote motion map to {args.out}")
    return 0


def _cmd_propose(args) -> int:
    if bool(args.boxes) == bool(args.from_skeleton):
        raise ConfigError("give exactly one of --boxes or --from-skeleton")
    video = load_video(args.video)
    if args.boxes:
        boxes = [BBox(*row) for row in load_boxes_csv(args.boxes)]
    else:
        boxes = boxes_from_skeleton(load_skeleton_csv(args.from_skeleton))
    cropped, cube = propose_and_crop(video, boxes, args.margin)
    save_video(cropped, args.out)
    print(
        f"cube x[{cube.x0},{cube.x1}) y[{cube.y0},{cube.y1}) "
        f"t[{cube.t0},{cube.t1}] -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    config = pipeline.PipelineConfig(
        manifest=args.manifest,
        seed=args.seed,
        group_ids=tuple(range(1, args.groups + 1)),
        proposal_enabled=args.proposal,
        arch=replace(minicnn.ArchSpec(), input_size=args.input_size),
        train=replace(minicnn.TrainConfig(), iters=args.iters, seed=args.seed),
    )
    manifest = load_manifest(config.manifest)
    root = Path(config.manifest).parent
    groups = config.view_groups()
    views = [v for g in groups for v in g.views]
    data = pipeline._prepare_all(manifest.records, root, config, views)
    per_group = []
    for group in groups:
        per_group.append(
            [
                (sample.candidates[view], sample.record.label)
                for sample in data
                for view in group.views
            ]
        )
    model = minicnn.init_model(config.arch, len(groups), manifest.num_classes, args.seed)
    _, trace = minicnn.train_round_robin(model, per_group, config.train)
    minicnn.save_model(model, args.out)
    print(f"trained {len(trace)} steps; final loss {trace[-1][2]:.6f}; saved {args.out}")
    return 0


def _cmd_gradcheck(args) -> int:
    worst_overall = 0.0
    for i in range(args.models):
        model, gid, batch, labels = minicnn.random_tiny_model(args.seed + i)
        cfg = minicnn.TrainConfig(weight_decay=0.0005, dropout=0.0, precision="f64")
        worst = minicnn.finite_difference_check(model, gid, batch, labels, cfg)
        worst_overall = max(worst_overall, worst)
        print(f"model {i}: max relative error {worst:.3e}")
    print(f"overall max relative error: {worst_overall:.3e}")
    if worst_overall >= 1e-4:
        raise NumericError("gradient check failed (relative error >= 1e-4)")
    return 0


def _cmd_classify(args) -> int:
    train_x = serialize.read_features(args.train_features)
    test_x = serialize.read_features(args.test_features)
    train_y = _read_labels(args.train_labels)
    test_y = _read_labels(args.test_labels)
    if train_x.shape[0] != train_y.size or test_x.shape[0] != test_y.size:
        raise DataError("feature/label row counts disagree")
    c_grid = tuple(float(v) for v in args.c_grid.split(","))
    k = min(args.pca_dim, train_x.shape[0] - 1, train_x.shape[1])
    pca = feat.pca_fit(train_x, k)
    train_p = feat.pca_transform(pca, train_x)
    cv = feat.svm_cv_select(train_p, train_y, c_grid, folds=5, seed=args.seed)
    model = feat.svm_train(train_p, train_y, cv.best_c, seed=args.seed)
    predictions = feat.svm_predict_batch(model, feat.pca_transform(pca, test_x))
    accuracy = float((predictions == test_y).mean())
    print(f"pca_dim = {k}")
    print(f"chosen_c = {cv.best_c!r}")
    print(f"accuracy = {accuracy:.6f}")
    return 0


def _cmd_run(args) -> int:
    config = pipeline.load_config(args.config)
    report = pipeline.run(config)
    text = pipeline.render_report(report, include_timings=args.timings)
    sys.stdout.write(text)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(pipeline.render_report(report))
        (out / "timings.txt").write_text(pipeline.report_timings(report) + "\n")
        print(f"# wrote {out / 'report.txt'} and {out / 'timings.txt'}")
    return 0


def _cmd_ablate(args) -> int:
    config = pipeline.load_config(args.config)
    result = pipeline.run_ablation(config, args.axis)
    text = pipeline.render_ablation(result)
    sys.stdout.write(text)
    if config.output_dir:
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{args.axis}.txt").write_text(text)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "project": _cmd_project,
    "pool": _cmd_pool,
    "dmm": _cmd_dmm,
    "propose": _cmd_propose,
    "train": _cmd_train,
    "gradcheck": _cmd_gradcheck,
    "classify": _cmd_classify,
    "run": _cmd_run,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except MvdiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
