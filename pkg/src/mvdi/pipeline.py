"""End-to-end orchestration: configuration, train/evaluate runs, ablation
tables, and stage timing.

A run executes, per sample: optional action-proposal crop, multi-view
projection, dynamic-image (or motion-map) extraction with temporal
segments, round-robin training of the multi-stream network on the
training split, per-group feature extraction on the whole-video images,
feature concatenation, PCA, and an SVM (or softmax-sum fusion). Reports
are structured text; the deterministic part round-trips to a config that
reproduces the run, while wall-clock timings render separately so
repeated runs stay byte-identical.

Configuration files are flat ``key = value`` text with dotted prefixes
as sections. Sample-level stages are pure, so they may run on a thread
pool (capped by MVDI_THREADS) with ordered aggregation; results are
identical for any worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import features as feat
from . import minicnn
from .depthio import SampleRecord, SplitSpec, load_boxes_csv, \
    load_manifest, load_skeleton_csv, load_video, make_split
from .errors import ConfigError, DataError, MvdiError
from .minicnn import ArchSpec, ConvLayerSpec, TrainConfig
from .proposal import BBox, boxes_from_skeleton, propose_and_crop, scaled_margin
from .rankpool import PoolConfig, SegmentSpec, compute_dmm, pool_video, \
    temporal_segments, to_dynamic_image
from .util import worker_count
from .viewsynth import ProjectionConfig, ViewGroup, default_view_groups, project_video

REPRESENTATIONS = ("dynamic_image", "dmm")
CLASSIFIERS = ("svm", "softmax_sum")
STAGES = ("projection", "representation", "proposal", "feature_extraction", "classification")

_POOL_VARIANT_ALIASES = {
    "exact": "exact_ranksvm",
    "exact_ranksvm": "exact_ranksvm",
    "approx-prefix": "approx_prefix",
    "approx_prefix": "approx_prefix",
    "approx-frames": "approx_frames",
    "approx_frames": "approx_frames",
}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    manifest: str
    seed: int = 7
    output_dir: str | None = None
    split: SplitSpec = field(
        default_factory=lambda: SplitSpec(mode="cross_subject", train_subjects=frozenset())
    )
    group_ids: tuple[int, ...] = (1, 2, 3, 4, 5)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    pool: PoolConfig = field(default_factory=PoolConfig)
    segments: SegmentSpec = field(default_factory=SegmentSpec)
    proposal_enabled: bool = True
    proposal_margin: int = 30
    representation: str = "dynamic_image"
    dmm_epsilon: float = 50.0
    classifier: str = "svm"
    pca_dim: int = 1000
    pca_whiten: bool = False
    l2_normalize: bool = False
    c_grid: tuple[float, ...] = feat.DEFAULT_C_GRID
    arch: ArchSpec = field(default_factory=ArchSpec)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(iters=150))
    segment_feature_average: bool = False

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise ConfigError(f"unknown representation: {self.representation}")
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"unknown classifier: {self.classifier}")
        known = {g.group_id for g in default_view_groups()}
        if not self.group_ids or not set(self.group_ids) <= known:
            raise ConfigError(f"view groups must be a non-empty subset of {sorted(known)}")
        if len(set(self.group_ids)) != len(self.group_ids):
            raise ConfigError("duplicate view group ids")
        if self.pca_dim < 1:
            raise ConfigError("pca.dim must be >= 1")
        if self.proposal_margin < 0:
            raise ConfigError("proposal.margin must be >= 0")

    def view_groups(self) -> list[ViewGroup]:
        by_id = {g.group_id: g for g in default_view_groups()}
        return [by_id[g] for g in sorted(self.group_ids)]


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; keys are unique."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        entries[key] = value
    return entries


def _parse_bool(value: str, key: str) -> bool:
    if value.lower() in ("true", "1", "yes", "on"):
        return True
    if value.lower() in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_conv(value: str) -> tuple[ConvLayerSpec, ...]:
    # filters:kernel:stride:padding:pool, comma separated
    layers = []
    for chunk in value.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 5:
            raise ConfigError(
                f"model.conv layer {chunk!r}: expected filters:kernel:stride:padding:pool"
            )
        f, k, s, p, pool = (int(x) for x in parts)
        layers.append(ConvLayerSpec(f, k, s, p, bool(pool)))
    return tuple(layers)


def _render_conv(conv: tuple[ConvLayerSpec, ...]) -> str:
    return ",".join(
        f"{c.filters}:{c.kernel}:{c.stride}:{c.padding}:{int(c.pool)}" for c in conv
    )


def config_from_entries(entries: dict[str, str]) -> PipelineConfig:
    """Build a resolved config from flat text entries, validating keys."""
    entries = dict(entries)

    def take(key, default=None):
        return entries.pop(key) if key in entries else default

    manifest = take("manifest")
    if not manifest:
        raise ConfigError("config must set 'manifest'")

    def ints(value):
        return frozenset(int(v) for v in value.split(",") if v.strip())

    def strs(value):
        return frozenset(v.strip() for v in value.split(",") if v.strip())

    try:
        mode = take("split.mode", "cross_subject")
        split = SplitSpec(
            mode=mode,
            train_subjects=ints(take("split.train_subjects", "")),
            train_views=ints(take("split.train_views", "")),
            train_ids=strs(take("split.train_ids", "")),
            test_ids=strs(take("split.test_ids", "")),
        )
        base = PipelineConfig(manifest=manifest)
        variant = take("pool.variant", base.pool.variant)
        if variant not in _POOL_VARIANT_ALIASES:
            raise ConfigError(f"pool.variant: unknown value {variant!r}")
        step_raw = take("pool.step_size", "")
        seed = int(take("seed", base.seed))
        config = PipelineConfig(
            manifest=manifest,
            seed=seed,
            output_dir=take("output_dir") or None,
            split=split,
            group_ids=tuple(
                int(v) for v in take("views.groups", "1,2,3,4,5").split(",") if v.strip()
            ),
            projection=ProjectionConfig(
                depth_scale=float(take("projection.depth_scale", base.projection.depth_scale)),
                hole_fill_radius=int(
                    take("projection.hole_fill_radius", base.projection.hole_fill_radius)
                ),
            ),
            pool=PoolConfig(
                variant=_POOL_VARIANT_ALIASES[variant],
                lam=float(take("pool.lambda", base.pool.lam)),
                max_iters=int(take("pool.max_iters", base.pool.max_iters)),
                step_size=float(step_raw) if step_raw else None,
                seed=int(take("pool.seed", base.pool.seed)),
            ),
            segments=SegmentSpec(
                num_segments=int(take("segments.num", base.segments.num_segments)),
                overlap_ratio=float(take("segments.overlap", base.segments.overlap_ratio)),
            ),
            proposal_enabled=_parse_bool(
                take("proposal.enabled", "true"), "proposal.enabled"
            ),
            proposal_margin=int(take("proposal.margin", base.proposal_margin)),
            representation=take("representation", base.representation),
            dmm_epsilon=float(take("dmm.epsilon", base.dmm_epsilon)),
            classifier=take("classifier", base.classifier),
            pca_dim=int(take("pca.dim", base.pca_dim)),
            pca_whiten=_parse_bool(take("pca.whiten", "false"), "pca.whiten"),
            l2_normalize=_parse_bool(
                take("features.l2_normalize", "false"), "features.l2_normalize"
            ),
            c_grid=tuple(
                float(v)
                for v in take("svm.c_grid", ",".join(repr(c) for c in base.c_grid)).split(",")
            ),
            arch=ArchSpec(
                input_size=int(take("model.input_size", base.arch.input_size)),
                conv=_parse_conv(take("model.conv", _render_conv(base.arch.conv))),
                hidden=tuple(
                    int(v) for v in take("model.hidden", "64").split(",") if v.strip()
                ),
            ),
            train=TrainConfig(
                learning_rate=float(take("train.learning_rate", base.train.learning_rate)),
                momentum=float(take("train.momentum", base.train.momentum)),
                weight_decay=float(take("train.weight_decay", base.train.weight_decay)),
                batch_size=int(take("train.batch_size", base.train.batch_size)),
                iters=int(take("train.iters", base.train.iters)),
                seed=int(take("train.seed", seed)),
                dropout=float(take("train.dropout", base.train.dropout)),
                precision=take("train.precision", base.train.precision),
            ),
            segment_feature_average=_parse_bool(
                take("features.segment_average", "false"), "features.segment_average"
            ),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    if entries:
        raise ConfigError(f"unknown config keys: {sorted(entries)}")
    return config


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return config_from_entries(parse_config_text(p.read_text()))


def config_to_lines(config: PipelineConfig) -> list[str]:
    """Every resolved setting as `key = value` lines (config-file syntax),
    so a report embeds a config that reproduces the run."""
    split = config.split
    lines = {
        "manifest": config.manifest,
        "seed": str(config.seed),
        "output_dir": config.output_dir or "",
        "split.mode": split.mode,
        "split.train_subjects": ",".join(str(v) for v in sorted(split.train_subjects)),
        "split.train_views": ",".join(str(v) for v in sorted(split.train_views)),
        "split.train_ids": ",".join(sorted(split.train_ids)),
        "split.test_ids": ",".join(sorted(split.test_ids)),
        "views.groups": ",".join(str(g) for g in config.group_ids),
        "projection.depth_scale": repr(config.projection.depth_scale),
        "projection.hole_fill_radius": str(config.projection.hole_fill_radius),
        "pool.variant": config.pool.variant,
        "pool.lambda": repr(config.pool.lam),
        "pool.max_iters": str(config.pool.max_iters),
        "pool.step_size": "" if config.pool.step_size is None else repr(config.pool.step_size),
        "pool.seed": str(config.pool.seed),
        "segments.num": str(config.segments.num_segments),
        "segments.overlap": repr(config.segments.overlap_ratio),
        "proposal.enabled": "true" if config.proposal_enabled else "false",
        "proposal.margin": str(config.proposal_margin),
        "representation": config.representation,
        "dmm.epsilon": repr(config.dmm_epsilon),
        "classifier": config.classifier,
        "pca.dim": str(config.pca_dim),
        "pca.whiten": "true" if config.pca_whiten else "false",
        "features.l2_normalize": "true" if config.l2_normalize else "false",
        "svm.c_grid": ",".join(repr(c) for c in config.c_grid),
        "model.input_size": str(config.arch.input_size),
        "model.conv": _render_conv(config.arch.conv),
        "model.hidden": ",".join(str(w) for w in config.arch.hidden),
        "train.learning_rate": repr(config.train.learning_rate),
        "train.momentum": repr(config.train.momentum),
        "train.weight_decay": repr(config.train.weight_decay),
        "train.batch_size": str(config.train.batch_size),
        "train.iters": str(config.train.iters),
        "train.seed": str(config.train.seed),
        "train.dropout": repr(config.train.dropout),
        "train.precision": config.train.precision,
        "features.segment_average": "true" if config.segment_feature_average else "false",
    }
    return [f"{key} = {value}" for key, value in sorted(lines.items())]


# ---------------------------------------------------------------------------
# Run execution
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    seed: int
    config_lines: list[str]
    num_train: int
    num_test: int
    overall_accuracy: float
    per_class_accuracy: list[float]
    confusion: np.ndarray  # rows = true class, cols = predicted
    stage_seconds: dict[str, float]  # mean per test video
    chosen_c: float | None = None
    feature_dim: int | None = None  # pre-PCA concatenated width (SVM path)


@dataclass
class _SampleData:
    record: SampleRecord
    candidates: dict  # view -> list of prepared images (whole first)
    seconds: dict[str, float]


def _load_sample_boxes(rec: SampleRecord, root: Path) -> list[BBox]:
    if rec.boxes_path:
        rows = load_boxes_csv(root / rec.boxes_path)
        return [BBox(*row) for row in rows]
    if rec.skeleton_path:
        return boxes_from_skeleton(load_skeleton_csv(root / rec.skeleton_path))
    raise DataError("proposal enabled but sample has no boxes or skeleton sidecar")


def _prepare_sample(rec: SampleRecord, root: Path, config: PipelineConfig, views) -> _SampleData:
    seconds = {stage: 0.0 for stage in STAGES}
    video = load_video(root / rec.video_path)

    if config.proposal_enabled:
        t0 = time.perf_counter()
        boxes = _load_sample_boxes(rec, root)
        margin = scaled_margin(config.proposal_margin, video.width)
        video, _ = propose_and_crop(video, boxes, margin)
        seconds["proposal"] = time.perf_counter() - t0

    candidates = {}
    for view in views:
        t0 = time.perf_counter()
        projected = project_video(video, [view], config.projection)[0]
        seconds["projection"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        if config.representation == "dynamic_image":
            images = [to_dynamic_image(pool_video(projected, config.pool))]
            for segment in temporal_segments(projected, config.segments):
                images.append(to_dynamic_image(pool_video(segment, config.pool)))
        else:
            images = [compute_dmm(projected, config.dmm_epsilon)]
            for segment in temporal_segments(projected, config.segments):
                images.append(compute_dmm(segment, config.dmm_epsilon))
        candidates[view] = [
            minicnn.prepare_image(im.pixels, config.arch.input_size) for im in images
        ]
        seconds["representation"] += time.perf_counter() - t0
    return _SampleData(record=rec, candidates=candidates, seconds=seconds)


def _prepare_all(records, root, config, views) -> list[_SampleData]:
    def work(rec):
        try:
            return _prepare_sample(rec, root, config, views)
        except MvdiError as exc:
            raise type(exc)(f"sample {rec.sample_id}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"sample {rec.sample_id}: {exc}") from exc

    workers = worker_count()
    if workers <= 1:
        return [work(rec) for rec in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(work, records))


def _group_features(model, groups, sample: _SampleData, config) -> dict[int, np.ndarray]:
    """Mean feature over the views of each group; by default only the
    whole-video image contributes (segments are training augmentation),
    optionally averaged over segments too."""
    out = {}
    for gi, group in enumerate(groups):
        vecs = []
        for view in group.views:
            images = sample.candidates[view] if config.segment_feature_average else \
                sample.candidates[view][:1]
            for image in images:
                vecs.append(minicnn.extract_feature(model, gi, image))
        out[group.group_id] = np.mean(vecs, axis=0)
    return out


def _group_logits(model, groups, sample: _SampleData) -> dict[int, np.ndarray]:
    out = {}
    for gi, group in enumerate(groups):
        vecs = [
            minicnn.forward(model, gi, sample.candidates[view][0])[0]
            for view in group.views
        ]
        out[group.group_id] = np.mean(vecs, axis=0)
    return out


def run(config: PipelineConfig) -> RunReport:
    """Execute a full train/evaluate experiment and produce its report."""
    manifest = load_manifest(config.manifest)
    root = Path(config.manifest).parent
    train_ids, test_ids = make_split(manifest, config.split)
    groups = config.view_groups()
    views = [v for g in groups for v in g.views]

    train_records = [r for r in manifest.records if r.sample_id in train_ids]
    test_records = [r for r in manifest.records if r.sample_id in test_ids]

    train_data = _prepare_all(train_records, root, config, views)
    test_data = _prepare_all(test_records, root, config, views)

    per_group_datasets = []
    for group in groups:
        items = []
        for sample in train_data:
            for view in group.views:
                items.append((sample.candidates[view], sample.record.label))
        per_group_datasets.append(items)

    model = minicnn.init_model(config.arch, len(groups), manifest.num_classes, config.seed)
    minicnn.train_round_robin(model, per_group_datasets, config.train)

    num_classes = manifest.num_classes
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    chosen_c = None
    feature_dim = None
    feature_seconds = []
    classify_seconds = []

    if config.classifier == "svm":
        def featurize(samples):
            rows = []
            times = []
            for sample in samples:
                t0 = time.perf_counter()
                per_group = _group_features(model, groups, sample, config)
                rows.append(feat.concat_group_features(per_group))
                times.append(time.perf_counter() - t0)
            return np.array(rows), times

        train_x, _ = featurize(train_data)
        test_x, feature_seconds = featurize(test_data)
        train_y = np.array([s.record.label for s in train_data])
        feature_dim = int(train_x.shape[1])
        if config.l2_normalize:
            train_x = feat.l2_normalize(train_x)
            test_x = feat.l2_normalize(test_x)

        k = min(config.pca_dim, train_x.shape[0] - 1, train_x.shape[1])
        pca = feat.pca_fit(train_x, k, whiten=config.pca_whiten)
        train_p = feat.pca_transform(pca, train_x)
        folds = min(5, train_x.shape[0])
        cv = feat.svm_cv_select(train_p, train_y, config.c_grid, folds=folds, seed=config.seed)
        chosen_c = cv.best_c
        svm = feat.svm_train(train_p, train_y, cv.best_c, seed=config.seed)
        for sample, row in zip(test_data, test_x):
            t0 = time.perf_counter()
            predicted, _ = feat.svm_predict(svm, feat.pca_transform(pca, row))
            classify_seconds.append(time.perf_counter() - t0)
            confusion[sample.record.label, predicted] += 1
    else:
        for sample in test_data:
            t0 = time.perf_counter()
            per_group = _group_logits(model, groups, sample)
            t1 = time.perf_counter()
            predicted, _ = feat.softmax_sum_fusion(per_group)
            classify_seconds.append(time.perf_counter() - t1)
            feature_seconds.append(t1 - t0)
            confusion[sample.record.label, predicted] += 1

    support = confusion.sum(axis=1)
    correct = np.diag(confusion)
    overall = float(correct.sum() / max(confusion.sum(), 1))
    per_class = [
        float(correct[c] / support[c]) if support[c] else 0.0 for c in range(num_classes)
    ]

    n_test = max(len(test_data), 1)
    stage_seconds = {
        "projection": sum(s.seconds["projection"] for s in test_data) / n_test,
        "representation": sum(s.seconds["representation"] for s in test_data) / n_test,
        "proposal": sum(s.seconds["proposal"] for s in test_data) / n_test,
        "feature_extraction": sum(feature_seconds) / n_test,
        "classification": sum(classify_seconds) / n_test,
    }

    return RunReport(
        seed=config.seed,
        config_lines=config_to_lines(config),
        num_train=len(train_data),
        num_test=len(test_data),
        overall_accuracy=overall,
        per_class_accuracy=per_class,
        confusion=confusion,
        stage_seconds=stage_seconds,
        chosen_c=chosen_c,
        feature_dim=feature_dim,
    )


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def render_report(report: RunReport, include_timings: bool = False) -> str:
    """Structured-text report. Timings are off by default so that repeated
    runs of one configuration render byte-identically."""
    lines = ["# mvdi run report", "format = mvdi-report-v1", "[config]"]
    lines += report.config_lines
    lines += [
        "[results]",
        f"num_train = {report.num_train}",
        f"num_test = {report.num_test}",
        f"overall_accuracy = {report.overall_accuracy:.6f}",
        "per_class_accuracy = "
        + ",".join(f"{a:.6f}" for a in report.per_class_accuracy),
    ]
    if report.feature_dim is not None:
        lines.append(f"feature_dim = {report.feature_dim}")
    if report.chosen_c is not None:
        lines.append(f"chosen_c = {report.chosen_c!r}")
    lines.append("[confusion]")
    for row in report.confusion:
        lines.append(" ".join(str(int(v)) for v in row))
    if include_timings:
        lines.append("[timings]")
        lines += report_timings(report).splitlines()
    return "\n".join(lines) + "\n"


def report_timings(report: RunReport) -> str:
    """Stage-time table: mean seconds per test video, plus their sum."""
    rows = [
        ("projection", report.stage_seconds["projection"]),
        ("representation", report.stage_seconds["representation"]),
        ("proposal", report.stage_seconds["proposal"]),
        ("feature_extraction", report.stage_seconds["feature_extraction"]),
        ("classification", report.stage_seconds["classification"]),
    ]
    overall = sum(value for _, value in rows)
    rows.append(("overall", overall))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name.ljust(width)}  {value:.6f}" for name, value in rows)


def config_from_report(text: str) -> PipelineConfig:
    """Rebuild the configuration embedded in a rendered report."""
    lines = []
    active = False
    for raw in text.splitlines():
        if raw.strip() == "[config]":
            active = True
            continue
        if raw.strip().startswith("[") and raw.strip() != "[config]":
            active = False
            continue
        if active and raw.strip():
            lines.append(raw)
    entries = parse_config_text("\n".join(lines))
    entries = {k: v for k, v in entries.items() if v != ""}
    return config_from_entries(entries)


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------

ABLATION_AXES = ("representation", "view_groups", "proposal", "classifier")


@dataclass
class AblationResult:
    axis: str
    rows: list[tuple[str, float]]


def run_ablation(config: PipelineConfig, axis: str) -> AblationResult:
    """Re-run the base configuration across one experimental axis.

    view_groups emits the five single-group rows followed by the
    cumulative rows Group 1, Group 1+2, ..., Group 1+2+3+4+5; the other
    axes emit one row per enum value.
    """
    if axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis: {axis}")
    rows: list[tuple[str, float]] = []
    if axis == "representation":
        for value in REPRESENTATIONS:
            rows.append((value, run(replace(config, representation=value)).overall_accuracy))
    elif axis == "classifier":
        for value in ("softmax_sum", "svm"):
            rows.append((value, run(replace(config, classifier=value)).overall_accuracy))
    elif axis == "proposal":
        rows.append(("MVDI-O", run(replace(config, proposal_enabled=False)).overall_accuracy))
        rows.append(("MVDI-AP", run(replace(config, proposal_enabled=True)).overall_accuracy))
    else:
        cache: dict[tuple[int, ...], float] = {}

        def accuracy(group_ids: tuple[int, ...]) -> float:
            if group_ids not in cache:
                cache[group_ids] = run(replace(config, group_ids=group_ids)).overall_accuracy
            return cache[group_ids]

        for g in (1, 2, 3, 4, 5):
            rows.append((f"Group {g}", accuracy((g,))))
        for upto in range(1, 6):
            ids = tuple(range(1, upto + 1))
            rows.append(("Group " + "+".join(str(g) for g in ids), accuracy(ids)))
    return AblationResult(axis=axis, rows=rows)


def render_ablation(result: AblationResult) -> str:
    width = max(len(label) for label, _ in result.rows)
    lines = [f"axis = {result.axis}"]
    lines += [
        f"{label.ljust(width)}  {accuracy:.6f}" for label, accuracy in result.rows
    ]
    return "\n".join(lines) + "\n"
