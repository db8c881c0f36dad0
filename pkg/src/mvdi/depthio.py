"""Depth-video I/O, dataset manifests, evaluation splits, and synthetic data.

Videos are stored as directories of per-frame binary portable graymaps
(P5) with maxval 65535, one frame per file named ``frame_%06d.pgm``.
Samples at maxval > 255 are two bytes each, most significant byte first,
as the graymap format requires. Depth values are abstract unsigned 16-bit
sensor units; 0 means "no reading".

Manifests and sidecar files (per-frame bounding boxes, skeleton key
points) are plain comma-separated text so any tool can produce them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .util import round_half_up

MANIFEST_COLUMNS = (
    "sample_id",
    "video_path",
    "label",
    "subject_id",
    "camera_view_id",
    "boxes_path",
    "skeleton_path",
)

FRAME_NAME = "frame_{:06d}.pgm"


# ---------------------------------------------------------------------------
# Core video types
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DepthVideo:
    """Ordered stack of equally sized 16-bit depth frames, shape (T, H, W)."""

    frames: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.frames)
        if arr.ndim != 3:
            raise ValueError(f"frames must be (T, H, W), got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("a depth video needs at least one frame")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"frame dimensions must be >= 1, got {arr.shape[1:]}")
        if arr.dtype != np.uint16:
            if np.issubdtype(arr.dtype, np.integer) and arr.min() >= 0 and arr.max() <= 0xFFFF:
                arr = arr.astype(np.uint16)
            else:
                raise ValueError("depth values must fit unsigned 16 bits")
        self.frames = np.ascontiguousarray(arr)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    def frame(self, t: int) -> np.ndarray:
        return self.frames[t]

    def __eq__(self, other) -> bool:
        if not isinstance(other, DepthVideo):
            return NotImplemented
        return self.frames.shape == other.frames.shape and bool(
            np.array_equal(self.frames, other.frames)
        )


# ---------------------------------------------------------------------------
# Binary P5 graymap codec
# ---------------------------------------------------------------------------

def write_pgm(path, image: np.ndarray, maxval: int = 65535) -> None:
    """Write one grayscale image as a binary P5 graymap.

    maxval 65535 stores big-endian 16-bit samples; maxval <= 255 stores
    single bytes. Round-trips bit-exactly with :func:`read_pgm`.
    """
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("expected a 2-D image")
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in [1, 65535]")
    if image.min() < 0 or image.max() > maxval:
        raise ValueError("pixel values exceed maxval")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n{maxval}\n".encode("ascii")
    if maxval > 255:
        raster = image.astype(">u2").tobytes()
    else:
        raster = image.astype(np.uint8).tobytes()
    Path(path).write_bytes(header + raster)


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary P5 graymap; returns (image, maxval).

    16-bit rasters come back as uint16, 8-bit as uint8. Comments (#) in
    the header are tolerated.
    """
    data = Path(path).read_bytes()
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(data):
            c = data[pos:pos + 1]
            if c == b"#":
                while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated graymap header")
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise DataError(f"{path}: not a binary P5 graymap (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise DataError(f"{path}: malformed graymap header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid graymap dimensions or maxval")
    pos += 1  # single whitespace byte separates header from raster
    itemsize = 2 if maxval > 255 else 1
    expected = width * height * itemsize
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise DataError(f"{path}: raster truncated ({len(raster)} of {expected} bytes)")
    if itemsize == 2:
        image = np.frombuffer(raster, dtype=">u2").reshape(height, width).astype(np.uint16)
    else:
        image = np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()
    return image, maxval


def save_video(video: DepthVideo, path) -> None:
    """Write a depth video as a directory of 16-bit P5 frames."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    for t in range(video.num_frames):
        write_pgm(out / FRAME_NAME.format(t), video.frames[t], maxval=65535)


def load_video(path) -> DepthVideo:
    """Load a depth video from a directory of 16-bit P5 frames.

    Frames are taken in lexicographic filename order. All frames must
    agree in size and carry maxval 65535; values are preserved bit-exactly.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataError(f"video directory not found: {root}")
    files = sorted(root.glob("*.pgm"))
    if not files:
        raise DataError(f"no .pgm frames in {root}")
    frames = []
    shape = None
    for f in files:
        image, maxval = read_pgm(f)
        if maxval != 65535:
            raise DataError(f"{f}: depth frames must use maxval 65535, got {maxval}")
        if shape is None:
            shape = image.shape
        elif image.shape != shape:
            raise DataError(
                f"{f}: frame size {image.shape} differs from first frame {shape}"
            )
        frames.append(image)
    return DepthVideo(np.stack(frames))


# ---------------------------------------------------------------------------
# Manifests and sidecars
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    video_path: str
    label: int
    subject_id: int
    camera_view_id: int
    boxes_path: str | None = None
    skeleton_path: str | None = None

    def __post_init__(self):
        if not self.sample_id:
            raise DataError("sample_id must be non-empty")
        if self.label < 0:
            raise DataError(f"{self.sample_id}: negative label {self.label}")


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise DataError("num_classes must be >= 1")
        seen = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise DataError(f"duplicate sample_id: {rec.sample_id}")
            seen.add(rec.sample_id)
            if rec.label >= self.num_classes:
                raise DataError(
                    f"{rec.sample_id}: label {rec.label} out of range "
                    f"[0, {self.num_classes})"
                )

    def by_id(self, sample_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.sample_id == sample_id:
                return rec
        raise KeyError(sample_id)


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = [",".join(MANIFEST_COLUMNS)]
    for rec in manifest.records:
        lines.append(
            ",".join(
                [
                    rec.sample_id,
                    rec.video_path,
                    str(rec.label),
                    str(rec.subject_id),
                    str(rec.camera_view_id),
                    rec.boxes_path or "",
                    rec.skeleton_path or "",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path, num_classes: int | None = None) -> DatasetManifest:
    """Parse a manifest CSV. num_classes is inferred as max(label)+1 when
    not given explicitly; passing it enables range validation against an
    externally known class count."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"manifest not found: {p}")
    lines = [ln for ln in p.read_text().splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"{p}: empty manifest")
    header = tuple(h.strip() for h in lines[0].split(","))
    for col in MANIFEST_COLUMNS[:5]:
        if col not in header:
            raise DataError(f"{p}: missing required column '{col}'")
    idx = {name: header.index(name) for name in header}
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != len(header):
            raise DataError(f"{p}:{lineno}: expected {len(header)} fields")

        def get(name, default=None):
            if name not in idx:
                return default
            value = fields[idx[name]]
            return value if value else default

        try:
            records.append(
                SampleRecord(
                    sample_id=get("sample_id", ""),
                    video_path=get("video_path", ""),
                    label=int(get("label")),
                    subject_id=int(get("subject_id")),
                    camera_view_id=int(get("camera_view_id")),
                    boxes_path=get("boxes_path"),
                    skeleton_path=get("skeleton_path"),
                )
            )
        except (TypeError, ValueError) as exc:
            raise DataError(f"{p}:{lineno}: malformed record: {exc}") from exc
    if num_classes is None:
        num_classes = max(rec.label for rec in records) + 1
    return DatasetManifest(records=records, num_classes=num_classes)


def save_boxes_csv(rows: list[tuple[int, int, int, int, int]], path) -> None:
    """Write per-frame boxes as `frame_index,x,y,w,h` lines."""
    lines = ["frame_index,x,y,w,h"]
    lines += [",".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_boxes_csv(path) -> list[tuple[int, int, int, int, int]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"boxes file not found: {p}")
    rows = []
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("frame_index"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DataError(f"{p}:{lineno}: expected frame_index,x,y,w,h")
        try:
            rows.append(tuple(int(v) for v in parts))
        except ValueError as exc:
            raise DataError(f"{p}:{lineno}: non-integer box field") from exc
    return rows


def save_skeleton_csv(rows: list[tuple[int, int, int, int]], path) -> None:
    """Write skeleton key points as `frame_index,joint_index,x,y` lines."""
    lines = ["frame_index,joint_index,x,y"]
    lines += [",".join(str(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_skeleton_csv(path) -> dict[int, list[tuple[int, int]]]:
    """Read skeleton key points grouped per frame index."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"skeleton file not found: {p}")
    joints: dict[int, list[tuple[int, int]]] = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("frame_index"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"{p}:{lineno}: expected frame_index,joint_index,x,y")
        try:
            frame, _joint, x, y = (int(v) for v in parts)
        except ValueError as exc:
            raise DataError(f"{p}:{lineno}: non-integer skeleton field") from exc
        joints.setdefault(frame, []).append((x, y))
    return joints


# ---------------------------------------------------------------------------
# Evaluation splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Train/test partition rule.

    mode 'cross_subject' partitions by subject_id using train_subjects,
    'cross_view' by camera_view_id using train_views, and 'explicit'
    echoes the given id sets.
    """

    mode: str
    train_ids: frozenset[str] = frozenset()
    test_ids: frozenset[str] = frozenset()
    train_subjects: frozenset[int] = frozenset()
    train_views: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.mode not in ("cross_subject", "cross_view", "explicit"):
            raise ConfigError(f"unknown split mode: {self.mode}")


def make_split(manifest: DatasetManifest, spec: SplitSpec) -> tuple[set[str], set[str]]:
    """Partition manifest sample ids into disjoint (train, test) sets.

    Protocol modes assign every record: key in the train set -> train,
    any other key -> test. Either side ending up empty is an error.
    """
    train: set[str] = set()
    test: set[str] = set()
    if spec.mode == "explicit":
        ids = {rec.sample_id for rec in manifest.records}
        for sid in spec.train_ids | spec.test_ids:
            if sid not in ids:
                raise DataError(f"split references unknown sample_id: {sid}")
        overlap = spec.train_ids & spec.test_ids
        if overlap:
            raise DataError(f"train/test overlap: {sorted(overlap)[:3]}")
        train, test = set(spec.train_ids), set(spec.test_ids)
    else:
        key = "subject_id" if spec.mode == "cross_subject" else "camera_view_id"
        train_keys = spec.train_subjects if spec.mode == "cross_subject" else spec.train_views
        for rec in manifest.records:
            (train if getattr(rec, key) in train_keys else test).add(rec.sample_id)
    if not train:
        raise DataError("split produced an empty train set")
    if not test:
        raise DataError("split produced an empty test set")
    return train, test


# ---------------------------------------------------------------------------
# Synthetic desk-scale action dataset
# ---------------------------------------------------------------------------

# Each class is a constant per-frame displacement (dx, dy, dz) of a 3-D
# point blob; x/y are in pixels, z in scaled-depth length units. Opposite
# pairs are deliberate time reversals of each other, so order-blind
# representations cannot tell them apart.
MOTIONS = (
    ("translate_right", (0.8, 0.0, 0.0)),
    ("translate_left", (-0.8, 0.0, 0.0)),
    ("translate_down", (0.0, 0.8, 0.0)),
    ("translate_up", (0.0, -0.8, 0.0)),
    ("approach", (0.0, 0.0, -0.15)),
    ("recede", (0.0, 0.0, 0.15)),
    ("diag_rise", (0.6, -0.6, 0.0)),
    ("diag_fall", (-0.6, 0.6, 0.0)),
)

NUM_JOINTS = 6


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    samples_per_class: int = 20
    width: int = 32
    height: int = 32
    num_frames: int = 16
    camera_views: tuple[float, ...] = (0.0,)
    noise: float = 1.0
    depth_scale: float = 0.1

    def __post_init__(self):
        if not 2 <= self.num_classes <= 8:
            raise ConfigError("num_classes must be in [2, 8]")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be >= 1")
        if self.width < 8 or self.height < 8:
            raise ConfigError("frame size must be at least 8x8")
        if self.num_frames < 2:
            raise ConfigError("num_frames must be >= 2")
        if not self.camera_views:
            raise ConfigError("at least one camera view angle required")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.depth_scale <= 0:
            raise ConfigError("depth_scale must be > 0")


def _blob_points(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample one actor: a Gaussian core plus a thin limb.

    Coordinates are centered length units: x/y are pixel offsets from the
    frame center, z is depth times depth_scale. Returns (points, joints)
    where joints are NUM_JOINTS designated key points of the actor.
    """
    center = np.array(
        [rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(5.7, 6.3)]
    )
    core = center + rng.normal(0.0, [2.0, 2.0, 0.35], size=(150, 3))
    direction = rng.normal(size=3)
    direction[2] *= 0.1  # keep the limb mostly in-plane
    direction /= np.linalg.norm(direction)
    frac = rng.uniform(0.0, 1.0, size=(60, 1))
    limb = center + frac * direction * 5.5 + rng.normal(0.0, 0.4, size=(60, 3))
    points = np.vstack([core, limb])
    joint_frac = np.linspace(0.0, 1.0, NUM_JOINTS).reshape(-1, 1)
    joints = center + joint_frac * direction * 5.5
    return points, joints


def render_points(
    points: np.ndarray, width: int, height: int, depth_scale: float
) -> np.ndarray:
    """Image a centered 3-D point set onto a (height, width) depth grid.

    Pixel = rounded (x, y) offset from the frame center; value = rounded
    z / depth_scale clamped to [1, 65535]. Collisions keep the nearest
    (smallest) depth; empty pixels stay 0.
    """
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    xs = round_half_up(points[:, 0] + cx)
    ys = round_half_up(points[:, 1] + cy)
    ds = np.clip(round_half_up(points[:, 2] / depth_scale), 1, 0xFFFF)
    ok = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    frame = np.full((height, width), 0x10000, dtype=np.int64)
    np.minimum.at(frame, (ys[ok], xs[ok]), ds[ok])
    frame[frame == 0x10000] = 0
    return frame.astype(np.uint16)


def synth_dataset(config: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Generate a deterministic synthetic action dataset on disk.

    Writes one video directory per (class, instance, camera view) sample,
    per-frame ground-truth box and skeleton sidecars, and manifest.csv at
    the output root (paths recorded relative to the manifest). subject_id
    is the instance index, camera_view_id the index into camera_views.
    """
    from .viewsynth import ViewSpec, rotation_matrix

    out = Path(out_dir)
    (out / "videos").mkdir(parents=True, exist_ok=True)
    (out / "boxes").mkdir(exist_ok=True)
    (out / "skeletons").mkdir(exist_ok=True)

    records = []
    for cls in range(config.num_classes):
        _, step = MOTIONS[cls]
        step = np.asarray(step)
        for inst in range(config.samples_per_class):
            geo_rng = np.random.default_rng([seed, cls, inst])
            points, joints = _blob_points(geo_rng)
            # center the sweep so the actor stays in frame for every class
            start = -step * (config.num_frames - 1) / 2.0
            for view_idx, alpha in enumerate(config.camera_views):
                rot = rotation_matrix(ViewSpec(alpha=float(alpha), beta=0.0))
                jitter_rng = np.random.default_rng([seed, cls, inst, view_idx])
                frames = np.zeros(
                    (config.num_frames, config.height, config.width), dtype=np.uint16
                )
                box_rows = []
                skel_rows = []
                cx = (config.width - 1) / 2.0
                cy = (config.height - 1) / 2.0
                for t in range(config.num_frames):
                    offset = start + step * t
                    pts = points + offset
                    if config.noise > 0:
                        pts = pts + jitter_rng.normal(
                            0.0, 0.05 * config.noise, size=pts.shape
                        )
                    frame = render_points(
                        pts @ rot.T, config.width, config.height, config.depth_scale
                    )
                    if config.noise > 0:
                        occupied = frame > 0
                        bump = round_half_up(
                            jitter_rng.normal(0.0, config.noise, size=frame.shape)
                        )
                        noisy = frame.astype(np.int64) + bump
                        frame = np.where(
                            occupied, np.clip(noisy, 1, 0xFFFF), 0
                        ).astype(np.uint16)
                    frames[t] = frame
                    ys, xs = np.nonzero(frame)
                    if xs.size:
                        box_rows.append(
                            (
                                t,
                                int(xs.min()),
                                int(ys.min()),
                                int(xs.max() - xs.min() + 1),
                                int(ys.max() - ys.min() + 1),
                            )
                        )
                    jpts = (joints + offset) @ rot.T
                    jx = np.clip(round_half_up(jpts[:, 0] + cx), 0, config.width - 1)
                    jy = np.clip(round_half_up(jpts[:, 1] + cy), 0, config.height - 1)
                    for j in range(NUM_JOINTS):
                        skel_rows.append((t, j, int(jx[j]), int(jy[j])))

                sample_id = f"c{cls}_i{inst}_v{view_idx}"
                video_rel = f"videos/{sample_id}"
                boxes_rel = f"boxes/{sample_id}.csv"
                skel_rel = f"skeletons/{sample_id}.csv"
                save_video(DepthVideo(frames), out / video_rel)
                save_boxes_csv(box_rows, out / boxes_rel)
                save_skeleton_csv(skel_rows, out / skel_rel)
                records.append(
                    SampleRecord(
                        sample_id=sample_id,
                        video_path=video_rel,
                        label=cls,
                        subject_id=inst,
                        camera_view_id=view_idx,
                        boxes_path=boxes_rel,
                        skeleton_path=skel_rel,
                    )
                )

    manifest = DatasetManifest(records=records, num_classes=config.num_classes)
    save_manifest(manifest, out / "manifest.csv")
    return manifest
