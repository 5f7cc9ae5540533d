"""Clip domain types, synthetic world generator, disk format, and windowing.

A clip couples three aligned per-frame records: a dense optical-flow field,
a set of tracked object boxes, and a binary anomaly label. Flow frame ``t``
holds the displacement from frame ``t`` to ``t+1`` in pixels. Boxes are
normalized corners ``[x_min, y_min, x_max, y_max]`` with coordinates in
``[0, 1]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

# Accident category codes and the ego/non-ego flag carried in clip metadata.
CATEGORIES = {
    "ST": "collision with a vehicle that is starting, stopping, or stationary",
    "AH": "collision with a vehicle moving ahead or waiting",
    "LA": "collision with a vehicle moving laterally, same direction",
    "OC": "collision with an oncoming vehicle",
    "TC": "collision with a vehicle that turns into or crosses a road",
    "VP": "vehicle-pedestrian collision",
    "VO": "collision with an obstacle in the roadway",
    "OO": "out-of-control, leaving the roadway",
    "UK": "unknown",
}

ANOMALY_KINDS = ("normal", "ego_jolt", "object_swerve", "object_stop")

_KIND_TO_CATEGORY = {
    "normal": ("normal", False),
    "ego_jolt": ("OO", True),
    "object_swerve": ("LA", False),
    "object_stop": ("ST", False),
}


class ClipFormatError(Exception):
    """Raised on the first violation found while reading clip files."""


@dataclass
class ClipMeta:
    clip_id: str
    frames: int
    height: int
    width: int
    category: str = "normal"
    ego: bool = False
    resolution: tuple[int, int] = (64, 64)  # source (width, height) in pixels


class TrackSet:
    """Boxes indexed by frame and object id.

    Tracks may start and end anywhere inside the clip; windowing helpers
    return None when an object does not cover the requested range.
    """

    def __init__(self):
        self._frames: dict[int, dict[int, np.ndarray]] = {}

    def add(self, t: int, obj_id: int, box) -> None:
        box = np.asarray(box, dtype=np.float32)
        if box.shape != (4,):
            raise ValueError(f"box must have 4 components, got shape {box.shape}")
        self._frames.setdefault(t, {})[obj_id] = box

    def ids_at(self, t: int) -> list[int]:
        return sorted(self._frames.get(t, {}))

    def box(self, t: int, obj_id: int) -> np.ndarray | None:
        return self._frames.get(t, {}).get(obj_id)

    def window(self, obj_id: int, t0: int, t1: int) -> np.ndarray | None:
        """Boxes for frames [t0, t1), or None when coverage is incomplete."""
        rows = []
        for t in range(t0, t1):
            box = self.box(t, obj_id)
            if box is None:
                return None
            rows.append(box)
        return np.stack(rows)

    def items(self):
        for t in sorted(self._frames):
            for obj_id in sorted(self._frames[t]):
                yield t, obj_id, self._frames[t][obj_id]

    def frame_count(self) -> int:
        return len(self._frames)


@dataclass
class Clip:
    meta: ClipMeta
    flows: np.ndarray          # [T,2,H,W] float32, channel 0 = u, 1 = v
    tracks: TrackSet
    labels: np.ndarray         # [T] int8, 1 marks anomalous frames

    def __post_init__(self):
        T = self.meta.frames
        if self.flows.shape != (T, 2, self.meta.height, self.meta.width):
            raise ValueError(f"flow stack shape {self.flows.shape} does not match meta")
        if self.labels.shape != (T,):
            raise ValueError(f"labels shape {self.labels.shape} does not match frames={T}")

    @property
    def is_anomalous(self) -> bool:
        return bool(self.labels.any())


@dataclass
class TrainingSample:
    """One sliding-window example: reconstruct the flow, predict the future."""

    clip_id: str
    t: int                     # index of the frame whose flow is the input
    flow: np.ndarray           # [2,H,W]
    obs_boxes: np.ndarray      # [N,obs_len,4], last row is the box at t
    fut_boxes: np.ndarray      # [N,pred_len,4]
    object_ids: np.ndarray     # [N]

    @property
    def n_objects(self) -> int:
        return self.obs_boxes.shape[0]


@dataclass
class FrameObservation:
    """Inputs available at frame t when scoring a stream (no future boxes)."""

    clip_id: str
    t: int
    flow: np.ndarray           # [2,H,W]
    obs_boxes: np.ndarray      # [N,obs_len,4]
    object_ids: np.ndarray     # [N]


# ---------------------------------------------------------------------------
# synthetic world


@dataclass
class EgoSegment:
    t_start: int
    tx: float                  # px/frame
    ty: float
    omega: float               # rad/frame about the raster center


@dataclass
class ObjectSpec:
    object_id: int
    center: tuple[float, float]
    size: tuple[float, float]
    velocity: tuple[float, float]  # normalized units/frame


@dataclass
class AnomalySpec:
    kind: str
    onset: int = 0
    duration: int = 0
    object_id: int | None = None

    def window(self) -> range:
        return range(self.onset, self.onset + self.duration)


@dataclass
class SyntheticWorldConfig:
    frames: int = 24
    height: int = 64
    width: int = 64
    min_objects: int = 2
    max_objects: int = 4
    noise_sigma: float = 0.05
    ego_speed_max: float = 2.0     # px/frame per axis
    ego_rot_max: float = 0.01      # rad/frame
    obj_speed_min: float = 0.004   # normalized units/frame
    obj_speed_max: float = 0.012
    onset_min: int = 10
    onset_max: int = 14
    dur_min: int = 5
    dur_max: int = 8
    jolt_magnitude: float = 1.0

    def __post_init__(self):
        if self.frames < 1 or self.height < 1 or self.width < 1:
            raise ValueError("frames, height, width must be positive")
        if self.dur_min < 1 or self.dur_min > self.dur_max:
            raise ValueError("require 1 <= dur_min <= dur_max")

    @classmethod
    def from_toml(cls, path: str | Path) -> "SyntheticWorldConfig":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown world config fields in {path}: {sorted(unknown)}")
        return cls(**doc)


def ego_field(height: int, width: int, tx: float, ty: float, omega: float) -> np.ndarray:
    """Rigid camera-motion flow: translation plus rotation about the center."""
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float32)
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    u = tx - omega * (ys - cy)
    v = ty + omega * (xs - cx)
    return np.stack([u, v]).astype(np.float32)


def _box_pixel_slice(box: np.ndarray, height: int, width: int):
    x_min, y_min, x_max, y_max = [float(c) for c in box]
    x1 = max(0, int(round(x_min * (width - 1))))
    x2 = min(width - 1, int(round(x_max * (width - 1))))
    y1 = max(0, int(round(y_min * (height - 1))))
    y2 = min(height - 1, int(round(y_max * (height - 1))))
    return slice(y1, y2 + 1), slice(x1, x2 + 1)


def _draw_object(world: SyntheticWorldConfig, rng: np.random.Generator,
                 obj_id: int) -> ObjectSpec:
    w = float(rng.uniform(0.08, 0.18))
    h = float(rng.uniform(0.08, 0.18))
    cx = float(rng.uniform(0.2, 0.8))
    cy = float(rng.uniform(0.2, 0.8))
    speed = float(rng.uniform(world.obj_speed_min, world.obj_speed_max))
    angle = float(rng.uniform(0, 2 * math.pi))
    vx, vy = speed * math.cos(angle), speed * math.sin(angle)
    # keep the unperturbed path inside the frame for the whole clip
    horizon = world.frames + 1
    for _ in range(2):
        ex, ey = cx + vx * horizon, cy + vy * horizon
        if not 0.02 + w / 2 <= ex <= 0.98 - w / 2:
            vx = -vx
        if not 0.02 + h / 2 <= ey <= 0.98 - h / 2:
            vy = -vy
        ex, ey = cx + vx * horizon, cy + vy * horizon
        if (0.02 + w / 2 <= ex <= 0.98 - w / 2) and (0.02 + h / 2 <= ey <= 0.98 - h / 2):
            break
        vx, vy = vx * 0.5, vy * 0.5
    return ObjectSpec(obj_id, (cx, cy), (w, h), (vx, vy))


def _object_path(spec: ObjectSpec, world: SyntheticWorldConfig,
                 anomaly: AnomalySpec) -> tuple[np.ndarray, np.ndarray]:
    """Center positions for frames 0..T-1 plus the commanded velocity each
    frame. Centers clamp so the box stays inside [0,1]."""
    T = world.frames
    w, h = spec.size
    lo_x, hi_x = w / 2 + 0.005, 1 - w / 2 - 0.005
    lo_y, hi_y = h / 2 + 0.005, 1 - h / 2 - 0.005
    vx, vy = spec.velocity
    swerve = anomaly.kind == "object_swerve" and anomaly.object_id == spec.object_id
    stop = anomaly.kind == "object_stop" and anomaly.object_id == spec.object_id
    window = anomaly.window()
    centers = np.empty((T, 2), dtype=np.float64)
    steps = np.empty((T, 2), dtype=np.float64)
    centers[0] = spec.center
    for t in range(T):
        if stop and t >= anomaly.onset:
            step = (0.0, 0.0)
        elif swerve and t >= anomaly.onset:
            # turn hard: rotate the heading 90 degrees, then settle
            sx, sy = -vy, vx
            if t in window:
                jerk = 0.5 if (t - anomaly.onset) % 2 == 0 else -0.5
                step = (2.5 * (sx - jerk * sy), 2.5 * (sy + jerk * sx))
            else:
                step = (sx, sy)
        else:
            step = (vx, vy)
        steps[t] = step
        if t + 1 < T:
            nx = min(max(centers[t, 0] + step[0], lo_x), hi_x)
            ny = min(max(centers[t, 1] + step[1], lo_y), hi_y)
            centers[t + 1] = (nx, ny)
    return centers, steps


def _corners(center: np.ndarray, size: tuple[float, float]) -> np.ndarray:
    w, h = size
    box = np.array([center[0] - w / 2, center[1] - h / 2,
                    center[0] + w / 2, center[1] + h / 2], dtype=np.float32)
    return np.clip(box, 0.0, 1.0)


def generate_clip(world: SyntheticWorldConfig, kind: str,
                  rng: np.random.Generator, clip_id: str,
                  ego_segments: list[EgoSegment] | None = None,
                  objects: list[ObjectSpec] | None = None,
                  anomaly: AnomalySpec | None = None) -> Clip:
    """Render one synthetic clip of the requested anomaly kind.

    Each flow frame is the rigid ego-motion field with every object's own
    velocity (in pixels) added inside its box. Boxes integrate the object
    velocity and clamp to stay inside the frame; ego motion never moves them.
    Pass ego_segments, objects, or anomaly to pin parts of the world that are
    otherwise drawn from rng.
    """
    if kind not in ANOMALY_KINDS:
        raise ValueError(f"unknown anomaly kind {kind!r}, expected one of {ANOMALY_KINDS}")
    T, H, W = world.frames, world.height, world.width

    if ego_segments is None:
        # piecewise-constant ego motion, one or two segments
        ego_segments = [EgoSegment(0,
                                   float(rng.uniform(-world.ego_speed_max, world.ego_speed_max)),
                                   float(rng.uniform(-world.ego_speed_max, world.ego_speed_max)),
                                   float(rng.uniform(-world.ego_rot_max, world.ego_rot_max)))]
        if rng.random() < 0.5 and T >= 16:
            t_b = int(rng.integers(8, T - 7))
            ego_segments.append(EgoSegment(
                t_b,
                float(rng.uniform(-world.ego_speed_max, world.ego_speed_max)),
                float(rng.uniform(-world.ego_speed_max, world.ego_speed_max)),
                float(rng.uniform(-world.ego_rot_max, world.ego_rot_max))))

    if objects is None:
        n_obj = int(rng.integers(world.min_objects, world.max_objects + 1))
        objects = [_draw_object(world, rng, i) for i in range(n_obj)]

    if anomaly is None:
        if kind == "normal":
            anomaly = AnomalySpec("normal")
        else:
            if not 0 <= world.onset_min <= world.onset_max < T:
                raise ValueError("anomaly onset range must lie inside the clip")
            onset = int(rng.integers(world.onset_min, world.onset_max + 1))
            dur = min(int(rng.integers(world.dur_min, world.dur_max + 1)), T - onset)
            target = None if kind == "ego_jolt" else int(rng.integers(0, len(objects)))
            anomaly = AnomalySpec(kind, onset, dur, target)
    if anomaly.kind != "normal" and anomaly.onset + anomaly.duration > T:
        raise ValueError(f"anomaly window [{anomaly.onset}, "
                         f"{anomaly.onset + anomaly.duration}) exceeds {T} frames")

    jolt_dx = 5.0 * world.jolt_magnitude * float(rng.uniform(0.8, 1.2)) \
        * (1 if rng.random() < 0.5 else -1)
    jolt_dy = -4.0 * world.jolt_magnitude * float(rng.uniform(0.8, 1.2)) \
        * (1 if rng.random() < 0.5 else -1)
    jolt_dom = 0.08 * world.jolt_magnitude * (1 if rng.random() < 0.5 else -1)

    paths = [_object_path(spec, world, anomaly) for spec in objects]

    flows = np.empty((T, 2, H, W), dtype=np.float32)
    tracks = TrackSet()
    for t in range(T):
        seg = ego_segments[0]
        for cand in ego_segments[1:]:
            if t >= cand.t_start:
                seg = cand
        tx, ty, om = seg.tx, seg.ty, seg.omega
        if anomaly.kind == "ego_jolt" and t in anomaly.window():
            tx, ty, om = tx + jolt_dx, ty + jolt_dy, om + jolt_dom
        frame = ego_field(H, W, tx, ty, om)
        if world.noise_sigma > 0:
            frame += rng.normal(0.0, world.noise_sigma,
                                size=frame.shape).astype(np.float32)
        for spec, (centers, steps) in zip(objects, paths):
            box = _corners(centers[t], spec.size)
            tracks.add(t, spec.object_id, box)
            ys, xs = _box_pixel_slice(box, H, W)
            frame[0, ys, xs] += steps[t, 0] * (W - 1)
            frame[1, ys, xs] += steps[t, 1] * (H - 1)
        flows[t] = frame

    labels = np.zeros(T, dtype=np.int8)
    if anomaly.kind != "normal":
        labels[anomaly.onset:anomaly.onset + anomaly.duration] = 1
    category, ego = _KIND_TO_CATEGORY[kind]
    meta = ClipMeta(clip_id, T, H, W, category=category, ego=ego, resolution=(W, H))
    return Clip(meta, flows, tracks, labels)


def build_benchmark(out_dir: str | Path, world: SyntheticWorldConfig | None = None,
                    n_train: int = 200, n_test_normal: int = 50,
                    n_test_anomalous: int = 50, seed: int = 0) -> dict:
    """Write a train/test split of synthetic clips under out_dir.

    Test anomalies are half ego-motion faults and half object faults; the
    object half alternates between swerve and stop.
    """
    world = world or SyntheticWorldConfig()
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    train_dir, test_dir = out_dir / "train", out_dir / "test"
    manifest = {"train": [], "test": []}
    for i in range(n_train):
        clip = generate_clip(world, "normal", rng, f"train_{i:04d}")
        save_clip(clip, train_dir / clip.meta.clip_id)
        manifest["train"].append(clip.meta.clip_id)
    for i in range(n_test_normal):
        clip = generate_clip(world, "normal", rng, f"test_n_{i:04d}")
        save_clip(clip, test_dir / clip.meta.clip_id)
        manifest["test"].append(clip.meta.clip_id)
    n_ego = n_test_anomalous // 2
    for i in range(n_test_anomalous):
        if i < n_ego:
            kind = "ego_jolt"
        else:
            kind = "object_swerve" if (i - n_ego) % 2 == 0 else "object_stop"
        clip = generate_clip(world, kind, rng, f"test_a_{i:04d}")
        save_clip(clip, test_dir / clip.meta.clip_id)
        manifest["test"].append(clip.meta.clip_id)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return {"train_dir": train_dir, "test_dir": test_dir, "manifest": manifest}


# ---------------------------------------------------------------------------
# disk format


def save_clip(clip: Clip, clip_dir: str | Path) -> None:
    """Write one clip directory: flow_%05d.bin, meta.json, tracks.jsonl, labels.json."""
    clip_dir = Path(clip_dir)
    clip_dir.mkdir(parents=True, exist_ok=True)
    for t in range(clip.meta.frames):
        plane = np.ascontiguousarray(clip.flows[t], dtype="<f4")
        with open(clip_dir / f"flow_{t:05d}.bin", "wb") as fh:
            fh.write(plane.tobytes())
    meta = {
        "H": clip.meta.height,
        "W": clip.meta.width,
        "frames": clip.meta.frames,
        "category": clip.meta.category,
        "resolution": list(clip.meta.resolution),
        "id": clip.meta.clip_id,
        "ego": clip.meta.ego,
    }
    with open(clip_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=1)
    with open(clip_dir / "tracks.jsonl", "w") as fh:
        # full float repr so float32 boxes round-trip exactly
        for t, obj_id, box in clip.tracks.items():
            fh.write(json.dumps({"t": t, "id": obj_id,
                                 "box": [float(c) for c in box]}) + "\n")
    with open(clip_dir / "labels.json", "w") as fh:
        json.dump([int(v) for v in clip.labels], fh)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ClipFormatError(message)


def load_clip(clip_dir: str | Path) -> Clip:
    """Read one clip directory, raising ClipFormatError on the first violation."""
    clip_dir = Path(clip_dir)
    meta_path = clip_dir / "meta.json"
    _require(meta_path.is_file(), f"{meta_path}: missing")
    try:
        with open(meta_path) as fh:
            meta_doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("H", "W", "frames", "category", "resolution"):
        _require(key in meta_doc, f"{meta_path}: missing key {key!r}")
    H, W, T = int(meta_doc["H"]), int(meta_doc["W"]), int(meta_doc["frames"])
    _require(H >= 1 and W >= 1 and T >= 1, f"{meta_path}: H, W, frames must be positive")
    category = str(meta_doc["category"])
    _require(category == "normal" or category in CATEGORIES,
             f"{meta_path}: unknown category {category!r}")
    resolution = tuple(int(v) for v in meta_doc["resolution"])
    _require(len(resolution) == 2, f"{meta_path}: resolution must be [width, height]")

    flows = np.empty((T, 2, H, W), dtype=np.float32)
    expected = 2 * H * W * 4
    for t in range(T):
        fpath = clip_dir / f"flow_{t:05d}.bin"
        _require(fpath.is_file(), f"{fpath}: missing")
        raw = fpath.read_bytes()
        _require(len(raw) == expected,
                 f"{fpath}: expected {expected} bytes, found {len(raw)}")
        flows[t] = np.frombuffer(raw, dtype="<f4").reshape(2, H, W)

    labels_path = clip_dir / "labels.json"
    _require(labels_path.is_file(), f"{labels_path}: missing")
    try:
        with open(labels_path) as fh:
            raw_labels = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{labels_path}: invalid JSON ({exc})") from exc
    _require(isinstance(raw_labels, list) and len(raw_labels) == T,
             f"{labels_path}: expected {T} labels, found "
             f"{len(raw_labels) if isinstance(raw_labels, list) else 'non-list'}")
    _require(all(v in (0, 1) for v in raw_labels), f"{labels_path}: labels must be 0 or 1")
    labels = np.asarray(raw_labels, dtype=np.int8)

    tracks = TrackSet()
    tracks_path = clip_dir / "tracks.jsonl"
    if tracks_path.is_file():
        with open(tracks_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                where = f"{tracks_path} line {lineno}"
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ClipFormatError(f"{where}: invalid JSON ({exc})") from exc
                for key in ("t", "id", "box"):
                    _require(key in rec, f"{where}: missing key {key!r}")
                t, obj_id, box = rec["t"], rec["id"], rec["box"]
                _require(isinstance(t, int) and 0 <= t < T,
                         f"{where}: frame index {t} outside [0, {T})")
                _require(isinstance(box, list) and len(box) == 4,
                         f"{where}: box must have 4 components")
                box = np.asarray(box, dtype=np.float32)
                _require(bool(np.isfinite(box).all()), f"{where}: box has non-finite values")
                _require(bool((box >= 0).all() and (box <= 1).all()),
                         f"{where}: box coordinates outside [0, 1]")
                _require(box[0] < box[2] and box[1] < box[3],
                         f"{where}: box corners must satisfy x_min < x_max and "
                         f"y_min < y_max")
                _require(tracks.box(t, obj_id) is None,
                         f"{where}: duplicate box for object {obj_id} at frame {t}")
                tracks.add(t, int(obj_id), box)

    meta = ClipMeta(str(meta_doc.get("id", clip_dir.name)), T, H, W,
                    category=category, ego=bool(meta_doc.get("ego", False)),
                    resolution=resolution)
    return Clip(meta, flows, tracks, labels)


def load_dataset(root: str | Path) -> list[Clip]:
    """Load every clip directory (identified by meta.json) under root, sorted."""
    root = Path(root)
    dirs = sorted(p.parent for p in root.glob("*/meta.json"))
    if not dirs and (root / "meta.json").is_file():
        dirs = [root]
    if not dirs:
        raise ClipFormatError(f"{root}: no clip directories found")
    return [load_clip(d) for d in dirs]


# ---------------------------------------------------------------------------
# external annotation import


def import_dota_annotations(annotation_path: str | Path,
                            feature_dir: str | Path) -> Clip:
    """Build a clip from a per-video annotation JSON plus a flow directory.

    The annotation carries pixel-space corner boxes, the anomaly window, the
    category code, and the ego flag; flows come from feature_dir in the same
    binary layout as native clips.
    """
    annotation_path = Path(annotation_path)
    feature_dir = Path(feature_dir)
    _require(annotation_path.is_file(), f"{annotation_path}: missing")
    try:
        with open(annotation_path) as fh:
            ann = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ClipFormatError(f"{annotation_path}: invalid JSON ({exc})") from exc
    where = str(annotation_path)
    for key in ("video_id", "num_frames", "anomaly_start", "anomaly_end",
                "anomaly_class", "ego_involve", "resolution", "objects"):
        _require(key in ann, f"{where}: missing key {key!r}")
    T = int(ann["num_frames"])
    start, end = int(ann["anomaly_start"]), int(ann["anomaly_end"])
    category = str(ann["anomaly_class"])
    _require(category in CATEGORIES, f"{where}: unknown category {category!r}")
    _require(0 <= start < end <= T,
             f"{where}: anomaly window [{start}, {end}) invalid for {T} frames")
    rw, rh = (int(v) for v in ann["resolution"])
    _require(rw > 0 and rh > 0, f"{where}: resolution must be positive")

    fmeta_path = feature_dir / "meta.json"
    _require(fmeta_path.is_file(), f"{fmeta_path}: missing")
    with open(fmeta_path) as fh:
        fmeta = json.load(fh)
    for key in ("H", "W", "frames"):
        _require(key in fmeta, f"{fmeta_path}: missing key {key!r}")
    H, W = int(fmeta["H"]), int(fmeta["W"])
    _require(int(fmeta["frames"]) == T,
             f"{fmeta_path}: frames={fmeta['frames']} does not match annotation ({T})")

    flows = np.empty((T, 2, H, W), dtype=np.float32)
    expected = 2 * H * W * 4
    for t in range(T):
        fpath = feature_dir / f"flow_{t:05d}.bin"
        _require(fpath.is_file(), f"{fpath}: missing")
        raw = fpath.read_bytes()
        _require(len(raw) == expected,
                 f"{fpath}: expected {expected} bytes, found {len(raw)}")
        flows[t] = np.frombuffer(raw, dtype="<f4").reshape(2, H, W)

    tracks = TrackSet()
    for oi, obj in enumerate(ann["objects"]):
        owhere = f"{where} objects[{oi}]"
        for key in ("track_id", "start_frame", "boxes"):
            _require(key in obj, f"{owhere}: missing key {key!r}")
        t0 = int(obj["start_frame"])
        for bi, corners in enumerate(obj["boxes"]):
            t = t0 + bi
            _require(0 <= t < T, f"{owhere}: box {bi} lands on frame {t} outside [0, {T})")
            _require(len(corners) == 4, f"{owhere}: box {bi} must have 4 components")
            x1, y1, x2, y2 = (float(c) for c in corners)
            _require(x1 < x2 and y1 < y2, f"{owhere}: box {bi} corners are not ordered")
            _require(0 <= x1 and x2 <= rw and 0 <= y1 and y2 <= rh,
                     f"{owhere}: box {bi} outside the {rw}x{rh} frame")
            box = np.array([x1 / rw, y1 / rh, x2 / rw, y2 / rh], dtype=np.float32)
            _require(tracks.box(t, int(obj["track_id"])) is None,
                     f"{owhere}: duplicate box for object {obj['track_id']} at frame {t}")
            tracks.add(t, int(obj["track_id"]), box)

    labels = np.zeros(T, dtype=np.int8)
    labels[start:end] = 1
    meta = ClipMeta(str(ann["video_id"]), T, H, W, category=category,
                    ego=bool(ann["ego_involve"]), resolution=(rw, rh))
    return Clip(meta, flows, tracks, labels)


# ---------------------------------------------------------------------------
# windowing


def make_samples(clip: Clip, obs_len: int, pred_len: int) -> list[TrainingSample]:
    """Sliding-window samples; only objects covering the full window join one."""
    T = clip.meta.frames
    samples = []
    for t in range(obs_len - 1, T - pred_len):
        ids, obs_rows, fut_rows = [], [], []
        candidate_ids = clip.tracks.ids_at(t)
        for obj_id in candidate_ids:
            window = clip.tracks.window(obj_id, t - obs_len + 1, t + pred_len + 1)
            if window is None:
                continue
            ids.append(obj_id)
            obs_rows.append(window[:obs_len])
            fut_rows.append(window[obs_len:])
        n = len(ids)
        obs = np.stack(obs_rows) if n else np.zeros((0, obs_len, 4), dtype=np.float32)
        fut = np.stack(fut_rows) if n else np.zeros((0, pred_len, 4), dtype=np.float32)
        samples.append(TrainingSample(clip.meta.clip_id, t, clip.flows[t], obs, fut,
                                      np.asarray(ids, dtype=np.int64)))
    return samples


def frame_observation(clip: Clip, t: int, obs_len: int) -> FrameObservation:
    """Streaming view of frame t: flow plus each fully observed box history."""
    if not 0 <= t < clip.meta.frames:
        raise ValueError(f"frame {t} outside [0, {clip.meta.frames})")
    ids, obs_rows = [], []
    if t >= obs_len - 1:
        for obj_id in clip.tracks.ids_at(t):
            window = clip.tracks.window(obj_id, t - obs_len + 1, t + 1)
            if window is None:
                continue
            ids.append(obj_id)
            obs_rows.append(window)
    obs = np.stack(obs_rows) if ids else np.zeros((0, obs_len, 4), dtype=np.float32)
    return FrameObservation(clip.meta.clip_id, t, clip.flows[t], obs,
                            np.asarray(ids, dtype=np.int64))
