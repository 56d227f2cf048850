"""Synthetic dynamic scenes, on-disk sequence format, window slicing.

Scenes are built from shape templates (box / sphere / plane) placed uniformly
in a square world. Motion makes classes separable: a template may carry an
explicit velocity or a speed range (random planar heading per instance), so a
config can contain geometric "twins" -- two classes identical in shape and
size whose only difference is how fast they move.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import PointFrame

SEQ_MAGIC = b"PCSQ1"
SHAPES = ("box", "sphere", "plane")


class ParseError(ValueError):
    """Malformed sequence file; ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class ObjectTemplate:
    shape: str
    size: float
    count: int
    class_id: int
    speed_range: Optional[tuple[float, float]] = None  # planar, random heading
    velocity: Optional[tuple[float, float, float]] = None  # explicit, overrides

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"shape must be one of {SHAPES}, got {self.shape!r}")
        if self.size <= 0 or self.count < 1:
            raise ValueError("size must be positive and count >= 1")
        if not 0 <= self.class_id < 65536:
            raise ValueError("class_id must fit in 16 bits")
        if self.speed_range is not None:
            lo, hi = self.speed_range
            if lo < 0 or hi < lo:
                raise ValueError(f"bad speed_range {self.speed_range}")


@dataclass(frozen=True)
class SceneConfig:
    num_frames: int
    points_per_frame: int
    world_extent: float
    classes: tuple[ObjectTemplate, ...]
    noise_sigma: float = 0.01
    rng_seed: int = 0
    resample_each_frame: bool = True  # fresh surface points per frame

    def __post_init__(self):
        if self.num_frames < 1 or self.points_per_frame < 1:
            raise ValueError("need at least one frame and one point per frame")
        if self.world_extent <= 0:
            raise ValueError("world_extent must be positive")
        if not self.classes:
            raise ValueError("need at least one object template")

    @property
    def num_classes(self) -> int:
        return max(t.class_id for t in self.classes) + 1

    def to_dict(self) -> dict:
        return {
            "num_frames": self.num_frames,
            "points_per_frame": self.points_per_frame,
            "world_extent": self.world_extent,
            "noise_sigma": self.noise_sigma,
            "rng_seed": self.rng_seed,
            "resample_each_frame": self.resample_each_frame,
            "classes": [
                {k: v for k, v in {
                    "shape": t.shape, "size": t.size, "count": t.count,
                    "class_id": t.class_id,
                    "speed_range": list(t.speed_range) if t.speed_range else None,
                    "velocity": list(t.velocity) if t.velocity else None,
                }.items() if v is not None}
                for t in self.classes
            ],
        }


def scene_from_dict(cfg: dict) -> SceneConfig:
    templates = []
    for t in cfg["classes"]:
        templates.append(ObjectTemplate(
            shape=t["shape"], size=float(t["size"]), count=int(t.get("count", 1)),
            class_id=int(t["class_id"]),
            speed_range=tuple(t["speed_range"]) if "speed_range" in t else None,
            velocity=tuple(t["velocity"]) if "velocity" in t else None,
        ))
    return SceneConfig(
        num_frames=int(cfg["num_frames"]),
        points_per_frame=int(cfg["points_per_frame"]),
        world_extent=float(cfg["world_extent"]),
        classes=tuple(templates),
        noise_sigma=float(cfg.get("noise_sigma", 0.01)),
        rng_seed=int(cfg.get("rng_seed", 0)),
        resample_each_frame=bool(cfg.get("resample_each_frame", True)),
    )


def twin_pair_present(cfg: SceneConfig) -> bool:
    """True if two classes share geometry but have disjoint speed ranges."""
    def speeds(t: ObjectTemplate) -> tuple[float, float]:
        if t.velocity is not None:
            s = float(np.linalg.norm(t.velocity))
            return (s, s)
        return t.speed_range or (0.0, 0.0)

    for a in cfg.classes:
        for b in cfg.classes:
            if a.class_id >= b.class_id:
                continue
            if a.shape == b.shape and a.size == b.size:
                lo_a, hi_a = speeds(a)
                lo_b, hi_b = speeds(b)
                if hi_a < lo_b or hi_b < lo_a:
                    return True
    return False


@dataclass
class SequenceRecord:
    frames: list[PointFrame]
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        idx = [f.frame_index for f in self.frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame_index must be strictly increasing")

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def feature_width(self) -> int:
        return self.frames[0].features.shape[1]


@dataclass
class _Instance:
    template: ObjectTemplate
    center: np.ndarray
    velocity: np.ndarray
    n_points: int
    margin: float
    offsets: Optional[np.ndarray] = None  # fixed geometry when not resampling


def _surface_offsets(rng: np.random.Generator, shape: str, size: float,
                     n: int) -> np.ndarray:
    if shape == "sphere":
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * (size / 2.0)
    if shape == "plane":
        out = np.zeros((n, 3))
        out[:, :2] = rng.uniform(-size / 2.0, size / 2.0, size=(n, 2))
        return out
    # box: pick a face, then a uniform point on it
    half = size / 2.0
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-half, half, size=(n, 2))
    out = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -half, half)
    for a in range(3):
        rows = axis == a
        others = [b for b in range(3) if b != a]
        out[rows, a] = sign[rows]
        out[np.ix_(rows, others)] = uv[rows]
    return out


def generate_scene(cfg: SceneConfig) -> SequenceRecord:
    """Deterministic scene synthesis: place, sample, advance, bounce."""
    rng = np.random.default_rng(cfg.rng_seed)
    half_world = cfg.world_extent / 2.0

    instances: list[_Instance] = []
    for tmpl in cfg.classes:
        margin = min(tmpl.size / 2.0, half_world)
        lim = half_world - margin
        for _ in range(tmpl.count):
            xy = rng.uniform(-lim, lim, size=2)
            z = 0.0 if tmpl.shape == "plane" else tmpl.size / 2.0
            if tmpl.velocity is not None:
                vel = np.asarray(tmpl.velocity, dtype=np.float64)
            elif tmpl.speed_range is not None:
                speed = rng.uniform(*tmpl.speed_range)
                heading = rng.uniform(0.0, 2.0 * math.pi)
                vel = np.array([speed * math.cos(heading),
                                speed * math.sin(heading), 0.0])
            else:
                vel = np.zeros(3)
            instances.append(_Instance(tmpl, np.array([xy[0], xy[1], z]), vel,
                                       n_points=0, margin=margin))

    base, rem = divmod(cfg.points_per_frame, len(instances))
    for i, inst in enumerate(instances):
        inst.n_points = base + (1 if i < rem else 0)

    if not cfg.resample_each_frame:
        for inst in instances:
            pts = _surface_offsets(rng, inst.template.shape, inst.template.size,
                                   inst.n_points)
            inst.offsets = pts + rng.normal(0.0, cfg.noise_sigma,
                                            size=(inst.n_points, 3))

    frames: list[PointFrame] = []
    for t in range(cfg.num_frames):
        coords_parts, label_parts = [], []
        for inst in instances:
            if inst.n_points == 0:
                continue
            if cfg.resample_each_frame:
                offs = _surface_offsets(rng, inst.template.shape,
                                        inst.template.size, inst.n_points)
                offs = offs + rng.normal(0.0, cfg.noise_sigma,
                                         size=(inst.n_points, 3))
            else:
                offs = inst.offsets
            coords_parts.append(inst.center + offs)
            label_parts.append(np.full(inst.n_points, inst.template.class_id,
                                       dtype=np.int64))
        coords = np.concatenate(coords_parts)
        coords = coords.astype(np.float32).astype(np.float64)  # match disk precision
        labels = np.concatenate(label_parts)
        frames.append(PointFrame(coords=coords,
                                 features=np.ones((coords.shape[0], 1)),
                                 labels=labels, frame_index=t))
        for inst in instances:  # advance and reflect off the walls
            inst.center = inst.center + inst.velocity
            lim = half_world - inst.margin
            for a in range(3):
                if lim <= 0.0:
                    continue
                if inst.center[a] > lim:
                    inst.center[a] = 2.0 * lim - inst.center[a]
                    inst.velocity[a] = -inst.velocity[a]
                elif inst.center[a] < -lim:
                    inst.center[a] = -2.0 * lim - inst.center[a]
                    inst.velocity[a] = -inst.velocity[a]

    digest = hashlib.sha256(
        json.dumps(cfg.to_dict(), sort_keys=True).encode()).hexdigest()
    return SequenceRecord(frames=frames, num_classes=cfg.num_classes,
                          metadata={"config_hash": digest})


# ---------------------------------------------------------------------------
# on-disk format
# ---------------------------------------------------------------------------

def save_sequence(rec: SequenceRecord, path) -> None:
    width = rec.feature_width
    with open(path, "wb") as fh:
        fh.write(SEQ_MAGIC)
        fh.write(struct.pack("<III", rec.num_frames, width, rec.num_classes))
        point_dtype = np.dtype([("v", "<f4", (3 + width,)), ("label", "<u2")])
        for frame in rec.frames:
            n = frame.num_points
            fh.write(struct.pack("<II", frame.frame_index, n))
            block = np.empty(n, dtype=point_dtype)
            block["v"][:, :3] = frame.coords.astype(np.float32)
            if width:
                block["v"][:, 3:] = frame.features.astype(np.float32)
            labels = frame.labels if frame.labels is not None \
                else np.zeros(n, dtype=np.int64)
            block["label"] = labels.astype(np.uint16)
            fh.write(block.tobytes())


def _load_binary(raw: bytes) -> SequenceRecord:
    pos = len(SEQ_MAGIC)

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(raw):
            raise ParseError(f"truncated while reading {what}", pos)
        buf = raw[pos:pos + n]
        pos += n
        return buf

    num_frames, width, num_classes = struct.unpack("<III", take(12, "header"))
    if num_frames == 0:
        raise ParseError("zero frames in header", 5)
    point_dtype = np.dtype([("v", "<f4", (3 + width,)), ("label", "<u2")])
    frames = []
    for _ in range(num_frames):
        frame_index, n = struct.unpack("<II", take(8, "frame header"))
        if n == 0:
            raise ParseError("frame with zero points", pos - 4)
        block = np.frombuffer(take(n * point_dtype.itemsize, "point records"),
                              dtype=point_dtype)
        vals = block["v"].astype(np.float64)
        frames.append(PointFrame(
            coords=vals[:, :3],
            features=vals[:, 3:].reshape(n, width),
            labels=block["label"].astype(np.int64),
            frame_index=frame_index))
    if pos != len(raw):
        raise ParseError(f"{len(raw) - pos} trailing bytes", pos)
    return SequenceRecord(frames=frames, num_classes=num_classes)


def _load_text(text: str) -> SequenceRecord:
    """Whitespace fixture format: blank-line-separated frames, one point per
    line as ``x y z f1..fC label``."""
    blocks: list[list[list[str]]] = [[]]
    for line in text.splitlines():
        if line.strip():
            blocks[-1].append(line.split())
        elif blocks[-1]:
            blocks.append([])
    if not blocks[-1]:
        blocks.pop()
    if not blocks:
        raise ParseError("no frames in text sequence", 0)
    width = len(blocks[0][0]) - 4
    if width < 0:
        raise ParseError("point line needs at least x y z label", 0)
    frames = []
    max_label = 0
    for t, rows in enumerate(blocks):
        try:
            vals = np.array([[float(v) for v in row[:-1]] for row in rows])
            labels = np.array([int(row[-1]) for row in rows], dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"bad numeric literal in frame {t}: {exc}", 0) from None
        if vals.shape[1] != 3 + width:
            raise ParseError(f"inconsistent column count in frame {t}", 0)
        max_label = max(max_label, int(labels.max()))
        frames.append(PointFrame(coords=vals[:, :3],
                                 features=vals[:, 3:].reshape(len(rows), width),
                                 labels=labels, frame_index=t))
    return SequenceRecord(frames=frames, num_classes=max_label + 1)


def load_sequence(path) -> SequenceRecord:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:len(SEQ_MAGIC)] == SEQ_MAGIC:
        return _load_binary(raw)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"neither magic-prefixed binary nor utf-8 text "
                         f"({exc.reason})", exc.start) from None
    return _load_text(text)


def windows(rec: SequenceRecord, T: int, stride: int
            ) -> list[tuple[int, list[PointFrame]]]:
    """Sliding windows (start, frames[start:start+T]), always covering the tail.

    When windows overlap, a frame's prediction is taken from the LAST window
    containing it (callers rely on this documented rule).
    """
    F = rec.num_frames
    if T > F:
        raise ValueError(f"window length {T} exceeds sequence length {F}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    starts = list(range(0, F - T + 1, stride))
    if starts[-1] != F - T:
        starts.append(F - T)
    return [(s, rec.frames[s:s + T]) for s in starts]
