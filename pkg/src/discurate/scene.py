"""Scene manifest ingestion.

A manifest is a JSON file describing one or more annotated scans:
object records carrying exactly one geometry source (an inline point
list, a .npy point file, or a ready-made 7-DOF box) plus optional
appearance attributes, and frame records with camera pose, pinhole
intrinsics, and image/depth paths. All worlds are z-up and gravity
aligned; relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import Obb7, sample_face_points
from .referring import ATTRIBUTE_FIELDS, AppearanceAttributes

DEPTH_UNITS = ("m", "mm")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectRecord:
    object_id: str
    label: str | None
    box: Obb7 | None
    points: np.ndarray | None
    attributes: AppearanceAttributes = field(
        default_factory=AppearanceAttributes)
    points_path: Path | None = None

    def __post_init__(self):
        if (self.box is None) == (self.points is None):
            raise ManifestError(
                f"object {self.object_id!r} needs exactly one geometry "
                "source (box or points)")


@dataclass(frozen=True)
class FrameRecord:
    frame_id: str
    pose: tuple[tuple[float, ...], ...]
    fx: float
    fy: float
    cx: float
    cy: float
    image_path: Path
    depth_path: Path | None = None
    depth_unit: str = "m"

    def __post_init__(self):
        if len(self.pose) != 4 or any(len(row) != 4 for row in self.pose):
            raise ManifestError(
                f"frame {self.frame_id!r} pose must be 4x4")
        if self.fx <= 0 or self.fy <= 0:
            raise ManifestError(
                f"frame {self.frame_id!r} needs positive focal lengths")
        if self.depth_unit not in DEPTH_UNITS:
            raise ManifestError(
                f"frame {self.frame_id!r} depth unit {self.depth_unit!r} "
                f"not in {DEPTH_UNITS}")

    def pose_matrix(self) -> np.ndarray:
        return np.asarray(self.pose, dtype=float)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    source: str
    is_video: bool
    objects: tuple[ObjectRecord, ...]
    frames: tuple[FrameRecord, ...]

    def object(self, object_id: str) -> ObjectRecord:
        for record in self.objects:
            if record.object_id == object_id:
                return record
        raise KeyError(object_id)


def _parse_box(raw, context: str) -> Obb7:
    if not isinstance(raw, Sequence) or len(raw) != 7:
        raise ManifestError(f"{context}: box must have 7 numbers")
    values = [float(v) for v in raw]
    return Obb7(center=tuple(values[:3]), size=tuple(values[3:6]),
                yaw=values[6])


def _parse_attributes(raw, context: str) -> AppearanceAttributes:
    if raw is None:
        return AppearanceAttributes()
    unknown = set(raw) - set(ATTRIBUTE_FIELDS)
    if unknown:
        raise ManifestError(
            f"{context}: unknown attribute fields {sorted(unknown)}")
    return AppearanceAttributes(**{k: str(v) for k, v in raw.items()})


def _parse_object(raw: Mapping, base_dir: Path, context: str
                  ) -> ObjectRecord:
    if "id" not in raw:
        raise ManifestError(f"{context}: object record missing id")
    object_id = str(raw["id"])
    context = f"{context} object {object_id!r}"
    sources = [k for k in ("box", "points", "points_path") if k in raw]
    if len(sources) != 1:
        raise ManifestError(
            f"{context}: exactly one of box/points/points_path required, "
            f"got {sources or 'none'}")
    box = points = points_path = None
    if "box" in raw:
        box = _parse_box(raw["box"], context)
    elif "points" in raw:
        points = np.asarray(raw["points"], dtype=float)
    else:
        points_path = base_dir / str(raw["points_path"])
        if not points_path.is_file():
            raise ManifestError(
                f"{context}: missing point file {points_path}")
        points = np.load(points_path).astype(float)
    if points is not None and (points.ndim != 2 or points.shape[1] != 3
                               or len(points) < 3):
        raise ManifestError(f"{context}: points must be (N>=3, 3)")
    label = raw.get("label")
    return ObjectRecord(
        object_id=object_id,
        label=str(label) if label is not None else None,
        box=box,
        points=points,
        attributes=_parse_attributes(raw.get("attributes"), context),
        points_path=points_path,
    )


def _parse_frame(raw: Mapping, base_dir: Path, context: str) -> FrameRecord:
    if "id" not in raw:
        raise ManifestError(f"{context}: frame record missing id")
    frame_id = str(raw["id"])
    context = f"{context} frame {frame_id!r}"
    for key in ("pose", "intrinsics", "image"):
        if key not in raw:
            raise ManifestError(f"{context}: missing {key!r}")
    intr = raw["intrinsics"]
    try:
        fx, fy = float(intr["fx"]), float(intr["fy"])
        cx, cy = float(intr["cx"]), float(intr["cy"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(
            f"{context}: intrinsics need fx, fy, cx, cy") from exc
    image_path = base_dir / str(raw["image"])
    if not image_path.is_file():
        raise ManifestError(f"{context}: missing image {image_path}")
    depth_path = None
    if raw.get("depth") is not None:
        depth_path = base_dir / str(raw["depth"])
        if not depth_path.is_file():
            raise ManifestError(f"{context}: missing depth {depth_path}")
    return FrameRecord(
        frame_id=frame_id,
        pose=tuple(tuple(float(v) for v in row) for row in raw["pose"]),
        fx=fx, fy=fy, cx=cx, cy=cy,
        image_path=image_path,
        depth_path=depth_path,
        depth_unit=str(raw.get("depth_unit", "m")),
    )


def _parse_scene(raw: Mapping, base_dir: Path) -> Scene:
    if "scene_id" not in raw:
        raise ManifestError("scene record missing scene_id")
    scene_id = str(raw["scene_id"])
    context = f"scene {scene_id!r}"
    objects = tuple(_parse_object(o, base_dir, context)
                    for o in raw.get("objects", []))
    frames = tuple(_parse_frame(f, base_dir, context)
                   for f in raw.get("frames", []))
    for kind, ids in (("object", [o.object_id for o in objects]),
                      ("frame", [f.frame_id for f in frames])):
        if len(ids) != len(set(ids)):
            raise ManifestError(f"{context}: duplicate {kind} ids")
    return Scene(
        scene_id=scene_id,
        source=str(raw.get("source", "unknown")),
        is_video=bool(raw.get("is_video", False)),
        objects=objects,
        frames=frames,
    )


def load_scenes(manifest_path: str | Path) -> list[Scene]:
    """Load and validate every scene in a manifest file."""
    manifest_path = Path(manifest_path)
    try:
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {manifest_path} is not valid JSON: "
                            f"{exc}") from exc
    if not isinstance(data, Mapping) or "scenes" not in data:
        raise ManifestError(
            f"manifest {manifest_path} must be an object with 'scenes'")
    scenes = [_parse_scene(raw, manifest_path.parent)
              for raw in data["scenes"]]
    ids = [s.scene_id for s in scenes]
    if len(ids) != len(set(ids)):
        raise ManifestError("duplicate scene ids in manifest")
    return scenes


def visibility_points(record: ObjectRecord, box: Obb7 | None = None
                      ) -> np.ndarray:
    """Points used for projection tests: the object's own points, else a
    deterministic sample of its box faces."""
    if record.points is not None:
        return record.points
    target = box if box is not None else record.box
    assert target is not None
    return sample_face_points(target, 4)
