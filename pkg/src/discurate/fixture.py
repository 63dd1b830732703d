"""Bundled two-scene synthetic fixture.

Writes a tiny but fully featured scene manifest to disk: one furnished
room ingested as a photo collection (pose-clustered sampling) for the
train split and one as a video walkthrough (uniform sampling) for the
test split, with deterministic grayscale frames, attributes, and a
mixture of point-cloud and direct-box geometry sources. Every byte is a
pure function of the layout below, so repeated writes are identical.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Obb7, sample_face_points
from .util import atomic_write_text

IMAGE_SIZE = 64
INTRINSICS = {"fx": 64.0, "fy": 64.0, "cx": 31.5, "cy": 31.5}


def pose_looking_at(eye, target) -> list[list[float]]:
    """Camera-to-world pose with +z toward the target and image down
    aligned with gravity (requires a non-vertical view direction)."""
    eye = np.asarray(eye, dtype=float)
    forward = np.asarray(target, dtype=float) - eye
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    norm = np.linalg.norm(right)
    if norm < 1e-9:
        raise ValueError("vertical view direction")
    right = right / norm
    down = np.cross(forward, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = forward
    pose[:3, 3] = eye
    return [[float(v) for v in row] for row in pose]


def _ring_eyes(center, radius: float, height: float,
               angles_deg: tuple[float, ...]) -> list[tuple]:
    eyes = []
    for a in angles_deg:
        rad = math.radians(a)
        eyes.append((center[0] + radius * math.cos(rad),
                     center[1] + radius * math.sin(rad), height))
    return eyes


def _pattern_pixels(index: int) -> np.ndarray:
    """Mid-gray frame with an index-dependent stripe pattern."""
    px = np.full((IMAGE_SIZE, IMAGE_SIZE), 100, dtype=np.uint8)
    period = 4 + (index % 5)
    rows = (np.arange(IMAGE_SIZE) // period) % 2 == 0
    px[rows, :] = 140 + 10 * (index % 3)
    px[index % IMAGE_SIZE, :] = 200
    return px


def _overexposed_pixels() -> np.ndarray:
    px = np.full((IMAGE_SIZE, IMAGE_SIZE), 255, dtype=np.uint8)
    px[:2, :2] = 120
    return px


def _write_png(path: Path, pixels: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="L").save(path, format="PNG")


def _obj_box(object_id, label, box: Obb7, **attributes) -> dict:
    record = {
        "id": object_id, "label": label,
        "box": [*box.center, *box.size, box.yaw],
    }
    if attributes:
        record["attributes"] = attributes
    return record


def _obj_points(object_id, label, points: np.ndarray, **attributes) -> dict:
    record = {
        "id": object_id, "label": label,
        "points": [[float(v) for v in p] for p in points],
    }
    if attributes:
        record["attributes"] = attributes
    return record


TABLE_BOX = Obb7(center=(0.0, 0.0, 0.375), size=(1.2, 0.8, 0.75), yaw=0.3)
OFFICE_CHAIR_BOX = Obb7(center=(5.0, 0.5, 0.5), size=(0.55, 0.55, 1.0),
                        yaw=0.0)


def _train_scene(image_dir: Path, rel: Path) -> dict:
    objects = [
        _obj_points("table1", "table", sample_face_points(TABLE_BOX, 5),
                    material="wooden"),
        _obj_box("cup1", "cup",
                 Obb7(center=(0.2, 0.1, 0.8), size=(0.08, 0.08, 0.1),
                      yaw=0.0)),
        _obj_box("rug1", "rug",
                 Obb7(center=(2.0, 1.0, 0.005), size=(1.6, 1.2, 0.01),
                      yaw=0.0)),
        _obj_box("chair_red", "chair",
                 Obb7(center=(1.8, 0.8, 0.46), size=(0.5, 0.5, 0.9),
                      yaw=0.2), color="red"),
        _obj_box("chair_blue", "chair",
                 Obb7(center=(3.5, 2.5, 0.45), size=(0.5, 0.5, 0.9),
                      yaw=0.0), color="blue"),
        _obj_points("chair_office", "office chair",
                    sample_face_points(OFFICE_CHAIR_BOX, 3), color="black"),
        _obj_box("lamp1", "lamp",
                 Obb7(center=(0.5, 3.0, 0.8), size=(0.3, 0.3, 1.6),
                      yaw=0.0), color="black"),
    ]
    center = (2.3, 1.2, 0.7)
    eyes = _ring_eyes(center[:2], 7.0, 1.8, (200.0, 250.0, 290.0, 330.0))
    frames = []
    for i, eye in enumerate(eyes):
        name = f"f{i}"
        _write_png(image_dir / f"train_{name}.png", _pattern_pixels(i))
        frames.append({
            "id": name,
            "pose": pose_looking_at(eye, center),
            "intrinsics": INTRINSICS,
            "image": str(rel / f"train_{name}.png"),
        })
    _write_png(image_dir / "train_f4.png", _overexposed_pixels())
    frames.append({
        "id": "f4",
        "pose": pose_looking_at(_ring_eyes(center[:2], 7.0, 1.8,
                                           (30.0,))[0], center),
        "intrinsics": INTRINSICS,
        "image": str(rel / "train_f4.png"),
    })
    return {
        "scene_id": "scene_train",
        "source": "fixture",
        "is_video": False,
        "objects": objects,
        "frames": frames,
    }


def _test_scene(image_dir: Path, rel: Path) -> dict:
    objects = [
        _obj_box("wardrobe1", "wardrobe",
                 Obb7(center=(0.0, 0.0, 1.0), size=(1.0, 0.6, 2.0),
                      yaw=0.0), color="white"),
        _obj_box("wardrobe2", "wardrobe",
                 Obb7(center=(0.0, 0.65, 1.0), size=(1.0, 0.6, 2.0),
                      yaw=0.0), color="brown"),
        _obj_box("curtain1", "curtain",
                 Obb7(center=(3.0, 0.0, 1.5), size=(1.4, 0.1, 2.5),
                      yaw=0.0), color="white"),
        _obj_box("tv1", "tv",
                 Obb7(center=(3.0, 2.0, 1.2), size=(1.2, 0.1, 0.7),
                      yaw=0.0), color="black", shape="flat"),
        _obj_box("door1", "door",
                 Obb7(center=(-2.0, 0.5, 1.0), size=(0.9, 0.08, 2.0),
                      yaw=0.0), color="brown", material="wooden"),
        _obj_box("pillow1", "pillow",
                 Obb7(center=(1.0, 3.0, 0.3), size=(0.5, 0.35, 0.15),
                      yaw=0.0), color="light-colored", shape="square"),
        _obj_box("pillow2", "pillow",
                 Obb7(center=(1.8, 3.3, 0.3), size=(0.5, 0.35, 0.15),
                      yaw=0.1), color="dark", shape="round"),
    ]
    center = (0.9, 1.3, 1.0)
    eyes = _ring_eyes(center[:2], 7.5, 1.6,
                      (150.0, 190.0, 230.0, 270.0, 310.0, 350.0))
    frames = []
    for i, eye in enumerate(eyes):
        name = f"v{i}"
        _write_png(image_dir / f"test_{name}.png", _pattern_pixels(10 + i))
        frames.append({
            "id": name,
            "pose": pose_looking_at(eye, center),
            "intrinsics": INTRINSICS,
            "image": str(rel / f"test_{name}.png"),
        })
    return {
        "scene_id": "scene_test",
        "source": "fixture",
        "is_video": True,
        "objects": objects,
        "frames": frames,
    }


FIXTURE_CONFIG = """\
manifest: scenes/manifest.json
output_dir: out
seed: 0
oracles:
  default:
    mode: mock
generation:
  train_scenes: [scene_train]
  test_scenes: [scene_test]
  per_scene_cap: 50
"""


def write_fixture(root: str | Path) -> tuple[Path, Path]:
    """Materialize the fixture under ``root``.

    Returns (manifest_path, config_path). Safe to call repeatedly; the
    output is byte-identical each time.
    """
    root = Path(root)
    scene_dir = root / "scenes"
    image_dir = scene_dir / "images"
    rel = Path("images")
    manifest = {
        "scenes": [
            _train_scene(image_dir, rel),
            _test_scene(image_dir, rel),
        ]
    }
    scene_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = scene_dir / "manifest.json"
    atomic_write_text(manifest_path,
                      json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    config_path = root / "config.yaml"
    atomic_write_text(config_path, FIXTURE_CONFIG)
    return manifest_path, config_path
