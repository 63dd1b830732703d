"""Frame-level raster operations: exposure, rotation, depth ordering, views.

Pixel coordinates are (u right, v down); camera poses are 4x4 world-from-
camera matrices with the camera looking along +z, x right, y down, so image
"down" is camera +y.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

OVEREXPOSED_INTENSITY = 245
OVEREXPOSED_FRACTION = 0.90
DEGENERATE_PITCH_DEG = 5.0
VISIBILITY_DEPTH_TOL_M = 0.05


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale raster; ``pixels`` is (height, width) uint8."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 2 or self.pixels.dtype != np.uint8:
            raise ValueError("GrayImage expects a 2D uint8 array")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Metric depth in meters, (height, width) float; 0 marks invalid."""

    depths: np.ndarray

    def __post_init__(self) -> None:
        if self.depths.ndim != 2:
            raise ValueError("DepthMap expects a 2D array")


@dataclass(frozen=True)
class Box2:
    """Integer pixel box, inclusive bounds, tied to an object id."""

    object_id: str
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError("Box2 requires min <= max on both axes")


@dataclass(frozen=True)
class ViewObservation:
    """How one frame sees one object, for view ranking."""

    frame_id: str
    area_ratio: float
    center_px: tuple[float, float]
    image_size: tuple[int, int]  # (width, height)


def luma_from_rgb(rgb: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma, rounded to uint8."""
    arr = rgb.astype(np.float64)
    y = 0.299 * arr[..., 0] + 0.587 * arr[..., 1] + 0.114 * arr[..., 2]
    return np.clip(np.round(y), 0, 255).astype(np.uint8)


def load_gray_image(path: str | Path) -> GrayImage:
    with Image.open(path) as im:
        if im.mode == "L":
            return GrayImage(np.asarray(im, dtype=np.uint8))
        return GrayImage(luma_from_rgb(np.asarray(im.convert("RGB"))))


def load_depth_map(path: str | Path, unit: str) -> DepthMap:
    """Load depth; ``unit`` is 'mm' (16-bit PNG) or 'm' (float .npy)."""
    path = Path(path)
    if unit == "mm":
        with Image.open(path) as im:
            raw = np.asarray(im, dtype=np.float64)
        return DepthMap(raw / 1000.0)
    if unit == "m":
        return DepthMap(np.load(path).astype(np.float64))
    raise ValueError(f"unknown depth unit {unit!r}")


def is_overexposed(image: GrayImage,
                   intensity_threshold: int = OVEREXPOSED_INTENSITY,
                   fraction_threshold: float = OVEREXPOSED_FRACTION) -> bool:
    """True when strictly more than the fraction of pixels exceed the
    intensity threshold (both comparisons strict)."""
    bright = int((image.pixels > intensity_threshold).sum())
    return bright / image.pixels.size > fraction_threshold


def _rotate_dir_90ccw(d: tuple[float, float]) -> tuple[float, float]:
    # direction transform under rotating the image 90 deg counterclockwise
    return (d[1], -d[0])


def canonicalize_rotation(pose: np.ndarray) -> tuple[int, bool]:
    """Multiple of 90 deg that turns the frame most nearly upright.

    Projects world gravity (-z) into the image plane via the pose and picks
    the counterclockwise image rotation in {0, 90, 180, 270} that best
    aligns it with image down. A camera pitched within 5 deg of straight
    up/down has no usable projection: returns (0, True) flagged degenerate.
    """
    rot = np.asarray(pose, dtype=float)[:3, :3]
    optical_axis_world = rot @ np.array([0.0, 0.0, 1.0])
    cos_to_vertical = abs(optical_axis_world[2]) / np.linalg.norm(optical_axis_world)
    if cos_to_vertical > math.cos(math.radians(DEGENERATE_PITCH_DEG)):
        return 0, True
    g_cam = rot.T @ np.array([0.0, 0.0, -1.0])
    d = (float(g_cam[0]), float(g_cam[1]))
    best_k, best_dot = 0, -math.inf
    cur = d
    for k in range(4):
        dot = cur[1]  # alignment with image down (0, +1)
        if dot > best_dot + 1e-12:
            best_k, best_dot = k, dot
        cur = _rotate_dir_90ccw(cur)
    return best_k * 90, False


def depth_label_map(boxes: list[Box2], depth: DepthMap
                    ) -> tuple[np.ndarray, list[str], list[str]]:
    """Paint 2D boxes far-to-near into an instance label map.

    Returns (label indices (H, W) int32 with -1 background, object id list
    indexed by label, ids that had no valid depth). Boxes are clamped to the
    image; mean depth uses valid (>0) pixels only. No-depth boxes are
    treated as farthest and painted first, ties broken by object id.
    """
    h, w = depth.depths.shape
    ids = [b.object_id for b in boxes]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate object ids in box list")
    means: dict[str, float | None] = {}
    clamped: dict[str, tuple[int, int, int, int]] = {}
    for b in boxes:
        x0 = max(0, min(b.x_min, w - 1))
        x1 = max(0, min(b.x_max, w - 1))
        y0 = max(0, min(b.y_min, h - 1))
        y1 = max(0, min(b.y_max, h - 1))
        clamped[b.object_id] = (x0, y0, x1, y1)
        patch = depth.depths[y0:y1 + 1, x0:x1 + 1]
        valid = patch[patch > 0]
        means[b.object_id] = float(valid.mean()) if valid.size else None

    no_depth = sorted(oid for oid, m in means.items() if m is None)
    with_depth = sorted(
        (oid for oid, m in means.items() if m is not None),
        key=lambda oid: (-means[oid], oid),
    )
    labels = np.full((h, w), -1, dtype=np.int32)
    order = no_depth + with_depth
    index_of = {oid: i for i, oid in enumerate(ids)}
    for oid in order:
        x0, y0, x1, y1 = clamped[oid]
        labels[y0:y1 + 1, x0:x1 + 1] = index_of[oid]
    return labels, ids, no_depth


def geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Rotation angle between two rotation matrices, in radians."""
    trace = float(np.trace(r1.T @ r2))
    return math.acos(max(-1.0, min(1.0, (trace - 1.0) / 2.0)))


def sample_frames_uniform(count: int, target: int) -> list[int]:
    """Evenly spaced frame indices, endpoints included (video scenes)."""
    if count <= 0:
        raise ValueError("no frames to sample")
    k = min(target, count)
    if k <= 0:
        raise ValueError("target must be positive")
    if k == 1:
        return [0]
    raw = np.linspace(0, count - 1, k)
    out: list[int] = []
    for v in raw:
        i = int(round(v))
        if not out or i != out[-1]:
            out.append(i)
    return out


def sample_frames_by_pose(poses: list[np.ndarray], target: int,
                          translation_threshold: float = 0.25,
                          rotation_weight: float = 0.5) -> list[int]:
    """Greedy pose clustering; returns representative frame indices.

    Walks frames in order; a frame whose distance to every existing
    representative exceeds the threshold starts a new cluster. Distance is
    translation norm plus ``rotation_weight`` (m/rad) times geodesic
    rotation angle. At most ``target`` representatives are kept.
    """
    reps: list[int] = []
    for i, pose in enumerate(poses):
        pose = np.asarray(pose, dtype=float)
        t = pose[:3, 3]
        r = pose[:3, :3]
        is_new = True
        for j in reps:
            other = np.asarray(poses[j], dtype=float)
            d = float(np.linalg.norm(t - other[:3, 3])) \
                + rotation_weight * geodesic_angle(r, other[:3, :3])
            if d <= translation_threshold:
                is_new = False
                break
        if is_new:
            reps.append(i)
            if len(reps) >= target:
                break
    return reps


def max_coverage_frames(visible: dict[str, set[str]], cap: int = 32
                        ) -> list[str]:
    """Greedy max-coverage frame subset.

    Repeatedly picks the frame adding the most uncovered object ids, ties
    broken by smallest frame id; stops at the cap or when nothing new is
    covered.
    """
    covered: set[str] = set()
    chosen: list[str] = []
    remaining = dict(visible)
    while remaining and len(chosen) < cap:
        best_id, best_gain = None, 0
        for fid in sorted(remaining):
            gain = len(remaining[fid] - covered)
            if gain > best_gain:
                best_id, best_gain = fid, gain
        if best_id is None:
            break
        chosen.append(best_id)
        covered |= remaining.pop(best_id)
    return chosen


def rank_object_views(observations: list[ViewObservation],
                      center_weight: float = 0.5) -> list[ViewObservation]:
    """Order views best-first: visible-area ratio minus a centering penalty.

    score = area_ratio - center_weight * (distance of the projected object
    center from the image center, normalized by the image half-diagonal).
    Ties break on frame id.
    """
    def score(obs: ViewObservation) -> float:
        w, h = obs.image_size
        half_diag = math.hypot(w / 2.0, h / 2.0)
        dist = math.hypot(obs.center_px[0] - w / 2.0,
                          obs.center_px[1] - h / 2.0)
        return obs.area_ratio - center_weight * dist / half_diag

    return sorted(observations, key=lambda o: (-score(o), o.frame_id))


def project_points(points: np.ndarray, pose: np.ndarray,
                   fx: float, fy: float, cx: float, cy: float
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Project world points through a pinhole camera.

    Returns (pixel coordinates (N, 2), camera-frame depth (N,)). Points
    behind the camera get non-positive depth; callers must mask on it.
    """
    pose = np.asarray(pose, dtype=float)
    rot = pose[:3, :3]
    t = pose[:3, 3]
    cam = (np.asarray(points, dtype=float) - t) @ rot
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = fx * cam[:, 0] / z + cx
        v = fy * cam[:, 1] / z + cy
    return np.column_stack([u, v]), z


def visibility_ratio(points: np.ndarray, pose: np.ndarray,
                     fx: float, fy: float, cx: float, cy: float,
                     image_size: tuple[int, int],
                     depth: DepthMap | None = None,
                     depth_tol: float = VISIBILITY_DEPTH_TOL_M) -> float:
    """Fraction of points visible in the frame.

    Visible means: in front of the camera, inside image bounds, and (when a
    depth map is given) within ``depth_tol`` of the stored depth, so
    occluded points do not count.
    """
    px, z = project_points(points, pose, fx, fy, cx, cy)
    w, h = image_size
    ok = (z > 1e-9) & (px[:, 0] >= 0) & (px[:, 0] <= w - 1) \
        & (px[:, 1] >= 0) & (px[:, 1] <= h - 1)
    if depth is not None and ok.any():
        u = np.clip(np.round(px[ok][:, 0]).astype(int), 0, w - 1)
        v = np.clip(np.round(px[ok][:, 1]).astype(int), 0, h - 1)
        stored = depth.depths[v, u]
        near = (stored > 0) & (np.abs(z[ok] - stored) <= depth_tol)
        vis = np.zeros_like(ok)
        vis[np.flatnonzero(ok)] = near
        ok = vis
    return float(ok.sum()) / len(points)


def draw_box_overlay(image: GrayImage, boxes: list[Box2],
                     value: int = 255, thickness: int = 2) -> GrayImage:
    """Burn rectangle outlines into a copy of the image (quality is not a
    goal; this only marks regions for oracle prompts)."""
    px = image.pixels.copy()
    h, w = px.shape
    for b in boxes:
        x0 = max(0, min(b.x_min, w - 1))
        x1 = max(0, min(b.x_max, w - 1))
        y0 = max(0, min(b.y_min, h - 1))
        y1 = max(0, min(b.y_max, h - 1))
        t = thickness
        px[y0:min(y0 + t, y1 + 1), x0:x1 + 1] = value
        px[max(y1 - t + 1, y0):y1 + 1, x0:x1 + 1] = value
        px[y0:y1 + 1, x0:min(x0 + t, x1 + 1)] = value
        px[y0:y1 + 1, max(x1 - t + 1, x0):x1 + 1] = value
    return GrayImage(px)
