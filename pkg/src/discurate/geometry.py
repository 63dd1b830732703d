"""Gravity-aligned 7-DOF box geometry.

Boxes are parameterized as (center xyz, size L/W/H, yaw about +z). All fitting
runs in the XY projection: a minimum-area bounding rectangle supplies the
footprint and the z extent supplies height, so every box stays upright.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HALF_PI = math.pi / 2.0

# Metric floor applied per dimension when computing volumes, so flat boxes
# (rugs, posters) still order sensibly by size.
MIN_DIMENSION_M = 0.001


@dataclass(frozen=True)
class Rect2:
    """Oriented rectangle in the plane.

    ``angle`` is measured counterclockwise from +x in radians and gives the
    direction of the ``dims[0]`` side.
    """

    center: tuple[float, float]
    dims: tuple[float, float]
    angle: float

    def __post_init__(self) -> None:
        vals = (*self.center, *self.dims, self.angle)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Rect2 requires finite fields")
        if self.dims[0] < 0 or self.dims[1] < 0:
            raise ValueError("Rect2 dims must be non-negative")

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counterclockwise."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        hx, hy = self.dims[0] / 2.0, self.dims[1] / 2.0
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.asarray(self.center)


@dataclass(frozen=True)
class Obb7:
    """Upright oriented box: center, (L, W, H) sizes, yaw about +z.

    The fitting path guarantees L >= W and a canonical yaw in [-pi/2, pi/2);
    boxes built from other sources (axis-aligned fallback, dataset manifests)
    may carry any finite yaw and unordered sizes.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float

    def __post_init__(self) -> None:
        vals = (*self.center, *self.size, self.yaw)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("Obb7 requires finite fields")
        if min(self.size) < 0:
            raise ValueError("Obb7 sizes must be non-negative")

    @property
    def z_min(self) -> float:
        return self.center[2] - self.size[2] / 2.0

    @property
    def z_max(self) -> float:
        return self.center[2] + self.size[2] / 2.0

    def footprint(self) -> Rect2:
        return Rect2(
            center=(self.center[0], self.center[1]),
            dims=(self.size[0], self.size[1]),
            angle=self.yaw,
        )


def normalize_angle(theta: float) -> float:
    """Map an axis angle to the canonical range [-pi/2, pi/2), mod pi."""
    if not math.isfinite(theta):
        raise ValueError("angle must be finite")
    a = (theta + HALF_PI) % math.pi - HALF_PI
    if a >= HALF_PI:
        a -= math.pi
    if a < -HALF_PI:
        a += math.pi
    return a


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Convex hull of a 2D point set, counterclockwise, shape (M, 2).

    Degenerate inputs collapse: one distinct point -> single vertex,
    collinear points -> the two extreme vertices. Monotone chain; interior
    collinear points are discarded.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("expected an (N, 2) point array")
    if pts.shape[0] == 0:
        raise ValueError("empty point set")
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) == 1:
        return np.array(uniq)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in uniq:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(uniq):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 2:  # all collinear: keep the two extremes
        hull = [uniq[0], uniq[-1]]
    return np.array(hull)


def min_area_rect(points: np.ndarray) -> Rect2:
    """Minimum-area bounding rectangle of a 2D point set.

    Rotating calipers over the hull edge directions: the optimum rectangle
    has a side collinear with a hull edge, so only those angles (reduced
    mod pi/2) are candidates. Deterministic for a fixed input ordering.
    """
    pts = np.asarray(points, dtype=float)
    hull = convex_hull_2d(pts)
    if hull.shape[0] == 1:
        x, y = hull[0]
        return Rect2(center=(float(x), float(y)), dims=(0.0, 0.0), angle=0.0)

    edges = np.diff(np.vstack([hull, hull[:1]]), axis=0)
    angles = np.unique(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), HALF_PI))
    best = None
    for ang in angles:
        c, s = math.cos(ang), math.sin(ang)
        u = hull[:, 0] * c + hull[:, 1] * s
        v = -hull[:, 0] * s + hull[:, 1] * c
        du = u.max() - u.min()
        dv = v.max() - v.min()
        area = du * dv
        if best is None or area < best[0]:
            cu = (u.max() + u.min()) / 2.0
            cv = (v.max() + v.min()) / 2.0
            best = (area, ang, du, dv, cu, cv)
    _, ang, du, dv, cu, cv = best
    c, s = math.cos(ang), math.sin(ang)
    cx = cu * c - cv * s
    cy = cu * s + cv * c
    return Rect2(center=(float(cx), float(cy)), dims=(float(du), float(dv)),
                 angle=float(ang))


def fit_obb7(points: np.ndarray) -> Obb7:
    """Fit an upright 7-DOF box to a 3D point cloud.

    Fewer than three points fall back to the axis-aligned box with yaw 0.
    Otherwise the XY projection is boxed by ``min_area_rect``; the longer
    rectangle side becomes L and the yaw names its direction, canonicalized
    to [-pi/2, pi/2). Height spans the raw z extent.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (N, 3) point array")
    if pts.shape[0] == 0:
        raise ValueError("empty point cloud")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite values")

    z_min = float(pts[:, 2].min())
    z_max = float(pts[:, 2].max())
    cz = (z_min + z_max) / 2.0
    h = z_max - z_min

    if pts.shape[0] < 3:
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        center = (float(lo[0] + hi[0]) / 2.0, float(lo[1] + hi[1]) / 2.0, cz)
        size = (float(hi[0] - lo[0]), float(hi[1] - lo[1]), h)
        return Obb7(center=center, size=size, yaw=0.0)

    rect = min_area_rect(pts[:, :2])
    d1, d2 = rect.dims
    yaw_d1 = rect.angle
    if d1 >= d2:
        length, width, yaw = d1, d2, normalize_angle(yaw_d1)
    else:
        length, width, yaw = d2, d1, normalize_angle(yaw_d1 + HALF_PI)
    return Obb7(
        center=(rect.center[0], rect.center[1], cz),
        size=(length, width, h),
        yaw=yaw,
    )


def signed_angle(v1, v2) -> float:
    """Signed angle from v1 to v2 in the plane, in [-pi, pi].

    Positive is counterclockwise. Exactly opposite vectors map to +pi on
    both argument orders; zero vectors are rejected.
    """
    x1, y1 = float(v1[0]), float(v1[1])
    x2, y2 = float(v2[0]), float(v2[1])
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise ValueError("vectors must be finite")
    if (x1 == 0.0 and y1 == 0.0) or (x2 == 0.0 and y2 == 0.0):
        raise ValueError("signed_angle is undefined for zero vectors")
    theta = math.atan2(x1 * y2 - y1 * x2, x1 * x2 + y1 * y2)
    if theta == -math.pi:
        theta = math.pi
    return theta


def _yaw_basis(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def obb_corners(box: Obb7) -> np.ndarray:
    """The 8 box corners in world coordinates, shape (8, 3)."""
    hl, hw, hh = box.size[0] / 2.0, box.size[1] / 2.0, box.size[2] / 2.0
    signs = np.array([
        [sx, sy, sz]
        for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)
    ])
    local = signs * np.array([hl, hw, hh])
    return local @ _yaw_basis(box.yaw).T + np.asarray(box.center)


def sample_face_points(box: Obb7, n_per_axis: int = 4) -> np.ndarray:
    """Endpoint-inclusive n x n grids on all six faces, shape (6*n*n, 3).

    Corners and edges are shared between faces and appear once per face,
    so the unit cube at n=4 yields 96 points, each on some face plane.
    """
    if n_per_axis < 2:
        raise ValueError("n_per_axis must be at least 2")
    n = n_per_axis
    hl, hw, hh = box.size[0] / 2.0, box.size[1] / 2.0, box.size[2] / 2.0
    lu = np.linspace(-hl, hl, n)
    lv = np.linspace(-hw, hw, n)
    lw = np.linspace(-hh, hh, n)
    faces = []
    for sign in (1.0, -1.0):
        v, w = np.meshgrid(lv, lw, indexing="ij")
        faces.append(np.column_stack([np.full(n * n, sign * hl),
                                      v.ravel(), w.ravel()]))
    for sign in (1.0, -1.0):
        u, w = np.meshgrid(lu, lw, indexing="ij")
        faces.append(np.column_stack([u.ravel(),
                                      np.full(n * n, sign * hw), w.ravel()]))
    for sign in (1.0, -1.0):
        u, v = np.meshgrid(lu, lv, indexing="ij")
        faces.append(np.column_stack([u.ravel(), v.ravel(),
                                      np.full(n * n, sign * hh)]))
    local = np.vstack(faces)
    return local @ _yaw_basis(box.yaw).T + np.asarray(box.center)


def _rect_axes(yaw: float) -> list[tuple[float, float]]:
    c, s = math.cos(yaw), math.sin(yaw)
    return [(c, s), (-s, c)]


def sat_overlap(a: Obb7, b: Obb7, tol: float = 1e-9) -> bool:
    """Whether two upright boxes overlap; touching counts as overlap.

    Exact for this box family: both are z-extrusions, so the z interval
    plus the four XY edge normals form a complete separating-axis set.
    ``tol`` absorbs float noise on each axis so shared faces register.
    """
    if a.z_min > b.z_max + tol or b.z_min > a.z_max + tol:
        return False
    ca = a.footprint().corners()
    cb = b.footprint().corners()
    for ax, ay in _rect_axes(a.yaw) + _rect_axes(b.yaw):
        pa = ca[:, 0] * ax + ca[:, 1] * ay
        pb = cb[:, 0] * ax + cb[:, 1] * ay
        if pa.min() > pb.max() + tol or pb.min() > pa.max() + tol:
            return False
    return True


def _grid_min_dist2(pa: np.ndarray, pb: np.ndarray) -> float:
    # |a-b|^2 = |a|^2 + |b|^2 - 2 a.b, evaluated as a matrix product;
    # cancellation can leave tiny negatives, so clamp at zero.
    sq_b = (pb * pb).sum(axis=1)
    best = math.inf
    # chunk rows so large grids stay within memory
    step = max(1, int(4_000_000 / max(len(pb), 1)))
    for i in range(0, len(pa), step):
        chunk = pa[i:i + step]
        d2 = (chunk * chunk).sum(axis=1)[:, None] + sq_b[None, :] \
            - 2.0 * (chunk @ pb.T)
        m = float(d2.min())
        if m < best:
            best = m
    return max(best, 0.0)


def obb_distance(a: Obb7, b: Obb7, n_per_axis: int = 4) -> float:
    """Approximate distance between box surfaces; 0 when they overlap.

    Minimum pairwise distance over the two face-sample grids, evaluated at
    ``n_per_axis`` and every halving of it down to 4. The coarser rungs cost
    little and make refinement monotone: uniform endpoint-inclusive grids
    are not nested across resolutions, so without them doubling n could
    raise the estimate. Always an upper bound on the true surface distance
    (error at most one face-cell diagonal at n=4).
    """
    if sat_overlap(a, b):
        return 0.0
    best = math.inf
    n = n_per_axis
    while True:
        best = min(best, _grid_min_dist2(sample_face_points(a, n),
                                         sample_face_points(b, n)))
        if n // 2 < 4:
            break
        n //= 2
    return math.sqrt(best)


def obb_volume(box: Obb7) -> float:
    """Box volume with a 1 mm floor applied to every dimension."""
    dims = [max(d, MIN_DIMENSION_M) for d in box.size]
    return dims[0] * dims[1] * dims[2]


def obb_contains(box: Obb7, point, tol: float = 1e-9) -> bool:
    """Whether a point lies inside the box, with ``tol`` slack per axis."""
    p = np.asarray(point, dtype=float) - np.asarray(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    u = p[0] * c + p[1] * s
    v = -p[0] * s + p[1] * c
    return (abs(u) <= box.size[0] / 2.0 + tol
            and abs(v) <= box.size[1] / 2.0 + tol
            and abs(p[2]) <= box.size[2] / 2.0 + tol)
