"""Accessible-width characterization of a parking space from oriented boxes.

Given the oriented space/aisle boxes found in a 100x100 crop, pick the
space containing the crop center, associate aisles to its left/right long
edges, and measure per-side aisle extent with a perpendicular ray cast
from each long edge's midpoint. Total accessible width is the space's
short-axis width plus both extents. Widths convert to meters at the
space centroid's web mercator scale, optionally cos(lat) ground corrected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .detector import OBBDetection, OrientedBox, ParkingClass
from .geo import (
    GeoPoint,
    global_pixel_to_point,
    global_to_lonlat,
    ground_scale_correction,
    meters_per_pixel,
)

ASSOCIATION_OVERLAP_FRACTION = 0.4
ASSOCIATION_MAX_GAP_PX = 20.0
NEAR_SQUARE_RATIO = 1.05
CROP_CENTER = (50.0, 50.0)
_EPS = 1e-12


@dataclass(frozen=True)
class SideAssociation:
    """Aisles bound to one long edge of the space, and their ray extent."""

    side: str
    aisles: tuple[OBBDetection, ...]
    extent_px: float

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be left or right, got {self.side!r}")
        if self.extent_px < 0:
            raise ValueError("extent must be nonnegative")


@dataclass(frozen=True)
class CharacterizedSpace:
    cls: ParkingClass
    space_obb: OrientedBox
    space_width_px: float
    left: SideAssociation
    right: SideAssociation
    total_width_px: float
    total_width_m: float
    centroid: GeoPoint
    confidence: float
    flags: frozenset[str]


def select_center_space(
    obbs: list[OBBDetection], center: tuple[float, float] = CROP_CENTER
) -> OBBDetection | None:
    """Highest-confidence space whose rectangle contains the crop center."""
    cx, cy = center
    candidates = [d for d in obbs if d.kind == "space" and d.obb.contains(cx, cy)]
    if not candidates:
        return None
    return max(
        candidates,
        key=lambda d: (d.confidence, -((d.obb.cx - cx) ** 2 + (d.obb.cy - cy) ** 2)),
    )


def ray_obb_intersection(
    origin: tuple[float, float], direction: tuple[float, float], box: OrientedBox
) -> float | None:
    """Farthest parametric hit of a ray against an oriented box, else None.

    Slab method in the box frame; an origin inside the box still yields the
    exit distance, so overlap behind the ray origin contributes nothing.
    """
    ox = origin[0] - box.cx
    oy = origin[1] - box.cy
    ux, uy = box.u
    vx, vy = box.v
    o_local = (ox * ux + oy * uy, ox * vx + oy * vy)
    d_local = (direction[0] * ux + direction[1] * uy, direction[0] * vx + direction[1] * vy)
    half = (box.length / 2.0, box.width / 2.0)

    t_near, t_far = -math.inf, math.inf
    for o, d, e in zip(o_local, d_local, half):
        if abs(d) < _EPS:
            if abs(o) > e:
                return None
            continue
        t1 = (-e - o) / d
        t2 = (e - o) / d
        lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
        t_near = max(t_near, lo)
        t_far = min(t_far, hi)
    if t_near > t_far or t_far < 0.0:
        return None
    return t_far


def _point_segment_distance(p, a, b) -> float:
    abx, aby = b[0] - a[0], b[1] - a[1]
    apx, apy = p[0] - a[0], p[1] - a[1]
    denom = abx * abx + aby * aby
    t = 0.0 if denom < _EPS else max(0.0, min(1.0, (apx * abx + apy * aby) / denom))
    qx, qy = a[0] + t * abx, a[1] + t * aby
    return math.hypot(p[0] - qx, p[1] - qy)


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _orient(q1, q2, p1)
    d2 = _orient(q1, q2, p2)
    d3 = _orient(p1, p2, q1)
    d4 = _orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0) or d1 == 0 or d2 == 0) and ((d3 > 0) != (d4 > 0) or d3 == 0 or d4 == 0):
        # Conservative for collinear touching; the distance fallback below
        # returns 0 for genuinely touching segments anyway.
        return (
            min(p1[0], p2[0]) <= max(q1[0], q2[0])
            and min(q1[0], q2[0]) <= max(p1[0], p2[0])
            and min(p1[1], p2[1]) <= max(q1[1], q2[1])
            and min(q1[1], q2[1]) <= max(p1[1], p2[1])
        )
    return False


def _segment_segment_distance(p1, p2, q1, q2) -> float:
    if _segments_intersect(p1, p2, q1, q2):
        return 0.0
    return min(
        _point_segment_distance(p1, q1, q2),
        _point_segment_distance(p2, q1, q2),
        _point_segment_distance(q1, p1, p2),
        _point_segment_distance(q2, p1, p2),
    )


def obb_segment_distance(box: OrientedBox, a: tuple[float, float], b: tuple[float, float]) -> float:
    """Minimum distance between a filled oriented rectangle and a segment."""
    if box.contains(*a) or box.contains(*b):
        return 0.0
    corners = box.corners()
    best = math.inf
    for i in range(4):
        c1, c2 = corners[i], corners[(i + 1) % 4]
        best = min(best, _segment_segment_distance(a, b, c1, c2))
    return best


def _long_edge(space: OrientedBox, side: str) -> tuple[tuple[float, float], tuple[float, float]]:
    s = 1.0 if side == "right" else -1.0
    ux, uy = space.u
    vx, vy = space.v
    mx = space.cx + s * (space.width / 2.0) * vx
    my = space.cy + s * (space.width / 2.0) * vy
    hl = space.length / 2.0
    return (mx - hl * ux, my - hl * uy), (mx + hl * ux, my + hl * uy)


def aisle_extent(space: OrientedBox, side: str, aisles: list[OBBDetection]) -> float:
    """Farthest ray hit beyond the side's long edge across its aisles, else 0.

    The ray starts at the long edge's midpoint and points along the outward
    normal, so any aisle overlap lying inside the space is not counted.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be left or right, got {side!r}")
    s = 1.0 if side == "right" else -1.0
    vx, vy = space.v
    origin = (space.cx + s * (space.width / 2.0) * vx, space.cy + s * (space.width / 2.0) * vy)
    direction = (s * vx, s * vy)
    best = 0.0
    for det in aisles:
        hit = ray_obb_intersection(origin, direction, det.obb)
        if hit is not None and hit > best:
            best = hit
    return best


def associate_aisles(
    space: OrientedBox, aisles: list[OBBDetection]
) -> tuple[SideAssociation, SideAssociation]:
    """Bind each aisle to the long edge it runs along, then measure extents.

    An aisle associates iff its projection onto the space's long axis covers
    at least 40% of the space's length and it lies within 20 px of that
    side's long edge. The side comes from the sign of the aisle centroid's
    offset along the space's short axis.
    """
    ux, uy = space.u
    vx, vy = space.v
    half_len = space.length / 2.0
    sides: dict[str, list[OBBDetection]] = {"left": [], "right": []}
    for det in aisles:
        if det.kind != "aisle":
            continue
        ts = [
            (cx - space.cx) * ux + (cy - space.cy) * uy
            for cx, cy in det.obb.corners()
        ]
        overlap = min(max(ts), half_len) - max(min(ts), -half_len)
        if overlap < ASSOCIATION_OVERLAP_FRACTION * space.length:
            continue
        t_v = (det.obb.cx - space.cx) * vx + (det.obb.cy - space.cy) * vy
        side = "right" if t_v >= 0 else "left"
        a, b = _long_edge(space, side)
        if obb_segment_distance(det.obb, a, b) > ASSOCIATION_MAX_GAP_PX:
            continue
        sides[side].append(det)
    return (
        SideAssociation("left", tuple(sides["left"]), aisle_extent(space, "left", sides["left"])),
        SideAssociation("right", tuple(sides["right"]), aisle_extent(space, "right", sides["right"])),
    )


def total_width(space: OrientedBox, left: SideAssociation, right: SideAssociation) -> float:
    """Space short-axis width plus both side extents."""
    return space.width + left.extent_px + right.extent_px


def width_to_meters(
    width_px: float,
    centroid: GeoPoint,
    z: int,
    tile_size: int = 256,
    ground_corrected: bool = False,
) -> float:
    """Pixel span at zoom z to EPSG:3857 meters, optionally cos(lat) corrected."""
    if width_px < 0:
        raise ValueError("width must be nonnegative")
    m = width_px * meters_per_pixel(z, tile_size)
    if ground_corrected:
        m *= ground_scale_correction(centroid.lat)
    return m


def characterize(
    obbs: list[OBBDetection],
    cls: ParkingClass,
    confidence: float,
    crop_origin_global: tuple[float, float],
    z: int,
    tile_size: int = 256,
    ground_corrected: bool = False,
    padded_crop: bool = False,
    suspected_oversize: bool = False,
    center: tuple[float, float] = CROP_CENTER,
) -> CharacterizedSpace | None:
    """Full per-crop characterization; None when no space contains the center."""
    space_det = select_center_space(obbs, center=center)
    if space_det is None:
        return None
    space = space_det.obb
    left, right = associate_aisles(space, [d for d in obbs if d.kind == "aisle"])
    total_px = total_width(space, left, right)
    gx = crop_origin_global[0] + space.cx
    gy = crop_origin_global[1] + space.cy
    centroid = global_to_lonlat(global_pixel_to_point(gx, gy, z, tile_size))
    flags = set()
    if padded_crop:
        flags.add("padded_crop")
    if suspected_oversize:
        flags.add("suspected_oversize")
    if ground_corrected:
        flags.add("ground_corrected")
    if space.length / space.width < NEAR_SQUARE_RATIO:
        flags.add("near_square")
    return CharacterizedSpace(
        cls=cls,
        space_obb=space,
        space_width_px=space.width,
        left=left,
        right=right,
        total_width_px=total_px,
        total_width_m=width_to_meters(total_px, centroid, z, tile_size, ground_corrected),
        centroid=centroid,
        confidence=confidence,
        flags=frozenset(flags),
    )
