"""Synthetic regions for exercising the pipeline without a neural backend.

A Scene holds parking spaces (with flanking aisles) in global pixel
coordinates at a fixed zoom. From it this module derives the scripted
scenario a ScenarioBackend replays, paints tiles for a local-directory
source, and reports the analytically expected widths, so end-to-end runs
can be checked against construction instead of against the code under
test.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

from PIL import Image, ImageDraw

from .detector import OrientedBox, ParkingClass
from .geo import GeoPoint, GlobalTilePoint, TileCoord, global_to_lonlat

SCENE_TILE_SIZE = 256
_WINDOW_PX = 512
_CROP_HALF = 50

BACKGROUND_RGB = (68, 68, 68)
SPACE_RGB = (52, 101, 164)
AISLE_RGB = (237, 212, 0)


@dataclass(frozen=True)
class SceneSpace:
    """A parking space plus its aisles, with per-side expected extents."""

    cls: ParkingClass
    obb: OrientedBox
    aisles: tuple[OrientedBox, ...] = ()
    left_extent_px: float = 0.0
    right_extent_px: float = 0.0

    @property
    def expected_total_px(self) -> float:
        return self.obb.width + self.left_extent_px + self.right_extent_px

    @property
    def envelope(self) -> tuple[float, float, float, float]:
        xs = [c[0] for c in self.obb.corners()]
        ys = [c[1] for c in self.obb.corners()]
        return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)


@dataclass
class Scene:
    z: int
    spaces: list[SceneSpace] = field(default_factory=list)


def space_with_aisles(
    cx: float,
    cy: float,
    length: float = 55.0,
    width: float = 30.0,
    theta: float = 0.0,
    cls: ParkingClass = ParkingClass.DP_ONE_AISLE,
    left: tuple[float, float] | None = None,
    right: tuple[float, float] | None = None,
) -> SceneSpace:
    """Build a space with optional (aisle_width, gap) aisles on each side.

    Aisles run the full length of the space, flush against (or ``gap``
    pixels off) the long edge, so the expected extent on a side is simply
    gap + aisle_width.
    """
    space = OrientedBox(cx, cy, length, width, theta)
    vx, vy = space.v
    aisles = []
    extents = {"left": 0.0, "right": 0.0}
    for side, spec in (("left", left), ("right", right)):
        if spec is None:
            continue
        aisle_width, gap = spec
        sign = 1.0 if side == "right" else -1.0
        offset = sign * (width / 2.0 + gap + aisle_width / 2.0)
        aisles.append(
            OrientedBox(cx + vx * offset, cy + vy * offset, length, aisle_width, space.theta)
        )
        extents[side] = gap + aisle_width
    return SceneSpace(
        cls=cls,
        obb=space,
        aisles=tuple(aisles),
        left_extent_px=extents["left"],
        right_extent_px=extents["right"],
    )


def snapped_center(space: SceneSpace) -> tuple[int, int]:
    return int(round(space.obb.cx)), int(round(space.obb.cy))


def orient_key(space: SceneSpace, z: int) -> str:
    ci, cj = snapped_center(space)
    return f"{z}/{ci},{cj}"


def expected_centroid(space: SceneSpace, z: int) -> GeoPoint:
    ci, cj = snapped_center(space)
    ox, oy = ci - _CROP_HALF, cj - _CROP_HALF
    # The characterized centroid is the space center seen through the crop.
    gx = ox + (space.obb.cx - ox)
    gy = oy + (space.obb.cy - oy)
    return global_to_lonlat(GlobalTilePoint(gx / SCENE_TILE_SIZE, gy / SCENE_TILE_SIZE, z))


def compile_scenario(
    scene: Scene,
    origin: TileCoord,
    cols: int,
    rows: int,
    locate_conf: float = 0.9,
    space_conf: float = 0.95,
    aisle_conf: float = 0.85,
) -> dict:
    """Scripted scenario replaying the scene through every window and crop.

    Locate records carry the whole (unclipped) envelope of each space in
    every 512 px window it touches; the scanner's ownership rule then keeps
    exactly one copy. Requires the 256 px tile grid so detector pixels and
    scene pixels coincide.
    """
    if origin.z != scene.z:
        raise ValueError("origin zoom must match scene zoom")
    ts = SCENE_TILE_SIZE
    span_x = 2 * math.ceil(cols / 2)
    span_y = 2 * math.ceil(rows / 2)

    locate: dict[str, list[dict]] = {}
    for dy in range(span_y):
        for dx in range(span_x):
            t = TileCoord(origin.x + dx, origin.y + dy, origin.z)
            wx, wy = t.x * ts, t.y * ts
            records = []
            for space in scene.spaces:
                bx, by, bw, bh = space.envelope
                if bx + bw <= wx or bx >= wx + _WINDOW_PX or by + bh <= wy or by >= wy + _WINDOW_PX:
                    continue
                records.append(
                    {
                        "class": space.cls.value,
                        "bbox": [bx - wx, by - wy, bw, bh],
                        "confidence": locate_conf,
                    }
                )
            if records:
                locate[f"{t.z}/{t.x}/{t.y}"] = records

    orient: dict[str, list[dict]] = {}
    for space in scene.spaces:
        ci, cj = snapped_center(space)
        ox, oy = ci - _CROP_HALF, cj - _CROP_HALF
        records = [
            {
                "kind": "space",
                "obb": [space.obb.cx - ox, space.obb.cy - oy, space.obb.length, space.obb.width, space.obb.theta],
                "confidence": space_conf,
            }
        ]
        for aisle in space.aisles:
            records.append(
                {
                    "kind": "aisle",
                    "obb": [aisle.cx - ox, aisle.cy - oy, aisle.length, aisle.width, aisle.theta],
                    "confidence": aisle_conf,
                }
            )
        orient[orient_key(space, scene.z)] = records
    return {"locate": locate, "orient": orient}


def paint_tiles(scene: Scene, out_dir: str, origin: TileCoord, cols: int, rows: int) -> int:
    """Render the scene into a z/x/y.png local-directory tile tree."""
    ts = SCENE_TILE_SIZE
    painted = 0
    for dy in range(rows):
        for dx in range(cols):
            t = TileCoord(origin.x + dx, origin.y + dy, origin.z)
            img = Image.new("RGB", (ts, ts), BACKGROUND_RGB)
            draw = ImageDraw.Draw(img)
            tx, ty = t.x * ts, t.y * ts
            for space in scene.spaces:
                for aisle in space.aisles:
                    draw.polygon([(x - tx, y - ty) for x, y in aisle.corners()], fill=AISLE_RGB)
                draw.polygon([(x - tx, y - ty) for x, y in space.obb.corners()], fill=SPACE_RGB)
            tile_dir = os.path.join(out_dir, str(t.z), str(t.x))
            os.makedirs(tile_dir, exist_ok=True)
            img.save(os.path.join(tile_dir, f"{t.y}.png"))
            painted += 1
    return painted


def tile_bbox(origin: TileCoord, cols: int, rows: int) -> tuple[GeoPoint, GeoPoint]:
    """Geographic bbox (nw, se) spanning exactly cols x rows tiles.

    The south-east corner sits a hair inside the last tile so half-open
    tile enumeration does not pick up an extra row or column.
    """
    eps = 1e-3
    nw = global_to_lonlat(GlobalTilePoint(float(origin.x), float(origin.y), origin.z))
    se = global_to_lonlat(
        GlobalTilePoint(origin.x + cols - eps, origin.y + rows - eps, origin.z)
    )
    return nw, se


def demo_scene(origin: TileCoord) -> Scene:
    """Two accessible spaces and a plain one, spread over a 4x4-tile region."""
    ts = SCENE_TILE_SIZE
    x0, y0 = origin.x * ts, origin.y * ts
    spaces = [
        space_with_aisles(
            x0 + 140.0, y0 + 150.0, theta=0.0, cls=ParkingClass.DP_ONE_AISLE, right=(15.0, 0.0)
        ),
        space_with_aisles(
            x0 + 520.0,
            y0 + 260.0,
            theta=math.pi / 3,
            cls=ParkingClass.DP_TWO_AISLE,
            left=(14.0, 0.0),
            right=(16.0, 2.0),
        ),
        space_with_aisles(x0 + 350.0, y0 + 700.0, theta=math.pi / 2, cls=ParkingClass.ONE_AISLE),
    ]
    return Scene(z=origin.z, spaces=spaces)
