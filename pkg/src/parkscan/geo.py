"""Coordinate mathematics for the XYZ orthoimage tile system.

Conversions between fractional tile coordinates, WGS84 longitude/latitude,
and EPSG:3857 (Web Mercator, meters). At zoom level z the world is a
2^z x 2^z grid of square tiles; a fractional tile coordinate (xf, yf)
addresses a position within that grid. The forward formulas are

    longitude = xf / 2^z * 360 - 180
    latitude  = 180/pi * atan(sinh(pi - 2*pi * yf / 2^z))

Pixel indices use the pixel-center convention: integer pixel (row, col)
inside a tile sits at fractional offset (col + 0.5) / tile_size. Continuous
pixel coordinates (detections, box corners) treat 0 as the left/top edge of
pixel 0, so the center of pixel k is at continuous coordinate k + 0.5.

All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6378137.0
# atan(sinh(pi)) in degrees: the latitude of the Web Mercator square's edge.
MERCATOR_MAX_LAT = 85.05112877980659
# Validation bound, slightly looser than the exact edge so that values rounded
# to printable precision (85.051129) remain constructible.
LAT_BOUND = 85.06
MERCATOR_MAX_M = 20037508.343


@dataclass(frozen=True)
class TileCoord:
    """Integer tile address (column x, row y) at zoom level z."""

    x: int
    y: int
    z: int

    def __post_init__(self):
        if self.z < 0:
            raise ValueError(f"zoom must be non-negative, got {self.z}")
        n = 1 << self.z
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile ({self.x}, {self.y}) outside 0..{n - 1} at z={self.z}")


@dataclass(frozen=True)
class GlobalTilePoint:
    """Fractional position in tile units at zoom level z."""

    xf: float
    yf: float
    z: int

    def __post_init__(self):
        n = float(1 << self.z)
        if not (0.0 <= self.xf <= n and 0.0 <= self.yf <= n):
            raise ValueError(f"({self.xf}, {self.yf}) outside [0, {n}] at z={self.z}")


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 position in degrees, limited to the Web Mercator latitude range."""

    lon: float
    lat: float

    def __post_init__(self):
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if abs(self.lat) >= LAT_BOUND:
            raise ValueError(f"latitude {self.lat} outside Web Mercator range")


@dataclass(frozen=True)
class MercatorPoint:
    """EPSG:3857 position in meters (easting xm, northing ym)."""

    xm: float
    ym: float

    def __post_init__(self):
        if abs(self.xm) > MERCATOR_MAX_M or abs(self.ym) > MERCATOR_MAX_M:
            raise ValueError(f"({self.xm}, {self.ym}) outside EPSG:3857 bounds")


def pixel_to_global(tile: TileCoord, row: int, col: int, tile_size: int = 256) -> GlobalTilePoint:
    """Fractional tile coordinate of the center of pixel (row, col) in `tile`."""
    if not (0 <= row < tile_size and 0 <= col < tile_size):
        raise ValueError(f"pixel ({row}, {col}) outside {tile_size}x{tile_size} tile")
    return GlobalTilePoint(
        xf=tile.x + (col + 0.5) / tile_size,
        yf=tile.y + (row + 0.5) / tile_size,
        z=tile.z,
    )


def global_to_pixel(p: GlobalTilePoint, tile_size: int = 256) -> tuple[TileCoord, int, int]:
    """Tile and nearest pixel (row, col) for a fractional tile coordinate.

    Exact inverse of pixel_to_global for pixel-center points.
    """
    n = 1 << p.z
    tx = min(int(math.floor(p.xf)), n - 1)
    ty = min(int(math.floor(p.yf)), n - 1)
    col = int(round((p.xf - tx) * tile_size - 0.5))
    row = int(round((p.yf - ty) * tile_size - 0.5))
    col = min(max(col, 0), tile_size - 1)
    row = min(max(row, 0), tile_size - 1)
    return TileCoord(tx, ty, p.z), row, col


def global_pixel_to_point(x_px: float, y_px: float, z: int, tile_size: int = 256) -> GlobalTilePoint:
    """Fractional tile coordinate of a continuous global pixel position at zoom z."""
    return GlobalTilePoint(xf=x_px / tile_size, yf=y_px / tile_size, z=z)


def global_to_lonlat(p: GlobalTilePoint) -> GeoPoint:
    """WGS84 longitude/latitude of a fractional tile coordinate."""
    n = float(1 << p.z)
    lon = p.xf / n * 360.0 - 180.0
    lat = math.degrees(math.atan(math.sinh(math.pi - 2.0 * math.pi * p.yf / n)))
    return GeoPoint(lon=lon, lat=lat)


def lonlat_to_global(g: GeoPoint, z: int) -> GlobalTilePoint:
    """Fractional tile coordinate of a WGS84 position at zoom z."""
    n = float(1 << z)
    xf = (g.lon + 180.0) / 360.0 * n
    yf = (math.pi - math.asinh(math.tan(math.radians(g.lat)))) / (2.0 * math.pi) * n
    # Round-off can leave the result a hair outside [0, n] at the square's edge.
    xf = min(max(xf, 0.0), n)
    yf = min(max(yf, 0.0), n)
    return GlobalTilePoint(xf=xf, yf=yf, z=z)


def lonlat_to_mercator(g: GeoPoint) -> MercatorPoint:
    """EPSG:3857 forward projection (spherical, R = 6378137 m)."""
    xm = EARTH_RADIUS_M * math.radians(g.lon)
    ym = EARTH_RADIUS_M * math.asinh(math.tan(math.radians(g.lat)))
    return MercatorPoint(xm=xm, ym=ym)


def mercator_distance(a: MercatorPoint, b: MercatorPoint) -> float:
    """Planar Euclidean distance in EPSG:3857 meters."""
    return math.hypot(a.xm - b.xm, a.ym - b.ym)


def ground_scale_correction(lat: float) -> float:
    """cos(lat) factor converting EPSG:3857 meters to approximate ground meters.

    Web Mercator distances overstate ground distance by 1/cos(lat); callers
    apply this only when ground-corrected output is requested.
    """
    if abs(lat) >= LAT_BOUND:
        raise ValueError(f"latitude {lat} outside Web Mercator range")
    return math.cos(math.radians(lat))


def meters_per_pixel(z: int, tile_size: int = 256) -> float:
    """EPSG:3857 meters spanned by one pixel at zoom z (latitude-independent)."""
    return 2.0 * math.pi * EARTH_RADIUS_M / ((1 << z) * tile_size)
