"""Tile acquisition, caching, stitching, resampling, and mosaic cropping.

Tiles are fetched from an XYZ url template or a local directory, cached on
disk as ``<root>/<z>/<x>/<y>.png`` (lossless RGB PNG), assembled into a
region mosaic, and read back out as pixel windows for detection and as
square crops for width characterization. Tile extents are treated as
half-open ``[x, x+1) x [y, y+1)`` in tile units so that every point belongs
to exactly one tile.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import requests
from PIL import Image

from .geo import GeoPoint, TileCoord, lonlat_to_global

FETCH_ATTEMPTS = 3
FETCH_BACKOFF_S = 0.2
FETCH_TIMEOUT_S = 10.0
DEFAULT_IN_FLIGHT = 8


class TileFetchError(Exception):
    """Transport or decode failure that persisted through retries."""


@dataclass(frozen=True)
class RasterImage:
    """RGB 8-bit raster. ``pixels`` has shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3 or self.pixels.dtype != np.uint8:
            raise ValueError(f"expected (h, w, 3) uint8 array, got {self.pixels.shape} {self.pixels.dtype}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def blank(cls, width: int, height: int | None = None) -> "RasterImage":
        h = height if height is not None else width
        return cls(np.zeros((h, width, 3), dtype=np.uint8))

    @classmethod
    def from_png_bytes(cls, data: bytes) -> "RasterImage":
        with Image.open(io.BytesIO(data)) as im:
            return cls(np.asarray(im.convert("RGB"), dtype=np.uint8))

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


@dataclass(frozen=True)
class TileSource:
    """Where tiles come from.

    kind "url_template": ``template`` contains {x}, {y}, {z} placeholders.
    kind "local_directory": ``template`` is a root holding ``z/x/y.png``.
    An API key is sent as header ``api_key_header`` when the environment
    variable named by ``api_key_env`` is set.
    """

    kind: str
    template: str
    tile_size: int = 256
    native_zoom: int = 20
    api_key_header: str | None = None
    api_key_env: str | None = None

    def __post_init__(self):
        if self.kind not in ("url_template", "local_directory"):
            raise ValueError(f"unknown tile source kind {self.kind!r}")
        if self.tile_size not in (256, 512):
            raise ValueError(f"tile_size must be 256 or 512, got {self.tile_size}")
        if self.kind == "url_template":
            for ph in ("{x}", "{y}", "{z}"):
                if ph not in self.template:
                    raise ValueError(f"url template missing {ph} placeholder")


def enumerate_tiles(nw: GeoPoint, se: GeoPoint, z: int) -> list[TileCoord]:
    """Tiles intersecting the bbox with corners nw (top-left) and se, row-major."""
    if nw.lon > se.lon or nw.lat < se.lat:
        raise ValueError("bbox corners inverted: first must be north-west of second")
    a = lonlat_to_global(nw, z)
    b = lonlat_to_global(se, z)
    n = 1 << z
    x_lo = min(int(math.floor(a.xf)), n - 1)
    x_hi = min(int(math.floor(b.xf)), n - 1)
    y_lo = min(int(math.floor(a.yf)), n - 1)
    y_hi = min(int(math.floor(b.yf)), n - 1)
    return [TileCoord(x, y, z) for y in range(y_lo, y_hi + 1) for x in range(x_lo, x_hi + 1)]


def _cache_path(cache_dir: str, t: TileCoord) -> str:
    return os.path.join(cache_dir, str(t.z), str(t.x), f"{t.y}.png")


def _write_atomic(path: str, data: bytes) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path), suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _decode_tile(data: bytes, expected_size: int, label: str) -> RasterImage:
    try:
        img = RasterImage.from_png_bytes(data)
    except Exception as exc:
        raise TileFetchError(f"failed to decode tile {label}: {exc}") from exc
    if img.width != expected_size or img.height != expected_size:
        raise TileFetchError(
            f"tile {label} is {img.width}x{img.height}, expected {expected_size}"
        )
    return img


def _http_get(src: TileSource, t: TileCoord) -> bytes | None:
    url = src.template.replace("{x}", str(t.x)).replace("{y}", str(t.y)).replace("{z}", str(t.z))
    headers = {}
    if src.api_key_header and src.api_key_env and os.environ.get(src.api_key_env):
        headers[src.api_key_header] = os.environ[src.api_key_env]
    last_exc: Exception | None = None
    for attempt in range(FETCH_ATTEMPTS):
        try:
            resp = requests.get(url, headers=headers, timeout=FETCH_TIMEOUT_S)
            if resp.status_code == 404:
                return None
            if resp.status_code == 200:
                return resp.content
            last_exc = TileFetchError(f"HTTP {resp.status_code} for {url}")
        except requests.RequestException as exc:
            last_exc = exc
        if attempt < FETCH_ATTEMPTS - 1:
            time.sleep(FETCH_BACKOFF_S * (2**attempt))
    raise TileFetchError(f"giving up on {url} after {FETCH_ATTEMPTS} attempts: {last_exc}")


def fetch_tile(src: TileSource, t: TileCoord, cache_dir: str | None = None) -> RasterImage | None:
    """Fetch one tile, returning None as the missing-tile marker.

    Url-template fetches are cached under ``cache_dir/z/x/y.png``; a cache
    hit skips the network. Local-directory sources are read in place.
    """
    label = f"{t.z}/{t.x}/{t.y}"
    if src.kind == "local_directory":
        path = _cache_path(src.template, t)
        if not os.path.exists(path):
            return None
        with open(path, "rb") as f:
            return _decode_tile(f.read(), src.tile_size, label)

    if cache_dir:
        cached = _cache_path(cache_dir, t)
        if os.path.exists(cached):
            with open(cached, "rb") as f:
                return _decode_tile(f.read(), src.tile_size, label)
    data = _http_get(src, t)
    if data is None:
        return None
    img = _decode_tile(data, src.tile_size, label)
    if cache_dir:
        # Re-encode so the cache is always lossless RGB PNG regardless of
        # what the server sent.
        _write_atomic(_cache_path(cache_dir, t), img.to_png_bytes())
    return img


def stitch_2x2(tl: RasterImage, tr: RasterImage, bl: RasterImage, br: RasterImage) -> RasterImage:
    """Assemble four n x n tiles into one 2n x 2n image."""
    n = tl.width
    for img in (tl, tr, bl, br):
        if img.width != n or img.height != n:
            raise ValueError("all four tiles must share the same square size")
    top = np.concatenate([tl.pixels, tr.pixels], axis=1)
    bottom = np.concatenate([bl.pixels, br.pixels], axis=1)
    return RasterImage(np.concatenate([top, bottom], axis=0))


def resample(img: RasterImage, target: int, method: str = "lanczos") -> RasterImage:
    """Resample to target x target with Lanczos-3 windowed sinc."""
    if method != "lanczos":
        raise ValueError(f"unsupported resampling method {method!r}")
    if target < 1:
        raise ValueError("target size must be >= 1")
    if target == img.width and target == img.height:
        return RasterImage(img.pixels.copy())
    pil = Image.fromarray(img.pixels, mode="RGB").resize((target, target), Image.LANCZOS)
    return RasterImage(np.asarray(pil, dtype=np.uint8))


@dataclass(frozen=True)
class RegionCoverage:
    """What a mosaic read actually covered."""

    padded: bool
    missing_tiles: tuple[TileCoord, ...] = ()


@dataclass
class Mosaic:
    """Grid of tiles anchored at ``origin`` (top-left), ``cols`` x ``rows``.

    ``tiles[(dx, dy)]`` holds the tile ``dy`` rows below and ``dx`` columns
    right of the origin, or None for a missing tile.
    """

    origin: TileCoord
    cols: int
    rows: int
    tile_size: int
    tiles: dict[tuple[int, int], RasterImage | None] = field(default_factory=dict)

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ValueError("mosaic must span at least one tile")

    @property
    def origin_px(self) -> tuple[int, int]:
        return self.origin.x * self.tile_size, self.origin.y * self.tile_size

    @property
    def extent_px(self) -> tuple[int, int]:
        return self.cols * self.tile_size, self.rows * self.tile_size

    def missing(self) -> list[TileCoord]:
        return [
            TileCoord(self.origin.x + dx, self.origin.y + dy, self.origin.z)
            for (dx, dy), img in sorted(self.tiles.items())
            if img is None
        ]

    def contains_px(self, x_px: float, y_px: float) -> bool:
        ox, oy = self.origin_px
        w, h = self.extent_px
        return ox <= x_px < ox + w and oy <= y_px < oy + h

    def read_region(self, x_px: int, y_px: int, width: int, height: int) -> tuple[RasterImage, RegionCoverage]:
        """Pixel window in global pixel coordinates; outside areas are black.

        Returns the window plus coverage: ``padded`` is set when any pixel
        fell outside the mosaic extent or over a missing tile.
        """
        ts = self.tile_size
        ox, oy = self.origin_px
        out = np.zeros((height, width, 3), dtype=np.uint8)
        padded = False
        missing: list[TileCoord] = []

        dx0 = math.floor((x_px - ox) / ts)
        dy0 = math.floor((y_px - oy) / ts)
        dx1 = math.floor((x_px + width - 1 - ox) / ts)
        dy1 = math.floor((y_px + height - 1 - oy) / ts)
        for dy in range(dy0, dy1 + 1):
            for dx in range(dx0, dx1 + 1):
                tile_x0 = ox + dx * ts
                tile_y0 = oy + dy * ts
                ix0 = max(x_px, tile_x0)
                iy0 = max(y_px, tile_y0)
                ix1 = min(x_px + width, tile_x0 + ts)
                iy1 = min(y_px + height, tile_y0 + ts)
                if dx < 0 or dy < 0 or dx >= self.cols or dy >= self.rows:
                    padded = True
                    continue
                tile = self.tiles.get((dx, dy))
                if tile is None:
                    padded = True
                    missing.append(TileCoord(self.origin.x + dx, self.origin.y + dy, self.origin.z))
                    continue
                out[iy0 - y_px : iy1 - y_px, ix0 - x_px : ix1 - x_px] = tile.pixels[
                    iy0 - tile_y0 : iy1 - tile_y0, ix0 - tile_x0 : ix1 - tile_x0
                ]
        return RasterImage(out), RegionCoverage(padded=padded, missing_tiles=tuple(missing))


def crop_centered(mosaic: Mosaic, center_px: tuple[float, float], size: int) -> tuple[RasterImage, bool]:
    """Size x size crop whose center pixel corresponds to ``center_px``.

    ``center_px`` is a continuous global pixel position; it is snapped to
    the nearest pixel and the crop is placed so that position lands on crop
    pixel (size//2, size//2). Returns the crop and a padded flag.
    """
    cx, cy = center_px
    if not mosaic.contains_px(cx, cy):
        raise ValueError(f"crop center {center_px} outside mosaic extent")
    x0 = int(round(cx)) - size // 2
    y0 = int(round(cy)) - size // 2
    img, cov = mosaic.read_region(x0, y0, size, size)
    return img, cov.padded


def build_mosaic(
    src: TileSource,
    tiles: list[TileCoord],
    cache_dir: str | None = None,
    in_flight: int = DEFAULT_IN_FLIGHT,
) -> Mosaic:
    """Fetch ``tiles`` (bounded concurrency) and assemble them into a Mosaic.

    ``tiles`` must form the full rectangle produced by enumerate_tiles.
    Missing tiles are kept as None markers.
    """
    if not tiles:
        raise ValueError("no tiles to assemble")
    z = tiles[0].z
    x0 = min(t.x for t in tiles)
    y0 = min(t.y for t in tiles)
    cols = max(t.x for t in tiles) - x0 + 1
    rows = max(t.y for t in tiles) - y0 + 1
    if len(tiles) != cols * rows:
        raise ValueError("tile list does not form a full rectangle")

    mosaic = Mosaic(origin=TileCoord(x0, y0, z), cols=cols, rows=rows, tile_size=src.tile_size)
    lock = threading.Lock()

    def fetch_one(t: TileCoord) -> None:
        img = fetch_tile(src, t, cache_dir)
        with lock:
            mosaic.tiles[(t.x - x0, t.y - y0)] = img

    with ThreadPoolExecutor(max_workers=max(1, in_flight)) as pool:
        list(pool.map(fetch_one, tiles))
    return mosaic
