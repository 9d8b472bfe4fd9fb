"""Four-pass seam-safe sliding-window scan over a tile mosaic.

The region is covered by non-overlapping 2x2-tile squares. Each square is
scanned with four detector passes whose windows are offset by one tile to
the right, down, and diagonally, so that objects straddling a seam of the
square appear whole in at least one window. An ownership rule assigns
every centroid to exactly one pass: clipped fragments near window borders
fall outside their pass's keep region and are dropped, while the whole
object is kept by the pass whose window contains it entirely. Ownership is
decided in detector space, where a window is always 512 px and a tile 256,
regardless of the native tile size.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .detector import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    Detection,
    DetectorBackend,
    ParkingClass,
    SidecarError,
    locate as run_locate,
)
from .geo import TileCoord
from .imagery import Mosaic, RasterImage, resample

WINDOW_PX = 512
TILE_IN_WINDOW_PX = 256
MARGIN_PX = 50
MAX_OBJECT_PX = 100
DEFAULT_NMS_IOU = 0.5
DEFAULT_SCAN_WORKERS = 8

# Window origins of the four passes, in tile offsets from the square corner.
PASS_OFFSETS = {1: (0, 0), 2: (1, 0), 3: (0, 1), 4: (1, 1)}


@dataclass(frozen=True)
class WindowSquare:
    """A 2x2-tile scan square anchored at top-left tile ``a``."""

    a: TileCoord
    side: int

    def __post_init__(self):
        if self.side not in (512, 1024):
            raise ValueError(f"square side must be 2 tiles (512 or 1024 px), got {self.side}")


@dataclass(frozen=True)
class GlobalDetection:
    """A deduplicated detection in global pixel coordinates at zoom z."""

    cls: ParkingClass
    bbox: tuple[float, float, float, float]
    confidence: float
    z: int
    square: TileCoord
    pass_id: int

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0


@dataclass(frozen=True)
class ScanFailure:
    square: TileCoord
    pass_id: int
    error: str


@dataclass
class RegionScan:
    detections: list[GlobalDetection] = field(default_factory=list)
    failures: list[ScanFailure] = field(default_factory=list)
    missing_tiles: list[TileCoord] = field(default_factory=list)
    squares_scanned: int = 0
    backend_calls: int = 0
    oversized: int = 0


def ownership(
    cx: float,
    cy: float,
    side: int = WINDOW_PX,
    margin: int = MARGIN_PX,
    at_left: bool = False,
    at_top: bool = False,
) -> int | None:
    """Which pass owns a centroid, in square-local detector pixels.

    The square's responsibility area is [margin, side + margin) on each
    axis; interval edges at exactly ``margin`` from a seam go to the
    lower-numbered pass (the interior band is closed, the seam bands are
    open on their inner edge). On a true region boundary the left/top
    ignore margin is waived so edge objects are not dropped.
    """
    x_lo = 0.0 if at_left else margin
    y_lo = 0.0 if at_top else margin
    in_x1 = x_lo <= cx <= side - margin
    in_x2 = side - margin < cx < side + margin
    in_y1 = y_lo <= cy <= side - margin
    in_y2 = side - margin < cy < side + margin
    if in_x1 and in_y1:
        return 1
    if in_x2 and in_y1:
        return 2
    if in_x1 and in_y2:
        return 3
    if in_x2 and in_y2:
        return 4
    return None


def _bbox_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def dedup(dets: list[GlobalDetection], iou_thresh: float = DEFAULT_NMS_IOU) -> list[GlobalDetection]:
    """Greedy non-maximum suppression by confidence."""
    ordered = sorted(
        dets,
        key=lambda d: (-d.confidence, d.centroid[1], d.centroid[0], d.cls.value, d.bbox),
    )
    kept: list[GlobalDetection] = []
    for d in ordered:
        if all(_bbox_iou(d.bbox, k.bbox) < iou_thresh for k in kept):
            kept.append(d)
    return kept


def window_key(tile: TileCoord) -> str:
    """Scenario/replay key for the locate window anchored at ``tile``."""
    return f"{tile.z}/{tile.x}/{tile.y}"


def scan_square(
    mosaic: Mosaic,
    square: WindowSquare,
    backend: DetectorBackend,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    at_left: bool = False,
    at_top: bool = False,
) -> tuple[list[GlobalDetection], list[ScanFailure], list[TileCoord]]:
    """Run the four passes over one square and keep owned detections.

    Issues exactly four backend calls. A failing pass is recorded and the
    square is treated as partially scanned rather than aborting.
    """
    ts = mosaic.tile_size
    scale = (2 * ts) / WINDOW_PX  # native px per detector px
    a = square.a
    sq_x0 = a.x * ts
    sq_y0 = a.y * ts
    out: list[GlobalDetection] = []
    failures: list[ScanFailure] = []
    missing: list[TileCoord] = []

    for pass_id, (tx, ty) in PASS_OFFSETS.items():
        origin = TileCoord(a.x + tx, a.y + ty, a.z)
        win, cov = mosaic.read_region(origin.x * ts, origin.y * ts, 2 * ts, 2 * ts)
        missing.extend(cov.missing_tiles)
        if win.width != WINDOW_PX:
            win = resample(win, WINDOW_PX)
        try:
            dets = run_locate(backend, win, threshold=threshold, key=window_key(origin))
        except SidecarError as exc:
            failures.append(ScanFailure(square=a, pass_id=pass_id, error=str(exc)))
            continue
        off_x = tx * TILE_IN_WINDOW_PX
        off_y = ty * TILE_IN_WINDOW_PX
        for det in dets:
            wx, wy = det.centroid
            if ownership(wx + off_x, wy + off_y, at_left=at_left, at_top=at_top) != pass_id:
                continue
            x, y, w, h = det.bbox
            gx = sq_x0 + (x + off_x) * scale
            gy = sq_y0 + (y + off_y) * scale
            out.append(
                GlobalDetection(
                    cls=det.cls,
                    bbox=(gx, gy, w * scale, h * scale),
                    confidence=det.confidence,
                    z=a.z,
                    square=a,
                    pass_id=pass_id,
                )
            )
    return out, failures, missing


def enumerate_squares(mosaic: Mosaic) -> list[WindowSquare]:
    """Non-overlapping 2x2 squares covering the mosaic (stride 2 tiles).

    With an odd tile count the last row/column of squares hangs over the
    mosaic edge; the overhang is blank-padded by the mosaic read.
    """
    o = mosaic.origin
    side = 2 * mosaic.tile_size
    squares = []
    for j in range(math.ceil(mosaic.rows / 2)):
        for i in range(math.ceil(mosaic.cols / 2)):
            squares.append(WindowSquare(a=TileCoord(o.x + 2 * i, o.y + 2 * j, o.z), side=side))
    return squares


def scan_region(
    mosaic: Mosaic,
    backend: DetectorBackend,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    iou_thresh: float = DEFAULT_NMS_IOU,
    workers: int = DEFAULT_SCAN_WORKERS,
) -> RegionScan:
    """Scan every square concurrently, dedup, and sort deterministically."""
    squares = enumerate_squares(mosaic)
    o = mosaic.origin
    scan = RegionScan()
    lock = threading.Lock()

    def run_one(sq: WindowSquare) -> None:
        dets, failures, missing = scan_square(
            mosaic,
            sq,
            backend,
            threshold=threshold,
            at_left=sq.a.x == o.x,
            at_top=sq.a.y == o.y,
        )
        with lock:
            scan.detections.extend(dets)
            scan.failures.extend(failures)
            scan.missing_tiles.extend(missing)
            scan.backend_calls += len(PASS_OFFSETS)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(run_one, squares))

    scan.squares_scanned = len(squares)
    scan.detections = dedup(scan.detections, iou_thresh=iou_thresh)
    scan.detections.sort(key=lambda d: (d.centroid[1], d.centroid[0], d.cls.value, -d.confidence))
    scan.failures.sort(key=lambda f: (f.square.y, f.square.x, f.pass_id))
    scan.missing_tiles = sorted(set(scan.missing_tiles), key=lambda t: (t.z, t.y, t.x))
    scale = (2 * mosaic.tile_size) / WINDOW_PX
    limit = MAX_OBJECT_PX * scale
    scan.oversized = sum(1 for d in scan.detections if d.bbox[2] > limit or d.bbox[3] > limit)
    return scan
