"""End-to-end orchestration: ingest, scan, crop, characterize, serialize.

A run is driven by a single JSON config (RunConfig). The report schema is
versioned ("schema": 1) and deterministic for a fixed config, seed, and
scripted backend; only the "timing" block varies between identical runs.
GeoJSON output replaces shapefiles: one Polygon feature per space, WGS84
lon-lat, closed counter-clockwise ring.
"""

from __future__ import annotations

import json
import shlex
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import click

from .characterizer import characterize, width_to_meters
from .detector import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    ORIENT_CROP_PX,
    DetectorBackend,
    JitterSpec,
    ParkingClass,
    ScenarioBackend,
    ScenarioError,
    SidecarClient,
    SidecarError,
)
from .detector import orient as orient_crop
from .evaluate import (
    DatasetError,
    confusion_matrix,
    export_crops,
    load_coco,
    load_predictions,
    match_detections,
    metrics,
    metrics_to_dict,
    render_metrics_table,
    render_width_table,
    sample_pools,
    truth_width_px,
    width_compare,
)
from .geo import GeoPoint, GlobalTilePoint, global_to_lonlat
from .imagery import (
    TileFetchError,
    TileSource,
    build_mosaic,
    crop_centered,
    enumerate_tiles,
    fetch_tile,
)
from .scanner import MAX_OBJECT_PX, WINDOW_PX, GlobalDetection, scan_region

SCHEMA_VERSION = 1
DEFAULT_NMS_IOU = 0.5


class ConfigError(Exception):
    """Invalid run configuration."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass(frozen=True)
class BackendConfig:
    scenario: str | None = None
    sidecar_command: str | None = None
    sidecar_url: str | None = None
    jitter_sigma: float = 0.0

    def __post_init__(self):
        endpoints = [self.scenario, self.sidecar_command, self.sidecar_url]
        if sum(e is not None for e in endpoints) != 1:
            raise ConfigError("backend needs exactly one of scenario, sidecar_command, sidecar_url")
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    source: TileSource
    zoom: int
    bbox: tuple[GeoPoint, GeoPoint]
    backend: BackendConfig
    locate_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    orient_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    dedup_iou: float = DEFAULT_NMS_IOU
    ground_corrected: bool = False
    output_report: str = "report.json"
    output_geojson: str | None = None
    seed: int = 0
    workers: int = 8
    cache_dir: str | None = None

    def __post_init__(self):
        if not 0 <= self.zoom <= self.source.native_zoom:
            raise ConfigError(
                f"zoom {self.zoom} outside source support [0, {self.source.native_zoom}]"
            )
        for name in ("locate_threshold", "orient_threshold", "dedup_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        nw, se = self.bbox
        if nw.lat <= se.lat or nw.lon >= se.lon:
            raise ConfigError("bbox must run north-west to south-east")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            src = d["source"]
            source = TileSource(
                kind=src["kind"],
                template=src["template"],
                tile_size=int(src.get("tile_size", 256)),
                native_zoom=int(src.get("native_zoom", 20)),
                api_key_header=src.get("api_key_header"),
                api_key_env=src.get("api_key_env"),
            )
            bbox = d["bbox"]
            nw = GeoPoint(lon=float(bbox["nw"][0]), lat=float(bbox["nw"][1]))
            se = GeoPoint(lon=float(bbox["se"][0]), lat=float(bbox["se"][1]))
            b = d.get("backend", {})
            backend = BackendConfig(
                scenario=b.get("scenario"),
                sidecar_command=b.get("sidecar_command"),
                sidecar_url=b.get("sidecar_url"),
                jitter_sigma=float(b.get("jitter_sigma", 0.0)),
            )
            thresholds = d.get("thresholds", {})
            output = d.get("output", {})
            return cls(
                source=source,
                zoom=int(d["zoom"]),
                bbox=(nw, se),
                backend=backend,
                locate_threshold=float(thresholds.get("locate", DEFAULT_CONFIDENCE_THRESHOLD)),
                orient_threshold=float(thresholds.get("orient", DEFAULT_CONFIDENCE_THRESHOLD)),
                dedup_iou=float(thresholds.get("dedup_iou", DEFAULT_NMS_IOU)),
                ground_corrected=bool(d.get("ground_corrected", False)),
                output_report=output.get("report", "report.json"),
                output_geojson=output.get("geojson"),
                seed=int(d.get("seed", 0)),
                workers=int(d.get("workers", 8)),
                cache_dir=d.get("cache_dir"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad config: {exc}") from exc

    def to_dict(self) -> dict:
        nw, se = self.bbox
        return {
            "source": {
                "kind": self.source.kind,
                "template": self.source.template,
                "tile_size": self.source.tile_size,
                "native_zoom": self.source.native_zoom,
                "api_key_header": self.source.api_key_header,
                "api_key_env": self.source.api_key_env,
            },
            "zoom": self.zoom,
            "bbox": {"nw": [nw.lon, nw.lat], "se": [se.lon, se.lat]},
            "backend": {
                "scenario": self.backend.scenario,
                "sidecar_command": self.backend.sidecar_command,
                "sidecar_url": self.backend.sidecar_url,
                "jitter_sigma": self.backend.jitter_sigma,
            },
            "thresholds": {
                "locate": self.locate_threshold,
                "orient": self.orient_threshold,
                "dedup_iou": self.dedup_iou,
            },
            "ground_corrected": self.ground_corrected,
            "output": {"report": self.output_report, "geojson": self.output_geojson},
            "seed": self.seed,
            "workers": self.workers,
            "cache_dir": self.cache_dir,
        }


def load_config(path: str, overrides: dict | None = None) -> RunConfig:
    try:
        with open(path) as f:
            d = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("zoom", "seed", "workers", "ground_corrected", "cache_dir"):
            d[key] = value
        elif key == "report":
            d.setdefault("output", {})["report"] = value
        elif key == "geojson":
            d.setdefault("output", {})["geojson"] = value
        elif key == "scenario":
            d["backend"] = {"scenario": value, "jitter_sigma": d.get("backend", {}).get("jitter_sigma", 0.0)}
        else:
            raise ConfigError(f"unknown override {key!r}")
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------------------
# Report model


@dataclass(frozen=True)
class SpaceRecord:
    id: str
    cls: ParkingClass
    confidence: float
    centroid: GeoPoint
    bbox_px: tuple[float, float, float, float]
    corners_lonlat: tuple[tuple[float, float], ...]
    characterized: bool
    flags: tuple[str, ...]
    space_width_px: float | None = None
    space_width_m: float | None = None
    aisle_width_px_left: float | None = None
    aisle_width_px_right: float | None = None
    aisle_width_m_left: float | None = None
    aisle_width_m_right: float | None = None
    total_width_px: float | None = None
    total_width_m: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "class": self.cls.value,
            "confidence": self.confidence,
            "centroid": {"lon": self.centroid.lon, "lat": self.centroid.lat},
            "bbox_px": list(self.bbox_px),
            "obb_corners_lonlat": [list(c) for c in self.corners_lonlat] if self.characterized else None,
            "space_width_px": self.space_width_px,
            "space_width_m": self.space_width_m,
            "aisle_width_px_left": self.aisle_width_px_left,
            "aisle_width_px_right": self.aisle_width_px_right,
            "aisle_width_m_left": self.aisle_width_m_left,
            "aisle_width_m_right": self.aisle_width_m_right,
            "total_width_px": self.total_width_px,
            "total_width_m": self.total_width_m,
            "flags": sorted(self.flags),
        }


@dataclass
class RegionReport:
    config: RunConfig
    spaces: list[SpaceRecord]
    coverage: dict
    counts: dict
    timing: dict

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "spaces": [s.to_dict() for s in self.spaces],
            "coverage": self.coverage,
            "counts": self.counts,
            "timing": self.timing,
        }


# ---------------------------------------------------------------------------
# Orchestration


def make_backend(config: RunConfig) -> DetectorBackend:
    b = config.backend
    if b.scenario is not None:
        jitter = JitterSpec(sigma_px=b.jitter_sigma, seed=config.seed) if b.jitter_sigma > 0 else None
        return ScenarioBackend.from_file(b.scenario, jitter=jitter)
    if b.sidecar_command is not None:
        return SidecarClient(command=shlex.split(b.sidecar_command))
    return SidecarClient(url=b.sidecar_url)


def _lonlat_of_px(x_px: float, y_px: float, z: int, tile_size: int) -> GeoPoint:
    return global_to_lonlat(GlobalTilePoint(x_px / tile_size, y_px / tile_size, z))


def _inside_bbox(p: GeoPoint, bbox: tuple[GeoPoint, GeoPoint]) -> bool:
    nw, se = bbox
    return se.lat <= p.lat <= nw.lat and nw.lon <= p.lon <= se.lon


def _characterize_detection(det: GlobalDetection, mosaic, backend, config: RunConfig) -> dict:
    """One detection through crop, orient, and characterization.

    Returns a partial-record dict; never raises for per-object problems.
    """
    ts = config.source.tile_size
    cx, cy = det.centroid
    ci, cj = int(round(cx)), int(round(cy))
    scale = 2.0 * ts / WINDOW_PX
    oversize = max(det.bbox[2], det.bbox[3]) > MAX_OBJECT_PX * scale
    extra_flags = []
    obbs = []
    padded = False
    try:
        crop, padded = crop_centered(mosaic, (cx, cy), ORIENT_CROP_PX)
        obbs = orient_crop(backend, crop, threshold=config.orient_threshold, key=f"{config.zoom}/{ci},{cj}")
    except ValueError:
        extra_flags.append("crop_failed")
    except SidecarError:
        extra_flags.append("orient_failed")

    char = None
    if not extra_flags:
        char = characterize(
            obbs,
            det.cls,
            det.confidence,
            crop_origin_global=(ci - ORIENT_CROP_PX // 2, cj - ORIENT_CROP_PX // 2),
            z=config.zoom,
            tile_size=ts,
            ground_corrected=config.ground_corrected,
            padded_crop=padded,
            suspected_oversize=oversize,
        )
    return {"det": det, "char": char, "extra_flags": extra_flags, "padded": padded, "oversize": oversize}


def _build_record(partial: dict, config: RunConfig) -> SpaceRecord:
    det: GlobalDetection = partial["det"]
    char = partial["char"]
    ts = config.source.tile_size
    z = config.zoom
    bx, by, bw, bh = det.bbox
    if char is not None:
        centroid = char.centroid
        ox = int(round(det.centroid[0])) - ORIENT_CROP_PX // 2
        oy = int(round(det.centroid[1])) - ORIENT_CROP_PX // 2
        corners = tuple(
            (p.lon, p.lat)
            for p in (
                _lonlat_of_px(ox + x, oy + y, z, ts) for x, y in char.space_obb.corners()
            )
        )
        flags = set(char.flags)
        widths = {
            "space_width_px": char.space_width_px,
            "space_width_m": width_to_meters(char.space_width_px, centroid, z, ts, config.ground_corrected),
            "aisle_width_px_left": char.left.extent_px,
            "aisle_width_px_right": char.right.extent_px,
            "aisle_width_m_left": width_to_meters(char.left.extent_px, centroid, z, ts, config.ground_corrected),
            "aisle_width_m_right": width_to_meters(char.right.extent_px, centroid, z, ts, config.ground_corrected),
            "total_width_px": char.total_width_px,
            "total_width_m": char.total_width_m,
        }
        characterized = True
    else:
        centroid = _lonlat_of_px(bx + bw / 2.0, by + bh / 2.0, z, ts)
        corners = tuple(
            (p.lon, p.lat)
            for p in (
                _lonlat_of_px(px, py, z, ts)
                for px, py in ((bx, by), (bx + bw, by), (bx + bw, by + bh), (bx, by + bh))
            )
        )
        flags = {"uncharacterized"}
        if partial["padded"]:
            flags.add("padded_crop")
        if partial["oversize"]:
            flags.add("suspected_oversize")
        widths = {}
        characterized = False
    flags.update(partial["extra_flags"])
    if not _inside_bbox(centroid, config.bbox):
        flags.add("boundary_adjacent")
    return SpaceRecord(
        id="",
        cls=det.cls,
        confidence=det.confidence,
        centroid=centroid,
        bbox_px=det.bbox,
        corners_lonlat=corners,
        characterized=characterized,
        flags=tuple(sorted(flags)),
        **widths,
    )


def run(config: RunConfig) -> RegionReport:
    """Scan the configured region and characterize every located space."""
    t0 = time.time()
    nw, se = config.bbox
    tiles = enumerate_tiles(nw, se, config.zoom)
    mosaic = build_mosaic(config.source, tiles, cache_dir=config.cache_dir, in_flight=config.workers)
    backend = make_backend(config)
    try:
        scan = scan_region(
            mosaic,
            backend,
            threshold=config.locate_threshold,
            iou_thresh=config.dedup_iou,
            workers=config.workers,
        )
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            partials = list(
                pool.map(lambda d: _characterize_detection(d, mosaic, backend, config), scan.detections)
            )
    finally:
        if isinstance(backend, SidecarClient):
            backend.close()

    records = [_build_record(p, config) for p in partials]
    order = sorted(range(len(records)), key=lambda i: (-records[i].centroid.lat, records[i].centroid.lon))
    spaces = []
    for rank, i in enumerate(order, 1):
        rec = records[i]
        spaces.append(
            SpaceRecord(**{**rec.__dict__, "id": f"s{rank:04d}"})
        )

    uncharacterized = sum(1 for s in spaces if not s.characterized)
    coverage = {
        "missing_tiles": [f"{t.z}/{t.x}/{t.y}" for t in scan.missing_tiles],
        "skipped_windows": [
            {"square": f"{f.square.z}/{f.square.x}/{f.square.y}", "pass": f.pass_id, "error": f.error}
            for f in scan.failures
        ],
        "uncharacterized": uncharacterized,
        "suspected_oversize": scan.oversized,
        "orient_failures": sum(1 for p in partials if "orient_failed" in p["extra_flags"]),
        "padded_crops": sum(1 for p in partials if p["padded"]),
    }
    counts = {
        "tiles": len(tiles),
        "tiles_missing": len(scan.missing_tiles),
        "squares_scanned": scan.squares_scanned,
        "locate_calls": scan.backend_calls,
        "detections": len(scan.detections),
        "spaces": len(spaces),
        "characterized": len(spaces) - uncharacterized,
    }
    timing = {"started_unix": t0, "elapsed_s": time.time() - t0}
    return RegionReport(config=config, spaces=spaces, coverage=coverage, counts=counts, timing=timing)


# ---------------------------------------------------------------------------
# Serialization


def _ring_ccw_closed(corners: tuple[tuple[float, float], ...]) -> list[list[float]]:
    ring = [[lon, lat] for lon, lat in corners]
    area = 0.0
    for (x1, y1), (x2, y2) in zip(ring, ring[1:] + ring[:1]):
        area += x1 * y2 - x2 * y1
    if area < 0:
        ring.reverse()
    ring.append(list(ring[0]))
    return ring


def report_geojson(report: RegionReport) -> dict:
    features = []
    for rec in report.spaces:
        features.append(
            {
                "type": "Feature",
                "id": rec.id,
                "geometry": {"type": "Polygon", "coordinates": [_ring_ccw_closed(rec.corners_lonlat)]},
                "properties": {
                    "class": rec.cls.value,
                    "confidence": rec.confidence,
                    "space_width_m": rec.space_width_m,
                    "aisle_width_m_left": rec.aisle_width_m_left,
                    "aisle_width_m_right": rec.aisle_width_m_right,
                    "total_width_m": rec.total_width_m,
                    "flags": sorted(rec.flags),
                },
            }
        )
    return {"type": "FeatureCollection", "features": features}


def write_outputs(report: RegionReport) -> tuple[str, str | None]:
    report_path = report.config.output_report
    with open(report_path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    geojson_path = report.config.output_geojson
    if geojson_path:
        with open(geojson_path, "w") as f:
            json.dump(report_geojson(report), f, indent=2, sort_keys=True)
            f.write("\n")
    return report_path, geojson_path


# ---------------------------------------------------------------------------
# CLI

_RUNTIME_ERRORS = (TileFetchError, SidecarError, ScenarioError, DatasetError, ValueError, OSError)


def _emit(ctx: click.Context, event: str, **fields) -> None:
    if ctx.obj and ctx.obj.get("json"):
        click.echo(json.dumps({"event": event, **fields}, sort_keys=True), err=True)
    else:
        detail = " ".join(f"{k}={v}" for k, v in fields.items())
        click.echo(f"{event}: {detail}" if detail else event, err=True)


def _fail(ctx: click.Context, exc: Exception) -> None:
    _emit(ctx, "error", kind=type(exc).__name__, detail=str(exc))
    sys.exit(1)


@click.group()
@click.option("--json", "json_logs", is_flag=True, help="Emit machine-readable log lines.")
@click.pass_context
def main(ctx, json_logs):
    """Detect disability parking in aerial tiles and map accessible widths."""
    ctx.ensure_object(dict)
    ctx.obj["json"] = json_logs


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--zoom", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--report", "report_path", default=None, help="Override report output path.")
@click.option("--geojson", "geojson_path", default=None, help="Override GeoJSON output path.")
@click.option("--scenario", default=None, help="Use a scripted scenario backend from this file.")
@click.option("--cache-dir", default=None)
@click.pass_context
def detect(ctx, config_path, zoom, seed, workers, report_path, geojson_path, scenario, cache_dir):
    """Run the full detection pipeline over the configured region."""
    try:
        config = load_config(
            config_path,
            overrides={
                "zoom": zoom,
                "seed": seed,
                "workers": workers,
                "report": report_path,
                "geojson": geojson_path,
                "scenario": scenario,
                "cache_dir": cache_dir,
            },
        )
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        report = run(config)
        written = write_outputs(report)
    except _RUNTIME_ERRORS as exc:
        _fail(ctx, exc)
        return
    _emit(
        ctx,
        "detect.done",
        spaces=report.counts["spaces"],
        missing_tiles=report.counts["tiles_missing"],
        report=written[0],
        geojson=written[1],
    )


@main.group(name="eval")
def eval_group():
    """Compare predictions with ground truth."""


def _grouped_matches(preds, dataset, iou_thresh, mode):
    by_truth = dataset.by_image()
    by_pred: dict[str, list] = {}
    for p in preds:
        by_pred.setdefault(p.image_id, []).append(p)
    matches = []
    for image_id in sorted(set(by_truth) | set(by_pred)):
        matches.append(
            match_detections(
                by_pred.get(image_id, []), by_truth.get(image_id, []), iou_thresh=iou_thresh, mode=mode
            )
        )
    return matches


@eval_group.command("detections")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--iou", "iou_thresh", type=float, default=0.5, show_default=True)
@click.option("--mode", type=click.Choice(["envelope", "exact"]), default="envelope", show_default=True)
@click.option("--out", "out_path", default=None, help="Also write metrics JSON here.")
@click.pass_context
def eval_detections(ctx, preds_path, truth_path, iou_thresh, mode, out_path):
    """Match predictions to ground truth and print P/R/F1 per class."""
    try:
        preds = load_predictions(preds_path)
        dataset = load_coco(truth_path)
        matches = _grouped_matches(preds, dataset, iou_thresh, mode)
        m = metrics(matches)
        click.echo(render_metrics_table(m))
        if out_path:
            payload = {
                "iou_threshold": iou_thresh,
                "mode": mode,
                "metrics": metrics_to_dict(m),
                "confusion": confusion_matrix(matches),
            }
            with open(out_path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
    except _RUNTIME_ERRORS as exc:
        _fail(ctx, exc)


@eval_group.command("width")
@click.option("--preds", "preds_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--iou", "iou_thresh", type=float, default=0.5, show_default=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
def eval_width(ctx, preds_path, truth_path, iou_thresh, out_path):
    """Compare predicted widths against annotation-derived widths."""
    try:
        preds = load_predictions(preds_path)
        dataset = load_coco(truth_path)
        matches = _grouped_matches(preds, dataset, iou_thresh, "envelope")
        pred_ws, ref_ws, classes = [], [], []
        for m in matches:
            for pred, truth, _ in m.pairs:
                if pred.width_px is None:
                    continue
                pred_ws.append(pred.width_px)
                ref_ws.append(truth_width_px(truth))
                classes.append(truth.cls)
        stats = width_compare(pred_ws, ref_ws, classes=classes)
        click.echo(render_width_table(stats))
        if out_path:
            payload = {
                k: {
                    "count": s.count,
                    "excluded_zero_ref": s.excluded_zero_ref,
                    "mean_px": s.mean_px,
                    "sd_px": s.sd_px,
                    "mean_pct": s.mean_pct,
                    "sd_pct": s.sd_pct,
                }
                for k, s in stats.items()
            }
            with open(out_path, "w") as f:
                json.dump(payload, f, indent=2, sort_keys=True)
                f.write("\n")
    except _RUNTIME_ERRORS as exc:
        _fail(ctx, exc)


@main.group(name="dataset")
def dataset_group():
    """Dataset construction helpers."""


@dataset_group.command("sample-pools")
@click.option("--hints", "hints_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--regions", "regions_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--quota", "quotas", multiple=True, required=True, help="region=may:maynot, repeatable.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", default=None)
@click.pass_context
def dataset_sample_pools(ctx, hints_path, regions_path, quotas, seed, out_path):
    """Stratified draw of annotation candidates from detector hints."""
    parsed = {}
    try:
        for q in quotas:
            region, counts = q.split("=", 1)
            pos, neg = counts.split(":", 1)
            parsed[region] = (int(pos), int(neg))
    except ValueError as exc:
        raise click.UsageError(f"bad --quota {q!r}: expected region=may:maynot") from exc
    try:
        with open(hints_path) as f:
            hints = json.load(f)
        with open(regions_path) as f:
            regions = json.load(f)
        plan = sample_pools(hints, regions, parsed, seed=seed)
        payload = {
            "seed": plan.seed,
            "may_contain": {r: list(v) for r, v in plan.may_contain.items()},
            "may_not_contain": {r: list(v) for r, v in plan.may_not_contain.items()},
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if out_path:
            with open(out_path, "w") as f:
                f.write(text + "\n")
        else:
            click.echo(text)
    except (_RUNTIME_ERRORS, json.JSONDecodeError) as exc:
        _fail(ctx, exc)


@dataset_group.command("export-crops")
@click.option("--truth", "truth_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True)
@click.option("--size", type=int, default=100, show_default=True)
@click.pass_context
def dataset_export_crops(ctx, truth_path, out_path, size):
    """Export per-object crop windows with translated labels."""
    try:
        dataset = load_coco(truth_path)
        crops, excluded = export_crops(dataset, size=size)
        payload = {
            "size": size,
            "excluded_edge": excluded,
            "crops": [
                {
                    "image_id": c.image_id,
                    "origin": list(c.origin),
                    "center_class": c.center_cls.value,
                    "labels": [
                        {"class": lab.cls.value, "polygon": [list(p) for p in lab.polygon]}
                        for lab in c.labels
                    ],
                }
                for c in crops
            ],
        }
        with open(out_path, "w") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        _emit(ctx, "export-crops.done", crops=len(crops), excluded=excluded, out=out_path)
    except _RUNTIME_ERRORS as exc:
        _fail(ctx, exc)


@main.group(name="tiles")
def tiles_group():
    """Tile source utilities."""


@tiles_group.command("fetch")
@click.option("--kind", type=click.Choice(["url_template", "local_directory"]), required=True)
@click.option("--template", required=True, help="URL template or tile directory root.")
@click.option("--tile-size", type=int, default=256, show_default=True)
@click.option("--native-zoom", type=int, default=20, show_default=True)
@click.option("--api-key-env", default=None)
@click.option("--api-key-header", default=None)
@click.option("--zoom", type=int, required=True)
@click.option("--bbox", "bbox_str", required=True, help="nw_lon,nw_lat,se_lon,se_lat")
@click.option("--cache-dir", required=True)
@click.pass_context
def tiles_fetch(ctx, kind, template, tile_size, native_zoom, api_key_env, api_key_header, zoom, bbox_str, cache_dir):
    """Prefetch a region's tiles into the cache directory."""
    try:
        parts = [float(v) for v in bbox_str.split(",")]
        if len(parts) != 4:
            raise ValueError("expected four comma-separated numbers")
        nw = GeoPoint(lon=parts[0], lat=parts[1])
        se = GeoPoint(lon=parts[2], lat=parts[3])
    except ValueError as exc:
        raise click.UsageError(f"bad --bbox: {exc}") from exc
    src = TileSource(
        kind=kind,
        template=template,
        tile_size=tile_size,
        native_zoom=native_zoom,
        api_key_env=api_key_env,
        api_key_header=api_key_header,
    )
    try:
        tiles = enumerate_tiles(nw, se, zoom)
        fetched = missing = 0
        for t in tiles:
            if fetch_tile(src, t, cache_dir=cache_dir) is None:
                missing += 1
            else:
                fetched += 1
        _emit(ctx, "tiles.fetch.done", fetched=fetched, missing=missing, total=len(tiles))
    except _RUNTIME_ERRORS as exc:
        _fail(ctx, exc)


if __name__ == "__main__":
    main()
