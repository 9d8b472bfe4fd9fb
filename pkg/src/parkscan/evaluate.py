"""Ground-truth ingestion, matching, detection metrics, and dataset utilities.

Matching is optimal bipartite assignment (Hungarian) on cost = 1 - IoU,
with pairs under the IoU threshold dissolved into a false positive plus a
false negative. Metrics are micro-averaged from summed counts, with
misclassified matches counted as FP for the predicted class and FN for the
true class. Polygon truths are reduced to axis-aligned envelopes for IoU
against box predictions; exact polygon IoU is available as an opt-in mode
for oriented-box evaluation.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .detector import OrientedBox, ParkingClass

DEFAULT_MATCH_IOU = 0.5
REGION_MATCH_IOU = 0.3
HINT_CONF_THRESHOLD = 0.3
CROP_SIZE = 100
SOURCE_IMAGE_SIZE = 512


class DatasetError(Exception):
    """Malformed ground truth or predictions file."""


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class GroundTruthObject:
    image_id: str
    cls: ParkingClass
    polygon: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.polygon) < 3:
            raise ValueError(f"polygon needs >= 3 vertices, got {len(self.polygon)}")
        if abs(_shoelace(self.polygon)) <= 0.0:
            raise ValueError("polygon has zero area")

    @property
    def envelope(self) -> tuple[float, float, float, float]:
        xs = [p[0] for p in self.polygon]
        ys = [p[1] for p in self.polygon]
        return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.envelope
        return x + w / 2.0, y + h / 2.0


@dataclass(frozen=True)
class ImageInfo:
    image_id: str
    file_name: str
    width: int
    height: int


@dataclass
class CocoDataset:
    images: dict[str, ImageInfo]
    objects: list[GroundTruthObject]

    def by_image(self) -> dict[str, list[GroundTruthObject]]:
        out: dict[str, list[GroundTruthObject]] = {i: [] for i in self.images}
        for obj in self.objects:
            out[obj.image_id].append(obj)
        return out

    def class_histogram(self) -> dict[ParkingClass, int]:
        hist = {c: 0 for c in ParkingClass}
        for obj in self.objects:
            hist[obj.cls] += 1
        return hist


@dataclass(frozen=True)
class Prediction:
    image_id: str
    cls: ParkingClass
    confidence: float
    bbox: tuple[float, float, float, float] | None = None
    obb: OrientedBox | None = None
    width_px: float | None = None

    def __post_init__(self):
        if (self.bbox is None) == (self.obb is None):
            raise ValueError("prediction needs exactly one of bbox or obb")

    @property
    def envelope(self) -> tuple[float, float, float, float]:
        if self.bbox is not None:
            return self.bbox
        xs = [c[0] for c in self.obb.corners()]
        ys = [c[1] for c in self.obb.corners()]
        return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)


@dataclass
class MatchResult:
    pairs: list[tuple[Prediction, GroundTruthObject, float]] = field(default_factory=list)
    unmatched_preds: list[Prediction] = field(default_factory=list)
    unmatched_truths: list[GroundTruthObject] = field(default_factory=list)


@dataclass(frozen=True)
class PRF:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    degenerate: frozenset[str]


@dataclass(frozen=True)
class ClassMetrics:
    per_class: dict[ParkingClass, PRF]
    micro: PRF


@dataclass(frozen=True)
class WidthStats:
    count: int
    excluded_zero_ref: int
    mean_px: float
    sd_px: float
    mean_pct: float
    sd_pct: float


# ---------------------------------------------------------------------------
# Loading


def _shoelace(poly) -> float:
    pts = list(poly)
    s = 0.0
    for (x1, y1), (x2, y2) in zip(pts, pts[1:] + pts[:1]):
        s += x1 * y2 - x2 * y1
    return s / 2.0


def _pairs_from_flat(flat) -> tuple[tuple[float, float], ...]:
    if len(flat) % 2 != 0 or len(flat) < 6:
        raise DatasetError(f"segmentation ring must hold >= 3 (x, y) pairs, got {len(flat)} numbers")
    return tuple((float(flat[i]), float(flat[i + 1])) for i in range(0, len(flat), 2))


def load_coco(path: str) -> CocoDataset:
    """Read COCO-style ground truth: images, polygon annotations, categories."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot parse {path}: {exc}") from exc

    known = {c.value for c in ParkingClass}
    categories = {}
    for cat in raw.get("categories", []):
        name = cat.get("name")
        if name not in known:
            raise DatasetError(f"unknown category {name!r} (expected one of {sorted(known)})")
        categories[cat["id"]] = ParkingClass(name)

    images = {}
    for img in raw.get("images", []):
        image_id = str(img["id"])
        images[image_id] = ImageInfo(
            image_id=image_id,
            file_name=img.get("file_name", ""),
            width=int(img.get("width", 0)),
            height=int(img.get("height", 0)),
        )

    objects = []
    for ann in raw.get("annotations", []):
        image_id = str(ann["image_id"])
        if image_id not in images:
            raise DatasetError(f"annotation {ann.get('id')} references missing image {image_id}")
        if ann.get("category_id") not in categories:
            raise DatasetError(f"annotation {ann.get('id')} has unknown category id {ann.get('category_id')}")
        seg = ann.get("segmentation")
        if seg:
            polygon = _pairs_from_flat(seg[0])
        elif ann.get("bbox"):
            x, y, w, h = ann["bbox"]
            polygon = ((x, y), (x + w, y), (x + w, y + h), (x, y + h))
        else:
            raise DatasetError(f"annotation {ann.get('id')} has neither segmentation nor bbox")
        if not ShapelyPolygon(polygon).is_valid:
            raise DatasetError(f"annotation {ann.get('id')} polygon is not simple")
        try:
            objects.append(GroundTruthObject(image_id=image_id, cls=categories[ann["category_id"]], polygon=polygon))
        except ValueError as exc:
            raise DatasetError(f"annotation {ann.get('id')}: {exc}") from exc

    return CocoDataset(images=images, objects=objects)


def load_predictions(path: str) -> list[Prediction]:
    """Read the newline-delimited JSON predictions interchange file."""
    preds = []
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            cls = ParkingClass(rec["class"])
            bbox = tuple(float(v) for v in rec["bbox"]) if "bbox" in rec else None
            obb = OrientedBox(*(float(v) for v in rec["obb"])) if "obb" in rec else None
            width = float(rec["width_px"]) if rec.get("width_px") is not None else None
            preds.append(
                Prediction(
                    image_id=str(rec["image_id"]),
                    cls=cls,
                    confidence=float(rec["confidence"]),
                    bbox=bbox,
                    obb=obb,
                    width_px=width,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return preds


def save_predictions(preds: list[Prediction], path: str) -> None:
    with open(path, "w") as f:
        for p in preds:
            rec: dict = {"image_id": p.image_id, "class": p.cls.value, "confidence": p.confidence}
            if p.bbox is not None:
                rec["bbox"] = list(p.bbox)
            else:
                o = p.obb
                rec["obb"] = [o.cx, o.cy, o.length, o.width, o.theta]
            if p.width_px is not None:
                rec["width_px"] = p.width_px
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# IoU


def _as_envelope(g) -> tuple[float, float, float, float]:
    if isinstance(g, OrientedBox):
        xs = [c[0] for c in g.corners()]
        ys = [c[1] for c in g.corners()]
        return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)
    if isinstance(g, GroundTruthObject):
        return g.envelope
    if isinstance(g, Prediction):
        return g.envelope
    seq = list(g)
    if len(seq) == 4 and all(isinstance(v, (int, float)) for v in seq):
        return tuple(float(v) for v in seq)
    xs = [p[0] for p in seq]
    ys = [p[1] for p in seq]
    return min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)


def _as_polygon(g) -> list[tuple[float, float]]:
    if isinstance(g, OrientedBox):
        return g.corners()
    if isinstance(g, GroundTruthObject):
        return list(g.polygon)
    if isinstance(g, Prediction):
        if g.obb is not None:
            return g.obb.corners()
        x, y, w, h = g.bbox
        return [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
    seq = list(g)
    if len(seq) == 4 and all(isinstance(v, (int, float)) for v in seq):
        x, y, w, h = (float(v) for v in seq)
        return [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
    return [(float(p[0]), float(p[1])) for p in seq]


def iou(a, b, mode: str = "envelope") -> float:
    """Intersection over union of two geometries.

    "envelope" reduces everything to axis-aligned envelopes; "exact"
    computes polygon-polygon overlap. Degenerate zero-area input gives 0.
    """
    if mode == "envelope":
        ax, ay, aw, ah = _as_envelope(a)
        bx, by, bw, bh = _as_envelope(b)
        if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
            return 0.0
        ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
        iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
        # min()/max() of coordinate sums can overshoot the true overlap by a
        # few ulps; the intersection can never exceed either area.
        inter = min(ix * iy, aw * ah, bw * bh)
        union = aw * ah + bw * bh - inter
        return inter / union if union > 0 else 0.0
    if mode == "exact":
        pa = ShapelyPolygon(_as_polygon(a))
        pb = ShapelyPolygon(_as_polygon(b))
        if pa.area <= 0 or pb.area <= 0 or not (pa.is_valid and pb.is_valid):
            return 0.0
        inter = pa.intersection(pb).area
        union = pa.area + pb.area - inter
        return inter / union if union > 0 else 0.0
    raise ValueError(f"unknown IoU mode {mode!r}")


# ---------------------------------------------------------------------------
# Hungarian assignment


def hungarian(cost: list[list[float]]) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment over an n x m matrix.

    Rectangular inputs are padded to square with a sentinel above every
    real entry; padded pairs are dropped from the result, so min(n, m)
    real pairs come back. Shortest-augmenting-path with potentials,
    scanning columns in ascending order for deterministic tie-breaking.
    """
    n = len(cost)
    m = len(cost[0]) if n else 0
    if n == 0 or m == 0:
        return []
    for row in cost:
        if len(row) != m:
            raise ValueError("cost matrix is ragged")
        for v in row:
            if not math.isfinite(v):
                raise ValueError("cost entries must be finite")

    k = max(n, m)
    sentinel = max(max(row) for row in cost) + 1.0
    a = [[cost[i][j] if i < n and j < m else sentinel for j in range(k)] for i in range(k)]

    INF = math.inf
    u = [0.0] * (k + 1)
    v = [0.0] * (k + 1)
    p = [0] * (k + 1)  # p[j] = row matched to column j (1-based; 0 = free)
    way = [0] * (k + 1)
    for i in range(1, k + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (k + 1)
        used = [False] * (k + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, k + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(k + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    return sorted((p[j] - 1, j - 1) for j in range(1, k + 1) if 0 < p[j] <= n and j <= m)


# ---------------------------------------------------------------------------
# Matching and metrics


def match_detections(
    preds: list[Prediction],
    truths: list[GroundTruthObject],
    iou_thresh: float = DEFAULT_MATCH_IOU,
    mode: str = "envelope",
) -> MatchResult:
    """Hungarian assignment on 1 - IoU; sub-threshold pairs dissolve to FP + FN."""
    result = MatchResult()
    if not preds or not truths:
        result.unmatched_preds = list(preds)
        result.unmatched_truths = list(truths)
        return result
    ious = [[iou(p, t, mode=mode) for t in truths] for p in preds]
    cost = [[1.0 - x for x in row] for row in ious]
    assignment = hungarian(cost)
    paired_p = set()
    paired_t = set()
    for pi, ti in assignment:
        x = ious[pi][ti]
        if x >= iou_thresh:
            result.pairs.append((preds[pi], truths[ti], x))
            paired_p.add(pi)
            paired_t.add(ti)
    result.unmatched_preds = [p for i, p in enumerate(preds) if i not in paired_p]
    result.unmatched_truths = [t for i, t in enumerate(truths) if i not in paired_t]
    return result


def _prf(tp: int, fp: int, fn: int) -> PRF:
    degenerate = set()
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.add("precision")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.add("recall")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        degenerate.add("f1")
    return PRF(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1, degenerate=frozenset(degenerate))


def metrics(matches: MatchResult | list[MatchResult]) -> ClassMetrics:
    """Per-class and micro P/R/F1; cross-class matches are FP + FN."""
    if isinstance(matches, MatchResult):
        matches = [matches]
    tp = {c: 0 for c in ParkingClass}
    fp = {c: 0 for c in ParkingClass}
    fn = {c: 0 for c in ParkingClass}
    for m in matches:
        for pred, truth, _ in m.pairs:
            if pred.cls is truth.cls:
                tp[pred.cls] += 1
            else:
                fp[pred.cls] += 1
                fn[truth.cls] += 1
        for pred in m.unmatched_preds:
            fp[pred.cls] += 1
        for truth in m.unmatched_truths:
            fn[truth.cls] += 1
    per_class = {c: _prf(tp[c], fp[c], fn[c]) for c in ParkingClass}
    micro = _prf(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    return ClassMetrics(per_class=per_class, micro=micro)


NONE_LABEL = "none"


def confusion_matrix(matches: MatchResult | list[MatchResult]) -> dict[str, dict[str, int]]:
    """Rows are truth classes plus none (FP row); columns prediction plus none."""
    if isinstance(matches, MatchResult):
        matches = [matches]
    labels = [c.value for c in ParkingClass] + [NONE_LABEL]
    cm = {r: {c: 0 for c in labels} for r in labels}
    for m in matches:
        for pred, truth, _ in m.pairs:
            cm[truth.cls.value][pred.cls.value] += 1
        for pred in m.unmatched_preds:
            cm[NONE_LABEL][pred.cls.value] += 1
        for truth in m.unmatched_truths:
            cm[truth.cls.value][NONE_LABEL] += 1
    return cm


def width_compare(
    pred_widths: list[float],
    ref_widths: list[float],
    classes: list[ParkingClass] | None = None,
) -> dict[str, WidthStats]:
    """Signed width differences (prediction - reference), per class and total.

    Percent differences are relative to the reference; zero-reference pairs
    are excluded from the statistics and counted.
    """
    if len(pred_widths) != len(ref_widths):
        raise ValueError("pred and ref width lists must align")
    if classes is not None and len(classes) != len(pred_widths):
        raise ValueError("classes must align with widths")

    def stats(idx: list[int]) -> WidthStats:
        kept = [i for i in idx if ref_widths[i] != 0.0]
        excluded = len(idx) - len(kept)
        if not kept:
            return WidthStats(0, excluded, 0.0, 0.0, 0.0, 0.0)
        diffs = np.array([pred_widths[i] - ref_widths[i] for i in kept])
        pcts = np.array([(pred_widths[i] - ref_widths[i]) / ref_widths[i] * 100.0 for i in kept])
        return WidthStats(
            count=len(kept),
            excluded_zero_ref=excluded,
            mean_px=float(diffs.mean()),
            sd_px=float(diffs.std(ddof=0)),
            mean_pct=float(pcts.mean()),
            sd_pct=float(pcts.std(ddof=0)),
        )

    out = {"total": stats(list(range(len(pred_widths))))}
    if classes is not None:
        for c in ParkingClass:
            idx = [i for i, cc in enumerate(classes) if cc is c]
            if idx:
                out[c.value] = stats(idx)
    return out


# ---------------------------------------------------------------------------
# Dataset construction utilities


@dataclass(frozen=True)
class SamplePlan:
    seed: int
    may_contain: dict[str, tuple[str, ...]]
    may_not_contain: dict[str, tuple[str, ...]]


def sample_pools(
    hint_confidences: dict[str, list[float]],
    image_regions: dict[str, str],
    quotas: dict[str, tuple[int, int]],
    conf_thresh: float = HINT_CONF_THRESHOLD,
    seed: int = 0,
) -> SamplePlan:
    """Stratified sampling of hint-positive / hint-negative images per region.

    An image lands in the may-contain pool iff any hint detection is
    strictly above the confidence threshold. ``quotas`` maps region to
    (may_contain_n, may_not_contain_n).
    """
    pools: dict[str, dict[bool, list[str]]] = {r: {True: [], False: []} for r in quotas}
    for image_id in sorted(image_regions):
        region = image_regions[image_id]
        if region not in pools:
            continue
        confs = hint_confidences.get(image_id, [])
        positive = any(c > conf_thresh for c in confs)
        pools[region][positive].append(image_id)

    rng = random.Random(seed)
    may, may_not = {}, {}
    for region in sorted(quotas):
        want_pos, want_neg = quotas[region]
        have_pos = pools[region][True]
        have_neg = pools[region][False]
        if want_pos > len(have_pos):
            raise ValueError(
                f"region {region!r}: may-contain quota {want_pos} exceeds pool of {len(have_pos)}"
            )
        if want_neg > len(have_neg):
            raise ValueError(
                f"region {region!r}: may-not-contain quota {want_neg} exceeds pool of {len(have_neg)}"
            )
        may[region] = tuple(rng.sample(have_pos, want_pos))
        may_not[region] = tuple(rng.sample(have_neg, want_neg))
    return SamplePlan(seed=seed, may_contain=may, may_not_contain=may_not)


@dataclass(frozen=True)
class CropLabel:
    cls: ParkingClass
    polygon: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class CropExport:
    image_id: str
    origin: tuple[int, int]
    center_cls: ParkingClass
    labels: tuple[CropLabel, ...]


def export_crops(
    dataset: CocoDataset,
    size: int = CROP_SIZE,
    image_size: int = SOURCE_IMAGE_SIZE,
) -> tuple[list[CropExport], int]:
    """Per-object crops centered on each object centroid, labels translated.

    Objects whose crop would overrun the source image edge are excluded and
    counted, mirroring the edge rule for test splits.
    """
    crops = []
    excluded = 0
    by_image = dataset.by_image()
    for obj in dataset.objects:
        cx, cy = obj.centroid
        x0 = int(round(cx)) - size // 2
        y0 = int(round(cy)) - size // 2
        if x0 < 0 or y0 < 0 or x0 + size > image_size or y0 + size > image_size:
            excluded += 1
            continue
        labels = []
        for other in by_image[obj.image_id]:
            ox, oy, ow, oh = other.envelope
            if ox + ow <= x0 or ox >= x0 + size or oy + oh <= y0 or oy >= y0 + size:
                continue
            labels.append(
                CropLabel(
                    cls=other.cls,
                    polygon=tuple((px - x0, py - y0) for px, py in other.polygon),
                )
            )
        crops.append(CropExport(image_id=obj.image_id, origin=(x0, y0), center_cls=obj.cls, labels=tuple(labels)))
    return crops, excluded


def truth_width_px(obj: GroundTruthObject) -> float:
    """Short side of the polygon's minimum-area enclosing rectangle."""
    rect = ShapelyPolygon(obj.polygon).minimum_rotated_rectangle
    coords = list(rect.exterior.coords)[:4]
    e1 = math.dist(coords[0], coords[1])
    e2 = math.dist(coords[1], coords[2])
    return min(e1, e2)


# ---------------------------------------------------------------------------
# Report rendering


def metrics_to_dict(cm: ClassMetrics) -> dict:
    def prf_dict(p: PRF) -> dict:
        return {
            "tp": p.tp,
            "fp": p.fp,
            "fn": p.fn,
            "precision": p.precision,
            "recall": p.recall,
            "f1": p.f1,
            "degenerate": sorted(p.degenerate),
        }

    return {
        "per_class": {c.value: prf_dict(p) for c, p in cm.per_class.items()},
        "micro": prf_dict(cm.micro),
    }


def render_metrics_table(cm: ClassMetrics) -> str:
    rows = [f"{'class':<14} {'TP':>6} {'FP':>6} {'FN':>6} {'P':>7} {'R':>7} {'F1':>7}"]
    for c in ParkingClass:
        p = cm.per_class[c]
        rows.append(
            f"{c.value:<14} {p.tp:>6} {p.fp:>6} {p.fn:>6} {p.precision:>7.3f} {p.recall:>7.3f} {p.f1:>7.3f}"
        )
    m = cm.micro
    rows.append(
        f"{'micro':<14} {m.tp:>6} {m.fp:>6} {m.fn:>6} {m.precision:>7.3f} {m.recall:>7.3f} {m.f1:>7.3f}"
    )
    return "\n".join(rows)


def render_width_table(stats: dict[str, WidthStats]) -> str:
    rows = [f"{'class':<14} {'n':>6} {'mean px':>9} {'sd px':>9} {'mean %':>9} {'sd %':>9}"]
    for key in sorted(k for k in stats if k != "total") + ["total"]:
        s = stats[key]
        rows.append(
            f"{key:<14} {s.count:>6} {s.mean_px:>9.2f} {s.sd_px:>9.2f} {s.mean_pct:>9.2f} {s.sd_pct:>9.2f}"
        )
    return "\n".join(rows)
