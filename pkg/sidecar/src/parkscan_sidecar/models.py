"""Trained-model wrapper, kept behind the wire protocol.

Everything framework-specific stays in this module and imports lazily,
so the sidecar runs in stub mode on a bare Python install.  Install the
``models`` extra to use real checkpoints.
"""

import io
import math

from parkscan_sidecar.protocol import CLASS_NAMES, RequestError


class ModelError(Exception):
    """Weights failed to load or are incompatible with the protocol."""


def _load_yolo(weights: str, device: str | None):
    try:
        from ultralytics import YOLO
    except ImportError as exc:
        raise ModelError(
            "ultralytics is not installed; use --stub or install the 'models' extra"
        ) from exc
    model = YOLO(weights)
    if device:
        model.to(device)
    return model


def _check_names(model, weights: str) -> dict:
    names = getattr(model, "names", None) or {}
    bad = set(names.values()) - set(CLASS_NAMES)
    if bad:
        # Checkpoints exporting raw indices or renamed labels cannot be
        # mapped silently; the label file has to match the protocol set.
        raise ModelError(f"{weights}: classes {sorted(bad)} are not in the protocol vocabulary")
    return dict(names)


def _decode(image: bytes):
    try:
        from PIL import Image
    except ImportError as exc:
        raise ModelError("pillow is required for model inference") from exc
    try:
        return Image.open(io.BytesIO(image)).convert("RGB")
    except OSError as exc:
        raise RequestError(f"image does not decode: {exc}") from exc


class WeightsModel:
    """Locator and/or oriented-box checkpoints behind ``infer``."""

    def __init__(
        self,
        locator_weights: str | None = None,
        obb_weights: str | None = None,
        device: str | None = None,
        conf_floor: float = 0.25,
    ):
        if locator_weights is None and obb_weights is None:
            raise ModelError("configure at least one of locator or obb weights")
        self.conf_floor = conf_floor
        self.locator = self.obb = None
        self.locator_names: dict = {}
        if locator_weights is not None:
            self.locator = _load_yolo(locator_weights, device)
            self.locator_names = _check_names(self.locator, locator_weights)
        if obb_weights is not None:
            self.obb = _load_yolo(obb_weights, device)

    def infer(self, task: str, image: bytes) -> list[dict]:
        if task == "locate":
            return self._locate(image)
        return self._orient(image)

    def _locate(self, image: bytes) -> list[dict]:
        if self.locator is None:
            raise RequestError("no locator weights configured")
        result = self.locator.predict(_decode(image), conf=self.conf_floor, verbose=False)[0]
        out = []
        for box in result.boxes:
            name = self.locator_names.get(int(box.cls.item()), "")
            if name == "access_aisle" or not name:
                continue
            x0, y0, x1, y1 = (float(v) for v in box.xyxy[0].tolist())
            out.append(
                {
                    "class": name,
                    "bbox": [x0, y0, x1 - x0, y1 - y0],
                    "confidence": float(box.conf.item()),
                }
            )
        return out

    def _orient(self, image: bytes) -> list[dict]:
        if self.obb is None:
            raise RequestError("no obb weights configured")
        result = self.obb.predict(_decode(image), conf=self.conf_floor, verbose=False)[0]
        if result.obb is None:
            return []
        names = getattr(self.obb, "names", {}) or {}
        out = []
        for det in result.obb:
            cx, cy, w, h, theta = (float(v) for v in det.xywhr[0].tolist())
            length, width = (w, h) if w >= h else (h, w)
            if w < h:
                theta += math.pi / 2.0
            theta %= math.pi
            kind = "aisle" if "aisle" in str(names.get(int(det.cls.item()), "")) else "space"
            out.append(
                {
                    "kind": kind,
                    "obb": [cx, cy, length, width, theta],
                    "confidence": float(det.conf.item()),
                }
            )
        return out
