"""Wire protocol constants and message validation.

One JSON object per line (stdio) or per POST body (HTTP).  The client
opens with ``{"hello": 1}`` and gets the fixed handshake reply; every
request carries a string id that the reply echoes, and failures come
back as ``{"id": ..., "error": ...}`` instead of killing the process.
"""

import base64
import binascii
import json

TASKS = ("locate", "orient")
HANDSHAKE_REPLY = {"hello": 1, "tasks": list(TASKS)}

# Class vocabulary of the locator, fixed by the wire contract.  The
# aisle label is carried by "orient" results only, so "locate" replies
# must never use it.
CLASS_NAMES = (
    "access_aisle",
    "curbside",
    "dp_no_aisle",
    "dp_one_aisle",
    "dp_two_aisle",
    "one_aisle",
    "two_aisle",
)
LOCATE_CLASSES = tuple(n for n in CLASS_NAMES if n != "access_aisle")
OBB_KINDS = ("space", "aisle")


class RequestError(Exception):
    """A single request is unusable; the connection itself is fine."""


def encode(msg: dict) -> str:
    return json.dumps(msg, separators=(",", ":"))


def is_handshake(msg) -> bool:
    return isinstance(msg, dict) and msg.get("hello") == 1 and "id" not in msg


def parse_request(msg) -> tuple[str, str, bytes]:
    """Validate a request object into (id, task, image bytes)."""
    if not isinstance(msg, dict):
        raise RequestError(f"request must be an object, got {type(msg).__name__}")
    rid = msg.get("id")
    if not isinstance(rid, str) or not rid:
        raise RequestError("request id must be a non-empty string")
    task = msg.get("task")
    if task not in TASKS:
        raise RequestError(f"unknown task {task!r}")
    b64 = msg.get("image_png_base64")
    if not isinstance(b64, str):
        raise RequestError("image_png_base64 must be a string")
    try:
        image = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise RequestError(f"image_png_base64 does not decode: {exc}") from exc
    return rid, task, image


def check_locate_record(rec) -> dict:
    if not isinstance(rec, dict):
        raise RequestError("locate record must be an object")
    if rec.get("class") not in LOCATE_CLASSES:
        raise RequestError(f"locate class {rec.get('class')!r} not allowed")
    bbox = rec.get("bbox")
    if not (isinstance(bbox, list) and len(bbox) == 4 and all(isinstance(v, (int, float)) for v in bbox)):
        raise RequestError("locate bbox must be [x, y, w, h]")
    conf = rec.get("confidence")
    if not (isinstance(conf, (int, float)) and 0.0 <= conf <= 1.0):
        raise RequestError("confidence must be in [0, 1]")
    return {"class": rec["class"], "bbox": list(bbox), "confidence": conf}


def check_orient_record(rec) -> dict:
    if not isinstance(rec, dict):
        raise RequestError("orient record must be an object")
    if rec.get("kind") not in OBB_KINDS:
        raise RequestError(f"orient kind {rec.get('kind')!r} not allowed")
    obb = rec.get("obb")
    if not (isinstance(obb, list) and len(obb) == 5 and all(isinstance(v, (int, float)) for v in obb)):
        raise RequestError("obb must be [cx, cy, length, width, theta]")
    if not obb[3] > 0 or obb[2] < obb[3]:
        raise RequestError(f"obb needs length >= width > 0, got {obb[2]} x {obb[3]}")
    conf = rec.get("confidence")
    if not (isinstance(conf, (int, float)) and 0.0 <= conf <= 1.0):
        raise RequestError("confidence must be in [0, 1]")
    return {"kind": rec["kind"], "obb": list(obb), "confidence": conf}


def check_records(task: str, records) -> list[dict]:
    if not isinstance(records, list):
        raise RequestError("detections must be a list")
    check = check_locate_record if task == "locate" else check_orient_record
    return [check(r) for r in records]
