"""Detection backend contract, scriptable scenario backend, and sidecar client.

A backend exposes two tasks: ``locate`` (axis-aligned boxes with parking
classes over a 512 px window) and ``orient`` (oriented space/aisle boxes
over a 100 px crop). Confidence thresholding and the access-aisle class
filter are applied here, in backend-agnostic code, so every backend is
filtered identically. Backends receive an optional opaque ``key`` naming
the window; the scenario backend replays scripted detections by that key,
while real backends ignore it.
"""

from __future__ import annotations

import base64
import itertools
import json
import math
import subprocess
import threading
import uuid
import zlib
from dataclasses import dataclass, replace
from enum import Enum
from typing import Protocol

import numpy as np
import requests

from .imagery import RasterImage

DEFAULT_CONFIDENCE_THRESHOLD = 0.3
LOCATE_WINDOW_PX = 512
ORIENT_CROP_PX = 100
DEFAULT_SIDECAR_TIMEOUT_S = 30.0


class ParkingClass(str, Enum):
    ACCESS_AISLE = "access_aisle"
    CURBSIDE = "curbside"
    DP_NO_AISLE = "dp_no_aisle"
    DP_ONE_AISLE = "dp_one_aisle"
    DP_TWO_AISLE = "dp_two_aisle"
    ONE_AISLE = "one_aisle"
    TWO_AISLE = "two_aisle"


LOCATOR_CLASSES = frozenset(c for c in ParkingClass if c is not ParkingClass.ACCESS_AISLE)


@dataclass(frozen=True)
class Detection:
    """Axis-aligned detection in window pixels: bbox is (x, y, w, h)."""

    cls: ParkingClass
    bbox: tuple[float, float, float, float]
    confidence: float

    def __post_init__(self):
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise ValueError(f"bbox must have positive extent, got w={w} h={h}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0


@dataclass(frozen=True)
class OrientedBox:
    """Oriented rectangle: center, long-axis length, short-axis width, and
    the long axis direction theta normalized to [0, pi)."""

    cx: float
    cy: float
    length: float
    width: float
    theta: float

    def __post_init__(self):
        if not self.width > 0 or self.length < self.width:
            raise ValueError(f"need length >= width > 0, got {self.length} x {self.width}")
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")
        t = self.theta % math.pi
        if t >= math.pi:
            # Rounding can push e.g. (-1e-103 % pi) to exactly pi.
            t = 0.0
        if t != self.theta:
            object.__setattr__(self, "theta", t)

    @classmethod
    def from_axes(cls, cx, cy, axis_a, axis_b, theta) -> "OrientedBox":
        """Build from two axis extents in any order; swapping rotates theta
        by pi/2 so the long axis always carries the orientation."""
        if axis_a >= axis_b:
            return cls(cx, cy, axis_a, axis_b, theta)
        return cls(cx, cy, axis_b, axis_a, theta + math.pi / 2.0)

    @property
    def u(self) -> tuple[float, float]:
        """Unit vector along the long axis."""
        return math.cos(self.theta), math.sin(self.theta)

    @property
    def v(self) -> tuple[float, float]:
        """Unit vector along the short axis (u rotated +90 degrees)."""
        return -math.sin(self.theta), math.cos(self.theta)

    def corners(self) -> list[tuple[float, float]]:
        ux, uy = self.u
        vx, vy = self.v
        hl, hw = self.length / 2.0, self.width / 2.0
        return [
            (self.cx + sx * hl * ux + sy * hw * vx, self.cy + sx * hl * uy + sy * hw * vy)
            for sx, sy in ((1, 1), (1, -1), (-1, -1), (-1, 1))
        ]

    def contains(self, x: float, y: float) -> bool:
        dx, dy = x - self.cx, y - self.cy
        ux, uy = self.u
        vx, vy = self.v
        return abs(dx * ux + dy * uy) <= self.length / 2.0 and abs(dx * vx + dy * vy) <= self.width / 2.0


@dataclass(frozen=True)
class OBBDetection:
    """Oriented detection: kind is "space" or "aisle"."""

    kind: str
    obb: OrientedBox
    confidence: float

    def __post_init__(self):
        if self.kind not in ("space", "aisle"):
            raise ValueError(f"kind must be space or aisle, got {self.kind!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


class DetectorBackend(Protocol):
    def locate(self, img: RasterImage, key: str | None = None) -> list[Detection]: ...

    def orient(self, img: RasterImage, key: str | None = None) -> list[OBBDetection]: ...


def _require_square(img: RasterImage, side: int, task: str) -> None:
    if img.width != side or img.height != side:
        raise ValueError(f"{task} expects a {side}x{side} image, got {img.width}x{img.height}")


def locate(
    backend: DetectorBackend,
    img: RasterImage,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    key: str | None = None,
) -> list[Detection]:
    """Run the locator task and filter: confidence >= threshold, no access_aisle."""
    _require_square(img, LOCATE_WINDOW_PX, "locate")
    raw = backend.locate(img, key=key)
    return [d for d in raw if d.confidence >= threshold and d.cls in LOCATOR_CLASSES]


def orient(
    backend: DetectorBackend,
    img: RasterImage,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    key: str | None = None,
) -> list[OBBDetection]:
    """Run the oriented-box task and filter by confidence."""
    _require_square(img, ORIENT_CROP_PX, "orient")
    return [d for d in backend.orient(img, key=key) if d.confidence >= threshold]


# ---------------------------------------------------------------------------
# Scenario backend


class ScenarioError(Exception):
    """Malformed scenario file or record."""


@dataclass(frozen=True)
class JitterSpec:
    sigma_px: float
    seed: int


def _parse_locate_record(rec: dict) -> Detection:
    try:
        cls = ParkingClass(rec["class"])
        x, y, w, h = (float(v) for v in rec["bbox"])
        conf = float(rec["confidence"])
        return Detection(cls=cls, bbox=(x, y, w, h), confidence=conf)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad locate record {rec!r}: {exc}") from exc


def _parse_orient_record(rec: dict) -> OBBDetection:
    try:
        cx, cy, length, width, theta = (float(v) for v in rec["obb"])
        return OBBDetection(
            kind=rec["kind"],
            obb=OrientedBox(cx, cy, length, width, theta),
            confidence=float(rec["confidence"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad orient record {rec!r}: {exc}") from exc


class ScenarioBackend:
    """Replays scripted detections keyed by window identity.

    The scenario is a JSON object with optional "locate" and "orient"
    sections, each mapping a window key to a list of records in the wire
    field schema. Keys the pipeline uses: locate windows are named by their
    top-left tile as "z/x/y"; orient crops by their snapped global center
    pixel as "z/x,y". Unknown keys replay as no detections. Optional
    Gaussian jitter perturbs box centers; the noise stream is derived from
    (seed, task, key, per-key call count) so output is independent of call
    interleaving across windows.
    """

    def __init__(self, scenario: dict, jitter: JitterSpec | None = None):
        if not isinstance(scenario, dict):
            raise ScenarioError("scenario must be a JSON object")
        unknown = set(scenario) - {"locate", "orient"}
        if unknown:
            raise ScenarioError(f"unknown scenario sections: {sorted(unknown)}")
        self._locate: dict[str, list[Detection]] = {}
        self._orient: dict[str, list[OBBDetection]] = {}
        for key, recs in (scenario.get("locate") or {}).items():
            self._locate[key] = [_parse_locate_record(r) for r in recs]
        for key, recs in (scenario.get("orient") or {}).items():
            self._orient[key] = [_parse_orient_record(r) for r in recs]
        self._jitter = jitter
        self._calls: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str, jitter: JitterSpec | None = None) -> "ScenarioBackend":
        try:
            with open(path) as f:
                scenario = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot load scenario {path}: {exc}") from exc
        return cls(scenario, jitter=jitter)

    def _rng(self, task: str, key: str) -> np.random.Generator:
        with self._lock:
            n = self._calls.get((task, key), 0)
            self._calls[(task, key)] = n + 1
        key_digest = zlib.crc32(f"{task}:{key}".encode())
        return np.random.default_rng([self._jitter.seed, key_digest, n])

    def locate(self, img: RasterImage, key: str | None = None) -> list[Detection]:
        dets = self._locate.get(key, []) if key is not None else []
        if self._jitter is None or not dets:
            return list(dets)
        rng = self._rng("locate", key)
        out = []
        for d in dets:
            dx, dy = rng.normal(0.0, self._jitter.sigma_px, 2)
            x, y, w, h = d.bbox
            out.append(replace(d, bbox=(x + dx, y + dy, w, h)))
        return out

    def orient(self, img: RasterImage, key: str | None = None) -> list[OBBDetection]:
        dets = self._orient.get(key, []) if key is not None else []
        if self._jitter is None or not dets:
            return list(dets)
        rng = self._rng("orient", key)
        out = []
        for d in dets:
            dx, dy = rng.normal(0.0, self._jitter.sigma_px, 2)
            out.append(replace(d, obb=replace(d.obb, cx=d.obb.cx + dx, cy=d.obb.cy + dy)))
        return out


# ---------------------------------------------------------------------------
# Sidecar client


class SidecarError(Exception):
    """Base for sidecar transport failures."""


class HandshakeError(SidecarError):
    pass


class SidecarTimeout(SidecarError):
    def __init__(self, request_id: str, timeout_s: float):
        super().__init__(f"request {request_id} timed out after {timeout_s}s")
        self.request_id = request_id


class ProtocolError(SidecarError):
    def __init__(self, request_id: str | None, detail: str):
        super().__init__(f"protocol violation on request {request_id}: {detail}")
        self.request_id = request_id


class SidecarRequestError(SidecarError):
    """The sidecar reported a per-request error reply."""

    def __init__(self, request_id: str, detail: str):
        super().__init__(f"sidecar error on request {request_id}: {detail}")
        self.request_id = request_id


class _Pending:
    __slots__ = ("event", "reply")

    def __init__(self):
        self.event = threading.Event()
        self.reply = None


class SidecarClient:
    """Backend speaking the sidecar wire protocol.

    Exactly one of ``command`` (argv for a subprocess exchanging
    newline-delimited JSON over stdio) or ``url`` (HTTP endpoint accepting
    one POSTed request per call) must be given. The client is thread-safe;
    stdio requests are pipelined and matched to replies by id.
    """

    def __init__(
        self,
        command: list[str] | None = None,
        url: str | None = None,
        timeout_s: float = DEFAULT_SIDECAR_TIMEOUT_S,
    ):
        if (command is None) == (url is None):
            raise ValueError("give exactly one of command or url")
        self._timeout = timeout_s
        self._url = url
        self._proc = None
        self._reader = None
        self._pending: dict[str, _Pending] = {}
        self._lock = threading.Lock()
        self._closed = False
        self._id_prefix = uuid.uuid4().hex[:8]
        self._id_counter = itertools.count()
        self.tasks: tuple[str, ...] = ()
        if command is not None:
            self._start_subprocess(command)
        else:
            self._handshake_http()

    # -- transport: subprocess stdio

    def _start_subprocess(self, command: list[str]) -> None:
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise HandshakeError(f"cannot start sidecar {command!r}: {exc}") from exc
        try:
            self._write_line({"hello": 1})
            line = self._proc.stdout.readline()
            if not line:
                raise HandshakeError("sidecar closed stdout before handshake reply")
            self._accept_handshake(line)
        except SidecarError:
            self.close()
            raise
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _accept_handshake(self, line: str) -> None:
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise HandshakeError(f"handshake reply is not JSON: {exc}") from exc
        if not isinstance(msg, dict) or msg.get("hello") != 1 or "tasks" not in msg:
            raise HandshakeError(f"bad handshake reply: {msg!r}")
        self.tasks = tuple(msg["tasks"])

    def _write_line(self, msg: dict) -> None:
        data = json.dumps(msg, separators=(",", ":"))
        with self._lock:
            if self._closed or self._proc.stdin is None:
                raise SidecarError("sidecar connection closed")
            try:
                self._proc.stdin.write(data + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise SidecarError(f"sidecar pipe broken: {exc}") from exc

    def _read_loop(self) -> None:
        stream = self._proc.stdout
        for line in stream:
            try:
                msg = json.loads(line)
            except json.JSONDecodeError:
                continue
            rid = msg.get("id") if isinstance(msg, dict) else None
            with self._lock:
                slot = self._pending.get(rid)
            if slot is not None:
                slot.reply = msg
                slot.event.set()
        # EOF: fail everything still in flight.
        with self._lock:
            for slot in self._pending.values():
                slot.event.set()

    def _request_stdio(self, req: dict) -> dict:
        rid = req["id"]
        slot = _Pending()
        with self._lock:
            self._pending[rid] = slot
        try:
            self._write_line(req)
            if not slot.event.wait(self._timeout):
                raise SidecarTimeout(rid, self._timeout)
            if slot.reply is None:
                raise SidecarError(f"sidecar exited before replying to {rid}")
            return slot.reply
        finally:
            with self._lock:
                self._pending.pop(rid, None)

    # -- transport: HTTP

    def _handshake_http(self) -> None:
        try:
            resp = requests.post(self._url, json={"hello": 1}, timeout=self._timeout)
            resp.raise_for_status()
            msg = resp.json()
        except (requests.RequestException, ValueError) as exc:
            raise HandshakeError(f"handshake with {self._url} failed: {exc}") from exc
        if not isinstance(msg, dict) or msg.get("hello") != 1 or "tasks" not in msg:
            raise HandshakeError(f"bad handshake reply: {msg!r}")
        self.tasks = tuple(msg["tasks"])

    def _request_http(self, req: dict) -> dict:
        rid = req["id"]
        try:
            resp = requests.post(self._url, json=req, timeout=self._timeout)
        except requests.Timeout as exc:
            raise SidecarTimeout(rid, self._timeout) from exc
        except requests.RequestException as exc:
            raise SidecarError(f"request {rid} transport failure: {exc}") from exc
        try:
            return resp.json()
        except ValueError as exc:
            raise ProtocolError(rid, f"non-JSON reply: {exc}") from exc

    # -- request plumbing

    def _request(self, task: str, img: RasterImage) -> dict:
        if task not in self.tasks:
            raise ProtocolError(None, f"sidecar does not offer task {task!r} (offers {self.tasks})")
        req = {
            "id": f"{self._id_prefix}-{next(self._id_counter)}",
            "task": task,
            "image_png_base64": base64.b64encode(img.to_png_bytes()).decode("ascii"),
        }
        reply = self._request_http(req) if self._url else self._request_stdio(req)
        rid = req["id"]
        if not isinstance(reply, dict):
            raise ProtocolError(rid, f"reply is not an object: {reply!r}")
        if reply.get("id") != rid:
            raise ProtocolError(rid, f"reply id {reply.get('id')!r} does not match")
        if "error" in reply:
            raise SidecarRequestError(rid, str(reply["error"]))
        if not isinstance(reply.get("detections"), list):
            raise ProtocolError(rid, "reply missing detections list")
        return reply

    def locate(self, img: RasterImage, key: str | None = None) -> list[Detection]:
        reply = self._request("locate", img)
        out = []
        for rec in reply["detections"]:
            try:
                out.append(_parse_locate_record(rec))
            except ScenarioError as exc:
                raise ProtocolError(reply["id"], str(exc)) from exc
        return out

    def orient(self, img: RasterImage, key: str | None = None) -> list[OBBDetection]:
        reply = self._request("orient", img)
        out = []
        for rec in reply["detections"]:
            try:
                out.append(_parse_orient_record(rec))
            except ScenarioError as exc:
                raise ProtocolError(reply["id"], str(exc)) from exc
        return out

    def close(self) -> None:
        with self._lock:
            self._closed = True
        if self._proc is not None:
            try:
                if self._proc.stdin:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()

    def __enter__(self) -> "SidecarClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
