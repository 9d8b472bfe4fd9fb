"""Weight-free scripted model for protocol and integration testing.

The script is a JSON file mapping SHA-256 digests of the raw PNG bytes
to canned detection lists, one section per task:

    {
      "locate": {
        "<sha256 hex>": [{"class": "...", "bbox": [x, y, w, h], "confidence": 0.9}],
        "<sha256 hex>": {"error": "scripted failure"}
      },
      "orient": {
        "<sha256 hex>": [{"kind": "space", "obb": [cx, cy, l, w, theta], "confidence": 0.9}]
      }
    }

Unknown digests yield an empty detection list; an ``{"error": ...}``
value makes the request fail with that message, which is how the
error-reply path gets exercised without a broken model.
"""

import hashlib
import json

from parkscan_sidecar.protocol import RequestError, TASKS, check_records


class StubError(Exception):
    """The script file itself is unusable."""


class StubModel:
    def __init__(self, script: dict):
        self.script = script

    def infer(self, task: str, image: bytes) -> list[dict]:
        key = hashlib.sha256(image).hexdigest()
        entry = self.script[task].get(key)
        if entry is None:
            return []
        if isinstance(entry, dict):
            raise RequestError(str(entry["error"]))
        return entry


def stub_model(path: str) -> StubModel:
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise StubError(f"cannot read stub script {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StubError(f"stub script {path} is not JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise StubError("stub script must be an object with task sections")
    unknown = set(raw) - set(TASKS)
    if unknown:
        raise StubError(f"unknown task sections {sorted(unknown)}")
    script: dict = {task: {} for task in TASKS}
    for task in TASKS:
        section = raw.get(task, {})
        if not isinstance(section, dict):
            raise StubError(f"section {task!r} must map image digests to entries")
        for key, entry in section.items():
            if isinstance(entry, dict):
                if "error" not in entry:
                    raise StubError(f"{task}/{key}: object entries need an 'error' field")
                script[task][key] = {"error": str(entry["error"])}
                continue
            try:
                script[task][key] = check_records(task, entry)
            except RequestError as exc:
                raise StubError(f"{task}/{key}: {exc}") from exc
    return StubModel(script)
