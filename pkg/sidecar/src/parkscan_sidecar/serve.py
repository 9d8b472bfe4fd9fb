"""Serve loop: stdio line protocol or one-request-per-POST HTTP.

Per-request failures are turned into ``{"id", "error"}`` replies; only a
broken transport or an unreadable configuration terminates the process.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from parkscan_sidecar.protocol import (
    HANDSHAKE_REPLY,
    RequestError,
    check_records,
    encode,
    is_handshake,
    parse_request,
)
from parkscan_sidecar.models import ModelError
from parkscan_sidecar.stub import StubError, stub_model


@dataclass(frozen=True)
class SidecarConfig:
    stub_script: str | None = None
    locator_weights: str | None = None
    obb_weights: str | None = None
    device: str | None = None
    conf_floor: float = 0.25
    transport: str = "stdio"

    def __post_init__(self):
        if self.stub_script is None and self.locator_weights is None and self.obb_weights is None:
            raise ValueError("configure --stub or at least one weights path")
        if not 0.0 <= self.conf_floor <= 1.0:
            raise ValueError(f"conf_floor must be in [0, 1], got {self.conf_floor}")
        if self.transport != "stdio" and not self.transport.startswith("http:"):
            raise ValueError(f"transport must be 'stdio' or 'http:<port>', got {self.transport!r}")


def build_model(config: SidecarConfig):
    if config.stub_script is not None:
        return stub_model(config.stub_script)
    from parkscan_sidecar.models import WeightsModel

    return WeightsModel(
        locator_weights=config.locator_weights,
        obb_weights=config.obb_weights,
        device=config.device,
        conf_floor=config.conf_floor,
    )


def handle(model, raw) -> dict:
    """One message in, one reply object out; never raises."""
    if is_handshake(raw):
        return HANDSHAKE_REPLY
    rid = raw.get("id") if isinstance(raw, dict) else None
    if not isinstance(rid, str):
        rid = None
    try:
        rid, task, image = parse_request(raw)
        return {"id": rid, "detections": check_records(task, model.infer(task, image))}
    except RequestError as exc:
        return {"id": rid, "error": str(exc)}
    except Exception as exc:  # a model bug must not kill the connection
        return {"id": rid, "error": f"internal: {type(exc).__name__}: {exc}"}


def serve_stdio(model) -> None:
    out = sys.stdout
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            reply = {"id": None, "error": f"request is not JSON: {exc}"}
        else:
            reply = handle(model, raw)
        out.write(encode(reply) + "\n")
        out.flush()


def serve_http(model, port: int) -> None:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            try:
                raw = json.loads(body)
            except json.JSONDecodeError as exc:
                reply = {"id": None, "error": f"request is not JSON: {exc}"}
            else:
                reply = handle(model, raw)
            data = encode(reply).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", port), Handler)
    print(f"listening on http://127.0.0.1:{server.server_address[1]}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def serve(config: SidecarConfig) -> None:
    model = build_model(config)
    if config.transport == "stdio":
        serve_stdio(model)
    else:
        serve_http(model, int(config.transport.split(":", 1)[1]))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="parkscan-sidecar", description=__doc__.splitlines()[0])
    ap.add_argument("--stub", metavar="SCRIPT", help="scripted model, no weights needed")
    ap.add_argument("--locator-weights")
    ap.add_argument("--obb-weights")
    ap.add_argument("--device")
    ap.add_argument("--conf-floor", type=float, default=0.25)
    ap.add_argument("--transport", default="stdio", help="'stdio' or 'http:<port>' (0 picks a free port)")
    args = ap.parse_args(argv)
    try:
        config = SidecarConfig(
            stub_script=args.stub,
            locator_weights=args.locator_weights,
            obb_weights=args.obb_weights,
            device=args.device,
            conf_floor=args.conf_floor,
            transport=args.transport,
        )
        serve(config)
    except (ValueError, StubError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
