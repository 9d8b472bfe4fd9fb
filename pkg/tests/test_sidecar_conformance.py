"""Protocol conformance for the sidecar package, driven over the wire.

The sidecar under test is the separate package in ``sidecar/``, launched
as a real subprocess in stub-model mode.  Nothing here imports its
internals: raw-protocol tests speak newline-delimited JSON directly, and
the client-level tests go through ``SidecarClient`` the same way the
pipeline does.
"""

import base64
import hashlib
import json
import os
import select
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from parkscan.detector import (
    OBBDetection,
    ParkingClass,
    SidecarClient,
    SidecarRequestError,
)
from parkscan.imagery import RasterImage

SIDECAR_SRC = Path(__file__).parent.parent / "sidecar" / "src"

HANDSHAKE_LINE = '{"hello":1,"tasks":["locate","orient"]}'

PNG_512 = RasterImage.blank(512).to_png_bytes()
PNG_100 = RasterImage.blank(100).to_png_bytes()


def marked_image(size, value):
    pixels = np.zeros((size, size, 3), dtype=np.uint8)
    pixels[0, 0] = value
    return RasterImage(pixels)


PNG_512_ERROR = marked_image(512, 1).to_png_bytes()
PNG_512_UNKNOWN = marked_image(512, 2).to_png_bytes()

SCRIPT = {
    "locate": {
        hashlib.sha256(PNG_512).hexdigest(): [
            {"class": "dp_one_aisle", "bbox": [10.0, 20.0, 30.0, 40.0], "confidence": 0.9}
        ],
        hashlib.sha256(PNG_512_ERROR).hexdigest(): {"error": "scripted failure"},
    },
    "orient": {
        hashlib.sha256(PNG_100).hexdigest(): [
            {"kind": "space", "obb": [50.0, 50.0, 55.0, 30.0, 0.3], "confidence": 0.95},
            {"kind": "aisle", "obb": [50.0, 72.0, 55.0, 14.0, 0.3], "confidence": 0.85},
        ]
    },
}


def sidecar_env():
    env = dict(os.environ)
    extra = str(SIDECAR_SRC)
    env["PYTHONPATH"] = extra + os.pathsep + env["PYTHONPATH"] if env.get("PYTHONPATH") else extra
    return env


@pytest.fixture(scope="module")
def script_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("sidecar") / "script.json"
    path.write_text(json.dumps(SCRIPT))
    return path


def sidecar_command(script_path, *extra):
    return [sys.executable, "-m", "parkscan_sidecar", "--stub", str(script_path), *extra]


def read_line(proc, stream=None, timeout=10.0):
    stream = proc.stdout if stream is None else stream
    deadline = time.monotonic() + timeout
    while True:
        remaining = deadline - time.monotonic()
        assert remaining > 0, "timed out waiting for a sidecar line"
        ready, _, _ = select.select([stream], [], [], remaining)
        if ready:
            line = stream.readline()
            assert line, "sidecar closed the stream"
            return line.rstrip("\n")


def request_line(rid, task, png):
    return json.dumps(
        {"id": rid, "task": task, "image_png_base64": base64.b64encode(png).decode("ascii")}
    )


@pytest.fixture
def proc(script_path):
    p = subprocess.Popen(
        sidecar_command(script_path),
        stdin=subprocess.PIPE,
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        env=sidecar_env(),
    )
    try:
        yield p
    finally:
        p.terminate()
        p.wait(timeout=5)


class TestRawProtocol:
    def shake(self, proc):
        proc.stdin.write('{"hello": 1}\n')
        proc.stdin.flush()
        return read_line(proc)

    def test_handshake_constant_bytes(self, proc):
        assert self.shake(proc) == HANDSHAKE_LINE

    def test_id_echo_over_100_pipelined_requests(self, proc):
        self.shake(proc)
        known = hashlib.sha256(PNG_512).hexdigest()
        sent = {}
        for i in range(100):
            rid = f"req-{i:03d}"
            png = PNG_512 if i % 3 else PNG_512_UNKNOWN
            sent[rid] = png
            proc.stdin.write(request_line(rid, "locate", png) + "\n")
        proc.stdin.flush()
        replies = [json.loads(read_line(proc)) for _ in range(100)]
        assert {r["id"] for r in replies} == set(sent)
        for r in replies:
            if hashlib.sha256(sent[r["id"]]).hexdigest() == known:
                assert r["detections"] == SCRIPT["locate"][known]
            else:
                assert r["detections"] == []

    def test_malformed_json_keeps_process_alive(self, proc):
        self.shake(proc)
        proc.stdin.write("this is not json\n")
        proc.stdin.flush()
        reply = json.loads(read_line(proc))
        assert reply["id"] is None and "error" in reply
        proc.stdin.write(request_line("after", "locate", PNG_512) + "\n")
        proc.stdin.flush()
        assert json.loads(read_line(proc))["id"] == "after"
        assert proc.poll() is None

    def test_invalid_requests_get_error_replies(self, proc):
        self.shake(proc)
        for line, want_id in [
            ("[1, 2, 3]", None),
            (json.dumps({"task": "locate", "image_png_base64": ""}), None),
            (json.dumps({"id": "t1", "task": "segment", "image_png_base64": ""}), "t1"),
            (json.dumps({"id": "t2", "task": "locate", "image_png_base64": "%%%"}), "t2"),
        ]:
            proc.stdin.write(line + "\n")
            proc.stdin.flush()
            reply = json.loads(read_line(proc))
            assert reply["id"] == want_id
            assert "error" in reply and "detections" not in reply

    def test_scripted_error_entry(self, proc):
        self.shake(proc)
        proc.stdin.write(request_line("bad", "locate", PNG_512_ERROR) + "\n")
        proc.stdin.write(request_line("good", "locate", PNG_512) + "\n")
        proc.stdin.flush()
        first = json.loads(read_line(proc))
        second = json.loads(read_line(proc))
        assert first == {"id": "bad", "error": "scripted failure"}
        assert second["id"] == "good" and len(second["detections"]) == 1

    def test_replayed_request_is_byte_identical(self, proc):
        self.shake(proc)
        lines = []
        for rid in ("a", "a"):
            proc.stdin.write(request_line(rid, "orient", PNG_100) + "\n")
            proc.stdin.flush()
            lines.append(read_line(proc))
        assert lines[0] == lines[1]

    def test_access_aisle_locate_script_is_rejected(self, script_path, tmp_path):
        bad = dict(SCRIPT)
        bad["locate"] = {
            "0" * 64: [{"class": "access_aisle", "bbox": [0, 0, 1, 1], "confidence": 0.5}]
        }
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        result = subprocess.run(
            sidecar_command(path),
            input='{"hello": 1}\n',
            capture_output=True,
            text=True,
            timeout=30,
            env=sidecar_env(),
        )
        assert result.returncode == 2
        assert "access_aisle" in result.stderr


class TestClientIntegration:
    @pytest.fixture
    def client(self, script_path, monkeypatch):
        # SidecarClient inherits this process's environment, so the
        # sidecar package has to be importable from there.
        monkeypatch.setenv("PYTHONPATH", sidecar_env()["PYTHONPATH"])
        with SidecarClient(command=sidecar_command(script_path)) as c:
            yield c

    def test_round_trip(self, client):
        assert client.tasks == ("locate", "orient")
        dets = client.locate(RasterImage.from_png_bytes(PNG_512))
        assert len(dets) == 1
        assert dets[0].cls is ParkingClass.DP_ONE_AISLE
        assert dets[0].bbox == (10.0, 20.0, 30.0, 40.0)
        assert dets[0].confidence == 0.9

        obbs = client.orient(RasterImage.from_png_bytes(PNG_100))
        assert [o.kind for o in obbs] == ["space", "aisle"]
        assert isinstance(obbs[0], OBBDetection)
        assert obbs[0].obb.length == 55.0 and obbs[0].obb.width == 30.0

        assert client.locate(RasterImage.from_png_bytes(PNG_512_UNKNOWN)) == []

    def test_scripted_error_raises_but_connection_survives(self, client):
        with pytest.raises(SidecarRequestError):
            client.locate(RasterImage.from_png_bytes(PNG_512_ERROR))
        assert len(client.locate(RasterImage.from_png_bytes(PNG_512))) == 1

    def test_concurrent_requests(self, client):
        images = [
            RasterImage.from_png_bytes(PNG_512 if i % 2 else PNG_512_UNKNOWN) for i in range(40)
        ]
        with ThreadPoolExecutor(max_workers=8) as pool:
            results = list(pool.map(client.locate, images))
        for i, dets in enumerate(results):
            assert len(dets) == (1 if i % 2 else 0)


class TestPipelineIntegration:
    def test_detect_runs_through_sidecar_subprocess(self, tmp_path, monkeypatch):
        """Full pipeline with the sidecar as its backend, no scenario file.

        The stub script is keyed by image digest, so the expected window
        and crop images are rendered here with the public imagery API and
        the records are borrowed from the scenario compiler, which speaks
        the same wire schema.
        """
        from parkscan.geo import TileCoord, meters_per_pixel
        from parkscan.imagery import TileSource, build_mosaic, crop_centered, enumerate_tiles
        from parkscan.pipeline_cli import RunConfig, run
        from parkscan.synthetic import (
            Scene,
            compile_scenario,
            paint_tiles,
            space_with_aisles,
            tile_bbox,
        )

        origin = TileCoord(167000, 364000, 20)
        x0, y0 = origin.x * 256, origin.y * 256
        scene = Scene(
            z=20, spaces=[space_with_aisles(x0 + 300.0, y0 + 260.0, right=(15.0, 0.0))]
        )
        tiles_dir = tmp_path / "tiles"
        paint_tiles(scene, str(tiles_dir), origin, 4, 4)

        nw, se = tile_bbox(origin, 4, 4)
        source = TileSource(kind="local_directory", template=str(tiles_dir), tile_size=256)
        mosaic = build_mosaic(source, enumerate_tiles(nw, se, 20), None)
        compiled = compile_scenario(scene, origin, 4, 4)
        script = {"locate": {}, "orient": {}}
        for key, recs in compiled["locate"].items():
            _, x, y = (int(v) for v in key.split("/"))
            win, _ = mosaic.read_region(x * 256, y * 256, 512, 512)
            script["locate"][hashlib.sha256(win.to_png_bytes()).hexdigest()] = recs
        for key, recs in compiled["orient"].items():
            ci, cj = (int(v) for v in key.split("/")[1].split(","))
            crop, _ = crop_centered(mosaic, (ci, cj), 100)
            script["orient"][hashlib.sha256(crop.to_png_bytes()).hexdigest()] = recs
        script_file = tmp_path / "script.json"
        script_file.write_text(json.dumps(script))

        monkeypatch.setenv("PYTHONPATH", sidecar_env()["PYTHONPATH"])
        command = " ".join(sidecar_command(script_file))
        cfg = RunConfig.from_dict(
            {
                "source": {
                    "kind": "local_directory",
                    "template": str(tiles_dir),
                    "tile_size": 256,
                    "native_zoom": 20,
                },
                "zoom": 20,
                "bbox": {"nw": [nw.lon, nw.lat], "se": [se.lon, se.lat]},
                "backend": {"sidecar_command": command},
                "output": {"report": str(tmp_path / "report.json")},
                "workers": 4,
            }
        )
        report = run(cfg).to_dict()
        assert report["counts"]["spaces"] == 1
        assert report["counts"]["characterized"] == 1
        rec = report["spaces"][0]
        assert rec["class"] == "dp_one_aisle"
        got_px = rec["total_width_m"] / meters_per_pixel(20, 256)
        assert got_px == pytest.approx(45.0, abs=1e-6)


class TestHttpTransport:
    @pytest.fixture
    def http_url(self, script_path):
        p = subprocess.Popen(
            sidecar_command(script_path, "--transport", "http:0"),
            stdout=subprocess.DEVNULL,
            stderr=subprocess.PIPE,
            text=True,
            env=sidecar_env(),
        )
        try:
            banner = read_line(p, stream=p.stderr)
            yield banner.split()[-1]
        finally:
            p.terminate()
            p.wait(timeout=5)

    def test_round_trip_over_http(self, http_url):
        with SidecarClient(url=http_url) as client:
            assert client.tasks == ("locate", "orient")
            dets = client.locate(RasterImage.from_png_bytes(PNG_512))
            assert len(dets) == 1 and dets[0].cls is ParkingClass.DP_ONE_AISLE
            with pytest.raises(SidecarRequestError):
                client.locate(RasterImage.from_png_bytes(PNG_512_ERROR))
            assert client.locate(RasterImage.from_png_bytes(PNG_512_UNKNOWN)) == []
