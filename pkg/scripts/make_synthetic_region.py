"""Materialize a synthetic region on disk, ready for ``parkscan detect``.

Paints PNG tiles for a scripted scene, compiles the matching scenario
file, and writes a run config pointing at both.  With ``--run`` the
pipeline is executed in-process and the report/GeoJSON land next to the
tiles, so the whole flow can be exercised without any network access.

    python3 scripts/make_synthetic_region.py --out /tmp/region --run
"""

import argparse
import json
import math
import random
from pathlib import Path

from parkscan.detector import ParkingClass
from parkscan.geo import TileCoord
from parkscan.pipeline_cli import RunConfig, run, write_outputs
from parkscan.synthetic import (
    Scene,
    compile_scenario,
    demo_scene,
    paint_tiles,
    space_with_aisles,
    tile_bbox,
)

ORIGIN = TileCoord(167000, 364000, 20)

SPACE_CLASSES = [c for c in ParkingClass if c is not ParkingClass.ACCESS_AISLE]


def random_scene(origin: TileCoord, cols: int, rows: int, count: int, seed: int) -> Scene:
    """Spaces on a jittered grid so crops never overlap or leave the mosaic."""
    rng = random.Random(seed)
    x0, y0 = origin.x * 256, origin.y * 256
    extent_x, extent_y = cols * 256, rows * 256
    pitch = 220
    slots = [
        (x0 + gx, y0 + gy)
        for gy in range(130, extent_y - 130, pitch)
        for gx in range(130, extent_x - 130, pitch)
    ]
    if count > len(slots):
        raise SystemExit(f"region fits at most {len(slots)} spaces, asked for {count}")
    spaces = []
    for cx, cy in rng.sample(slots, count):
        kwargs = {}
        for side in ("left", "right"):
            if rng.random() < 0.6:
                kwargs[side] = (rng.uniform(10.0, 18.0), rng.choice([0.0, 0.0, 2.0]))
        spaces.append(
            space_with_aisles(
                cx + rng.uniform(-25, 25),
                cy + rng.uniform(-25, 25),
                length=rng.uniform(48.0, 62.0),
                width=rng.uniform(26.0, 34.0),
                theta=rng.uniform(0.0, math.pi),
                cls=rng.choice(SPACE_CLASSES),
                **kwargs,
            )
        )
    return Scene(z=origin.z, spaces=spaces)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("synthetic_region"))
    ap.add_argument("--cols", type=int, default=4)
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--spaces", type=int, default=0, help="random spaces; 0 uses the fixed demo scene")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--run", action="store_true", help="also run the pipeline in-process")
    args = ap.parse_args()

    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.spaces:
        scene = random_scene(ORIGIN, args.cols, args.rows, args.spaces, args.seed)
    else:
        scene = demo_scene(ORIGIN)
    painted = paint_tiles(scene, str(out / "tiles"), ORIGIN, args.cols, args.rows)
    (out / "scenario.json").write_text(json.dumps(compile_scenario(scene, ORIGIN, args.cols, args.rows)))

    nw, se = tile_bbox(ORIGIN, args.cols, args.rows)
    config = {
        "source": {
            "kind": "local_directory",
            "template": str(out / "tiles"),
            "tile_size": 256,
            "native_zoom": ORIGIN.z,
        },
        "zoom": ORIGIN.z,
        "bbox": {"nw": [nw.lon, nw.lat], "se": [se.lon, se.lat]},
        "backend": {"scenario": str(out / "scenario.json")},
        "output": {
            "report": str(out / "report.json"),
            "geojson": str(out / "spaces.geojson"),
        },
        "seed": args.seed,
        "workers": 4,
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")

    print(f"painted {painted} tiles, {len(scene.spaces)} spaces -> {out}")
    if args.run:
        report = run(RunConfig.from_dict(config))
        write_outputs(report)
        print(
            f"detected {report.counts['spaces']} spaces "
            f"({report.counts['characterized']} characterized), "
            f"report at {out / 'report.json'}"
        )
    else:
        print(f"next: parkscan detect --config {out / 'config.json'}")


if __name__ == "__main__":
    main()
