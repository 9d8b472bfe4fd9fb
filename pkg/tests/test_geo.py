"""Tile/WGS84/EPSG:3857 conversion tests.

Reference values marked "oracle" were computed once with mpmath at 50
decimal digits (see scripts/compute_geo_oracle.py) and frozen here.
"""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from parkscan.geo import (
    EARTH_RADIUS_M,
    MERCATOR_MAX_LAT,
    GeoPoint,
    GlobalTilePoint,
    MercatorPoint,
    TileCoord,
    global_to_lonlat,
    global_to_pixel,
    ground_scale_correction,
    lonlat_to_global,
    lonlat_to_mercator,
    mercator_distance,
    meters_per_pixel,
    pixel_to_global,
)

# Seattle region corners (NW, SE), used to sanity-check the worked pixel.
SEATTLE_NW = (47.9572, -122.4489)
SEATTLE_SE = (47.4091, -122.1551)


class TestPixelToGlobal:
    def test_worked_example_center_pixel(self):
        # Pixel (128, 128) of tile (168046, 366004) at z=20. Under the
        # pixel-center convention the exact value is 168046 + 128.5/256;
        # the published worked value .5 is recovered to within half a pixel.
        p = pixel_to_global(TileCoord(168046, 366004, 20), row=128, col=128)
        assert p.xf == 168046 + 128.5 / 256
        assert p.yf == 366004 + 128.5 / 256
        assert abs(p.xf - 168046.5) <= 0.5 / 256
        assert abs(p.yf - 366004.5) <= 0.5 / 256

    def test_half_pixel_offset(self):
        p = pixel_to_global(TileCoord(0, 0, 1), row=0, col=0)
        assert p.xf == pytest.approx(0.001953125)
        assert p.yf == pytest.approx(0.001953125)

    def test_round_trip_with_global_to_pixel(self):
        tile = TileCoord(168046, 366004, 20)
        for row, col in [(0, 0), (128, 128), (255, 255), (17, 212)]:
            t2, r2, c2 = global_to_pixel(pixel_to_global(tile, row, col))
            assert (t2, r2, c2) == (tile, row, col)

    def test_pixel_outside_tile_rejected(self):
        with pytest.raises(ValueError):
            pixel_to_global(TileCoord(0, 0, 1), row=256, col=0)
        with pytest.raises(ValueError):
            pixel_to_global(TileCoord(0, 0, 1), row=0, col=-1)


class TestGlobalToLonLat:
    def test_projection_center(self):
        g = global_to_lonlat(GlobalTilePoint(2**19, 2**19, 20))
        assert g.lon == pytest.approx(0.0, abs=1e-12)
        assert g.lat == pytest.approx(0.0, abs=1e-12)

    def test_top_left_corner(self):
        # oracle: atan(sinh(pi)) = 85.051128779806592378 deg
        g = global_to_lonlat(GlobalTilePoint(0.0, 0.0, 20))
        assert g.lon == pytest.approx(-180.0, abs=1e-12)
        assert g.lat == pytest.approx(85.051128779806592378, abs=1e-9)

    def test_worked_pixel_lands_in_seattle(self):
        # oracle: (-122.30581283569335938, 47.65324721675851047)
        g = global_to_lonlat(GlobalTilePoint(168046.5, 366004.5, 20))
        assert g.lon == pytest.approx(-122.30581283569336, abs=1e-9)
        assert g.lat == pytest.approx(47.65324721675851, abs=1e-9)
        assert SEATTLE_SE[0] < g.lat < SEATTLE_NW[0]
        assert SEATTLE_NW[1] < g.lon < SEATTLE_SE[1]


class TestLonLatToGlobal:
    def test_inverse_of_center(self):
        p = lonlat_to_global(GeoPoint(0.0, 0.0), 20)
        assert p.xf == pytest.approx(2**19)
        assert p.yf == pytest.approx(2**19)

    def test_corner(self):
        p = lonlat_to_global(GeoPoint(-180.0, 85.051129), 20)
        assert p.xf == pytest.approx(0.0, abs=1e-6)
        assert p.yf == pytest.approx(0.0, abs=0.01)

    @settings(max_examples=200)
    @given(
        lon=st.floats(-180.0, 180.0),
        lat=st.floats(-85.0, 85.0),
        z=st.sampled_from([18, 19, 20]),
    )
    def test_round_trip_lonlat(self, lon, lat, z):
        g = GeoPoint(lon, lat)
        back = global_to_lonlat(lonlat_to_global(g, z))
        assert back.lon == pytest.approx(lon, abs=1e-9)
        assert back.lat == pytest.approx(lat, abs=1e-9)


class TestMercator:
    def test_origin(self):
        m = lonlat_to_mercator(GeoPoint(0.0, 0.0))
        assert m.xm == 0.0
        assert m.ym == pytest.approx(0.0, abs=1e-9)

    def test_antimeridian(self):
        # oracle: pi * 6378137 = 20037508.342789243077
        m = lonlat_to_mercator(GeoPoint(180.0, 0.0))
        assert m.xm == pytest.approx(20037508.342789244, abs=1e-6)

    def test_45_north(self):
        # oracle: R * ln(tan(3*pi/8)) = 5621521.4861920670923
        m = lonlat_to_mercator(GeoPoint(0.0, 45.0))
        assert m.ym == pytest.approx(5621521.486192067, abs=1e-6)

    def test_distance_trivial(self):
        a = MercatorPoint(0.0, 0.0)
        assert mercator_distance(a, a) == 0.0
        assert mercator_distance(a, MercatorPoint(3.0, 4.0)) == pytest.approx(5.0)

    def test_100px_span_matches_pixel_scale(self):
        # oracle (full chain at yf=366004.5): 14.929107086948486475 m,
        # equal to 100 * meters_per_pixel(20) because EPSG:3857 is conformal.
        a = global_to_lonlat(GlobalTilePoint(168046.5, 366004.5, 20))
        b = global_to_lonlat(GlobalTilePoint(168046.5 + 100 / 256, 366004.5, 20))
        d = mercator_distance(lonlat_to_mercator(a), lonlat_to_mercator(b))
        assert d == pytest.approx(14.929107086948486, abs=1e-6)
        assert d == pytest.approx(100 * meters_per_pixel(20), abs=1e-6)

    @settings(max_examples=100)
    @given(
        pts=st.lists(
            st.tuples(st.floats(-2e7, 2e7), st.floats(-2e7, 2e7)), min_size=3, max_size=3
        )
    )
    def test_distance_metric_properties(self, pts):
        a, b, c = (MercatorPoint(x, y) for x, y in pts)
        assert mercator_distance(a, b) >= 0.0
        assert mercator_distance(a, b) == mercator_distance(b, a)
        assert mercator_distance(a, c) <= mercator_distance(a, b) + mercator_distance(b, c) + 1e-6


class TestGroundScaleCorrection:
    @pytest.mark.parametrize(
        "lat,expected",
        [
            (0.0, 1.0),
            (60.0, 0.5),
            (47.6, 0.67430238758372339),  # oracle: cos(47.6 deg)
        ],
    )
    def test_values(self, lat, expected):
        assert ground_scale_correction(lat) == pytest.approx(expected, abs=1e-12)


class TestInvariants:
    @settings(max_examples=300)
    @given(
        xf=st.floats(0.0, 1.0, exclude_max=True),
        yf=st.floats(0.0, 1.0, exclude_max=True),
        z=st.sampled_from([18, 19, 20]),
    )
    def test_global_round_trip(self, xf, yf, z):
        n = 1 << z
        p = GlobalTilePoint(xf * n, yf * n, z)
        back = lonlat_to_global(global_to_lonlat(p), z)
        assert back.xf == pytest.approx(p.xf, abs=1e-9 * n)
        assert back.yf == pytest.approx(p.yf, abs=1e-9 * n)

    def test_monotonicity(self):
        lons = [global_to_lonlat(GlobalTilePoint(x, 100.0, 10)).lon for x in range(0, 1024, 64)]
        assert lons == sorted(lons)
        lats = [global_to_lonlat(GlobalTilePoint(100.0, float(y), 10)).lat for y in range(0, 1024, 64)]
        assert lats == sorted(lats, reverse=True)

    def test_pixel_scale_at_z20(self):
        # 40075016.69 / (2^20 * 256) = 0.14929 m, the ~15 cm/pixel regime
        assert meters_per_pixel(20) == pytest.approx(0.149, abs=0.001)
        assert 2 * math.pi * EARTH_RADIUS_M == pytest.approx(40075016.6856, abs=1e-3)

    def test_max_lat_constant_consistent(self):
        assert MERCATOR_MAX_LAT == pytest.approx(
            math.degrees(math.atan(math.sinh(math.pi))), abs=1e-9
        )
