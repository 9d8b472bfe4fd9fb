"""Recompute the frozen geodesy reference values used in tests/test_geo.py.

Runs the tile/WGS84/EPSG:3857 formulas at 50 decimal digits with mpmath,
independently of the package implementation.
"""

import mpmath as mp

mp.mp.dps = 50

R = mp.mpf(6378137)


def global_to_lonlat(xf, yf, z):
    n = mp.mpf(2) ** z
    lon = xf / n * 360 - 180
    lat = 180 / mp.pi * mp.atan(mp.sinh(mp.pi - 2 * mp.pi * yf / n))
    return lon, lat


def lonlat_to_mercator(lon, lat):
    xm = R * mp.radians(lon)
    ym = R * mp.log(mp.tan(mp.pi / 4 + mp.radians(lat) / 2))
    return xm, ym


def main():
    lon, lat = global_to_lonlat(mp.mpf(0), mp.mpf(0), 20)
    print("tile-square corner:", mp.nstr(lon, 20), mp.nstr(lat, 20))

    lon, lat = global_to_lonlat(mp.mpf("168046.5"), mp.mpf("366004.5"), 20)
    print("worked pixel:      ", mp.nstr(lon, 20), mp.nstr(lat, 20))

    print("mercator(180, 0).x:", mp.nstr(lonlat_to_mercator(180, 0)[0], 20))
    print("mercator(0, 45).y: ", mp.nstr(lonlat_to_mercator(0, 45)[1], 20))

    mpp = 2 * mp.pi * R / (mp.mpf(2) ** 20 * 256)
    print("m/px at z=20/256:  ", mp.nstr(mpp, 20))
    print("cos(47.6 deg):     ", mp.nstr(mp.cos(mp.radians(mp.mpf("47.6"))), 20))

    xf1, yf1 = mp.mpf("168046.5"), mp.mpf("366004.5")
    a = lonlat_to_mercator(*global_to_lonlat(xf1, yf1, 20))
    b = lonlat_to_mercator(*global_to_lonlat(xf1 + mp.mpf(100) / 256, yf1, 20))
    d = mp.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)
    print("100 px span (m):   ", mp.nstr(d, 20))


if __name__ == "__main__":
    main()
