import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ogradar.constants import WGS84_A, WGS84_B
from ogradar.geo import (BistaticGeometry, DegenerateGeometryWarning, GeodeticPos, GeometryError,
                         LookAngles, bistatic_range, bistatic_range_rate, ecef_to_geodetic,
                         ecef_to_geodetic_pos, enu_to_ecef, geodetic_to_ecef, localize_detection,
                         look_angles)
from ogradar.scenario import GERALDTON_SITE, MWA_SITE

lats = st.floats(-89.9, 89.9)
lons = st.floats(-179.9, 180.0)
heights = st.floats(-400.0, 1.0e7)


def test_equator_prime_meridian():
    np.testing.assert_allclose(geodetic_to_ecef(GeodeticPos(0, 0, 0)), [WGS84_A, 0, 0], atol=1e-9)


@pytest.mark.parametrize("lon", [0.0, 45.0, -120.0, 180.0])
def test_pole(lon):
    np.testing.assert_allclose(geodetic_to_ecef(GeodeticPos(90, lon, 0)), [0, 0, WGS84_B], atol=1e-6)


def test_site_separation():
    d = np.linalg.norm(geodetic_to_ecef(MWA_SITE) - geodetic_to_ecef(GERALDTON_SITE))
    assert abs(d - 294e3) < 5e3


def test_surface_site_norm():
    assert 6.35e6 <= np.linalg.norm(geodetic_to_ecef(MWA_SITE)) <= 6.40e6


@pytest.mark.parametrize("lat,lon", [(100, 0), (-91, 0), (0, -180), (0, 181)])
def test_geodetic_validation(lat, lon):
    with pytest.raises(ValueError):
        GeodeticPos(lat, lon, 0)


@given(lats, lons, heights)
def test_geodetic_round_trip(lat, lon, h):
    p = geodetic_to_ecef(GeodeticPos(lat, lon, h))
    back = geodetic_to_ecef(ecef_to_geodetic_pos(p))
    assert np.linalg.norm(back - p) < 1e-3


def test_round_trip_vectorised():
    rng = np.random.default_rng(1)
    lat, lon, h = rng.uniform(-90, 90, 500), rng.uniform(-179, 180, 500), rng.uniform(0, 1e7, 500)
    p = geodetic_to_ecef(lat=lat, lon=lon, h=h)
    la, lo, hh = ecef_to_geodetic(p)
    np.testing.assert_allclose(geodetic_to_ecef(lat=la, lon=lo, h=hh), p, atol=1e-3)


GEOM = BistaticGeometry.from_sites(GERALDTON_SITE, MWA_SITE)


def test_bistatic_range_at_sites_is_zero():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGeometryWarning)
        assert bistatic_range(GEOM, GEOM.rx) == 0.0
        assert bistatic_range(GEOM, GEOM.tx) == 0.0
    with pytest.warns(DegenerateGeometryWarning):
        bistatic_range(GEOM, GEOM.rx)


@given(st.lists(st.floats(-1e7, 1e7), min_size=9, max_size=9))
def test_bistatic_range_oracle_and_nonnegative(v):
    tx, rx, t = np.array(v[:3]), np.array(v[3:6]), np.array(v[6:])
    g = BistaticGeometry(tx, rx)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateGeometryWarning)
        rb = bistatic_range(g, t)
    expected = (math.dist(t, tx) + math.dist(t, rx) - math.dist(tx, rx))
    assert rb >= 0
    assert rb == pytest.approx(max(expected, 0.0), abs=1e-6 * (1 + abs(expected)) + 1e-6)


def test_range_rate_orthogonal_velocity_is_zero():
    t = GEOM.rx + 500e3 * (GEOM.rx / np.linalg.norm(GEOM.rx))
    v = np.cross(t - GEOM.tx, t - GEOM.rx)
    assert abs(bistatic_range_rate(GEOM, t, v)) < 1e-9 * np.linalg.norm(v)


def random_leo_states(n, seed):
    rng = np.random.default_rng(seed)
    up = rng.normal(size=(n, 3))
    up /= np.linalg.norm(up, axis=1, keepdims=True)
    pos = (6.371e6 + rng.uniform(300e3, 2000e3, n))[:, None] * up
    vel = rng.normal(size=(n, 3))
    vel -= np.sum(vel * up, axis=1, keepdims=True) * up
    vel *= (7.6e3 / np.linalg.norm(vel, axis=1))[:, None]
    return pos, vel


def test_range_rate_finite_difference():
    pos, vel = random_leo_states(1000, 7)
    h = 1e-3
    fd = (bistatic_range(GEOM, pos + h * vel) - bistatic_range(GEOM, pos - h * vel)) / (2 * h)
    rate = bistatic_range_rate(GEOM, pos, vel)
    rel = np.abs(rate - fd) / np.maximum(np.abs(fd), 1.0)
    assert rel.max() < 1e-3


def test_iss_doppler_below_ceiling():
    wavelength = 299_792_458.0 / 98.5e6
    rate = wavelength * 2861.0
    assert rate == pytest.approx(8.7e3, rel=0.02)
    assert rate < 2 * 7.7e3


def test_zenith_and_north_horizon():
    site = MWA_SITE
    up = look_angles(site, enu_to_ecef(site, [0, 0, 1e5]))
    assert up.azimuth == 0.0
    assert up.elevation == pytest.approx(90.0, abs=1e-9)
    la = look_angles(site, enu_to_ecef(site, [0, 1e5, 0]))
    assert la.azimuth == pytest.approx(0.0, abs=1e-9)
    assert la.elevation == pytest.approx(0.0, abs=1e-9)


def test_look_angles_coincident_raises():
    with pytest.raises(GeometryError):
        look_angles(MWA_SITE, geodetic_to_ecef(MWA_SITE))


def _jacobian_enu(site):
    """East/north/up from finite differences of the geodetic map."""
    d = 1e-6
    p0 = geodetic_to_ecef(site)
    de = geodetic_to_ecef(GeodeticPos(site.latitude, site.longitude + d, site.height)) - p0
    dn = geodetic_to_ecef(GeodeticPos(site.latitude + d, site.longitude, site.height)) - p0
    e, n = de / np.linalg.norm(de), dn / np.linalg.norm(dn)
    return e, n, np.cross(e, n)


@given(lats, st.floats(-179, 179), st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_look_angles_against_jacobian_frame(lat, lon, offset):
    site = GeodeticPos(lat, lon, 100.0)
    off = np.array(offset)
    if np.linalg.norm(off) < 1.0:
        return
    e, n, u = _jacobian_enu(site)
    target = geodetic_to_ecef(site) + off
    la = look_angles(site, target)
    el = math.degrees(math.atan2(off @ u, math.hypot(off @ e, off @ n)))
    assert la.elevation == pytest.approx(el, abs=1e-4)
    if abs(el) < 89.0:
        az = math.degrees(math.atan2(off @ e, off @ n)) % 360.0
        diff = (la.azimuth - az + 180) % 360 - 180
        assert abs(diff) < 1e-4


def test_localize_monostatic():
    g = BistaticGeometry(GEOM.rx, GEOM.rx)
    p = localize_detection(g, LookAngles(30.0, 60.0), 200e3)
    assert np.linalg.norm(p - g.rx) == pytest.approx(100e3, rel=1e-12)


@given(st.floats(0, 359.9), st.floats(5.0, 89.0), st.floats(200e3, 2000e3))
def test_localize_round_trip(az, el, rr):
    site = MWA_SITE
    target = enu_to_ecef(site, rr * np.array([math.cos(math.radians(el)) * math.sin(math.radians(az)),
                                              math.cos(math.radians(el)) * math.cos(math.radians(az)),
                                              math.sin(math.radians(el))]))
    rb = bistatic_range(GEOM, target)
    p = localize_detection(GEOM, look_angles(site, target), rb)
    assert np.linalg.norm(p - target) < 1e-3 * rb


def test_localize_100km_altitude():
    # target 100 km up, midway between the sites
    mid = GeodeticPos((MWA_SITE.latitude + GERALDTON_SITE.latitude) / 2,
                      (MWA_SITE.longitude + GERALDTON_SITE.longitude) / 2, 100e3)
    target = geodetic_to_ecef(mid)
    p = localize_detection(GEOM, look_angles(MWA_SITE, target), bistatic_range(GEOM, target))
    assert ecef_to_geodetic_pos(p).height == pytest.approx(100e3, abs=100.0)


def test_localize_rejects_nonpositive_range():
    with pytest.raises(GeometryError):
        localize_detection(GEOM, LookAngles(0, 45), 0.0)
