"""
Coordinate frames and bistatic radar geometry.

Positions are Earth-centred Earth-fixed (ECEF) metres on the WGS-84
ellipsoid.  Functions accept a single ``(3,)`` vector or a stack of vectors
``(..., 3)`` and broadcast over the leading axes.

Bistatic range is delay-referenced: ``Rt + Rr - L``, the excess path of an
echo over the direct transmitter-to-receiver path, which is what the delay
axis of a cross-ambiguity map measures.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .constants import WGS84_A, WGS84_B, WGS84_E2


class GeometryError(ValueError):
    """Geometry has no physical solution."""


class DegenerateGeometryWarning(RuntimeWarning):
    """Target coincides with a transmitter or receiver site."""


@dataclass(frozen=True)
class GeodeticPos:
    latitude: float  # deg
    longitude: float  # deg
    height: float = 0.0  # m above ellipsoid

    def __post_init__(self):
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 < self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside (-180, 180]")
        if not np.isfinite(self.height):
            raise ValueError("height must be finite")

    def to_ecef(self) -> np.ndarray:
        return geodetic_to_ecef(self)


class LookAngles(NamedTuple):
    """Azimuth clockwise from true north in [0, 360), elevation in [-90, 90]."""

    azimuth: float
    elevation: float


@dataclass(frozen=True)
class BistaticGeometry:
    tx: np.ndarray
    rx: np.ndarray

    def __post_init__(self):
        tx = np.asarray(self.tx, dtype=float).reshape(3)
        rx = np.asarray(self.rx, dtype=float).reshape(3)
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "rx", rx)
        if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(rx))):
            raise GeometryError("site positions must be finite")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.tx - self.rx))

    @classmethod
    def from_sites(cls, tx: GeodeticPos, rx: GeodeticPos) -> "BistaticGeometry":
        return cls(geodetic_to_ecef(tx), geodetic_to_ecef(rx))


def geodetic_to_ecef(g: GeodeticPos | None = None, *, lat=None, lon=None, h=None) -> np.ndarray:
    """Geodetic (deg, deg, m) to ECEF metres.

    Pass either a :class:`GeodeticPos` or array keywords ``lat``, ``lon``, ``h``.
    """
    if g is not None:
        lat, lon, h = g.latitude, g.longitude, g.height
    lat = np.radians(np.asarray(lat, dtype=float))
    lon = np.radians(np.asarray(lon, dtype=float))
    h = np.asarray(h, dtype=float)
    sl, cl = np.sin(lat), np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sl**2)
    x = (n + h) * cl * np.cos(lon)
    y = (n + h) * cl * np.sin(lon)
    z = (n * (1.0 - WGS84_E2) + h) * sl
    return np.stack([x, y, z], axis=-1)


def ecef_to_geodetic(p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """ECEF metres to (lat deg, lon deg, height m).

    Bowring's parametric-latitude iteration; converges below a millimetre in
    a handful of steps for heights up to several Earth radii.
    """
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    lon = np.arctan2(y, x)
    ep2 = (WGS84_A**2 - WGS84_B**2) / WGS84_B**2

    beta = np.arctan2(z * WGS84_A, rho * WGS84_B)
    lat = np.arctan2(z + ep2 * WGS84_B * np.sin(beta) ** 3,
                     rho - WGS84_E2 * WGS84_A * np.cos(beta) ** 3)
    for _ in range(6):
        beta = np.arctan2(WGS84_B * np.sin(lat), WGS84_A * np.cos(lat))
        lat = np.arctan2(z + ep2 * WGS84_B * np.sin(beta) ** 3,
                         rho - WGS84_E2 * WGS84_A * np.cos(beta) ** 3)

    sl, cl = np.sin(lat), np.cos(lat)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * sl**2)
    # the rho form loses precision near the poles, the z form near the equator
    h = np.where(np.abs(cl) > 0.5, rho / np.where(cl == 0, 1, cl) - n,
                 z / np.where(sl == 0, 1, sl) - n * (1.0 - WGS84_E2))
    lon = np.where(lon <= -np.pi, lon + 2 * np.pi, lon)
    return np.degrees(lat), np.degrees(lon), h


def ecef_to_geodetic_pos(p) -> GeodeticPos:
    lat, lon, h = ecef_to_geodetic(p)
    lon = float(lon)
    if lon == -180.0:
        lon = 180.0
    return GeodeticPos(float(lat), lon, float(h))


def enu_basis(site: GeodeticPos) -> np.ndarray:
    """Rows are the local east, north, up unit vectors in ECEF."""
    lat, lon = np.radians(site.latitude), np.radians(site.longitude)
    sl, cl, so, co = np.sin(lat), np.cos(lat), np.sin(lon), np.cos(lon)
    return np.array([
        [-so, co, 0.0],
        [-sl * co, -sl * so, cl],
        [cl * co, cl * so, sl],
    ])


def ecef_to_enu(site: GeodeticPos, p) -> np.ndarray:
    return (np.asarray(p, dtype=float) - geodetic_to_ecef(site)) @ enu_basis(site).T


def enu_to_ecef(site: GeodeticPos, enu) -> np.ndarray:
    return geodetic_to_ecef(site) + np.asarray(enu, dtype=float) @ enu_basis(site)


def enu_to_look(enu) -> LookAngles:
    enu = np.asarray(enu, dtype=float)
    e, n, u = enu[..., 0], enu[..., 1], enu[..., 2]
    horiz = np.hypot(e, n)
    el = np.degrees(np.arctan2(u, horiz))
    az = np.degrees(np.arctan2(e, n)) % 360.0
    # azimuth is undefined at zenith/nadir; round-off below ~1e-7 deg counts as vertical
    az = np.where(horiz <= 1e-9 * np.abs(u), 0.0, az)
    az = np.where(az >= 360.0, 0.0, az)
    if az.ndim == 0:
        return LookAngles(float(az), float(el))
    return LookAngles(az, el)


def look_to_enu(angles: LookAngles) -> np.ndarray:
    """Unit ENU direction for the given look angles."""
    az = np.radians(np.asarray(angles.azimuth, dtype=float))
    el = np.radians(np.asarray(angles.elevation, dtype=float))
    return np.stack([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)], axis=-1)


def _site_of(rx) -> GeodeticPos:
    if isinstance(rx, GeodeticPos):
        return rx
    return ecef_to_geodetic_pos(rx)


def look_angles(rx, target) -> LookAngles:
    """Azimuth/elevation of ``target`` in the receiver's topocentric frame.

    ``rx`` may be a :class:`GeodeticPos` or an ECEF vector.
    """
    site = _site_of(rx)
    enu = ecef_to_enu(site, target)
    if np.any(np.linalg.norm(enu, axis=-1) == 0.0):
        raise GeometryError("target coincides with receiver")
    return enu_to_look(enu)


def is_degenerate(geom: BistaticGeometry, target) -> np.ndarray:
    target = np.asarray(target, dtype=float)
    return (np.linalg.norm(target - geom.tx, axis=-1) == 0.0) | (
        np.linalg.norm(target - geom.rx, axis=-1) == 0.0)


def bistatic_range(geom: BistaticGeometry, target) -> np.ndarray | float:
    """Excess path ``|t - tx| + |t - rx| - |tx - rx|`` in metres, never negative."""
    target = np.asarray(target, dtype=float)
    rt = np.linalg.norm(target - geom.tx, axis=-1)
    rr = np.linalg.norm(target - geom.rx, axis=-1)
    rb = np.maximum(rt + rr - geom.baseline, 0.0)
    if np.any(is_degenerate(geom, target)):
        warnings.warn("target at a radar site; bistatic range is 0 by limit",
                      DegenerateGeometryWarning, stacklevel=2)
    return float(rb) if rb.ndim == 0 else rb


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def bistatic_range_rate(geom: BistaticGeometry, target, target_vel) -> np.ndarray | float:
    """Time derivative of the bistatic range (m/s) for static sites."""
    target = np.asarray(target, dtype=float)
    vel = np.asarray(target_vel, dtype=float)
    if np.any(is_degenerate(geom, target)):
        warnings.warn("target at a radar site; range-rate direction undefined",
                      DegenerateGeometryWarning, stacklevel=2)
    ut = _unit(target - geom.tx)
    ur = _unit(target - geom.rx)
    rate = np.sum((ut + ur) * vel, axis=-1)
    return float(rate) if rate.ndim == 0 else rate


def localize_detection(geom: BistaticGeometry, angles: LookAngles, rb: float) -> np.ndarray:
    """Target ECEF position from receiver look angles and bistatic range.

    Intersects the receive ray with the bistatic ellipsoid
    ``Rt + Rr = rb + L``; the receive range has the closed form
    ``Rr = (S^2 - L^2) / (2 (S - d.u))`` with ``S = rb + L`` and ``d`` the
    receiver-to-transmitter vector.
    """
    if not rb > 0:
        raise GeometryError(f"bistatic range must be positive, got {rb}")
    site = ecef_to_geodetic_pos(geom.rx)
    u = look_to_enu(angles) @ enu_basis(site)
    d = geom.tx - geom.rx
    s = rb + geom.baseline
    denom = 2.0 * (s - d @ u)
    if not denom > 0:
        raise GeometryError("receive ray does not meet the bistatic ellipsoid")
    r_rx = (s**2 - geom.baseline**2) / denom
    return geom.rx + r_rx * u
