"""
TLE ingest and orbit propagation.

The propagator integrates two-body + J2 gravity with an adaptive
Dormand-Prince 8(5,3) Runge-Kutta scheme.  It stands in for SGP-4: TLE mean
elements are treated as osculating at epoch and ``bstar`` is parsed but not
used, so absolute agreement with published SGP-4 ephemerides is only at the
km level.  Any object with ``propagate`` / ``propagate_many`` methods can
replace it inside a :class:`ProcessModel`.

Units: km, km/s, seconds.  The inertial frame is the TEME-like frame TLE
elements are referred to; precession/nutation are ignored, so ECI to ECEF is
a single rotation by Greenwich mean sidereal time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Protocol, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .constants import J2, MU_EARTH, OMEGA_EARTH, R_EARTH

__all__ = [
    "TleError", "TleChecksumError", "TleLineMarkerError", "TleFieldError",
    "TleCatalogMismatchError", "TleLengthError", "HyperbolicOrbitError", "ReentryError",
    "OrbitalElements", "Tle", "StateVector", "TwoBodyJ2", "ProcessModel",
    "parse_tle", "read_tle_file", "format_tle", "tle_checksum",
    "elements_to_state", "state_to_elements", "propagate",
    "gmst", "eci_to_ecef", "ecef_to_eci", "eci_to_ecef_arrays",
]

J2000 = datetime(2000, 1, 1, 12, tzinfo=timezone.utc)


class TleError(ValueError):
    pass


class TleLengthError(TleError):
    pass


class TleChecksumError(TleError):
    pass


class TleLineMarkerError(TleError):
    pass


class TleFieldError(TleError):
    pass


class TleCatalogMismatchError(TleError):
    pass


class HyperbolicOrbitError(ValueError):
    pass


class ReentryError(RuntimeError):
    pass


@dataclass(frozen=True)
class OrbitalElements:
    inclination: float  # deg
    raan: float  # deg
    eccentricity: float
    arg_perigee: float  # deg
    mean_anomaly: float  # deg
    mean_motion: float  # rev/day
    bstar: float = 0.0  # 1/earth radii
    epoch: datetime = J2000

    def __post_init__(self):
        if not 0.0 <= self.eccentricity < 1.0:
            raise HyperbolicOrbitError(f"eccentricity {self.eccentricity} not in [0, 1)")
        if not self.mean_motion > 0:
            raise ValueError("mean motion must be positive")
        if not 0.0 <= self.inclination <= 180.0:
            raise ValueError(f"inclination {self.inclination} outside [0, 180]")

    @property
    def semi_major_axis(self) -> float:
        """Kepler's third law, km."""
        n = self.mean_motion * 2.0 * math.pi / 86400.0
        return (MU_EARTH / n**2) ** (1.0 / 3.0)


@dataclass(frozen=True)
class Tle:
    name: str
    line1: str
    line2: str
    parsed: OrbitalElements
    catalog_number: int
    classification: str = "U"
    international_designator: str = ""
    element_set_number: int = 0
    revolution_number: int = 0
    mean_motion_dot: float = 0.0  # rev/day^2 (already halved in the record)
    mean_motion_ddot: float = 0.0  # rev/day^3 (already /6)

    @property
    def epoch(self) -> datetime:
        return self.parsed.epoch


# --- TLE parsing -------------------------------------------------------------

def tle_checksum(line: str) -> int:
    """Modulo-10 sum over the first 68 columns; digits count face value, '-' counts 1."""
    total = 0
    for c in line[:68]:
        if c.isdigit():
            total += int(c)
        elif c == "-":
            total += 1
    return total % 10


# Right-justified numbers: leading spaces only, no padding zeros.
_INT = r" *(?:0|[1-9][0-9]*)"
_FIXED = {
    # (start, stop) are 0-based python slices of the 69-column records
    "catalog": (r"[0-9]{5}", (2, 7)),
    "classification": (r"[UCS]", (7, 8)),
    "intl": (r"[0-9A-Z ]{8}", (9, 17)),
    "epoch_year": (r"[0-9]{2}", (18, 20)),
    "epoch_day": (r"[0-9]{3}\.[0-9]{8}", (20, 32)),
    "ndot": (r"[ -]\.[0-9]{8}", (33, 43)),
    "nddot": (r"[ -][0-9]{5}[+-][0-9]", (44, 52)),
    "bstar": (r"[ -][0-9]{5}[+-][0-9]", (53, 61)),
    "ephemeris_type": (r"[0-9]", (62, 63)),
    "element_set": (_INT, (64, 68)),
}
_FIXED2 = {
    "catalog": (r"[0-9]{5}", (2, 7)),
    "inclination": (r" *(?:0|[1-9][0-9]*)\.[0-9]{4}", (8, 16)),
    "raan": (r" *(?:0|[1-9][0-9]*)\.[0-9]{4}", (17, 25)),
    "eccentricity": (r"[0-9]{7}", (26, 33)),
    "arg_perigee": (r" *(?:0|[1-9][0-9]*)\.[0-9]{4}", (34, 42)),
    "mean_anomaly": (r" *(?:0|[1-9][0-9]*)\.[0-9]{4}", (43, 51)),
    "mean_motion": (r" *(?:0|[1-9][0-9]*)\.[0-9]{8}", (52, 63)),
    "rev_number": (_INT, (63, 68)),
}
_BLANKS1 = (1, 8, 17, 32, 43, 52, 61, 63)
_BLANKS2 = (1, 7, 16, 25, 33, 42, 51)


def _fields(line: str, spec: dict, blanks: Sequence[int], lineno: int) -> dict[str, str]:
    for i in blanks:
        if line[i] != " ":
            raise TleFieldError(f"line {lineno}: column {i + 1} must be blank, got {line[i]!r}")
    out = {}
    for name, (pattern, (a, b)) in spec.items():
        text = line[a:b]
        if not re.fullmatch(pattern, text):
            raise TleFieldError(f"line {lineno}: malformed {name} field {text!r}")
        out[name] = text
    return out


def _implied_decimal(text: str) -> float:
    """' 12345-3' -> 0.12345e-3 (leading sign, 5 mantissa digits, signed exponent)."""
    sign = -1.0 if text[0] == "-" else 1.0
    return sign * float("0." + text[1:6]) * 10.0 ** int(text[6:8])


def _check_line(line: str, marker: str) -> None:
    if len(line) != 69:
        raise TleLengthError(f"line {marker} has {len(line)} characters, expected 69")
    if line[0] != marker:
        raise TleLineMarkerError(f"line {marker} starts with {line[0]!r}")
    if not line[68].isdigit() or int(line[68]) != tle_checksum(line):
        raise TleChecksumError(
            f"line {marker} checksum {line[68]!r} != computed {tle_checksum(line)}")


def _tle_epoch(year2: str, day: str) -> datetime:
    y = int(year2)
    year = 2000 + y if y < 57 else 1900 + y
    return datetime(year, 1, 1, tzinfo=timezone.utc) + timedelta(days=float(day) - 1.0)


def parse_tle(name: str, line1: str, line2: str) -> Tle:
    """Parse one two-line element set.

    Strict fixed-column parsing: every numeric field must match its canonical
    layout and every separator column must be blank, so single-character
    corruption that slips past the checksum (e.g. '0' <-> ' ') is still caught.
    """
    line1 = line1.rstrip("\r\n")
    line2 = line2.rstrip("\r\n")
    _check_line(line1, "1")
    _check_line(line2, "2")
    f1 = _fields(line1, _FIXED, _BLANKS1, 1)
    f2 = _fields(line2, _FIXED2, _BLANKS2, 2)
    if f1["catalog"] != f2["catalog"]:
        raise TleCatalogMismatchError(
            f"catalog numbers differ: {f1['catalog']} vs {f2['catalog']}")

    epoch = _tle_epoch(f1["epoch_year"], f1["epoch_day"])
    day = float(f1["epoch_day"])
    if not 1.0 <= day < 367.0:
        raise TleFieldError(f"epoch day {day} out of range")
    try:
        elements = OrbitalElements(
            inclination=float(f2["inclination"]),
            raan=float(f2["raan"]),
            eccentricity=float("0." + f2["eccentricity"]),
            arg_perigee=float(f2["arg_perigee"]),
            mean_anomaly=float(f2["mean_anomaly"]),
            mean_motion=float(f2["mean_motion"]),
            bstar=_implied_decimal(f1["bstar"]),
            epoch=epoch,
        )
    except ValueError as exc:
        raise TleFieldError(str(exc)) from exc
    for key in ("raan", "arg_perigee", "mean_anomaly"):
        if not 0.0 <= getattr(elements, key) < 360.0:
            raise TleFieldError(f"{key} out of range")

    ndot_sign = -1.0 if f1["ndot"][0] == "-" else 1.0
    return Tle(
        name=name.strip(),
        line1=line1,
        line2=line2,
        parsed=elements,
        catalog_number=int(f1["catalog"]),
        classification=f1["classification"],
        international_designator=f1["intl"].strip(),
        element_set_number=int(f1["element_set"]),
        revolution_number=int(f2["rev_number"]),
        mean_motion_dot=ndot_sign * float(f1["ndot"][1:]),
        mean_motion_ddot=_implied_decimal(f1["nddot"]),
    )


def read_tle_file(path) -> list[Tle]:
    """Read a file of 2-line or 3-line (named) element sets."""
    with open(path, encoding="ascii") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh if ln.strip()]
    out = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("1 ") and i + 1 < len(lines) and lines[i + 1].startswith("2 "):
            out.append(parse_tle("", lines[i], lines[i + 1]))
            i += 2
        elif i + 2 < len(lines):
            name = lines[i][2:] if lines[i].startswith("0 ") else lines[i]
            out.append(parse_tle(name, lines[i + 1], lines[i + 2]))
            i += 3
        else:
            raise TleError(f"dangling line {i + 1} in {path}")
    return out


def _fmt_implied(x: float) -> str:
    if x == 0.0:
        return " 00000-0"
    sign = "-" if x < 0 else " "
    exp = math.floor(math.log10(abs(x))) + 1
    mant = round(abs(x) / 10.0**exp * 1e5)
    if mant >= 100000:
        mant //= 10
        exp += 1
    return f"{sign}{mant:05d}{'-' if exp < 0 else '+'}{abs(exp)}"


def format_tle(el: OrbitalElements, catalog_number: int = 99999,
               intl: str = "", element_set: int = 999, rev_number: int = 0) -> tuple[str, str]:
    """Write elements as a canonical pair of 69-column TLE lines."""
    start = datetime(el.epoch.year, 1, 1, tzinfo=timezone.utc)
    day = (el.epoch - start).total_seconds() / 86400.0 + 1.0
    l1 = (f"1 {catalog_number:05d}U {intl:<8.8s} {el.epoch.year % 100:02d}{day:012.8f} "
          f" .00000000  00000-0 {_fmt_implied(el.bstar)} 0 {element_set:4d}")
    ecc = f"{el.eccentricity:.7f}"[2:]
    l2 = (f"2 {catalog_number:05d} {el.inclination:8.4f} {el.raan:8.4f} {ecc} "
          f"{el.arg_perigee:8.4f} {el.mean_anomaly:8.4f} {el.mean_motion:11.8f}{rev_number:5d}")
    return l1 + str(tle_checksum(l1)), l2 + str(tle_checksum(l2))


# --- states -------------------------------------------------------------------

@dataclass(frozen=True)
class StateVector:
    """Inertial position (km) and velocity (km/s) at ``epoch`` seconds past ``anchor`` (UTC)."""

    epoch: float
    position: np.ndarray
    velocity: np.ndarray
    anchor: datetime = J2000

    def __post_init__(self):
        r = np.asarray(self.position, dtype=float).reshape(3)
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v)) and math.isfinite(self.epoch)):
            raise ValueError("state must be finite")
        object.__setattr__(self, "position", r)
        object.__setattr__(self, "velocity", v)

    @property
    def utc(self) -> datetime:
        return self.anchor + timedelta(seconds=self.epoch)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])

    @classmethod
    def from_array(cls, epoch: float, y, anchor: datetime = J2000) -> "StateVector":
        y = np.asarray(y, dtype=float)
        return cls(epoch, y[:3], y[3:6], anchor)


def _kepler_E(M: float, e: float) -> float:
    E = M if e < 0.8 else math.pi
    for _ in range(50):
        dE = (E - e * math.sin(E) - M) / (1.0 - e * math.cos(E))
        E -= dE
        if abs(dE) < 1e-15:
            break
    return E


def elements_to_state(el: OrbitalElements, anchor: datetime | None = None) -> StateVector:
    """Keplerian elements (taken as osculating) to an inertial state at the element epoch."""
    if el.eccentricity >= 1.0:
        raise HyperbolicOrbitError("hyperbolic elements")
    anchor = el.epoch if anchor is None else anchor
    a = el.semi_major_axis
    e = el.eccentricity
    i, raan, w, M = (math.radians(x) for x in
                     (el.inclination, el.raan, el.arg_perigee, el.mean_anomaly))
    E = _kepler_E(M, e)
    nu = 2.0 * math.atan2(math.sqrt(1 + e) * math.sin(E / 2), math.sqrt(1 - e) * math.cos(E / 2))
    p = a * (1.0 - e * e)
    r = p / (1.0 + e * math.cos(nu))
    r_pf = np.array([r * math.cos(nu), r * math.sin(nu), 0.0])
    v_pf = math.sqrt(MU_EARTH / p) * np.array([-math.sin(nu), e + math.cos(nu), 0.0])
    cO, sO, ci, si, cw, sw = (math.cos(raan), math.sin(raan), math.cos(i), math.sin(i),
                              math.cos(w), math.sin(w))
    rot = np.array([
        [cO * cw - sO * sw * ci, -cO * sw - sO * cw * ci, sO * si],
        [sO * cw + cO * sw * ci, -sO * sw + cO * cw * ci, -cO * si],
        [sw * si, cw * si, ci],
    ])
    epoch = (el.epoch - anchor).total_seconds()
    return StateVector(epoch, rot @ r_pf, rot @ v_pf, anchor)


def state_to_elements(x: StateVector) -> OrbitalElements:
    """Inverse of :func:`elements_to_state` (osculating Keplerian elements)."""
    r, v = x.position, x.velocity
    rn, vn = np.linalg.norm(r), np.linalg.norm(v)
    h = np.cross(r, v)
    hn = np.linalg.norm(h)
    node = np.cross([0.0, 0.0, 1.0], h)
    nn = np.linalg.norm(node)
    evec = ((vn**2 - MU_EARTH / rn) * r - (r @ v) * v) / MU_EARTH
    e = float(np.linalg.norm(evec))
    energy = vn**2 / 2 - MU_EARTH / rn
    if e >= 1.0 or energy >= 0:
        raise HyperbolicOrbitError("state is not on a bound orbit")
    a = -MU_EARTH / (2 * energy)
    inc = math.degrees(math.acos(np.clip(h[2] / hn, -1, 1)))

    def angle(u, w, sign_ref):
        c = np.clip(u @ w / (np.linalg.norm(u) * np.linalg.norm(w)), -1, 1)
        ang = math.acos(c)
        return 2 * math.pi - ang if sign_ref < 0 else ang

    # circular / equatorial fall-backs keep the angles well defined
    if nn > 1e-12:
        raan = math.atan2(node[1], node[0]) % (2 * math.pi)
    else:
        node = np.array([1.0, 0.0, 0.0])
        raan = 0.0
    if e > 1e-12:
        w = angle(node, evec, evec[2] if nn > 1e-12 else np.cross(node, evec)[2] * np.sign(h[2]))
        nu = angle(evec, r, r @ v)
    else:
        w = 0.0
        ref = node
        nu = angle(ref, r, (r[2] if nn > 1e-12 else np.cross(ref, r)[2] * np.sign(h[2])))
    E = 2 * math.atan2(math.sqrt(1 - e) * math.sin(nu / 2), math.sqrt(1 + e) * math.cos(nu / 2))
    M = (E - e * math.sin(E)) % (2 * math.pi)
    n = math.sqrt(MU_EARTH / a**3) * 86400.0 / (2 * math.pi)
    return OrbitalElements(inc, math.degrees(raan), e, math.degrees(w) % 360.0,
                           math.degrees(M), n, 0.0, x.utc)


# --- propagation ------------------------------------------------------------

def _accel(t, y, with_j2):
    x, yy, z = y[0], y[1], y[2]
    r2 = x * x + yy * yy + z * z
    r = math.sqrt(r2)
    k = -MU_EARTH / (r2 * r)
    ax, ay, az = k * x, k * yy, k * z
    if with_j2:
        f = 1.5 * J2 * MU_EARTH * R_EARTH**2 / (r2 * r2 * r)
        zz = 5.0 * z * z / r2
        ax += f * x * (zz - 1.0)
        ay += f * yy * (zz - 1.0)
        az += f * z * (zz - 3.0)
    return np.array([y[3], y[4], y[5], ax, ay, az])


class Propagator(Protocol):
    def propagate(self, x0: StateVector, t: float) -> StateVector: ...

    def propagate_many(self, x0: StateVector, times) -> np.ndarray: ...


@dataclass(frozen=True)
class TwoBodyJ2:
    """Adaptive DOP853 integration of point-mass gravity plus the J2 zonal term."""

    j2: bool = True
    rtol: float = 1e-12
    atol: float = 1e-10

    def _integrate(self, y0: np.ndarray, t0: float, times: np.ndarray) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        out = np.empty((times.size, 6))
        if times.size == 0:
            return out

        def hit_ground(t, y, *_):
            return y[0] ** 2 + y[1] ** 2 + y[2] ** 2 - R_EARTH**2

        hit_ground.terminal = True

        # integrate forwards and backwards separately from t0
        for mask, sign in ((times >= t0, 1.0), (times < t0, -1.0)):
            if not mask.any():
                continue
            ts = times[mask]
            order = np.argsort(sign * ts)
            span_end = ts[order[-1]]
            if span_end == t0:
                out[mask] = y0
                continue
            sol = solve_ivp(_accel, (t0, span_end), y0, method="DOP853", t_eval=ts[order],
                            rtol=self.rtol, atol=self.atol, args=(self.j2,), events=hit_ground)
            if sol.status == 1:
                raise ReentryError(f"trajectory reaches the Earth's surface at t={sol.t_events[0][0]:.1f}s")
            if not sol.success:
                raise RuntimeError(sol.message)
            res = np.empty((ts.size, 6))
            res[order] = sol.y.T
            out[mask] = res
        return out

    def propagate(self, x0: StateVector, t: float) -> StateVector:
        if t == x0.epoch:
            return x0
        y = self._integrate(x0.as_array(), x0.epoch, np.array([t]))[0]
        return StateVector.from_array(t, y, x0.anchor)

    def propagate_many(self, x0: StateVector, times) -> np.ndarray:
        """States at each of ``times`` as an ``(n, 6)`` array, one integration pass."""
        return self._integrate(x0.as_array(), x0.epoch, np.asarray(times, dtype=float))


@dataclass(frozen=True)
class ProcessModel:
    """Deterministic process model: propagator with identically-zero process noise."""

    propagator: Propagator = field(default_factory=TwoBodyJ2)
    process_noise: float = 0.0

    def __post_init__(self):
        if self.process_noise != 0.0:
            raise ValueError("process noise is fixed at zero")


def propagate(model: ProcessModel, x0: StateVector, t: float) -> StateVector:
    return model.propagator.propagate(x0, t)


# --- frames -------------------------------------------------------------------

def gmst(utc_seconds_since_j2000) -> np.ndarray:
    """Greenwich mean sidereal angle (rad), IAU-1982 expression with UT1 = UTC."""
    t = np.asarray(utc_seconds_since_j2000, dtype=float)
    tc = t / (86400.0 * 36525.0)
    sec = (67310.54841 + (876600.0 * 3600.0 + 8640184.812866) * tc
           + 0.093104 * tc**2 - 6.2e-6 * tc**3)
    return np.mod(sec, 86400.0) / 240.0 * (np.pi / 180.0)


def _utc_seconds(x: StateVector) -> float:
    return (x.anchor - J2000).total_seconds() + x.epoch


def eci_to_ecef_arrays(r_km, v_kms, utc_seconds_since_j2000):
    """Vectorised ECI (km, km/s) to ECEF (m, m/s); leading axes broadcast with the times."""
    th = gmst(utc_seconds_since_j2000)
    c, s = np.cos(th), np.sin(th)
    r = np.asarray(r_km, dtype=float) * 1e3
    v = np.asarray(v_kms, dtype=float) * 1e3
    xr = c * r[..., 0] + s * r[..., 1]
    yr = -s * r[..., 0] + c * r[..., 1]
    vx = c * v[..., 0] + s * v[..., 1]
    vy = -s * v[..., 0] + c * v[..., 1]
    # omega x r in the rotating frame
    vx = vx + OMEGA_EARTH * yr
    vy = vy - OMEGA_EARTH * xr
    pos = np.stack([xr, yr, r[..., 2]], axis=-1)
    vel = np.stack([vx, vy, v[..., 2]], axis=-1)
    return pos, vel


def eci_to_ecef(x: StateVector) -> tuple[np.ndarray, np.ndarray]:
    """ECEF position (m) and velocity (m/s) of an inertial state."""
    return eci_to_ecef_arrays(x.position, x.velocity, _utc_seconds(x))


def ecef_to_eci(pos_m, vel_ms, epoch: float, anchor: datetime = J2000) -> StateVector:
    th = float(gmst((anchor - J2000).total_seconds() + epoch))
    c, s = math.cos(th), math.sin(th)
    p = np.asarray(pos_m, dtype=float)
    v = np.asarray(vel_ms, dtype=float)
    v_in = v + np.array([-OMEGA_EARTH * p[1], OMEGA_EARTH * p[0], 0.0])
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return StateVector(epoch, rot @ p / 1e3, rot @ v_in / 1e3, anchor)
