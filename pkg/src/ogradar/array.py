"""
Phased-array tiles and narrowband (phase-only) beamforming.

Element positions are east/north/up metres from the array reference.  A
plane wave arriving from unit direction ``u`` reaches element ``n`` earlier
by ``p_n . u / c``, i.e. with delay ``tau_n = -p_n . u / c``; at baseband the
element sees ``s(t) exp(-j 2 pi f tau_n)``.  The steering weight carries the
same phase and the beamformer sums ``conj(w_n) x_n``, so an on-steer plane
wave adds coherently to amplitude ``N``.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .constants import SPEED_OF_LIGHT
from .geo import LookAngles, look_to_enu
from .waveform import IqSeries

ELEMENT_PATTERN_EXPONENT = 1.6
ELEMENT_PATTERN_FLOOR = 1e-3


@dataclass(frozen=True)
class ArrayLayout:
    elements: np.ndarray  # (count, 3) ENU metres

    def __post_init__(self):
        e = np.atleast_2d(np.asarray(self.elements, dtype=float))
        if e.ndim != 2 or e.shape[1] != 3 or e.shape[0] < 1:
            raise ValueError("layout needs at least one (east, north, up) element")
        if not np.all(np.isfinite(e)):
            raise ValueError("element positions must be finite")
        e.setflags(write=False)
        object.__setattr__(self, "elements", e)

    @property
    def count(self) -> int:
        return self.elements.shape[0]

    @property
    def aperture(self) -> float:
        """Largest element separation in metres."""
        if self.count == 1:
            return 0.0
        d = self.elements[:, None, :] - self.elements[None, :, :]
        return float(np.sqrt(np.max(np.sum(d**2, axis=-1))))

    @classmethod
    def random_disc(cls, count: int = 16, radius: float = 100.0, seed: int = 0) -> "ArrayLayout":
        """Uniformly random elements in a horizontal disc (default 16 in 200 m)."""
        rng = np.random.default_rng(seed)
        r = radius * np.sqrt(rng.uniform(size=count))
        phi = rng.uniform(0.0, 2 * np.pi, size=count)
        return cls(np.column_stack([r * np.cos(phi), r * np.sin(phi), np.zeros(count)]))

    @classmethod
    def from_file(cls, path) -> "ArrayLayout":
        """Plain text, one ``east north up`` line per element, ``#`` comments."""
        rows = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(parts)}")
            rows.append([float(v) for v in parts])
        if not rows:
            raise ValueError(f"{path}: no elements")
        return cls(np.array(rows))

    @classmethod
    def mwa_like(cls) -> "ArrayLayout":
        """Bundled 127-element layout spanning a ~3 km disc."""
        with resources.as_file(resources.files("ogradar.data") / "mwa_like_127.txt") as p:
            return cls.from_file(p)

    def to_file(self, path) -> None:
        lines = ["# east north up (m)"]
        lines += [" ".join(repr(float(v)) for v in row) for row in self.elements]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class SteeringVector:
    weights: np.ndarray
    direction: LookAngles
    frequency: float


@dataclass
class BeamSeries:
    series: IqSeries
    direction: LookAngles
    gain_reference: int  # element count

    @property
    def samples(self) -> np.ndarray:
        return self.series.samples

    @property
    def sample_rate(self) -> float:
        return self.series.sample_rate


def plane_wave_delays(layout: ArrayLayout, direction: LookAngles) -> np.ndarray:
    """Arrival delay (s) of each element relative to the array reference.

    ``direction`` may hold arrays of angles; the result is then
    ``(..., count)``.
    """
    u = look_to_enu(direction)
    return -(u @ layout.elements.T) / SPEED_OF_LIGHT


def steering_vector(layout: ArrayLayout, direction: LookAngles, f: float) -> SteeringVector:
    if not f > 0:
        raise ValueError("frequency must be positive")
    tau = plane_wave_delays(layout, direction)
    return SteeringVector(np.exp(-2j * np.pi * f * tau), direction, float(f))


def element_gain(elevation) -> np.ndarray | float:
    """Power gain of one tile: ``cos(zenith)^1.6``, floored below the horizon."""
    cz = np.sin(np.radians(np.asarray(elevation, dtype=float)))
    g = np.maximum(np.clip(cz, 0.0, 1.0) ** ELEMENT_PATTERN_EXPONENT, ELEMENT_PATTERN_FLOOR)
    return float(g) if g.ndim == 0 else g


def _stack(per_element: list[IqSeries]) -> tuple[np.ndarray, IqSeries]:
    if not per_element:
        raise ValueError("no element series")
    first = per_element[0]
    for s in per_element[1:]:
        if len(s) != len(first):
            raise ValueError("element series have different lengths")
        if s.sample_rate != first.sample_rate or s.start_time != first.start_time:
            raise ValueError("element series are not aligned in rate and time")
    return np.stack([s.samples for s in per_element]), first


def beamform(per_element: list[IqSeries], sv: SteeringVector) -> BeamSeries:
    x, first = _stack(per_element)
    if x.shape[0] != sv.weights.size:
        raise ValueError(f"{x.shape[0]} element series for {sv.weights.size} weights")
    y = np.conj(sv.weights) @ x
    return BeamSeries(IqSeries(y, first.sample_rate, first.carrier_freq, first.start_time,
                               first.polarization), sv.direction, x.shape[0])


def beam_power_image(per_element: list[IqSeries], layout: ArrayLayout, azimuths, elevations,
                     f: float | None = None, chunk: int = 4096) -> np.ndarray:
    """Mean beam power over an (elevation x azimuth) grid of directions.

    ``f`` defaults to the series carrier frequency.
    """
    x, first = _stack(per_element)
    az = np.atleast_1d(np.asarray(azimuths, dtype=float))
    el = np.atleast_1d(np.asarray(elevations, dtype=float))
    if az.size == 0 or el.size == 0:
        raise ValueError("empty direction grid")
    f = first.carrier_freq if f is None else f
    EL, AZ = np.meshgrid(el, az, indexing="ij")
    dirs = LookAngles(AZ.ravel(), EL.ravel())
    w = np.exp(-2j * np.pi * f * plane_wave_delays(layout, dirs))
    out = np.empty(w.shape[0])
    for i in range(0, w.shape[0], chunk):
        y = np.conj(w[i:i + chunk]) @ x
        out[i:i + chunk] = np.mean(np.abs(y) ** 2, axis=1)
    return out.reshape(EL.shape)


def half_power_beamwidth(layout: ArrayLayout, f: float, direction: LookAngles = LookAngles(0.0, 90.0),
                         span: float = 1.0, points: int = 4001) -> float:
    """Width (deg) of the main lobe above half power, scanned in elevation through ``direction``."""
    sv = steering_vector(layout, direction, f)
    offs = np.linspace(-span / 2, span / 2, points)
    el = direction.elevation + offs
    az = np.where(el > 90.0, direction.azimuth + 180.0, direction.azimuth) % 360.0
    el = np.where(el > 90.0, 180.0 - el, el)
    w = np.exp(-2j * np.pi * f * plane_wave_delays(layout, LookAngles(az, el)))
    p = np.abs(w @ np.conj(sv.weights)) ** 2 / layout.count**2
    centre = points // 2
    lo = centre
    while lo > 0 and p[lo] >= 0.5:
        lo -= 1
    hi = centre
    while hi < points - 1 and p[hi] >= 0.5:
        hi += 1
    if lo == 0 or hi == points - 1:
        raise ValueError("main lobe wider than the scan span")
    # linear interpolation of both half-power crossings
    x_lo = offs[lo] + (0.5 - p[lo]) / (p[lo + 1] - p[lo]) * (offs[lo + 1] - offs[lo])
    x_hi = offs[hi - 1] + (0.5 - p[hi - 1]) / (p[hi] - p[hi - 1]) * (offs[hi] - offs[hi - 1])
    return float(x_hi - x_lo)
