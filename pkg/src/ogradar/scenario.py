"""
End-to-end synthetic capture: FM illuminators, array elements, orbiting targets.

Capture is organised in coherent processing intervals (CPIs).  Geometry is
evaluated at each CPI midpoint and held fixed across it: the echo envelope
is delayed by a constant fractional delay and shifted by a constant
Doppler frequency.  CPIs may be contiguous or spaced ``cpi_interval``
apart; only the CPI windows are synthesised, stored back to back.

Each source's waveform is time-referenced to its own direct-path arrival
at the array, so the direct path has zero envelope delay and an echo
arrives ``bistatic_range / c`` later.  Carrier phases use the full path
length.

Received powers follow the free-space and bistatic radar equations with
an element power pattern ``G0 cos(zenith)^1.6`` (``G0 = 2 * 2.6`` for that
pattern's directivity) floored at 1e-3 of unity below the horizon.  Direct
paths additionally suffer a per-source excess loss standing in for
beyond-horizon diffraction.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import numpy as np
import scipy.fft as sfft

from . import geo
from .array import ELEMENT_PATTERN_EXPONENT, ArrayLayout, element_gain, plane_wave_delays
from .constants import BOLTZMANN, MU_EARTH, SPEED_OF_LIGHT
from .geo import BistaticGeometry, GeodeticPos, LookAngles
from .iod import Measurement
from .orbit import (OrbitalElements, ProcessModel, StateVector, Tle, ecef_to_eci,
                    eci_to_ecef_arrays, elements_to_state, parse_tle)
from .waveform import FmSource, IqSeries, synthesize_fm

log = logging.getLogger(__name__)

MWA_SITE = GeodeticPos(-26.703319, 116.670815, 377.8)
GERALDTON_SITE = GeodeticPos(-28.70, 114.69, 300.0)
PERTH_SITE = GeodeticPos(-32.0, 115.95, 400.0)
DEFAULT_EPOCH = datetime(2015, 4, 15, 12, 0, tzinfo=timezone.utc)
ELEMENT_PEAK_GAIN = 2.0 * (ELEMENT_PATTERN_EXPONENT + 1.0)
DEFAULT_EXCESS_LOSS_DB = 45.0
FRACTIONAL_DELAY_TAPS = 16
# Longest echo path synthesised; fixes the waveform padding so targets never alter the transmitted signal.
MAX_BISTATIC_RANGE = 6.0e6  # m

TRUTH_HEADER = ["cpi_index", "epoch_s", "target", "source", "bistatic_range_m", "range_rate_mps",
                "doppler_hz", "azimuth_deg", "elevation_deg", "echo_power_w", "direct_power_w",
                "visible"]

GERALDTON = FmSource("geraldton", 97.7e6, 100e3, 10e3, GERALDTON_SITE, DEFAULT_EXCESS_LOSS_DB)
PERTH = FmSource("perth", 98.3e6, 100e3, 100e3, PERTH_SITE, DEFAULT_EXCESS_LOSS_DB)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Target:
    orbit: Tle | StateVector
    rcs: float = 400.0  # m^2
    name: str = "target"

    def __post_init__(self):
        if self.rcs < 0:
            raise ScenarioError("rcs must be non-negative")


@dataclass(frozen=True)
class Scenario:
    epoch: datetime
    sources: tuple[FmSource, ...]
    rx_site: GeodeticPos
    layout: ArrayLayout
    targets: tuple[Target, ...]
    duration: float
    noise_temperature: float = 500.0  # K
    seed: int = 0
    band_center: float = 98.0e6
    sample_rate: float = 2.56e6
    cpi: float = 1.0
    cpi_interval: float | None = None  # None: CPIs back to back

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if not self.sources:
            raise ScenarioError("at least one source is required")
        if self.noise_temperature < 0:
            raise ScenarioError("noise temperature must be non-negative")
        if not self.cpi > 0 or self.cpi > self.duration:
            raise ScenarioError("cpi must be positive and no longer than the duration")
        if self.cpi_interval is not None and self.cpi_interval < self.cpi:
            raise ScenarioError("cpi_interval must be at least one cpi")
        n = self.cpi * self.sample_rate
        if abs(n - round(n)) > 1e-6:
            raise ScenarioError("cpi must be a whole number of samples")
        sites = [self.rx_site] + [s.site for s in self.sources]
        if len(set(sites)) != len(sites):
            raise ScenarioError("receiver and source sites must be distinct")
        names = [s.station_name for s in self.sources]
        if len(set(names)) != len(names):
            raise ScenarioError("station names must be unique")
        for s in self.sources:
            if abs(s.carrier - self.band_center) + s.bandwidth / 2 > self.sample_rate / 2:
                raise ScenarioError(f"{s.station_name} lies outside the simulated band")

    @property
    def samples_per_cpi(self) -> int:
        return int(round(self.cpi * self.sample_rate))

    def cpi_starts(self) -> np.ndarray:
        step = self.cpi if self.cpi_interval is None else self.cpi_interval
        n = int(math.floor((self.duration - self.cpi) / step + 1e-9)) + 1
        return np.arange(n) * step

    def geometries(self) -> dict[str, BistaticGeometry]:
        rx = self.rx_site.to_ecef()
        return {s.station_name: BistaticGeometry(s.site.to_ecef(), rx) for s in self.sources}

    def source(self, name: str) -> FmSource:
        for s in self.sources:
            if s.station_name == name:
                return s
        raise KeyError(f"unknown source {name!r}")


@dataclass(frozen=True)
class TruthRecord:
    cpi_index: int
    epoch: float  # s past the scenario epoch, CPI midpoint
    target: str
    source: str
    bistatic_range: float  # m
    range_rate: float  # m/s
    doppler: float  # Hz
    azimuth: float  # deg at the receiver
    elevation: float
    echo_power: float  # W per element
    direct_power: float  # W per element
    visible: bool


@dataclass
class ElementCapture:
    """Per-element series holding every CPI window back to back."""

    elements: list[IqSeries]
    cpi_starts: np.ndarray
    cpi: float
    truth: list[TruthRecord] = field(default_factory=list)

    @property
    def samples_per_cpi(self) -> int:
        return int(round(self.cpi * self.elements[0].sample_rate))

    def window(self, i: int) -> list[IqSeries]:
        n = self.samples_per_cpi
        return [IqSeries(e.samples[i * n:(i + 1) * n], e.sample_rate, e.carrier_freq,
                         float(self.cpi_starts[i]), e.polarization) for e in self.elements]


# --- physics ---------------------------------------------------------------------

def rx_gain(elevation) -> np.ndarray | float:
    return ELEMENT_PEAK_GAIN * element_gain(elevation)


def direct_path_power(source: FmSource, rx_site: GeodeticPos) -> float:
    """Power (W) of the direct signal at one element."""
    tx = source.site.to_ecef()
    dist = np.linalg.norm(tx - rx_site.to_ecef())
    lam = SPEED_OF_LIGHT / source.carrier
    el = geo.look_angles(rx_site, tx).elevation
    return float(source.eirp * rx_gain(el) * lam**2 / ((4 * np.pi * dist) ** 2)
                 * 10 ** (-source.excess_loss_db / 10))


def echo_power(source: FmSource, rcs: float, rt: float, rr: float, elevation: float) -> float:
    """Bistatic radar equation: echo power (W) at one element."""
    lam = SPEED_OF_LIGHT / source.carrier
    return float(source.eirp * rcs * rx_gain(elevation) * lam**2 / ((4 * np.pi) ** 3 * rt**2 * rr**2))


def noise_power(temperature: float, sample_rate: float) -> float:
    return BOLTZMANN * temperature * sample_rate


def fractional_delay(u: np.ndarray, delay: float, start: int, n: int,
                     taps: int = FRACTIONAL_DELAY_TAPS) -> np.ndarray:
    """``u`` evaluated at ``start + k - delay`` for ``k < n`` with a windowed-sinc kernel."""
    whole = int(math.floor(delay))
    frac = delay - whole
    k = np.arange(-(taps // 2) + 1, taps // 2 + 1)
    x = k - frac
    h = np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / (taps / 2)))
    base = start - whole
    if base - k[-1] < 0 or base - k[0] + n > u.size:
        raise ScenarioError("fractional delay reaches outside the synthesised waveform")
    out = np.zeros(n, dtype=complex)
    for kk, hk in zip(k, h):
        out += hk * u[base - kk:base - kk + n]
    return out


def iss_like_pass(epoch: datetime = DEFAULT_EPOCH, rx_site: GeodeticPos = MWA_SITE,
                  pass_time: float = 60.0, altitude: float = 420e3,
                  west_offset: float = 1.0) -> StateVector:
    """Near-circular 51.6 deg ascending orbit passing ``west_offset`` deg west of the site.

    The satellite is at ``altitude`` above that point at ``pass_time``
    seconds after ``epoch``; the returned state is at that instant.
    """
    p = geo.geodetic_to_ecef(lat=rx_site.latitude, lon=rx_site.longitude - west_offset, h=altitude)
    r = ecef_to_eci(p, np.zeros(3), pass_time, epoch).position
    rn = float(np.linalg.norm(r))
    phi = math.asin(r[2] / rn)
    alpha = math.atan2(r[1], r[0])
    inc = math.radians(51.6)
    u = math.asin(math.sin(phi) / math.sin(inc))
    raan = alpha - math.atan2(math.cos(inc) * math.sin(u), math.cos(u))
    n = math.sqrt(MU_EARTH / rn**3) * 86400 / (2 * math.pi)
    el = OrbitalElements(51.6, math.degrees(raan) % 360, 0.0005, 0.0, math.degrees(u) % 360, n,
                         0.0, datetime.fromtimestamp(epoch.timestamp() + pass_time, timezone.utc))
    return elements_to_state(el, epoch)


def initial_state(target: Target, epoch: datetime) -> StateVector:
    if isinstance(target.orbit, Tle):
        return elements_to_state(target.orbit.parsed, epoch)
    if target.orbit.anchor != epoch:
        shift = (target.orbit.anchor - epoch).total_seconds()
        return StateVector(target.orbit.epoch + shift, target.orbit.position,
                           target.orbit.velocity, epoch)
    return target.orbit


def target_ecef(target: Target, epoch: datetime, times, model: ProcessModel | None = None):
    """ECEF position (m) and velocity (m/s) of a target at ``times`` past ``epoch``."""
    model = model or ProcessModel()
    x0 = initial_state(target, epoch)
    states = model.propagator.propagate_many(x0, np.asarray(times, dtype=float))
    utc = (epoch - datetime(2000, 1, 1, 12, tzinfo=timezone.utc)).total_seconds() + np.asarray(times)
    return eci_to_ecef_arrays(states[:, :3], states[:, 3:], utc)


def truth_log(s: Scenario, model: ProcessModel | None = None) -> list[TruthRecord]:
    mids = s.cpi_starts() + s.cpi / 2
    rx = s.rx_site.to_ecef()
    records = []
    for target in s.targets:
        pos, vel = target_ecef(target, s.epoch, mids, model)
        look = geo.look_angles(s.rx_site, pos)
        for src in s.sources:
            geom = BistaticGeometry(src.site.to_ecef(), rx)
            rb = np.atleast_1d(geo.bistatic_range(geom, pos))
            rdot = np.atleast_1d(geo.bistatic_range_rate(geom, pos, vel))
            rt = np.linalg.norm(pos - geom.tx, axis=-1)
            rr = np.linalg.norm(pos - geom.rx, axis=-1)
            tx_el = geo.look_angles(src.site, pos).elevation
            visible = (np.atleast_1d(look.elevation) > 0) & (np.atleast_1d(tx_el) > 0)
            p_dir = direct_path_power(src, s.rx_site)
            for i in range(mids.size):
                el_i = float(np.atleast_1d(look.elevation)[i])
                p_echo = echo_power(src, target.rcs, rt[i], rr[i], el_i) if visible[i] else 0.0
                records.append(TruthRecord(
                    i, float(mids[i]), target.name, src.station_name, float(rb[i]), float(rdot[i]),
                    float(-rdot[i] * src.carrier / SPEED_OF_LIGHT),
                    float(np.atleast_1d(look.azimuth)[i]), el_i, p_echo, p_dir, bool(visible[i])))
    for target in s.targets:
        if not any(r.visible for r in records if r.target == target.name):
            warnings.warn(f"target {target.name!r} is below the horizon for the whole run; "
                          "no echo injected", RuntimeWarning, stacklevel=2)
    return records


# --- synthesis ---------------------------------------------------------------------

def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _element_phases(layout: ArrayLayout, direction: LookAngles, f: float) -> np.ndarray:
    return np.exp(-2j * np.pi * f * plane_wave_delays(layout, direction))


def waveform_pad(sample_rate: float) -> int:
    return int(math.ceil(MAX_BISTATIC_RANGE / SPEED_OF_LIGHT * sample_rate)) + FRACTIONAL_DELAY_TAPS


def source_waveform(s: Scenario, source_index: int, cpi_index: int, pad: int) -> np.ndarray:
    """Transmitted baseband of one source over a CPI plus at least ``pad`` samples each side.

    Shifted to the source's offset from the band centre; the time origin is
    sample ``pad``.  The tail is stretched to an FFT-friendly length.
    """
    src = s.sources[source_index]
    fs, n = s.sample_rate, s.samples_per_cpi
    total = sfft.next_fast_len(n + 2 * pad)
    fm = synthesize_fm(src, total / fs, _seed(s.seed, 1, source_index, cpi_index),
                       sample_rate=fs)
    tt = (np.arange(fm.samples.size) - pad) / fs
    return fm.samples * np.exp(2j * np.pi * (src.carrier - s.band_center) * tt)


def simulate_cpis(s: Scenario, model: ProcessModel | None = None) -> Iterator[tuple[int, np.ndarray, list[TruthRecord]]]:
    """Yield ``(cpi_index, block, truth)`` per CPI; ``block`` is ``(elements, samples)`` complex64."""
    truth = truth_log(s, model)
    starts = s.cpi_starts()
    fs, n = s.sample_rate, s.samples_per_cpi
    rx = s.rx_site.to_ecef()
    n_el = s.layout.count
    src_dirs = {src.station_name: geo.look_angles(s.rx_site, src.site.to_ecef()) for src in s.sources}
    pad = waveform_pad(fs)
    if any(r.visible and r.bistatic_range > MAX_BISTATIC_RANGE for r in truth):
        raise ScenarioError(f"echo path longer than {MAX_BISTATIC_RANGE / 1e3:.0f} km")
    sigma = math.sqrt(noise_power(s.noise_temperature, fs) / 2)

    for i, t0 in enumerate(starts):
        block = np.zeros((n_el, n), dtype=complex)
        t_local = np.arange(n) / fs
        for j, src in enumerate(s.sources):
            length = np.linalg.norm(src.site.to_ecef() - rx)
            u = source_waveform(s, j, i, pad)

            phase0 = -2 * np.pi * s.band_center * length / SPEED_OF_LIGHT
            direct = math.sqrt(direct_path_power(src, s.rx_site)) * np.exp(1j * phase0) * u[pad:pad + n]
            block += _element_phases(s.layout, src_dirs[src.station_name], src.carrier)[:, None] * direct

            for rec in truth:
                if rec.cpi_index != i or rec.source != src.station_name or not rec.visible:
                    continue
                if rec.echo_power == 0.0:
                    continue
                tau = rec.bistatic_range / SPEED_OF_LIGHT
                env = fractional_delay(u, tau * fs, pad, n)
                ph = (phase0 - 2 * np.pi * s.band_center * tau
                      + 2 * np.pi * rec.doppler * (t_local - s.cpi / 2))
                echo = math.sqrt(rec.echo_power) * env * np.exp(1j * ph)
                w = _element_phases(s.layout, LookAngles(rec.azimuth, rec.elevation), src.carrier)
                block += w[:, None] * echo[None, :]
        if sigma > 0:
            for e in range(n_el):
                rng = np.random.default_rng(_seed(s.seed, 2, e, i))
                block[e] += sigma * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        yield i, block.astype(np.complex64), [r for r in truth if r.cpi_index == i]


def simulate(s: Scenario, model: ProcessModel | None = None) -> ElementCapture:
    blocks, truth = [], []
    for _, block, recs in simulate_cpis(s, model):
        blocks.append(block)
        truth.extend(recs)
    data = np.concatenate(blocks, axis=1)
    starts = s.cpi_starts()
    elements = [IqSeries(data[e], s.sample_rate, s.band_center, float(starts[0]))
                for e in range(s.layout.count)]
    return ElementCapture(elements, starts, s.cpi, truth)


def truth_measurements(e: ElementCapture | list[TruthRecord], geometry_id: str,
                       target: str | None = None) -> list[Measurement]:
    """Noise-free measurements from the truth log for one source (geometry)."""
    records = e.truth if isinstance(e, ElementCapture) else e
    sources = {r.source for r in records}
    if records and geometry_id not in sources:
        raise KeyError(f"unknown geometry {geometry_id!r}; have {sorted(sources)}")
    return [Measurement(r.epoch, r.bistatic_range, r.range_rate, r.azimuth, r.elevation, r.source)
            for r in records
            if r.source == geometry_id and r.visible and (target is None or r.target == target)]


# --- persistence -----------------------------------------------------------------

def write_truth(path, records: list[TruthRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRUTH_HEADER)
        for r in records:
            w.writerow([r.cpi_index, repr(r.epoch), r.target, r.source, repr(r.bistatic_range),
                        repr(r.range_rate), repr(r.doppler), repr(r.azimuth), repr(r.elevation),
                        repr(r.echo_power), repr(r.direct_power), int(r.visible)])


def read_truth(path) -> list[TruthRecord]:
    with open(path, newline="") as fh:
        return [TruthRecord(int(r["cpi_index"]), float(r["epoch_s"]), r["target"], r["source"],
                            float(r["bistatic_range_m"]), float(r["range_rate_mps"]),
                            float(r["doppler_hz"]), float(r["azimuth_deg"]),
                            float(r["elevation_deg"]), float(r["echo_power_w"]),
                            float(r["direct_power_w"]), r["visible"] == "1")
                for r in csv.DictReader(fh)]


def _site(d: dict) -> GeodeticPos:
    return GeodeticPos(float(d["latitude"]), float(d["longitude"]), float(d.get("height", 0.0)))


def _layout(d: dict, base: Path) -> ArrayLayout:
    kind = d.get("kind", "random_disc")
    if kind == "random_disc":
        return ArrayLayout.random_disc(int(d.get("count", 16)), float(d.get("radius", 100.0)),
                                       int(d.get("seed", 0)))
    if kind == "mwa_like":
        return ArrayLayout.mwa_like()
    if kind == "file":
        return ArrayLayout.from_file(base / d["path"])
    raise ScenarioError(f"unknown layout kind {kind!r}")


def _target(d: dict, epoch: datetime, rx: GeodeticPos) -> Target:
    rcs = float(d.get("rcs", 400.0))
    name = d.get("name", "target")
    if "tle" in d:
        lines = d["tle"]
        orbit = parse_tle(*lines) if len(lines) == 3 else parse_tle(name, *lines)
    elif "state" in d:
        st = d["state"]
        orbit = StateVector(float(st["epoch"]), st["position_km"], st["velocity_kmps"], epoch)
    elif "iss_like_pass" in d:
        opts = d["iss_like_pass"] or {}
        orbit = iss_like_pass(epoch, rx, **{k: float(v) for k, v in opts.items()})
    else:
        raise ScenarioError(f"target {name!r} needs one of 'tle', 'state', 'iss_like_pass'")
    return Target(orbit, rcs, name)


def _source(d: dict) -> FmSource:
    return FmSource(d["station_name"], float(d["carrier"]), float(d.get("bandwidth", 100e3)),
                    float(d.get("eirp", 10e3)), _site(d["site"]),
                    float(d.get("excess_loss_db", DEFAULT_EXCESS_LOSS_DB)))


def _parse_epoch(text: str) -> datetime:
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return dt if dt.tzinfo else dt.replace(tzinfo=timezone.utc)


def scenario_from_dict(d: dict, base: Path | str = ".") -> Scenario:
    """Build a scenario from its JSON form; see the README for the schema."""
    base = Path(base)
    try:
        epoch = _parse_epoch(d.get("epoch", DEFAULT_EPOCH.isoformat()))
        rx = _site(d["rx_site"]) if "rx_site" in d else MWA_SITE
        sources = [_source(s) for s in d["sources"]] if "sources" in d else [GERALDTON]
        targets = [_target(t, epoch, rx) for t in d.get("targets", [])]
        interval = d.get("cpi_interval")
        return Scenario(
            epoch=epoch, sources=tuple(sources), rx_site=rx,
            layout=_layout(d.get("layout", {}), base), targets=tuple(targets),
            duration=float(d["duration"]),
            noise_temperature=float(d.get("noise_temperature", 500.0)),
            seed=int(d.get("seed", 0)), band_center=float(d.get("band_center", 98.0e6)),
            sample_rate=float(d.get("sample_rate", 2.56e6)), cpi=float(d.get("cpi", 1.0)),
            cpi_interval=None if interval is None else float(interval))
    except KeyError as exc:
        raise ScenarioError(f"missing scenario field {exc}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(json.loads(path.read_text()), path.parent)


def default_scenario_dict() -> dict:
    """Desk-scale version of the reference experiment: one Geraldton-like source, one ISS-like pass."""
    return {
        "epoch": DEFAULT_EPOCH.isoformat().replace("+00:00", "Z"),
        "seed": 0,
        "duration": 120.0,
        "noise_temperature": 500.0,
        "band_center": 98.0e6,
        "sample_rate": 1.28e6,
        "cpi": 0.5,
        "cpi_interval": 10.0,
        "rx_site": {"latitude": MWA_SITE.latitude, "longitude": MWA_SITE.longitude,
                    "height": MWA_SITE.height},
        "layout": {"kind": "random_disc", "count": 16, "radius": 100.0, "seed": 0},
        "sources": [{
            "station_name": GERALDTON.station_name, "carrier": GERALDTON.carrier,
            "bandwidth": GERALDTON.bandwidth, "eirp": GERALDTON.eirp,
            "site": {"latitude": GERALDTON_SITE.latitude, "longitude": GERALDTON_SITE.longitude,
                     "height": GERALDTON_SITE.height},
            "excess_loss_db": GERALDTON.excess_loss_db}],
        "targets": [{"name": "iss", "rcs": 400.0, "iss_like_pass": {"pass_time": 60.0}}],
    }


def with_target_rcs(s: Scenario, rcs: float) -> Scenario:
    return replace(s, targets=tuple(replace(t, rcs=rcs) for t in s.targets))
