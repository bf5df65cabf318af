"""
File-based pipeline stages: capture I/O, per-CPI processing, IOD and SNR reports.

Every stage reads its inputs from, and writes its outputs to, a run
directory so stages can be re-run and inspected independently::

    <out>/capture/capture.json      manifest (rates, CPI schedule, scenario)
    <out>/capture/element_NNN.iq    one IQ container per array element
    <out>/capture/truth.csv         per-CPI truth log
    <out>/process/detections_<target>.csv
    <out>/process/beams.csv         surveillance/reference steering per CPI
    <out>/process/maps/cpi_NNN_<target>.ogdd   (optional)
    <out>/iod/measurements.csv, posterior.csv, prediction.csv,
             reacquisition.csv, diagnostics.csv
    <out>/snr/snr_report.csv
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import geo
from .array import beam_power_image, beamform, steering_vector
from .caf import (CafConfig, Detection, compute_caf, detect, doppler_to_range_rate, estimate_snr,
                  processing_gain, read_detections, write_detections, write_map)
from .constants import SPEED_OF_LIGHT
from .geo import GeodeticPos, LookAngles
from .iod import (ChainSettings, IodResult, Measurement, MeasurementNoise, NoPassError,
                  determine_orbit, predict_errors, reacquisition, write_measurements,
                  write_posterior)
from .scenario import (ElementCapture, Scenario, initial_state, read_truth, scenario_from_dict,
                       simulate_cpis, source_waveform, target_ecef, waveform_pad,
                       write_truth)
from .waveform import IQ_MAGIC, IQ_VERSION, IqSeries, channelize, recombine

log = logging.getLogger(__name__)

CAPTURE_FORMAT = "ogradar-capture"
_IQ_HEADER_BYTES = 4 + 8 + 8 + 8 + 8
BEAMS_HEADER = ["cpi_index", "epoch_s", "beam", "source", "azimuth_deg", "elevation_deg"]
SNR_HEADER = ["cpi_index", "epoch_s", "cpi_s", "bandwidth_hz", "beam_snr_db", "map_snr_db",
              "realized_gain_db", "processing_gain_db", "detected"]


class PipelineError(RuntimeError):
    """Missing or inconsistent run data."""


# --- capture files ---------------------------------------------------------------

def write_capture(s: Scenario, scenario_dict: dict, out_dir) -> Path:
    """Simulate CPI by CPI, streaming every element to its own IQ container."""
    cap = Path(out_dir) / "capture"
    cap.mkdir(parents=True, exist_ok=True)
    starts = s.cpi_starts()
    n_total = starts.size * s.samples_per_cpi
    files = []
    try:
        for e in range(s.layout.count):
            fh = open(cap / f"element_{e:03d}.iq", "wb")
            files.append(fh)
            fh.write(IQ_MAGIC + np.array([IQ_VERSION], "<u8").tobytes()
                     + np.array([s.sample_rate, s.band_center], "<f8").tobytes()
                     + np.array([n_total], "<u8").tobytes())
        truth = []
        for i, block, recs in simulate_cpis(s):
            for e, fh in enumerate(files):
                iq = np.empty(2 * block.shape[1], dtype="<f4")
                iq[0::2] = block[e].real
                iq[1::2] = block[e].imag
                fh.write(iq.tobytes())
            truth.extend(recs)
            log.info("simulated CPI %d/%d", i + 1, starts.size)
    finally:
        for fh in files:
            fh.close()
    write_truth(cap / "truth.csv", truth)
    manifest = {
        "format": CAPTURE_FORMAT, "version": 1,
        "sample_rate": s.sample_rate, "carrier": s.band_center, "cpi": s.cpi,
        "samples_per_cpi": s.samples_per_cpi, "cpi_starts": [float(t) for t in starts],
        "n_elements": s.layout.count, "scenario": scenario_dict,
    }
    (cap / "capture.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return cap


@dataclass
class Capture:
    path: Path
    manifest: dict
    scenario: Scenario
    truth: list = field(default_factory=list)

    @classmethod
    def open(cls, run_dir) -> "Capture":
        cap = Path(run_dir) / "capture"
        mf = cap / "capture.json"
        if not mf.exists():
            raise PipelineError(f"no capture found at {cap}")
        manifest = json.loads(mf.read_text())
        if manifest.get("format") != CAPTURE_FORMAT:
            raise PipelineError(f"{mf} is not a capture manifest")
        scenario = scenario_from_dict(manifest["scenario"])
        return cls(cap, manifest, scenario, read_truth(cap / "truth.csv"))

    @property
    def n_cpi(self) -> int:
        return len(self.manifest["cpi_starts"])

    @property
    def cpi(self) -> float:
        return float(self.manifest["cpi"])

    def window(self, i: int, duration: float | None = None) -> list[IqSeries]:
        """Element series of CPI ``i``, optionally only its first ``duration`` seconds."""
        fs = float(self.manifest["sample_rate"])
        n_cpi = int(self.manifest["samples_per_cpi"])
        n = n_cpi if duration is None else int(round(duration * fs))
        if n > n_cpi:
            raise PipelineError(f"requested {duration} s from a {self.cpi} s CPI")
        start = float(self.manifest["cpi_starts"][i])
        out = []
        for e in range(int(self.manifest["n_elements"])):
            path = self.path / f"element_{e:03d}.iq"
            if not path.exists():
                raise PipelineError(f"missing element file {path}")
            mm = np.memmap(path, dtype="<f4", mode="r", offset=_IQ_HEADER_BYTES)
            seg = np.asarray(mm[2 * i * n_cpi:2 * (i * n_cpi + n)], dtype=np.float64)
            out.append(IqSeries(seg[0::2] + 1j * seg[1::2], fs, float(self.manifest["carrier"]),
                                start))
        return out

    def to_element_capture(self) -> ElementCapture:
        wins = [self.window(i) for i in range(self.n_cpi)]
        elements = [IqSeries(np.concatenate([w[e].samples for w in wins]), w0.sample_rate,
                             w0.carrier_freq, w0.start_time)
                    for e, w0 in enumerate(wins[0])]
        return ElementCapture(elements, np.array(self.manifest["cpi_starts"]), self.cpi, self.truth)


# --- processing ----------------------------------------------------------------

@dataclass(frozen=True)
class ProcessingConfig:
    bandwidth: float = 100e3  # Hz, recombined band and CAF sample rate
    pfa: float = 1e-8
    max_range: float = 1.5e6  # m of bistatic range searched
    doppler_span: float = 8000.0  # Hz
    min_delay_bins: int = 3
    source: str | None = None  # illuminator; first source when unset
    cpi: float | None = None  # defaults to the capture CPI
    save_maps: bool = False

    def validate(self, capture_cpi: float) -> float:
        cpi = capture_cpi if self.cpi is None else self.cpi
        if cpi > capture_cpi + 1e-12:
            raise ValueError(f"processing cpi {cpi} s exceeds the captured {capture_cpi} s")
        if cpi * self.bandwidth < 1e3:
            raise ValueError(f"cpi * bandwidth = {cpi * self.bandwidth:g} is below 1000")
        if not 0 < self.pfa < 1:
            raise ValueError("pfa must be in (0, 1)")
        return cpi

    def caf_config(self, cpi: float) -> CafConfig:
        return CafConfig(cpi=cpi, max_delay=self.max_range / SPEED_OF_LIGHT,
                         doppler_span=self.doppler_span, bandwidth=self.bandwidth)


def _recombined(window: list[IqSeries], carrier: float, bandwidth: float) -> list[IqSeries]:
    return [recombine(channelize(x), carrier, bandwidth) for x in window]


def ephemeris_direction(s: Scenario, target_index: int, t: float) -> LookAngles:
    pos, _ = target_ecef(s.targets[target_index], s.epoch, [t])
    look = geo.look_angles(s.rx_site, pos[0])
    return LookAngles(float(np.atleast_1d(look.azimuth)[0]), float(np.atleast_1d(look.elevation)[0]))


def process_capture(run_dir, cfg: ProcessingConfig = ProcessingConfig()) -> dict[str, list[Detection]]:
    """Channelize, beamform, CAF and detect every CPI; write per-target detection CSVs."""
    cap = Capture.open(run_dir)
    s = cap.scenario
    cpi = cfg.validate(cap.cpi)
    src = s.source(cfg.source) if cfg.source else s.sources[0]
    caf_cfg = cfg.caf_config(cpi)
    out = Path(run_dir) / "process"
    (out / "maps").mkdir(parents=True, exist_ok=True)
    ref_dir = geo.look_angles(s.rx_site, src.site.to_ecef())
    ref_sv = steering_vector(s.layout, ref_dir, src.carrier)

    detections = {t.name: [] for t in s.targets}
    beams = []
    for i in range(cap.n_cpi):
        start = float(cap.manifest["cpi_starts"][i])
        mid = start + cpi / 2
        rec = _recombined(cap.window(i, cpi), src.carrier, cfg.bandwidth)
        ref = beamform(rec, ref_sv)
        beams.append([i, repr(mid), "reference", src.station_name, repr(ref_dir.azimuth),
                      repr(ref_dir.elevation)])
        for k, target in enumerate(s.targets):
            look = ephemeris_direction(s, k, mid)
            beams.append([i, repr(mid), target.name, src.station_name, repr(look.azimuth),
                          repr(look.elevation)])
            surv = beamform(rec, steering_vector(s.layout, look, src.carrier))
            m = compute_caf(ref, surv, caf_cfg, epoch=mid)
            dets = detect(m, cfg.pfa, min_delay_bins=cfg.min_delay_bins)
            detections[target.name].extend(dets)
            if cfg.save_maps:
                write_map(out / "maps" / f"cpi_{i:03d}_{target.name}.ogdd", m)
            log.info("CPI %d target %s: %d detections", i, target.name, len(dets))
    for name, dets in detections.items():
        write_detections(out / f"detections_{name}.csv", dets)
    with open(out / "beams.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BEAMS_HEADER)
        w.writerows(beams)
    meta = {"source": src.station_name, "carrier": src.carrier, "bandwidth": cfg.bandwidth,
            "cpi": cpi, "pfa": cfg.pfa}
    (out / "process.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return detections


def read_beams(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- IOD -------------------------------------------------------------------------

@dataclass(frozen=True)
class IodConfig:
    steps: int = 30_000
    burn_in: int = 10_000
    thin: int = 2
    chains: int = 2
    seed: int = 0
    range_bins: float = 1.0
    doppler_bins: float = 15.0
    sigma_az: float = 0.1
    sigma_el: float = 0.2
    horizon: float = 3 * 3600.0
    step: float = 60.0
    target: str | None = None
    sensor: GeodeticPos | None = None
    pass_time: float | None = None  # s past epoch of the sensor pass

    def chain_settings(self) -> ChainSettings:
        return ChainSettings(steps=self.steps, burn_in=self.burn_in, thin=self.thin)


def measurements_from_detections(detections: list[Detection], beams: list[dict], target: str,
                                 carrier: float) -> list[Measurement]:
    """Strongest detection per CPI, angles from that CPI's surveillance beam."""
    look = {float(b["epoch_s"]): b for b in beams if b["beam"] == target}
    best: dict[float, Detection] = {}
    for d in detections:
        if d.epoch not in best or d.snr > best[d.epoch].snr:
            best[d.epoch] = d
    out = []
    for epoch in sorted(best):
        d = best[epoch]
        b = look.get(epoch)
        if b is None:
            raise PipelineError(f"no beam record for detection at t={epoch}")
        out.append(Measurement(epoch, d.bistatic_range, doppler_to_range_rate(d.doppler, carrier),
                               float(b["azimuth_deg"]) % 360.0, float(b["elevation_deg"]),
                               b["source"]))
    return out


def run_iod(run_dir, cfg: IodConfig = IodConfig()) -> IodResult:
    run_dir = Path(run_dir)
    cap = Capture.open(run_dir)
    s = cap.scenario
    proc = run_dir / "process"
    meta_path = proc / "process.json"
    if not meta_path.exists():
        raise PipelineError(f"no processed run at {proc}")
    meta = json.loads(meta_path.read_text())
    target = cfg.target or s.targets[0].name
    det_path = proc / f"detections_{target}.csv"
    if not det_path.exists():
        raise PipelineError(f"missing {det_path}")
    z = measurements_from_detections(read_detections(det_path), read_beams(proc / "beams.csv"),
                                     target, meta["carrier"])
    return iod_from_measurements(run_dir, z, s, meta, cfg, target)


def iod_from_measurements(run_dir, z: list[Measurement], s: Scenario, meta: dict,
                          cfg: IodConfig, target: str) -> IodResult:
    out = Path(run_dir) / "iod"
    out.mkdir(parents=True, exist_ok=True)
    write_measurements(out / "measurements.csv", z)
    noise = MeasurementNoise.from_radar(meta["bandwidth"], meta["cpi"], meta["carrier"],
                                        cfg.range_bins, cfg.doppler_bins, cfg.sigma_az, cfg.sigma_el)
    res = determine_orbit(z, noise, s.geometries(), s.epoch, cfg.chain_settings(), cfg.chains,
                          cfg.seed)
    write_posterior(out / "posterior.csv", res.posterior)

    with open(out / "diagnostics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["chain", "acceptance_rate"] + [f"ess_{c}" for c in "xyzuvw"]
                   + [f"rhat_{c}" for c in "xyzuvw"])
        for k, ch in enumerate(res.chains):
            w.writerow([k, repr(ch.acceptance_rate)] + [repr(float(v)) for v in ch.ess]
                       + [repr(float(v)) for v in res.rhat])

    idx = [t.name for t in s.targets].index(target)
    truth = initial_state(s.targets[idx], s.epoch)
    report = predict_errors(res.posterior, truth, cfg.horizon, cfg.step, cfg.sensor,
                            keep_samples=False)
    report.write_csv(out / "prediction.csv")

    if cfg.sensor is not None and cfg.pass_time is not None:
        try:
            stare, fov = reacquisition(res.posterior, cfg.sensor, cfg.pass_time)
        except NoPassError as exc:
            log.warning("reacquisition skipped: %s", exc)
            stare = fov = float("nan")
        with open(out / "reacquisition.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sensor_lat_deg", "sensor_lon_deg", "sensor_height_m", "pass_time_s",
                        "stare_99_7_s", "fov_99_7_deg"])
            w.writerow([repr(cfg.sensor.latitude), repr(cfg.sensor.longitude),
                        repr(cfg.sensor.height), repr(float(cfg.pass_time)), repr(stare), repr(fov)])
    return res


# --- SNR report --------------------------------------------------------------------

@dataclass(frozen=True)
class SnrRow:
    cpi_index: int
    epoch: float
    cpi: float
    bandwidth: float
    beam_snr: float
    map_snr: float
    detected: bool

    @property
    def realized_gain(self) -> float:
        return self.map_snr - self.beam_snr


def in_band_fraction(s: Scenario, source_index: int, cpi_index: int, bandwidth: float) -> float:
    """Share of a CPI's transmitted power falling inside the recombined band."""
    offset = s.sources[source_index].carrier - s.band_center
    pad = waveform_pad(s.sample_rate)
    u = source_waveform(s, source_index, cpi_index, pad)[pad:pad + s.samples_per_cpi]
    power = np.abs(sfft.fft(u)) ** 2
    f = sfft.fftfreq(u.size, 1.0 / s.sample_rate)
    return float(power[np.abs(f - offset) <= bandwidth / 2].sum() / power.sum())


def snr_rows(cap: Capture, cpi: float, cfg: ProcessingConfig, target_index: int = 0,
             fraction_cache: dict | None = None) -> list[SnrRow]:
    """Beam-domain versus map-domain SNR for every CPI of a capture.

    Beam-domain SNR is the in-band echo power after coherent array gain
    (from the truth log) over the surveillance beam's measured power at the
    target direction.  Map-domain SNR is taken at the detection matching
    the truth cell, or at the truth cell itself when nothing was detected.
    Pass the same ``fraction_cache`` dict to calls for several CPI lengths
    to synthesize each transmitted waveform once.
    """
    s = cap.scenario
    cache = {} if fraction_cache is None else fraction_cache
    src_index = 0 if cfg.source is None else [x.station_name for x in s.sources].index(cfg.source)
    src = s.sources[src_index]
    target = s.targets[target_index]
    caf_cfg = cfg.caf_config(cpi)
    ref_sv = steering_vector(s.layout, geo.look_angles(s.rx_site, src.site.to_ecef()), src.carrier)
    n_el = s.layout.count
    rows = []
    for i in range(cap.n_cpi):
        truth = [r for r in cap.truth if r.cpi_index == i and r.source == src.station_name
                 and r.target == target.name]
        if not truth or not truth[0].visible:
            continue
        tr = truth[0]
        start = float(cap.manifest["cpi_starts"][i])
        rec = _recombined(cap.window(i, cpi), src.carrier, cfg.bandwidth)
        look = LookAngles(tr.azimuth, tr.elevation)
        ref = beamform(rec, ref_sv)
        surv = beamform(rec, steering_vector(s.layout, look, src.carrier))
        beam_power = beam_power_image(rec, s.layout, [tr.azimuth], [tr.elevation], src.carrier)[0, 0]
        key = (src_index, i, cfg.bandwidth)
        if key not in cache:
            cache[key] = in_band_fraction(s, src_index, i, cfg.bandwidth)
        p_echo = tr.echo_power * cache[key] * n_el**2
        beam_snr = 10 * np.log10(p_echo / beam_power)

        m = compute_caf(ref, surv, caf_cfg, epoch=start + cpi / 2)
        cell = (int(round(tr.bistatic_range / SPEED_OF_LIGHT * cfg.bandwidth)),
                int(round(tr.doppler * cpi)) + m.zero_doppler_bin)
        dets = [d for d in detect(m, cfg.pfa, min_delay_bins=cfg.min_delay_bins)
                if abs(d.delay_bin - cell[0]) <= 1 and abs(d.doppler_bin - cell[1]) <= 1]
        if dets:
            best = max(dets, key=lambda d: d.snr)
            map_snr = estimate_snr(m, (best.delay_bin, best.doppler_bin))
        else:
            map_snr = estimate_snr(m, cell)
        rows.append(SnrRow(i, start + cpi / 2, cpi, cfg.bandwidth, float(beam_snr), float(map_snr),
                           bool(dets)))
    return rows


def write_snr_report(path, rows: list[SnrRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SNR_HEADER)
        for r in rows:
            w.writerow([r.cpi_index, repr(r.epoch), repr(r.cpi), repr(r.bandwidth), repr(r.beam_snr),
                        repr(r.map_snr), repr(r.realized_gain),
                        repr(processing_gain(r.bandwidth, r.cpi)), int(r.detected)])


def read_snr_report(path) -> list[SnrRow]:
    with open(path, newline="") as fh:
        return [SnrRow(int(r["cpi_index"]), float(r["epoch_s"]), float(r["cpi_s"]),
                       float(r["bandwidth_hz"]), float(r["beam_snr_db"]), float(r["map_snr_db"]),
                       r["detected"] == "1") for r in csv.DictReader(fh)]
