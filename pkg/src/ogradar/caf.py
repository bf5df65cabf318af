"""
Cross-ambiguity (delay-Doppler) processing, SNR estimation and CFAR detection.

The map cell at delay bin ``d`` and Doppler offset ``k`` is

    |sum_t surv[t] conj(ref[t - d]) exp(-j 2 pi k t / N)|^2

over one CPI of ``N`` samples, with the reference taken as zero before the
start of the CPI.  The sample rate equals the processing bandwidth, so one
delay bin is ``1 / bandwidth`` seconds and one Doppler bin ``1 / cpi`` Hz.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.ndimage import maximum_filter

from .constants import SPEED_OF_LIGHT

RIDGE_HALF_WIDTH = 2  # zero-Doppler bins masked each side
FLOOR_CLIP = 10.0  # cells above this multiple of the median are left out of the floor
CFAR_TRAIN = 16
CFAR_GUARD = 2
DETECTION_HEADER = ["epoch", "delay_bin", "doppler_bin", "bistatic_range_m", "doppler_hz", "snr_db",
                    "delay_offset_bins", "doppler_offset_bins"]

MAP_MAGIC = b"OGDD"
MAP_VERSION = 1
_MAP_HEADER = struct.Struct("<4sQQQddQdd")

_TINY = 1e-300


@dataclass(frozen=True)
class CafConfig:
    cpi: float  # s
    max_delay: float  # s
    doppler_span: float  # Hz
    bandwidth: float  # Hz, equal to the input sample rate

    def __post_init__(self):
        if not self.cpi > 0:
            raise ValueError("cpi must be positive")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.max_delay < 0 or self.doppler_span <= 0:
            raise ValueError("max_delay must be >= 0 and doppler_span > 0")
        if self.n_doppler > self.n_samples:
            raise ValueError("Doppler span exceeds the sample rate")

    @property
    def n_samples(self) -> int:
        return int(round(self.cpi * self.bandwidth))

    @property
    def n_delay(self) -> int:
        return max(int(round(self.max_delay * self.bandwidth)), 1)

    @property
    def n_doppler(self) -> int:
        return max(int(round(self.doppler_span * self.cpi)), 1)

    @property
    def zero_doppler_bin(self) -> int:
        return self.n_doppler // 2

    @property
    def delay_res(self) -> float:
        return 1.0 / self.bandwidth

    @property
    def doppler_res(self) -> float:
        return 1.0 / self.cpi


@dataclass
class DelayDopplerMap:
    power: np.ndarray  # (delay, Doppler) dB
    delay_res: float  # s
    doppler_res: float  # Hz
    zero_doppler_bin: int
    noise_floor: float  # dB
    epoch: float = 0.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape

    def linear(self) -> np.ndarray:
        return 10.0 ** (self.power / 10.0)

    def doppler_axis(self) -> np.ndarray:
        return (np.arange(self.power.shape[1]) - self.zero_doppler_bin) * self.doppler_res

    def delay_axis(self) -> np.ndarray:
        return np.arange(self.power.shape[0]) * self.delay_res

    @classmethod
    def from_linear(cls, power, delay_res, doppler_res, zero_doppler_bin, epoch=0.0):
        p = np.asarray(power, dtype=float)
        db = 10.0 * np.log10(np.maximum(p, _TINY))
        m = cls(db, delay_res, doppler_res, zero_doppler_bin, 0.0, epoch)
        m.noise_floor = noise_floor(m)
        return m


@dataclass(frozen=True)
class Detection:
    delay_bin: int
    doppler_bin: int
    bistatic_range: float  # m
    doppler: float  # Hz
    snr: float  # dB over the CFAR noise estimate
    epoch: float
    delay_offset: float = 0.0  # parabolic sub-bin refinement, bins
    doppler_offset: float = 0.0


def _samples(x) -> np.ndarray:
    return np.asarray(getattr(x, "samples", x))


def _check_inputs(reference, surveillance, cfg: CafConfig) -> tuple[np.ndarray, np.ndarray]:
    for s in (reference, surveillance):
        rate = getattr(s, "sample_rate", None)
        if rate is not None and not np.isclose(rate, cfg.bandwidth):
            raise ValueError(f"series rate {rate} Hz does not match bandwidth {cfg.bandwidth} Hz")
    ref, surv = _samples(reference), _samples(surveillance)
    n = cfg.n_samples
    if ref.size < n or surv.size < n:
        raise ValueError(f"CPI needs {n} samples, series have {ref.size} and {surv.size}")
    if cfg.n_delay > n:
        raise ValueError("max delay exceeds the CPI")
    return ref[:n].astype(complex), surv[:n].astype(complex)


def _doppler_columns(cfg: CafConfig) -> np.ndarray:
    return (np.arange(cfg.n_doppler) - cfg.zero_doppler_bin) % cfg.n_samples


def caf_power(reference, surveillance, cfg: CafConfig, chunk_elems: int = 1 << 22) -> np.ndarray:
    """Linear-power cross-ambiguity surface, shape ``(n_delay, n_doppler)``.

    Delay lags are formed in batches and transformed along time with one
    FFT per lag; batches are sized to stay within ``chunk_elems`` samples.
    """
    ref, surv = _check_inputs(reference, surveillance, cfg)
    n, nd = cfg.n_samples, cfg.n_delay
    cols = _doppler_columns(cfg)
    out = np.empty((nd, cfg.n_doppler))
    step = max(1, chunk_elems // n)
    ref_pad = np.concatenate([np.zeros(nd, dtype=complex), np.conj(ref)])
    t = np.arange(n)
    for d0 in range(0, nd, step):
        d = np.arange(d0, min(d0 + step, nd))
        lagged = ref_pad[nd - d[:, None] + t[None, :]]
        spec = sfft.fft(surv[None, :] * lagged, axis=1, workers=-1)
        out[d] = np.abs(spec[:, cols]) ** 2
    return out


def caf_direct(reference, surveillance, cfg: CafConfig) -> np.ndarray:
    """Brute-force direct sum of the same surface; an oracle for small inputs."""
    ref, surv = _check_inputs(reference, surveillance, cfg)
    n = cfg.n_samples
    t = np.arange(n)
    k = np.arange(cfg.n_doppler) - cfg.zero_doppler_bin
    kernel = np.exp(-2j * np.pi * np.outer(t, k) / n)
    out = np.empty((cfg.n_delay, cfg.n_doppler))
    for d in range(cfg.n_delay):
        lagged = np.zeros(n, dtype=complex)
        lagged[d:] = ref[:n - d]
        out[d] = np.abs((surv * np.conj(lagged)) @ kernel) ** 2
    return out


def compute_caf(reference, surveillance, cfg: CafConfig, epoch: float | None = None) -> DelayDopplerMap:
    if epoch is None:
        epoch = float(getattr(getattr(surveillance, "series", surveillance), "start_time", 0.0))
    return DelayDopplerMap.from_linear(caf_power(reference, surveillance, cfg),
                                       cfg.delay_res, cfg.doppler_res, cfg.zero_doppler_bin, epoch)


def _ridge_mask(shape, zero_bin: int, half_width: int = RIDGE_HALF_WIDTH) -> np.ndarray:
    cols = np.arange(shape[1])
    return np.broadcast_to(np.abs(cols - zero_bin) <= half_width, shape)


def _robust_floor(values: np.ndarray) -> float:
    """Mean of the cells below ``FLOOR_CLIP`` times the median (linear power)."""
    if values.size == 0:
        raise ValueError("no cells left for the noise floor")
    med = np.median(values)
    kept = values[values <= FLOOR_CLIP * med] if med > 0 else values
    return float(np.mean(kept))


def noise_floor(m: DelayDopplerMap, exclude: np.ndarray | None = None) -> float:
    """Noise floor in dB, leaving out the zero-Doppler ridge and ``exclude`` cells."""
    mask = ~_ridge_mask(m.shape, m.zero_doppler_bin)
    if exclude is not None:
        mask &= ~exclude
    if not mask.any():
        mask = np.ones(m.shape, dtype=bool)
    return 10.0 * np.log10(max(_robust_floor(m.linear()[mask]), _TINY))


def estimate_snr(m: DelayDopplerMap, cell: tuple[int, int], guard: int = 3) -> float:
    """Cell power over the noise floor, in dB; cells within ``guard`` of the cell are excluded."""
    i, j = cell
    if not (0 <= i < m.shape[0] and 0 <= j < m.shape[1]):
        raise IndexError(f"cell {cell} outside map of shape {m.shape}")
    box = np.zeros(m.shape, dtype=bool)
    box[max(i - guard, 0):i + guard + 1, max(j - guard, 0):j + guard + 1] = True
    return float(m.power[i, j] - noise_floor(m, box))


def cfar_alpha(n_train: np.ndarray | int, pfa: float) -> np.ndarray:
    """Cell-averaging threshold multiplier for exponentially distributed noise power."""
    n = np.asarray(n_train, dtype=float)
    return n * (pfa ** (-1.0 / n) - 1.0)


def _cfar_noise(p: np.ndarray, train: int, guard: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean of the training cells along delay (axis 0) and their count, per cell."""
    nd = p.shape[0]
    c = np.vstack([np.zeros((1, p.shape[1])), np.cumsum(p, axis=0)])
    i = np.arange(nd)

    def window_sum(lo, hi):
        lo = np.clip(lo, 0, nd)
        hi = np.clip(hi, 0, nd)
        return c[hi] - c[lo], (hi - lo)

    s1, n1 = window_sum(i - guard - train, i - guard)
    s2, n2 = window_sum(i + guard + 1, i + guard + 1 + train)
    count = (n1 + n2).astype(float)
    total = s1 + s2
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count[:, None]
    return mean, count


def _parabolic(a: float, b: float, c: float) -> float:
    den = a - 2 * b + c
    return 0.0 if den == 0 else float(np.clip(0.5 * (a - c) / den, -0.5, 0.5))


def detect(m: DelayDopplerMap, pfa: float, train: int = CFAR_TRAIN, guard: int = CFAR_GUARD,
           min_delay_bins: int = 0) -> list[Detection]:
    """CA-CFAR along delay, zero-Doppler ridge masked, 8-neighbour local maxima.

    ``min_delay_bins`` additionally masks the shortest delays, where the
    direct path's envelope fluctuation spreads across all Doppler bins.
    """
    if not 0 < pfa < 1:
        raise ValueError("pfa must be in (0, 1)")
    p = m.linear()
    p = np.where(m.power <= 10 * np.log10(_TINY) + 1e-9, 0.0, p)
    mean, count = _cfar_noise(p, train, guard)
    alpha = cfar_alpha(np.maximum(count, 1), pfa)[:, None]
    valid = (count > 0)[:, None] & (mean > 0)
    above = valid & (p > alpha * np.where(valid, mean, np.inf))
    above &= ~_ridge_mask(p.shape, m.zero_doppler_bin)
    above[:min_delay_bins] = False
    peaks = above & (p >= maximum_filter(p, size=3, mode="constant", cval=0.0))

    out = []
    nd, nf = p.shape
    for i, j in zip(*np.nonzero(peaks)):
        di = _parabolic(p[i - 1, j], p[i, j], p[i + 1, j]) if 0 < i < nd - 1 else 0.0
        dj = _parabolic(p[i, j - 1], p[i, j], p[i, j + 1]) if 0 < j < nf - 1 else 0.0
        out.append(Detection(
            delay_bin=int(i),
            doppler_bin=int(j),
            bistatic_range=float(i * m.delay_res * SPEED_OF_LIGHT),
            doppler=float((j - m.zero_doppler_bin) * m.doppler_res),
            snr=float(10 * np.log10(p[i, j] / mean[i, j])),
            epoch=m.epoch,
            delay_offset=di,
            doppler_offset=dj,
        ))
    return out


def doppler_to_range_rate(doppler, carrier: float):
    """Bistatic range-rate (m/s); positive Doppler means a shrinking bistatic range."""
    if not carrier > 0:
        raise ValueError("carrier must be positive")
    r = -np.asarray(doppler, dtype=float) * SPEED_OF_LIGHT / carrier
    return float(r) if r.ndim == 0 else r


def range_rate_to_doppler(range_rate, carrier: float):
    f = -np.asarray(range_rate, dtype=float) * carrier / SPEED_OF_LIGHT
    return float(f) if f.ndim == 0 else f


def processing_gain(bandwidth: float, cpi: float) -> float:
    """Coherent integration ceiling ``10 log10(B T)`` in dB."""
    if not (bandwidth > 0 and cpi > 0):
        raise ValueError("bandwidth and cpi must be positive")
    return float(10.0 * np.log10(bandwidth * cpi))


def write_map(path, m: DelayDopplerMap) -> None:
    nd, nf = m.shape
    with open(path, "wb") as fh:
        fh.write(_MAP_HEADER.pack(MAP_MAGIC, MAP_VERSION, nd, nf, float(m.delay_res),
                                  float(m.doppler_res), int(m.zero_doppler_bin),
                                  float(m.noise_floor), float(m.epoch)))
        fh.write(np.ascontiguousarray(m.power, dtype="<f4").tobytes())


def read_map(path) -> DelayDopplerMap:
    with open(path, "rb") as fh:
        magic, version, nd, nf, dres, fres, zero, floor, epoch = _MAP_HEADER.unpack(
            fh.read(_MAP_HEADER.size))
        if magic != MAP_MAGIC:
            raise ValueError(f"{path}: not a delay-Doppler map")
        if version != MAP_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != nd * nf:
        raise ValueError(f"{path}: truncated map")
    return DelayDopplerMap(data.reshape(nd, nf).astype(float), dres, fres, zero, floor, epoch)


def write_detections(path, detections: list[Detection]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETECTION_HEADER)
        for d in detections:
            w.writerow([repr(d.epoch), d.delay_bin, d.doppler_bin, repr(d.bistatic_range),
                        repr(d.doppler), repr(d.snr), repr(d.delay_offset), repr(d.doppler_offset)])


def read_detections(path) -> list[Detection]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Detection(int(r["delay_bin"]), int(r["doppler_bin"]), float(r["bistatic_range_m"]),
                      float(r["doppler_hz"]), float(r["snr_db"]), float(r["epoch"]),
                      float(r.get("delay_offset_bins") or 0.0),
                      float(r.get("doppler_offset_bins") or 0.0)) for r in rows]
