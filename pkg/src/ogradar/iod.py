"""
Bayesian initial orbit determination.

The posterior over the inertial state at ``t0`` given radar measurements is
sampled with adaptive random-walk Metropolis.  The measurement function maps
an inertial state to (bistatic range, bistatic range-rate, azimuth,
elevation) for a transmitter/receiver pair; measurement noise is Gaussian
and independent per component; the process model is noise free.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import least_squares

from . import geo
from .constants import J2, MU_EARTH, R_EARTH, SPEED_OF_LIGHT
from .geo import BistaticGeometry, GeodeticPos
from .orbit import (J2000, ProcessModel, ReentryError, StateVector, Tle, TwoBodyJ2, eci_to_ecef,
                    eci_to_ecef_arrays, ecef_to_eci, elements_to_state, gmst)

log = logging.getLogger(__name__)

MEASUREMENT_HEADER = ["epoch_s", "geometry_id", "bistatic_range_m", "range_rate_mps",
                      "azimuth_deg", "elevation_deg"]
POSTERIOR_HEADER = ["epoch_s", "x_km", "y_km", "z_km", "vx_kmps", "vy_kmps", "vz_kmps"]
MIN_ELEVATION = -5.0  # deg


class UnobservableError(ValueError):
    """Target is below the receiver's usable horizon."""


class UnderdeterminedError(ValueError):
    pass


class McmcError(RuntimeError):
    pass


class McmcWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Measurement:
    epoch: float
    bistatic_range: float  # m
    range_rate: float  # m/s
    azimuth: float  # deg
    elevation: float  # deg
    geometry_id: str = "default"

    def __post_init__(self):
        if not -90.0 <= self.elevation <= 90.0:
            raise ValueError(f"elevation {self.elevation} outside [-90, 90]")
        if not 0.0 <= self.azimuth < 360.0:
            raise ValueError(f"azimuth {self.azimuth} outside [0, 360)")

    def as_array(self) -> np.ndarray:
        return np.array([self.bistatic_range, self.range_rate, self.azimuth, self.elevation])


@dataclass(frozen=True)
class MeasurementNoise:
    sigma_az: float = 0.1  # deg
    sigma_el: float = 0.2  # deg
    sigma_range: float = SPEED_OF_LIGHT / 100e3  # m
    sigma_range_rate: float = 15.0 * SPEED_OF_LIGHT / 98e6  # m/s
    bandwidth: float | None = None
    cpi: float | None = None
    carrier: float | None = None

    def __post_init__(self):
        for name in ("sigma_az", "sigma_el", "sigma_range", "sigma_range_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def from_radar(cls, bandwidth: float, cpi: float, carrier: float,
                   range_bins: float = 1.0, doppler_bins: float = 15.0,
                   sigma_az: float = 0.1, sigma_el: float = 0.2) -> "MeasurementNoise":
        """Convert bin-denominated errors to physical units.

        One delay bin is ``c / bandwidth`` of bistatic range; one Doppler bin
        is ``1 / cpi`` Hz, i.e. ``c / (cpi * carrier)`` of range-rate.
        """
        noise = cls(sigma_az, sigma_el,
                    range_bins * SPEED_OF_LIGHT / bandwidth,
                    doppler_bins * SPEED_OF_LIGHT / (cpi * carrier),
                    bandwidth, cpi, carrier)
        log.info("measurement noise: %.1f m range (%g bins at %g Hz), %.2f m/s range-rate "
                 "(%g bins at cpi %g s, carrier %g Hz)", noise.sigma_range, range_bins,
                 bandwidth, noise.sigma_range_rate, doppler_bins, cpi, carrier)
        return noise

    def sigmas(self) -> np.ndarray:
        return np.array([self.sigma_range, self.sigma_range_rate, self.sigma_az, self.sigma_el])

    def scaled(self, factor: float) -> "MeasurementNoise":
        return MeasurementNoise(self.sigma_az * factor, self.sigma_el * factor,
                                self.sigma_range * factor, self.sigma_range_rate * factor,
                                self.bandwidth, self.cpi, self.carrier)


# --- measurement function -----------------------------------------------------

def _enu_basis_for(geom: BistaticGeometry) -> np.ndarray:
    return geo.enu_basis(geo.ecef_to_geodetic_pos(geom.rx))


def measure_states(states: np.ndarray, times, anchor: datetime, geom: BistaticGeometry,
                   basis: np.ndarray | None = None) -> np.ndarray:
    """Vectorised measurement function.

    ``states`` is ``(..., 6)`` inertial km, km/s at ``times`` (seconds past
    ``anchor``).  Returns ``(..., 4)``: bistatic range m, range-rate m/s,
    azimuth deg, elevation deg.
    """
    states = np.asarray(states, dtype=float)
    utc = (anchor - J2000).total_seconds() + np.asarray(times, dtype=float)
    pos, vel = eci_to_ecef_arrays(states[..., :3], states[..., 3:6], utc)
    dt = pos - geom.tx
    dr = pos - geom.rx
    rt = np.linalg.norm(dt, axis=-1)
    rr = np.linalg.norm(dr, axis=-1)
    rb = rt + rr - geom.baseline
    rdot = np.sum((dt / rt[..., None] + dr / rr[..., None]) * vel, axis=-1)
    basis = _enu_basis_for(geom) if basis is None else basis
    enu = dr @ basis.T
    e, n, u = enu[..., 0], enu[..., 1], enu[..., 2]
    horiz = np.hypot(e, n)
    el = np.degrees(np.arctan2(u, horiz))
    az = np.where(horiz == 0.0, 0.0, np.degrees(np.arctan2(e, n)) % 360.0)
    return np.stack([rb, rdot, az, el], axis=-1)


def measure(x: StateVector, geom: BistaticGeometry, geometry_id: str = "default") -> Measurement:
    """Noise-free radar measurement of an inertial state."""
    pos, vel = eci_to_ecef(x)
    el_check = geo.look_angles(geom.rx, pos)
    if el_check.elevation < MIN_ELEVATION:
        raise UnobservableError(
            f"target at elevation {el_check.elevation:.2f} deg is below {MIN_ELEVATION} deg")
    rb = geo.bistatic_range(geom, pos)
    rdot = geo.bistatic_range_rate(geom, pos, vel)
    return Measurement(x.epoch, rb, rdot, el_check.azimuth, el_check.elevation, geometry_id)


def add_noise(z: Sequence[Measurement], noise: MeasurementNoise,
              rng: np.random.Generator) -> list[Measurement]:
    out = []
    for m in z:
        d = rng.standard_normal(4) * noise.sigmas()
        el = float(np.clip(m.elevation + d[3], -90.0, 90.0))
        out.append(Measurement(m.epoch, m.bistatic_range + d[0], m.range_rate + d[1],
                               (m.azimuth + d[2]) % 360.0, el, m.geometry_id))
    return out


def doppler_quantize(z: Sequence[Measurement], noise: MeasurementNoise) -> list[Measurement]:
    """Snap range and range-rate onto the delay/Doppler bin grids of ``noise``'s radar."""
    if noise.bandwidth is None or noise.cpi is None or noise.carrier is None:
        raise ValueError("noise model carries no radar parameters")
    rbin = SPEED_OF_LIGHT / noise.bandwidth
    vbin = SPEED_OF_LIGHT / (noise.cpi * noise.carrier)
    return [Measurement(m.epoch, round(m.bistatic_range / rbin) * rbin,
                        round(m.range_rate / vbin) * vbin, m.azimuth, m.elevation,
                        m.geometry_id) for m in z]


# --- likelihood ---------------------------------------------------------------

def _wrap180(d):
    """Wrap degrees to (-180, 180]."""
    w = np.mod(d + 180.0, 360.0) - 180.0
    return np.where(w == -180.0, 180.0, w)


def residuals(x0: StateVector, z: Sequence[Measurement], model: ProcessModel,
              geometries: Mapping[str, BistaticGeometry]) -> np.ndarray:
    """Measurement minus prediction, ``(len(z), 4)``, azimuth wrapped."""
    times = np.array([m.epoch for m in z])
    states = model.propagator.propagate_many(x0, times)
    obs = np.array([m.as_array() for m in z])
    pred = np.empty_like(obs)
    ids = np.array([m.geometry_id for m in z])
    for gid in np.unique(ids):
        sel = ids == gid
        pred[sel] = measure_states(states[sel], times[sel], x0.anchor, geometries[gid])
    res = obs - pred
    res[:, 2] = _wrap180(res[:, 2])
    return res


def log_likelihood(x0: StateVector, z: Sequence[Measurement], noise: MeasurementNoise,
                   model: ProcessModel, geometries: Mapping[str, BistaticGeometry]) -> float:
    """Sum of independent Gaussian log densities of the measurement residuals.

    A state whose trajectory fails to propagate (re-entry, non-finite
    values) has likelihood zero, i.e. ``-inf``.
    """
    try:
        res = residuals(x0, z, model, geometries)
    except (ReentryError, RuntimeError, FloatingPointError, ValueError):
        return -math.inf
    if not np.all(np.isfinite(res)):
        return -math.inf
    sig = noise.sigmas()
    return float(np.sum(-0.5 * (res / sig) ** 2 - np.log(sig * math.sqrt(2.0 * math.pi))))


# --- MCMC -----------------------------------------------------------------------

@dataclass(frozen=True)
class ChainSettings:
    steps: int = 100_000
    burn_in: int = 20_000
    thin: int = 1
    position_scale: float = 1.0  # km, initial proposal std
    velocity_scale: float = 1e-3  # km/s
    adapt: bool = True
    target_acceptance: float = 0.3

    def __post_init__(self):
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn_in")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("bad thinning/burn-in")
        if not (self.position_scale > 0 and self.velocity_scale > 0):
            raise ValueError("proposal scales must be positive")


@dataclass
class Posterior:
    samples: np.ndarray  # (n, 6) km, km/s at epoch
    epoch: float
    anchor: datetime = J2000
    log_weights: np.ndarray | None = None
    acceptance_rate: float = float("nan")
    ess: np.ndarray = field(default_factory=lambda: np.full(6, np.nan))
    log_post: np.ndarray | None = None

    @property
    def mean(self) -> StateVector:
        return StateVector.from_array(self.epoch, self.samples.mean(axis=0), self.anchor)

    @property
    def states(self) -> list[StateVector]:
        return [StateVector.from_array(self.epoch, s, self.anchor) for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """Per-column ESS from the initial-positive-sequence autocorrelation sum."""
    x = np.atleast_2d(np.asarray(x, dtype=float).T).T
    n = x.shape[0]
    out = np.empty(x.shape[1])
    for j in range(x.shape[1]):
        c = x[:, j] - x[:, j].mean()
        var = c @ c / n
        if var == 0:
            out[j] = n
            continue
        f = np.fft.rfft(c, 2 * n)
        acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
        tau = 1.0
        for k in range(1, n - 1, 2):
            pair = acf[k] + acf[k + 1]
            if pair <= 0:
                break
            tau += 2.0 * pair
        out[j] = n / tau
    return out


def gelman_rubin(chains: Sequence[np.ndarray]) -> np.ndarray:
    """Potential scale reduction R-hat per coordinate."""
    c = np.stack([np.asarray(ch, dtype=float) for ch in chains])
    m, n = c.shape[:2]
    means = c.mean(axis=1)
    b = n * means.var(axis=0, ddof=1)
    w = c.var(axis=1, ddof=1).mean(axis=0)
    var_hat = (n - 1) / n * w + b / n
    return np.sqrt(var_hat / w)


def metropolis(log_target: Callable[[np.ndarray], float], y0: np.ndarray, cfg: ChainSettings,
               seed: int, init_cov: np.ndarray | None = None):
    """Adaptive random-walk Metropolis on a 6-vector.

    During burn-in the proposal covariance tracks the running sample
    covariance (scaled by ``2.38^2 / d``) and a global step factor is
    steered towards ``cfg.target_acceptance``; both are frozen afterwards.
    Returns retained samples, their log target values and the post-burn-in
    acceptance rate.
    """
    rng = np.random.default_rng(seed)
    d = y0.size
    if init_cov is None:
        init_cov = np.diag(np.r_[np.full(3, cfg.position_scale), np.full(3, cfg.velocity_scale)] ** 2)
    cov = np.array(init_cov, dtype=float)
    chol = np.linalg.cholesky(cov)
    log_scale = 0.0

    y = np.array(y0, dtype=float)
    lp = log_target(y)
    if not np.isfinite(lp):
        raise McmcError("initial state has zero posterior density")

    keep = []
    keep_lp = []
    accepted = 0
    run_mean = y.copy()
    run_cov = cov.copy()
    adapt_start = min(500, cfg.burn_in // 4)
    sd = 2.38**2 / d

    for i in range(cfg.steps):
        prop = y + math.exp(log_scale) * (chol @ rng.standard_normal(d))
        lp_prop = log_target(prop)
        acc = np.isfinite(lp_prop) and math.log(rng.random()) < lp_prop - lp
        if acc:
            y, lp = prop, lp_prop
        if i < cfg.burn_in:
            if cfg.adapt:
                k = i + 2
                delta = y - run_mean
                run_mean = run_mean + delta / k
                run_cov = run_cov + (np.outer(delta, y - run_mean) - run_cov) / k
                log_scale += (float(acc) - cfg.target_acceptance) / math.sqrt(i + 1.0)
                if i >= adapt_start and i % 100 == 0:
                    try:
                        chol = np.linalg.cholesky(sd * run_cov + 1e-12 * np.diag(np.diag(cov)))
                        log_scale = 0.0
                    except np.linalg.LinAlgError:
                        pass
        else:
            accepted += acc
            if (i - cfg.burn_in) % cfg.thin == 0:
                keep.append(y.copy())
                keep_lp.append(lp)
    rate = accepted / (cfg.steps - cfg.burn_in)
    return np.array(keep), np.array(keep_lp), rate


def _chain_result(samples, lps, rate, epoch, anchor) -> Posterior:
    if rate == 0.0:
        raise McmcError("every proposal after burn-in was rejected")
    if not 0.05 <= rate <= 0.7:
        warnings.warn(f"MCMC acceptance rate {rate:.3f} outside [0.05, 0.7]", McmcWarning,
                      stacklevel=3)
    return Posterior(samples, epoch, anchor, None, rate, effective_sample_size(samples), lps)


def fit_state(z: Sequence[Measurement], noise: MeasurementNoise, model: ProcessModel,
              init: StateVector, geometries: Mapping[str, BistaticGeometry]):
    """Weighted least-squares state at ``init.epoch`` and its Gauss-Newton covariance."""
    sig = noise.sigmas()
    scale = np.r_[np.ones(3), np.full(3, 1e-3)]

    def fun(p):
        x = StateVector.from_array(init.epoch, p * scale, init.anchor)
        try:
            r = residuals(x, z, model, geometries) / sig
        except (ReentryError, RuntimeError, ValueError):
            return np.full(4 * len(z), 1e6)
        return r.ravel()

    sol = least_squares(fun, init.as_array() / scale, method="lm", x_scale="jac")
    jac = sol.jac
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jac.T @ jac)
    cov = cov * np.outer(scale, scale)
    return StateVector.from_array(init.epoch, sol.x * scale, init.anchor), cov


def run_mcmc(z: Sequence[Measurement], noise: MeasurementNoise, model: ProcessModel,
             init: StateVector, cfg: ChainSettings = ChainSettings(), seed: int = 0,
             geometries: Mapping[str, BistaticGeometry] | None = None,
             log_target: Callable[[np.ndarray], float] | None = None,
             init_cov: np.ndarray | None = None) -> Posterior:
    """Sample p(x0 | z) with adaptive random-walk Metropolis.

    The prior is improper uniform, so the log target is the log likelihood.
    ``log_target`` replaces the likelihood entirely (used to validate the
    sampler on analytic densities).  The chain starts at ``init``; passing
    ``init_cov`` (e.g. from :func:`fit_state`) seeds the proposal shape.
    """
    if log_target is None:
        if len(z) < 2:
            raise UnderdeterminedError("need at least two measurements")
        if geometries is None:
            raise ValueError("geometries mapping required")
        z = sorted(z, key=lambda m: m.epoch)

        def log_target(y):
            return log_likelihood(StateVector.from_array(init.epoch, y, init.anchor),
                                  z, noise, model, geometries)

    samples, lps, rate = metropolis(log_target, init.as_array(), cfg, seed, init_cov)
    return _chain_result(samples, lps, rate, init.epoch, init.anchor)


def initial_state_from_measurements(z: Sequence[Measurement],
                                    geometries: Mapping[str, BistaticGeometry],
                                    epoch: float, anchor: datetime,
                                    model: ProcessModel | None = None) -> StateVector:
    """Crude state from the first and last detections.

    Each detection is localised on its bistatic ellipsoid along the receive
    ray; the chord between the two fixes gives the velocity at the arc
    midpoint, which is then propagated to ``epoch``.
    """
    model = model or ProcessModel()
    z = sorted(z, key=lambda m: m.epoch)
    fixes = []
    for m in (z[0], z[-1]):
        g = geometries[m.geometry_id]
        p = geo.localize_detection(g, geo.LookAngles(m.azimuth, m.elevation), m.bistatic_range)
        fixes.append(ecef_to_eci(p, np.zeros(3), m.epoch, anchor))
    t1, t2 = z[0].epoch, z[-1].epoch
    # ECEF-at-rest fixes carry omega x r in their velocity; positions are what matter
    r1, r2 = fixes[0].position, fixes[1].position
    v = (r2 - r1) / (t2 - t1)
    mid = StateVector(0.5 * (t1 + t2), 0.5 * (r1 + r2), v, anchor)
    # chord midpoint lies inside the arc; push it out to the orbit radius
    r_mid = np.linalg.norm(r1 + r2) / 2
    r_arc = 0.5 * (np.linalg.norm(r1) + np.linalg.norm(r2))
    mid = StateVector(mid.epoch, mid.position * r_arc / r_mid, mid.velocity, anchor)
    return model.propagator.propagate(mid, epoch)


MIN_MEASUREMENTS = 6


@dataclass
class IodResult:
    posterior: Posterior  # all chains pooled
    chains: list[Posterior]
    rhat: np.ndarray
    lsq_state: StateVector
    lsq_cov: np.ndarray


def determine_orbit(z: Sequence[Measurement], noise: MeasurementNoise,
                    geometries: Mapping[str, BistaticGeometry], anchor: datetime,
                    cfg: ChainSettings = ChainSettings(), chains: int = 2, seed: int = 0,
                    model: ProcessModel | None = None) -> IodResult:
    """Full IOD: geometric start, least-squares refinement, then parallel MCMC chains.

    The state is estimated at the epoch of the first measurement.  Chain
    ``k`` is seeded with ``seed + k`` and starts from the least-squares
    state perturbed by one draw from its covariance, so R-hat compares
    chains that did not begin at the same point.
    """
    if len(z) < MIN_MEASUREMENTS:
        raise UnderdeterminedError(
            f"{len(z)} measurements cannot determine a 6-D state (need {MIN_MEASUREMENTS})")
    model = model or ProcessModel()
    z = sorted(z, key=lambda m: m.epoch)
    epoch = z[0].epoch
    init = initial_state_from_measurements(z, geometries, epoch, anchor, model)
    est, cov = fit_state(z, noise, model, init, geometries)
    runs = []
    for k in range(chains):
        rng = np.random.default_rng([seed, k])
        start = est.as_array() + np.linalg.cholesky(cov) @ rng.standard_normal(6) if k else est.as_array()
        runs.append(run_mcmc(z, noise, model, StateVector.from_array(epoch, start, anchor), cfg,
                             seed + k, geometries, init_cov=cov))
    rhat = gelman_rubin([r.samples for r in runs]) if chains > 1 else np.full(6, np.nan)
    pooled = Posterior(np.vstack([r.samples for r in runs]), epoch, anchor, None,
                       float(np.mean([r.acceptance_rate for r in runs])),
                       np.sum([r.ess for r in runs], axis=0),
                       np.concatenate([r.log_post for r in runs]))
    return IodResult(pooled, runs, rhat, est, cov)


# --- prediction and reacquisition -----------------------------------------------

@dataclass
class ReacquisitionReport:
    times: np.ndarray  # s
    mean_position_error: np.ndarray  # km
    mean_along_track_error: np.ndarray  # km, signed
    mean_across_track_error: np.ndarray  # km
    along_track_window_99_7: np.ndarray  # s
    across_track_fov_99_7: np.ndarray  # deg, at sensor
    sample_along_track: np.ndarray | None = None  # (times, samples) km
    sample_across_track: np.ndarray | None = None  # (times, samples) km
    sensor: GeodeticPos | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "mean_position_error_km", "mean_along_track_error_km",
                        "mean_across_track_error_km", "along_track_window_99_7_s",
                        "across_track_fov_99_7_deg"])
            for row in zip(self.times, self.mean_position_error, self.mean_along_track_error,
                           self.mean_across_track_error, self.along_track_window_99_7,
                           self.across_track_fov_99_7):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def read_csv(cls, path) -> "ReacquisitionReport":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(*data.T)


def propagate_samples(samples: np.ndarray, epoch: float, times, j2: bool = True,
                      rtol: float = 1e-10, atol: float = 1e-8) -> np.ndarray:
    """Propagate many states together; returns ``(len(times), n, 6)``."""
    samples = np.atleast_2d(samples)
    n = samples.shape[0]
    times = np.asarray(times, dtype=float)

    def rhs(t, y):
        s = y.reshape(n, 6)
        r = s[:, :3]
        r2 = np.einsum("ij,ij->i", r, r)
        rn = np.sqrt(r2)
        a = -MU_EARTH / (r2 * rn)[:, None] * r
        if j2:
            f = 1.5 * J2 * MU_EARTH * R_EARTH**2 / (r2 * r2 * rn)
            zz = 5.0 * r[:, 2] ** 2 / r2
            a = a + f[:, None] * r * np.stack([zz - 1, zz - 1, zz - 3], axis=1)
        return np.concatenate([s[:, 3:], a], axis=1).ravel()

    out = np.empty((times.size, n, 6))
    for mask, sign in ((times >= epoch, 1), (times < epoch, -1)):
        if not mask.any():
            continue
        ts = times[mask]
        order = np.argsort(sign * ts)
        end = ts[order[-1]]
        if end == epoch:
            out[mask] = samples
            continue
        sol = solve_ivp(rhs, (epoch, end), samples.ravel(), method="DOP853",
                        t_eval=ts[order], rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(sol.message)
        res = np.empty((ts.size, n, 6))
        res[order] = sol.y.T.reshape(ts.size, n, 6)
        out[mask] = res
    return out


def _truth_state(truth, anchor: datetime) -> StateVector:
    if isinstance(truth, Tle):
        return elements_to_state(truth.parsed, anchor)
    if truth.anchor != anchor:
        return StateVector(truth.epoch + (truth.anchor - anchor).total_seconds(),
                           truth.position, truth.velocity, anchor)
    return truth


def _quantile_width(x: np.ndarray, axis=-1, coverage: float = 0.997) -> np.ndarray:
    lo, hi = np.quantile(x, [(1 - coverage) / 2, (1 + coverage) / 2], axis=axis)
    return hi - lo


def predict_errors(p: Posterior, truth, horizon: float = 3 * 3600.0, step: float = 60.0,
                   sensor: GeodeticPos | None = None, keep_samples: bool = True
                   ) -> ReacquisitionReport:
    """Propagate posterior samples and the reference orbit over a time grid.

    Errors are decomposed along the reference velocity direction
    (along-track, signed) and in the plane orthogonal to it (across-track).
    The 99.7% along-track window converts the sample spread into time using
    the reference speed.  The across-track field of view is the 99.7%
    quantile of the angle between each sample's across-track-only position
    and the reference position, seen from ``sensor`` (the receiver-free
    geocentre when no sensor is given).
    """
    ref = _truth_state(truth, p.anchor)
    times = p.epoch + np.arange(0.0, horizon + 0.5 * step, step)
    if ref.epoch != p.epoch:
        ref = TwoBodyJ2().propagate(ref, p.epoch)
    # one batch so the reference shares the samples' integration steps
    traj = propagate_samples(np.vstack([p.samples, ref.as_array()]), p.epoch, times)
    sample_traj, ref_traj = traj[:, :-1], traj[:, -1]

    r_ref = ref_traj[:, :3]
    t_hat = ref_traj[:, 3:] / np.linalg.norm(ref_traj[:, 3:], axis=1, keepdims=True)
    speed = np.linalg.norm(ref_traj[:, 3:], axis=1)

    err = sample_traj[:, :, :3] - r_ref[:, None, :]
    along = np.einsum("tnk,tk->tn", err, t_hat)
    across_vec = err - along[..., None] * t_hat[:, None, :]
    across = np.linalg.norm(across_vec, axis=-1)

    mean_err = sample_traj[:, :, :3].mean(axis=1) - r_ref
    mean_along = np.einsum("tk,tk->t", mean_err, t_hat)
    mean_across = np.linalg.norm(mean_err - mean_along[:, None] * t_hat, axis=1)

    window = _quantile_width(along, axis=1) / speed
    # viewing geometry in inertial space
    if sensor is not None:
        utc = (p.anchor - J2000).total_seconds() + times
        th = gmst(utc)
        site = geo.geodetic_to_ecef(sensor) / 1e3
        c, s = np.cos(th), np.sin(th)
        obs = np.stack([c * site[0] - s * site[1], s * site[0] + c * site[1],
                        np.full_like(th, site[2])], axis=1)
    else:
        obs = np.zeros_like(r_ref)
    los_ref = r_ref - obs
    los_s = (r_ref[:, None, :] + across_vec) - obs[:, None, :]
    cosang = np.einsum("tnk,tk->tn", los_s, los_ref) / (
        np.linalg.norm(los_s, axis=-1) * np.linalg.norm(los_ref, axis=-1)[:, None])
    ang = np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    fov = np.quantile(ang, 0.997, axis=1)

    return ReacquisitionReport(
        times=times,
        mean_position_error=np.linalg.norm(mean_err, axis=1),
        mean_along_track_error=mean_along,
        mean_across_track_error=mean_across,
        along_track_window_99_7=window,
        across_track_fov_99_7=fov,
        sample_along_track=along if keep_samples else None,
        sample_across_track=across if keep_samples else None,
        sensor=sensor,
    )


class NoPassError(ValueError):
    pass


def _meridian_crossings(traj_ecef: np.ndarray, times: np.ndarray, site_ecef: np.ndarray):
    """Crossing time and ECEF position of each trajectory through the sensor's meridian half-plane.

    ``traj_ecef`` is ``(t, n, 3)``; returns arrays of length ``n`` (NaN when
    a trajectory does not cross within the grid).
    """
    lon = math.atan2(site_ecef[1], site_ecef[0])
    normal = np.array([-math.sin(lon), math.cos(lon), 0.0])
    outward = np.array([math.cos(lon), math.sin(lon), 0.0])
    d = traj_ecef @ normal
    front = traj_ecef @ outward > 0
    n = traj_ecef.shape[1]
    t_cross = np.full(n, np.nan)
    p_cross = np.full((n, 3), np.nan)
    sign_change = (np.sign(d[:-1]) != np.sign(d[1:])) & front[:-1] & front[1:]
    for j in range(n):
        idx = np.flatnonzero(sign_change[:, j])
        if idx.size == 0:
            continue
        k = idx[0]
        f = d[k, j] / (d[k, j] - d[k + 1, j])
        t_cross[j] = times[k] + f * (times[k + 1] - times[k])
        p_cross[j] = traj_ecef[k, j] + f * (traj_ecef[k + 1, j] - traj_ecef[k, j])
    return t_cross, p_cross


def reacquisition(p: Posterior, sensor: GeodeticPos, pass_time: float,
                  search: float = 1200.0, step: float = 2.0) -> tuple[float, float]:
    """Stare time (s) and field of view (deg) for 99.7% reacquisition probability.

    Every sample is propagated through the pass window; its transit of the
    sensor's meridian plane fixes the along-track timing, and its position at
    that transit fixes the across-track pointing.  Stare is the central
    99.7% width of transit times; field of view is the 99.7% quantile of the
    angle, seen from the sensor, between each sample's transit position and
    the mean transit position.
    """
    times = pass_time + np.arange(-search, search + step / 2, step)
    traj = propagate_samples(p.samples, p.epoch, np.r_[times])
    mean_traj = propagate_samples(p.samples.mean(axis=0), p.epoch, times)[:, 0, :]
    utc = (p.anchor - J2000).total_seconds() + times

    site = geo.geodetic_to_ecef(sensor)
    mean_pos, _ = eci_to_ecef_arrays(mean_traj[:, :3], mean_traj[:, 3:], utc)
    elev = geo.look_angles(sensor, mean_pos).elevation
    if not np.any(np.asarray(elev) > 0.0):
        raise NoPassError(f"no visible pass within +/-{search / 60:.0f} min of t={pass_time}")

    pos, _ = eci_to_ecef_arrays(traj[..., :3], traj[..., 3:], utc[:, None])
    t_cross, p_cross = _meridian_crossings(pos, times, site)
    ok = np.isfinite(t_cross)
    if ok.sum() < 0.997 * len(t_cross):
        raise NoPassError("too few samples cross the sensor meridian in the search window")
    t_cross, p_cross = t_cross[ok], p_cross[ok]
    stare = float(_quantile_width(t_cross))

    los = p_cross - site
    u = los / np.linalg.norm(los, axis=1, keepdims=True)
    m = p_cross.mean(axis=0) - site
    m /= np.linalg.norm(m)
    ang = np.degrees(np.arccos(np.clip(u @ m, -1.0, 1.0)))
    fov = float(np.quantile(ang, 0.997))
    return stare, fov


# --- files ----------------------------------------------------------------------

def write_measurements(path, z: Sequence[Measurement]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MEASUREMENT_HEADER)
        for m in z:
            w.writerow([repr(float(m.epoch)), m.geometry_id, repr(float(m.bistatic_range)),
                        repr(float(m.range_rate)), repr(float(m.azimuth)),
                        repr(float(m.elevation))])


def read_measurements(path) -> list[Measurement]:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        if r.fieldnames != MEASUREMENT_HEADER:
            raise ValueError(f"unexpected measurement header {r.fieldnames}")
        return [Measurement(float(row["epoch_s"]), float(row["bistatic_range_m"]),
                            float(row["range_rate_mps"]), float(row["azimuth_deg"]),
                            float(row["elevation_deg"]), row["geometry_id"]) for row in r]


def write_posterior(path, p: Posterior) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSTERIOR_HEADER)
        for s in p.samples:
            w.writerow([repr(float(p.epoch))] + [repr(float(v)) for v in s])


def read_posterior(path, anchor: datetime = J2000) -> Posterior:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Posterior(data[:, 1:7], float(data[0, 0]), anchor)
