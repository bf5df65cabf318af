# %% [markdown]
# # Orbit determination from two minutes of radar measurements
#
# Noisy bistatic range, range-rate and beam angles of an ISS-like pass feed a
# least-squares fit and two Metropolis chains.  The posterior is then
# propagated forward to see how the uncertainty grows along and across track.

# %%
import numpy as np

from ogradar import geo
from ogradar.iod import (ChainSettings, MeasurementNoise, add_noise, determine_orbit, measure,
                         predict_errors, reacquisition)
from ogradar.orbit import ProcessModel
from ogradar.scenario import default_scenario_dict, initial_state, scenario_from_dict

s = scenario_from_dict(default_scenario_dict())
model = ProcessModel()
truth = model.propagator.propagate(initial_state(s.targets[0], s.epoch), 0.0)
geom = s.geometries()["geraldton"]
noise = MeasurementNoise.from_radar(100e3, 1.0, s.source("geraldton").carrier)
print("noise sigmas (m, m/s, deg, deg):", np.round(noise.sigmas(), 3))

# %%
clean = [measure(model.propagator.propagate(truth, t), geom, "geraldton")
         for t in np.arange(0.0, 120.0, 10.0)]
z = add_noise(clean, noise, np.random.default_rng(0))
for m in z[:3]:
    print(f"t={m.epoch:5.1f} s  rb={m.bistatic_range / 1e3:8.2f} km  "
          f"rdot={m.range_rate:8.1f} m/s  az={m.azimuth:6.2f}  el={m.elevation:5.2f}")

# %% [markdown]
# A short chain keeps the demo under a minute; the command-line default is
# 30,000 steps per chain.

# %%
res = determine_orbit(z, noise, s.geometries(), s.epoch,
                      ChainSettings(steps=6000, burn_in=2000, thin=2), chains=2, seed=1)
err = np.linalg.norm(res.posterior.mean.position - truth.position)
print(f"epoch error {err:.2f} km, R-hat {np.round(res.rhat, 3)}")

# %%
sensor = geo.GeodeticPos(-16.8, 116.670815, 10.0)
rep = predict_errors(res.posterior, truth, 3 * 3600.0, 600.0, sensor, keep_samples=False)
print(" t (min)  |err| km  along km  across km  window s  fov deg")
for row in zip(rep.times, rep.mean_position_error, rep.mean_along_track_error,
               rep.mean_across_track_error, rep.along_track_window_99_7, rep.across_track_fov_99_7):
    print(f"{row[0] / 60:8.0f} {row[1]:9.2f} {row[2]:9.2f} {row[3]:10.2f} {row[4]:9.1f} {row[5]:8.3f}")

# %%
stare, fov = reacquisition(res.posterior, sensor, 6000.0)
print(f"sensor 1,100 km north, pass near +100 min: stare {stare:.0f} s, field of view {fov:.2f} deg")
