# %% [markdown]
# # The file-based pipeline
#
# Each stage reads the previous stage's files from one run directory, which
# is how the `ogradar` command chains `simulate`, `process`, `iod` and
# `snr-report`.  This walkthrough drives the same entry point in-process on
# a shortened 40 s scenario and reads the outputs back.

# %%
import tempfile
from pathlib import Path

from ogradar import cli
from ogradar.caf import read_detections
from ogradar.iod import read_posterior
from ogradar.pipeline import Capture, read_snr_report

run = Path(tempfile.mkdtemp(prefix="ogradar-demo-"))
small = ["--set", "scenario.duration=40", "--set", "scenario.cpi_interval=5", "--set", "iod.steps=3000",
         "--set", "iod.burn_in=1000", "--set", "iod.horizon=1800", "--out", str(run)]
for stage in ("simulate", "process", "iod"):
    assert cli.main([stage, *small]) == 0
assert cli.main(["snr-report", *small, "--set", "snr_report.cpis=[0.25]"]) == 0

# %%
cap = Capture.open(run)
dets = read_detections(run / "process" / "detections_iss.csv")
print(f"{cap.n_cpi} CPIs captured, {len(dets)} detections")
for rec in cap.truth:
    print(f"t={rec.epoch:5.2f}  truth {rec.bistatic_range / 1e3:7.2f} km {rec.doppler:+8.1f} Hz")
    for d in (d for d in dets if d.epoch == rec.epoch):
        print(f"{'':9}detected {d.bistatic_range / 1e3:7.2f} km {d.doppler:+8.1f} Hz  {d.snr:4.1f} dB")

# %%
post = read_posterior(run / "iod" / "posterior.csv")
print(f"{len(post)} posterior samples at t={post.epoch:.2f} s")
rows = read_snr_report(run / "snr" / "snr_report.csv")
print("realized gain per CPI (dB):", [round(r.realized_gain, 1) for r in rows])
print("files:", sorted(p.relative_to(run).as_posix() for p in run.rglob("*.csv")))
