"""Run a calibrated stochastic ensemble and verify its statistics.

End-to-end: fine run, calibration, a 30-member stochastic ensemble on the
coarse grid against the subsampled fine truth, and the verification
metrics (spread, bias, RMSE, rank histogram) at the central point.

Run:  python3 demos/04_stochastic_ensemble_uq.py   (about two minutes)
"""

import pathlib
import time

import numpy as np

import srsw_calib as sw
from srsw_calib.cli import _coarse_projection

OUT = pathlib.Path(__file__).parent / "output" / "04_ensemble_uq"
OUT.mkdir(parents=True, exist_ok=True)

t0 = time.time()
grid = sw.GridSpec(27787.5e3, 3975.0e3, 560, 80)
params = sw.PhysicalParams()
c, kernel, dt_fine = 4, sw.kernel_c4(), 90.0
n_steps = 70

burn = sw.spinup(grid, params, n_steps=800, dt=dt_fine)
etas = [burn.eta]
truth_fine = {0: burn}


def keep(k, s):
    etas.append(s.eta)
    if k % c == 0:
        truth_fine[k] = s


sw.integrate(burn, params, dt_fine, 1600, on_step=keep)
basis, rep = sw.calibrate_noise_basis(
    etas, dt_fine=dt_fine, kernel=kernel, c=c, alpha=0.2, delta_steps=0, n_xi=0.99
)
print(f"calibrated {basis.n_retained} modes "
      f"(lag {rep.ell_decorr}, {rep.n_samples} samples) in {time.time()-t0:.0f}s")

initial = _coarse_projection(burn, c, kernel)
truth = tuple(
    _coarse_projection(truth_fine[c * k], c) for k in range(n_steps + 1)
)
run = sw.run_ensemble(
    initial, params, basis, n_steps, c * dt_fine, 30, 2024, truth=truth
)
print(f"30-member ensemble done in {time.time()-t0:.0f}s")

loc = sw.central_point(initial.grid.shape)
series = sw.point_series(run, "eta", loc)
spread = sw.ensemble_spread(series.members)
b = sw.bias(series.members, series.truth)
r = sw.rmse(series.members, series.truth)

print(f"\nelevation at the central point {loc}:")
print(f"{'step':>5} {'spread':>8} {'bias':>8} {'rmse':>8}")
for k in range(0, n_steps + 1, 10):
    print(f"{k:>5} {spread[k]:>8.2f} {b[k]:>8.2f} {r[k]:>8.2f}")
print(f"\ntime-mean rmse {r.mean():.2f}, time-mean spread {spread.mean():.2f}")

hist = sw.rank_histogram_from_run(run, loc, "eta", 64, np.random.default_rng(3))
print("rank histogram (64 steps):", hist.counts.tolist())

with open(OUT / "point_series_eta.csv", "w") as fh:
    fh.write("time,truth," + ",".join(f"m{m}" for m in range(run.n_members)) + "\n")
    for t in range(series.truth.shape[0]):
        row = [series.times[t], series.truth[t], *series.members[:, t]]
        fh.write(",".join(repr(float(x)) for x in row) + "\n")
print(f"per-member point series in {OUT}/point_series_eta.csv")
