"""Acceptance suite: one test per criterion, one printed line per result.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines as the
criteria execute.  The desk-scale fixture below drives the heavy
uncertainty-quantification criteria; it integrates the fine model once and
reuses the window across all scenarios.
"""

import shutil
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg
import scipy.stats

from reference import upwind_analytic_error
import srsw_calib as sw
from srsw_calib.cli import _coarse_projection, main as cli_main
from srsw_calib.dynamics import rk4_combined_step


def report(num, name, ok, detail=""):
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {name}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# Desk-scale pipeline shared by criteria 3, 9, and 10
# ---------------------------------------------------------------------------

DESK = dict(
    lx=27787.5e3, ly=3975.0e3, nx=560, ny=80,
    dt_fine=90.0, burn_in=1000, window=2240,
    alpha=0.15, n_steps=70, master_seed=42,
)


@pytest.fixture(scope="module")
def desk():
    t0 = time.time()
    grid = sw.GridSpec(DESK["lx"], DESK["ly"], DESK["nx"], DESK["ny"])
    params = sw.PhysicalParams()
    burn = sw.spinup(grid, params, n_steps=DESK["burn_in"], dt=DESK["dt_fine"])

    etas = [burn.eta]
    truth_fine = {0: burn}

    def on_step(k, s):
        etas.append(s.eta)
        if k % 4 == 0:
            truth_fine[k] = s

    sw.integrate(burn, params, DESK["dt_fine"], DESK["window"], on_step=on_step)

    data = {"params": params, "bases": {}, "runs": {}, "reports": {}}
    for c, kern in ((4, sw.kernel_c4()), (8, sw.kernel_c8())):
        # decorrelation from the single-step increments, calibration
        # samples spanning the decorrelation lag
        chat = [sw.mollify_subsample(f, kern, c) for f in etas]
        hats = [ch - sw.subsample(f, c) for ch, f in zip(chat, etas)]
        unit = sw.IncrementSeries(
            deltas=tuple(b - a for a, b in zip(hats, hats[1:])),
            dt_between=DESK["dt_fine"], delta_span=DESK["dt_fine"],
        )
        est = sw.decorrelation_time(unit, DESK["alpha"])
        span = est.ell_decorr
        pairs, psis = [], []
        for t in sw.calibration_grid(span, len(hats) - 1 - span):
            q = sw.advecting_field(chat[t])
            psi = sw.solve_calibration_equation(hats[t + span] - hats[t], q)
            psis.append(psi)
            pairs.append(sw.perturbation_velocity(psi))
        data["reports"][c] = est
        delta_span = span * DESK["dt_fine"]
        for n_xi in (0.9, 0.99):
            data["bases"][(c, n_xi)] = sw.eof_decomposition(
                pairs, delta_span, n_xi, psi_samples=psis
            )

        truth = [
            _coarse_projection(truth_fine[c * k], c)
            for k in range(DESK["n_steps"] + 1)
        ]
        init = _coarse_projection(burn, c, kern)
        dt_coarse = c * DESK["dt_fine"]
        for n_xi in (0.9, 0.99):
            for n_p in ((50, 100) if (c == 4 and n_xi == 0.99) else (50,)):
                data["runs"][(c, n_xi, n_p)] = sw.run_ensemble(
                    init, params, data["bases"][(c, n_xi)],
                    DESK["n_steps"], dt_coarse, n_p, DESK["master_seed"],
                    truth=tuple(truth),
                )
        if c == 8:
            # ten-member run over 128 steps for the rank histograms
            truth_128 = [
                _coarse_projection(truth_fine[c * k], c) for k in range(129)
            ]
            data["runs"]["rank"] = sw.run_ensemble(
                init, params, data["bases"][(8, 0.99)],
                128, dt_coarse, 10, DESK["master_seed"] + 1,
                truth=tuple(truth_128),
            )
    print(f"[desk fixture ready in {time.time() - t0:.0f}s]", flush=True)
    return data


def eta_series(run):
    loc = sw.central_point(run.members[0][0].grid.shape)
    return sw.point_series(run, "eta", loc)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_criterion_01_kernel_exactness():
    raw = sw.kernel_c8().weights * 165.0
    ok = (
        abs(raw.sum() - 165.0) < 1e-10
        and abs(sw.kernel_c8().weights.sum() - 1.0) < 1e-14
        and abs(sw.kernel_c4().weights.sum() - 1.0) < 1e-14
    )
    report(1, "kernel exactness", ok,
           f"raw sum {raw.sum():.1f}, weight sums within 1e-14")


def test_criterion_02_mollification_conservation():
    rng = np.random.default_rng(2)
    grid = sw.GridSpec(27787.5e3, 3975.0e3, 556, 80)
    worst = 0.0
    for _ in range(100):
        vals = rng.uniform(0.5, 1.5, grid.shape)
        f = sw.StaggeredField("h", grid, vals)
        out = sw.mollify(f, sw.kernel_c8())
        worst = max(worst, abs(out.values.sum() - vals.sum()) / abs(vals.sum()))
    report(2, "mollification conservation", worst < 1e-12,
           f"worst relative sum change {worst:.2e}")


def test_criterion_03_divergence_free_noise(desk):
    worst = 0.0
    for key, basis in desk["bases"].items():
        g = basis.grid
        for xu, xv in zip(basis.xi_u, basis.xi_v):
            scale = max(abs(xu.values).max(), abs(xv.values).max())
            a = xu.values / scale
            b = xv.values / scale
            div = (np.roll(a, -1, axis=0) - a) / g.dx
            div[:, :-1] += (b[:, 1:] - b[:, :-1]) / g.dy
            div[:, -1] += -b[:, -1] / g.dy
            worst = max(worst, abs(div[:, 1:-1]).max() * min(g.dx, g.dy))
    report(3, "divergence-free noise modes", worst < 1e-12,
           f"worst scaled interior divergence {worst:.2e}")


def test_criterion_04_hyperbolic_solver_oracle():
    # discrete manufactured solution: exact inversion of the assembled
    # operator
    grid = sw.GridSpec(27787.5e3, 3975.0e3, 139, 20)
    cm = sw.mollify(sw.initial_elevation(grid, a=40.0), sw.kernel_c4())
    q = sw.advecting_field(cm)
    X, Y = grid.mesh("z")
    psi_star = np.sin(2 * np.pi * X / grid.Lx) * np.sin(np.pi * Y / grid.Ly) ** 2
    psi_star[:, 0] = 0.0
    psi_star[:, -1] = 0.0
    mat = sw.transport_operator(*q)
    f = sw.StaggeredField("h", grid, (mat @ psi_star.ravel()).reshape(grid.shape))
    psi = sw.solve_calibration_equation(f, q)
    discrete_err = np.abs(psi.values - psi_star).max() / np.abs(psi_star).max()

    e1 = upwind_analytic_error(139, 20)
    e2 = upwind_analytic_error(278, 40)
    order = float(np.log2(e1 / e2))
    ok = discrete_err < 1e-8 and order >= 0.8
    report(4, "hyperbolic-solver oracle", ok,
           f"discrete error {discrete_err:.2e}, analytic order {order:.2f}")


def test_criterion_05_eof_round_trip():
    rng = np.random.default_rng(5)
    grid = sw.GridSpec(2.0e6, 1.0e6, 24, 12)
    m = grid.Nx * grid.Ny
    true_basis = scipy.linalg.qr(rng.normal(size=(2 * m, 3)), mode="economic")[0]
    weights = rng.normal(size=(300, 3))
    rows = weights @ true_basis.T
    pairs = [
        (
            sw.StaggeredField("u", grid, r[:m].reshape(grid.shape)),
            sw.StaggeredField("v", grid, r[m:].reshape(grid.shape)),
        )
        for r in rows
    ]
    basis = sw.eof_decomposition(pairs, delta_span=1.0, n_xi=0.999)
    got = np.stack(
        [
            np.concatenate([u.values.ravel(), v.values.ravel()])
            for u, v in zip(basis.xi_u, basis.xi_v)
        ],
        axis=1,
    )
    angle = float(np.degrees(scipy.linalg.subspace_angles(got, true_basis).max()))
    ok = basis.n_retained == 3 and angle < 5.0
    report(5, "EOF round trip", ok,
           f"retained {basis.n_retained}, principal angle {angle:.3f} deg")


def test_criterion_06_stochastic_rk4_ito_correction():
    a_c, b_c = 0.05, 0.2
    T = 1.0
    n_steps = 256
    dt = T / n_steps
    n_paths = 100_000
    rng = np.random.default_rng(6)
    x = np.full(n_paths, 1.0)
    add = lambda x, c, k: x + k * c
    for _ in range(n_steps):
        w = rng.standard_normal(n_paths)
        incr = lambda xx: a_c * xx * dt + b_c * xx * (w * np.sqrt(dt))
        x = rk4_combined_step(x, incr, add)
    target = np.exp((a_c + b_c**2 / 2.0) * T)
    se = x.std() / np.sqrt(n_paths)
    err = abs(x.mean() - target)
    report(6, "stochastic RK4 Stratonovich mean", err < 3 * se,
           f"|mean - target| = {err:.2e} vs 3 SE = {3 * se:.2e}")


def test_criterion_07_conservation_suite():
    p = sw.PhysicalParams(D=0.0, r=0.0)
    grid = sw.GridSpec(27787.5e3, 3975.0e3, 556, 80)
    st = sw.balanced_initial_state(grid, p, a=100.0)
    m0 = st.eta.values.sum()
    m_scale = np.abs(st.eta.values).sum()
    e0 = sw.total_energy(st, p)
    q0 = sw.integrated_potential_vorticity(st, p)
    final = sw.integrate(st, p, DESK["dt_fine"], 500)
    mass_drift = abs(final.eta.values.sum() - m0) / m_scale
    energy_drift = abs(sw.total_energy(final, p) - e0) / abs(e0)
    pv_drift = abs(sw.integrated_potential_vorticity(final, p) - q0) / abs(q0)
    ok = mass_drift < 1e-10 and energy_drift < 0.01 and pv_drift < 0.01
    report(7, "conservation suite", ok,
           f"mass {mass_drift:.2e}, energy {energy_drift:.2e}, pv {pv_drift:.2e}")


CLI_CONFIG = """
[grid]
nx = 64
ny = 32
lx = 6400e3
ly = 1600e3
[run]
dt_fine = 60
burn_in_steps = 40
truth_steps = 120
initial_amplitude = 10
[coarsening]
c = 4
[calibration]
alpha_decorr = 0.5
delta_steps = 0
[ensemble]
n_p = 4
n_steps = 10
master_seed = 77
n_workers = {workers}
[outputs]
directory = {out}
"""


def test_criterion_08_cli_determinism():
    tmp = Path(tempfile.mkdtemp(prefix="srsw-accept8-"))
    try:
        outputs = []
        for tag, workers in (("one", 1), ("two", 2), ("rerun", 1)):
            out = tmp / tag
            cfg = tmp / f"{tag}.cfg"
            cfg.write_text(CLI_CONFIG.format(out=out, workers=workers))
            for cmd in ("spinup", "truth", "calibrate", "ensemble"):
                code = cli_main([cmd, "--config", str(cfg)])
                assert code == 0, f"{cmd} failed in {tag}"
            outputs.append(out)

        def member_bytes(root):
            blobs = {}
            for mdir in sorted((root / "ensemble").glob("member_*")):
                for f in sorted(mdir.iterdir()):
                    blobs[f"{mdir.name}/{f.name}"] = f.read_bytes()
            return blobs

        base = member_bytes(outputs[0])
        ok = all(member_bytes(other) == base for other in outputs[1:]) and base
        report(8, "ensemble determinism across reruns and thread counts",
               bool(ok), f"{len(base)} member files bitwise identical")
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def moving_average(x, w):
    return np.convolve(x, np.ones(w) / w, mode="valid")


def test_criterion_09_desk_uq_reproduction(desk):
    results = []

    # (a) spread trend-increasing over the window after 5-step smoothing.
    # The sample spread of 50 members carries a sampling error of about
    # sigma/sqrt(2(N_p - 1)); a dip within three standard errors of the
    # smoothed differences is estimator noise, not a decreasing trend.
    run = desk["runs"][(4, 0.99, 50)]
    ps = eta_series(run)
    spread = sw.ensemble_spread(ps.members)
    sm = moving_average(spread, 5)
    se_point = sm / np.sqrt(2.0 * (run.n_members - 1))
    se_diff = np.sqrt(2.0) / 5.0 * se_point[:-1]
    diffs = np.diff(sm)
    trend_ok = bool(np.all(diffs >= -3.0 * se_diff) and sm[-1] > 2.0 * sm[0])
    results.append(("a: spread trend-increasing", trend_ok,
                    f"growth x{sm[-1] / max(sm[0], 1e-12):.1f}, worst dip "
                    f"{diffs.min() / max(sm.mean(), 1e-12):.3f} of mean"))

    # (b) RMSE/spread within [0.5, 2] over the second half
    r = sw.rmse(ps.members, ps.truth)
    half = len(r) // 2
    ratio = r[half:] / np.maximum(spread[half:], 1e-12)
    ratio_ok = bool(ratio.min() >= 0.5 and ratio.max() <= 2.0)
    results.append(("b: RMSE/spread in [0.5, 2]", ratio_ok,
                    f"range [{ratio.min():.2f}, {ratio.max():.2f}]"))

    # (c) truth inside the 2-spread band at >= 85% of sampled times
    dev = np.abs(ps.truth - ps.members.mean(axis=0))
    inside = dev[1:] <= 2.0 * np.maximum(spread[1:], 1e-12)
    contain_ok = bool(inside.mean() >= 0.85)
    results.append(("c: truth containment >= 85%", contain_ok,
                    f"fraction {inside.mean():.2f}"))

    # (d) scenario orderings of the time-mean RMSE
    def mean_rmse(key):
        s = eta_series(desk["runs"][key])
        return float(sw.rmse(s.members, s.truth).mean())

    order_c = mean_rmse((8, 0.9, 50)) > mean_rmse((4, 0.9, 50)) and mean_rmse(
        (8, 0.99, 50)
    ) > mean_rmse((4, 0.99, 50))
    order_xi = mean_rmse((4, 0.99, 50)) > mean_rmse((4, 0.9, 50)) and mean_rmse(
        (8, 0.99, 50)
    ) > mean_rmse((8, 0.9, 50))
    results.append(("d: RMSE orderings (c8 > c4, 0.99 > 0.9)",
                    bool(order_c and order_xi),
                    f"c4/.9 {mean_rmse((4, 0.9, 50)):.2f}, c4/.99 "
                    f"{mean_rmse((4, 0.99, 50)):.2f}, c8/.9 "
                    f"{mean_rmse((8, 0.9, 50)):.2f}, c8/.99 "
                    f"{mean_rmse((8, 0.99, 50)):.2f}"))

    # (e) spread independent of the member count within 15%
    s50 = sw.ensemble_spread(eta_series(desk["runs"][(4, 0.99, 50)]).members).mean()
    s100 = sw.ensemble_spread(eta_series(desk["runs"][(4, 0.99, 100)]).members).mean()
    np_ok = bool(abs(s100 - s50) / s50 <= 0.15)
    results.append(("e: spread independent of N_p", np_ok,
                    f"50 -> {s50:.2f}, 100 -> {s100:.2f}"))

    for name, ok, detail in results:
        print(f"  [criterion 09{name[0]}] {'PASS' if ok else 'FAIL'}: "
              f"{name[3:]} ({detail})", flush=True)
    report(9, "desk-scale UQ reproduction", all(ok for _, ok, _ in results),
           "; ".join(f"{n[0]}={'ok' if ok else 'FAIL'}" for n, ok, _ in results))


def test_criterion_10_rank_histogram_sanity(desk):
    # exchangeable synthetic ensemble: chi-square uniformity at the 1% level
    rng = np.random.default_rng(10)
    n_p, n_t = 10, 10_000
    members = rng.normal(size=(n_p, n_t))
    truth = rng.normal(size=n_t)
    hist = sw.rank_histogram(members, truth, rng)
    expected = n_t / (n_p + 1)
    stat = float(((hist.counts - expected) ** 2 / expected).sum())
    crit = float(scipy.stats.chi2.ppf(0.99, df=n_p))
    uniform_ok = stat < crit

    # calibrated desk ensemble: extreme-bin mass at most 2/(N_p + 1) each
    run = desk["runs"]["rank"]
    loc = sw.central_point(run.members[0][0].grid.shape)
    hist_desk = sw.rank_histogram_from_run(
        run, loc, "eta", 128, np.random.default_rng(11)
    )
    frac_lo = hist_desk.counts[0] / hist_desk.n_samples
    frac_hi = hist_desk.counts[-1] / hist_desk.n_samples
    bound = 2.0 / (run.n_members + 1)
    extreme_ok = frac_lo <= bound and frac_hi <= bound

    ok = uniform_ok and extreme_ok
    report(10, "rank-histogram sanity", ok,
           f"chi2 {stat:.1f} < {crit:.1f}; extreme bins {frac_lo:.2f}/"
           f"{frac_hi:.2f} vs bound {bound:.2f}")
