"""Command-line pipeline: spinup, truth, calibrate, ensemble, uq.

Each command reads the scenario configuration, consumes the data products
of the previous stage from the output directory, and writes its own
products plus a manifest holding every effective parameter.  Exit codes:
0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import calibrate as cal
from . import metrics
from .config import ScenarioConfig, config_items, load_config
from .dynamics import integrate, spinup
from .ensemble import EnsembleRun, member_trajectory
from .errors import ConfigError, FieldError, NumericalError, SrswError
from .grid import ModelState, StaggeredField, read_snapshot, write_snapshot
from .coarsen import mollify, subsample

LOCK_NAME = ".srsw-lock"
COMMANDS = ("spinup", "truth", "calibrate", "ensemble", "uq")
_FIELD_VARS = (("eta", "h"), ("u", "u"), ("v", "v"))


# ---------------------------------------------------------------------------
# Manifest and output helpers
# ---------------------------------------------------------------------------

def write_manifest(path, cfg: ScenarioConfig, extra=None, snapshots=None):
    lines = ["[parameters]"]
    for section, key, value in config_items(cfg):
        lines.append(f"{section}.{key} = {value}")
    for key, value in (extra or {}).items():
        lines.append(f"{key} = {value}")
    lines.append("[snapshots]")
    for step, time, filename in snapshots or []:
        lines.append(f"{step} {float(time)!r} {filename}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    params = {}
    snapshots = []
    section = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("["):
                section = line
                continue
            if section == "[parameters]" and "=" in line:
                key, value = line.split("=", 1)
                params[key.strip()] = value.strip()
            elif section == "[snapshots]":
                step, time, filename = line.split(None, 2)
                snapshots.append((int(step), float(time), filename))
    return params, snapshots


def write_series_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(
                ",".join(repr(float(x)) if isinstance(x, float) else str(x) for x in row)
            )
            fh.write("\n")


def write_pgm(path, values):
    """8-bit portable graymap with north up, plus a min/max sidecar."""
    a = np.asarray(values, dtype=np.float64)
    lo = float(a.min())
    hi = float(a.max())
    span = hi - lo
    norm = (a - lo) / span if span > 0.0 else np.zeros_like(a)
    img = np.round(norm * 255.0).astype(np.uint8)
    rows = np.ascontiguousarray(img.T[::-1])
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[0]} {a.shape[1]}\n255\n".encode())
        fh.write(rows.tobytes())
    with open(str(path) + ".txt", "w") as fh:
        fh.write(f"min = {lo!r}\nmax = {hi!r}\n")


def _write_state(directory, tag, state: ModelState):
    names = []
    for var, kind in _FIELD_VARS:
        name = f"{tag}.{var}.field"
        write_snapshot(os.path.join(directory, name), getattr(state, var), state.time)
        names.append(name)
    return names


def _read_state(directory, tag, grid) -> ModelState:
    fields = {}
    time = 0.0
    for var, kind in _FIELD_VARS:
        name = os.path.join(directory, f"{tag}.{var}.field")
        if not os.path.exists(name):
            raise FieldError(f"missing snapshot file {name}")
        fields[var], time = read_snapshot(name, grid)
    return ModelState(u=fields["u"], v=fields["v"], eta=fields["eta"], time=time)


def _coarse_projection(state: ModelState, c: int, kernel=None) -> ModelState:
    """Project a fine state onto the coarse grid.

    With a kernel the fields are mollified first (used for the ensemble
    initial condition); without, this is the plain subsampling used for
    the comparison truth.  The wall rows of v are re-imposed because the
    subsampled top row is not the fine-grid wall.
    """
    def project(f: StaggeredField):
        if kernel is not None:
            f = mollify(f, kernel)
        return subsample(f, c)

    u = project(state.u)
    v = project(state.v)
    eta = project(state.eta)
    vv = v.values.copy()
    vv[:, 0] = 0.0
    vv[:, -1] = 0.0
    return ModelState(
        u=u, v=v.with_values(vv), eta=eta, time=state.time
    )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_spinup(cfg: ScenarioConfig, out_root):
    grid = cfg.fine_grid()
    params = cfg.physical_params()
    state = spinup(
        grid, params,
        a=cfg.initial_amplitude,
        n_steps=cfg.burn_in_steps,
        dt=cfg.dt_fine,
        scheme=cfg.scheme,
        ra_filter=cfg.ra_filter,
    )
    directory = os.path.join(out_root, "spinup")
    os.makedirs(directory, exist_ok=True)
    names = _write_state(directory, "initial", state)
    snapshots = [(cfg.burn_in_steps, state.time, n) for n in names]
    write_manifest(os.path.join(directory, "manifest.txt"), cfg, snapshots=snapshots)
    return 0


def cmd_truth(cfg: ScenarioConfig, out_root):
    grid = cfg.fine_grid()
    params = cfg.physical_params()
    state = _read_state(os.path.join(out_root, "spinup"), "initial", grid)
    directory = os.path.join(out_root, "truth")
    os.makedirs(directory, exist_ok=True)
    snapshots = []

    def record(step, s):
        for name in _write_state(directory, f"step_{step:06d}", s):
            snapshots.append((step, s.time, name))

    if cfg.truth_steps > 0:
        record(0, state)

        def on_step(k, s):
            if k % cfg.snapshot_stride == 0:
                record(k, s)

        integrate(
            state, params, cfg.dt_fine, cfg.truth_steps,
            scheme=cfg.scheme, ra_filter=cfg.ra_filter, on_step=on_step,
        )
    write_manifest(os.path.join(directory, "manifest.txt"), cfg, snapshots=snapshots)
    return 0


def _truth_eta_steps(truth_dir):
    manifest = os.path.join(truth_dir, "manifest.txt")
    if not os.path.exists(manifest):
        raise FieldError(f"no truth manifest at {manifest}; run the truth command")
    _, snapshots = read_manifest(manifest)
    return sorted(
        (step, name) for step, _, name in snapshots if name.endswith(".eta.field")
    )


def cmd_calibrate(cfg: ScenarioConfig, out_root):
    grid = cfg.fine_grid()
    truth_dir = os.path.join(out_root, "truth")
    entries = _truth_eta_steps(truth_dir)
    steps = [s for s, _ in entries]
    if len(entries) < cfg.delta_steps + 1 or steps != list(range(len(steps))):
        raise FieldError(
            f"calibration needs at least {cfg.delta_steps + 1} elevation "
            f"snapshots at unit stride; found {len(entries)} covering steps "
            f"{steps[:3]}..{steps[-1:] if steps else []}"
        )

    def snapshots():
        for _, name in entries:
            yield read_snapshot(os.path.join(truth_dir, name), grid)[0]

    basis, report = cal.calibrate_noise_basis(
        snapshots(),
        dt_fine=cfg.dt_fine,
        kernel=cfg.coarsening_kernel(),
        c=cfg.c,
        alpha=cfg.alpha_decorr,
        delta_steps=cfg.delta_steps,
        n_xi=cfg.n_xi,
    )
    directory = os.path.join(out_root, "calibrate")
    os.makedirs(directory, exist_ok=True)
    cal.save_eof_basis(basis, os.path.join(directory, "basis"))
    write_series_csv(
        os.path.join(directory, "sigma_spectrum.csv"),
        "mode,sigma",
        [(j, float(s)) for j, s in enumerate(basis.sigma)],
    )
    write_series_csv(
        os.path.join(directory, "decorrelation.csv"),
        "lag,mean_abs_corr",
        list(zip(report.lags, (float(x) for x in report.mean_abs_corr))),
    )
    write_manifest(
        os.path.join(directory, "manifest.txt"),
        cfg,
        extra={
            "ell_decorr": report.ell_decorr,
            "n_samples": report.n_samples,
            "n_retained": basis.n_retained,
        },
    )
    return 0


def cmd_ensemble(cfg: ScenarioConfig, out_root):
    grid = cfg.fine_grid()
    params = cfg.physical_params()
    basis = cal.load_eof_basis(os.path.join(out_root, "calibrate", "basis"))
    initial_fine = _read_state(os.path.join(out_root, "spinup"), "initial", grid)
    dt_coarse = cfg.effective_dt_coarse()
    ratio = dt_coarse / cfg.dt_fine
    if abs(ratio - round(ratio)) > 1e-9:
        raise FieldError(
            f"dt_coarse = {dt_coarse} must be an integer multiple of "
            f"dt_fine = {cfg.dt_fine} to co-project the truth"
        )
    ratio = int(round(ratio))

    initial = _coarse_projection(initial_fine, cfg.c, cfg.coarsening_kernel())
    if basis.n_retained and basis.grid != initial.grid:
        raise FieldError(
            f"basis grid {basis.grid.shape} does not match the coarse grid "
            f"{initial.grid.shape}; recalibrate with the current c"
        )

    # comparison truth: fine run subsampled at the coarse time points
    truth_dir = os.path.join(out_root, "truth")
    needed = [k * ratio for k in range(cfg.n_steps + 1)]
    missing = [
        k for k in needed
        if not os.path.exists(os.path.join(truth_dir, f"step_{k:06d}.eta.field"))
    ]
    if missing:
        raise FieldError(
            f"truth snapshots missing for fine steps {missing[:8]}"
            f"{'...' if len(missing) > 8 else ''}; extend truth_steps"
        )
    truth = []
    for k in needed:
        fine = _read_state(truth_dir, f"step_{k:06d}", grid)
        truth.append(_coarse_projection(fine, cfg.c))

    directory = os.path.join(out_root, "ensemble")
    os.makedirs(directory, exist_ok=True)
    truth_dir_out = os.path.join(directory, "truth_coarse")
    os.makedirs(truth_dir_out, exist_ok=True)
    snapshots = []
    for k, s in zip(needed, truth):
        for name in _write_state(truth_dir_out, f"step_{k // ratio:06d}", s):
            snapshots.append((k // ratio, s.time, os.path.join("truth_coarse", name)))

    def job(member_id):
        return member_trajectory(
            initial, params, basis, cfg.n_steps, dt_coarse,
            cfg.master_seed, member_id, 1,
        )

    ids = list(range(cfg.n_p))
    with ThreadPoolExecutor(max_workers=cfg.n_workers) as pool:
        for m, traj in zip(ids, pool.map(job, ids)):
            mdir = os.path.join(directory, f"member_{m:04d}")
            os.makedirs(mdir, exist_ok=True)
            for k, s in enumerate(traj):
                for name in _write_state(mdir, f"step_{k:06d}", s):
                    snapshots.append((k, s.time, os.path.join(f"member_{m:04d}", name)))

    write_manifest(
        os.path.join(directory, "manifest.txt"),
        cfg,
        extra={
            "dt_coarse": dt_coarse,
            "fine_step_ratio": ratio,
            "n_retained": basis.n_retained,
        },
        snapshots=snapshots,
    )
    return 0


def _load_ensemble(cfg: ScenarioConfig, out_root) -> EnsembleRun:
    directory = os.path.join(out_root, "ensemble")
    manifest = os.path.join(directory, "manifest.txt")
    if not os.path.exists(manifest):
        raise FieldError(f"no ensemble manifest at {manifest}; run the ensemble command")
    coarse = cfg.coarse_grid()
    missing = []
    members = []
    for m in range(cfg.n_p):
        mdir = os.path.join(directory, f"member_{m:04d}")
        if not os.path.isdir(mdir):
            missing.append(m)
            continue
        traj = [
            _read_state(mdir, f"step_{k:06d}", coarse)
            for k in range(cfg.n_steps + 1)
        ]
        members.append(tuple(traj))
    if missing:
        raise FieldError(f"ensemble directory is missing members {missing}")
    truth = [
        _read_state(os.path.join(directory, "truth_coarse"), f"step_{k:06d}", coarse)
        for k in range(cfg.n_steps + 1)
    ]
    return EnsembleRun(
        members=tuple(members),
        truth=tuple(truth),
        config={"source": directory},
    )


def cmd_uq(cfg: ScenarioConfig, out_root):
    run = _load_ensemble(cfg, out_root)
    directory = os.path.join(out_root, "uq")
    os.makedirs(directory, exist_ok=True)
    loc = metrics.central_point(cfg.coarse_grid().shape)
    scenario = f"c{cfg.c}-nxi{cfg.n_xi}-np{cfg.n_p}"

    for var in metrics.VARIABLES:
        series = metrics.point_series(run, var, loc)
        times = series.times
        for name, values in (
            ("bias", metrics.bias(series.members, series.truth)),
            ("rmse", metrics.rmse(series.members, series.truth)),
            ("spread", metrics.ensemble_spread(series.members)
             if series.members.shape[0] > 1 else np.zeros_like(series.truth)),
            ("rel_l2", metrics.ensemble_mean_relative_l2(run, var)),
        ):
            write_series_csv(
                os.path.join(directory, f"{name}_{var}.csv"),
                "time,value",
                list(zip((float(t) for t in times), (float(x) for x in values))),
            )
        for n in (64, 128):
            rng = np.random.default_rng(cfg.master_seed + n)
            hist = metrics.rank_histogram_from_run(run, loc, var, n, rng)
            write_series_csv(
                os.path.join(directory, f"rank_hist_{n}_{var}.csv"),
                "rank,count",
                list(enumerate(int(x) for x in hist.counts)),
            )

    rows = metrics.time_average_table({scenario: run}, location=loc)
    write_series_csv(
        os.path.join(directory, "summary.csv"),
        "scenario,variable,mean_bias,mean_rmse",
        [(r["scenario"], r["variable"], r["mean_bias"], r["mean_rmse"]) for r in rows],
    )

    if "pgm" in cfg.format_list():
        pgm_dir = os.path.join(directory, "pgm")
        os.makedirs(pgm_dir, exist_ok=True)
        write_pgm(os.path.join(pgm_dir, "truth_final_eta.pgm"),
                  run.truth[-1].eta.values)
        write_pgm(os.path.join(pgm_dir, "member0_final_eta.pgm"),
                  run.members[0][-1].eta.values)
        basis_dir = os.path.join(out_root, "calibrate", "basis")
        if os.path.exists(os.path.join(basis_dir, "basis_manifest.txt")):
            basis = cal.load_eof_basis(basis_dir)
            for j in range(basis.n_retained):
                write_pgm(os.path.join(pgm_dir, f"xi_u_{j:03d}.pgm"),
                          basis.xi_u[j].values)
                write_pgm(os.path.join(pgm_dir, f"xi_v_{j:03d}.pgm"),
                          basis.xi_v[j].values)

    write_manifest(os.path.join(directory, "manifest.txt"), cfg,
                   extra={"location": loc, "scenario": scenario})
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_DISPATCH = {
    "spinup": cmd_spinup,
    "truth": cmd_truth,
    "calibrate": cmd_calibrate,
    "ensemble": cmd_ensemble,
    "uq": cmd_uq,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="srsw-calib",
        description="Shallow water transport-noise calibration pipeline",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario config file")
    parser.add_argument("--output-dir", default=None, help="override outputs.directory")
    parser.add_argument("--seed", type=int, default=None, help="override ensemble.master_seed")
    parser.add_argument(
        "--paper-scale", action="store_true",
        help="full-scale grid preset (2224x320, dt 22.5 s)",
    )
    args = parser.parse_args(argv)

    overrides = {}
    if args.output_dir is not None:
        overrides["directory"] = args.output_dir
    if args.seed is not None:
        overrides["master_seed"] = args.seed

    try:
        cfg = load_config(args.config, overrides=overrides, paper_scale=args.paper_scale)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1

    out_root = cfg.directory
    os.makedirs(out_root, exist_ok=True)
    lock_path = os.path.join(out_root, LOCK_NAME)
    try:
        lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        print(
            f"output directory {out_root} is locked ({lock_path} exists); "
            "concurrent invocations are unsupported, remove the file if stale",
            file=sys.stderr,
        )
        return 1
    os.close(lock_fd)
    try:
        return _DISPATCH[args.command](cfg, out_root)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (SrswError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        os.unlink(lock_path)


if __name__ == "__main__":
    sys.exit(main())
