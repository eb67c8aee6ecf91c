"""Stochastic coarse-grid integration with calibrated transport noise.

The noise enters the advective structure of the equations: one Gaussian
draw per mode per step builds a perturbation velocity from the calibrated
basis, and the resulting increment is combined with the deterministic
tendency inside a four-stage scheme that recovers the Stratonovich
correction automatically.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .calibrate import EOFBasis
from .dynamics import (
    _east,
    _north_edge,
    _north_zero,
    _south_edge,
    _vorticity_numerator,
    _west,
    _check_depth,
    _depth_at_corners,
    _state_add,
    rk4_combined_step,
    tendency,
)
from .errors import EnsembleError, FieldError, NumericalError
from .grid import ModelState, PhysicalParams, StaggeredField


@dataclass(frozen=True)
class NoiseRealization:
    """Standard-normal mode weights for one member at one step."""

    w: np.ndarray
    seed: int
    member_id: int
    step: int


def noise_weights(master_seed: int, member_id: int, step: int, n_modes: int) -> NoiseRealization:
    """Deterministic draw keyed by (seed, member, step).

    Uses a counter-based generator so the same key always yields the same
    weights regardless of execution order or thread count; the mode index
    is the draw position within the step's block.
    """
    bitgen = np.random.Philox(
        key=np.array([master_seed, member_id], dtype=np.uint64),
        counter=np.array([0, 0, 0, step], dtype=np.uint64),
    )
    w = np.random.Generator(bitgen).standard_normal(n_modes)
    return NoiseRealization(w=w, seed=master_seed, member_id=member_id, step=step)


def salt_perturbation(
    state: ModelState, basis: EOFBasis, w: np.ndarray, params: PhysicalParams
) -> tuple[StaggeredField, StaggeredField, StaggeredField]:
    """Transport-noise increment per unit sqrt(dt) for mode weights w.

    The velocity part is the gradient of the cross energy u.u~ + v.v~ plus
    the vorticity coupling through the stochastic fluxes h*u~, h*v~ with
    the stochastic vorticity (v_x - u_y)/h; the height part is the
    flux-form divergence of h*u~.  All stencils and boundary rules match
    the deterministic tendency.
    """
    grid = state.grid
    if basis.n_retained != len(w):
        raise FieldError(
            f"got {len(w)} weights for {basis.n_retained} retained modes"
        )
    if basis.n_retained and basis.grid != grid:
        raise FieldError("noise basis grid does not match the state grid")
    if basis.n_retained == 0:
        z = np.zeros(grid.shape)
        return (
            StaggeredField("u", grid, z),
            StaggeredField("v", grid, z.copy()),
            StaggeredField("h", grid, z.copy()),
        )
    tu = np.zeros(grid.shape)
    tv = np.zeros(grid.shape)
    for wj, xu, xv in zip(w, basis.xi_u, basis.xi_v):
        tu += wj * xu.values
        tv += wj * xv.values

    dx, dy = grid.dx, grid.dy
    u = state.u.values
    v = state.v.values
    e = state.eta.values
    H = params.H_mean

    # cross energy interpolated to the cell centers, same pattern as the
    # kinetic energy of the deterministic tendency
    uu = u * tu
    vv = v * tv
    cross = 0.5 * (uu + _east(uu)) + 0.5 * (vv + _north_zero(vv))
    du = -(cross - _west(cross)) / dx
    dv = np.zeros_like(v)
    dv[:, 1:] = -(cross[:, 1:] - cross[:, :-1]) / dy

    # stochastic vorticity (no planetary part) over the corner depth
    zt = _vorticity_numerator(u, v, grid) / _depth_at_corners(e, H)

    # stochastic volume fluxes with the same face depths and ghost rule
    sfu = tu * (H + 0.5 * (e + _west(e)))
    sfv = tv * (H + 0.5 * (e + _south_edge(e)))
    sfu_b = sfu.copy()
    sfu_b[:, 0] = -sfu_b[:, 1]
    sfu_b[:, -1] = -sfu_b[:, -2]

    sfv_n = _north_zero(sfv)
    du += (sfv + _west(sfv) + sfv_n + _west(sfv_n)) * (zt + _north_edge(zt)) / 8.0
    dv -= (
        (sfu_b + _south_edge(sfu_b) + _east(sfu_b) + _east(_south_edge(sfu_b)))
        * (zt + _east(zt))
        / 8.0
    )

    deta = -(_east(sfu) - sfu) / dx - (_north_zero(sfv) - sfv) / dy

    dv[:, 0] = 0.0
    dv[:, -1] = 0.0
    return (
        StaggeredField("u", grid, du),
        StaggeredField("v", grid, dv),
        StaggeredField("h", grid, deta),
    )


def step_srsw_rk4(
    state: ModelState,
    params: PhysicalParams,
    basis: EOFBasis,
    dt: float,
    w: np.ndarray,
) -> ModelState:
    """One stochastic step: the combined increment dt*A + sqrt(dt)*B(w)
    goes through the four-stage combination with the same draw held fixed
    across stages."""
    if dt <= 0.0:
        raise FieldError("dt must be positive")
    sq = math.sqrt(dt)
    noisy = basis.n_retained > 0

    def increment(s):
        t = tendency(s, params)
        if not noisy:
            return (dt * t.du.values, dt * t.dv.values, dt * t.deta.values)
        du_s, dv_s, de_s = salt_perturbation(s, basis, w, params)
        return (
            dt * t.du.values + sq * du_s.values,
            dt * t.dv.values + sq * dv_s.values,
            dt * t.deta.values + sq * de_s.values,
        )

    new = rk4_combined_step(state, increment, _state_add)
    new = replace(new, time=state.time + dt)
    _check_depth(new, params)
    return new


@dataclass(frozen=True)
class EnsembleRun:
    """Member trajectories plus the projected truth at matching times."""

    members: tuple
    truth: tuple | None
    config: dict

    def __post_init__(self):
        if not self.members:
            raise FieldError("ensemble has no members")
        times = [s.time for s in self.members[0]]
        for traj in self.members:
            if [s.time for s in traj] != times:
                raise FieldError("members have mismatched snapshot times")

    @property
    def n_members(self) -> int:
        return len(self.members)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.members[0]])


def member_trajectory(
    initial, params, basis, n_steps, dt, master_seed, member_id, stride
):
    states = [initial]
    s = initial
    for k in range(1, n_steps + 1):
        w = noise_weights(master_seed, member_id, k, basis.n_retained).w
        try:
            s = step_srsw_rk4(s, params, basis, dt, w)
        except NumericalError as exc:
            raise EnsembleError(
                f"member {member_id} failed at step {k}: {exc}",
                member_id=member_id,
                step=k,
            ) from exc
        if k % stride == 0:
            states.append(s)
    return tuple(states)


def run_ensemble(
    initial: ModelState,
    params: PhysicalParams,
    basis: EOFBasis,
    n_steps: int,
    dt_coarse: float,
    n_members: int,
    master_seed: int,
    snapshot_stride: int = 1,
    truth=None,
    n_workers: int = 1,
) -> EnsembleRun:
    """Integrate n_members independent stochastic trajectories.

    Every member draws its noise from a stream keyed by (master_seed,
    member_id, step), so results are reproducible and independent of the
    worker count.  Any member failure aborts the run with member and step
    context.
    """
    if n_members < 1:
        raise FieldError("ensemble needs at least one member")
    if snapshot_stride < 1:
        raise FieldError("snapshot stride must be at least 1")

    def job(member_id):
        return member_trajectory(
            initial, params, basis, n_steps, dt_coarse,
            master_seed, member_id, snapshot_stride,
        )

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            members = tuple(pool.map(job, range(n_members)))
    else:
        members = tuple(job(m) for m in range(n_members))

    config = {
        "n_steps": n_steps,
        "dt_coarse": dt_coarse,
        "n_members": n_members,
        "master_seed": master_seed,
        "snapshot_stride": snapshot_stride,
        "n_retained": basis.n_retained,
    }
    return EnsembleRun(members=members, truth=truth, config=config)
