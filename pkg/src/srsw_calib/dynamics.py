"""Deterministic rotating shallow water solver on the staggered grid.

The momentum equations are discretized in energy / potential-vorticity
form: the gradient term carries kinetic plus potential energy and the
advection term carries potential vorticity, which gives good conservation
of both when dissipation is switched off.  Zonal boundaries are periodic;
the north and south walls impose v = 0 with an antisymmetric ghost rule
for the zonal mass flux.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BlowUpError, DepthError, FieldError
from .grid import GridSpec, ModelState, PhysicalParams, StaggeredField, state_from_arrays

# -- array shift helpers ----------------------------------------------------
# Zonal shifts wrap periodically.  Meridional shifts either insert a zero
# (values beyond a wall, used for fluxes) or copy the edge row (used where
# a zero normal gradient is the appropriate closure).


def _west(a):
    return np.roll(a, 1, axis=0)


def _east(a):
    return np.roll(a, -1, axis=0)


def _north_zero(a):
    out = np.empty_like(a)
    out[:, :-1] = a[:, 1:]
    out[:, -1] = 0.0
    return out


def _north_edge(a):
    out = np.empty_like(a)
    out[:, :-1] = a[:, 1:]
    out[:, -1] = a[:, -1]
    return out


def _south_edge(a):
    out = np.empty_like(a)
    out[:, 1:] = a[:, :-1]
    out[:, 0] = a[:, 0]
    return out


@dataclass(frozen=True)
class Tendency:
    """Time derivative of the prognostic triple."""

    du: StaggeredField
    dv: StaggeredField
    deta: StaggeredField

    def __post_init__(self):
        if (self.du.kind, self.dv.kind, self.deta.kind) != ("u", "v", "h"):
            raise FieldError("tendency fields must have kinds (u, v, h)")
        v = self.dv.values
        if np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0):
            raise FieldError("meridional tendency must vanish on the boundary rows")


def coriolis_rows(grid: GridSpec, params: PhysicalParams, kind: str) -> np.ndarray:
    """Coriolis parameter f0 + beta*y on the rows of one sub-grid.

    The beta-plane is centered on the mid-latitude of the domain so f0 is
    the value at y = Ly/2.
    """
    y = grid.y_coords(kind) - 0.5 * grid.Ly
    return params.f0 + params.beta * y


# ---------------------------------------------------------------------------
# Initial condition
# ---------------------------------------------------------------------------

def jet_elevation(x, y, Lx: float, Ly: float, a: float):
    """Elevation profile of the starting condition: a meridional arctan
    front modulated by two zonal waves confined to the channel interior."""
    front = -a * np.arctan(0.05 * (y / Ly - 0.5) * np.pi)
    waves = a * np.sin(16.0 * np.pi * x / Lx) + 0.5 * a * np.sin(2.0 * np.pi * x / Lx)
    return front + waves * np.sin(np.pi * y / Ly) ** 4


def initial_elevation(grid: GridSpec, a: float = 100.0) -> StaggeredField:
    """Evaluate the starting elevation on the cell centers."""
    if a <= 0.0:
        raise FieldError(f"amplitude must be positive, got {a}")
    X, Y = grid.mesh("h")
    return StaggeredField("h", grid, jet_elevation(X, Y, grid.Lx, grid.Ly, a))


def geostrophic_velocities(
    eta: StaggeredField, params: PhysicalParams
) -> tuple[StaggeredField, StaggeredField]:
    """Velocities balancing the pressure gradient: u = -(g/f) eta_y,
    v = (g/f) eta_x, with v forced to zero on the walls."""
    grid = eta.grid
    f_u = coriolis_rows(grid, params, "u")
    f_v = coriolis_rows(grid, params, "v")
    if min(np.abs(f_u).min(), np.abs(f_v).min()) < 1e-12:
        raise FieldError("Coriolis parameter vanishes")
    e = eta.values
    # natural differences on the staggered grid, then four-point averages
    ey_v = np.zeros_like(e)
    ey_v[:, 1:] = (e[:, 1:] - e[:, :-1]) / grid.dy
    ey_u = 0.25 * (
        ey_v + _west(ey_v) + _north_edge(ey_v) + _west(_north_edge(ey_v))
    )
    ex_u = (e - _west(e)) / grid.dx
    ex_v = 0.25 * (
        ex_u + _east(ex_u) + _south_edge(ex_u) + _east(_south_edge(ex_u))
    )
    u = -(params.g / f_u)[None, :] * ey_u
    v = (params.g / f_v)[None, :] * ex_v
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    return StaggeredField("u", grid, u), StaggeredField("v", grid, v)


def balanced_initial_state(
    grid: GridSpec, params: PhysicalParams, a: float = 100.0
) -> ModelState:
    eta = initial_elevation(grid, a)
    u, v = geostrophic_velocities(eta, params)
    return ModelState(u=u, v=v, eta=eta, time=0.0)


# ---------------------------------------------------------------------------
# Spatial operators
# ---------------------------------------------------------------------------

def _depth_at_corners(e: np.ndarray, H: float) -> np.ndarray:
    """Layer depth averaged onto the vorticity points (four neighbors)."""
    es = _south_edge(e)
    return H + 0.25 * (e + _west(e) + es + _west(es))


def _vorticity_numerator(u: np.ndarray, v: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Relative vorticity v_x - u_y on the corner points.

    The row below the southern wall copies the edge value of u, which makes
    u_y vanish there (free slip).
    """
    return (v - _west(v)) / grid.dx - (u - _south_edge(u)) / grid.dy


def _pv_values(u, v, e, grid: GridSpec, params: PhysicalParams) -> np.ndarray:
    depth = _depth_at_corners(e, params.H_mean)
    if depth.min() <= 0.0:
        bad = np.argwhere(depth <= 0.0)[0]
        raise DepthError(
            f"non-positive averaged depth at index ({bad[0]}, {bad[1]})"
        )
    f_z = coriolis_rows(grid, params, "z")
    return (_vorticity_numerator(u, v, grid) + f_z[None, :]) / depth


def potential_vorticity(state: ModelState, params: PhysicalParams) -> StaggeredField:
    """(f + relative vorticity) / depth on the corner points."""
    grid = state.grid
    vals = _pv_values(state.u.values, state.v.values, state.eta.values, grid, params)
    return StaggeredField("z", grid, vals)


def mass_fluxes(
    state: ModelState, params: PhysicalParams
) -> tuple[StaggeredField, StaggeredField]:
    """Volume fluxes h*u and h*v with the depth averaged onto the faces."""
    grid = state.grid
    e = state.eta.values
    H = params.H_mean
    uflux = state.u.values * (H + 0.5 * (e + _west(e)))
    vflux = state.v.values * (H + 0.5 * (e + _south_edge(e)))
    return StaggeredField("u", grid, uflux), StaggeredField("v", grid, vflux)


def boundary_fluxes(uflux: StaggeredField) -> StaggeredField:
    """Antisymmetric ghost rows for the zonal flux at the walls.

    Applied before any meridional interpolation of the flux so that the
    flux interpolated onto the wall rows vanishes.
    """
    vals = uflux.values.copy()
    vals[:, 0] = -vals[:, 1]
    vals[:, -1] = -vals[:, -2]
    return uflux.with_values(vals)


def _raise_on_nan(name: str, a: np.ndarray):
    if not np.isfinite(a).all():
        bad = np.argwhere(~np.isfinite(a))[0]
        raise BlowUpError(
            f"numerical blow-up: non-finite {name} tendency at index "
            f"({bad[0]}, {bad[1]})",
            index=(int(bad[0]), int(bad[1])),
        )


def tendency(state: ModelState, params: PhysicalParams) -> Tendency:
    """Right-hand side of the deterministic system.

    Assembles the energy-gradient, potential-vorticity advection,
    dissipation, and flux-form continuity terms on the staggered grid.
    """
    grid = state.grid
    dx, dy = grid.dx, grid.dy
    u = state.u.values
    v = state.v.values
    e = state.eta.values

    with np.errstate(over="ignore", invalid="ignore"):
        ufl = u * (params.H_mean + 0.5 * (e + _west(e)))
        vfl = v * (params.H_mean + 0.5 * (e + _south_edge(e)))
        ufl_b = ufl.copy()
        ufl_b[:, 0] = -ufl_b[:, 1]
        ufl_b[:, -1] = -ufl_b[:, -2]

        zeta = _pv_values(u, v, e, grid, params)

        # kinetic + potential energy on the cell centers; the wall row above
        # the channel contributes zero meridional velocity
        u2 = u * u
        v2 = v * v
        energy = 0.25 * (u2 + _east(u2) + v2 + _north_zero(v2)) + params.g * e

        du = -(energy - _west(energy)) / dx
        dv = np.zeros_like(v)
        dv[:, 1:] = -(energy[:, 1:] - energy[:, :-1]) / dy

        # potential-vorticity advection with eight-point averaged fluxes
        vfl_n = _north_zero(vfl)
        du += (
            (vfl + _west(vfl) + vfl_n + _west(vfl_n))
            * (zeta + _north_edge(zeta))
            / 8.0
        )
        dv -= (
            (ufl_b + _south_edge(ufl_b) + _east(ufl_b) + _east(_south_edge(ufl_b)))
            * (zeta + _east(zeta))
            / 8.0
        )

        if params.D != 0.0 or params.r != 0.0:
            D, r = params.D, params.r
            du += D * (
                (_east(u) + _west(u) - 2.0 * u) / dx**2
                + (_north_edge(u) + _south_edge(u) - 2.0 * u) / dy**2
            ) - r * u
            dv += D * (
                (_east(v) + _west(v) - 2.0 * v) / dx**2
                + (_north_edge(v) + _south_edge(v) - 2.0 * v) / dy**2
            ) - r * v

        deta = -(_east(ufl) - ufl) / dx - (_north_zero(vfl) - vfl) / dy

    dv[:, 0] = 0.0
    dv[:, -1] = 0.0

    _raise_on_nan("u", du)
    _raise_on_nan("v", dv)
    _raise_on_nan("eta", deta)

    return Tendency(
        du=StaggeredField("u", grid, du),
        dv=StaggeredField("v", grid, dv),
        deta=StaggeredField("h", grid, deta),
    )


# ---------------------------------------------------------------------------
# Time stepping
# ---------------------------------------------------------------------------

def _advance(state: ModelState, du, dv, deta, coef: float, time: float) -> ModelState:
    return state_from_arrays(
        state.grid,
        state.u.values + coef * du,
        state.v.values + coef * dv,
        state.eta.values + coef * deta,
        time=time,
    )


def _check_depth(state: ModelState, params: PhysicalParams):
    depth_min = params.H_mean + state.eta.values.min()
    if depth_min <= 0.0:
        raise DepthError(
            f"layer depth became non-positive (min {depth_min:.3e}) "
            f"at t = {state.time:.1f} s"
        )


def step_euler(state, params, dt, tendency_fn=tendency) -> ModelState:
    """Forward Euler step X + dt*F(X)."""
    if dt < 0.0:
        raise FieldError("dt must be non-negative")
    t = tendency_fn(state, params)
    new = _advance(
        state, t.du.values, t.dv.values, t.deta.values, dt, state.time + dt
    )
    _check_depth(new, params)
    return new


def step_leapfrog(prev, curr, params, dt, tendency_fn=tendency) -> ModelState:
    """Leapfrog step X(n+1) = X(n-1) + 2*dt*F(X(n)).

    The states must be consecutive: prev.time + dt = curr.time.  The
    optional Robert-Asselin smoothing of the middle level is applied by
    the integration loop, see :func:`robert_asselin`.
    """
    if not math.isclose(prev.time + dt, curr.time, rel_tol=1e-9, abs_tol=1e-9):
        raise FieldError(
            f"states are not dt apart: {prev.time} + {dt} != {curr.time}"
        )
    t = tendency_fn(curr, params)
    new = _advance(
        prev, t.du.values, t.dv.values, t.deta.values, 2.0 * dt, curr.time + dt
    )
    _check_depth(new, params)
    return new


def robert_asselin(prev, curr, new, gamma: float) -> ModelState:
    """Filtered middle level curr + gamma*(prev - 2*curr + new).

    Damps the leapfrog computational mode; gamma = 0 returns curr.
    """
    if gamma == 0.0:
        return curr
    return state_from_arrays(
        curr.grid,
        curr.u.values + gamma * (prev.u.values - 2.0 * curr.u.values + new.u.values),
        curr.v.values + gamma * (prev.v.values - 2.0 * curr.v.values + new.v.values),
        curr.eta.values
        + gamma * (prev.eta.values - 2.0 * curr.eta.values + new.eta.values),
        time=curr.time,
    )


def rk4_combined_step(x, increment_fn, add):
    """Four-stage combination for an increment map that is already scaled
    by the step size (it may mix dt and sqrt(dt) parts).

    Stages: c1 = G(x), c2 = G(x + c1/2), c3 = G(x + c2/2), c4 = G(x + c3);
    result x + (c1 + 2 c2 + 2 c3 + c4)/6 accumulated as four partial
    updates so every caller shares one floating-point evaluation order.
    """
    c1 = increment_fn(x)
    c2 = increment_fn(add(x, c1, 0.5))
    c3 = increment_fn(add(x, c2, 0.5))
    c4 = increment_fn(add(x, c3, 1.0))
    out = add(x, c1, 1.0 / 6.0)
    out = add(out, c2, 1.0 / 3.0)
    out = add(out, c3, 1.0 / 3.0)
    out = add(out, c4, 1.0 / 6.0)
    return out


def _state_add(state, inc, coef):
    du, dv, deta = inc
    return _advance(state, du, dv, deta, coef, state.time)


def step_rk4(state, params, dt, tendency_fn=tendency) -> ModelState:
    """Classical fourth-order Runge-Kutta step."""
    if dt < 0.0:
        raise FieldError("dt must be non-negative")

    def increment(s):
        t = tendency_fn(s, params)
        return (dt * t.du.values, dt * t.dv.values, dt * t.deta.values)

    new = rk4_combined_step(state, increment, _state_add)
    new = replace(new, time=state.time + dt)
    _check_depth(new, params)
    return new


def integrate(
    state: ModelState,
    params: PhysicalParams,
    dt: float,
    n_steps: int,
    scheme: str = "leapfrog",
    ra_filter: float = 0.01,
    on_step=None,
):
    """March the model n_steps forward.

    The default scheme takes one Euler step and continues with leapfrog,
    smoothing the middle level with the Robert-Asselin filter.  ``rk4``
    uses the fourth-order scheme throughout.  ``on_step(k, state)`` is
    invoked after every step, k = 1..n_steps.
    """
    if scheme not in ("leapfrog", "rk4"):
        raise FieldError(f"unknown scheme {scheme!r}")
    curr = state
    prev = None
    for k in range(1, n_steps + 1):
        try:
            if scheme == "rk4":
                new = step_rk4(curr, params, dt)
            elif prev is None:
                new = step_euler(curr, params, dt)
            else:
                new = step_leapfrog(prev, curr, params, dt)
                curr = robert_asselin(prev, curr, new, ra_filter)
        except BlowUpError as exc:
            raise BlowUpError(
                f"{exc} (at step {k} of {n_steps})", index=exc.index, step=k
            ) from exc
        prev, curr = curr, new
        if on_step is not None:
            on_step(k, curr)
    return curr


def spinup(
    grid: GridSpec,
    params: PhysicalParams,
    a: float = 100.0,
    n_steps: int = 1000,
    dt: float = 22.5,
    scheme: str = "leapfrog",
    ra_filter: float = 0.01,
    on_step=None,
) -> ModelState:
    """Build the balanced starting state and burn it in for n_steps."""
    state = balanced_initial_state(grid, params, a)
    if n_steps == 0:
        return state
    return integrate(state, params, dt, n_steps, scheme, ra_filter, on_step)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def total_mass(state: ModelState) -> float:
    """Domain integral of the elevation anomaly."""
    g = state.grid
    return float(state.eta.values.sum() * g.dx * g.dy)


def total_energy(state: ModelState, params: PhysicalParams) -> float:
    """Kinetic plus potential energy, with velocities squared onto centers."""
    g = state.grid
    u2 = state.u.values ** 2
    v2 = state.v.values ** 2
    ke = 0.5 * (u2 + _east(u2) + v2 + _north_zero(v2))
    e = state.eta.values
    density = 0.5 * (params.H_mean + e) * ke + 0.5 * params.g * e * e
    return float(density.sum() * g.dx * g.dy)


def integrated_potential_vorticity(state: ModelState, params: PhysicalParams) -> float:
    g = state.grid
    zeta = potential_vorticity(state, params).values
    depth = _depth_at_corners(state.eta.values, params.H_mean)
    return float((zeta * depth).sum() * g.dx * g.dy)
