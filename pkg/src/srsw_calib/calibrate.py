"""Noise calibration from fine/coarse discrepancy increments.

Pipeline: build increments of the mollification discrepancy on the coarse
grid, estimate a decorrelation lag from their autocorrelation, solve a
transport equation for a stream function at each decorrelated calibration
time, and extract an orthogonal noise basis from the resulting velocity
perturbations with an SVD.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .coarsen import Kernel, mollify, subsample
from .dynamics import _east, _north_edge, _south_edge, _west
from .errors import CalibrationError, FieldError, SolverError
from .grid import GridSpec, StaggeredField, read_snapshot, write_snapshot

RESIDUAL_TOL = 1e-10
DEGENERATE_SPEED_FRACTION = 1e-12
REGULARIZATION_FRACTION = 1e-10


@dataclass(frozen=True)
class IncrementSeries:
    """Time-ordered discrepancy increments on the coarse grid."""

    deltas: tuple
    dt_between: float
    delta_span: float

    def __post_init__(self):
        if len(self.deltas) == 0:
            raise FieldError("increment series is empty")
        first = self.deltas[0]
        for f in self.deltas:
            if f.kind != first.kind or f.grid != first.grid:
                raise FieldError("increment fields must share grid and kind")
        object.__setattr__(self, "deltas", tuple(self.deltas))

    def __len__(self):
        return len(self.deltas)

    @property
    def grid(self) -> GridSpec:
        return self.deltas[0].grid

    def stacked(self) -> np.ndarray:
        """(N, Nx, Ny) array view of the series."""
        return np.stack([f.values for f in self.deltas])


@dataclass(frozen=True)
class DecorrelationEstimate:
    lags: tuple
    mean_abs_corr: tuple
    ell_decorr: int
    alpha: float

    def __post_init__(self):
        if self.ell_decorr < 1:
            raise FieldError("decorrelation lag must be at least 1")
        if abs(self.mean_abs_corr[0] - 1.0) > 1e-12:
            raise FieldError("lag-0 mean absolute correlation must be 1")


def discrepancy_increments(
    fine_etas,
    kernel: Kernel,
    c: int,
    delta_steps: int = 1,
    dt_between: float = 1.0,
    conserve: bool = True,
) -> IncrementSeries:
    """Increments of the mollification discrepancy, restricted to the
    coarse grid.

    For each time index t the increment is
    [C(h_{t+d}) - h_{t+d}] - [C(h_t) - h_t] with C the mollifier and d =
    ``delta_steps`` snapshots.  Subsampling commutes with the differences,
    so the discrepancies are reduced to the coarse grid as they are built.
    """
    fine_etas = list(fine_etas)
    if len(fine_etas) < delta_steps + 1:
        raise FieldError(
            f"need at least {delta_steps + 1} snapshots to form one "
            f"increment, got {len(fine_etas)}"
        )
    hats = [
        subsample(mollify(f, kernel, conserve), c) - subsample(f, c)
        for f in fine_etas
    ]
    deltas = [hats[t + delta_steps] - hats[t] for t in range(len(hats) - delta_steps)]
    return IncrementSeries(
        deltas=tuple(deltas),
        dt_between=dt_between,
        delta_span=delta_steps * dt_between,
    )


def _correlation_and_mask(stack: np.ndarray, lag: int):
    """Pointwise lag correlation of the series plus the valid-variance mask.

    The numerator averages the lagged products minus the squared sample
    mean over the leading N - lag samples; the denominator is the sample
    variance (N - lag - 1 divisor) of the same samples.  Points with zero
    variance are masked out and report correlation 0.  Lag 0 is the
    self-correlation and returns exactly 1 on unmasked points.
    """
    n = stack.shape[0]
    m = n - lag
    head = stack[:m]
    mean = head.mean(axis=0)
    var = head.var(axis=0, ddof=1) if m > 1 else np.zeros_like(mean)
    mask = var > 0.0
    if lag == 0:
        corr = np.where(mask, 1.0, 0.0)
        return corr, mask
    num = (head * stack[lag:lag + m]).mean(axis=0) - mean * mean
    corr = np.zeros_like(mean)
    np.divide(num, var, out=corr, where=mask)
    np.clip(corr, -1.0, 1.0, out=corr)
    return corr, mask


def autocorrelation(series: IncrementSeries, lag: int) -> StaggeredField:
    """Pointwise-in-space autocorrelation of the increments at one lag."""
    if not 0 <= lag < len(series) - 1:
        raise FieldError(
            f"lag {lag} out of range for a series of length {len(series)}"
        )
    corr, _ = _correlation_and_mask(series.stacked(), lag)
    return series.deltas[0].with_values(corr)


def decorrelation_time(series: IncrementSeries, alpha: float) -> DecorrelationEstimate:
    """Smallest lag at which the spatial mean absolute correlation falls
    to the threshold ``alpha``.

    Scans lags up to a quarter of the series length and fails with the
    accumulated profile if the threshold is never reached.
    """
    if not 0.0 < alpha < 1.0:
        raise FieldError(f"alpha must lie in (0, 1), got {alpha}")
    stack = series.stacked()
    ell_max = len(series) // 4
    lags = [0]
    profile = [1.0]
    for ell in range(1, ell_max + 1):
        corr, mask = _correlation_and_mask(stack, ell)
        if not mask.any():
            raise CalibrationError(
                "increment series has zero variance everywhere", profile=profile
            )
        cbar = float(np.abs(corr[mask]).mean())
        lags.append(ell)
        profile.append(cbar)
        if cbar <= alpha:
            return DecorrelationEstimate(
                lags=tuple(lags),
                mean_abs_corr=tuple(profile),
                ell_decorr=ell,
                alpha=alpha,
            )
    raise CalibrationError(
        f"mean absolute correlation never fell to {alpha} within lag "
        f"{ell_max}; profile min {min(profile[1:], default=1.0):.4f}",
        profile=profile,
    )


def calibration_grid(ell_decorr: int, n_total_steps: int) -> list[int]:
    """Step indices n*ell for n = 1..floor(N/ell)."""
    if ell_decorr < 1:
        raise FieldError("decorrelation lag must be at least 1")
    return list(range(ell_decorr, n_total_steps + 1, ell_decorr))


# ---------------------------------------------------------------------------
# Transport (hyperbolic) solve for the stream functions
# ---------------------------------------------------------------------------

def advecting_field(
    c_hat: StaggeredField,
) -> tuple[StaggeredField, StaggeredField]:
    """Advecting velocity minus-perp-gradient of the mollified elevation:
    q_u = +dC/dy on the u points, q_v = -dC/dx on the v points."""
    grid = c_hat.grid
    e = c_hat.values
    cy_v = np.zeros_like(e)
    cy_v[:, 1:] = (e[:, 1:] - e[:, :-1]) / grid.dy
    q_u = 0.25 * (cy_v + _west(cy_v) + _north_edge(cy_v) + _west(_north_edge(cy_v)))
    cx_u = (e - _west(e)) / grid.dx
    q_v = -0.25 * (cx_u + _east(cx_u) + _south_edge(cx_u) + _east(_south_edge(cx_u)))
    q_v[:, 0] = 0.0
    q_v[:, -1] = 0.0
    return StaggeredField("u", grid, q_u), StaggeredField("v", grid, q_v)


def _face_speeds(q_u: np.ndarray, q_v: np.ndarray):
    """Normal velocities on the faces of the corner-centered control cells.

    Cell (i, j) is centered on the vorticity point; its east face midpoint
    is the v point (i, j) and its north face midpoint the u point (i, j),
    so the advecting components are averaged from the opposite staggering.
    """
    a_east = 0.25 * (
        q_u + _east(q_u) + _south_edge(q_u) + _east(_south_edge(q_u))
    )
    b_north = 0.25 * (
        q_v + _west(q_v) + _north_edge(q_v) + _west(_north_edge(q_v))
    )
    return a_east, b_north


def transport_operator(
    q_u: StaggeredField, q_v: StaggeredField
) -> scipy.sparse.csr_matrix:
    """First-order upwind finite-volume matrix for q . grad(psi).

    Unknowns are the corner values of psi in C (row-major) order.  Fluxes
    through each face take psi from the upwind side, and the discrete
    divergence of the face speeds is subtracted from the diagonal so the
    operator represents pure advection (constants are an exact null vector)
    even when the supplied field is not discretely divergence-free.  The
    zonal direction wraps; the wall rows are replaced by scaled identity
    rows that pin psi = 0 there, which supplies the inflow boundary value
    and leaves outflow faces one-sided.
    """
    grid = q_u.grid
    if q_v.grid != grid or q_v.kind != "v" or q_u.kind != "u":
        raise FieldError("advecting pair must be (u, v) fields on one grid")
    nx, ny = grid.shape
    dx, dy = grid.dx, grid.dy

    a, b = _face_speeds(q_u.values, q_v.values)
    a_e = a
    a_w = _west(a)
    b_n = b
    b_s = _south_edge(b)

    pos = lambda x: np.maximum(x, 0.0)
    neg = lambda x: np.minimum(x, 0.0)

    diag = -neg(a_e) / dx + pos(a_w) / dx - neg(b_n) / dy + pos(b_s) / dy
    c_e = neg(a_e) / dx
    c_w = -pos(a_w) / dx
    c_n = neg(b_n) / dy
    c_s = -pos(b_s) / dy

    scale = max(
        np.abs(diag).max(),
        np.abs(c_e).max(),
        np.abs(c_w).max(),
        np.abs(c_n).max(),
        np.abs(c_s).max(),
        1e-300,
    )
    if scale < 1e-250:
        scale = 1.0

    K = np.arange(nx * ny).reshape(nx, ny)
    interior = np.zeros((nx, ny), dtype=bool)
    interior[:, 1:-1] = True

    rows = [K[interior]] * 5
    cols = [
        K[interior],
        _east(K)[interior],
        _west(K)[interior],
        (K + 1)[interior],   # north neighbor: j+1 valid for interior rows
        (K - 1)[interior],   # south neighbor
    ]
    data = [
        diag[interior],
        c_e[interior],
        c_w[interior],
        c_n[interior],
        c_s[interior],
    ]
    wall = ~interior
    rows.append(K[wall])
    cols.append(K[wall])
    data.append(np.full(wall.sum(), scale))

    mat = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nx * ny, nx * ny),
    )
    return mat.tocsr()


def _degenerate_cells(q_u: StaggeredField, q_v: StaggeredField) -> np.ndarray:
    a, b = _face_speeds(q_u.values, q_v.values)
    speeds = np.stack([np.abs(a), np.abs(_west(a)), np.abs(b), np.abs(_south_edge(b))])
    qmax = speeds.max()
    if qmax == 0.0:
        return np.ones(q_u.grid.shape, dtype=bool)
    return speeds.max(axis=0) < DEGENERATE_SPEED_FRACTION * qmax


def solve_calibration_equation(
    f: StaggeredField,
    q: tuple[StaggeredField, StaggeredField],
) -> StaggeredField:
    """Solve q . grad(psi) = f for the cellwise-constant stream function.

    Cells whose four face speeds all vanish (relative to the largest
    speed) are underdetermined stagnation cells; they receive a small
    diagonal regularization and a zeroed right-hand side pinning psi to 0
    there.  The solve is a sparse direct factorization; a relative
    residual above 1e-10 raises.
    """
    q_u, q_v = q
    grid = f.grid
    if f.kind != "h":
        raise FieldError(f"right-hand side must live on the h grid, got {f.kind!r}")
    if q_u.grid != grid:
        raise FieldError("advecting pair and right-hand side grids differ")
    nx, ny = grid.shape

    mat = transport_operator(q_u, q_v).tolil()
    rhs = f.values.ravel().copy()
    rhs.reshape(nx, ny)[:, 0] = 0.0
    rhs.reshape(nx, ny)[:, -1] = 0.0

    dead = _degenerate_cells(q_u, q_v)
    dead[:, 0] = False
    dead[:, -1] = False
    if dead.any():
        eps = REGULARIZATION_FRACTION * max(np.abs(mat.tocsr().data).max(), 1.0)
        idx = np.flatnonzero(dead.ravel())
        for k in idx:
            mat[k, k] += eps
        rhs[idx] = 0.0
    mat = mat.tocsc()

    try:
        lu = scipy.sparse.linalg.splu(mat)
        psi = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"transport system factorization failed: {exc}") from exc
    if not np.isfinite(psi).all():
        raise SolverError("transport solve produced non-finite values")
    rhs_norm = np.linalg.norm(rhs)
    residual = np.linalg.norm(mat @ psi - rhs) / max(rhs_norm, 1e-300)
    if rhs_norm > 0.0 and residual > RESIDUAL_TOL:
        raise SolverError(
            f"transport solve residual {residual:.3e} above {RESIDUAL_TOL:.0e}"
        )
    return StaggeredField("z", grid, psi.reshape(nx, ny))


def perturbation_velocity(
    psi: StaggeredField,
) -> tuple[StaggeredField, StaggeredField]:
    """Perp-gradient of a corner stream function onto the velocity points.

    u = -dpsi/dy, v = +dpsi/dx; psi is taken as zero beyond the walls and
    v is forced to zero on the wall rows.
    """
    if psi.kind != "z":
        raise FieldError(f"stream function must live on the z grid, got {psi.kind!r}")
    grid = psi.grid
    p = psi.values
    u = np.empty_like(p)
    u[:, :-1] = -(p[:, 1:] - p[:, :-1]) / grid.dy
    u[:, -1] = p[:, -1] / grid.dy
    v = (_east(p) - p) / grid.dx
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    return StaggeredField("u", grid, u), StaggeredField("v", grid, v)


# ---------------------------------------------------------------------------
# Orthogonal basis extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EOFBasis:
    """Retained noise modes with their stream functions and spectrum.

    sigma and explained cover the full spectrum; the spatial patterns are
    stored for the retained modes only.  Each velocity pair is the
    perp-gradient of the matching stream function, hence discretely
    divergence-free.
    """

    psi: tuple
    xi_u: tuple
    xi_v: tuple
    sigma: np.ndarray
    explained: np.ndarray
    n_retained: int
    delta_span: float
    grid: GridSpec

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=np.float64)
        exp = np.asarray(self.explained, dtype=np.float64)
        if np.any(np.diff(sig) > 1e-12 * max(sig[0] if sig.size else 0.0, 1e-300)):
            raise FieldError("singular values must be non-increasing")
        if exp.size and abs(exp[-1] - 1.0) > 1e-12:
            raise FieldError("explained variance must accumulate to 1")
        if len(self.psi) != self.n_retained or len(self.xi_u) != self.n_retained:
            raise FieldError("retained mode count does not match stored patterns")
        object.__setattr__(self, "sigma", sig)
        object.__setattr__(self, "explained", exp)


def empty_basis(grid: GridSpec, delta_span: float = 1.0) -> EOFBasis:
    """Basis with no modes; the stochastic model then degenerates to the
    deterministic one."""
    return EOFBasis(
        psi=(),
        xi_u=(),
        xi_v=(),
        sigma=np.zeros(0),
        explained=np.zeros(0),
        n_retained=0,
        delta_span=delta_span,
        grid=grid,
    )


def eof_decomposition(
    samples,
    delta_span: float,
    n_xi: float,
    psi_samples=None,
) -> EOFBasis:
    """Principal spatial patterns of the velocity perturbation samples.

    Each sample is an (xi_u, xi_v) field pair; rows (sample - mean)/
    sqrt(delta_span) are stacked and decomposed with an SVD.  Mode j keeps
    the pattern sigma_j/sqrt(n) * V_j so the summed outer products match
    the sample covariance of the scaled increments.  Retention keeps the
    smallest leading set explaining at least the fraction ``n_xi``.  When
    the generating stream functions are supplied, the same temporal
    coefficients reconstruct one stream function per retained mode, which
    keeps every retained velocity pair an exact perp-gradient.
    """
    samples = list(samples)
    if len(samples) < 2:
        raise CalibrationError(f"need at least 2 samples, got {len(samples)}")
    if not 0.0 < n_xi <= 1.0:
        raise FieldError(f"variance fraction must lie in (0, 1], got {n_xi}")
    if delta_span <= 0.0:
        raise FieldError("delta_span must be positive")
    grid = samples[0][0].grid
    n = len(samples)
    rows = np.stack(
        [np.concatenate([su.values.ravel(), sv.values.ravel()]) for su, sv in samples]
    )
    if not np.any(rows != rows[0]):
        raise CalibrationError("degenerate data: all samples are identical")
    mean = rows.mean(axis=0)
    d = (rows - mean) / np.sqrt(delta_span)

    u_mat, sigma, vt = np.linalg.svd(d, full_matrices=False)
    # canonical signs: the largest-magnitude entry of each pattern is positive
    for j in range(sigma.size):
        k = np.argmax(np.abs(vt[j]))
        if vt[j, k] < 0.0:
            vt[j] = -vt[j]
            u_mat[:, j] = -u_mat[:, j]

    total = float((sigma**2).sum())
    explained = np.cumsum(sigma**2) / total
    rank = int((sigma > sigma[0] * 1e-12).sum())
    idx = int(np.searchsorted(explained, n_xi))
    n_retained = min(idx + 1, rank)

    m = grid.Nx * grid.Ny
    xi_u, xi_v, psi = [], [], []
    if psi_samples is not None:
        psi_rows = np.stack([p.values.ravel() for p in psi_samples])
        psi_centered = (psi_rows - psi_rows.mean(axis=0)) / np.sqrt(delta_span)
    for j in range(n_retained):
        zeta = (sigma[j] / np.sqrt(n)) * vt[j]
        xi_u.append(StaggeredField("u", grid, zeta[:m].reshape(grid.shape)))
        xi_v.append(StaggeredField("v", grid, zeta[m:].reshape(grid.shape)))
        if psi_samples is not None:
            pj = psi_centered.T @ u_mat[:, j] / np.sqrt(n)
            psi.append(StaggeredField("z", grid, pj.reshape(grid.shape)))
        else:
            psi.append(StaggeredField("z", grid, np.zeros(grid.shape)))
    return EOFBasis(
        psi=tuple(psi),
        xi_u=tuple(xi_u),
        xi_v=tuple(xi_v),
        sigma=sigma,
        explained=explained,
        n_retained=n_retained,
        delta_span=delta_span,
        grid=grid,
    )


# ---------------------------------------------------------------------------
# End-to-end calibration and basis serialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationReport:
    ell_decorr: int
    lags: tuple
    mean_abs_corr: tuple
    n_samples: int
    alpha: float


def calibrate_noise_basis(
    fine_etas,
    dt_fine: float,
    kernel: Kernel,
    c: int,
    alpha: float = 0.2,
    delta_steps: int = 1,
    n_xi: float = 0.9,
) -> tuple[EOFBasis, CalibrationReport]:
    """Run the full calibration chain on a unit-stride elevation series.

    The decorrelation lag is always estimated from the single-step
    increment series.  The calibration samples themselves span
    ``delta_steps`` fine steps (default one); ``delta_steps = 0`` selects
    the estimated decorrelation lag, which makes consecutive samples tile
    the window without overlap.

    Accepts any iterable of fine-grid elevation fields; only the coarse
    products are kept, so a lazily loaded snapshot stream works.
    """
    if delta_steps < 0:
        raise FieldError(f"delta_steps must be non-negative, got {delta_steps}")
    chat = []
    hats = []
    for f in fine_etas:
        ch = subsample(mollify(f, kernel), c)
        chat.append(ch)
        hats.append(ch - subsample(f, c))
    unit = [hats[t + 1] - hats[t] for t in range(len(hats) - 1)]
    if not unit:
        raise FieldError(
            f"need at least 2 snapshots to form increments, got {len(hats)}"
        )
    unit_series = IncrementSeries(
        deltas=tuple(unit), dt_between=dt_fine, delta_span=dt_fine
    )
    est = decorrelation_time(unit_series, alpha)
    span = delta_steps if delta_steps > 0 else est.ell_decorr
    times = calibration_grid(est.ell_decorr, len(hats) - 1 - span)
    if len(times) < 2:
        raise CalibrationError(
            f"only {len(times)} calibration times available at lag "
            f"{est.ell_decorr} with span {span}; extend the data window"
        )
    delta_span = span * dt_fine
    pairs = []
    psis = []
    for t in times:
        q = advecting_field(chat[t])
        f_increment = hats[t + span] - hats[t]
        psi = solve_calibration_equation(f_increment, q)
        psis.append(psi)
        pairs.append(perturbation_velocity(psi))
    basis = eof_decomposition(pairs, delta_span, n_xi, psi_samples=psis)
    report = CalibrationReport(
        ell_decorr=est.ell_decorr,
        lags=est.lags,
        mean_abs_corr=est.mean_abs_corr,
        n_samples=len(times),
        alpha=alpha,
    )
    return basis, report


def save_eof_basis(basis: EOFBasis, directory):
    """Write the basis manifest plus one snapshot file per stored field."""
    os.makedirs(directory, exist_ok=True)
    lines = [
        f"n_retained = {basis.n_retained}",
        f"delta_span = {float(basis.delta_span)!r}",
        f"nx = {basis.grid.Nx}",
        f"ny = {basis.grid.Ny}",
        f"lx = {float(basis.grid.Lx)!r}",
        f"ly = {float(basis.grid.Ly)!r}",
        "sigma = " + ",".join(repr(float(s)) for s in basis.sigma),
        "explained = " + ",".join(repr(float(x)) for x in basis.explained),
    ]
    with open(os.path.join(directory, "basis_manifest.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    for j in range(basis.n_retained):
        write_snapshot(os.path.join(directory, f"xi_u_{j:03d}.field"), basis.xi_u[j], 0.0)
        write_snapshot(os.path.join(directory, f"xi_v_{j:03d}.field"), basis.xi_v[j], 0.0)
        write_snapshot(os.path.join(directory, f"psi_{j:03d}.field"), basis.psi[j], 0.0)


def load_eof_basis(directory) -> EOFBasis:
    path = os.path.join(directory, "basis_manifest.txt")
    entries = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, value = line.split("=", 1)
                entries[key.strip()] = value.strip()
    grid = GridSpec(
        Lx=float(entries["lx"]),
        Ly=float(entries["ly"]),
        Nx=int(entries["nx"]),
        Ny=int(entries["ny"]),
    )
    n_retained = int(entries["n_retained"])
    sigma = np.array([float(s) for s in entries["sigma"].split(",") if s])
    explained = np.array([float(s) for s in entries["explained"].split(",") if s])
    xi_u, xi_v, psi = [], [], []
    for j in range(n_retained):
        xi_u.append(read_snapshot(os.path.join(directory, f"xi_u_{j:03d}.field"), grid)[0])
        xi_v.append(read_snapshot(os.path.join(directory, f"xi_v_{j:03d}.field"), grid)[0])
        psi.append(read_snapshot(os.path.join(directory, f"psi_{j:03d}.field"), grid)[0])
    return EOFBasis(
        psi=tuple(psi),
        xi_u=tuple(xi_u),
        xi_v=tuple(xi_v),
        sigma=sigma,
        explained=explained,
        n_retained=n_retained,
        delta_span=float(entries["delta_span"]),
        grid=grid,
    )
