"""Staggered Arakawa C-grid geometry, field containers, and snapshot I/O.

Each grid box (i, j) carries one point of every sub-grid: the elevation
point sits at the cell center, the zonal velocity point half a cell to the
west, the meridional velocity point half a cell to the south, and the
vorticity point at the southwest corner.  All four sub-grids are stored as
dense Nx x Ny float64 arrays indexed [i, j] with i zonal (periodic) and j
meridional (walls north and south).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FieldError, InterpolationError

KINDS = ("h", "u", "v", "z")

# Sub-grid offsets in units of (dx, dy) relative to the box corner (i*dx, j*dy).
_OFFSETS = {
    "h": (0.5, 0.5),
    "u": (0.0, 0.5),
    "v": (0.5, 0.0),
    "z": (0.0, 0.0),
}

SNAPSHOT_MAGIC = b"SRSW"
SNAPSHOT_VERSION = 1
# magic, version, kind byte, Nx, Ny, time; all little-endian, no padding
_HEADER = struct.Struct("<4sIBIId")


@dataclass(frozen=True)
class GridSpec:
    """Domain geometry and resolution of the staggered grid.

    Lengths are in meters.  The default paper-scale configuration is
    available through :func:`paper_grid`.
    """

    Lx: float
    Ly: float
    Nx: int
    Ny: int

    def __post_init__(self):
        if self.Nx < 4 or self.Ny < 4:
            raise FieldError(f"grid must be at least 4x4, got {self.Nx}x{self.Ny}")
        if self.Lx <= 0.0 or self.Ly <= 0.0:
            raise FieldError("domain lengths must be positive")

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    def wrap_east_west(self, i):
        """Wrap a zonal index (scalar or array) into [0, Nx)."""
        return i % self.Nx

    def x_coords(self, kind: str) -> np.ndarray:
        ox = _OFFSETS[kind][0]
        return (np.arange(self.Nx) + ox) * self.dx

    def y_coords(self, kind: str) -> np.ndarray:
        oy = _OFFSETS[kind][1]
        return (np.arange(self.Ny) + oy) * self.dy

    def mesh(self, kind: str):
        """Coordinate arrays (X, Y), each of shape (Nx, Ny), for one sub-grid."""
        return np.meshgrid(self.x_coords(kind), self.y_coords(kind), indexing="ij")

    def coarsened(self, c: int) -> "GridSpec":
        """Grid spanning the same domain with every c-th point retained."""
        if c < 1 or self.Nx % c or self.Ny % c:
            raise FieldError(
                f"coarsening factor {c} must divide the grid dimensions "
                f"({self.Nx}, {self.Ny})"
            )
        return GridSpec(self.Lx, self.Ly, self.Nx // c, self.Ny // c)


def paper_grid() -> GridSpec:
    """Fine grid used for the full-scale runs: 27787.5 km x 3975 km, 2224 x 320."""
    return GridSpec(Lx=27787.5e3, Ly=3975.0e3, Nx=2224, Ny=320)


@dataclass(frozen=True)
class StaggeredField:
    """Values of one variable on one of the four staggered sub-grids.

    The wrapped array is frozen after construction; operations return new
    fields instead of mutating, which keeps concurrent use safe.
    """

    kind: str
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FieldError(f"unknown grid kind {self.kind!r}; expected one of {KINDS}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.shape != self.grid.shape:
            raise FieldError(
                f"field shape {vals.shape} does not match grid {self.grid.shape}"
            )
        if not np.isfinite(vals).all():
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise FieldError(
                f"non-finite value in {self.kind!r} field at index ({bad[0]}, {bad[1]})"
            )
        vals = np.ascontiguousarray(vals)
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def with_values(self, values: np.ndarray) -> "StaggeredField":
        return StaggeredField(self.kind, self.grid, values)

    def _check_compatible(self, other: "StaggeredField"):
        if self.kind != other.kind or self.grid != other.grid:
            raise FieldError(
                f"incompatible fields: kind {self.kind!r} on {self.grid.shape} vs "
                f"kind {other.kind!r} on {other.grid.shape}"
            )

    def __add__(self, other: "StaggeredField") -> "StaggeredField":
        self._check_compatible(other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "StaggeredField") -> "StaggeredField":
        self._check_compatible(other)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: float) -> "StaggeredField":
        return self.with_values(self.values * float(scalar))

    __rmul__ = __mul__


def zeros(grid: GridSpec, kind: str) -> StaggeredField:
    return StaggeredField(kind, grid, np.zeros(grid.shape))


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the single-layer model.

    Earth-like midlatitude defaults; every value is configuration-
    overridable.
    """

    g: float = 9.81          # gravitational acceleration, m/s^2
    f0: float = 1.0e-4       # Coriolis parameter at the reference latitude, 1/s
    beta: float = 2.0e-11    # meridional Coriolis gradient, 1/(m s)
    H_mean: float = 1000.0   # mean layer depth, m
    D: float = 100.0         # eddy viscosity, m^2/s
    r: float = 0.0           # linear (Rayleigh) friction, 1/s

    def __post_init__(self):
        problems = []
        if self.g <= 0.0:
            problems.append(f"g must be positive, got {self.g}")
        if self.H_mean <= 0.0:
            problems.append(f"H_mean must be positive, got {self.H_mean}")
        if self.D < 0.0:
            problems.append(f"D must be non-negative, got {self.D}")
        if self.r < 0.0:
            problems.append(f"r must be non-negative, got {self.r}")
        if problems:
            raise FieldError("; ".join(problems))


@dataclass(frozen=True)
class ModelState:
    """Prognostic triple (u, v, eta) at one time level.

    eta is the surface elevation about the mean depth; the total layer
    depth is H_mean + eta (flat bottom).  The meridional velocity is
    exactly zero on the southern and northern boundary rows.
    """

    u: StaggeredField
    v: StaggeredField
    eta: StaggeredField
    time: float = 0.0

    def __post_init__(self):
        expected = (("u", self.u), ("v", self.v), ("h", self.eta))
        for kind, f in expected:
            if f.kind != kind:
                raise FieldError(f"state field has kind {f.kind!r}, expected {kind!r}")
        if not (self.u.grid == self.v.grid == self.eta.grid):
            raise FieldError("state fields live on different grids")
        v = self.v.values
        if np.any(v[:, 0] != 0.0) or np.any(v[:, -1] != 0.0):
            raise FieldError("meridional velocity must vanish on the boundary rows")

    @property
    def grid(self) -> GridSpec:
        return self.u.grid


def state_from_arrays(grid: GridSpec, u, v, eta, time: float = 0.0) -> ModelState:
    """Convenience constructor from bare arrays."""
    return ModelState(
        u=StaggeredField("u", grid, u),
        v=StaggeredField("v", grid, v),
        eta=StaggeredField("h", grid, eta),
        time=time,
    )


# ---------------------------------------------------------------------------
# Interpolation between adjacent staggerings
# ---------------------------------------------------------------------------

def _h_to_u(a):
    return 0.5 * (a + np.roll(a, 1, axis=0))


def _u_to_h(a):
    return 0.5 * (a + np.roll(a, -1, axis=0))


def _h_to_v(a):
    out = np.empty_like(a)
    out[:, 1:] = 0.5 * (a[:, 1:] + a[:, :-1])
    out[:, 0] = a[:, 0]
    return out


def _v_to_h(a):
    out = np.empty_like(a)
    out[:, :-1] = 0.5 * (a[:, :-1] + a[:, 1:])
    out[:, -1] = a[:, -1]
    return out


def _h_to_z(a):
    s = a + np.roll(a, 1, axis=0)  # pair (i, i-1) at fixed j
    out = np.empty_like(a)
    out[:, 1:] = 0.25 * (s[:, 1:] + s[:, :-1])
    out[:, 0] = 0.5 * s[:, 0]
    return out


def _z_to_h(a):
    s = a + np.roll(a, -1, axis=0)  # pair (i, i+1) at fixed j
    out = np.empty_like(a)
    out[:, :-1] = 0.25 * (s[:, :-1] + s[:, 1:])
    out[:, -1] = 0.5 * s[:, -1]
    return out


_INTERP = {
    ("h", "u"): _h_to_u,
    ("u", "h"): _u_to_h,
    ("h", "v"): _h_to_v,
    ("v", "h"): _v_to_h,
    ("h", "z"): _h_to_z,
    ("z", "h"): _z_to_h,
}


def interpolate(field: StaggeredField, target_kind: str) -> StaggeredField:
    """Average a field onto an adjacent staggering.

    Supported pairs are h<->u and h<->v (two-point means) and h<->z
    (four-point means).  The zonal direction wraps periodically; where the
    stencil would leave the grid meridionally the nearest interior value
    is used.
    """
    key = (field.kind, target_kind)
    if key not in _INTERP:
        raise InterpolationError(
            f"cannot interpolate kind {field.kind!r} to kind {target_kind!r}"
        )
    return StaggeredField(target_kind, field.grid, _INTERP[key](field.values))


# ---------------------------------------------------------------------------
# Binary snapshot format (one file per field per time level)
# ---------------------------------------------------------------------------

def write_snapshot(path, field: StaggeredField, time: float):
    """Write one field to the binary snapshot format.

    Layout: magic "SRSW", u32 format version, u8 kind (ASCII letter), u32
    Nx, u32 Ny, f64 time, then Nx*Ny little-endian f64 values with the
    zonal index varying fastest.
    """
    g = field.grid
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, ord(field.kind), g.Nx, g.Ny, float(time)
    )
    data = field.values.astype("<f8", copy=False).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data)


def read_snapshot(path, grid: GridSpec) -> tuple[StaggeredField, float]:
    """Read a snapshot written by :func:`write_snapshot`.

    The file stores only the array dimensions, so the domain geometry must
    be supplied; dimensions are cross-checked.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FieldError(f"snapshot {path} is truncated")
    magic, version, kind_byte, nx, ny, time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise FieldError(f"snapshot {path} has bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FieldError(f"snapshot {path} has unsupported version {version}")
    kind = chr(kind_byte)
    if kind not in KINDS:
        raise FieldError(f"snapshot {path} has unknown kind byte {kind_byte}")
    if (nx, ny) != grid.shape:
        raise FieldError(
            f"snapshot {path} is {nx}x{ny}, expected {grid.Nx}x{grid.Ny}"
        )
    n = nx * ny
    data = np.frombuffer(raw, dtype="<f8", count=n, offset=_HEADER.size)
    if data.size != n:
        raise FieldError(f"snapshot {path} has truncated data section")
    values = data.reshape((nx, ny), order="F")
    return StaggeredField(kind, grid, values), time
