"""Low-pass mollification of fine-grid fields and subsampling projection.

The mollifier is a normalized convolution applied to interior points with
periodic wrap east-west.  Rows within half a kernel width of the northern
and southern walls copy the input so the wall values are preserved; a
uniform interior correction then restores the global sum exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.ndimage

from .errors import FieldError
from .grid import GridSpec, StaggeredField


@dataclass(frozen=True)
class Kernel:
    """Centered, normalized convolution kernel."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise FieldError("kernel weights must be a 2-D array")
        if w.shape[0] % 2 == 0 or w.shape[1] % 2 == 0:
            raise FieldError(f"kernel dimensions must be odd, got {w.shape}")
        if np.any(w < 0.0):
            raise FieldError("kernel weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-14:
            raise FieldError(f"kernel weights must sum to 1, got {w.sum()!r}")
        w = np.ascontiguousarray(w)
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def kx(self) -> int:
        return self.weights.shape[0]

    @property
    def ky(self) -> int:
        return self.weights.shape[1]


def kernel_c4() -> Kernel:
    """3x3 uniform kernel used with coarsening factor 4."""
    return Kernel(np.full((3, 3), 1.0 / 9.0))


_PYRAMID_PROFILE = np.array([1, 2, 3, 4, 5, 4, 3, 2, 1], dtype=np.float64)


def kernel_c8() -> Kernel:
    """9x9 pyramid kernel used with coarsening factor 8.

    Entry (i, j) is min(p_i, p_j) with profile 1..5..1; the 81 raw entries
    sum to 165, hence the normalization.
    """
    raw = np.minimum.outer(_PYRAMID_PROFILE, _PYRAMID_PROFILE)
    return Kernel(raw / 165.0)


def kernel_for_factor(c: int) -> Kernel:
    if c == 4:
        return kernel_c4()
    if c == 8:
        return kernel_c8()
    raise FieldError(f"no default kernel for coarsening factor {c}; supply one")


@dataclass(frozen=True)
class CoarseningSpec:
    """Pairing of a coarsening factor, its kernel, and the two grids."""

    c: int
    kernel: Kernel
    fine: GridSpec

    def __post_init__(self):
        if self.c < 1 or self.fine.Nx % self.c or self.fine.Ny % self.c:
            raise FieldError(
                f"coarsening factor {self.c} must divide the grid dimensions "
                f"({self.fine.Nx}, {self.fine.Ny})"
            )

    @property
    def coarse(self) -> GridSpec:
        return self.fine.coarsened(self.c)


def mollify(field: StaggeredField, kernel: Kernel, conserve: bool = True) -> StaggeredField:
    """Apply the normalized low-pass filter to a field.

    Interior points receive the discrete convolution with periodic wrap in
    the zonal direction.  The rows within half a kernel height of the
    north/south walls copy the input.  With ``conserve`` (the default) a
    single uniform constant is added to the convolved rows afterwards so
    that the global sum matches the input exactly; the copy and the sum
    cannot both hold exactly for a generic kernel footprint otherwise.
    """
    w = kernel.weights
    nx, ny = field.grid.shape
    if kernel.kx > nx or kernel.ky > ny:
        raise FieldError(
            f"kernel {kernel.kx}x{kernel.ky} does not fit grid {nx}x{ny}"
        )
    k2y = kernel.ky // 2
    a = field.values
    # Wrap-around correlation; the meridional wrap only feeds rows that
    # the copy band overwrites below, so zonal periodicity is all that
    # survives of the boundary mode.
    out = scipy.ndimage.correlate(a, w, mode="wrap")

    if k2y:
        out[:, :k2y] = a[:, :k2y]
        out[:, ny - k2y:] = a[:, ny - k2y:]
    if conserve:
        interior = out[:, k2y:ny - k2y]
        interior += (a.sum() - out.sum()) / interior.size
    return field.with_values(out)


def subsample(field: StaggeredField, c: int) -> StaggeredField:
    """Restrict a field onto the coarse grid: output(i, j) = input(c*i, c*j)."""
    coarse = field.grid.coarsened(c)
    return StaggeredField(field.kind, coarse, field.values[::c, ::c].copy())


def mollify_subsample(field: StaggeredField, kernel: Kernel, c: int) -> StaggeredField:
    return subsample(mollify(field, kernel), c)
