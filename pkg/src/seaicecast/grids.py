"""Concentration rasters on regular rectangular grids, plus bilinear regridding.

A grid geometry places sample points at ``origin + index * spacing`` (node
registration) in km. Regridding interpolates destination sample points from
the four surrounding source points, renormalizing weights around masked
(land) cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GridField:
    """One 2-D concentration raster with land/validity mask.

    values: (H, W) float array, in [0, 1] on valid cells
    mask: (H, W) bool array, True = water/valid
    """

    values: np.ndarray
    mask: np.ndarray
    cell_size_km: float = 14.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError("values must be 2-d")
        if self.mask.shape != self.values.shape:
            raise ValueError("mask and values must share shape")
        bad = np.argwhere(
            self.mask & ((self.values < 0.0) | (self.values > 1.0))
        )
        if bad.size:
            y, x = bad[0]
            raise ValueError(
                f"value {self.values[y, x]} outside [0,1] at valid cell ({y}, {x})"
            )

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


@dataclass
class GridGeometry:
    """Regular grid geometry: sample point (i, j) sits at
    (y0 + i*dy, x0 + j*dx) in km."""

    height: int
    width: int
    dy: float
    dx: float
    y0: float = 0.0
    x0: float = 0.0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("grid must be at least 2x2")
        if self.dy <= 0.0 or self.dx <= 0.0:
            raise ValueError("degenerate geometry: cell size must be positive")

    def sample_coords(self):
        ys = self.y0 + np.arange(self.height) * self.dy
        xs = self.x0 + np.arange(self.width) * self.dx
        return ys, xs


def regrid_bilinear(field, src, dst):
    """Regrid `field` from geometry `src` to `dst` by masked bilinear blending.

    Destination points outside the source extent come back masked, as do
    points whose four neighbours are all land.
    """
    if (field.height, field.width) != (src.height, src.width):
        raise ValueError("field shape does not match source geometry")

    ys, xs = dst.sample_coords()
    # fractional index of each dst point in src index space
    fy = (ys - src.y0) / src.dy
    fx = (xs - src.x0) / src.dx
    fyg, fxg = np.meshgrid(fy, fx, indexing="ij")

    eps = 1e-9
    inside = (
        (fyg >= -eps)
        & (fyg <= src.height - 1 + eps)
        & (fxg >= -eps)
        & (fxg <= src.width - 1 + eps)
    )

    i0 = np.clip(np.floor(fyg).astype(int), 0, src.height - 2)
    j0 = np.clip(np.floor(fxg).astype(int), 0, src.width - 2)
    ty = fyg - i0
    tx = fxg - j0

    vals = field.values
    msk = field.mask.astype(np.float64)
    out = np.zeros((dst.height, dst.width))
    wsum = np.zeros_like(out)
    for di, wy in ((0, 1.0 - ty), (1, ty)):
        for dj, wx in ((0, 1.0 - tx), (1, tx)):
            w = wy * wx * msk[i0 + di, j0 + dj]
            out += w * vals[i0 + di, j0 + dj]
            wsum += w

    valid = inside & (wsum > eps)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(valid, out / np.where(wsum > eps, wsum, 1.0), 0.0)
    out = np.clip(out, 0.0, 1.0)
    return GridField(out, valid, cell_size_km=float(dst.dx))
