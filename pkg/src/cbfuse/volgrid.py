"""Voxel grids, world/index mapping and trilinear resampling.

Conventions
-----------
* Arrays are stored ``(nz, ny, nx)`` in C order, i.e. x varies fastest.
* ``dims``, ``spacing`` and ``origin`` are always given in (x, y, z) order.
* ``origin`` is the world position (mm) of the centre of voxel (0, 0, 0);
  grids are axis aligned.
* Samples falling outside the grid read 0 (neighbours outside the grid are
  treated as zero padding).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import GeometryMismatch, SingularMap

_SNAP = 1e-9


@dataclass(frozen=True)
class Grid:
    dims: tuple
    spacing: tuple
    origin: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("dims, spacing and origin need three components")
        if min(dims) < 1:
            raise ValueError(f"dims must be positive, got {dims}")
        if min(spacing) <= 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, dims, spacing):
        """Grid whose geometric centre sits at the world origin."""
        if np.isscalar(dims):
            dims = (dims,) * 3
        if np.isscalar(spacing):
            spacing = (spacing,) * 3
        origin = tuple(-(d - 1) * s / 2.0 for d, s in zip(dims, spacing))
        return cls(tuple(dims), tuple(spacing), origin)

    @property
    def shape(self):
        """Array shape ``(nz, ny, nx)``."""
        return self.dims[::-1]

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def center(self):
        return np.array(self.origin) + (np.array(self.dims) - 1) * np.array(self.spacing) / 2.0

    def axes(self):
        """World coordinates of voxel centres along x, y and z."""
        return tuple(o + np.arange(n) * s for o, n, s in zip(self.origin, self.dims, self.spacing))

    def world_points(self):
        """(N, 3) world coordinates of all voxel centres, in data order."""
        xs, ys, zs = self.axes()
        Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def to_index(self, points):
        return (np.asarray(points, dtype=np.float64) - np.array(self.origin)) / np.array(self.spacing)

    def to_world(self, index):
        return np.array(self.origin) + np.asarray(index, dtype=np.float64) * np.array(self.spacing)

    def scaled(self, factor):
        """Grid of an isotropic ``factor``-fold downscale covering the same extent."""
        dims = tuple(d // factor for d in self.dims)
        spacing = tuple(s * factor for s in self.spacing)
        origin = tuple(o + s * (factor - 1) / 2.0 for o, s in zip(self.origin, self.spacing))
        return Grid(dims, spacing, origin)


def _as_grid(g):
    if isinstance(g, Grid):
        return g
    if isinstance(g, (Volume, LabelVolume)):
        return g.grid
    dims, spacing, origin = g
    return Grid(dims, spacing, origin)


class Volume:
    """Immutable scalar voxel field with physical geometry."""

    def __init__(self, data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        arr = np.array(data, dtype=np.float32, copy=True, order="C")
        if arr.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume data contains NaN or Inf")
        arr.setflags(write=False)
        self._data = arr
        self.grid = Grid(arr.shape[::-1], spacing, origin)

    @classmethod
    def from_grid(cls, grid, data):
        grid = _as_grid(grid)
        data = np.asarray(data).reshape(grid.shape)
        return cls(data, grid.spacing, grid.origin)

    @property
    def data(self):
        return self._data

    @property
    def dims(self):
        return self.grid.dims

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def origin(self):
        return self.grid.origin

    def with_data(self, data):
        return Volume.from_grid(self.grid, data)

    def __repr__(self):
        return f"Volume(dims={self.dims}, spacing={self.spacing}, origin={self.origin})"


class LabelVolume:
    """Per-voxel class labels: 0 background, 1 liver, 2 tumor."""

    def __init__(self, labels, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        arr = np.array(labels, copy=True, order="C")
        if arr.ndim != 3:
            raise ValueError(f"label data must be 3-D, got shape {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() > 2):
            raise ValueError("labels must lie in {0, 1, 2}")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        self._labels = arr
        self.grid = Grid(arr.shape[::-1], spacing, origin)

    @classmethod
    def from_grid(cls, grid, labels):
        grid = _as_grid(grid)
        return cls(np.asarray(labels).reshape(grid.shape), grid.spacing, grid.origin)

    @property
    def labels(self):
        return self._labels

    data = labels

    @property
    def dims(self):
        return self.grid.dims

    @property
    def spacing(self):
        return self.grid.spacing

    @property
    def origin(self):
        return self.grid.origin

    @property
    def liver(self):
        """Binary liver channel (liver including tumor)."""
        return self._labels >= 1

    @property
    def tumor(self):
        return self._labels == 2

    def channels(self):
        """Two-channel binary view ``(2, nz, ny, nx)``: liver, tumor."""
        return np.stack([self.liver, self.tumor]).astype(np.float32)

    def __repr__(self):
        return f"LabelVolume(dims={self.dims}, spacing={self.spacing}, origin={self.origin})"


@dataclass(frozen=True)
class AffineMap:
    """World-to-world map ``p -> linear @ p + offset`` (mm)."""

    linear: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(3, 3)
        off = np.array(self.offset, dtype=np.float64).reshape(3)
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "offset", off)

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def translation(cls, t):
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @property
    def det(self):
        return float(np.linalg.det(self.linear))

    def is_identity(self):
        return np.array_equal(self.linear, np.eye(3)) and not np.any(self.offset)

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.linear.T + self.offset

    def inverse(self):
        if abs(self.det) <= 1e-9:
            raise SingularMap(f"affine map is singular (det={self.det:.3g})")
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.offset)

    def compose(self, inner):
        """``self ∘ inner``: apply ``inner`` first."""
        return AffineMap(self.linear @ inner.linear, self.linear @ inner.offset + self.offset)


def _snap(idx):
    r = np.rint(idx)
    return np.where(np.abs(idx - r) < _SNAP, r, idx)


def sample_points(vol, points):
    """Trilinear samples of ``vol`` at an (N, 3) array of world points."""
    idx = _snap(vol.grid.to_index(points).reshape(-1, 3))
    return kernels.trilinear(vol.data, np.ascontiguousarray(idx))


def trilinear_sample(vol, p):
    """Trilinear sample of ``vol`` at a single world point; 0 outside the grid."""
    return float(sample_points(vol, np.asarray(p, dtype=np.float64).reshape(1, 3))[0])


def _nearest_labels(src, points):
    idx = np.floor(_snap(src.grid.to_index(points)) + 0.5).astype(np.int64)
    nx, ny, nz = src.dims
    ok = ((idx[:, 0] >= 0) & (idx[:, 0] < nx) & (idx[:, 1] >= 0) & (idx[:, 1] < ny)
          & (idx[:, 2] >= 0) & (idx[:, 2] < nz))
    out = np.zeros(points.shape[0], dtype=np.uint8)
    out[ok] = src.labels[idx[ok, 2], idx[ok, 1], idx[ok, 0]]
    return out


def _resample_at(src, target, points):
    if isinstance(src, LabelVolume):
        return LabelVolume.from_grid(target, _nearest_labels(src, points))
    return Volume.from_grid(target, sample_points(src, points))


def resample_affine(src, amap, target_grid=None):
    """Resample ``src`` after moving it by ``amap``.

    Output voxel centre ``q`` reads ``src`` at ``amap⁻¹(q)``. Scalar volumes are
    interpolated trilinearly, label volumes by nearest neighbour.
    """
    target = _as_grid(target_grid) if target_grid is not None else src.grid
    inv = amap.inverse()
    q = target.world_points()
    pts = q if inv.is_identity() else inv.apply(q)
    return _resample_at(src, target, pts)


def resample_displacement(src, field, target_grid=None):
    """Output voxel at world ``q`` samples ``src`` at ``q + field(q)``.

    ``field`` has shape ``(nz, ny, nx, 3)`` with (x, y, z) displacement in mm
    on ``target_grid``.
    """
    target = _as_grid(target_grid) if target_grid is not None else src.grid
    field = np.asarray(field, dtype=np.float64)
    if field.shape != tuple(target.shape) + (3,):
        raise GeometryMismatch(
            f"displacement field shape {field.shape} does not match grid {target.shape + (3,)}")
    pts = target.world_points() + field.reshape(-1, 3)
    return _resample_at(src, target, pts)


def downscale(vol, factor=2):
    """Isotropic downscale; scalars average (trilinear at new centres), labels take nearest."""
    return _resample_at(vol, vol.grid.scaled(factor), vol.grid.scaled(factor).world_points())


def crop(vol, start, dims, origin=None):
    """Copy a ``dims`` box starting at index ``start`` (x, y, z); outside reads 0.

    The output origin defaults to the world position of ``start``.
    """
    start = np.asarray(start, dtype=np.int64)
    dims = tuple(int(d) for d in dims)
    src = vol.data
    out = np.zeros(dims[::-1], dtype=src.dtype)
    lo = np.maximum(start, 0)
    hi = np.minimum(start + dims, vol.dims)
    if np.all(hi > lo):
        o_lo = lo - start
        o_hi = hi - start
        out[o_lo[2]:o_hi[2], o_lo[1]:o_hi[1], o_lo[0]:o_hi[0]] = \
            src[lo[2]:hi[2], lo[1]:hi[1], lo[0]:hi[0]]
    if origin is None:
        origin = tuple(vol.grid.to_world(start))
    cls = LabelVolume if isinstance(vol, LabelVolume) else Volume
    return cls(out, vol.spacing, origin)
