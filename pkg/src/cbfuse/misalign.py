"""Random affine and elastic misalignment of the preoperative CT channel.

One alignment factor ``alpha_a`` scales every range:

* scale per axis        ~ U(1 - 0.5·a, 1 + 0.5·a)
* rotation per axis     ~ U(-22.5·a, 22.5·a) degrees
* translation per axis  ~ U(0, 0.5·a) mm (times ``translation_scale``)
* elastic: maximum displacement d ~ U(0, 20·a) mm per volume, then every
  component of a 7x7x7 control grid ~ U(-d, d); borders are not locked.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SingularMap
from .volgrid import AffineMap, resample_affine, resample_displacement

MODES = ("affine_only", "affine_then_elastic")
N_CONTROL = 7

# independent generator streams derived from one user seed
_AFFINE_STREAM = 0
_ELASTIC_STREAM = 1


def _rng(seed, stream):
    return np.random.default_rng([stream, int(seed)])


@dataclass(frozen=True)
class MisalignmentSpec:
    alpha_a: float
    seed: int = 0
    mode: str = "affine_only"
    translation_scale: float = 1.0

    def __post_init__(self):
        if self.alpha_a < 0:
            raise ValueError("alpha_a must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class AffineParams:
    scale: tuple
    rotation_deg: tuple
    translation_mm: tuple
    center: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ElasticParams:
    max_displacement: float
    control: np.ndarray   # (7, 7, 7, 3), indexed [k, j, i, xyz]


def sample_affine(alpha_a, seed, translation_scale=1.0, center=(0.0, 0.0, 0.0)):
    """Draw scale x,y,z, then rotation x,y,z, then translation x,y,z."""
    if alpha_a < 0:
        raise ValueError("alpha_a must be >= 0")
    a = float(alpha_a)
    rng = _rng(seed, _AFFINE_STREAM)
    scale = rng.uniform(1.0 - 0.5 * a, 1.0 + 0.5 * a, size=3)
    rotation = rng.uniform(-22.5 * a, 22.5 * a, size=3)
    translation = rng.uniform(0.0, 0.5 * a, size=3) * translation_scale
    as_t = lambda v: tuple(float(x) for x in v)  # noqa: E731
    return AffineParams(as_t(scale), as_t(rotation), as_t(translation), as_t(center))


def rotation_matrix(degrees):
    rx, ry, rz = np.deg2rad(degrees)
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def affine_to_map(p):
    """``T(translation) ∘ T(center) ∘ Rz·Ry·Rx ∘ S ∘ T(-center)``."""
    scale = np.asarray(p.scale, dtype=np.float64)
    if np.any(scale <= 1e-6):
        raise SingularMap(f"scale components must be > 1e-6, got {tuple(scale)}")
    lin = rotation_matrix(p.rotation_deg) @ np.diag(scale)
    c = np.asarray(p.center, dtype=np.float64)
    return AffineMap(lin, np.asarray(p.translation_mm, dtype=np.float64) + c - lin @ c)


def sample_elastic(alpha_a, seed, target_grid=None):
    """Draw d ~ U(0, 20·a), then the 7³ control displacements in C order."""
    if alpha_a < 0:
        raise ValueError("alpha_a must be >= 0")
    rng = _rng(seed, _ELASTIC_STREAM)
    d = rng.uniform(0.0, 20.0 * float(alpha_a))
    control = rng.uniform(-d, d, size=(N_CONTROL,) * 3 + (3,))
    return ElasticParams(float(d), control)


def bspline3(t):
    """Uniform cubic B-spline basis, support (-2, 2)."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    out = np.where(t < 1.0, (4.0 - 6.0 * t ** 2 + 3.0 * t ** 3) / 6.0, 0.0)
    return np.where((t >= 1.0) & (t < 2.0), (2.0 - t) ** 3 / 6.0, out)


def _axis_weights(n_vox, n_ctrl):
    """(n_vox, n_ctrl) weights; knots beyond the borders clamp to the edge control."""
    pos = np.arange(n_vox) * (n_ctrl - 1) / max(n_vox - 1, 1)
    W = np.zeros((n_vox, n_ctrl))
    base = np.floor(pos).astype(np.int64)
    for off in range(-1, 3):
        knot = base + off
        w = bspline3(pos - knot)
        np.add.at(W, (np.arange(n_vox), np.clip(knot, 0, n_ctrl - 1)), w)
    return W


def elastic_to_field(e, target_grid):
    """Dense ``(nz, ny, nx, 3)`` displacement (mm) from the control grid.

    Control points span the grid extent, borders included; the result is the
    tensor-product cubic B-spline with the control values as coefficients.
    """
    nx, ny, nz = target_grid.dims
    n = e.control.shape[0]
    Wx, Wy, Wz = _axis_weights(nx, n), _axis_weights(ny, n), _axis_weights(nz, n)
    return np.einsum("zk,yj,xi,kjic->zyxc", Wz, Wy, Wx, e.control, optimize=True)


def _center(grid):
    return tuple(float(c) for c in grid.center)


def apply_misalignment(vol, spec, return_params=False):
    """Misalign ``vol`` (scalar or label volume) according to ``spec``.

    ``alpha_a == 0`` returns an exact copy. In ``affine_then_elastic`` mode the
    affine resample is followed by a separate displacement resample.
    """
    grid = vol.grid
    aff = sample_affine(spec.alpha_a, spec.seed, spec.translation_scale, _center(grid))
    params = {"spec": asdict(spec), "affine": asdict(aff)}
    out = vol if spec.alpha_a == 0 else resample_affine(vol, affine_to_map(aff), grid)
    if spec.mode == "affine_then_elastic":
        el = sample_elastic(spec.alpha_a, spec.seed, grid)
        params["elastic"] = {"max_displacement": el.max_displacement,
                             "control": el.control.tolist()}
        if el.max_displacement > 0:
            out = resample_displacement(out, elastic_to_field(el, grid), grid)
    if out is vol:
        out = type(vol).from_grid(grid, vol.data)
    return (out, params) if return_params else out


def dump_params(params, path):
    with open(path, "w") as fh:
        json.dump(params, fh, indent=2, default=float)
