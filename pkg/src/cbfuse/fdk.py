"""FDK filtered backprojection for the circular cone-beam geometry."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BadGeometry
from .volgrid import Grid, Volume

FILTERS = ("ramp", "ramp_hann")


@dataclass(frozen=True)
class ReconConfig:
    grid: Grid
    filter: str = "ramp"
    short_scan: bool = False
    window: tuple | None = (0.0, 1.0)

    def __post_init__(self):
        if self.filter not in FILTERS:
            raise ValueError(f"filter must be one of {FILTERS}, got {self.filter!r}")
        if self.short_scan:
            raise ValueError("short-scan weighting is not supported")


def ramp_kernel(n, du):
    """Band-limited ramp taps ``h[k]`` for ``k = -(n-1) .. n-1``."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4.0 * du * du)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * du) ** 2
    return h


def _padded_length(nu):
    return 1 << int(np.ceil(np.log2(2 * nu)))


def _ramp_spectrum(nu, du, n):
    taps = ramp_kernel(nu, du)
    kern = np.zeros(n)
    kern[:nu] = taps[nu - 1:]
    kern[n - (nu - 1):] = taps[:nu - 1]
    return np.fft.rfft(kern)


def dc_gain(nu, du):
    """Zero-frequency response of the truncated ramp used for ``nu`` columns."""
    return float(_ramp_spectrum(nu, du, _padded_length(nu))[0].real)


def filter_rows(rows, du, filter="ramp"):
    """Linear convolution of each row (last axis) with the ramp kernel.

    Computed in the frequency domain on a zero-padded length ``>= 2·nu``,
    which reproduces the spatial-domain convolution exactly (up to rounding).
    For ``ramp_hann`` the kernel spectrum is additionally apodised by a Hann
    window.
    """
    rows = np.asarray(rows, dtype=np.float64)
    nu = rows.shape[-1]
    if nu < 2:
        raise BadGeometry("need at least two detector columns")
    n = _padded_length(nu)
    spec = _ramp_spectrum(nu, du, n)
    if filter == "ramp_hann":
        f = np.fft.rfftfreq(n)
        spec = spec * 0.5 * (1.0 + np.cos(2.0 * np.pi * f))
    elif filter != "ramp":
        raise ValueError(f"unknown filter {filter!r}")
    out = np.fft.irfft(np.fft.rfft(rows, n=n, axis=-1) * spec, n=n, axis=-1)
    return out[..., :nu]


def cosine_weights(geom):
    u = (np.arange(geom.nu) - (geom.nu - 1) / 2.0) * geom.du
    v = (np.arange(geom.nv) - (geom.nv - 1) / 2.0) * geom.dv
    V, U = np.meshgrid(v, u, indexing="ij")
    sdd = geom.source_to_detector
    return sdd / np.sqrt(sdd * sdd + U * U + V * V)


def filter_projections(p, filter="ramp"):
    """Cosine-weight every image and ramp-filter it row by row."""
    g = p.geometry
    weighted = p.images * cosine_weights(g)[None]
    return p.with_images(filter_rows(weighted, g.du, filter))


def reconstruct(p, cfg):
    """FDK reconstruction of ``p`` onto ``cfg.grid``.

    Voxel-driven backprojection with ``(SID/U)²`` distance weighting and
    bilinear detector interpolation, normalised by ``π/n_views`` and by the
    detector pitch. The result is clipped to ``cfg.window`` when given.
    """
    g = p.geometry
    grid = cfg.grid
    g.check_volume(grid)
    q = filter_projections(p, cfg.filter).images
    xs, ys, zs = grid.axes()
    acc = kernels.backproject(np.ascontiguousarray(q), np.ascontiguousarray(g.angles),
                              g.source_to_isocenter, g.source_to_detector, g.du, g.dv,
                              xs, ys, zs)
    # ramp taps carry 1/du², the convolution integral one du, and the
    # projections are sampled on the magnified detector
    acc *= np.pi / g.n_projections * g.du * g.magnification
    if cfg.window is not None:
        acc = np.clip(acc, *cfg.window)
    return Volume.from_grid(grid, acc)


def fov_mask(grid, geom, fraction=0.8):
    """Voxels inside ``fraction`` of the scanned cylinder (radius and half height)."""
    xs, ys, zs = grid.axes()
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    r = fraction * geom.fov_radius
    h = fraction * geom.fov_half_height
    return (X * X + Y * Y <= r * r) & (np.abs(Z) <= h)


def masked_rmse(recon, truth, mask):
    diff = recon.data.astype(np.float64) - truth.data.astype(np.float64)
    return float(np.sqrt(np.mean(diff[mask] ** 2)))


def simulate_cbct(ct, n_projections, filter="ramp", **geometry):
    """Forward project ``ct`` with ``n_projections`` views and reconstruct on its grid."""
    from .projsim import forward_project, make_geometry

    geom = make_geometry(n_projections, **geometry)
    return reconstruct(forward_project(ct, geom), ReconConfig(ct.grid, filter))
