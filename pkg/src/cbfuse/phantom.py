"""Procedural abdominal phantoms and liver-centred field-of-view crops.

Intensities are in normalised units: HU mapped linearly from the window
[-200, +300] onto [0, 1] and clipped. The phantom contains

* a body ellipsoid (soft tissue), elongated along z,
* a liver: superellipsoid warped by a low-frequency sinusoid,
* 0-3 spherical tumours fully inside the liver (hypodense),
* two dense rods ("ribs") posterior to the liver that cause streaks in
  undersampled reconstructions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyLiver, InfeasiblePlacement
from .volgrid import Grid, LabelVolume, Volume, crop

HU_WINDOW = (-200.0, 300.0)


def normalize_hu(hu):
    lo, hi = HU_WINDOW
    return np.clip((np.asarray(hu, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def _default_bands():
    # (mean, jitter) in normalised units
    return {
        "body": (float(normalize_hu(40.0)), 0.02),    # 0.48
        "liver": (float(normalize_hu(70.0)), 0.01),   # 0.54
        "tumor": (float(normalize_hu(0.0)), 0.01),    # 0.40
        "bone": (float(normalize_hu(700.0)), 0.0),    # 1.00
    }


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    dims: tuple = (64, 64, 64)
    spacing: float = 2.0
    n_tumors: int | None = None
    bands: dict = field(default_factory=_default_bands)
    noise: float = 0.01
    tumor_radius: tuple = (3.0, 6.0)   # mm, uniform range

    def __post_init__(self):
        dims = (self.dims,) * 3 if np.isscalar(self.dims) else tuple(self.dims)
        object.__setattr__(self, "dims", tuple(int(d) for d in dims))
        if min(self.dims) < 16:
            raise ValueError(f"phantom dims must be >= 16 per axis, got {self.dims}")
        for name, (mean, jitter) in self.bands.items():
            if not (0.0 <= mean - jitter and mean + jitter <= 1.0):
                raise ValueError(f"intensity band {name!r} leaves [0, 1]")
        if self.n_tumors is not None and self.n_tumors < 0:
            raise ValueError("n_tumors must be >= 0")
        if not 0 < self.tumor_radius[0] <= self.tumor_radius[1]:
            raise ValueError(f"bad tumor radius range {self.tumor_radius}")

    @property
    def grid(self):
        return Grid.centered(self.dims, self.spacing)


@dataclass
class PhantomLayout:
    """Analytic description of one phantom (all lengths in mm, world frame)."""

    body_axes: np.ndarray
    liver_center: np.ndarray
    liver_axes: np.ndarray
    liver_exponent: float
    warp_amp: float
    warp_freq: np.ndarray
    warp_phase: np.ndarray
    tumors: list          # [(center, radius), ...]
    rods: list            # [(x, y, radius), ...]
    intensity: dict

    def liver_implicit(self, pts):
        """Negative inside the liver, positive outside."""
        rel = (np.asarray(pts, dtype=np.float64) - self.liver_center) / self.liver_axes
        n = self.liver_exponent
        g = (np.abs(rel) ** n).sum(axis=-1) ** (1.0 / n)
        q = np.asarray(pts, dtype=np.float64) - self.liver_center
        warp = self.warp_amp * np.prod(np.sin(q * self.warp_freq + self.warp_phase), axis=-1)
        return g - 1.0 - warp

    def body_implicit(self, pts):
        rel = np.asarray(pts, dtype=np.float64) / self.body_axes
        return (rel ** 2).sum(axis=-1) - 1.0

    def in_tumor(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        hit = np.zeros(pts.shape[:-1], dtype=bool)
        for center, radius in self.tumors:
            hit |= ((pts - center) ** 2).sum(axis=-1) <= radius ** 2
        return hit

    def in_rod(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        hit = np.zeros(pts.shape[:-1], dtype=bool)
        for x, y, r in self.rods:
            hit |= (pts[..., 0] - x) ** 2 + (pts[..., 1] - y) ** 2 <= r ** 2
        return hit


def _sphere_surface(radius):
    phi = np.linspace(0, 2 * np.pi, 24, endpoint=False)
    th = np.linspace(0, np.pi, 13)
    P, T = np.meshgrid(phi, th)
    surf = radius * np.stack([np.sin(T) * np.cos(P), np.sin(T) * np.sin(P), np.cos(T)], -1)
    return surf.reshape(-1, 3)


def _sphere_lattice(radius, spacing):
    step = spacing / 2.0
    ax = np.arange(-radius, radius + step, step)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[(g ** 2).sum(axis=1) <= radius ** 2]


def draw_layout(spec):
    """Draw the random layout of ``spec``; draw order is fixed for reproducibility."""
    rng = np.random.default_rng(spec.seed)
    u = rng.uniform
    intensity = {name: mean + u(-jit, jit) for name, (mean, jit) in spec.bands.items()}
    body_axes = np.array([50.0 + u(-2, 2), 41.0 + u(-2, 2), 200.0])
    liver_center = np.array([-8.0 + u(-3, 3), 2.0 + u(-3, 3), u(-4, 4)])
    liver_axes = np.array([u(30, 36), u(19, 23), u(26, 32)])
    exponent = u(2.2, 3.0)
    warp_amp = u(0.05, 0.12)
    warp_freq = 2 * np.pi / rng.uniform(50, 80, size=3)
    warp_phase = rng.uniform(0, 2 * np.pi, size=3)
    # ribs hug the posterior body wall
    rods = [(-18.0 + u(-2, 2), -30.0 + u(-1, 1), 3.5), (18.0 + u(-2, 2), -30.0 + u(-1, 1), 3.5)]
    n_tumors = spec.n_tumors if spec.n_tumors is not None else int(rng.integers(1, 4))

    layout = PhantomLayout(body_axes, liver_center, liver_axes, exponent, warp_amp,
                           warp_freq, warp_phase, [], rods, intensity)
    lo = liver_center - liver_axes
    hi = liver_center + liver_axes
    for t in range(n_tumors):
        for _ in range(1000):
            radius = u(*spec.tumor_radius)
            center = rng.uniform(lo, hi)
            # the surface test rejects most candidates before the lattice is built
            if (np.all(layout.liver_implicit(center + _sphere_surface(radius)) <= 0.0)
                    and np.all(layout.liver_implicit(
                        center + _sphere_lattice(radius, spec.spacing)) <= 0.0)):
                layout.tumors.append((center, radius))
                break
        else:
            raise InfeasiblePlacement(f"tumor {t} could not be placed inside the liver "
                                      f"(seed {spec.seed})")
    return layout


def generate_phantom(spec):
    """Return ``(ct, labels)`` for ``spec``; a pure function of ``spec``."""
    layout = draw_layout(spec)
    grid = spec.grid
    pts = grid.world_points().reshape(grid.shape + (3,))
    body = layout.body_implicit(pts) <= 0.0
    liver = layout.liver_implicit(pts) <= 0.0
    tumor = liver & layout.in_tumor(pts)
    rods = body & layout.in_rod(pts)

    it = layout.intensity
    vol = np.zeros(grid.shape)
    vol[body] = it["body"]
    vol[liver] = it["liver"]
    vol[tumor] = it["tumor"]
    vol[rods] = it["bone"]
    # per-voxel texture; the generator is seeded separately from the layout draws
    noise = np.random.default_rng([spec.seed, 1]).normal(0.0, spec.noise, size=grid.shape)
    vol = np.where(body, np.clip(vol + noise, 0.0, 1.0), 0.0)

    labels = np.zeros(grid.shape, dtype=np.uint8)
    labels[liver] = 1
    labels[tumor] = 2
    return (Volume(vol, grid.spacing, grid.origin),
            LabelVolume(labels, grid.spacing, grid.origin))


def liver_centroid(labels):
    """Mean (x, y, z) voxel index of label >= 1."""
    k, j, i = np.nonzero(labels.liver)
    if i.size == 0:
        raise EmptyLiver("label volume contains no liver voxel")
    return np.array([i.mean(), j.mean(), k.mean()])


def center_on_liver(vol, labels, fov_dims=(64, 64, 64), recenter=True):
    """Crop ``vol``/``labels`` to ``fov_dims`` around the liver centroid.

    The window start is ``floor(centroid - (fov - 1) / 2)`` per axis. With
    ``recenter`` the output grid is placed so that its centre is the world
    origin (the scanner isocentre); otherwise it keeps source coordinates.
    """
    if np.isscalar(fov_dims):
        fov_dims = (fov_dims,) * 3
    fov = np.asarray(fov_dims, dtype=np.int64)
    start = np.floor(liver_centroid(labels) - (fov - 1) / 2.0).astype(np.int64)
    origin = Grid.centered(tuple(fov), vol.spacing).origin if recenter else None
    return crop(vol, start, fov, origin), crop(labels, start, fov, origin)


def sphere_rods_phantom(dims=64, spacing=2.0):
    """Noise-free reference object: a soft-tissue sphere with a denser core and two bone rods.

    Fixed geometry (no seed); used to rank reconstructions by view count.
    """
    from .volgrid import Grid

    grid = Grid.centered(dims, spacing)
    p = grid.world_points().reshape(grid.shape + (3,))
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    r = 0.35 * min(grid.dims) * min(grid.spacing)
    vol = np.zeros(grid.shape)
    vol[x * x + y * y + z * z <= r * r] = 0.5
    vol[(x - 0.3 * r) ** 2 + y * y + z * z <= (0.3 * r) ** 2] = 0.6
    # ribs sit near the wall, where undersampling streaks are strongest
    rod = 0.08 * r
    for cx in (-0.55 * r, 0.55 * r):
        vol[((x - cx) ** 2 + (y + 0.5 * r) ** 2 <= rod * rod) & (np.abs(z) <= 0.8 * r)] = 1.0
    return Volume(vol, grid.spacing, grid.origin)
