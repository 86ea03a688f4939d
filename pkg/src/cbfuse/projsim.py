"""Circular cone-beam geometry and DRR forward projection.

Frame: the isocentre is the world origin and the source rotates about z.
At angle θ the source sits at ``SID·(sin θ, -cos θ, 0)`` and the central ray
points along ``d = (-sin θ, cos θ, 0)``. The detector (distance SDD from the
source) has its u axis along ``(cos θ, sin θ, 0)`` and its v axis along z.
Images are stored ``(n_views, nv, nu)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import BadGeometry, CorruptHeader
from .volio import read_container, write_container


@dataclass(frozen=True)
class ConeBeamGeometry:
    n_projections: int
    source_to_isocenter: float = 600.0
    source_to_detector: float = 1000.0
    nu: int = 96
    nv: int = 96
    du: float = 2.0
    dv: float = 2.0
    angles: np.ndarray = field(default=None, compare=False)

    def __post_init__(self):
        if self.n_projections < 1:
            raise BadGeometry("need at least one projection")
        if self.angles is None:
            angles = uniform_angles(self.n_projections)
        else:
            angles = np.asarray(self.angles, dtype=np.float64).copy()
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        if len(self.angles) != self.n_projections:
            raise BadGeometry(f"{len(self.angles)} angles for {self.n_projections} projections")
        if not self.source_to_detector > self.source_to_isocenter > 0:
            raise BadGeometry("require source_to_detector > source_to_isocenter > 0")
        if min(self.nu, self.nv) < 1 or min(self.du, self.dv) <= 0:
            raise BadGeometry("detector size and pitch must be positive")

    @property
    def magnification(self):
        return self.source_to_detector / self.source_to_isocenter

    @property
    def fov_radius(self):
        """Radius (mm) of the cylinder seen by every view, at the isocentre."""
        half = self.nu * self.du / 2.0
        # tangent from the source to the detector edge
        sin_a = half / np.hypot(half, self.source_to_detector)
        return self.source_to_isocenter * sin_a

    @property
    def fov_half_height(self):
        return self.nv * self.dv / 2.0 / self.magnification

    def check_volume(self, grid):
        """Raise :class:`BadGeometry` unless the grid lies between source and isocentre."""
        lo = np.array(grid.origin)
        hi = lo + (np.array(grid.dims) - 1) * np.array(grid.spacing)
        half_diag = float(np.max(np.hypot(np.maximum(abs(lo[0]), abs(hi[0])),
                                          np.maximum(abs(lo[1]), abs(hi[1])))))
        if not self.source_to_isocenter > half_diag:
            raise BadGeometry(f"volume half-diagonal {half_diag:.1f} mm reaches the source "
                              f"orbit ({self.source_to_isocenter} mm)")

    def frames(self):
        """Per-view source position, detector centre and detector axes, each (n, 3)."""
        c, s = np.cos(self.angles), np.sin(self.angles)
        zero = np.zeros_like(c)
        d = np.stack([-s, c, zero], axis=1)
        src = -self.source_to_isocenter * d
        det = src + self.source_to_detector * d
        eu = np.stack([c, s, zero], axis=1)
        ev = np.tile([0.0, 0.0, 1.0], (len(c), 1))
        return src, det, eu, ev

    def to_dict(self):
        return {
            "n_projections": self.n_projections,
            "source_to_isocenter": self.source_to_isocenter,
            "source_to_detector": self.source_to_detector,
            "nu": self.nu, "nv": self.nv, "du": self.du, "dv": self.dv,
            "angles": [float(a) for a in self.angles],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def uniform_angles(n):
    return 2.0 * np.pi * np.arange(n) / n


def make_geometry(n_projections, **overrides):
    """Full-scan geometry with ``n_projections`` uniform angles over [0, 2π)."""
    return ConeBeamGeometry(int(n_projections), **overrides)


@dataclass(frozen=True)
class ProjectionSet:
    geometry: ConeBeamGeometry
    images: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.images, dtype=np.float64)
        g = self.geometry
        if img.shape != (g.n_projections, g.nv, g.nu):
            raise BadGeometry(f"images shape {img.shape} != {(g.n_projections, g.nv, g.nu)}")
        if not np.all(np.isfinite(img)):
            raise ValueError("projection images contain NaN or Inf")
        object.__setattr__(self, "images", img)

    def with_images(self, images):
        return replace(self, images=images)


def save_projections(p, path):
    """Store a projection set as a ``.cbp`` container (geometry in the header)."""
    header = {"kind": "projections", "dtype": "f4", "geometry": p.geometry.to_dict()}
    write_container(path, header, p.images.astype("<f4").tobytes())


def load_projections(path):
    header, payload = read_container(path)
    if header.get("kind") != "projections":
        raise CorruptHeader(f"{path}: not a projection container")
    geom = ConeBeamGeometry.from_dict(header["geometry"])
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != geom.n_projections * geom.nv * geom.nu:
        raise CorruptHeader(f"{path}: payload size does not match geometry")
    return ProjectionSet(geom, data.reshape(geom.n_projections, geom.nv, geom.nu))


def default_step(vol):
    return min(vol.spacing) / 2.0


def forward_project(vol, geom, step=None):
    """Line integrals of ``vol`` for every detector pixel of every view.

    Rays are clipped to the volume's support and integrated with the
    trapezoid rule on a uniform step no longer than ``step`` (default: half
    the smallest voxel spacing).
    """
    geom.check_volume(vol.grid)
    step = default_step(vol) if step is None else float(step)
    src, det, eu, ev = geom.frames()
    images = kernels.project(vol.data, vol.origin, vol.spacing, src, det, eu, ev,
                             geom.nu, geom.nv, geom.du, geom.dv, step)
    return ProjectionSet(geom, images)


def line_integral(vol, start, end, step=None):
    """Integral of ``vol`` along the segment ``start -> end`` (world mm)."""
    start = np.asarray(start, dtype=np.float64).reshape(1, 3)
    end = np.asarray(end, dtype=np.float64).reshape(1, 3)
    step = default_step(vol) if step is None else float(step)
    ex = np.array([[1.0, 0.0, 0.0]])
    out = kernels.project(vol.data, vol.origin, vol.spacing, start, end, ex, ex,
                          1, 1, 1.0, 1.0, step)
    return float(out[0, 0, 0])
